#pragma once

#include <map>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "fsad/estimators.hpp"

namespace fsad {

/// Symmetric PSD square root via eigendecomposition; eigenvalues below
/// 1e-10 are clamped to zero.  Throws on asymmetric input.
Eigen::MatrixXd spd_sqrt(const Eigen::MatrixXd& S);

/// Squared 2-Wasserstein distance between N(mu1, S1) and N(mu2, S2).
double gaussian_w2(const Eigen::VectorXd& mu1, const Eigen::MatrixXd& S1, const Eigen::VectorXd& mu2,
                   const Eigen::MatrixXd& S2);

/// KL(N1 || N2) in closed form; both covariances must be positive definite.
double gaussian_kl(const Eigen::VectorXd& mu1, const Eigen::MatrixXd& S1, const Eigen::VectorXd& mu2,
                   const Eigen::MatrixXd& S2);

/// Jensen-Shannon approximation 1/2 [KL(p||m) + KL(q||m)] with m the
/// moment-matched Gaussian of the equal mixture.
double gaussian_js(const Eigen::VectorXd& mu1, const Eigen::MatrixXd& S1, const Eigen::VectorXd& mu2,
                   const Eigen::MatrixXd& S2);

enum class DistributionDistance { wasserstein, kl, js };
DistributionDistance distance_from_string(const std::string& s);
std::string to_string(DistributionDistance d);

/// sum_ij |mu_ij - mu_c,ij|_2 * W_c,ij over all positions.
double weighted_w_sum(const GaussianField& base, const GaussianField& aug,
                      DistributionDistance metric = DistributionDistance::wasserstein,
                      std::vector<double>* per_position = nullptr);

struct AugmentationReport {
    struct Entry {
        double weighted_distance = 0.0;
        bool kept = false;
    };
    std::map<std::string, Entry> entries; // keyed by augmentation id
    double threshold = 0.0;               // mean of the weighted distances

    std::vector<std::string> kept() const;
};

/// Keeps every augmentation whose weighted distance is <= the mean.
AugmentationReport select(const std::map<std::string, double>& weighted_distances);

} // namespace fsad
