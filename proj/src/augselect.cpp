#include "fsad/augselect.hpp"

#include <cmath>
#include <limits>

#include <Eigen/Dense>

#include "fsad/error.hpp"

namespace fsad {

Eigen::MatrixXd spd_sqrt(const Eigen::MatrixXd& S) {
    require(S.rows() == S.cols() && S.rows() > 0, "spd_sqrt needs a non-empty square matrix");
    const double scale = std::max(1.0, S.cwiseAbs().maxCoeff());
    require((S - S.transpose()).cwiseAbs().maxCoeff() <= 1e-9 * scale, "spd_sqrt: matrix is not symmetric");
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(S);
    require(eig.info() == Eigen::Success, "spd_sqrt: eigendecomposition failed");
    Eigen::VectorXd ev = eig.eigenvalues();
    for (Eigen::Index i = 0; i < ev.size(); ++i) ev(i) = ev(i) > 1e-10 ? std::sqrt(ev(i)) : 0.0;
    const Eigen::MatrixXd& V = eig.eigenvectors();
    Eigen::MatrixXd R = V * ev.asDiagonal() * V.transpose();
    return 0.5 * (R + R.transpose());
}

namespace {

void check_pair(const Eigen::VectorXd& mu1, const Eigen::MatrixXd& S1, const Eigen::VectorXd& mu2,
                const Eigen::MatrixXd& S2) {
    const auto d = mu1.size();
    require(d > 0 && mu2.size() == d && S1.rows() == d && S1.cols() == d && S2.rows() == d && S2.cols() == d,
            "gaussian dimension mismatch");
}

} // namespace

double gaussian_w2(const Eigen::VectorXd& mu1, const Eigen::MatrixXd& S1, const Eigen::VectorXd& mu2,
                   const Eigen::MatrixXd& S2) {
    check_pair(mu1, S1, mu2, S2);
    if (mu1 == mu2 && S1 == S2) return 0.0;
    const double mean_term = (mu1 - mu2).squaredNorm();
    const Eigen::MatrixXd r1 = spd_sqrt(S1);
    Eigen::MatrixXd inner = r1 * S2 * r1;
    inner = 0.5 * (inner + inner.transpose()).eval();
    const double cross = spd_sqrt(inner).trace();
    const double w = mean_term + S1.trace() + S2.trace() - 2.0 * cross;
    return std::max(0.0, w);
}

double gaussian_kl(const Eigen::VectorXd& mu1, const Eigen::MatrixXd& S1, const Eigen::VectorXd& mu2,
                   const Eigen::MatrixXd& S2) {
    check_pair(mu1, S1, mu2, S2);
    Eigen::LLT<Eigen::MatrixXd> l1(S1), l2(S2);
    require(l1.info() == Eigen::Success && l2.info() == Eigen::Success, "KL needs positive definite covariances");
    const double logdet1 = 2.0 * l1.matrixL().toDenseMatrix().diagonal().array().log().sum();
    const double logdet2 = 2.0 * l2.matrixL().toDenseMatrix().diagonal().array().log().sum();
    const Eigen::VectorXd dm = mu2 - mu1;
    const double trace_term = l2.solve(S1).trace();
    const double quad = dm.dot(l2.solve(dm));
    const double kl = 0.5 * (trace_term + quad - static_cast<double>(mu1.size()) + logdet2 - logdet1);
    return std::max(0.0, kl);
}

double gaussian_js(const Eigen::VectorXd& mu1, const Eigen::MatrixXd& S1, const Eigen::VectorXd& mu2,
                   const Eigen::MatrixXd& S2) {
    check_pair(mu1, S1, mu2, S2);
    const Eigen::VectorXd mm = 0.5 * (mu1 + mu2);
    const Eigen::VectorXd dm = mu1 - mu2;
    const Eigen::MatrixXd Sm = 0.5 * (S1 + S2) + 0.25 * dm * dm.transpose();
    return 0.5 * (gaussian_kl(mu1, S1, mm, Sm) + gaussian_kl(mu2, S2, mm, Sm));
}

DistributionDistance distance_from_string(const std::string& s) {
    if (s == "wasserstein" || s == "w2") return DistributionDistance::wasserstein;
    if (s == "kl") return DistributionDistance::kl;
    if (s == "js") return DistributionDistance::js;
    throw Error("unknown distance '" + s + "' (expected wasserstein, kl or js)");
}

std::string to_string(DistributionDistance d) {
    switch (d) {
    case DistributionDistance::wasserstein: return "wasserstein";
    case DistributionDistance::kl: return "kl";
    case DistributionDistance::js: return "js";
    }
    return "unknown";
}

double weighted_w_sum(const GaussianField& base, const GaussianField& aug, DistributionDistance metric,
                      std::vector<double>* per_position) {
    require(base.height == aug.height && base.width == aug.width, "field grids differ");
    require(base.dim == aug.dim, "field dimensions differ");
    require(base.projection.has_value() == aug.projection.has_value(), "field projections differ");
    if (per_position) per_position->assign(base.positions(), 0.0);
    double total = 0.0;
    for (std::size_t p = 0; p < base.positions(); ++p) {
        const auto& m1 = base.means[p];
        const auto& m2 = aug.means[p];
        const auto& s1 = base.covariances[p];
        const auto& s2 = aug.covariances[p];
        double w = 0.0;
        switch (metric) {
        case DistributionDistance::wasserstein: w = gaussian_w2(m1, s1, m2, s2); break;
        case DistributionDistance::kl: w = gaussian_kl(m1, s1, m2, s2); break;
        case DistributionDistance::js: w = gaussian_js(m1, s1, m2, s2); break;
        }
        if (per_position) (*per_position)[p] = w;
        total += (m1 - m2).norm() * w;
    }
    return total;
}

std::vector<std::string> AugmentationReport::kept() const {
    std::vector<std::string> out;
    for (const auto& [id, e] : entries)
        if (e.kept) out.push_back(id);
    return out;
}

AugmentationReport select(const std::map<std::string, double>& weighted_distances) {
    require(!weighted_distances.empty(), "augmentation selection needs at least one candidate");
    AugmentationReport r;
    double sum = 0.0, lowest = std::numeric_limits<double>::infinity();
    for (const auto& [id, w] : weighted_distances) {
        require(std::isfinite(w) && w >= 0.0, "weighted distance for '" + id + "' must be finite and >= 0");
        sum += w;
        lowest = std::min(lowest, w);
    }
    r.threshold = sum / static_cast<double>(weighted_distances.size());
    // the minimum never exceeds the mean; the second clause only guards rounding in the mean
    for (const auto& [id, w] : weighted_distances) r.entries[id] = {w, w <= r.threshold || w == lowest};
    return r;
}

} // namespace fsad
