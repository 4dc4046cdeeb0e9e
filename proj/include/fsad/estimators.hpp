#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "fsad/feature_map.hpp"

namespace fsad {

enum class EstimatorKind : std::uint8_t { padim = 1, ortho = 2, patchcore = 3 };

std::string to_string(EstimatorKind k);
EstimatorKind estimator_from_string(const std::string& s);

/// Semi-orthogonal D x D' matrix (orthonormal columns).
struct LowRankProjection {
    Eigen::MatrixXd matrix;
    std::uint64_t seed = 0;

    std::size_t full_dim() const { return static_cast<std::size_t>(matrix.rows()); }
    std::size_t reduced_dim() const { return static_cast<std::size_t>(matrix.cols()); }
};

/// Per-position Gaussian N(mu_ij, Sigma_ij); Sigma already includes +eps*I.
/// When `projection` is set, means and covariances live in the D' space.
struct GaussianField {
    std::size_t height = 0, width = 0;
    std::size_t dim = 0; // D, or D' when projected
    double epsilon = 0.0;
    std::vector<Eigen::VectorXd> means;      // row-major positions
    std::vector<Eigen::MatrixXd> covariances;
    std::optional<LowRankProjection> projection;

    std::size_t positions() const { return height * width; }
};

struct MemoryBank {
    Eigen::MatrixXd items; // one D-vector per column
    double gamma = 1.0;
    std::size_t projection_dim = 0;
    std::uint64_t seed = 0;
    // Index of each item in the bank it was sampled from, in selection order.
    std::vector<std::size_t> source_index;

    std::size_t size() const { return static_cast<std::size_t>(items.cols()); }
    std::size_t dim() const { return static_cast<std::size_t>(items.rows()); }
};

inline constexpr double kDefaultEpsilon = 0.01;

/// Sample mean and unbiased covariance (+eps*I) at every position.
GaussianField fit_gaussian_field(const PatchFeatureSet& feats, double epsilon = kDefaultEpsilon);

/// Haar-style semi-orthogonal matrix: QR of a seeded Gaussian D x D' matrix
/// with the signs of R's diagonal folded into Q.
LowRankProjection semi_orthogonal(std::size_t D, std::size_t Dp, std::uint64_t seed);

/// Stores W^T mu and W^T Sigma W + eps*I per position.
GaussianField fit_lowrank_field(const PatchFeatureSet& feats, const LowRankProjection& proj,
                                double epsilon = kDefaultEpsilon);

/// Random linear projection psi used by the coreset search: identity when
/// proj_dim >= D, otherwise a seeded Gaussian D x proj_dim matrix scaled by
/// 1/sqrt(proj_dim).  Returned as proj_dim x D so that psi(m) = P * m.
Eigen::MatrixXd coreset_projection(std::size_t D, std::size_t proj_dim, std::uint64_t seed);

/// Greedy k-center selection of `l` items in psi-space.  The first pick is the
/// item with the largest psi-norm; ties go to the lowest index.
MemoryBank coreset_sample(const MemoryBank& bank, std::size_t l, std::size_t proj_dim, std::uint64_t seed);

/// Flattens all K*H*W patch vectors and keeps ceil(gamma * |M|) by coreset.
MemoryBank build_memory_bank(const PatchFeatureSet& feats, double gamma, std::size_t proj_dim,
                             std::uint64_t seed);

/// ceil(gamma * n) with a small guard against round-up from representation
/// error (0.1 * 30 must give 3).
std::size_t coreset_target(double gamma, std::size_t n);

struct ComplexityReport {
    EstimatorKind kind{};
    double memory_floats = 0.0;
    std::string inference_order;
};

ComplexityReport complexity_report(EstimatorKind kind, std::size_t D, std::size_t Dp, std::size_t K,
                                   std::size_t H, std::size_t W, double gamma);

} // namespace fsad
