#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "fsad/feature_map.hpp"

namespace fsad {

/// 2x3 affine map acting on normalized coordinates in [-1, 1] (align-corners):
/// for every output location (x_t, y_t) the sampler reads the input at
/// (x_s, y_s) = theta * (x_t, y_t, 1).
struct AffineTransform {
    Eigen::Matrix<double, 2, 3> theta = identity_theta();

    static Eigen::Matrix<double, 2, 3> identity_theta() {
        Eigen::Matrix<double, 2, 3> t;
        t << 1, 0, 0, 0, 1, 0;
        return t;
    }
    static AffineTransform identity() { return {}; }
    /// Rotation by `radians` about the grid centre (counter-clockwise in x/y).
    static AffineTransform rotation(double radians);
    static AffineTransform from_row_major(const std::array<double, 6>& v);
    std::array<double, 6> row_major() const;

    Eigen::Matrix3d augmented() const;
    double determinant() const { return theta(0, 0) * theta(1, 1) - theta(0, 1) * theta(1, 0); }
    /// Throws "non-invertible transform" when |det| <= 1e-8.
    AffineTransform inverse() const;
    /// Angle of the linear part, atan2(theta21, theta11).
    double angle() const;
};

/// Source-lookup composition: warp(warp(m, a), b) == warp(m, compose(a, b)).
AffineTransform compose(const AffineTransform& a, const AffineTransform& b);

/// Bilinear STN sampler with zero padding.
FeatureMap affine_warp(const FeatureMap& map, const AffineTransform& t);

/// d(output)/d(theta) for every output element, ordered like FeatureMap data.
/// Each entry holds the derivatives w.r.t. (t11, t12, t13, t21, t22, t23).
using ThetaGradient = std::array<double, 6>;
std::vector<ThetaGradient> warp_gradient_theta(const FeatureMap& map, const AffineTransform& t);

/// Per-position 1x1 linear encoder E and predictor P.
class RegistrationHead {
public:
    enum class Mode { identity, fixed_random };

    static RegistrationHead identity(std::size_t channels);
    /// Seeded near-identity maps: E, P = I + 0.3 * G / sqrt(C).
    static RegistrationHead fixed_random(std::size_t channels, std::uint64_t seed);

    Mode mode() const { return mode_; }
    std::size_t channels() const { return static_cast<std::size_t>(encoder_.cols()); }
    const Eigen::MatrixXd& encoder() const { return encoder_; }
    const Eigen::MatrixXd& predictor() const { return predictor_; }

    FeatureMap encode(const FeatureMap& f) const;
    FeatureMap predict(const FeatureMap& z) const;

private:
    Mode mode_ = Mode::identity;
    Eigen::MatrixXd encoder_, predictor_;
};

enum class DegeneratePolicy {
    error, // zero-norm vector -> Error("degenerate feature")
    skip,  // positions with a zero-norm operand are left out of the mean
};

/// Mean over positions of -cos(p_ij, z_ij).
double cosine_similarity_loss(const FeatureMap& p, const FeatureMap& z,
                              DegeneratePolicy policy = DegeneratePolicy::error);

/// Accumulated reference: element-wise mean of the maps.
FeatureMap accumulate_reference(std::span<const FeatureMap> refs);

/// L = 1/2 [D(p_a, sg(z_B)) + D(p_B, sg(z_a))].
double symmetrized_registration_loss(const FeatureMap& fa, std::span<const FeatureMap> fB,
                                     const RegistrationHead& head,
                                     DegeneratePolicy policy = DegeneratePolicy::error);

struct RegistrationConfig {
    enum class GradMode { analytic, finite_difference };
    double learning_rate = 0.05;
    std::size_t max_iters = 500;
    double tol = 1e-6;
    GradMode grad_mode = GradMode::analytic;
};

struct RegistrationResult {
    AffineTransform transform;
    double final_loss = 0.0;
    std::size_t iterations = 0;
    std::vector<double> loss_history; // one entry per accepted step, starting at the initial loss
};

/// Gradient descent on theta (starting at identity) minimising the
/// symmetrized loss of warp(moving, theta) against the references.  The
/// reference branch and z_a are stop-gradient; only p_a = P(E(warp)) carries
/// gradient.  A step that raises the loss is halved up to 20 times.
RegistrationResult register_affine(const FeatureMap& moving, std::span<const FeatureMap> refs,
                                   const RegistrationHead& head, const RegistrationConfig& cfg);

/// Maps a score grid from the registered frame back to the original image
/// frame and resizes it.  Transforms are given in application order.
/// Positions without a valid source take the grid minimum.
FeatureMap inverse_remap(const FeatureMap& grid, std::span<const AffineTransform> transforms,
                         std::size_t out_h, std::size_t out_w);

} // namespace fsad
