#include "fsad/estimators.hpp"

#include <cmath>
#include <limits>
#include <random>

#include <Eigen/Dense>

#include "fsad/error.hpp"

namespace fsad {

std::string to_string(EstimatorKind k) {
    switch (k) {
    case EstimatorKind::padim: return "padim";
    case EstimatorKind::ortho: return "ortho";
    case EstimatorKind::patchcore: return "patchcore";
    }
    return "unknown";
}

EstimatorKind estimator_from_string(const std::string& s) {
    if (s == "padim") return EstimatorKind::padim;
    if (s == "ortho" || s == "orthoad") return EstimatorKind::ortho;
    if (s == "patchcore") return EstimatorKind::patchcore;
    throw Error("unknown estimator '" + s + "' (expected padim, ortho or patchcore)");
}

namespace {

void check_finite(const PatchFeatureSet& feats) {
    for (std::size_t k = 0; k < feats.samples(); ++k)
        for (std::size_t p = 0; p < feats.positions(); ++p)
            if (!feats.vector(k, p).allFinite()) throw Error("non-finite feature value");
}

} // namespace

GaussianField fit_gaussian_field(const PatchFeatureSet& feats, double epsilon) {
    require(feats.samples() >= 2, "need at least two samples");
    require(epsilon >= 0.0, "epsilon must be non-negative");
    check_finite(feats);

    const auto D = static_cast<Eigen::Index>(feats.dim());
    const std::size_t K = feats.samples();
    GaussianField field;
    field.height = feats.height();
    field.width = feats.width();
    field.dim = feats.dim();
    field.epsilon = epsilon;
    field.means.resize(feats.positions());
    field.covariances.resize(feats.positions());

    Eigen::MatrixXd centered(D, static_cast<Eigen::Index>(K));
    for (std::size_t p = 0; p < feats.positions(); ++p) {
        Eigen::VectorXd mu = Eigen::VectorXd::Zero(D);
        for (std::size_t k = 0; k < K; ++k) mu += feats.vector(k, p);
        mu /= static_cast<double>(K);
        for (std::size_t k = 0; k < K; ++k) centered.col(static_cast<Eigen::Index>(k)) = feats.vector(k, p) - mu;
        Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(D, D);
        cov.selfadjointView<Eigen::Lower>().rankUpdate(centered, 1.0 / static_cast<double>(K - 1));
        for (Eigen::Index j = 1; j < D; ++j)
            for (Eigen::Index i = 0; i < j; ++i) cov(i, j) = cov(j, i);
        cov.diagonal().array() += epsilon;
        field.means[p] = std::move(mu);
        field.covariances[p] = std::move(cov);
    }
    return field;
}

LowRankProjection semi_orthogonal(std::size_t D, std::size_t Dp, std::uint64_t seed) {
    require(Dp >= 1, "projection rank must be at least 1");
    require(Dp <= D, "projection rank D' must not exceed D");
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal;
    Eigen::MatrixXd g(static_cast<Eigen::Index>(D), static_cast<Eigen::Index>(Dp));
    for (Eigen::Index j = 0; j < g.cols(); ++j)
        for (Eigen::Index i = 0; i < g.rows(); ++i) g(i, j) = normal(rng);
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
    Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(g.rows(), g.cols());
    const Eigen::MatrixXd r = qr.matrixQR().topRows(g.cols()).triangularView<Eigen::Upper>();
    for (Eigen::Index j = 0; j < q.cols(); ++j)
        if (r(j, j) < 0) q.col(j) = -q.col(j);
    return {std::move(q), seed};
}

GaussianField fit_lowrank_field(const PatchFeatureSet& feats, const LowRankProjection& proj, double epsilon) {
    require(proj.full_dim() == feats.dim(), "projection dimension " + std::to_string(proj.full_dim()) +
                                                " does not match feature dimension " + std::to_string(feats.dim()));
    require(feats.samples() >= 2, "need at least two samples");
    require(epsilon >= 0.0, "epsilon must be non-negative");
    check_finite(feats);

    const Eigen::MatrixXd& Wm = proj.matrix;
    const auto Dp = static_cast<Eigen::Index>(proj.reduced_dim());
    const std::size_t K = feats.samples();
    GaussianField field;
    field.height = feats.height();
    field.width = feats.width();
    field.dim = proj.reduced_dim();
    field.epsilon = epsilon;
    field.projection = proj;
    field.means.resize(feats.positions());
    field.covariances.resize(feats.positions());

    // W^T Sigma W is the unbiased covariance of the projected samples.
    Eigen::MatrixXd projected(Dp, static_cast<Eigen::Index>(K));
    for (std::size_t p = 0; p < feats.positions(); ++p) {
        for (std::size_t k = 0; k < K; ++k)
            projected.col(static_cast<Eigen::Index>(k)).noalias() = Wm.transpose() * feats.vector(k, p);
        Eigen::VectorXd mu = projected.rowwise().mean();
        projected.colwise() -= mu;
        Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(Dp, Dp);
        cov.selfadjointView<Eigen::Lower>().rankUpdate(projected, 1.0 / static_cast<double>(K - 1));
        for (Eigen::Index j = 1; j < Dp; ++j)
            for (Eigen::Index i = 0; i < j; ++i) cov(i, j) = cov(j, i);
        cov.diagonal().array() += epsilon;
        field.means[p] = std::move(mu);
        field.covariances[p] = std::move(cov);
    }
    return field;
}

Eigen::MatrixXd coreset_projection(std::size_t D, std::size_t proj_dim, std::uint64_t seed) {
    require(proj_dim >= 1, "projection dimension must be at least 1");
    if (proj_dim >= D) return Eigen::MatrixXd::Identity(static_cast<Eigen::Index>(D), static_cast<Eigen::Index>(D));
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal;
    const double scale = 1.0 / std::sqrt(static_cast<double>(proj_dim));
    Eigen::MatrixXd p(static_cast<Eigen::Index>(proj_dim), static_cast<Eigen::Index>(D));
    for (Eigen::Index i = 0; i < p.rows(); ++i)
        for (Eigen::Index j = 0; j < p.cols(); ++j) p(i, j) = scale * normal(rng);
    return p;
}

MemoryBank coreset_sample(const MemoryBank& bank, std::size_t l, std::size_t proj_dim, std::uint64_t seed) {
    const std::size_t n = bank.size();
    require(n >= 1, "empty memory bank");
    require(l >= 1 && l <= n, "coreset size must be within [1, " + std::to_string(n) + "]");

    const Eigen::MatrixXd psi = coreset_projection(bank.dim(), proj_dim, seed);
    const Eigen::MatrixXd projected = psi * bank.items; // proj x n

    std::vector<char> chosen(n, 0);
    std::vector<std::size_t> order;
    order.reserve(l);

    // first pick: largest psi-norm, lowest index on ties
    std::size_t first = 0;
    double best = -1.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double v = projected.col(static_cast<Eigen::Index>(i)).squaredNorm();
        if (v > best) {
            best = v;
            first = i;
        }
    }
    order.push_back(first);
    chosen[first] = 1;

    std::vector<double> min_dist(n, std::numeric_limits<double>::infinity());
    std::size_t last = first;
    while (order.size() < l) {
        const auto last_col = projected.col(static_cast<Eigen::Index>(last));
        std::size_t pick = n;
        double pick_d = -1.0;
        for (std::size_t i = 0; i < n; ++i) {
            if (chosen[i]) continue;
            const double d = (projected.col(static_cast<Eigen::Index>(i)) - last_col).squaredNorm();
            if (d < min_dist[i]) min_dist[i] = d;
            if (min_dist[i] > pick_d) {
                pick_d = min_dist[i];
                pick = i;
            }
        }
        chosen[pick] = 1;
        order.push_back(pick);
        last = pick;
    }

    MemoryBank out;
    out.items.resize(bank.items.rows(), static_cast<Eigen::Index>(l));
    for (std::size_t j = 0; j < l; ++j) out.items.col(static_cast<Eigen::Index>(j)) = bank.items.col(static_cast<Eigen::Index>(order[j]));
    out.gamma = bank.gamma;
    out.projection_dim = proj_dim;
    out.seed = seed;
    out.source_index.resize(l);
    for (std::size_t j = 0; j < l; ++j)
        out.source_index[j] = bank.source_index.empty() ? order[j] : bank.source_index[order[j]];
    return out;
}

std::size_t coreset_target(double gamma, std::size_t n) {
    const double raw = gamma * static_cast<double>(n);
    auto l = static_cast<std::size_t>(std::ceil(raw - 1e-9 * std::max(1.0, raw)));
    return std::clamp<std::size_t>(l, 1, n);
}

MemoryBank build_memory_bank(const PatchFeatureSet& feats, double gamma, std::size_t proj_dim, std::uint64_t seed) {
    require(gamma > 0.0 && gamma <= 1.0, "gamma must be in (0, 1]");
    require(feats.samples() >= 1, "empty memory bank");
    check_finite(feats);
    const std::size_t n = feats.samples() * feats.positions();
    MemoryBank bank;
    bank.items.resize(static_cast<Eigen::Index>(feats.dim()), static_cast<Eigen::Index>(n));
    std::size_t col = 0;
    for (std::size_t k = 0; k < feats.samples(); ++k)
        for (std::size_t p = 0; p < feats.positions(); ++p) bank.items.col(static_cast<Eigen::Index>(col++)) = feats.vector(k, p);
    bank.gamma = gamma;
    return coreset_sample(bank, coreset_target(gamma, n), proj_dim, seed);
}

ComplexityReport complexity_report(EstimatorKind kind, std::size_t D, std::size_t Dp, std::size_t K, std::size_t H,
                                   std::size_t W, double gamma) {
    require(D >= 1 && Dp >= 1 && K >= 1 && H >= 1 && W >= 1, "complexity dimensions must be positive");
    const double hw = static_cast<double>(H) * static_cast<double>(W);
    const double d = static_cast<double>(D), dp = static_cast<double>(Dp);
    ComplexityReport r;
    r.kind = kind;
    switch (kind) {
    case EstimatorKind::padim:
        r.memory_floats = hw * (d + d * d);
        r.inference_order = "O(HWD³)";
        break;
    case EstimatorKind::ortho:
        r.memory_floats = hw * (dp + dp * dp);
        r.inference_order = "O(HWD′³)";
        break;
    case EstimatorKind::patchcore:
        r.memory_floats = gamma * static_cast<double>(K) * hw * d;
        r.inference_order = "O(γKH²W²D²)";
        break;
    }
    return r;
}

} // namespace fsad
