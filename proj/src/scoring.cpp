#include "fsad/scoring.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include <Eigen/Dense>

#include "json.hpp"

#include "fsad/error.hpp"
#include "fsad/feature_io.hpp"
#include "fsad/png_io.hpp"

namespace fsad {

MahalanobisScorer::MahalanobisScorer(GaussianField field) : field_(std::move(field)) {
    require(field_.positions() > 0 && field_.means.size() == field_.positions() &&
                field_.covariances.size() == field_.positions(),
            "malformed gaussian field");
    factors_.reserve(field_.positions());
    for (std::size_t p = 0; p < field_.positions(); ++p) {
        Eigen::LLT<Eigen::MatrixXd> llt(field_.covariances[p]);
        const auto diag = llt.matrixLLT().diagonal();
        const bool singular = llt.info() != Eigen::Success || !diag.allFinite() ||
                              diag.minCoeff() * diag.minCoeff() <= 1e-12 * diag.maxCoeff() * diag.maxCoeff();
        if (singular)
            throw Error("singular covariance at (" + std::to_string(p % field_.width) + ", " +
                        std::to_string(p / field_.width) + ")");
        factors_.push_back(std::move(llt));
    }
}

double MahalanobisScorer::distance(std::size_t pos, const Eigen::Ref<const Eigen::VectorXd>& f) const {
    Eigen::VectorXd delta = field_.projection ? Eigen::VectorXd(field_.projection->matrix.transpose() * f)
                                              : Eigen::VectorXd(f);
    delta -= field_.means[pos];
    factors_[pos].matrixL().solveInPlace(delta);
    return std::sqrt(delta.squaredNorm());
}

FeatureMap MahalanobisScorer::score(const PatchFeatureSet& feats) const {
    require(feats.samples() == 1, "scoring expects a single test sample");
    require(feats.height() == field_.height && feats.width() == field_.width,
            "test grid " + std::to_string(feats.height()) + "x" + std::to_string(feats.width()) +
                " does not match model grid " + std::to_string(field_.height) + "x" + std::to_string(field_.width));
    const std::size_t D = field_.projection ? field_.projection->full_dim() : field_.dim;
    require(feats.dim() == D, "feature dimension " + std::to_string(feats.dim()) +
                                  " does not match model dimension " + std::to_string(D));
    FeatureMap out(1, field_.height, field_.width);
    for (std::size_t p = 0; p < field_.positions(); ++p) out.data()[p] = distance(p, feats.vector(0, p));
    return out;
}

FeatureMap mahalanobis_score(const PatchFeatureSet& feats, const GaussianField& field) {
    return MahalanobisScorer(field).score(feats);
}

KnnResult knn_score(const PatchFeatureSet& feats, const MemoryBank& bank, std::size_t b_neighbors) {
    require(bank.size() >= 1, "empty memory bank");
    require(b_neighbors >= 1, "b_neighbors must be at least 1");
    require(feats.samples() == 1, "scoring expects a single test sample");
    require(feats.dim() == bank.dim(), "feature dimension " + std::to_string(feats.dim()) +
                                           " does not match bank dimension " + std::to_string(bank.dim()));
    KnnResult res;
    res.grid = FeatureMap(1, feats.height(), feats.width());
    std::size_t best_pos = 0;
    double best = -1.0;
    for (std::size_t p = 0; p < feats.positions(); ++p) {
        const auto f = feats.vector(0, p);
        const double d = std::sqrt((bank.items.colwise() - f).colwise().squaredNorm().minCoeff());
        res.grid.data()[p] = d;
        if (d > best) {
            best = d;
            best_pos = p;
        }
    }
    res.max_patch_score = best;

    const auto fstar = feats.vector(0, best_pos);
    Eigen::VectorXd dist = (bank.items.colwise() - fstar).colwise().squaredNorm().transpose().cwiseSqrt();
    std::vector<double> d(dist.data(), dist.data() + dist.size());
    const std::size_t b = std::min(b_neighbors, d.size());
    std::partial_sort(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(b), d.end());
    // exp(d*) / sum exp(d_m), evaluated relative to d* to avoid overflow
    double denom = 0.0;
    for (std::size_t i = 0; i < b; ++i) denom += std::exp(d[i] - d[0]);
    res.reweight = 1.0 - 1.0 / denom;
    res.image_score = res.reweight * best;
    return res;
}

namespace {

std::vector<double> gaussian_kernel(double sigma) {
    const int radius = static_cast<int>(4.0 * sigma + 0.5);
    std::vector<double> k(2 * radius + 1);
    double sum = 0.0;
    for (int i = -radius; i <= radius; ++i) {
        k[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
        sum += k[i + radius];
    }
    for (double& v : k) v /= sum;
    return k;
}

// Mirror index with the edge sample repeated: (d c b a | a b c d | d c b a).
inline std::size_t reflect(long i, long n) {
    if (n == 1) return 0;
    const long period = 2 * n;
    i %= period;
    if (i < 0) i += period;
    return static_cast<std::size_t>(i < n ? i : period - 1 - i);
}

} // namespace

FeatureMap gaussian_smooth(const FeatureMap& map, double sigma) {
    require(sigma >= 0.0, "smoothing sigma must be non-negative");
    if (sigma == 0.0) return map;
    const auto k = gaussian_kernel(sigma);
    const long radius = static_cast<long>(k.size() / 2);
    const long H = static_cast<long>(map.height()), W = static_cast<long>(map.width());
    FeatureMap tmp(map.channels(), map.height(), map.width());
    FeatureMap out(map.channels(), map.height(), map.width());
    for (std::size_t c = 0; c < map.channels(); ++c) {
        for (long y = 0; y < H; ++y)
            for (long x = 0; x < W; ++x) {
                double acc = 0.0;
                for (long t = -radius; t <= radius; ++t) acc += k[t + radius] * map.at(c, y, reflect(x + t, W));
                tmp.at(c, y, x) = acc;
            }
        for (long y = 0; y < H; ++y)
            for (long x = 0; x < W; ++x) {
                double acc = 0.0;
                for (long t = -radius; t <= radius; ++t) acc += k[t + radius] * tmp.at(c, reflect(y + t, H), x);
                out.at(c, y, x) = acc;
            }
    }
    return out;
}

AnomalyMap assemble(const FeatureMap& grid, std::span<const AffineTransform> transforms, std::size_t out_h,
                    std::size_t out_w, double smooth_sigma) {
    require(grid.channels() == 1, "score grid must have a single channel");
    require(grid.all_finite(), "score grid contains non-finite values");
    AnomalyMap m;
    m.grid = grid;
    m.final = gaussian_smooth(inverse_remap(grid, transforms, out_h, out_w), smooth_sigma);
    m.image_score = *std::max_element(m.final.data().begin(), m.final.data().end());
    return m;
}

void export_anomaly_map(const std::filesystem::path& stem, const AnomalyMap& map) {
    const auto& v = map.final.data();
    const auto [lo_it, hi_it] = std::minmax_element(v.begin(), v.end());
    const double lo = *lo_it, hi = *hi_it;
    std::vector<std::uint16_t> px(v.size());
    for (std::size_t i = 0; i < v.size(); ++i)
        px[i] = hi > lo ? static_cast<std::uint16_t>(std::lround((v[i] - lo) / (hi - lo) * 65535.0)) : 0;
    auto with_ext = [&](const char* ext) {
        auto p = stem;
        p += ext;
        return p;
    };
    write_gray16_png(with_ext(".png"), map.final.height(), map.final.width(), px);
    write_feature_file(with_ext(".carg"), map.final);
    nlohmann::json j{{"min", lo}, {"max", hi}, {"image_score", map.image_score},
                     {"height", map.final.height()}, {"width", map.final.width()}};
    std::ofstream out(with_ext(".json"), std::ios::trunc);
    if (!out) throw Error("cannot write '" + with_ext(".json").string() + "'");
    out << j.dump(2) << '\n';
}

} // namespace fsad
