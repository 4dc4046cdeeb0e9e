#include "fsad/feature_map.hpp"

#include <cmath>
#include <string>

#include "fsad/error.hpp"

namespace fsad {

FeatureMap::FeatureMap(std::size_t channels, std::size_t height, std::size_t width, double fill)
    : c_(channels), h_(height), w_(width), data_(channels * height * width, fill) {}

FeatureMap::FeatureMap(std::size_t channels, std::size_t height, std::size_t width, std::vector<double> data)
    : c_(channels), h_(height), w_(width), data_(std::move(data)) {
    require(data_.size() == c_ * h_ * w_, "feature map data length does not match C*H*W");
}

bool FeatureMap::all_finite() const {
    for (double v : data_)
        if (!std::isfinite(v)) return false;
    return true;
}

PatchFeatureSet::PatchFeatureSet(std::size_t dim, std::size_t height, std::size_t width)
    : dim_(dim), h_(height), w_(width) {}

void PatchFeatureSet::add_sample(const FeatureMap& m) {
    require(!m.empty(), "empty feature map");
    if (k_ == 0 && dim_ == 0) {
        dim_ = m.channels();
        h_ = m.height();
        w_ = m.width();
    }
    require(m.channels() == dim_ && m.height() == h_ && m.width() == w_,
            "sample shape does not match the feature set");
    const std::size_t base = data_.size();
    data_.resize(base + dim_ * positions());
    for (std::size_t c = 0; c < dim_; ++c) {
        auto plane = m.channel(c);
        for (std::size_t p = 0; p < positions(); ++p) data_[base + p * dim_ + c] = plane[p];
    }
    ++k_;
}

PatchFeatureSet PatchFeatureSet::sample(std::size_t k) const {
    require(k < k_, "sample index out of range");
    PatchFeatureSet out(dim_, h_, w_);
    const auto stride = dim_ * positions();
    out.data_.assign(data_.begin() + k * stride, data_.begin() + (k + 1) * stride);
    out.k_ = 1;
    return out;
}

PatchFeatureSet PatchFeatureSet::from_maps(std::span<const FeatureMap> aggregated) {
    PatchFeatureSet out;
    for (const auto& m : aggregated) out.add_sample(m);
    return out;
}

namespace {

// Align-corners source coordinate for output index i.
inline double source_coord(std::size_t i, std::size_t in, std::size_t out) {
    if (out <= 1 || in <= 1) return 0.0;
    return static_cast<double>(i) * static_cast<double>(in - 1) / static_cast<double>(out - 1);
}

} // namespace

FeatureMap resize_bilinear(const FeatureMap& map, std::size_t target_h, std::size_t target_w) {
    require(!map.empty(), "empty feature map");
    require(target_h >= 1 && target_w >= 1, "resize target must be at least 1x1");
    if (target_h == map.height() && target_w == map.width()) return map;

    const std::size_t H = map.height(), W = map.width();
    FeatureMap out(map.channels(), target_h, target_w);

    std::vector<std::size_t> x0(target_w), x1(target_w);
    std::vector<double> fx(target_w);
    for (std::size_t x = 0; x < target_w; ++x) {
        const double s = source_coord(x, W, target_w);
        x0[x] = std::min(static_cast<std::size_t>(std::floor(s)), W - 1);
        x1[x] = std::min(x0[x] + 1, W - 1);
        fx[x] = s - static_cast<double>(x0[x]);
    }
    for (std::size_t y = 0; y < target_h; ++y) {
        const double s = source_coord(y, H, target_h);
        const std::size_t y0 = std::min(static_cast<std::size_t>(std::floor(s)), H - 1);
        const std::size_t y1 = std::min(y0 + 1, H - 1);
        const double fy = s - static_cast<double>(y0);
        for (std::size_t c = 0; c < map.channels(); ++c) {
            for (std::size_t x = 0; x < target_w; ++x) {
                const double top = map.at(c, y0, x0[x]) + fx[x] * (map.at(c, y0, x1[x]) - map.at(c, y0, x0[x]));
                const double bot = map.at(c, y1, x0[x]) + fx[x] * (map.at(c, y1, x1[x]) - map.at(c, y1, x0[x]));
                out.at(c, y, x) = top + fy * (bot - top);
            }
        }
    }
    return out;
}

FeatureMap aggregate_multiscale(std::span<const FeatureMap> maps) {
    require(!maps.empty(), "aggregate_multiscale needs at least one map");
    const std::size_t H = maps.front().height(), W = maps.front().width();
    std::size_t D = 0;
    for (const auto& m : maps) {
        require(!m.empty(), "empty feature map");
        D += m.channels();
    }
    FeatureMap out(D, H, W);
    std::size_t c_off = 0;
    for (const auto& m : maps) {
        const FeatureMap r = resize_bilinear(m, H, W);
        if (r.height() != H || r.width() != W) throw std::logic_error("resize produced mismatched size");
        for (std::size_t c = 0; c < r.channels(); ++c) {
            auto src = r.channel(c);
            auto dst = out.channel(c_off + c);
            std::copy(src.begin(), src.end(), dst.begin());
        }
        c_off += r.channels();
    }
    return out;
}

FeatureMap mean_of(std::span<const FeatureMap> maps) {
    require(!maps.empty(), "mean of an empty list");
    FeatureMap out(maps.front().channels(), maps.front().height(), maps.front().width());
    for (const auto& m : maps) {
        require(m.same_shape(out), "shape mismatch");
        for (std::size_t i = 0; i < out.data().size(); ++i) out.data()[i] += m.data()[i];
    }
    const double inv = 1.0 / static_cast<double>(maps.size());
    for (double& v : out.data()) v *= inv;
    return out;
}

} // namespace fsad
