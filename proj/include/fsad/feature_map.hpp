#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include <Eigen/Core>

namespace fsad {

/// Dense C x H x W tensor, channel-major then row-major.
class FeatureMap {
public:
    FeatureMap() = default;
    FeatureMap(std::size_t channels, std::size_t height, std::size_t width, double fill = 0.0);
    FeatureMap(std::size_t channels, std::size_t height, std::size_t width, std::vector<double> data);

    std::size_t channels() const { return c_; }
    std::size_t height() const { return h_; }
    std::size_t width() const { return w_; }
    std::size_t plane_size() const { return h_ * w_; }
    bool empty() const { return data_.empty(); }

    double& at(std::size_t c, std::size_t y, std::size_t x) { return data_[(c * h_ + y) * w_ + x]; }
    double at(std::size_t c, std::size_t y, std::size_t x) const { return data_[(c * h_ + y) * w_ + x]; }

    std::span<double> channel(std::size_t c) { return {data_.data() + c * plane_size(), plane_size()}; }
    std::span<const double> channel(std::size_t c) const { return {data_.data() + c * plane_size(), plane_size()}; }

    const std::vector<double>& data() const { return data_; }
    std::vector<double>& data() { return data_; }

    bool same_shape(const FeatureMap& o) const { return c_ == o.c_ && h_ == o.h_ && w_ == o.w_; }
    bool all_finite() const;

    friend bool operator==(const FeatureMap&, const FeatureMap&) = default;

private:
    std::size_t c_ = 0, h_ = 0, w_ = 0;
    std::vector<double> data_;
};

/// Registered patch features F_reg for K samples on an H x W grid.
///
/// Vectors are stored sample-major, then position (row-major), then
/// dimension, so each D-vector is contiguous.
class PatchFeatureSet {
public:
    PatchFeatureSet() = default;
    PatchFeatureSet(std::size_t dim, std::size_t height, std::size_t width);

    std::size_t dim() const { return dim_; }
    std::size_t height() const { return h_; }
    std::size_t width() const { return w_; }
    std::size_t positions() const { return h_ * w_; }
    std::size_t samples() const { return k_; }

    /// Appends one aggregated D x H x W map as a new sample slot.
    void add_sample(const FeatureMap& aggregated);

    Eigen::Map<const Eigen::VectorXd> vector(std::size_t k, std::size_t pos) const {
        return {data_.data() + (k * positions() + pos) * dim_, static_cast<Eigen::Index>(dim_)};
    }
    Eigen::Map<const Eigen::VectorXd> vector(std::size_t k, std::size_t y, std::size_t x) const {
        return vector(k, y * w_ + x);
    }

    /// Single-sample view of slot k.
    PatchFeatureSet sample(std::size_t k) const;

    static PatchFeatureSet from_maps(std::span<const FeatureMap> aggregated);

private:
    std::size_t dim_ = 0, h_ = 0, w_ = 0, k_ = 0;
    std::vector<double> data_;
};

/// Align-corners bilinear resize, applied to every channel independently.
FeatureMap resize_bilinear(const FeatureMap& map, std::size_t target_h, std::size_t target_w);

/// Upsamples every map to the spatial size of the first one and concatenates
/// channels in input order.
FeatureMap aggregate_multiscale(std::span<const FeatureMap> maps);

/// Element-wise mean of equally shaped maps.
FeatureMap mean_of(std::span<const FeatureMap> maps);

} // namespace fsad
