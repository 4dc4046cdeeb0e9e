#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "fsad/feature_map.hpp"
#include "fsad/png_io.hpp"

namespace fsad::synthetic {

/// Sum of a few random low-frequency sinusoids per channel.
FeatureMap smooth_random_map(std::size_t channels, std::size_t height, std::size_t width, std::uint64_t seed,
                             double max_frequency = 2.0);

struct CategorySpec {
    std::size_t height = 32, width = 32;     // finest scale
    std::vector<std::size_t> scale_channels{6, 4}; // scale s has size H/2^s x W/2^s
    double mean_amplitude = 1.0;
    double factor_scale = 0.4; // per-position low-rank covariance factor
    double noise = 0.3;        // isotropic standard deviation
    std::size_t block = 8;     // anomaly block side on the finest scale
    double shift_sigmas = 3.0;
};

struct Sample {
    std::vector<FeatureMap> scales;
    Mask mask; // finest-scale resolution
    int label = 0;
};

/// A category whose normal patch features follow a fixed per-position
/// Gaussian N(mu_s(ij), B B^T + noise^2 I) at every scale.  Anomalies add a
/// shift of shift_sigmas per-channel standard deviations (random sign per
/// channel) inside one block.
class Category {
public:
    Category(CategorySpec spec, std::uint64_t seed);

    const CategorySpec& spec() const { return spec_; }
    Sample normal(std::uint64_t seed) const;
    Sample anomalous(std::uint64_t seed) const;

private:
    struct Scale {
        std::size_t channels, height, width;
        FeatureMap mean;
        std::vector<double> factors; // per position C x 2, row-major
    };
    Sample draw(std::mt19937_64& rng, bool anomalous) const;

    CategorySpec spec_;
    std::vector<Scale> scales_;
};

/// Mirrors (hflip, vflip) or adds small seeded noise (jitter) to
/// a feature map.  Feature-level stand-ins for image augmentations.
FeatureMap augment(const FeatureMap& m, const std::string& aug_id, std::uint64_t seed);

struct DatasetSpec {
    CategorySpec category;
    std::size_t support = 8;
    std::size_t test_normal = 20;
    std::size_t test_anomalous = 20;
    std::vector<std::string> augmentations; // subset of {hflip, vflip, jitter}
    std::uint64_t seed = 0;
};

/// Writes CARG files, PNG masks and manifest.json into `dir`; returns the
/// manifest path.
std::filesystem::path write_dataset(const std::filesystem::path& dir, const DatasetSpec& spec);

/// One smooth support map and a test map equal to it warped by a rotation of
/// `degrees`; returns the manifest path.
std::filesystem::path write_rotation_fixture(const std::filesystem::path& dir, double degrees, std::uint64_t seed,
                                             std::size_t channels = 4, std::size_t size = 32);

} // namespace fsad::synthetic
