#include "fsad/synthetic.hpp"

#include <cmath>
#include <numbers>

#include "fsad/error.hpp"
#include "fsad/feature_io.hpp"
#include "fsad/registration.hpp"

namespace fsad::synthetic {

FeatureMap smooth_random_map(std::size_t channels, std::size_t height, std::size_t width, std::uint64_t seed,
                             double max_frequency) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> freq(-max_frequency, max_frequency), phase(0.0, 2 * std::numbers::pi),
        amp(0.5, 1.0);
    FeatureMap m(channels, height, width);
    for (std::size_t c = 0; c < channels; ++c) {
        for (int term = 0; term < 3; ++term) {
            const double fx = freq(rng), fy = freq(rng), ph = phase(rng), a = amp(rng);
            for (std::size_t y = 0; y < height; ++y)
                for (std::size_t x = 0; x < width; ++x) {
                    const double xn = width > 1 ? -1.0 + 2.0 * x / (width - 1.0) : 0.0;
                    const double yn = height > 1 ? -1.0 + 2.0 * y / (height - 1.0) : 0.0;
                    m.at(c, y, x) += a * std::sin(std::numbers::pi * (fx * xn + fy * yn) + ph);
                }
        }
    }
    return m;
}

Category::Category(CategorySpec spec, std::uint64_t seed) : spec_(std::move(spec)) {
    require(!spec_.scale_channels.empty(), "synthetic category needs at least one scale");
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal;
    for (std::size_t s = 0; s < spec_.scale_channels.size(); ++s) {
        Scale sc;
        sc.channels = spec_.scale_channels[s];
        sc.height = std::max<std::size_t>(1, spec_.height >> s);
        sc.width = std::max<std::size_t>(1, spec_.width >> s);
        sc.mean = smooth_random_map(sc.channels, sc.height, sc.width, rng());
        for (double& v : sc.mean.data()) v *= spec_.mean_amplitude;
        sc.factors.resize(sc.height * sc.width * sc.channels * 2);
        for (double& v : sc.factors) v = spec_.factor_scale * normal(rng);
        scales_.push_back(std::move(sc));
    }
}

Sample Category::draw(std::mt19937_64& rng, bool anomalous) const {
    std::normal_distribution<double> normal;
    Sample out;
    out.label = anomalous ? 1 : 0;
    out.mask.height = spec_.height;
    out.mask.width = spec_.width;
    out.mask.values.assign(spec_.height * spec_.width, 0);

    // block origin aligned to the coarsest scale so every scale sees a whole block
    const std::size_t align = std::size_t{1} << (scales_.size() - 1);
    std::size_t by = 0, bx = 0;
    if (anomalous) {
        require(spec_.block <= spec_.height && spec_.block <= spec_.width, "anomaly block larger than grid");
        std::uniform_int_distribution<std::size_t> oy(0, (spec_.height - spec_.block) / align),
            ox(0, (spec_.width - spec_.block) / align);
        by = oy(rng) * align;
        bx = ox(rng) * align;
        for (std::size_t y = by; y < by + spec_.block; ++y)
            for (std::size_t x = bx; x < bx + spec_.block; ++x) out.mask.values[y * spec_.width + x] = 1;
    }

    for (std::size_t s = 0; s < scales_.size(); ++s) {
        const Scale& sc = scales_[s];
        FeatureMap m = sc.mean;
        const std::size_t C = sc.channels;
        std::vector<double> sign(C, 1.0);
        if (anomalous)
            for (double& v : sign) v = (rng() & 1) ? 1.0 : -1.0;
        const std::size_t sy0 = by >> s, sx0 = bx >> s;
        const std::size_t sb = std::max<std::size_t>(1, spec_.block >> s);
        for (std::size_t y = 0; y < sc.height; ++y)
            for (std::size_t x = 0; x < sc.width; ++x) {
                const std::size_t p = y * sc.width + x;
                const double z0 = normal(rng), z1 = normal(rng);
                const bool in_block = anomalous && y >= sy0 && y < sy0 + sb && x >= sx0 && x < sx0 + sb;
                for (std::size_t c = 0; c < C; ++c) {
                    const double b0 = sc.factors[(p * C + c) * 2], b1 = sc.factors[(p * C + c) * 2 + 1];
                    double v = b0 * z0 + b1 * z1 + spec_.noise * normal(rng);
                    if (in_block) {
                        const double sd = std::sqrt(b0 * b0 + b1 * b1 + spec_.noise * spec_.noise);
                        v += sign[c] * spec_.shift_sigmas * sd;
                    }
                    m.at(c, y, x) += v;
                }
            }
        out.scales.push_back(std::move(m));
    }
    return out;
}

Sample Category::normal(std::uint64_t seed) const {
    std::mt19937_64 rng(seed);
    return draw(rng, false);
}

Sample Category::anomalous(std::uint64_t seed) const {
    std::mt19937_64 rng(seed);
    return draw(rng, true);
}

FeatureMap augment(const FeatureMap& m, const std::string& aug_id, std::uint64_t seed) {
    if (aug_id == "identity") return m;
    FeatureMap out = m;
    const std::size_t H = m.height(), W = m.width();
    if (aug_id == "hflip") {
        for (std::size_t c = 0; c < m.channels(); ++c)
            for (std::size_t y = 0; y < H; ++y)
                for (std::size_t x = 0; x < W; ++x) out.at(c, y, x) = m.at(c, y, W - 1 - x);
    } else if (aug_id == "vflip") {
        for (std::size_t c = 0; c < m.channels(); ++c)
            for (std::size_t y = 0; y < H; ++y)
                for (std::size_t x = 0; x < W; ++x) out.at(c, y, x) = m.at(c, H - 1 - y, x);
    } else if (aug_id == "jitter") {
        std::mt19937_64 rng(seed);
        std::normal_distribution<double> normal(0.0, 0.05);
        for (double& v : out.data()) v += normal(rng);
    } else {
        throw Error("unknown synthetic augmentation '" + aug_id + "'");
    }
    return out;
}

namespace {

nlohmann::json write_sample(const std::filesystem::path& dir, const std::string& id, const std::vector<FeatureMap>& scales) {
    nlohmann::json files = nlohmann::json::array();
    for (std::size_t s = 0; s < scales.size(); ++s) {
        const std::string name = id + "_s" + std::to_string(s) + ".carg";
        write_feature_file(dir / name, scales[s]);
        files.push_back(name);
    }
    return files;
}

} // namespace

std::filesystem::path write_dataset(const std::filesystem::path& dir, const DatasetSpec& spec) {
    std::filesystem::create_directories(dir);
    const Category cat(spec.category, spec.seed);
    std::mt19937_64 seeds(spec.seed ^ 0x9E3779B97F4A7C15ULL);
    nlohmann::json rows = nlohmann::json::array();

    for (std::size_t k = 0; k < spec.support; ++k) {
        const std::string id = "support_" + std::to_string(k);
        const Sample s = cat.normal(seeds());
        rows.push_back({{"image_id", id}, {"role", "support"}, {"label", 0}, {"augmentation_id", "identity"},
                        {"scale_files", write_sample(dir, id, s.scales)}});
        for (const auto& aug : spec.augmentations) {
            std::vector<FeatureMap> augmented;
            const std::uint64_t aug_seed = seeds();
            for (const auto& m : s.scales) augmented.push_back(augment(m, aug, aug_seed + augmented.size()));
            const std::string aid = id + "_" + aug;
            rows.push_back({{"image_id", aid}, {"role", "support"}, {"label", 0}, {"augmentation_id", aug},
                            {"scale_files", write_sample(dir, aid, augmented)}, {"source_id", id}});
        }
    }
    auto add_test = [&](const std::string& id, const Sample& s) {
        const std::string mask_name = id + "_mask.png";
        write_mask_png(dir / mask_name, s.mask);
        rows.push_back({{"image_id", id}, {"role", "test"}, {"label", s.label}, {"augmentation_id", "identity"},
                        {"scale_files", write_sample(dir, id, s.scales)}, {"pixel_mask_file", mask_name}});
    };
    for (std::size_t i = 0; i < spec.test_normal; ++i) add_test("test_good_" + std::to_string(i), cat.normal(seeds()));
    for (std::size_t i = 0; i < spec.test_anomalous; ++i)
        add_test("test_bad_" + std::to_string(i), cat.anomalous(seeds()));

    const auto path = dir / "manifest.json";
    Manifest::from_json(nlohmann::json{{"version", 1}, {"images", rows}}, dir).save(path);
    return path;
}

std::filesystem::path write_rotation_fixture(const std::filesystem::path& dir, double degrees, std::uint64_t seed,
                                             std::size_t channels, std::size_t size) {
    std::filesystem::create_directories(dir);
    const FeatureMap ref = smooth_random_map(channels, size, size, seed, 1.0);
    const FeatureMap moving = affine_warp(ref, AffineTransform::rotation(-degrees * std::numbers::pi / 180.0));
    write_feature_file(dir / "reference.carg", ref);
    write_feature_file(dir / "moving.carg", moving);
    nlohmann::json rows = nlohmann::json::array();
    rows.push_back({{"image_id", "reference"}, {"role", "support"}, {"label", 0}, {"scale_files", {"reference.carg"}}});
    rows.push_back({{"image_id", "moving"}, {"role", "test"}, {"label", 0}, {"scale_files", {"moving.carg"}}});
    const auto path = dir / "manifest.json";
    Manifest::from_json(nlohmann::json{{"version", 1}, {"images", rows}}, dir).save(path);
    return path;
}

} // namespace fsad::synthetic
