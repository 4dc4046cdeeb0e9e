#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "fsad/feature_map.hpp"

namespace fsad {

// CARG binary tensor file: "CARG", u8 version (1), 3 zero bytes, u32-LE C, H,
// W, then C*H*W little-endian float32 values, channel-major.
inline constexpr std::array<char, 4> kFeatureMagic{'C', 'A', 'R', 'G'};
inline constexpr std::uint8_t kFeatureVersion = 1;

void write_feature_file(const std::filesystem::path& path, const FeatureMap& map);
FeatureMap read_feature_file(const std::filesystem::path& path);

std::vector<unsigned char> encode_feature_map(const FeatureMap& map);
FeatureMap decode_feature_map(const std::vector<unsigned char>& bytes, const std::string& source_name);

enum class Role { support, test };

/// One manifest row.  Paths are stored as written; resolve them with
/// Manifest::resolve.
struct ManifestEntry {
    std::string image_id;
    Role role = Role::support;
    int label = 0;
    std::string augmentation_id = "identity";
    std::vector<std::string> scale_files;
    std::optional<std::string> pixel_mask_file;
    // Affine transforms in STN application order, each 6 row-major reals.
    std::vector<std::array<double, 6>> transforms;
    // Features already carry the transforms; only the inverse remap applies.
    bool prewarped = false;
    int run = 0;
    // For augmented rows: image_id of the support image it was derived from.
    std::optional<std::string> source_id;

    bool is_identity_aug() const { return augmentation_id == "identity"; }
};

struct Manifest {
    std::filesystem::path base_dir;
    std::vector<ManifestEntry> entries;

    std::filesystem::path resolve(const std::string& p) const;

    std::vector<const ManifestEntry*> supports() const;
    std::vector<const ManifestEntry*> tests() const;

    static Manifest load(const std::filesystem::path& path);
    static Manifest from_json(const nlohmann::json& j, std::filesystem::path base_dir);
    nlohmann::json to_json() const;
    void save(const std::filesystem::path& path) const;
};

/// Loads every scale file of an entry in manifest order.
std::vector<FeatureMap> load_scales(const Manifest& manifest, const ManifestEntry& entry);

} // namespace fsad
