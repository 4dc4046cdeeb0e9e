#include "fsad/feature_io.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "fsad/error.hpp"

namespace fsad {

namespace {

static_assert(std::endian::native == std::endian::little, "little-endian host required");

void put_u32(std::vector<unsigned char>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<unsigned char>((v >> (8 * i)) & 0xFF));
}

std::uint32_t get_u32(const unsigned char* p) {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

std::vector<unsigned char> read_all(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open '" + path.string() + "'");
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_all(const std::filesystem::path& path, const std::vector<unsigned char>& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write '" + path.string() + "'");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error("write failed for '" + path.string() + "'");
}

} // namespace

std::vector<unsigned char> encode_feature_map(const FeatureMap& map) {
    require(!map.empty(), "empty feature map");
    std::vector<unsigned char> out;
    out.reserve(16 + 4 * map.data().size());
    out.insert(out.end(), kFeatureMagic.begin(), kFeatureMagic.end());
    out.push_back(kFeatureVersion);
    out.insert(out.end(), 3, 0);
    put_u32(out, static_cast<std::uint32_t>(map.channels()));
    put_u32(out, static_cast<std::uint32_t>(map.height()));
    put_u32(out, static_cast<std::uint32_t>(map.width()));
    for (double v : map.data()) {
        const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(v));
        put_u32(out, bits);
    }
    return out;
}

FeatureMap decode_feature_map(const std::vector<unsigned char>& bytes, const std::string& name) {
    if (bytes.size() < 20 || std::memcmp(bytes.data(), kFeatureMagic.data(), 4) != 0)
        throw Error(name + ": bad CARG magic");
    if (bytes[4] != kFeatureVersion) throw Error(name + ": unsupported CARG version " + std::to_string(bytes[4]));
    if (bytes[5] != 0 || bytes[6] != 0 || bytes[7] != 0) throw Error(name + ": reserved header bytes must be zero");
    const std::uint32_t C = get_u32(&bytes[8]), H = get_u32(&bytes[12]), W = get_u32(&bytes[16]);
    if (C == 0 || H == 0 || W == 0) throw Error(name + ": empty feature map");
    const std::size_t n = static_cast<std::size_t>(C) * H * W;
    if (bytes.size() != 20 + 4 * n)
        throw Error(name + ": payload size " + std::to_string(bytes.size() - 20) + " does not match header " +
                    std::to_string(C) + "x" + std::to_string(H) + "x" + std::to_string(W));
    std::vector<double> data(n);
    for (std::size_t i = 0; i < n; ++i) {
        const float f = std::bit_cast<float>(get_u32(&bytes[20 + 4 * i]));
        if (!std::isfinite(f)) throw Error(name + ": non-finite value at index " + std::to_string(i));
        data[i] = f;
    }
    return FeatureMap(C, H, W, std::move(data));
}

void write_feature_file(const std::filesystem::path& path, const FeatureMap& map) {
    write_all(path, encode_feature_map(map));
}

FeatureMap read_feature_file(const std::filesystem::path& path) {
    return decode_feature_map(read_all(path), path.string());
}

std::filesystem::path Manifest::resolve(const std::string& p) const {
    std::filesystem::path fp(p);
    return fp.is_absolute() ? fp : base_dir / fp;
}

std::vector<const ManifestEntry*> Manifest::supports() const {
    std::vector<const ManifestEntry*> out;
    for (const auto& e : entries)
        if (e.role == Role::support) out.push_back(&e);
    return out;
}

std::vector<const ManifestEntry*> Manifest::tests() const {
    std::vector<const ManifestEntry*> out;
    for (const auto& e : entries)
        if (e.role == Role::test) out.push_back(&e);
    return out;
}

Manifest Manifest::from_json(const nlohmann::json& j, std::filesystem::path base_dir) {
    Manifest m;
    m.base_dir = std::move(base_dir);
    const nlohmann::json& rows = j.is_array() ? j : j.at("images");
    if (!rows.is_array()) throw Error("manifest: 'images' must be an array");
    std::size_t idx = 0;
    for (const auto& r : rows) {
        const std::string where = "manifest row " + std::to_string(idx++);
        try {
            ManifestEntry e;
            e.image_id = r.at("image_id").get<std::string>();
            const auto role = r.at("role").get<std::string>();
            if (role == "support") e.role = Role::support;
            else if (role == "test") e.role = Role::test;
            else throw Error("role must be 'support' or 'test', got '" + role + "'");
            e.label = r.value("label", 0);
            if (e.label != 0 && e.label != 1) throw Error("label must be 0 or 1");
            e.augmentation_id = r.value("augmentation_id", std::string("identity"));
            e.scale_files = r.at("scale_files").get<std::vector<std::string>>();
            if (e.scale_files.empty()) throw Error("scale_files is empty");
            if (r.contains("pixel_mask_file") && !r["pixel_mask_file"].is_null())
                e.pixel_mask_file = r["pixel_mask_file"].get<std::string>();
            if (r.contains("transforms")) {
                for (const auto& t : r["transforms"]) {
                    const auto v = t.get<std::vector<double>>();
                    if (v.size() != 6) throw Error("each transform needs 6 row-major values");
                    std::array<double, 6> a{};
                    std::copy(v.begin(), v.end(), a.begin());
                    e.transforms.push_back(a);
                }
            }
            e.prewarped = r.value("prewarped", false);
            e.run = r.value("run", 0);
            if (r.contains("source_id") && !r["source_id"].is_null()) e.source_id = r["source_id"].get<std::string>();
            m.entries.push_back(std::move(e));
        } catch (const nlohmann::json::exception& ex) {
            throw Error(where + ": " + ex.what());
        } catch (const Error& ex) {
            throw Error(where + ": " + ex.what());
        }
    }
    return m;
}

Manifest Manifest::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open manifest '" + path.string() + "'");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& ex) {
        throw Error(path.string() + ": " + ex.what());
    }
    try {
        return from_json(j, path.parent_path());
    } catch (const Error& ex) {
        throw Error(path.string() + ": " + ex.what());
    }
}

nlohmann::json Manifest::to_json() const {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& e : entries) {
        nlohmann::json r;
        r["image_id"] = e.image_id;
        r["role"] = e.role == Role::support ? "support" : "test";
        r["label"] = e.label;
        r["augmentation_id"] = e.augmentation_id;
        r["scale_files"] = e.scale_files;
        if (e.pixel_mask_file) r["pixel_mask_file"] = *e.pixel_mask_file;
        if (!e.transforms.empty()) {
            nlohmann::json ts = nlohmann::json::array();
            for (const auto& t : e.transforms) ts.push_back(std::vector<double>(t.begin(), t.end()));
            r["transforms"] = ts;
        }
        if (e.prewarped) r["prewarped"] = true;
        if (e.run != 0) r["run"] = e.run;
        if (e.source_id) r["source_id"] = *e.source_id;
        rows.push_back(std::move(r));
    }
    return nlohmann::json{{"version", 1}, {"images", rows}};
}

void Manifest::save(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw Error("cannot write manifest '" + path.string() + "'");
    out << to_json().dump(2) << '\n';
}

std::vector<FeatureMap> load_scales(const Manifest& manifest, const ManifestEntry& entry) {
    std::vector<FeatureMap> maps;
    maps.reserve(entry.scale_files.size());
    for (const auto& f : entry.scale_files) maps.push_back(read_feature_file(manifest.resolve(f)));
    return maps;
}

} // namespace fsad
