#pragma once

#include <filesystem>
#include <optional>
#include <vector>

#include "fsad/estimators.hpp"

namespace fsad {

// CADN model artifact: "CADN", u8 version (1), u8 estimator tag, u16 zero,
// u32-LE H, W, D, D' (0 unless projected), N (bank items, 0 unless
// patchcore), then float32-LE payload:
//   padim:     per position mu[D], Sigma[D*D] row-major
//   ortho:     W[D*D'] row-major, then per position mu[D'], Sigma[D'*D']
//   patchcore: N items of D values
struct FittedModel {
    EstimatorKind kind = EstimatorKind::padim;
    std::size_t grid_h = 0, grid_w = 0;
    std::size_t feature_dim = 0; // D of the incoming features
    std::optional<GaussianField> field;
    std::optional<MemoryBank> bank;
};

std::vector<unsigned char> encode_model(const FittedModel& model);
FittedModel decode_model(const std::vector<unsigned char>& bytes, const std::string& source_name);

void write_model(const std::filesystem::path& path, const FittedModel& model);
FittedModel read_model(const std::filesystem::path& path);

} // namespace fsad
