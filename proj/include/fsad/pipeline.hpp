#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "fsad/augselect.hpp"
#include "fsad/estimators.hpp"
#include "fsad/feature_io.hpp"
#include "fsad/model_io.hpp"
#include "fsad/png_io.hpp"
#include "fsad/registration.hpp"
#include "fsad/scoring.hpp"

namespace fsad {

enum class AugGating { all, selected, none };

struct PipelineConfig {
    EstimatorKind estimator = EstimatorKind::padim;
    double epsilon = kDefaultEpsilon;
    std::size_t d_prime = 100;  // clamped to D at fit time
    double gamma = 0.1;
    std::size_t proj_dim = 128; // coreset psi dimension
    std::size_t b_neighbors = kDefaultNeighbors;
    double smooth_sigma = 0.0;

    struct Seeds {
        std::uint64_t projection = 0;
        std::uint64_t coreset = 0;
        std::uint64_t support_draw = 0;
        std::uint64_t head = 0;
    } seeds;

    AugGating aug_gating = AugGating::selected;
    DistributionDistance aug_metric = DistributionDistance::wasserstein;
    std::optional<std::string> aug_report; // select-aug output to reuse

    bool registration = false;
    RegistrationConfig registration_cfg;
    RegistrationHead::Mode head_mode = RegistrationHead::Mode::identity;
    int register_scale = -1; // negative counts from the last scale

    std::array<std::size_t, 2> output_size{0, 0}; // 0 -> mask size, else grid size
    std::optional<double> fpr_threshold;          // default: max support self-score
    std::size_t runs = 0;   // >0: draw `runs` random support sets of size k_shot
    std::size_t k_shot = 0;

    void validate() const;
    nlohmann::json to_json() const;
    static PipelineConfig from_json(const nlohmann::json& j);
    static PipelineConfig load(const std::filesystem::path& path);
};

/// Registration reference (accumulated support features per scale).
struct RegistrationReference {
    std::vector<FeatureMap> scales;
};

/// Everything fit produces; `report` is deterministic, timing is separate.
struct FitOutcome {
    FittedModel model;
    nlohmann::json report;
    std::optional<RegistrationReference> reference;
    std::optional<AugmentationReport> augmentation;
    double fit_seconds = 0.0;
    double support_max_score = 0.0;
};

struct LoadedModel {
    FittedModel model;
    std::optional<MahalanobisScorer> scorer;
    std::optional<RegistrationReference> reference;
    nlohmann::json meta;
};

LoadedModel make_loaded(FittedModel model, std::optional<RegistrationReference> reference, nlohmann::json meta = {});

struct ScoredImage {
    std::string image_id;
    int label = 0;
    AnomalyMap map;
    double image_score = 0.0; // re-weighted for patchcore, max of map otherwise
    std::optional<Mask> mask;
};

/// Loads, registers/warps and aggregates one manifest entry.  Returns the
/// aggregated map and the transforms (application order) used.
std::pair<FeatureMap, std::vector<AffineTransform>> prepare_features(
    const Manifest& manifest, const ManifestEntry& entry, const PipelineConfig& cfg,
    const RegistrationReference* reference);

/// Fits on the given support entries (identity and augmented rows).
FitOutcome fit(const PipelineConfig& cfg, const Manifest& manifest, const std::vector<const ManifestEntry*>& supports);

/// Augmentation selection on the given supports.
AugmentationReport select_augmentations(const PipelineConfig& cfg, const Manifest& manifest,
                                        const std::vector<const ManifestEntry*>& supports);
nlohmann::json augmentation_report_json(const AugmentationReport& r, DistributionDistance metric);
AugmentationReport augmentation_report_from_json(const nlohmann::json& j);

ScoredImage score_entry(const LoadedModel& model, const PipelineConfig& cfg, const Manifest& manifest,
                        const ManifestEntry& entry);

struct RunReport {
    nlohmann::json report; // deterministic part
    nlohmann::json timing; // wall-clock fit durations
};

/// Per-run and mean/SD image and pixel AUC, FPR and complexity.
/// With `model_path`, evaluates that single artifact.
RunReport run_report(const PipelineConfig& cfg, const Manifest& manifest,
                     const std::optional<std::filesystem::path>& model_path = std::nullopt);

// Artifact helpers: <model>, <model>.json, <model>.timing.json, <model>.ref<s>.carg
void save_fit(const std::filesystem::path& model_path, const FitOutcome& fit, const PipelineConfig& cfg);
LoadedModel load_fit(const std::filesystem::path& model_path);

// Subcommand bodies shared by the CLI and the tests.  Each throws fsad::Error.
void cmd_fit(const PipelineConfig& cfg, const std::filesystem::path& manifest, const std::filesystem::path& model_out);
nlohmann::json cmd_score(const PipelineConfig& cfg, const std::filesystem::path& model,
                         const std::filesystem::path& manifest, const std::filesystem::path& out_dir);
nlohmann::json cmd_eval(const PipelineConfig& cfg, const std::filesystem::path& manifest,
                        const std::optional<std::filesystem::path>& model, const std::filesystem::path& report_out,
                        const std::optional<std::filesystem::path>& csv_out = std::nullopt);
nlohmann::json cmd_select_aug(const PipelineConfig& cfg, const std::filesystem::path& manifest,
                              const std::filesystem::path& report_out);
nlohmann::json cmd_register(const PipelineConfig& cfg, const std::filesystem::path& manifest,
                            const std::filesystem::path& manifest_out);
nlohmann::json cmd_bench(std::size_t D, std::size_t Dp, std::size_t K, std::size_t H, std::size_t W, double gamma);

} // namespace fsad
