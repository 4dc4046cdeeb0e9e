#include "fsad/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <map>
#include <random>
#include <set>
#include <sstream>

#include "fsad/error.hpp"
#include "fsad/evaluation.hpp"
#include "fsad/png_io.hpp"

namespace fsad {

namespace {

using json = nlohmann::json;

std::string gating_name(AugGating g) {
    switch (g) {
    case AugGating::all: return "all";
    case AugGating::selected: return "selected";
    case AugGating::none: return "none";
    }
    return "unknown";
}

AugGating gating_from_string(const std::string& s) {
    if (s == "all") return AugGating::all;
    if (s == "selected") return AugGating::selected;
    if (s == "none") return AugGating::none;
    throw Error("aug_gating must be one of all, selected, none (got '" + s + "')");
}

json read_json_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open '" + path.string() + "'");
    try {
        json j;
        in >> j;
        return j;
    } catch (const json::exception& ex) {
        throw Error(path.string() + ": " + ex.what());
    }
}

void write_json_file(const std::filesystem::path& path, const json& j) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw Error("cannot write '" + path.string() + "'");
    out << j.dump(2) << '\n';
}

std::filesystem::path with_suffix(const std::filesystem::path& p, const std::string& suffix) {
    auto out = p;
    out += suffix;
    return out;
}

template <typename T>
T field(const json& j, const char* key, T fallback, const std::string& ctx) {
    if (!j.contains(key) || j[key].is_null()) return fallback;
    try {
        return j[key].get<T>();
    } catch (const json::exception&) {
        throw Error("config field '" + ctx + key + "' has the wrong type");
    }
}

void reject_unknown(const json& j, std::initializer_list<const char*> known, const std::string& ctx) {
    for (const auto& [k, v] : j.items()) {
        if (std::none_of(known.begin(), known.end(), [&](const char* n) { return k == n; }))
            throw Error("unknown config field '" + ctx + k + "'");
    }
}

} // namespace

void PipelineConfig::validate() const {
    require(epsilon >= 0.0, "config field 'epsilon' must be >= 0");
    require(d_prime >= 1, "config field 'd_prime' must be >= 1");
    require(gamma > 0.0 && gamma <= 1.0, "config field 'gamma' must be in (0, 1]");
    require(proj_dim >= 1, "config field 'proj_dim' must be >= 1");
    require(b_neighbors >= 1, "config field 'b_neighbors' must be >= 1");
    require(smooth_sigma >= 0.0, "config field 'smooth_sigma' must be >= 0");
    require(registration_cfg.learning_rate > 0.0, "config field 'registration.learning_rate' must be > 0");
    require(registration_cfg.max_iters >= 1, "config field 'registration.max_iters' must be >= 1");
    require(registration_cfg.tol >= 0.0, "config field 'registration.tol' must be >= 0");
    require(runs == 0 || k_shot >= 1, "config field 'k_shot' must be >= 1 when 'runs' is set");
    if (fpr_threshold) require(std::isfinite(*fpr_threshold), "config field 'fpr_threshold' must be finite");
}

json PipelineConfig::to_json() const {
    json j;
    j["estimator"] = to_string(estimator);
    j["epsilon"] = epsilon;
    j["d_prime"] = d_prime;
    j["gamma"] = gamma;
    j["proj_dim"] = proj_dim;
    j["b_neighbors"] = b_neighbors;
    j["smooth_sigma"] = smooth_sigma;
    j["seeds"] = {{"projection", seeds.projection},
                  {"coreset", seeds.coreset},
                  {"support_draw", seeds.support_draw},
                  {"head", seeds.head}};
    j["aug_gating"] = gating_name(aug_gating);
    j["aug_metric"] = to_string(aug_metric);
    j["aug_report"] = aug_report ? json(*aug_report) : json(nullptr);
    j["registration"] = {
        {"enabled", registration},
        {"learning_rate", registration_cfg.learning_rate},
        {"max_iters", registration_cfg.max_iters},
        {"tol", registration_cfg.tol},
        {"grad_mode", registration_cfg.grad_mode == RegistrationConfig::GradMode::analytic ? "analytic"
                                                                                         : "finite-difference"},
        {"head", head_mode == RegistrationHead::Mode::identity ? "identity" : "fixed-random"},
        {"scale", register_scale}};
    j["output_size"] = {output_size[0], output_size[1]};
    j["fpr_threshold"] = fpr_threshold ? json(*fpr_threshold) : json(nullptr);
    j["runs"] = runs;
    j["k_shot"] = k_shot;
    return j;
}

PipelineConfig PipelineConfig::from_json(const json& j) {
    require(j.is_object(), "config must be a JSON object");
    reject_unknown(j,
                   {"estimator", "epsilon", "d_prime", "gamma", "proj_dim", "b_neighbors", "smooth_sigma", "seeds",
                    "aug_gating", "aug_metric", "aug_report", "registration", "output_size", "fpr_threshold", "runs",
                    "k_shot"},
                   "");
    PipelineConfig c;
    c.estimator = estimator_from_string(field<std::string>(j, "estimator", to_string(c.estimator), ""));
    c.epsilon = field(j, "epsilon", c.epsilon, "");
    c.d_prime = field(j, "d_prime", c.d_prime, "");
    c.gamma = field(j, "gamma", c.gamma, "");
    c.proj_dim = field(j, "proj_dim", c.proj_dim, "");
    c.b_neighbors = field(j, "b_neighbors", c.b_neighbors, "");
    c.smooth_sigma = field(j, "smooth_sigma", c.smooth_sigma, "");
    if (j.contains("seeds")) {
        const json& s = j["seeds"];
        require(s.is_object(), "config field 'seeds' must be an object");
        reject_unknown(s, {"projection", "coreset", "support_draw", "head"}, "seeds.");
        c.seeds.projection = field(s, "projection", c.seeds.projection, "seeds.");
        c.seeds.coreset = field(s, "coreset", c.seeds.coreset, "seeds.");
        c.seeds.support_draw = field(s, "support_draw", c.seeds.support_draw, "seeds.");
        c.seeds.head = field(s, "head", c.seeds.head, "seeds.");
    }
    c.aug_gating = gating_from_string(field<std::string>(j, "aug_gating", gating_name(c.aug_gating), ""));
    c.aug_metric = distance_from_string(field<std::string>(j, "aug_metric", to_string(c.aug_metric), ""));
    if (j.contains("aug_report") && !j["aug_report"].is_null()) c.aug_report = field<std::string>(j, "aug_report", "", "");
    if (j.contains("registration")) {
        const json& r = j["registration"];
        require(r.is_object(), "config field 'registration' must be an object");
        reject_unknown(r, {"enabled", "learning_rate", "max_iters", "tol", "grad_mode", "head", "scale"},
                       "registration.");
        c.registration = field(r, "enabled", c.registration, "registration.");
        c.registration_cfg.learning_rate = field(r, "learning_rate", c.registration_cfg.learning_rate, "registration.");
        c.registration_cfg.max_iters = field(r, "max_iters", c.registration_cfg.max_iters, "registration.");
        c.registration_cfg.tol = field(r, "tol", c.registration_cfg.tol, "registration.");
        const auto gm = field<std::string>(r, "grad_mode", "analytic", "registration.");
        if (gm == "analytic") c.registration_cfg.grad_mode = RegistrationConfig::GradMode::analytic;
        else if (gm == "finite-difference") c.registration_cfg.grad_mode = RegistrationConfig::GradMode::finite_difference;
        else throw Error("config field 'registration.grad_mode' must be analytic or finite-difference");
        const auto hm = field<std::string>(r, "head", "identity", "registration.");
        if (hm == "identity") c.head_mode = RegistrationHead::Mode::identity;
        else if (hm == "fixed-random") c.head_mode = RegistrationHead::Mode::fixed_random;
        else throw Error("config field 'registration.head' must be identity or fixed-random");
        c.register_scale = field(r, "scale", c.register_scale, "registration.");
    }
    if (j.contains("output_size")) {
        const auto v = field<std::vector<std::size_t>>(j, "output_size", {0, 0}, "");
        require(v.size() == 2, "config field 'output_size' needs two entries [height, width]");
        c.output_size = {v[0], v[1]};
    }
    if (j.contains("fpr_threshold") && !j["fpr_threshold"].is_null())
        c.fpr_threshold = field<double>(j, "fpr_threshold", 0.0, "");
    c.runs = field(j, "runs", c.runs, "");
    c.k_shot = field(j, "k_shot", c.k_shot, "");
    c.validate();
    return c;
}

PipelineConfig PipelineConfig::load(const std::filesystem::path& path) {
    try {
        return from_json(read_json_file(path));
    } catch (const Error& ex) {
        throw Error(path.string() + ": " + ex.what());
    }
}

namespace {

std::size_t resolve_scale(int idx, std::size_t n) {
    const long i = idx < 0 ? static_cast<long>(n) + idx : idx;
    require(i >= 0 && i < static_cast<long>(n), "registration scale index out of range");
    return static_cast<std::size_t>(i);
}

RegistrationHead make_head(const PipelineConfig& cfg, std::size_t channels) {
    return cfg.head_mode == RegistrationHead::Mode::identity ? RegistrationHead::identity(channels)
                                                             : RegistrationHead::fixed_random(channels, cfg.seeds.head);
}

AffineTransform composite(const std::vector<AffineTransform>& ts) {
    AffineTransform a = AffineTransform::identity();
    for (const auto& t : ts) a = compose(a, t);
    return a;
}

std::string entry_context(const ManifestEntry& e) { return "image '" + e.image_id + "': "; }

} // namespace

LoadedModel make_loaded(FittedModel model, std::optional<RegistrationReference> reference, json meta) {
    LoadedModel lm;
    if (model.field) lm.scorer.emplace(*model.field);
    lm.model = std::move(model);
    lm.reference = std::move(reference);
    lm.meta = std::move(meta);
    return lm;
}

std::pair<FeatureMap, std::vector<AffineTransform>> prepare_features(const Manifest& manifest,
                                                                     const ManifestEntry& entry,
                                                                     const PipelineConfig& cfg,
                                                                     const RegistrationReference* reference) {
    try {
        std::vector<FeatureMap> scales = load_scales(manifest, entry);
        std::vector<AffineTransform> ts;
        for (const auto& t : entry.transforms) ts.push_back(AffineTransform::from_row_major(t));
        if (ts.empty() && cfg.registration) {
            require(reference != nullptr && reference->scales.size() == scales.size(),
                    "registration enabled but no matching reference features are available");
            const std::size_t s = resolve_scale(cfg.register_scale, scales.size());
            require(scales[s].same_shape(reference->scales[s]), "scale shape differs from the registration reference");
            const auto res = register_affine(scales[s], std::span(&reference->scales[s], 1),
                                             make_head(cfg, scales[s].channels()), cfg.registration_cfg);
            ts.push_back(res.transform);
        }
        if (!ts.empty() && !entry.prewarped) {
            const AffineTransform a = composite(ts);
            for (auto& m : scales) m = affine_warp(m, a);
        }
        return {aggregate_multiscale(scales), ts};
    } catch (const Error& ex) {
        throw Error(entry_context(entry) + ex.what());
    }
}

namespace {

struct SupportSplit {
    std::vector<const ManifestEntry*> base;
    std::map<std::string, std::vector<const ManifestEntry*>> augmented;
};

SupportSplit split_supports(const std::vector<const ManifestEntry*>& supports) {
    SupportSplit s;
    for (const auto* e : supports) {
        if (e->is_identity_aug()) s.base.push_back(e);
        else s.augmented[e->augmentation_id].push_back(e);
    }
    require(!s.base.empty(), "manifest has no identity support images");
    return s;
}

std::optional<RegistrationReference> build_reference(const PipelineConfig& cfg, const Manifest& manifest,
                                                     const std::vector<const ManifestEntry*>& base) {
    if (!cfg.registration) return std::nullopt;
    std::vector<std::vector<FeatureMap>> per_scale;
    for (const auto* e : base) {
        auto scales = load_scales(manifest, *e);
        if (per_scale.empty()) per_scale.resize(scales.size());
        require(scales.size() == per_scale.size(), entry_context(*e) + "number of scales differs between supports");
        for (std::size_t s = 0; s < scales.size(); ++s) per_scale[s].push_back(std::move(scales[s]));
    }
    RegistrationReference ref;
    for (auto& maps : per_scale) ref.scales.push_back(accumulate_reference(maps));
    return ref;
}

std::vector<FeatureMap> prepare_all(const PipelineConfig& cfg, const Manifest& manifest,
                                    const std::vector<const ManifestEntry*>& entries,
                                    const RegistrationReference* reference) {
    std::vector<FeatureMap> out;
    out.reserve(entries.size());
    for (const auto* e : entries) out.push_back(prepare_features(manifest, *e, cfg, reference).first);
    return out;
}

GaussianField selection_field(const PipelineConfig& cfg, const PatchFeatureSet& feats,
                              const std::optional<LowRankProjection>& proj) {
    return proj ? fit_lowrank_field(feats, *proj, cfg.epsilon) : fit_gaussian_field(feats, cfg.epsilon);
}

std::optional<LowRankProjection> ortho_projection(const PipelineConfig& cfg, std::size_t D) {
    if (cfg.estimator != EstimatorKind::ortho) return std::nullopt;
    return semi_orthogonal(D, std::min(cfg.d_prime, D), cfg.seeds.projection);
}

AugmentationReport select_from_features(const PipelineConfig& cfg, const std::vector<FeatureMap>& base,
                                        const std::map<std::string, std::vector<FeatureMap>>& augmented) {
    require(base.size() >= 2, "augmentation selection needs at least two support images");
    const PatchFeatureSet base_set = PatchFeatureSet::from_maps(base);
    const auto proj = ortho_projection(cfg, base_set.dim());
    const GaussianField base_field = selection_field(cfg, base_set, proj);
    std::map<std::string, double> weighted;
    for (const auto& [id, maps] : augmented) {
        PatchFeatureSet with_aug = base_set;
        for (const auto& m : maps) with_aug.add_sample(m);
        weighted[id] = weighted_w_sum(base_field, selection_field(cfg, with_aug, proj), cfg.aug_metric);
    }
    return select(weighted);
}

FittedModel fit_estimator(const PipelineConfig& cfg, const PatchFeatureSet& feats) {
    FittedModel m;
    m.kind = cfg.estimator;
    m.grid_h = feats.height();
    m.grid_w = feats.width();
    m.feature_dim = feats.dim();
    switch (cfg.estimator) {
    case EstimatorKind::padim: m.field = fit_gaussian_field(feats, cfg.epsilon); break;
    case EstimatorKind::ortho: m.field = fit_lowrank_field(feats, *ortho_projection(cfg, feats.dim()), cfg.epsilon); break;
    case EstimatorKind::patchcore: m.bank = build_memory_bank(feats, cfg.gamma, cfg.proj_dim, cfg.seeds.coreset); break;
    }
    return m;
}

} // namespace

json augmentation_report_json(const AugmentationReport& r, DistributionDistance metric) {
    json augs = json::object();
    for (const auto& [id, e] : r.entries) augs[id] = {{"weighted_distance", e.weighted_distance}, {"kept", e.kept}};
    return {{"metric", to_string(metric)}, {"threshold", r.threshold}, {"augmentations", augs}, {"kept", r.kept()}};
}

AugmentationReport augmentation_report_from_json(const json& j) {
    try {
        AugmentationReport r;
        r.threshold = j.at("threshold").get<double>();
        for (const auto& [id, e] : j.at("augmentations").items())
            r.entries[id] = {e.at("weighted_distance").get<double>(), e.at("kept").get<bool>()};
        return r;
    } catch (const json::exception& ex) {
        throw Error(std::string("augmentation report: ") + ex.what());
    }
}

AugmentationReport select_augmentations(const PipelineConfig& cfg, const Manifest& manifest,
                                        const std::vector<const ManifestEntry*>& supports) {
    const SupportSplit split = split_supports(supports);
    const auto reference = build_reference(cfg, manifest, split.base);
    const RegistrationReference* ref = reference ? &*reference : nullptr;
    const auto base = prepare_all(cfg, manifest, split.base, ref);
    std::map<std::string, std::vector<FeatureMap>> augmented;
    for (const auto& [id, entries] : split.augmented) augmented[id] = prepare_all(cfg, manifest, entries, ref);
    if (augmented.empty()) return select({{"identity", 0.0}});
    return select_from_features(cfg, base, augmented);
}

FitOutcome fit(const PipelineConfig& cfg, const Manifest& manifest, const std::vector<const ManifestEntry*>& supports) {
    cfg.validate();
    const auto t0 = std::chrono::steady_clock::now();
    const SupportSplit split = split_supports(supports);

    FitOutcome out;
    out.reference = build_reference(cfg, manifest, split.base);
    const RegistrationReference* ref = out.reference ? &*out.reference : nullptr;
    const auto base = prepare_all(cfg, manifest, split.base, ref);
    std::map<std::string, std::vector<FeatureMap>> augmented;
    for (const auto& [id, entries] : split.augmented) augmented[id] = prepare_all(cfg, manifest, entries, ref);

    AugGating gating = cfg.aug_gating;
    std::string gating_note;
    std::vector<std::string> kept;
    if (!augmented.empty()) {
        if (gating == AugGating::selected) {
            if (cfg.aug_report) {
                out.augmentation = augmentation_report_from_json(read_json_file(*cfg.aug_report));
            } else if (base.size() >= 2) {
                out.augmentation = select_from_features(cfg, base, augmented);
            } else {
                gating = AugGating::none;
                gating_note = "selection needs two identity supports; augmentations skipped";
            }
            if (out.augmentation) kept = out.augmentation->kept();
        } else if (gating == AugGating::all) {
            for (const auto& [id, maps] : augmented) kept.push_back(id);
        }
    }

    std::vector<FeatureMap> train = base;
    for (const auto& id : kept) {
        const auto it = augmented.find(id);
        if (it == augmented.end()) continue; // report may list ids absent from this support set
        train.insert(train.end(), it->second.begin(), it->second.end());
    }
    const PatchFeatureSet feats = PatchFeatureSet::from_maps(train);
    out.model = fit_estimator(cfg, feats);
    out.fit_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    // support self-scores calibrate the default FPR threshold
    const LoadedModel lm = make_loaded(out.model, out.reference);
    std::vector<double> self_scores;
    for (const auto* e : split.base) self_scores.push_back(score_entry(lm, cfg, manifest, *e).image_score);
    out.support_max_score = *std::max_element(self_scores.begin(), self_scores.end());

    json r;
    r["estimator"] = to_string(cfg.estimator);
    r["support_images"] = split.base.size();
    r["training_samples"] = feats.samples();
    r["feature_dim"] = feats.dim();
    r["grid"] = {feats.height(), feats.width()};
    r["aug_gating"] = gating_name(gating);
    if (!gating_note.empty()) r["aug_gating_note"] = gating_note;
    r["augmentations_available"] = json::array();
    for (const auto& [id, maps] : augmented) r["augmentations_available"].push_back(id);
    r["augmentations_used"] = kept;
    if (out.augmentation) r["augmentation_report"] = augmentation_report_json(*out.augmentation, cfg.aug_metric);
    if (out.model.field && out.model.field->projection) r["d_prime"] = out.model.field->dim;
    if (out.model.bank) r["memory_bank_size"] = out.model.bank->size();
    r["support_self_scores"] = self_scores;
    r["support_max_score"] = out.support_max_score;
    r["registration"] = cfg.registration;
    out.report = std::move(r);
    return out;
}

ScoredImage score_entry(const LoadedModel& lm, const PipelineConfig& cfg, const Manifest& manifest,
                        const ManifestEntry& entry) {
    const RegistrationReference* ref = lm.reference ? &*lm.reference : nullptr;
    auto [agg, ts] = prepare_features(manifest, entry, cfg, ref);
    try {
        require(agg.height() == lm.model.grid_h && agg.width() == lm.model.grid_w,
                "feature grid " + std::to_string(agg.height()) + "x" + std::to_string(agg.width()) +
                    " does not match model grid " + std::to_string(lm.model.grid_h) + "x" +
                    std::to_string(lm.model.grid_w));
        require(agg.channels() == lm.model.feature_dim, "feature dimension " + std::to_string(agg.channels()) +
                                                            " does not match model dimension " +
                                                            std::to_string(lm.model.feature_dim));
        PatchFeatureSet fs;
        fs.add_sample(agg);

        ScoredImage out;
        out.image_id = entry.image_id;
        out.label = entry.label;
        if (entry.pixel_mask_file) out.mask = read_mask_png(manifest.resolve(*entry.pixel_mask_file));

        FeatureMap grid;
        double reweight = 1.0;
        if (lm.model.kind == EstimatorKind::patchcore) {
            auto knn = knn_score(fs, *lm.model.bank, cfg.b_neighbors);
            grid = std::move(knn.grid);
            reweight = knn.reweight;
        } else {
            grid = lm.scorer->score(fs);
        }
        std::size_t oh = grid.height(), ow = grid.width();
        if (out.mask) {
            oh = out.mask->height;
            ow = out.mask->width;
        } else if (cfg.output_size[0] > 0 && cfg.output_size[1] > 0) {
            oh = cfg.output_size[0];
            ow = cfg.output_size[1];
        }
        out.map = assemble(grid, ts, oh, ow, cfg.smooth_sigma);
        out.image_score = reweight * out.map.image_score;
        return out;
    } catch (const Error& ex) {
        throw Error(entry_context(entry) + ex.what());
    }
}

namespace {

struct RunSpec {
    std::string name;
    std::vector<const ManifestEntry*> supports;
};

std::vector<RunSpec> plan_runs(const PipelineConfig& cfg, const Manifest& manifest) {
    const auto supports = manifest.supports();
    std::vector<RunSpec> runs;
    if (cfg.runs > 0) {
        std::vector<const ManifestEntry*> pool;
        for (const auto* e : supports)
            if (e->is_identity_aug()) pool.push_back(e);
        require(cfg.k_shot <= pool.size(), "k_shot " + std::to_string(cfg.k_shot) + " exceeds the " +
                                               std::to_string(pool.size()) + " identity support images");
        for (std::size_t r = 0; r < cfg.runs; ++r) {
            std::mt19937_64 rng(cfg.seeds.support_draw + r);
            std::vector<std::size_t> idx(pool.size());
            for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
            // partial Fisher-Yates with an explicit draw keeps the order platform-independent
            for (std::size_t i = 0; i < cfg.k_shot; ++i) {
                const std::size_t j = i + static_cast<std::size_t>(rng() % (idx.size() - i));
                std::swap(idx[i], idx[j]);
            }
            std::sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(cfg.k_shot));
            RunSpec spec{"draw_" + std::to_string(r), {}};
            std::set<std::string> chosen;
            for (std::size_t i = 0; i < cfg.k_shot; ++i) {
                spec.supports.push_back(pool[idx[i]]);
                chosen.insert(pool[idx[i]]->image_id);
            }
            for (const auto* e : supports)
                if (!e->is_identity_aug() && (!e->source_id || chosen.count(*e->source_id))) spec.supports.push_back(e);
            runs.push_back(std::move(spec));
        }
        return runs;
    }
    std::map<int, std::vector<const ManifestEntry*>> by_run;
    for (const auto* e : supports) by_run[e->run].push_back(e);
    require(!by_run.empty(), "manifest has no support images");
    for (auto& [id, entries] : by_run) runs.push_back({"run_" + std::to_string(id), std::move(entries)});
    return runs;
}

json nullable(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

json summarize(const std::vector<std::optional<double>>& values) {
    std::vector<double> present;
    for (const auto& v : values)
        if (v) present.push_back(*v);
    if (present.empty()) return {{"mean", nullptr}, {"sd", nullptr}, {"n", 0}};
    const MeanSd ms = mean_sd(present);
    return {{"mean", ms.mean}, {"sd", ms.sd}, {"n", present.size()}};
}

struct RunMetrics {
    json row;
    std::optional<double> image_auc, pixel_auc, fpr;
    double fit_seconds = 0.0;
};

RunMetrics evaluate_run(const PipelineConfig& cfg, const Manifest& manifest, const LoadedModel& lm,
                        double support_max_score, const std::string& name) {
    RunMetrics out;
    LabeledScores image, pixel;
    pixel.granularity = Granularity::pixel;
    bool pixel_ok = true;
    json images = json::array();
    for (const auto* e : manifest.tests()) {
        const ScoredImage s = score_entry(lm, cfg, manifest, *e);
        image.add(s.image_score, s.label);
        images.push_back({{"image_id", s.image_id}, {"label", s.label}, {"image_score", s.image_score}});
        const auto& fin = s.map.final.data();
        if (s.mask) {
            for (std::size_t i = 0; i < fin.size(); ++i) pixel.add(fin[i], s.mask->values[i]);
        } else if (s.label == 0) {
            for (double v : fin) pixel.add(v, 0);
        } else {
            pixel_ok = false;
        }
    }
    const double threshold = cfg.fpr_threshold.value_or(support_max_score);
    auto has_both = [](const LabeledScores& l) {
        return std::find(l.labels.begin(), l.labels.end(), 0) != l.labels.end() &&
               std::find(l.labels.begin(), l.labels.end(), 1) != l.labels.end();
    };
    if (has_both(image)) out.image_auc = roc_auc(image);
    if (pixel_ok && has_both(pixel)) out.pixel_auc = roc_auc(pixel);
    if (std::find(image.labels.begin(), image.labels.end(), 0) != image.labels.end())
        out.fpr = fpr_at(image, threshold);
    out.row = {{"name", name},
               {"image_auc", nullable(out.image_auc)},
               {"pixel_auc", nullable(out.pixel_auc)},
               {"fpr", nullable(out.fpr)},
               {"fpr_threshold", threshold},
               {"support_max_score", support_max_score},
               {"images", images}};
    return out;
}

} // namespace

RunReport run_report(const PipelineConfig& cfg, const Manifest& manifest,
                     const std::optional<std::filesystem::path>& model_path) {
    cfg.validate();
    std::vector<RunMetrics> runs;
    std::size_t K = 0;
    std::optional<FittedModel> shape_source;

    if (model_path) {
        LoadedModel lm = load_fit(*model_path);
        require(lm.model.kind == cfg.estimator, "model estimator '" + to_string(lm.model.kind) +
                                                    "' does not match config estimator '" + to_string(cfg.estimator) + "'");
        const double smax = lm.meta.value("fit", json::object()).value("support_max_score", 0.0);
        K = lm.meta.value("fit", json::object()).value("training_samples", std::size_t{0});
        auto m = evaluate_run(cfg, manifest, lm, smax, "model");
        const auto timing_path = with_suffix(*model_path, ".timing.json");
        if (std::filesystem::exists(timing_path)) m.fit_seconds = read_json_file(timing_path).value("fit_seconds", 0.0);
        shape_source = lm.model;
        runs.push_back(std::move(m));
    } else {
        for (const auto& spec : plan_runs(cfg, manifest)) {
            const FitOutcome f = fit(cfg, manifest, spec.supports);
            const LoadedModel lm = make_loaded(f.model, f.reference);
            auto m = evaluate_run(cfg, manifest, lm, f.support_max_score, spec.name);
            m.fit_seconds = f.fit_seconds;
            m.row["training_samples"] = f.report["training_samples"];
            m.row["augmentations_used"] = f.report["augmentations_used"];
            K = f.report["training_samples"].get<std::size_t>();
            shape_source = f.model;
            runs.push_back(std::move(m));
        }
    }

    RunReport out;
    json rows = json::array(), fit_times = json::array();
    std::vector<std::optional<double>> img, pix, fpr;
    for (auto& r : runs) {
        rows.push_back(r.row);
        fit_times.push_back({{"name", r.row["name"]}, {"fit_seconds", r.fit_seconds}});
        img.push_back(r.image_auc);
        pix.push_back(r.pixel_auc);
        fpr.push_back(r.fpr);
    }
    const FittedModel& fm = *shape_source;
    const std::size_t dp = fm.field && fm.field->projection ? fm.field->dim : std::min(cfg.d_prime, fm.feature_dim);
    const auto cx = complexity_report(fm.kind, fm.feature_dim, dp, std::max<std::size_t>(K, 1), fm.grid_h, fm.grid_w,
                                      cfg.gamma);
    out.report = {{"schema_version", 1},
                  {"estimator", to_string(cfg.estimator)},
                  {"runs", rows},
                  {"summary", {{"image_auc", summarize(img)}, {"pixel_auc", summarize(pix)}, {"fpr", summarize(fpr)}}},
                  {"complexity",
                   {{"D", fm.feature_dim},
                    {"D_prime", dp},
                    {"K", K},
                    {"H", fm.grid_h},
                    {"W", fm.grid_w},
                    {"gamma", cfg.gamma},
                    {"memory_floats", cx.memory_floats},
                    {"inference_order", cx.inference_order}}}};
    out.timing = {{"runs", fit_times}};
    return out;
}

void save_fit(const std::filesystem::path& model_path, const FitOutcome& f, const PipelineConfig& cfg) {
    if (model_path.has_parent_path()) std::filesystem::create_directories(model_path.parent_path());
    write_model(model_path, f.model);
    json meta;
    meta["format"] = "CADN";
    meta["estimator"] = to_string(f.model.kind);
    meta["epsilon"] = cfg.epsilon;
    meta["gamma"] = cfg.gamma;
    meta["d_prime"] = f.model.field && f.model.field->projection ? f.model.field->dim : 0;
    meta["proj_dim"] = cfg.proj_dim;
    meta["seeds"] = cfg.to_json()["seeds"];
    meta["config"] = cfg.to_json();
    meta["fit"] = f.report;
    meta["reference_scales"] = json::array();
    if (f.reference) {
        for (std::size_t s = 0; s < f.reference->scales.size(); ++s) {
            const auto p = with_suffix(model_path, ".ref" + std::to_string(s) + ".carg");
            write_feature_file(p, f.reference->scales[s]);
            meta["reference_scales"].push_back(p.filename().string());
        }
    }
    write_json_file(with_suffix(model_path, ".json"), meta);
    write_json_file(with_suffix(model_path, ".timing.json"), {{"fit_seconds", f.fit_seconds}});
}

LoadedModel load_fit(const std::filesystem::path& model_path) {
    FittedModel model = read_model(model_path);
    json meta = json::object();
    std::optional<RegistrationReference> reference;
    const auto meta_path = with_suffix(model_path, ".json");
    if (std::filesystem::exists(meta_path)) {
        meta = read_json_file(meta_path);
        if (meta.contains("reference_scales") && !meta["reference_scales"].empty()) {
            RegistrationReference ref;
            for (const auto& name : meta["reference_scales"])
                ref.scales.push_back(read_feature_file(model_path.parent_path() / name.get<std::string>()));
            reference = std::move(ref);
        }
    }
    return make_loaded(std::move(model), std::move(reference), std::move(meta));
}

void cmd_fit(const PipelineConfig& cfg, const std::filesystem::path& manifest_path,
             const std::filesystem::path& model_out) {
    const Manifest manifest = Manifest::load(manifest_path);
    const FitOutcome f = fit(cfg, manifest, manifest.supports());
    save_fit(model_out, f, cfg);
}

json cmd_score(const PipelineConfig& cfg, const std::filesystem::path& model_path,
               const std::filesystem::path& manifest_path, const std::filesystem::path& out_dir) {
    const LoadedModel lm = load_fit(model_path);
    require(lm.model.kind == cfg.estimator, "model estimator '" + to_string(lm.model.kind) +
                                                "' does not match config estimator '" + to_string(cfg.estimator) + "'");
    const Manifest manifest = Manifest::load(manifest_path);
    std::filesystem::create_directories(out_dir);
    json images = json::array();
    for (const auto* e : manifest.tests()) {
        const ScoredImage s = score_entry(lm, cfg, manifest, *e);
        export_anomaly_map(out_dir / s.image_id, s.map);
        images.push_back({{"image_id", s.image_id},
                          {"label", s.label},
                          {"image_score", s.image_score},
                          {"max_score", s.map.image_score},
                          {"map", s.image_id + ".png"}});
    }
    json out{{"estimator", to_string(lm.model.kind)}, {"images", images}};
    write_json_file(out_dir / "scores.json", out);
    return out;
}

json cmd_eval(const PipelineConfig& cfg, const std::filesystem::path& manifest_path,
              const std::optional<std::filesystem::path>& model, const std::filesystem::path& report_out,
              const std::optional<std::filesystem::path>& csv_out) {
    const Manifest manifest = Manifest::load(manifest_path);
    const RunReport r = run_report(cfg, manifest, model);
    write_json_file(report_out, r.report);
    write_json_file(with_suffix(report_out, ".timing.json"), r.timing);
    if (csv_out) {
        std::ofstream csv(*csv_out, std::ios::trunc);
        if (!csv) throw Error("cannot write '" + csv_out->string() + "'");
        const auto& s = r.report["summary"];
        auto cell = [](const json& v) {
            if (v.is_null()) return std::string("");
            std::ostringstream os;
            os.precision(4);
            os << std::fixed << 100.0 * v.get<double>();
            return os.str();
        };
        const std::string category = std::filesystem::absolute(manifest_path).parent_path().filename().string();
        csv << "category,estimator,K,image_auc,image_auc_sd,pixel_auc,pixel_auc_sd,fpr\n";
        csv << category << ',' << r.report["estimator"].get<std::string>() << ',' << r.report["complexity"]["K"] << ','
            << cell(s["image_auc"]["mean"]) << ',' << cell(s["image_auc"]["sd"]) << ',' << cell(s["pixel_auc"]["mean"])
            << ',' << cell(s["pixel_auc"]["sd"]) << ',' << cell(s["fpr"]["mean"]) << '\n';
    }
    json full = r.report;
    full["timing"] = r.timing;
    return full;
}

json cmd_select_aug(const PipelineConfig& cfg, const std::filesystem::path& manifest_path,
                    const std::filesystem::path& report_out) {
    const Manifest manifest = Manifest::load(manifest_path);
    const AugmentationReport r = select_augmentations(cfg, manifest, manifest.supports());
    const json j = augmentation_report_json(r, cfg.aug_metric);
    write_json_file(report_out, j);
    return j;
}

json cmd_register(const PipelineConfig& cfg, const std::filesystem::path& manifest_path,
                  const std::filesystem::path& manifest_out) {
    Manifest manifest = Manifest::load(manifest_path);
    std::vector<const ManifestEntry*> base;
    for (const auto* e : manifest.supports())
        if (e->is_identity_aug()) base.push_back(e);
    require(!base.empty(), "manifest has no identity support images");
    PipelineConfig reg_cfg = cfg;
    reg_cfg.registration = true;
    const auto reference = build_reference(reg_cfg, manifest, base);

    json rows = json::array();
    for (auto& e : manifest.entries) {
        const auto scales = load_scales(manifest, e);
        require(scales.size() == reference->scales.size(), entry_context(e) + "number of scales differs from supports");
        const std::size_t s = resolve_scale(cfg.register_scale, scales.size());
        RegistrationResult res;
        try {
            require(scales[s].same_shape(reference->scales[s]), "scale shape differs from the registration reference");
            res = register_affine(scales[s], std::span(&reference->scales[s], 1), make_head(cfg, scales[s].channels()),
                                  cfg.registration_cfg);
        } catch (const Error& ex) {
            throw Error(entry_context(e) + ex.what());
        }
        e.transforms = {res.transform.row_major()};
        e.prewarped = false;
        const auto theta = res.transform.row_major();
        rows.push_back({{"image_id", e.image_id},
                        {"theta", std::vector<double>(theta.begin(), theta.end())},
                        {"angle_deg", res.transform.angle() * 180.0 / M_PI},
                        {"final_loss", res.final_loss},
                        {"iterations", res.iterations}});
    }

    // keep file references valid from the output manifest's directory
    const auto out_dir = std::filesystem::absolute(manifest_out).parent_path();
    auto rebase = [&](const std::string& f) {
        const auto abs = std::filesystem::absolute(manifest.resolve(f));
        const auto rel = std::filesystem::relative(abs, out_dir);
        return rel.empty() ? abs.string() : rel.string();
    };
    for (auto& e : manifest.entries) {
        for (auto& f : e.scale_files) f = rebase(f);
        if (e.pixel_mask_file) e.pixel_mask_file = rebase(*e.pixel_mask_file);
    }
    manifest.base_dir = out_dir;
    std::filesystem::create_directories(out_dir);
    manifest.save(manifest_out);
    return {{"images", rows}};
}

json cmd_bench(std::size_t D, std::size_t Dp, std::size_t K, std::size_t H, std::size_t W, double gamma) {
    json rows = json::array();
    for (auto kind : {EstimatorKind::padim, EstimatorKind::ortho, EstimatorKind::patchcore}) {
        const auto r = complexity_report(kind, D, Dp, K, H, W, gamma);
        rows.push_back({{"estimator", to_string(kind)},
                        {"memory_floats", r.memory_floats},
                        {"inference_order", r.inference_order}});
    }
    return {{"D", D}, {"D_prime", Dp}, {"K", K}, {"H", H}, {"W", W}, {"gamma", gamma}, {"estimators", rows}};
}

} // namespace fsad
