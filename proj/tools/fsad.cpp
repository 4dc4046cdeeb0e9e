// fsad: few-shot anomaly detection on exported patch features.
//
// Every subcommand takes an optional JSON config (--config) whose fields can be
// overridden by flags.  FSAD_LOG_LEVEL (quiet|info|debug) controls stderr
// chatter; it never changes results.

#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"

#include "fsad/error.hpp"
#include "fsad/pipeline.hpp"
#include "fsad/synthetic.hpp"

namespace {

enum class LogLevel { quiet, info, debug };

LogLevel log_level() {
    const char* v = std::getenv("FSAD_LOG_LEVEL");
    if (!v) return LogLevel::info;
    const std::string s(v);
    if (s == "quiet" || s == "error") return LogLevel::quiet;
    if (s == "debug") return LogLevel::debug;
    return LogLevel::info;
}

void log_info(const std::string& msg) {
    if (log_level() != LogLevel::quiet) std::cerr << "fsad: " << msg << '\n';
}

struct Overrides {
    std::string config;
    std::optional<std::string> estimator;
    std::optional<double> epsilon, gamma, smooth_sigma, fpr_threshold;
    std::optional<std::size_t> d_prime, proj_dim, b_neighbors, runs, k_shot;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> aug_gating, aug_metric, aug_report;
    std::optional<bool> registration;

    void attach(CLI::App* app) {
        app->add_option("--config", config, "JSON pipeline config (defaults apply when omitted)");
        app->add_option("--estimator", estimator, "padim | ortho | patchcore [padim]");
        app->add_option("--epsilon", epsilon, "covariance regularizer [0.01]");
        app->add_option("--d-prime", d_prime, "low-rank dimension for ortho, clamped to D [100]");
        app->add_option("--gamma", gamma, "coreset proportion for patchcore [0.1]");
        app->add_option("--proj-dim", proj_dim, "coreset projection dimension [128]");
        app->add_option("--neighbors", b_neighbors, "re-weight neighbourhood size [3]");
        app->add_option("--smooth-sigma", smooth_sigma, "Gaussian smoothing of final maps, pixels [0]");
        app->add_option("--seed", seed, "sets every seed in the config");
        app->add_option("--aug-gating", aug_gating, "all | selected | none [selected]");
        app->add_option("--aug-metric", aug_metric, "wasserstein | kl | js [wasserstein]");
        app->add_option("--aug-report", aug_report, "reuse a select-aug report");
        app->add_flag("--registration,!--no-registration", registration, "register features to the support reference");
        app->add_option("--fpr-threshold", fpr_threshold, "image threshold for FPR [max support self-score]");
        app->add_option("--runs", runs, "number of random support draws [0: use manifest run field]");
        app->add_option("--k-shot", k_shot, "support images per draw");
    }

    fsad::PipelineConfig resolve() const {
        fsad::PipelineConfig c = config.empty() ? fsad::PipelineConfig{} : fsad::PipelineConfig::load(config);
        nlohmann::json j = c.to_json();
        if (estimator) j["estimator"] = *estimator;
        if (epsilon) j["epsilon"] = *epsilon;
        if (d_prime) j["d_prime"] = *d_prime;
        if (gamma) j["gamma"] = *gamma;
        if (proj_dim) j["proj_dim"] = *proj_dim;
        if (b_neighbors) j["b_neighbors"] = *b_neighbors;
        if (smooth_sigma) j["smooth_sigma"] = *smooth_sigma;
        if (seed)
            for (auto& [k, v] : j["seeds"].items()) v = *seed;
        if (aug_gating) j["aug_gating"] = *aug_gating;
        if (aug_metric) j["aug_metric"] = *aug_metric;
        if (aug_report) j["aug_report"] = *aug_report;
        if (registration) j["registration"]["enabled"] = *registration;
        if (fpr_threshold) j["fpr_threshold"] = *fpr_threshold;
        if (runs) j["runs"] = *runs;
        if (k_shot) j["k_shot"] = *k_shot;
        return fsad::PipelineConfig::from_json(j);
    }
};

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Few-shot anomaly detection on exported patch features"};
    app.require_subcommand(1);

    Overrides fit_o, score_o, eval_o, sel_o, reg_o;
    std::string manifest, out, model, report, csv;

    auto* fit = app.add_subcommand("fit", "fit an estimator on the manifest's support images");
    fit_o.attach(fit);
    fit->add_option("--manifest", manifest, "manifest.json")->required();
    fit->add_option("--out", out, "model artifact path")->required();

    auto* score = app.add_subcommand("score", "score the manifest's test images");
    score_o.attach(score);
    score->add_option("--model", model, "model artifact from fit")->required();
    score->add_option("--manifest", manifest, "manifest.json")->required();
    score->add_option("--out", out, "output directory for maps and scores.json")->required();

    auto* eval = app.add_subcommand("eval", "fit per run, score and report AUC, FPR and complexity");
    eval_o.attach(eval);
    eval->add_option("--manifest", manifest, "manifest.json")->required();
    eval->add_option("--model", model, "evaluate this artifact instead of fitting");
    eval->add_option("--report", report, "report JSON path")->required();
    eval->add_option("--csv", csv, "optional one-row CSV summary (percent)");

    auto* sel = app.add_subcommand("select-aug", "rank support augmentations by distribution distance");
    sel_o.attach(sel);
    sel->add_option("--manifest", manifest, "manifest.json")->required();
    sel->add_option("--out", out, "report JSON path")->required();

    auto* reg = app.add_subcommand("register", "estimate affine transforms against the support reference");
    reg_o.attach(reg);
    reg->add_option("--manifest", manifest, "manifest.json")->required();
    reg->add_option("--out", out, "output manifest with recovered transforms")->required();

    std::size_t D = 448, Dp = 100, K = 2, H = 56, W = 56;
    double gamma = 0.1;
    auto* bench = app.add_subcommand("bench", "print memory and inference complexity of each estimator");
    bench->add_option("--dim", D, "feature dimension D")->capture_default_str();
    bench->add_option("--d-prime", Dp, "low-rank dimension D'")->capture_default_str();
    bench->add_option("--k", K, "support images K")->capture_default_str();
    bench->add_option("--height", H, "grid height")->capture_default_str();
    bench->add_option("--width", W, "grid width")->capture_default_str();
    bench->add_option("--gamma", gamma, "coreset proportion")->capture_default_str();

    fsad::synthetic::DatasetSpec ds;
    std::string synth_kind = "dataset";
    double degrees = 10.0;
    auto* synth = app.add_subcommand("synth", "write a synthetic feature dataset");
    synth->add_option("--kind", synth_kind, "dataset | rotation")->capture_default_str();
    synth->add_option("--out", out, "output directory")->required();
    synth->add_option("--seed", ds.seed, "generator seed")->capture_default_str();
    synth->add_option("--support", ds.support, "support images")->capture_default_str();
    synth->add_option("--test-normal", ds.test_normal, "normal test images")->capture_default_str();
    synth->add_option("--test-anomalous", ds.test_anomalous, "anomalous test images")->capture_default_str();
    synth->add_option("--augs", ds.augmentations, "augmentations of support images (hflip, vflip, jitter)");
    synth->add_option("--degrees", degrees, "rotation of the test map (rotation kind)")->capture_default_str();

    CLI11_PARSE(app, argc, argv);

    try {
        if (fit->parsed()) {
            fsad::cmd_fit(fit_o.resolve(), manifest, out);
            log_info("wrote " + out);
        } else if (score->parsed()) {
            const auto j = fsad::cmd_score(score_o.resolve(), model, manifest, out);
            log_info("scored " + std::to_string(j["images"].size()) + " images into " + out);
        } else if (eval->parsed()) {
            const auto j = fsad::cmd_eval(eval_o.resolve(), manifest,
                                          model.empty() ? std::nullopt : std::optional<std::filesystem::path>(model),
                                          report, csv.empty() ? std::nullopt : std::optional<std::filesystem::path>(csv));
            std::cout << j["summary"].dump(2) << '\n';
        } else if (sel->parsed()) {
            std::cout << fsad::cmd_select_aug(sel_o.resolve(), manifest, out).dump(2) << '\n';
        } else if (reg->parsed()) {
            std::cout << fsad::cmd_register(reg_o.resolve(), manifest, out).dump(2) << '\n';
        } else if (bench->parsed()) {
            std::cout << fsad::cmd_bench(D, Dp, K, H, W, gamma).dump(2) << '\n';
        } else if (synth->parsed()) {
            const auto path = synth_kind == "rotation" ? fsad::synthetic::write_rotation_fixture(out, degrees, ds.seed)
                              : synth_kind == "dataset"
                                  ? fsad::synthetic::write_dataset(out, ds)
                                  : throw fsad::Error("--kind must be dataset or rotation");
            log_info("wrote " + path.string());
        }
    } catch (const std::exception& ex) {
        std::cerr << "fsad: error: " << ex.what() << '\n';
        return 1;
    }
    return 0;
}
