// Acceptance gate: one PASS/FAIL line per criterion, nonzero exit on any FAIL.
// Tolerances and runtime budgets are fixed here and must not be loosened.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <numbers>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "fsad/augselect.hpp"
#include "fsad/error.hpp"
#include "fsad/evaluation.hpp"
#include "fsad/pipeline.hpp"
#include "fsad/synthetic.hpp"
#include "oracles.hpp"

using namespace fsad;

namespace {

struct Outcome {
    bool pass = true;
    std::string detail;
};

// Accumulates failures; the first few messages end up in the report line.
struct Checker {
    int failures = 0;
    std::ostringstream msg;
    void operator()(bool ok, const std::string& what) {
        if (ok) return;
        if (failures++ < 3) msg << what << "; ";
    }
    Outcome outcome(const std::string& ok_detail) const {
        return failures == 0 ? Outcome{true, ok_detail} : Outcome{false, std::to_string(failures) + " failures: " + msg.str()};
    }
};

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.3g", v);
    return buf;
}

PatchFeatureSet one_position(const std::vector<Eigen::VectorXd>& vs) {
    PatchFeatureSet s;
    for (const auto& v : vs)
        s.add_sample(FeatureMap(static_cast<std::size_t>(v.size()), 1, 1, std::vector<double>(v.data(), v.data() + v.size())));
    return s;
}

Eigen::VectorXd randvec(Eigen::Index n, std::mt19937_64& rng) {
    std::normal_distribution<double> g;
    Eigen::VectorXd v(n);
    for (Eigen::Index i = 0; i < n; ++i) v(i) = g(rng);
    return v;
}

GaussianField single_field(const Eigen::VectorXd& mu, const Eigen::MatrixXd& S) {
    GaussianField f;
    f.height = f.width = 1;
    f.dim = static_cast<std::size_t>(mu.size());
    f.means = {mu};
    f.covariances = {S};
    return f;
}

PatchFeatureSet single_vector(const Eigen::VectorXd& v) { return one_position({v}); }

Outcome gaussian_fit() {
    Checker c;
    const Eigen::Vector3d mu(1.0, -2.0, 0.5);
    Eigen::Matrix3d S;
    S << 2.0, 0.6, -0.3, 0.6, 1.0, 0.2, -0.3, 0.2, 0.5;
    const Eigen::Matrix3d L = S.llt().matrixL();
    std::mt19937_64 rng(2024);
    std::vector<Eigen::VectorXd> xs;
    for (int i = 0; i < 10000; ++i) xs.push_back(mu + L * randvec(3, rng));
    const GaussianField f = fit_gaussian_field(one_position(xs), 0.0);
    const double emu = (f.means[0] - mu).norm() / mu.norm();
    const double es = (f.covariances[0] - S).norm() / S.norm();
    c(emu < 0.05, "mean rel err " + fmt(emu));
    c(es < 0.05, "cov rel err " + fmt(es));

    // K = 2 hand case, exact in binary floating point
    const GaussianField h = fit_gaussian_field(one_position({Eigen::Vector3d(1, 2, 3), Eigen::Vector3d(3, 6, 5)}), 0.5);
    Eigen::Matrix3d expect;
    expect << 2.5, 4, 2, 4, 8.5, 4, 2, 4, 2.5;
    c(h.means[0] == Eigen::Vector3d(2, 4, 4), "K=2 mean");
    c(h.covariances[0] == expect, "K=2 covariance");
    return c.outcome("mu err " + fmt(emu) + ", Sigma err " + fmt(es));
}

Outcome mahalanobis() {
    Checker c;
    std::mt19937_64 rng(7);
    double worst = 0.0, worst_inv = 0.0, worst_ortho = 0.0;
    for (int k = 0; k < 100; ++k) {
        const std::size_t n = 2 + static_cast<std::size_t>(k % 9);
        const Eigen::MatrixXd S = oracle::random_spd(n, rng);
        const Eigen::VectorXd mu = randvec(static_cast<Eigen::Index>(n), rng), f = randvec(static_cast<Eigen::Index>(n), rng);
        const double d = MahalanobisScorer(single_field(mu, S)).distance(0, f);
        worst = std::max(worst, std::abs(d - oracle::mahalanobis(f, mu, S)));
        const Eigen::MatrixXd Q = oracle::random_orthogonal(n, rng);
        const double dq = MahalanobisScorer(single_field(Q * mu, Q * S * Q.transpose())).distance(0, Q * f);
        worst_inv = std::max(worst_inv, std::abs(d - dq));
    }
    c(worst < 1e-8, "solve oracle diff " + fmt(worst));
    c(worst_inv < 1e-8, "orthogonal invariance diff " + fmt(worst_inv));

    PatchFeatureSet train, test;
    std::normal_distribution<double> g;
    for (int k = 0; k < 12; ++k) {
        FeatureMap m(6, 3, 3);
        for (double& v : m.data()) v = g(rng);
        train.add_sample(m);
    }
    FeatureMap t(6, 3, 3);
    for (double& v : t.data()) v = 2.0 * g(rng);
    test.add_sample(t);
    const FeatureMap full = MahalanobisScorer(fit_gaussian_field(train, 0.01)).score(test);
    const FeatureMap low = MahalanobisScorer(fit_lowrank_field(train, semi_orthogonal(6, 6, 3), 0.01)).score(test);
    for (std::size_t i = 0; i < full.data().size(); ++i)
        worst_ortho = std::max(worst_ortho, std::abs(full.data()[i] - low.data()[i]));
    c(worst_ortho < 1e-6, "square ortho vs full " + fmt(worst_ortho));
    return c.outcome("solve " + fmt(worst) + ", invariance " + fmt(worst_inv) + ", ortho " + fmt(worst_ortho));
}

Outcome coreset() {
    Checker c;
    std::mt19937_64 rng(11);
    std::uniform_int_distribution<int> size(5, 50), dim(1, 12);
    for (int k = 0; k < 20; ++k) {
        const int n = size(rng), d = dim(rng);
        MemoryBank b;
        b.items.resize(d, n);
        for (int j = 0; j < n; ++j) b.items.col(j) = randvec(d, rng);
        const std::size_t l = 1 + static_cast<std::size_t>(rng() % static_cast<std::uint64_t>(n));
        // alternate identity psi and a genuine projection
        const std::size_t proj = (k % 2 == 0) ? 128 : std::max(1, d / 2);
        const Eigen::MatrixXd psi = coreset_projection(static_cast<std::size_t>(d), proj, 100 + k);
        const auto got = coreset_sample(b, l, proj, 100 + k).source_index;
        c(got == oracle::greedy_k_center(psi * b.items, l), "bank " + std::to_string(k) + " selection differs");
    }
    for (int k = 0; k < 10; ++k) {
        const int n = size(rng), d = dim(rng);
        MemoryBank b;
        b.items.resize(d, n);
        for (int j = 0; j < n; ++j) b.items.col(j) = randvec(d, rng);
        double prev = std::numeric_limits<double>::infinity();
        for (int l = 1; l <= n; ++l) {
            const double r = oracle::covering_radius(b.items, coreset_sample(b, static_cast<std::size_t>(l), 128, 0).source_index);
            c(r <= prev, "radius increased at l=" + std::to_string(l));
            prev = r;
        }
    }
    return c.outcome("20 banks exact, radius monotone on 10");
}

Outcome knn() {
    Checker c;
    std::mt19937_64 rng(13);
    double worst = 0.0;
    for (int k = 0; k < 10; ++k) {
        MemoryBank b;
        b.items.resize(7, 50);
        for (int j = 0; j < 50; ++j) b.items.col(j) = randvec(7, rng);
        for (int j = 0; j < 50; ++j) c(knn_score(single_vector(b.items.col(j)), b).grid.at(0, 0, 0) == 0.0, "member nonzero");
        for (int t = 0; t < 20; ++t) {
            const Eigen::VectorXd f = randvec(7, rng) * 1.5;
            const auto nn = oracle::brute_nn(b.items, f);
            const double d = knn_score(single_vector(f), b).grid.at(0, 0, 0);
            worst = std::max(worst, std::abs(d - nn.distance) / nn.distance);
            // the reported distance must belong to the brute-force nearest item
            c(std::abs(d - nn.distance) <= 1e-12 * nn.distance, "NN distance mismatch");
        }
    }
    return c.outcome("max rel diff " + fmt(worst));
}

Outcome wasserstein() {
    Checker c;
    std::mt19937_64 rng(17);
    std::uniform_real_distribution<double> u(0.05, 4.0);
    double worst_diag = 0.0, worst_sym = 0.0, worst_rec = 0.0;
    for (int k = 0; k < 100; ++k) {
        const Eigen::Index n = 1 + k % 8;
        const Eigen::VectorXd m1 = randvec(n, rng), m2 = randvec(n, rng);
        Eigen::VectorXd v1(n), v2(n);
        for (Eigen::Index i = 0; i < n; ++i) {
            v1(i) = u(rng);
            v2(i) = u(rng);
        }
        const Eigen::MatrixXd S1 = v1.asDiagonal().toDenseMatrix(), S2 = v2.asDiagonal().toDenseMatrix();
        c(gaussian_w2(m1, S1, m1, S1) == 0.0, "W(a,a) != 0");
        worst_diag = std::max(worst_diag, std::abs(gaussian_w2(m1, S1, m2, S2) - oracle::diagonal_w2(m1, v1, m2, v2)));
    }
    for (int k = 0; k < 50; ++k) {
        const std::size_t n = 2 + static_cast<std::size_t>(k % 6);
        // PSD, rank-deficient every third case
        Eigen::MatrixXd A = oracle::random_spd(n, rng, 0.0), B = oracle::random_spd(n, rng, 0.0);
        if (k % 3 == 0) {
            const Eigen::MatrixXd F = Eigen::MatrixXd::Random(static_cast<Eigen::Index>(n), 1);
            A = F * F.transpose();
        }
        const Eigen::VectorXd m1 = randvec(static_cast<Eigen::Index>(n), rng), m2 = randvec(static_cast<Eigen::Index>(n), rng);
        worst_sym = std::max(worst_sym, std::abs(gaussian_w2(m1, A, m2, B) - gaussian_w2(m2, B, m1, A)));
        c(gaussian_w2(m1, A, m1, A) == 0.0, "W(a,a) != 0 (PSD)");
        const Eigen::MatrixXd R = spd_sqrt(B);
        worst_rec = std::max(worst_rec, (R * R - B).norm());
    }
    c(worst_diag < 1e-8, "diagonal closed form " + fmt(worst_diag));
    c(worst_sym < 1e-8, "symmetry " + fmt(worst_sym));
    c(worst_rec < 1e-7, "sqrt reconstruction " + fmt(worst_rec));
    return c.outcome("diag " + fmt(worst_diag) + ", sym " + fmt(worst_sym) + ", RR-S " + fmt(worst_rec));
}

Outcome augmentation_selection() {
    Checker c;
    std::mt19937_64 rng(19);
    std::uniform_real_distribution<double> u(0.0, 5.0);
    for (int k = 0; k < 20; ++k) {
        const int n = 1 + k % 10;
        std::map<std::string, double> w;
        for (int i = 0; i < n; ++i) w["a" + std::to_string(i)] = u(rng);
        long double sum = 0.0L;
        for (const auto& [id, v] : w) sum += v;
        const double mean = static_cast<double>(sum / n);
        const auto rep = select(w);
        auto argmin = w.begin();
        for (auto it = w.begin(); it != w.end(); ++it) {
            c(rep.entries.at(it->first).kept == (it->second <= mean), "keep/drop mismatch for " + it->first);
            if (it->second < argmin->second) argmin = it;
        }
        c(rep.entries.at(argmin->first).kept, "argmin dropped");
    }
    return c.outcome("20 random vectors");
}

Outcome registration() {
    Checker c;
    const auto t0 = std::chrono::steady_clock::now();
    const FeatureMap m = synthetic::smooth_random_map(5, 11, 13, 3);
    c(affine_warp(m, AffineTransform::identity()) == m, "identity warp not exact");

    double worst_fd = 0.0;
    for (std::uint64_t s = 0; s < 5; ++s) {
        const FeatureMap sm = synthetic::smooth_random_map(1, 8, 8, 40 + s, 1.0);
        std::mt19937_64 rng(s);
        std::uniform_real_distribution<double> jitter(-0.05, 0.05);
        AffineTransform t;
        t.theta << 1 + jitter(rng), jitter(rng), jitter(rng), jitter(rng), 1 + jitter(rng), jitter(rng);
        const auto g = warp_gradient_theta(sm, t);
        const double h = 1e-4;
        for (int k = 0; k < 6; ++k) {
            AffineTransform p = t, q = t;
            p.theta(k / 3, k % 3) += h;
            q.theta(k / 3, k % 3) -= h;
            const FeatureMap fp = affine_warp(sm, p), fq = affine_warp(sm, q);
            for (std::size_t i = 0; i < 64; ++i) {
                if (!oracle::off_grid(t.theta, i / 8, i % 8, 8, 8, 1e-3)) continue;
                const double fd = (fp.data()[i] - fq.data()[i]) / (2 * h);
                const double rel = std::abs(g[i][k] - fd) / std::max(std::abs(fd), 1e-6);
                worst_fd = std::max(worst_fd, rel);
            }
        }
    }
    c(worst_fd < 1e-4, "gradient rel err " + fmt(worst_fd));

    int recovered = 0;
    double worst_angle = 0.0;
    const auto head = RegistrationHead::identity(4);
    for (std::uint64_t s = 0; s < 10; ++s) {
        std::mt19937_64 rng(1000 + s);
        const double alpha = std::uniform_real_distribution<double>(-15.0, 15.0)(rng);
        const FeatureMap moving = synthetic::smooth_random_map(4, 32, 32, 500 + s, 1.0);
        const FeatureMap ref = affine_warp(moving, AffineTransform::rotation(alpha * std::numbers::pi / 180.0));
        const auto r = register_affine(moving, std::span(&ref, 1), head, RegistrationConfig{});
        const double err = std::abs(r.transform.angle() * 180.0 / std::numbers::pi - alpha);
        worst_angle = std::max(worst_angle, err);
        if (err < 2.0 && r.final_loss < -0.95) ++recovered;
    }
    c(recovered >= 9, "recovered " + std::to_string(recovered) + "/10");

    const FeatureMap f = synthetic::smooth_random_map(4, 9, 9, 77);
    const double self = symmetrized_registration_loss(f, std::span(&f, 1), head);
    c(std::abs(self + 1.0) < 1e-9, "self loss " + fmt(self));

    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    c(secs < 60.0, "runtime " + fmt(secs) + " s");
    return c.outcome("grad " + fmt(worst_fd) + ", recovered " + std::to_string(recovered) + "/10, worst angle " +
                     fmt(worst_angle) + " deg");
}

Outcome auc() {
    Checker c;
    std::mt19937_64 rng(23);
    std::uniform_int_distribution<int> coarse(0, 30), bit(0, 1);
    double worst = 0.0;
    for (int k = 0; k < 50; ++k) {
        LabeledScores ls;
        std::vector<double> s;
        std::vector<int> l;
        for (int i = 0; i < 200; ++i) {
            l.push_back(bit(rng));
            s.push_back(0.1 * coarse(rng) + 0.3 * l.back()); // coarse grid forces ties
            ls.add(s.back(), l.back());
        }
        if (std::count(l.begin(), l.end(), 1) == 0 || std::count(l.begin(), l.end(), 0) == 0) continue;
        worst = std::max(worst, std::abs(roc_auc(ls) - oracle::pairwise_auc(s, l)));
        double prev = 1.0;
        for (double t = -0.5; t <= 4.0; t += 0.05) {
            const double f = fpr_at(ls, t);
            c(f <= prev, "fpr increased");
            prev = f;
        }
    }
    c(worst < 1e-12, "pairwise diff " + fmt(worst));
    return c.outcome("pairwise diff " + fmt(worst));
}

Outcome synthetic_end_to_end() {
    Checker c;
    const auto t0 = std::chrono::steady_clock::now();
    const auto dir = oracle::scratch("acceptance_e2e");
    synthetic::DatasetSpec spec; // K = 8, 20 normal + 20 anomalous, 8x8 shifted block
    spec.seed = 42;
    const Manifest m = Manifest::load(synthetic::write_dataset(dir, spec));
    std::ostringstream detail;
    for (auto kind : {EstimatorKind::padim, EstimatorKind::ortho, EstimatorKind::patchcore}) {
        PipelineConfig cfg;
        cfg.estimator = kind;
        const auto rep = run_report(cfg, m).report;
        const auto& run = rep["runs"][0];
        const double ia = run["image_auc"].is_null() ? 0.0 : run["image_auc"].get<double>();
        const double pa = run["pixel_auc"].is_null() ? 0.0 : run["pixel_auc"].get<double>();
        c(ia >= 0.95, to_string(kind) + " image AUC " + fmt(ia));
        c(pa >= 0.90, to_string(kind) + " pixel AUC " + fmt(pa));
        detail << to_string(kind) << " " << fmt(ia) << "/" << fmt(pa) << " ";
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    c(secs < 120.0, "runtime " + fmt(secs) + " s");
    detail << "(" << fmt(secs) << " s)";
    return c.outcome(detail.str());
}

Outcome complexity() {
    Checker c;
    c(complexity_report(EstimatorKind::padim, 448, 100, 2, 56, 56, 0.1).inference_order == "O(HWD³)", "padim order");
    c(complexity_report(EstimatorKind::ortho, 448, 100, 2, 56, 56, 0.1).inference_order == "O(HWD′³)", "ortho order");
    c(complexity_report(EstimatorKind::patchcore, 448, 100, 2, 56, 56, 0.1).inference_order == "O(γKH²W²D²)",
      "patchcore order");
    c(complexity_report(EstimatorKind::padim, 448, 100, 2, 56, 56, 0.1).memory_floats == 3136.0 * (448 + 448.0 * 448),
      "padim memory");
    double prev_gap = std::numeric_limits<double>::infinity();
    for (double D : {1e2, 1e3, 1e4, 1e5}) {
        const double Dp = D / 10;
        const double ratio = complexity_report(EstimatorKind::ortho, D, Dp, 2, 56, 56, 0.1).memory_floats /
                             complexity_report(EstimatorKind::padim, D, Dp, 2, 56, 56, 0.1).memory_floats;
        const double gap = std::abs(ratio / (Dp * Dp / (D * D)) - 1.0);
        c(gap < prev_gap, "ratio does not approach D'^2/D^2");
        prev_gap = gap;
    }
    c(prev_gap < 1e-3, "asymptotic ratio gap " + fmt(prev_gap));
    const auto pc = complexity_report(EstimatorKind::patchcore, 448, 100, 8, 56, 56, 0.1);
    c(std::abs(pc.memory_floats - 0.1 * 8 * 3136 * 448) < 1e-6, "patchcore memory");
    return c.outcome("orders verbatim, ratio gap " + fmt(prev_gap));
}

Outcome determinism() {
    Checker c;
    const auto root = oracle::scratch("acceptance_det");
    synthetic::DatasetSpec spec;
    spec.category.height = spec.category.width = 16;
    spec.category.block = 4;
    spec.support = 4;
    spec.test_normal = spec.test_anomalous = 4;
    spec.augmentations = {"hflip", "jitter"};
    spec.seed = 9;
    std::vector<std::filesystem::path> produced;
    for (auto kind : {EstimatorKind::ortho, EstimatorKind::patchcore}) {
        for (int rep = 0; rep < 2; ++rep) {
            const auto dir = root / (to_string(kind) + std::to_string(rep));
            const auto mp = synthetic::write_dataset(dir / "data", spec);
            PipelineConfig cfg;
            cfg.estimator = kind;
            cfg.d_prime = 6;
            cfg.gamma = 0.25;
            cfg.proj_dim = 4;
            cfg.runs = 3;
            cfg.k_shot = 2;
            cfg.seeds = {1, 2, 3, 4};
            cmd_select_aug(cfg, mp, dir / "aug.json");
            cmd_fit(cfg, mp, dir / "model.cadn");
            cmd_score(cfg, dir / "model.cadn", mp, dir / "scores");
            cmd_eval(cfg, mp, std::nullopt, dir / "report.json", dir / "report.csv");
        }
        const auto a = root / (to_string(kind) + "0"), b = root / (to_string(kind) + "1");
        std::size_t compared = 0;
        for (const auto& e : std::filesystem::recursive_directory_iterator(a)) {
            if (!e.is_regular_file()) continue;
            const auto rel = std::filesystem::relative(e.path(), a);
            if (rel.string().ends_with(".timing.json")) continue; // wall-clock only
            ++compared;
            c(oracle::slurp(e.path()) == oracle::slurp(b / rel), "differs: " + rel.string());
        }
        c(compared > 20, "too few files compared");
    }
    return c.outcome("byte-identical artifacts, maps and reports");
}

} // namespace

int main() {
    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
        {"gaussian_fit", gaussian_fit},
        {"mahalanobis", mahalanobis},
        {"coreset", coreset},
        {"knn_scoring", knn},
        {"wasserstein", wasserstein},
        {"augmentation_selection", augmentation_selection},
        {"registration", registration},
        {"auc", auc},
        {"synthetic_end_to_end", synthetic_end_to_end},
        {"complexity_report", complexity},
        {"determinism", determinism},
    };
    // criteria with their own wall-clock budget
    const std::map<std::string, double> budget{{"gaussian_fit", 5.0}};
    int failed = 0;
    for (const auto& [name, fn] : criteria) {
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = fn();
        } catch (const std::exception& ex) {
            o = {false, std::string("exception: ") + ex.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        if (auto it = budget.find(name); it != budget.end() && secs >= it->second) {
            o.pass = false;
            o.detail += " over budget";
        }
        std::printf("%s %-24s %s [%.2f s]\n", o.pass ? "PASS" : "FAIL", name.c_str(), o.detail.c_str(), secs);
        std::fflush(stdout);
        failed += o.pass ? 0 : 1;
    }
    std::printf("%d/%zu criteria passed\n", static_cast<int>(criteria.size()) - failed, criteria.size());
    return failed == 0 ? 0 : 1;
}
