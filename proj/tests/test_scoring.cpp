#include "doctest.h"

#include <random>

#include "fsad/error.hpp"
#include "fsad/feature_io.hpp"
#include "fsad/scoring.hpp"
#include "fsad/synthetic.hpp"
#include "oracles.hpp"

using namespace fsad;

namespace {

GaussianField single(const Eigen::VectorXd& mu, const Eigen::MatrixXd& S) {
    GaussianField f;
    f.height = f.width = 1;
    f.dim = static_cast<std::size_t>(mu.size());
    f.means = {mu};
    f.covariances = {S};
    return f;
}

Eigen::VectorXd randvec(std::size_t n, std::mt19937_64& rng) {
    std::normal_distribution<double> g;
    Eigen::VectorXd v(n);
    for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = g(rng);
    return v;
}

PatchFeatureSet single_vector(const Eigen::VectorXd& v) {
    PatchFeatureSet s;
    s.add_sample(FeatureMap(static_cast<std::size_t>(v.size()), 1, 1, std::vector<double>(v.data(), v.data() + v.size())));
    return s;
}

} // namespace

TEST_CASE("Mahalanobis distance") {
    CHECK(MahalanobisScorer(single(Eigen::Vector2d(0, 0), Eigen::Matrix2d::Identity())).distance(0, Eigen::Vector2d(3, 4)) ==
          doctest::Approx(5.0));

    std::mt19937_64 rng(3);
    for (int c = 0; c < 100; ++c) {
        const std::size_t n = 2 + static_cast<std::size_t>(c % 7);
        const Eigen::MatrixXd S = oracle::random_spd(n, rng);
        const Eigen::VectorXd mu = randvec(n, rng), f = randvec(n, rng);
        const double d = MahalanobisScorer(single(mu, S)).distance(0, f);
        CHECK(std::abs(d - oracle::mahalanobis(f, mu, S)) < 1e-8);

        const Eigen::MatrixXd Q = oracle::random_orthogonal(n, rng);
        const double dq = MahalanobisScorer(single(Q * mu, Q * S * Q.transpose())).distance(0, Q * f);
        CHECK(std::abs(d - dq) < 1e-8);
    }

    SUBCASE("features at the mean score zero") {
        PatchFeatureSet s;
        const FeatureMap m = synthetic::smooth_random_map(3, 4, 5, 1);
        s.add_sample(m);
        GaussianField f;
        f.height = 4;
        f.width = 5;
        f.dim = 3;
        for (std::size_t p = 0; p < 20; ++p) {
            f.means.push_back(s.vector(0, p));
            f.covariances.push_back(Eigen::Matrix3d::Identity());
        }
        const FeatureMap out = mahalanobis_score(s, f);
        for (double v : out.data()) CHECK(v == 0.0);
    }
    SUBCASE("dimension mismatch is rejected") {
        const MahalanobisScorer sc(single(Eigen::Vector2d(0, 0), Eigen::Matrix2d::Identity()));
        CHECK_THROWS(sc.score(single_vector(Eigen::Vector3d(1, 2, 3))));
    }
}

TEST_CASE("kNN scoring") {
    SUBCASE("hand case with one bank item") {
        MemoryBank b;
        b.items = Eigen::MatrixXd::Zero(2, 1);
        const KnnResult r = knn_score(single_vector(Eigen::Vector2d(3, 4)), b, 1);
        CHECK(r.grid.at(0, 0, 0) == doctest::Approx(5.0));
        CHECK(r.reweight == 0.0);
        CHECK(r.image_score == 0.0);
    }
    SUBCASE("bank members score exactly zero and NN matches brute force") {
        std::mt19937_64 rng(5);
        MemoryBank b;
        b.items.resize(6, 50);
        for (Eigen::Index j = 0; j < 50; ++j) b.items.col(j) = randvec(6, rng);
        for (Eigen::Index j = 0; j < 50; ++j) CHECK(knn_score(single_vector(b.items.col(j)), b).grid.at(0, 0, 0) == 0.0);
        for (int t = 0; t < 50; ++t) {
            const Eigen::VectorXd f = randvec(6, rng);
            const auto nn = oracle::brute_nn(b.items, f);
            CHECK(knn_score(single_vector(f), b).grid.at(0, 0, 0) == doctest::Approx(nn.distance).epsilon(1e-14));
        }
    }
    SUBCASE("re-weight lies in [0, 1)") {
        std::mt19937_64 rng(6);
        MemoryBank b;
        b.items.resize(3, 20);
        for (Eigen::Index j = 0; j < 20; ++j) b.items.col(j) = randvec(3, rng);
        const KnnResult r = knn_score(single_vector(randvec(3, rng) * 4.0), b, 3);
        CHECK(r.reweight >= 0.0);
        CHECK(r.reweight < 1.0);
        CHECK(r.image_score == doctest::Approx(r.reweight * r.max_patch_score));
    }
}

TEST_CASE("assemble and smoothing") {
    const FeatureMap g = synthetic::smooth_random_map(1, 6, 6, 2);
    const AnomalyMap a = assemble(g, {}, 12, 12);
    CHECK(a.final == resize_bilinear(g, 12, 12));
    CHECK(a.image_score == *std::max_element(a.final.data().begin(), a.final.data().end()));
    CHECK(assemble(FeatureMap(1, 4, 4, 0.0), {}, 8, 8).image_score == 0.0);

    SUBCASE("spike follows the inverse transform") {
        FeatureMap spike(1, 33, 33, 0.0);
        spike.at(0, 16, 24) = 1.0; // x = +0.5 in normalized coordinates
        const std::vector<AffineTransform> ts{AffineTransform::rotation(std::numbers::pi / 2)};
        const AnomalyMap m = assemble(spike, ts, 33, 33);
        const auto it = std::max_element(m.final.data().begin(), m.final.data().end());
        const auto idx = static_cast<std::size_t>(it - m.final.data().begin());
        // registered-frame point (0.5, 0) came from source Θ·(0.5, 0) = (0, 0.5)
        CHECK(std::abs(static_cast<double>(idx % 33) - 16.0) <= 1.0);
        CHECK(std::abs(static_cast<double>(idx / 33) - 24.0) <= 1.0);
    }
    SUBCASE("gaussian smoothing preserves constants and mass of a spike") {
        const FeatureMap out = gaussian_smooth(FeatureMap(1, 7, 9, 2.0), 1.5);
        for (double v : out.data()) CHECK(v == doctest::Approx(2.0));
        FeatureMap s(1, 21, 21, 0.0);
        s.at(0, 10, 10) = 1.0;
        const FeatureMap sm = gaussian_smooth(s, 2.0);
        double sum = 0.0;
        for (double v : sm.data()) sum += v;
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));
        CHECK(sm.at(0, 10, 10) < 1.0);
        CHECK(gaussian_smooth(s, 0.0) == s);
    }
}

TEST_CASE("export writes png, carg and json") {
    const auto dir = oracle::scratch("export");
    const AnomalyMap a = assemble(synthetic::smooth_random_map(1, 4, 4, 3), {}, 8, 8);
    export_anomaly_map(dir / "img", a);
    CHECK(std::filesystem::exists(dir / "img.png"));
    CHECK(read_feature_file(dir / "img.carg").same_shape(a.final));
    std::ifstream js(dir / "img.json");
    const auto j = nlohmann::json::parse(js);
    CHECK(j["image_score"].get<double>() == a.image_score);
}
