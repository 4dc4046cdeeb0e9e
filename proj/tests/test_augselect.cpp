#include "doctest.h"

#include <random>

#include "fsad/augselect.hpp"
#include "fsad/error.hpp"
#include "oracles.hpp"

using namespace fsad;

namespace {

GaussianField field_of(std::vector<Eigen::VectorXd> mus, std::vector<Eigen::MatrixXd> covs) {
    GaussianField f;
    f.height = 1;
    f.width = mus.size();
    f.dim = static_cast<std::size_t>(mus[0].size());
    f.means = std::move(mus);
    f.covariances = std::move(covs);
    return f;
}

} // namespace

TEST_CASE("spd_sqrt") {
    CHECK(spd_sqrt(Eigen::Matrix3d::Identity()).isApprox(Eigen::Matrix3d::Identity(), 1e-14));
    const Eigen::Matrix2d d = (Eigen::Vector2d(4, 9)).asDiagonal();
    CHECK(spd_sqrt(d).isApprox(Eigen::Matrix2d(Eigen::Vector2d(2, 3).asDiagonal()), 1e-14));
    std::mt19937_64 rng(1);
    const Eigen::MatrixXd S = oracle::random_spd(5, rng);
    const Eigen::MatrixXd R = spd_sqrt(S);
    CHECK((R * R - S).norm() < 1e-7);
    Eigen::Matrix2d asym;
    asym << 1, 0.5, 0, 1;
    CHECK_THROWS(spd_sqrt(asym));
}

TEST_CASE("Gaussian squared 2-Wasserstein") {
    const Eigen::Matrix2d I = Eigen::Matrix2d::Identity();
    CHECK(gaussian_w2(Eigen::Vector2d(1, 0), I, Eigen::Vector2d(1, 0), I) == 0.0);
    CHECK(gaussian_w2(Eigen::Vector2d(1, 0), I, Eigen::Vector2d(0, 0), I) == doctest::Approx(1.0));
    const Eigen::Matrix2d a = Eigen::Vector2d(1, 4).asDiagonal(), b = Eigen::Vector2d(4, 1).asDiagonal();
    CHECK(gaussian_w2(Eigen::Vector2d(0, 0), a, Eigen::Vector2d(0, 0), b) == doctest::Approx(2.0));

    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> u(0.05, 3.0);
    std::normal_distribution<double> g;
    for (int c = 0; c < 100; ++c) {
        const Eigen::Index n = 1 + c % 6;
        Eigen::VectorXd m1(n), m2(n), v1(n), v2(n);
        for (Eigen::Index i = 0; i < n; ++i) {
            m1(i) = g(rng);
            m2(i) = g(rng);
            v1(i) = u(rng);
            v2(i) = u(rng);
        }
        const double w = gaussian_w2(m1, v1.asDiagonal().toDenseMatrix(), m2, v2.asDiagonal().toDenseMatrix());
        CHECK(std::abs(w - oracle::diagonal_w2(m1, v1, m2, v2)) < 1e-8);
    }
    for (int c = 0; c < 20; ++c) {
        const Eigen::MatrixXd S1 = oracle::random_spd(4, rng), S2 = oracle::random_spd(4, rng);
        Eigen::VectorXd m1(4), m2(4);
        for (int i = 0; i < 4; ++i) {
            m1(i) = g(rng);
            m2(i) = g(rng);
        }
        CHECK(std::abs(gaussian_w2(m1, S1, m2, S2) - gaussian_w2(m2, S2, m1, S1)) < 1e-8);
        CHECK(gaussian_w2(m1, S1, m1, S1) == 0.0);
    }
}

TEST_CASE("KL and JS") {
    const Eigen::Matrix2d I = Eigen::Matrix2d::Identity();
    CHECK(gaussian_kl(Eigen::Vector2d(1, 0), I, Eigen::Vector2d(0, 0), I) == doctest::Approx(0.5));
    CHECK(gaussian_kl(Eigen::Vector2d(0, 0), I, Eigen::Vector2d(0, 0), I) == doctest::Approx(0.0));
    const double js = gaussian_js(Eigen::Vector2d(1, 0), I, Eigen::Vector2d(0, 0), I);
    CHECK(js > 0.0);
    CHECK(js == doctest::Approx(gaussian_js(Eigen::Vector2d(0, 0), I, Eigen::Vector2d(1, 0), I)));
    CHECK(distance_from_string("js") == DistributionDistance::js);
    CHECK_THROWS(distance_from_string("tv"));
}

TEST_CASE("weighted distance sum") {
    const Eigen::Matrix2d I = Eigen::Matrix2d::Identity();
    const auto base = field_of({Eigen::Vector2d(0, 0)}, {I});
    CHECK(weighted_w_sum(base, base) == 0.0);
    const auto moved = field_of({Eigen::Vector2d(1, 0)}, {I});
    CHECK(weighted_w_sum(base, moved) == doctest::Approx(1.0));

    const auto base2 = field_of({Eigen::Vector2d(0, 0), Eigen::Vector2d(5, 5)}, {I, I});
    const auto aug2 = field_of({Eigen::Vector2d(0, 0), Eigen::Vector2d(5, 7)}, {I, 4 * I});
    std::vector<double> per;
    const double total = weighted_w_sum(base2, aug2, DistributionDistance::wasserstein, &per);
    REQUIRE(per.size() == 2);
    CHECK(per[0] == 0.0);
    CHECK(per[1] > 0.0);
    CHECK(total == doctest::Approx(2.0 * per[1])); // |delta mu| = 2 at the second position
}

TEST_CASE("mean-threshold selection") {
    const auto r = select({{"a", 1.0}, {"b", 3.0}});
    CHECK(r.threshold == 2.0);
    CHECK(r.kept() == std::vector<std::string>{"a"});
    CHECK(select({{"a", 0.7}, {"b", 0.7}, {"c", 0.7}}).kept().size() == 3);
    CHECK(select({{"only", 42.0}}).kept() == std::vector<std::string>{"only"});

    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> u(0.0, 10.0);
    for (int c = 0; c < 20; ++c) {
        std::map<std::string, double> w;
        const int n = 1 + c % 8;
        for (int i = 0; i < n; ++i) w["aug" + std::to_string(i)] = u(rng);
        double sum = 0.0;
        for (const auto& [k, v] : w) sum += v;
        const double mean = sum / n;
        const auto rep = select(w);
        std::string argmin = w.begin()->first;
        for (const auto& [k, v] : w) {
            CHECK(rep.entries.at(k).kept == (v <= mean));
            if (v < w[argmin]) argmin = k;
        }
        CHECK(rep.entries.at(argmin).kept);
    }
    CHECK_THROWS(select({}));
}
