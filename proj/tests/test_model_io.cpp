#include "doctest.h"

#include <random>

#include "fsad/error.hpp"
#include "fsad/model_io.hpp"
#include "oracles.hpp"

using namespace fsad;

namespace {

PatchFeatureSet random_set(std::size_t K, std::size_t D, std::size_t H, std::size_t W, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> g;
    PatchFeatureSet s;
    for (std::size_t k = 0; k < K; ++k) {
        FeatureMap m(D, H, W);
        for (double& v : m.data()) v = g(rng);
        s.add_sample(m);
    }
    return s;
}

// float32 storage: compare at single precision
void check_close(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
    REQUIRE(a.rows() == b.rows());
    REQUIRE(a.cols() == b.cols());
    CHECK((a - b).cwiseAbs().maxCoeff() <= 1e-6 * std::max(1.0, a.cwiseAbs().maxCoeff()));
}

} // namespace

TEST_CASE("CADN round trip for every estimator") {
    const auto feats = random_set(4, 5, 2, 3, 1);

    FittedModel padim{EstimatorKind::padim, 2, 3, 5, fit_gaussian_field(feats, 0.01), std::nullopt};
    FittedModel ortho{EstimatorKind::ortho, 2, 3, 5, fit_lowrank_field(feats, semi_orthogonal(5, 3, 2), 0.01),
                      std::nullopt};
    FittedModel pc{EstimatorKind::patchcore, 2, 3, 5, std::nullopt, build_memory_bank(feats, 0.5, 128, 0)};

    for (const FittedModel* m : {&padim, &ortho, &pc}) {
        const auto bytes = encode_model(*m);
        CHECK(std::string(bytes.begin(), bytes.begin() + 4) == "CADN");
        const FittedModel back = decode_model(bytes, "mem");
        CHECK(back.kind == m->kind);
        CHECK(back.grid_h == 2);
        CHECK(back.grid_w == 3);
        CHECK(back.feature_dim == 5);
        CHECK(encode_model(back) == bytes);
        if (m->field) {
            REQUIRE(back.field);
            CHECK(back.field->dim == m->field->dim);
            for (std::size_t p = 0; p < 6; ++p) {
                check_close(back.field->means[p], m->field->means[p]);
                check_close(back.field->covariances[p], m->field->covariances[p]);
            }
            CHECK(back.field->projection.has_value() == m->field->projection.has_value());
            if (m->field->projection) check_close(back.field->projection->matrix, m->field->projection->matrix);
        } else {
            REQUIRE(back.bank);
            check_close(back.bank->items, m->bank->items);
        }
    }

    SUBCASE("corruption is rejected") {
        auto bytes = encode_model(padim);
        auto bad = bytes;
        bad[0] = 'Z';
        CHECK_THROWS_WITH(decode_model(bad, "m.cadn"), doctest::Contains("m.cadn"));
        bad = bytes;
        bad[5] = 9;
        CHECK_THROWS(decode_model(bad, "m"));
        bad = bytes;
        bad.push_back(0);
        CHECK_THROWS(decode_model(bad, "m"));
        bad = bytes;
        bad.resize(bad.size() - 4);
        CHECK_THROWS(decode_model(bad, "m"));
    }
    SUBCASE("files") {
        const auto dir = oracle::scratch("model");
        write_model(dir / "m.cadn", pc);
        CHECK(encode_model(read_model(dir / "m.cadn")) == encode_model(pc));
        CHECK_THROWS_WITH(read_model(dir / "none.cadn"), doctest::Contains("none.cadn"));
    }
}
