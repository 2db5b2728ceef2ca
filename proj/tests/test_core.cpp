#include <cmath>

#include "dynmask/core.hpp"
#include "test_util.hpp"

using namespace dynmask;

TEST_CASE("validate_config defaults") {
    Config cfg = validate_config({});
    CHECK(cfg.window == 8);
    CHECK(cfg.epsilon == doctest::Approx(1e-8));
    CHECK(cfg.tau == 1.0);
    CHECK(cfg.alpha0 == 0.2);
    CHECK(cfg.lambda_sem == 0.3);
    CHECK(cfg.r_exp == 1);
    CHECK(cfg.lambda_d == 0.5);
    CHECK(cfg.beta == 0.5);
    CHECK(cfg.sigma_max == 0.1);
    CHECK(cfg.steps == 10);
    CHECK(cfg.bert_ratios.mask == 0.8);
    CHECK(cfg.t_global == 1.0);
}

TEST_CASE("validate_config rejections") {
    CHECK_ERR(ErrorCode::RangeError, validate_config({{"W", "3"}}));
    CHECK_ERR(ErrorCode::RangeError, validate_config({{"W", "6"}, {"tau", "0"}}));
    CHECK_ERR(ErrorCode::RangeError, validate_config({{"bert_ratios", "0.5,0.5,0.5"}}));
    CHECK_ERR(ErrorCode::RangeError, validate_config({{"alpha0", "1.5"}}));
    CHECK_ERR(ErrorCode::RangeError, validate_config({{"dim", "10"}, {"heads", "3"}}));
    CHECK_ERR(ErrorCode::UnknownKey, validate_config({{"wibble", "1"}}));
    CHECK_ERR(ErrorCode::RangeError, validate_config({{"steps", "zero"}}));
}

TEST_CASE("validate_config idempotent") {
    std::map<std::string, std::string> raw = {
        {"W", "12"}, {"alpha0", "0.35"}, {"lambda_sem", "0.6"}, {"seed", "99"},
        {"bert_ratios", "0.7,0.2,0.1"}};
    Config a = validate_config(raw);
    Config b = validate_config(config_to_map(a));
    CHECK(config_to_map(a) == config_to_map(b));
}

TEST_CASE("zscore examples") {
    BoolVec all(3, 1);
    auto z = zscore({1, 2, 3}, all);
    CHECK(z[0] == doctest::Approx(-1.224745).epsilon(1e-6));
    CHECK(z[1] == doctest::Approx(0.0));
    CHECK(z[2] == doctest::Approx(1.224745).epsilon(1e-6));

    auto zeros = zscore({5, 5, 5}, all);
    for (double x : zeros) CHECK(x == 0.0);

    auto masked = zscore({1, 2, 3}, BoolVec{1, 0, 1});
    CHECK(masked[0] == doctest::Approx(-1.0));
    CHECK(masked[1] == 0.0);
    CHECK(masked[2] == doctest::Approx(1.0));

    CHECK_ERR(ErrorCode::EmptyInput, zscore({1, 2}, BoolVec{0, 0}));
}

TEST_CASE("zscore shift and positive-scale invariance") {
    Rng rng(404);
    for (int trial = 0; trial < 50; ++trial) {
        const int n = rng.uniform_int(2, 40);
        std::vector<double> x(n);
        BoolVec valid(n, 0);
        for (int i = 0; i < n; ++i) {
            x[i] = rng.normal() * 3.0;
            valid[i] = rng.uniform01() < 0.8;
        }
        if (count_true(valid) == 0) valid[0] = 1;
        const double a = 0.1 + 5.0 * rng.uniform01();
        const double b = rng.normal();
        std::vector<double> y(n);
        for (int i = 0; i < n; ++i) y[i] = a * x[i] + b;
        auto zx = zscore(x, valid);
        auto zy = zscore(y, valid);
        for (int i = 0; i < n; ++i) CHECK(zx[i] == doctest::Approx(zy[i]).epsilon(1e-9));
    }
}

TEST_CASE("core types reject non-finite values") {
    Mat bad(2, 2);
    bad(1, 1) = std::nan("");
    CHECK_ERR(ErrorCode::NonFinite, MotionSequence(bad, BoolVec(2, 1)));
    CHECK_ERR(ErrorCode::NonFinite, Codebook{bad});
    CHECK_ERR(ErrorCode::NonFinite, TextCondition({1.0, std::numeric_limits<double>::infinity()}));
}

TEST_CASE("core type invariants") {
    CHECK_ERR(ErrorCode::RangeError, MotionSequence(Mat(2, 2), BoolVec(2, 0)));
    CHECK_ERR(ErrorCode::RangeError, Codebook(Mat(1, 3)));
    CHECK_ERR(ErrorCode::RangeError,
              TokenState({kMaskToken}, BoolVec{1}, BoolVec{1}));  // frozen MASK
}

TEST_CASE("rng determinism and stream independence") {
    Rng a = Rng::derive(7, "stream", 0);
    Rng b = Rng::derive(7, "stream", 0);
    Rng c = Rng::derive(7, "stream", 1);
    bool all_same = true, any_diff = false;
    for (int i = 0; i < 100; ++i) {
        double xa = a.uniform01(), xb = b.uniform01(), xc = c.uniform01();
        all_same = all_same && (xa == xb);
        any_diff = any_diff || (xa != xc);
        CHECK(xa >= 0.0);
        CHECK(xa < 1.0);
    }
    CHECK(all_same);
    CHECK(any_diff);
}

TEST_CASE("spearman ranks") {
    CHECK(spearman({1, 2, 3, 4}, {10, 20, 30, 40}) == doctest::Approx(1.0));
    CHECK(spearman({1, 2, 3, 4}, {40, 30, 20, 10}) == doctest::Approx(-1.0));
    CHECK(spearman({1, 2, 3, 4}, {5, 5, 5, 5}) == 0.0);
    // monotone with ties still positive
    CHECK(spearman({0, 0, 1, 1, 2, 2}, {1, 2, 3, 4, 5, 6}) > 0.8);
}
