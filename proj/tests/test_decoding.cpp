#include <cmath>

#include "dynmask/decoding.hpp"
#include "dynmask/reference.hpp"
#include "test_util.hpp"

using namespace dynmask;
using testutil::random_mat;
using testutil::random_vec;

namespace {

SpectralProfile profile_from_omega(const std::vector<double>& omega, int W) {
    SpectralProfile p;
    p.phi = Mat(static_cast<int>(omega.size()), W);
    p.omega = omega;
    p.valid = BoolVec(omega.size(), 1);
    return p;
}

Mat probs_with_max(const std::vector<double>& max_p, int V) {
    Mat probs(static_cast<int>(max_p.size()), V);
    for (int t = 0; t < probs.rows; ++t) {
        probs(t, 0) = max_p[t];
        for (int v = 1; v < V; ++v) probs(t, v) = (1.0 - max_p[t]) / (V - 1);
    }
    return probs;
}

struct DecodeSetup {
    ToyModel model;
    Codebook codebook;
    TextCondition condition;
};

DecodeSetup make_setup(std::uint64_t seed, int t_max = 64) {
    Rng rng(seed);
    DecodeSetup s{ToyModel::init(16, 16, 2, 2, t_max, 6, rng), Codebook(random_mat(16, 6, seed + 1)),
                  TextCondition(random_vec(6, seed + 2))};
    return s;
}

}  // namespace

TEST_CASE("exploration_scores closed-form blend") {
    const int V = 8;
    BoolVec valid(4, 1);
    // omega z-scores to (1, 1, -1, -1)
    SpectralProfile p = profile_from_omega({0.2, 0.2, 0.1, 0.1}, 8);
    // uncertainty z-scores to (-0.5, (1+sqrt(6))/2, (1-sqrt(6))/2, -0.5)
    const double hi = (1.0 + std::sqrt(6.0)) / 2.0;
    const double lo = (1.0 - std::sqrt(6.0)) / 2.0;
    std::vector<double> u = {0.5 - 0.05, 0.5 + 0.1 * hi, 0.5 + 0.1 * lo, 0.45};
    std::vector<double> max_p(4);
    for (int t = 0; t < 4; ++t) max_p[t] = 1.0 - u[t];
    Mat probs = probs_with_max(max_p, V);

    auto b = exploration_scores(p, probs, 0.6, valid);
    // lambda_d * 1.0 + (1 - lambda_d) * (-0.5) = 0.4, sigmoid(0.4) = 0.598688
    CHECK(b[0] == doctest::Approx(0.598688).epsilon(1e-5));

    // constant complexity and confidence: sigmoid(0) everywhere
    SpectralProfile flat = profile_from_omega({0.1, 0.1, 0.1, 0.1}, 8);
    Mat const_probs = probs_with_max({0.5, 0.5, 0.5, 0.5}, V);
    for (double x : exploration_scores(flat, const_probs, 0.5, valid)) {
        CHECK(x == doctest::Approx(0.5));
    }

    // lambda_d = 0 reduces to a confidence-only score
    auto b0 = exploration_scores(p, probs, 0.0, valid);
    std::vector<double> uncertainty(4);
    for (int t = 0; t < 4; ++t) uncertainty[t] = 1.0 - max_p[t];
    auto uhat = zscore(uncertainty, valid);
    for (int t = 0; t < 4; ++t) {
        CHECK(b0[t] == doctest::Approx(1.0 / (1.0 + std::exp(-uhat[t]))).epsilon(1e-12));
    }

    Mat bad = probs_with_max({0.5, 0.5, 0.5, 0.5}, V);
    bad(2, 0) += 0.1;
    CHECK_ERR(ErrorCode::BadProbabilities, exploration_scores(p, bad, 0.5, valid));
}

TEST_CASE("adaptive temperature and noise") {
    std::vector<double> b = {0.5};
    CHECK(adaptive_temperature(1.0, 0.5, b)[0] == doctest::Approx(1.25).epsilon(1e-12));
    CHECK(adaptive_noise(0.1, b)[0] == doctest::Approx(0.05).epsilon(1e-12));

    std::vector<double> bs = {0.1, 0.4, 0.9};
    auto t0 = adaptive_temperature(2.0, 0.0, bs);
    for (double x : t0) CHECK(x == 2.0);
    auto tb = adaptive_temperature(1.0, 0.7, bs);
    CHECK(tb[0] < tb[1]);
    CHECK(tb[1] < tb[2]);
    auto sg = adaptive_noise(0.2, bs);
    CHECK(sg[0] < sg[1]);
    CHECK(sg[2] == doctest::Approx(0.18));
    for (size_t i = 0; i < bs.size(); ++i) {
        CHECK(sg[i] > 0.0);
        CHECK(sg[i] < 0.2);
    }
    auto z = adaptive_noise(0.0, bs);
    for (double x : z) CHECK(x == 0.0);
}

TEST_CASE("keep schedule") {
    CHECK(masked_after(49, 10, 10) == 0);
    CHECK(masked_after(49, 5, 10) == 35);
    CHECK(49 - masked_after(49, 5, 10) == 14);
    CHECK(masked_after(49, 0, 10) == 49);
    CHECK(keep_count(7, 1, 1) == 7);

    int total = 0;
    for (int s = 1; s <= 10; ++s) {
        int k = keep_count(49, s, 10);
        CHECK(k >= 0);
        total += k;
    }
    CHECK(total == 49);

    CHECK_ERR(ErrorCode::OutOfRange, masked_after(10, 11, 10));
    CHECK_ERR(ErrorCode::OutOfRange, keep_count(10, 0, 10));
}

TEST_CASE("sample_step") {
    const int T = 5, V = 12;
    Mat logits = random_mat(T, V, 40);
    TokenState state(std::vector<int>(T, kMaskToken), BoolVec(T, 0), BoolVec(T, 1));

    Rng rng(7);
    auto noiseless = sample_step(logits, std::vector<double>(T, 1.0), std::vector<double>(T, 0.0),
                                 state, rng);
    for (int t = 0; t < T; ++t) {
        int best = 0;
        for (int v = 1; v < V; ++v) {
            if (logits(t, v) > logits(t, best)) best = v;
        }
        CHECK(noiseless.tokens[t] == best + 1);
        CHECK(noiseless.confidences[t] > 0.0);
        CHECK(noiseless.confidences[t] <= 1.0);
    }

    Mat sat = random_mat(T, V, 41);
    for (int t = 0; t < T; ++t) sat(t, 3) = 1000.0;
    Rng rng2(9);
    auto dominated = sample_step(sat, std::vector<double>(T, 1.0), std::vector<double>(T, 0.1),
                                 state, rng2);
    for (int t = 0; t < T; ++t) {
        CHECK(dominated.tokens[t] == 4);
        CHECK(dominated.confidences[t] > 1.0 - 1e-6);
    }

    Rng ra(123), rb(123);
    auto s1 = sample_step(logits, std::vector<double>(T, 1.3), std::vector<double>(T, 0.5), state, ra);
    auto s2 = sample_step(logits, std::vector<double>(T, 1.3), std::vector<double>(T, 0.5), state, rb);
    CHECK(s1.tokens == s2.tokens);
    CHECK(s1.confidences == s2.confidences);

    // frozen positions pass through with confidence 1
    TokenState part({3, kMaskToken, 5, kMaskToken, kMaskToken},
                    BoolVec{1, 0, 1, 0, 0}, BoolVec(T, 1));
    Rng rc(5);
    auto s3 = sample_step(logits, std::vector<double>(T, 1.0), std::vector<double>(T, 0.0), part, rc);
    CHECK(s3.tokens[0] == 3);
    CHECK(s3.tokens[2] == 5);
    CHECK(s3.confidences[0] == 1.0);
}

TEST_CASE("decode single step freezes everything") {
    DecodeSetup s = make_setup(100);
    Config cfg;
    cfg.dim = 16;
    cfg.steps = 1;
    Rng rng(1);
    DecodeTrace trace = decode(s.model, s.codebook, s.condition, 12, cfg, rng);
    REQUIRE(trace.steps.size() == 1);
    CHECK(static_cast<int>(trace.steps[0].newly_frozen.size()) == 12);
    for (int t = 0; t < 12; ++t) {
        CHECK(trace.final_state.tokens[t] != kMaskToken);
        CHECK(trace.final_state.frozen[t]);
    }
}

TEST_CASE("decode schedule, completion, irrevocability, determinism") {
    DecodeSetup s = make_setup(200);
    Config cfg;
    cfg.dim = 16;
    cfg.steps = 10;
    const int T = 49;

    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        Rng rng(seed);
        DecodeTrace trace = decode(s.model, s.codebook, s.condition, T, cfg, rng);
        REQUIRE(static_cast<int>(trace.steps.size()) == 10);

        int frozen = 0;
        std::vector<int> token_of(T, kMaskToken);
        for (int i = 0; i < 10; ++i) {
            const StepRecord& rec = trace.steps[i];
            frozen += static_cast<int>(rec.newly_frozen.size());
            CHECK(frozen == T - masked_after(T, i + 1, 10));
            for (int t : rec.newly_frozen) token_of[t] = rec.tokens[t];
            // a frozen token never changes in later records
            for (int t = 0; t < T; ++t) {
                if (token_of[t] != kMaskToken) CHECK(rec.tokens[t] == token_of[t]);
            }
            for (int t = 0; t < T; ++t) {
                CHECK(rec.b[t] > 0.0);
                CHECK(rec.b[t] < 1.0);
                if (cfg.beta > 0.0) {
                    for (int u = 0; u < T; ++u) {
                        if (rec.b[t] > rec.b[u]) {
                            CHECK(rec.temps[t] > rec.temps[u]);
                            CHECK(rec.sigmas[t] >= rec.sigmas[u]);
                        }
                    }
                }
            }
        }
        for (int t = 0; t < T; ++t) CHECK(trace.final_state.tokens[t] != kMaskToken);

        Rng rng2(seed);
        DecodeTrace again = decode(s.model, s.codebook, s.condition, T, cfg, rng2);
        CHECK(again.final_state.tokens == trace.final_state.tokens);
        for (int i = 0; i < 10; ++i) {
            CHECK(again.steps[i].tokens == trace.steps[i].tokens);
            CHECK(again.steps[i].confidences == trace.steps[i].confidences);
            CHECK(again.steps[i].newly_frozen == trace.steps[i].newly_frozen);
            CHECK(again.steps[i].b == trace.steps[i].b);
        }
    }
}

TEST_CASE("decode with zeroed knobs equals the plain confidence baseline") {
    DecodeSetup s = make_setup(300);
    Config cfg;
    cfg.dim = 16;
    cfg.steps = 10;
    cfg.alpha0 = 0.0;
    cfg.beta = 0.0;
    cfg.sigma_max = 0.0;
    cfg.lambda_d = 0.0;
    const int T = 30;

    Rng rng(77);
    DecodeTrace trace = decode(s.model, s.codebook, s.condition, T, cfg, rng);
    reference::BaselineTrace base = reference::confidence_decode(s.model, s.condition, T, cfg);

    REQUIRE(trace.steps.size() == base.steps.size());
    for (size_t i = 0; i < base.steps.size(); ++i) {
        CHECK(trace.steps[i].tokens == base.steps[i].tokens);
        CHECK(trace.steps[i].confidences == base.steps[i].confidences);
        CHECK(trace.steps[i].newly_frozen == base.steps[i].newly_frozen);
    }
    CHECK(trace.final_state.tokens == base.final_tokens);
}

TEST_CASE("decode length one") {
    DecodeSetup s = make_setup(400, 8);
    Config cfg;
    cfg.dim = 16;
    cfg.steps = 3;
    Rng rng(4);
    DecodeTrace trace = decode(s.model, s.codebook, s.condition, 1, cfg, rng);
    CHECK(trace.final_state.tokens[0] != kMaskToken);
    CHECK_ERR(ErrorCode::RangeError, decode(s.model, s.codebook, s.condition, 0, cfg, rng));
}
