#include <algorithm>
#include <cmath>

#include "dynmask/masking.hpp"
#include "dynmask/reference.hpp"
#include "dynmask/spectral.hpp"
#include "test_util.hpp"

using namespace dynmask;
using testutil::random_mat;
using testutil::random_vec;

namespace {

Config cfg_cfs(double lambda_sem, int r_exp) {
    Config cfg;
    cfg.lambda_sem = lambda_sem;
    cfg.r_exp = r_exp;
    return cfg;
}

bool plans_equal(const MaskPlan& a, const MaskPlan& b) {
    return a.positions == b.positions && a.provenance == b.provenance;
}

SpectralProfile profile_from_omega(const std::vector<double>& omega, int W, const BoolVec& valid) {
    SpectralProfile p;
    p.phi = Mat(static_cast<int>(omega.size()), W);
    p.omega = omega;
    p.valid = valid;
    return p;
}

}  // namespace

TEST_CASE("cosine_ratio") {
    CHECK(cosine_ratio(0.0) == 1.0);
    CHECK(cosine_ratio(1.0) == 0.0);
    CHECK(cosine_ratio(0.5) == doctest::Approx(std::sqrt(2.0) / 2.0).epsilon(1e-12));
    CHECK_ERR(ErrorCode::OutOfRange, cosine_ratio(-0.1));
    CHECK_ERR(ErrorCode::OutOfRange, cosine_ratio(1.1));
}

TEST_CASE("dynamic_scores") {
    BoolVec valid(4, 1);
    auto flat = dynamic_scores(profile_from_omega({0.2, 0.2, 0.2, 0.2}, 8, valid), valid);
    for (double x : flat) CHECK(x == 0.0);

    auto two = dynamic_scores(profile_from_omega({0, 0, 1, 1}, 8, valid), valid);
    CHECK(two[0] == doctest::Approx(-1.0));
    CHECK(two[1] == doctest::Approx(-1.0));
    CHECK(two[2] == doctest::Approx(1.0));
    CHECK(two[3] == doctest::Approx(1.0));

    std::vector<double> omega = {0.1, 0.5, 0.3, 0.2};
    auto s = dynamic_scores(profile_from_omega(omega, 8, valid), valid);
    CHECK(std::max_element(s.begin(), s.end()) - s.begin() ==
          std::max_element(omega.begin(), omega.end()) - omega.begin());
}

TEST_CASE("semantic_scores") {
    Mat x(3, 2);
    x(0, 0) = 1.0;
    x(1, 1) = 1.0;
    x(2, 0) = -1.0;
    TextCondition c({1.0, 0.0});
    BoolVec valid(3, 1);
    auto s = semantic_scores(x, c, valid);
    CHECK(s[0] == doctest::Approx(1.224745).epsilon(1e-6));
    CHECK(s[1] == doctest::Approx(0.0));
    CHECK(s[2] == doctest::Approx(-1.224745).epsilon(1e-6));

    // all rows parallel to c: constant cosine, z-scores collapse to zero
    Mat par(3, 2);
    par(0, 0) = 1.0;
    par(1, 0) = 2.0;
    par(2, 0) = 0.5;
    for (double v : semantic_scores(par, c, valid)) CHECK(v == 0.0);

    TextCondition c5({5.0, 0.0});
    auto scaled = semantic_scores(x, c5, valid);
    for (int i = 0; i < 3; ++i) CHECK(scaled[i] == doctest::Approx(s[i]).epsilon(1e-12));

    CHECK_ERR(ErrorCode::DimMismatch, semantic_scores(x, TextCondition({1.0, 0.0, 0.0}), valid));
}

TEST_CASE("cfs_select quota example") {
    // T=10, K=4, lambda=0.25, r_exp=0; s_dyn descending, s_sem reversed
    std::vector<double> s_dyn(10), s_sem(10);
    for (int t = 0; t < 10; ++t) {
        s_dyn[t] = 0.9 - 0.1 * t;
        s_sem[t] = 0.1 * t;
    }
    MaskPlan plan = cfs_select(s_dyn, s_sem, 4, cfg_cfs(0.25, 0), BoolVec(10, 1));
    REQUIRE(plan.positions.size() == 4);
    std::vector<int> sorted = plan.positions;
    std::sort(sorted.begin(), sorted.end());
    CHECK(sorted == std::vector<int>{0, 1, 2, 9});
    // three dynamic picks then one semantic pick
    CHECK(plan.provenance[0] == MaskProvenance::Dynamic);
    CHECK(plan.provenance[1] == MaskProvenance::Dynamic);
    CHECK(plan.provenance[2] == MaskProvenance::Dynamic);
    CHECK(plan.provenance[3] == MaskProvenance::Semantic);
}

TEST_CASE("cfs_select empty and clamped budgets") {
    auto cfg = cfg_cfs(0.3, 1);
    BoolVec valid(6, 1);
    valid[2] = 0;
    std::vector<double> s = random_vec(6, 1);
    CHECK(cfs_select(s, s, 0, cfg, valid).positions.empty());
    MaskPlan big = cfs_select(s, s, 100, cfg, valid);
    CHECK(static_cast<int>(big.positions.size()) == 5);
}

TEST_CASE("cfs_select matches independent reference over 1000 trials") {
    Rng rng(2718);
    for (int trial = 0; trial < 1000; ++trial) {
        const int T = rng.uniform_int(1, 40);
        BoolVec valid(T, 0);
        for (int t = 0; t < T; ++t) valid[t] = rng.uniform01() < 0.85;
        if (count_true(valid) == 0) valid[rng.uniform_int(0, T - 1)] = 1;
        std::vector<double> s_dyn = random_vec(T, 10000 + trial);
        std::vector<double> s_sem = random_vec(T, 20000 + trial);
        const int K = rng.uniform_int(0, T + 4);
        Config cfg = cfg_cfs(rng.uniform01(), rng.uniform_int(0, 3));

        MaskPlan got = cfs_select(s_dyn, s_sem, K, cfg, valid);
        MaskPlan want = reference::cfs_reference(s_dyn, s_sem, K, cfg, valid);
        REQUIRE(plans_equal(got, want));
        CHECK(static_cast<int>(got.positions.size()) == std::min(K, count_true(valid)));
        // no duplicates, all valid
        std::vector<int> sorted = got.positions;
        std::sort(sorted.begin(), sorted.end());
        CHECK(std::adjacent_find(sorted.begin(), sorted.end()) == sorted.end());
        for (int t : got.positions) CHECK(valid[t]);
    }
}

TEST_CASE("cfs_select provenance counts") {
    Rng rng(31415);
    for (int trial = 0; trial < 100; ++trial) {
        const int T = rng.uniform_int(2, 30);
        BoolVec valid(T, 1);
        std::vector<double> s_dyn = random_vec(T, 40000 + trial);
        std::vector<double> s_sem = random_vec(T, 50000 + trial);
        const int K = rng.uniform_int(0, T);
        Config cfg = cfg_cfs(rng.uniform01(), rng.uniform_int(0, 2));
        MaskPlan plan = cfs_select(s_dyn, s_sem, K, cfg, valid);

        const int n_sem = static_cast<int>(std::llround(cfg.lambda_sem * K));
        const int n_dyn = K - n_sem;
        int cd = 0, cs = 0, ce = 0, cf = 0;
        for (auto p : plan.provenance) {
            cd += p == MaskProvenance::Dynamic;
            cs += p == MaskProvenance::Semantic;
            ce += p == MaskProvenance::Expansion;
            cf += p == MaskProvenance::Fill;
        }
        CHECK(cd <= n_dyn);
        CHECK(cs <= n_sem);
        CHECK(cd + cs + ce + cf == static_cast<int>(plan.positions.size()));
    }
}

TEST_CASE("cfs_select monotone reallocation and pure-semantic mode") {
    Rng rng(9);
    const int T = 20;
    BoolVec valid(T, 1);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<double> omega = random_vec(T, 600 + trial);
        const int star = rng.uniform_int(0, T - 1);
        double mx = *std::max_element(omega.begin(), omega.end());
        omega[star] = mx + 1.0;
        auto s_dyn = dynamic_scores(profile_from_omega(omega, 8, valid), valid);
        auto s_sem = random_vec(T, 700 + trial);
        const int K = 1 + rng.uniform_int(0, T - 1);
        MaskPlan plan = cfs_select(s_dyn, s_sem, K, cfg_cfs(0.0, 0), valid);
        CHECK(std::find(plan.positions.begin(), plan.positions.end(), star) !=
              plan.positions.end());
    }

    // lambda = 1, r_exp = 0: selection is the top-K of s_sem alone
    std::vector<double> s_sem = random_vec(T, 808);
    std::vector<double> s_dyn = random_vec(T, 809);
    const int K = 7;
    MaskPlan plan = cfs_select(s_dyn, s_sem, K, cfg_cfs(1.0, 0), valid);
    std::vector<int> idx(T);
    for (int t = 0; t < T; ++t) idx[t] = t;
    std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) { return s_sem[a] > s_sem[b]; });
    std::vector<int> expect(idx.begin(), idx.begin() + K);
    CHECK(plan.positions == expect);
}

TEST_CASE("apply_masking degenerate ratios") {
    std::vector<int> tokens = {1, 2, 3, 4, 5};
    BoolVec valid(5, 1);
    MaskPlan plan;
    plan.budget = 3;
    plan.positions = {0, 2, 4};
    plan.provenance.assign(3, MaskProvenance::Dynamic);

    Rng rng1(1);
    TrainingExample all_mask = apply_masking(tokens, valid, plan, {1.0, 0.0, 0.0}, 8, rng1);
    CHECK(all_mask.corrupted.tokens == std::vector<int>{kMaskToken, 2, kMaskToken, 4, kMaskToken});
    CHECK(all_mask.loss_mask == BoolVec{1, 0, 1, 0, 1});
    CHECK(all_mask.targets == tokens);

    Rng rng2(1);
    TrainingExample keep = apply_masking(tokens, valid, plan, {0.0, 0.0, 1.0}, 8, rng2);
    CHECK(keep.corrupted.tokens == tokens);
    CHECK(keep.loss_mask == BoolVec{1, 0, 1, 0, 1});
}

TEST_CASE("apply_masking empirical corruption fractions") {
    const int N = 10000;
    std::vector<int> tokens(N, 3);
    BoolVec valid(N, 1);
    MaskPlan plan;
    plan.budget = N;
    for (int i = 0; i < N; ++i) {
        plan.positions.push_back(i);
        plan.provenance.push_back(MaskProvenance::Dynamic);
    }
    Rng rng(777);
    TrainingExample ex = apply_masking(tokens, valid, plan, {0.8, 0.1, 0.1}, 64, rng);
    int masked = 0, kept = 0, randomized = 0;
    for (int i = 0; i < N; ++i) {
        if (ex.corrupted.tokens[i] == kMaskToken) {
            masked++;
        } else if (ex.corrupted.tokens[i] == 3) {
            kept++;
        } else {
            randomized++;
        }
    }
    // a uniform random replacement can also draw the original token, so fold
    // that probability into "kept"
    CHECK(std::abs(masked / double(N) - 0.8) < 0.02);
    CHECK(std::abs(randomized / double(N) - 0.1 * 63.0 / 64.0) < 0.02);
    CHECK(std::abs(kept / double(N) - (0.1 + 0.1 / 64.0)) < 0.02);
}

TEST_CASE("build_training_example endpoints and determinism") {
    Config cfg;
    const int T = 24, V = 8;
    Mat emb = random_mat(T, 4, 99);
    std::vector<int> tokens(T);
    for (int t = 0; t < T; ++t) tokens[t] = 1 + (t % V);
    BoolVec valid(T, 1);
    valid[5] = 0;
    TextCondition cond(random_vec(4, 55));

    Rng r0(1);
    TrainingExample full = build_training_example(tokens, valid, emb, cond, V, cfg, r0,
                                                  SelectionPolicy::ContentFocused, 0.0);
    CHECK(count_true(full.loss_mask) == count_true(valid));

    Rng r1(1);
    TrainingExample empty = build_training_example(tokens, valid, emb, cond, V, cfg, r1,
                                                   SelectionPolicy::ContentFocused, 1.0);
    CHECK(count_true(empty.loss_mask) == 0);

    Rng ra(42);
    Rng rb(42);
    TrainingExample a = build_training_example(tokens, valid, emb, cond, V, cfg, ra);
    TrainingExample b = build_training_example(tokens, valid, emb, cond, V, cfg, rb);
    CHECK(a.corrupted.tokens == b.corrupted.tokens);
    CHECK(a.loss_mask == b.loss_mask);

    // budget conservation over random draws
    for (int trial = 0; trial < 50; ++trial) {
        Rng rr(1000 + trial);
        double r = rr.uniform01();
        Rng re(2000 + trial);
        TrainingExample ex = build_training_example(tokens, valid, emb, cond, V, cfg, re,
                                                    SelectionPolicy::ContentFocused, r);
        const int n_valid = count_true(valid);
        const int K = static_cast<int>(std::ceil(cosine_ratio(r) * n_valid));
        CHECK(count_true(ex.loss_mask) == std::min(K, n_valid));
    }
}
