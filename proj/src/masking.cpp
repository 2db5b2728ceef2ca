#include "dynmask/masking.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "dynmask/spectral.hpp"

namespace dynmask {

const char* provenance_name(MaskProvenance p) {
    switch (p) {
        case MaskProvenance::Dynamic: return "dynamic";
        case MaskProvenance::Semantic: return "semantic";
        case MaskProvenance::Expansion: return "expansion";
        case MaskProvenance::Fill: return "fill";
        case MaskProvenance::Uniform: return "uniform";
    }
    return "?";
}

double cosine_ratio(double r) {
    if (!(r >= 0.0 && r <= 1.0)) {
        throw Error(ErrorCode::OutOfRange, "cosine_ratio: r must be in [0,1]");
    }
    if (r == 0.0) return 1.0;
    if (r == 1.0) return 0.0;
    return std::cos(0.5 * M_PI * r);
}

std::vector<double> dynamic_scores(const SpectralProfile& profile, const BoolVec& valid) {
    if (valid.size() != profile.omega.size()) {
        throw Error(ErrorCode::ShapeMismatch, "dynamic_scores: mask length mismatch");
    }
    return zscore(profile.omega, valid);
}

std::vector<double> semantic_scores(const Mat& embeddings, const TextCondition& condition,
                                    const BoolVec& valid) {
    const int T = embeddings.rows;
    const int D = embeddings.cols;
    if (condition.dim() != D) {
        throw Error(ErrorCode::DimMismatch, "semantic_scores: condition dim " +
                                                std::to_string(condition.dim()) +
                                                " != embedding dim " + std::to_string(D));
    }
    if (static_cast<int>(valid.size()) != T) {
        throw Error(ErrorCode::ShapeMismatch, "semantic_scores: valid mask length != T");
    }

    double cnorm = 0.0;
    for (double x : condition.vec) cnorm += x * x;
    cnorm = std::sqrt(cnorm);

    std::vector<double> cosines(T, 0.0);
    for (int t = 0; t < T; ++t) {
        if (!valid[t]) continue;
        const double* x = embeddings.row(t);
        double dot = 0.0, xnorm = 0.0;
        for (int d = 0; d < D; ++d) {
            dot += x[d] * condition.vec[d];
            xnorm += x[d] * x[d];
        }
        xnorm = std::sqrt(xnorm);
        cosines[t] = (xnorm == 0.0 || cnorm == 0.0) ? 0.0 : dot / (xnorm * cnorm);
    }
    return zscore(cosines, valid);
}

namespace {

// indices of valid frames sorted by score descending, ties to the lower index
std::vector<int> rank_desc(const std::vector<double>& score, const BoolVec& valid) {
    std::vector<int> idx;
    for (int t = 0; t < static_cast<int>(valid.size()); ++t) {
        if (valid[t]) idx.push_back(t);
    }
    std::stable_sort(idx.begin(), idx.end(),
                     [&](int a, int b) { return score[a] > score[b]; });
    return idx;
}

}  // namespace

MaskPlan cfs_select(const std::vector<double>& s_dyn, const std::vector<double>& s_sem, int K,
                    const Config& cfg, const BoolVec& valid) {
    const int T = static_cast<int>(valid.size());
    if (K < 0) throw Error(ErrorCode::RangeError, "cfs_select: K must be >= 0");
    if (s_dyn.size() != valid.size() || s_sem.size() != valid.size()) {
        throw Error(ErrorCode::ShapeMismatch, "cfs_select: score length mismatch");
    }
    const int n_valid = count_true(valid);
    const int target = std::min(K, n_valid);

    MaskPlan plan;
    plan.budget = K;
    if (target == 0) return plan;

    const int n_sem = static_cast<int>(std::llround(cfg.lambda_sem * K));
    const int n_dyn = K - n_sem;

    std::vector<char> selected(T, 0);
    auto push = [&](int t, MaskProvenance p) {
        plan.positions.push_back(t);
        plan.provenance.push_back(p);
        selected[t] = 1;
    };

    const std::vector<int> by_dyn = rank_desc(s_dyn, valid);
    const std::vector<int> by_sem = rank_desc(s_sem, valid);

    for (int i = 0; i < static_cast<int>(by_dyn.size()) && static_cast<int>(plan.positions.size()) < n_dyn; ++i) {
        push(by_dyn[i], MaskProvenance::Dynamic);
    }
    int sem_taken = 0;
    for (int i = 0; i < static_cast<int>(by_sem.size()) && sem_taken < n_sem; ++i) {
        if (selected[by_sem[i]]) continue;
        push(by_sem[i], MaskProvenance::Semantic);
        sem_taken++;
    }

    const int n_seeds = static_cast<int>(plan.positions.size());
    for (int i = 0; i < n_seeds; ++i) {
        const int seed = plan.positions[i];
        for (int r = 1; r <= cfg.r_exp; ++r) {
            for (int off : {r, -r}) {
                int t = seed + off;
                if (t < 0 || t >= T || !valid[t] || selected[t]) continue;
                push(t, MaskProvenance::Expansion);
            }
        }
    }

    if (static_cast<int>(plan.positions.size()) > target) {
        for (int i = target; i < static_cast<int>(plan.positions.size()); ++i) {
            selected[plan.positions[i]] = 0;
        }
        plan.positions.resize(target);
        plan.provenance.resize(target);
    } else if (static_cast<int>(plan.positions.size()) < target) {
        for (int t : by_dyn) {
            if (static_cast<int>(plan.positions.size()) >= target) break;
            if (!selected[t]) push(t, MaskProvenance::Fill);
        }
    }
    return plan;
}

MaskPlan uniform_select(int K, const BoolVec& valid, Rng& rng) {
    if (K < 0) throw Error(ErrorCode::RangeError, "uniform_select: K must be >= 0");
    std::vector<int> pool;
    for (int t = 0; t < static_cast<int>(valid.size()); ++t) {
        if (valid[t]) pool.push_back(t);
    }
    const int target = std::min(K, static_cast<int>(pool.size()));
    // partial Fisher-Yates
    for (int i = 0; i < target; ++i) {
        int j = rng.uniform_int(i, static_cast<int>(pool.size()) - 1);
        std::swap(pool[i], pool[j]);
    }
    MaskPlan plan;
    plan.budget = K;
    for (int i = 0; i < target; ++i) {
        plan.positions.push_back(pool[i]);
        plan.provenance.push_back(MaskProvenance::Uniform);
    }
    return plan;
}

TrainingExample apply_masking(const std::vector<int>& tokens, const BoolVec& valid,
                              const MaskPlan& plan, const BertRatios& ratios, int vocab, Rng& rng) {
    const int T = static_cast<int>(tokens.size());
    TrainingExample ex;
    ex.targets = tokens;
    ex.loss_mask.assign(T, 0);

    std::vector<int> corrupted = tokens;
    for (int t : plan.positions) {
        if (t < 0 || t >= T) {
            throw Error(ErrorCode::OutOfRange, "apply_masking: plan position out of range");
        }
        ex.loss_mask[t] = 1;
        double u = rng.uniform01();
        if (u < ratios.mask) {
            corrupted[t] = kMaskToken;
        } else if (u < ratios.mask + ratios.random) {
            corrupted[t] = rng.uniform_int(1, vocab);
        }
        // else: keep the original token
    }
    ex.corrupted = TokenState(std::move(corrupted), BoolVec(T, 0), valid);
    return ex;
}

TrainingExample build_training_example(const std::vector<int>& tokens, const BoolVec& valid,
                                       const Mat& embeddings, const TextCondition& condition,
                                       int vocab, const Config& cfg, Rng& rng,
                                       SelectionPolicy policy, std::optional<double> forced_r) {
    if (static_cast<int>(tokens.size()) != embeddings.rows ||
        tokens.size() != valid.size()) {
        throw Error(ErrorCode::ShapeMismatch, "build_training_example: length mismatch");
    }
    const double r = forced_r.has_value() ? *forced_r : rng.uniform01();
    const int n_valid = count_true(valid);
    const int K = static_cast<int>(std::ceil(cosine_ratio(r) * n_valid));

    SpectralProfile profile = msd_sequence(embeddings, valid, cfg);

    MaskPlan plan;
    if (policy == SelectionPolicy::ContentFocused) {
        std::vector<double> s_dyn = dynamic_scores(profile, valid);
        std::vector<double> s_sem = semantic_scores(embeddings, condition, valid);
        plan = cfs_select(s_dyn, s_sem, K, cfg, valid);
    } else {
        plan = uniform_select(K, valid, rng);
    }

    TrainingExample ex = apply_masking(tokens, valid, plan, cfg.bert_ratios, vocab, rng);
    ex.condition = condition;
    ex.profile = std::move(profile);
    return ex;
}

}  // namespace dynmask
