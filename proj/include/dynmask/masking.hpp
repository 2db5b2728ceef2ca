#pragma once

#include <optional>

#include "dynmask/core.hpp"

namespace dynmask {

enum class MaskProvenance { Dynamic, Semantic, Expansion, Fill, Uniform };

const char* provenance_name(MaskProvenance p);

struct MaskPlan {
    std::vector<int> positions;               // selection order
    std::vector<MaskProvenance> provenance;   // parallel to positions
    int budget = 0;                           // requested K
};

struct TrainingExample {
    TokenState corrupted;
    std::vector<int> targets;   // original tokens
    BoolVec loss_mask;          // true exactly on selected positions
    TextCondition condition;
    SpectralProfile profile;
};

enum class SelectionPolicy { ContentFocused, Uniform };

// gamma(r) = cos(pi r / 2); endpoints return the exact values 1 and 0.
double cosine_ratio(double r);

std::vector<double> dynamic_scores(const SpectralProfile& profile, const BoolVec& valid);

// z-scored cosine similarity between frame embeddings and the text condition.
// Zero-norm rows (or condition) contribute cosine 0 before z-scoring.
std::vector<double> semantic_scores(const Mat& embeddings, const TextCondition& condition,
                                    const BoolVec& valid);

// Dual-quota selection:
//   (a) n_sem = round(lambda K), n_dyn = K - n_sem
//   (b) top n_dyn valid frames by s_dyn, then top n_sem by s_sem among the rest
//       (descending, ties to the lower index)
//   (c) per seed in order, neighbors at offsets +1,-1,...,+r,-r (valid, new)
//   (d) truncate to K; fill any shortfall with remaining frames by s_dyn
MaskPlan cfs_select(const std::vector<double>& s_dyn, const std::vector<double>& s_sem, int K,
                    const Config& cfg, const BoolVec& valid);

// K distinct valid positions drawn uniformly, tagged Uniform. Baseline policy.
MaskPlan uniform_select(int K, const BoolVec& valid, Rng& rng);

// BERT-style corruption of the selected positions: MASK / random token / keep
// with the configured ratios. loss_mask marks every selected position.
TrainingExample apply_masking(const std::vector<int>& tokens, const BoolVec& valid,
                              const MaskPlan& plan, const BertRatios& ratios, int vocab, Rng& rng);

// Full training-example assembly: draw r ~ U(0,1) (or use forced_r), set
// K = ceil(gamma(r) * #valid), score, select, corrupt.
TrainingExample build_training_example(const std::vector<int>& tokens, const BoolVec& valid,
                                       const Mat& embeddings, const TextCondition& condition,
                                       int vocab, const Config& cfg, Rng& rng,
                                       SelectionPolicy policy = SelectionPolicy::ContentFocused,
                                       std::optional<double> forced_r = std::nullopt);

}  // namespace dynmask
