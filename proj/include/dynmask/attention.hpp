#pragma once

#include "dynmask/core.hpp"
#include "dynmask/masking.hpp"
#include "dynmask/spectral.hpp"

namespace dynmask {

// Minimal trainable masked-token transformer. Sequence layout is one
// prepended condition slot followed by T motion slots; pre-layer
// normalization, no biases on the projections, GELU feed-forward.
struct ToyModel {
    int vocab = 0;      // V
    int dim = 0;
    int heads = 0;
    int layer_count = 0;
    int t_max = 0;
    int cond_dim = 0;   // E

    Mat tok_emb;    // (V+1) x dim, last row embeds MASK
    Mat pos_emb;    // t_max x dim
    Mat cond_proj;  // E x dim
    Mat out_proj;   // dim x V

    struct Layer {
        Mat wq, wk, wv, wo;  // dim x dim
        Mat w1;              // dim x 4*dim
        Mat w2;              // 4*dim x dim
        std::vector<double> ln1_g, ln1_b, ln2_g, ln2_b;
    };
    std::vector<Layer> layers;

    static ToyModel with_shape(int vocab, int dim, int heads, int layer_count, int t_max,
                               int cond_dim);
    static ToyModel init(int vocab, int dim, int heads, int layer_count, int t_max, int cond_dim,
                         Rng& rng);
    static ToyModel zeros_like(const ToyModel& m);
};

// Named view over every trainable tensor, used by SGD, checkpointing, and
// finite-difference checks.
struct ParamView {
    std::string name;
    double* data;
    size_t size;
    int rows, cols;
};
std::vector<ParamView> param_views(ToyModel& m);

struct AttentionRecord {
    // [layer][head], each (T+1) x (T+1); probs rows over valid keys sum to 1
    std::vector<std::vector<Mat>> fused_logits;
    std::vector<std::vector<Mat>> probs;
};

struct ForwardResult {
    Mat logits;  // T x V
    AttentionRecord record;
};

// alpha_l = alpha0 * exp(-l / 3), layers indexed from 0.
double alpha_schedule(double alpha0, int layer);

// Eq.-style logit fusion for one (T+1)x(T+1) attention logit matrix. Slot 0
// is the condition. Below the bypass threshold (alpha < 1e-12) A is returned
// unchanged; otherwise each valid query row is z-scored over its valid keys,
// motion-to-motion entries blend in the z-scored spectral similarity, entries
// touching the condition slot use the z-scored logits alone, and invalid keys
// get a -inf sentinel.
Mat fuse_logits(const Mat& A, const SimilarityMatrix& s_freq, double alpha_l,
                const BoolVec& valid);

ForwardResult attention_forward(const ToyModel& model, const TokenState& corrupted,
                                const TextCondition& condition, const SpectralProfile& profile,
                                const Config& cfg);

// Mean over masked positions of -log softmax(logits)[target].
double masked_cross_entropy(const Mat& logits, const std::vector<int>& targets,
                            const BoolVec& loss_mask);

struct BackwardResult {
    double loss = 0.0;
    ToyModel grads;  // same shapes as the model
};

// Analytic gradients of the masked cross-entropy for one training example.
// The spectral prior (and its z-score) is a constant; gradient does flow
// through the z-scoring of the learned logits so it matches the true
// derivative of the forward pass.
BackwardResult backward(const ToyModel& model, const TrainingExample& example, const Config& cfg);

struct TrainItem {
    std::vector<int> tokens;
    BoolVec valid;
    Mat embeddings;  // codebook lookup of tokens, T x D
    TextCondition condition;
};

struct TrainOptions {
    int epochs = 30;
    double lr = 0.05;
    SelectionPolicy policy = SelectionPolicy::ContentFocused;
};

// Plain SGD over the corpus, one update per example, sequential by contract.
// Returns the per-epoch mean loss. Example RNG streams derive from
// (cfg.seed, epoch * size + index) so runs are reproducible.
std::vector<double> train(ToyModel& model, const std::vector<TrainItem>& corpus, const Config& cfg,
                          const TrainOptions& opt);

}  // namespace dynmask
