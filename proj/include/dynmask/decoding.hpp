#pragma once

#include "dynmask/attention.hpp"
#include "dynmask/core.hpp"

namespace dynmask {

struct StepRecord {
    int step = 0;                    // 1-based
    std::vector<int> newly_frozen;   // ascending position indices
    std::vector<double> b;           // exploration scores
    std::vector<double> temps;
    std::vector<double> sigmas;
    std::vector<int> tokens;         // sampled tokens (frozen pass through)
    std::vector<double> confidences;
};

struct DecodeTrace {
    std::vector<StepRecord> steps;
    TokenState final_state;
};

// b_t = sigmoid(lambda_d * zscore(omega) + (1 - lambda_d) * zscore(1 - max_v p)).
// A constant omega (e.g. the all-MASK first step) contributes 0 via the
// zero-variance guard.
std::vector<double> exploration_scores(const SpectralProfile& profile, const Mat& probs,
                                       double lambda_d, const BoolVec& valid);

// T_t = t_global * (1 + beta * b_t)
std::vector<double> adaptive_temperature(double t_global, double beta,
                                         const std::vector<double>& b);

// sigma_t = sigma_max * b_t
std::vector<double> adaptive_noise(double sigma_max, const std::vector<double>& b);

// Cosine keep schedule. masked_after(n,s,S) is the number of still-masked
// positions after step s: ceil(n * gamma(s/S)) for s < S, 0 at s = S.
int masked_after(int n_valid, int step, int total_steps);
// Newly frozen at step s: masked_after(s-1) - masked_after(s), with m_0 = n.
int keep_count(int n_valid, int step, int total_steps);

struct SampleResult {
    std::vector<int> tokens;
    std::vector<double> confidences;
};

// Per unfrozen valid position: argmax of logits/T_t + sigma_t * Gumbel noise;
// confidence is the noise-free probability softmax(logits/T_t)[token].
// Positions with sigma_t == 0 draw no noise. Frozen positions pass through
// with confidence 1.
SampleResult sample_step(const Mat& logits, const std::vector<double>& temps,
                         const std::vector<double>& noises, const TokenState& state, Rng& rng);

// Complexity-aware iterative decoding. Starts fully masked; each step
// recomputes the spectral profile from the current best-guess embeddings
// (frozen tokens, else the last sample, else the codebook centroid), runs the
// model, samples with per-position temperature and noise, and freezes the
// most confident positions per the cosine keep schedule.
DecodeTrace decode(const ToyModel& model, const Codebook& codebook,
                   const TextCondition& condition, int length, const Config& cfg, Rng& rng);

}  // namespace dynmask
