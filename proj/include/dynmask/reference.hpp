#pragma once

#include "dynmask/attention.hpp"
#include "dynmask/core.hpp"
#include "dynmask/masking.hpp"
#include "dynmask/spectral.hpp"

// Serial, independently coded implementations of the parallel kernels and of
// the baseline decoding loop. Tests use these as oracles; the benchmark
// compares them against the OpenMP kernels. None of this code shares logic
// with the main implementations beyond the shared data types.
namespace dynmask::reference {

// Direct double-loop Type-II DCT.
Mat naive_dct(const Mat& window);

// Exhaustive nearest-neighbor scan, ties to the lowest index.
std::vector<int> nearest_tokens(const Mat& features, const Codebook& codebook);

// Serial end-to-end descriptor pipeline.
SpectralProfile msd_serial(const Mat& embeddings, const BoolVec& valid, const Config& cfg);

// Serial pairwise similarity.
SimilarityMatrix similarity_serial(const SpectralProfile& profile, const Config& cfg);

// Independent implementation of the dual-quota selection rules.
MaskPlan cfs_reference(const std::vector<double>& s_dyn, const std::vector<double>& s_sem, int K,
                       const Config& cfg, const BoolVec& valid);

// Fusion-free transformer forward (no spectral prior anywhere in the code
// path). Arithmetic matches the main forward so a zero fusion weight can be
// checked bitwise.
ForwardResult plain_forward(const ToyModel& model, const TokenState& tokens,
                            const TextCondition& condition);

struct BaselineStep {
    std::vector<int> tokens;
    std::vector<double> confidences;
    std::vector<int> newly_frozen;
};

struct BaselineTrace {
    std::vector<BaselineStep> steps;
    std::vector<int> final_tokens;
};

// Plain confidence-based iterative decoding: greedy argmax at the global
// temperature, cosine keep schedule, no exploration scores, no noise, no
// spectral prior.
BaselineTrace confidence_decode(const ToyModel& model, const TextCondition& condition, int length,
                                const Config& cfg);

}  // namespace dynmask::reference
