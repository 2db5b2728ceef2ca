#pragma once

#include "dynmask/core.hpp"

namespace dynmask {

struct VelocityField {
    Mat v;  // T x D, row 0 replicates row 1
};

struct SimilarityMatrix {
    Mat s;         // T x T, entries <= 0 on valid pairs
    BoolVec valid; // length T
};

// Temporal first difference of embedding rows: v_t = x_t - x_{t-1}, with the
// first row replicated from the second.
VelocityField velocity(const Mat& embeddings);

// Unnormalized Type-II DCT along the row (time) axis, per column:
//   F[k][d] = sum_n window[n][d] * cos((pi/W) * (n + 1/2) * k)
Mat dct_window(const Mat& window);

// Cross-dimension L2 magnitude per frequency bin: f_k = sqrt(sum_d F[k][d]^2).
std::vector<double> spectrum_magnitude(const Mat& F);

// phi = f / (||f||_2 + epsilon); an all-zero spectrum stays all zero.
std::vector<double> normalize_msd(const std::vector<double>& f, double epsilon);

// Mean spectral activation of a normalized descriptor.
double omega(const std::vector<double>& phi);

// Full per-frame descriptor pipeline over a sliding velocity window of length
// W centered at each valid frame (floor(W/2) left, edge rows replicated).
// Parallel over frames; every output row is independent, so results are
// bit-identical for any thread count.
SpectralProfile msd_sequence(const Mat& embeddings, const BoolVec& valid, const Config& cfg);

// Low-frequency-emphasized weights: w_k = exp(-k/3) / sum exp(-k'/3).
std::vector<double> frequency_weights(int W);

// S = -(1/tau) * sum_k w_k (phi_i[k] - phi_j[k])^2
double spectral_similarity(const std::vector<double>& phi_i, const std::vector<double>& phi_j,
                           const std::vector<double>& w, double tau);

// Pairwise spectral similarity over valid frames. Invalid rows and columns
// are filled with (matrix minimum - 1) and excluded by the valid mask.
SimilarityMatrix similarity_matrix(const SpectralProfile& profile, const Config& cfg);

// Mean L2 velocity magnitude over the same sliding window as msd_sequence.
// Baseline complexity signal for the signal-comparison experiment.
std::vector<double> velocity_magnitude_signal(const Mat& embeddings, const BoolVec& valid,
                                              const Config& cfg);

}  // namespace dynmask
