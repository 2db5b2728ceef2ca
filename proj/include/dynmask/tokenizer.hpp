#pragma once

#include <string>

#include "dynmask/core.hpp"

namespace dynmask {

enum class SynthKind { Static, Sine, Chirp, Noise, Composite };

// Frame labels used throughout the synthetic corpora.
enum ComplexityLabel : int { kLabelStatic = 0, kLabelPeriodic = 1, kLabelIrregular = 2 };

struct SynthSegment {
    SynthKind kind = SynthKind::Static;  // never Composite
    int length = 0;
    int bin = 1;        // sine: DCT bin m
    int bin_end = 1;    // chirp: final bin
};

struct SynthSpec {
    SynthKind kind = SynthKind::Static;
    int frames = 0;        // T
    int feature_dim = 0;   // D_m
    double amplitude = 1.0;
    std::uint64_t seed = 0;
    int bin = 1;           // sine
    int bin_end = 1;       // chirp
    std::vector<SynthSegment> segments;  // composite only

    // Window length the sine/chirp bins refer to; must satisfy 1 <= m <= W-1.
    int window = 8;
};

struct LabeledSequence {
    MotionSequence motion;
    std::vector<int> labels;  // per frame, ComplexityLabel values
};

struct LabeledCorpus {
    std::vector<MotionSequence> sequences;
    std::vector<std::vector<int>> complexity_labels;
    std::vector<TextCondition> text_conditions;
};

// Nearest-neighbor codebook lookup, ties resolved to the lowest index.
// Parallel over frames.
std::vector<int> quantize(const Mat& features, const Codebook& codebook);

// Row t of the result is the codebook entry for token z_t; MASK positions
// receive mask_fill.
Mat lookup_embeddings(const TokenState& tokens, const Codebook& codebook,
                      const std::vector<double>& mask_fill);

std::vector<double> codebook_centroid(const Codebook& codebook);

// Lloyd iterations with farthest-point initialization; empty clusters are
// reseeded to the point farthest from its assigned centroid.
Codebook fit_codebook(const Mat& features, int vocab, int iters, std::uint64_t seed);

// Total squared quantization error of features under a codebook.
double quantization_error(const Mat& features, const Codebook& codebook);

LabeledSequence synth_motion(const SynthSpec& spec);

// Recipe grammar (see io.cpp for the parser):
//   static | noise | sine(m) | chirp(a->b) | composite(seg:len|seg:len|...)
// followed by optional ",T=..", ",D=..", ",amp=..".
SynthSpec parse_synth_spec(const std::string& recipe, int window);

// count sequences from one recipe, per-sequence seeds and text conditions
// derived from (seed, index).
LabeledCorpus make_corpus(const std::string& recipe, int count, int window, std::uint64_t seed);

}  // namespace dynmask
