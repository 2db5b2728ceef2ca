#pragma once

#include <cstdint>
#include <map>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace dynmask {

// ---------------------------------------------------------------------------
// Errors

enum class ErrorCode {
    RangeError,
    UnknownKey,
    EmptyInput,
    DimMismatch,
    TokenOutOfRange,
    TooFewSamples,
    BadSpec,
    TooShort,
    ShapeMismatch,
    NegativeInput,
    OutOfRange,
    EmptyMask,
    NonFinite,
    BadProbabilities,
    FormatError,
    IoError,
};

const char* error_code_name(ErrorCode c);

class Error : public std::runtime_error {
  public:
    Error(ErrorCode code, const std::string& msg)
        : std::runtime_error(std::string(error_code_name(code)) + ": " + msg), code_(code) {}

    ErrorCode code() const { return code_; }

  private:
    ErrorCode code_;
};

// ---------------------------------------------------------------------------
// Small dense row-major matrix. Everything in this library is desk scale,
// so a flat vector<double> with explicit loops beats pulling in a BLAS.

struct Mat {
    int rows = 0;
    int cols = 0;
    std::vector<double> v;

    Mat() = default;
    Mat(int r, int c, double fill = 0.0)
        : rows(r), cols(c), v(static_cast<size_t>(r) * static_cast<size_t>(c), fill) {}

    double& operator()(int r, int c) { return v[static_cast<size_t>(r) * cols + c]; }
    double operator()(int r, int c) const { return v[static_cast<size_t>(r) * cols + c]; }

    double* row(int r) { return v.data() + static_cast<size_t>(r) * cols; }
    const double* row(int r) const { return v.data() + static_cast<size_t>(r) * cols; }

    bool same_shape(const Mat& o) const { return rows == o.rows && cols == o.cols; }
};

bool all_finite(const Mat& m);
bool all_finite(const std::vector<double>& v);
void require_finite(const Mat& m, const char* what);
void require_finite(const std::vector<double>& v, const char* what);

// Validity masks. vector<uint8_t> so we can hand out raw pointers.
using BoolVec = std::vector<std::uint8_t>;

int count_true(const BoolVec& b);

// ---------------------------------------------------------------------------
// Deterministic RNG.
//
// mt19937_64 output is fully specified by the standard, but the std
// distributions are not, so the uniform/normal/Gumbel transforms are done by
// hand to keep byte-identical results across compilers. Named sub-streams are
// derived from (seed, stream, id) so independent consumers never share state.

class Rng {
  public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}

    static Rng derive(std::uint64_t seed, std::string_view stream, std::uint64_t id = 0);

    std::uint64_t next_u64() { return gen_(); }

    // [0, 1)
    double uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // (0, 1), safe for log()
    double uniform01_open() {
        return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
    }

    double normal();
    double gumbel();

    // uniform over {lo, ..., hi} inclusive
    int uniform_int(int lo, int hi);

  private:
    std::mt19937_64 gen_;
};

// ---------------------------------------------------------------------------
// Hyperparameter configuration

struct BertRatios {
    double mask = 0.8;
    double random = 0.1;
    double keep = 0.1;
};

struct Config {
    int window = 8;           // W: spectral window length, even, >= 4
    double epsilon = 1e-8;    // normalization guard
    double tau = 1.0;         // spectral similarity scale, > 0
    double alpha0 = 0.2;      // attention fusion base weight, in [0,1]
    double lambda_sem = 0.3;  // semantic quota fraction, in [0,1]
    int r_exp = 1;            // temporal expansion radius, >= 0
    double lambda_d = 0.5;    // decode-time complexity/uncertainty blend, in [0,1]
    double beta = 0.5;        // temperature adaptation strength, >= 0
    double sigma_max = 0.1;   // maximum decode noise scale, >= 0
    int steps = 10;           // decode steps, >= 1
    BertRatios bert_ratios;   // nonnegative, sums to 1 within 1e-9
    double t_global = 1.0;    // base sampling temperature, > 0
    std::uint64_t seed = 0;
    int layers = 2;
    int heads = 2;
    int dim = 16;  // model width, heads must divide dim
};

// Builds a fully defaulted Config from a key=value map. Unknown keys and
// out-of-range values are rejected.
Config validate_config(const std::map<std::string, std::string>& raw);

// Inverse of validate_config for round-trip checks and manifests.
std::map<std::string, std::string> config_to_map(const Config& cfg);

// ---------------------------------------------------------------------------
// Domain types

inline constexpr int kMaskToken = 0;  // tokens are 1-based, 0 is the MASK sentinel

struct MotionSequence {
    Mat frames;    // T x D_m
    BoolVec valid; // length T

    MotionSequence() = default;
    MotionSequence(Mat frames_, BoolVec valid_);

    int length() const { return frames.rows; }
    int feature_dim() const { return frames.cols; }
};

struct Codebook {
    Mat entries;  // V x D

    Codebook() = default;
    explicit Codebook(Mat entries_);

    int size() const { return entries.rows; }
    int dim() const { return entries.cols; }
};

struct TokenState {
    std::vector<int> tokens;  // values in {1..V} or kMaskToken
    BoolVec frozen;
    BoolVec valid;

    TokenState() = default;
    TokenState(std::vector<int> tokens_, BoolVec frozen_, BoolVec valid_);

    int length() const { return static_cast<int>(tokens.size()); }
    void check() const;  // frozen positions must not be MASK
};

struct TextCondition {
    std::vector<double> vec;

    TextCondition() = default;
    explicit TextCondition(std::vector<double> v);

    int dim() const { return static_cast<int>(vec.size()); }
};

struct SpectralProfile {
    Mat phi;                    // T x W, rows unit L2 norm or all-zero
    std::vector<double> omega;  // length T
    BoolVec valid;              // validity the profile was computed under

    int length() const { return phi.rows; }
    int window() const { return phi.cols; }
    void check() const;
};

// ---------------------------------------------------------------------------
// z-score over valid entries, population standard deviation. Zero-variance
// inputs map to all zeros so constant signals never abort downstream stages.
std::vector<double> zscore(const std::vector<double>& values, const BoolVec& valid);

// Spearman rank correlation with average ranks for ties; 0 when either side
// has zero rank variance.
double spearman(const std::vector<double>& x, const std::vector<double>& y);

}  // namespace dynmask
