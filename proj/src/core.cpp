#include "dynmask/core.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>

namespace dynmask {

const char* error_code_name(ErrorCode c) {
    switch (c) {
        case ErrorCode::RangeError: return "RangeError";
        case ErrorCode::UnknownKey: return "UnknownKey";
        case ErrorCode::EmptyInput: return "EmptyInput";
        case ErrorCode::DimMismatch: return "DimMismatch";
        case ErrorCode::TokenOutOfRange: return "TokenOutOfRange";
        case ErrorCode::TooFewSamples: return "TooFewSamples";
        case ErrorCode::BadSpec: return "BadSpec";
        case ErrorCode::TooShort: return "TooShort";
        case ErrorCode::ShapeMismatch: return "ShapeMismatch";
        case ErrorCode::NegativeInput: return "NegativeInput";
        case ErrorCode::OutOfRange: return "OutOfRange";
        case ErrorCode::EmptyMask: return "EmptyMask";
        case ErrorCode::NonFinite: return "NonFinite";
        case ErrorCode::BadProbabilities: return "BadProbabilities";
        case ErrorCode::FormatError: return "FormatError";
        case ErrorCode::IoError: return "IoError";
    }
    return "Error";
}

bool all_finite(const Mat& m) { return all_finite(m.v); }

bool all_finite(const std::vector<double>& v) {
    for (double x : v) {
        if (!std::isfinite(x)) return false;
    }
    return true;
}

void require_finite(const Mat& m, const char* what) {
    if (!all_finite(m)) throw Error(ErrorCode::NonFinite, what);
}

void require_finite(const std::vector<double>& v, const char* what) {
    if (!all_finite(v)) throw Error(ErrorCode::NonFinite, what);
}

int count_true(const BoolVec& b) {
    int n = 0;
    for (auto x : b) n += (x != 0);
    return n;
}

// ---------------------------------------------------------------------------
// Rng

static std::uint64_t fnv1a64(std::string_view s, std::uint64_t h = 0xcbf29ce484222325ULL) {
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

static std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

Rng Rng::derive(std::uint64_t seed, std::string_view stream, std::uint64_t id) {
    std::uint64_t h = fnv1a64(stream);
    h = splitmix64(h ^ splitmix64(seed));
    h = splitmix64(h ^ splitmix64(id + 0x51ed2701ULL));
    return Rng(h);
}

double Rng::normal() {
    // Box-Muller, no cached second sample: one call, two uniforms, always.
    double u1 = uniform01_open();
    double u2 = uniform01();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

double Rng::gumbel() {
    double u = uniform01_open();
    return -std::log(-std::log(u));
}

int Rng::uniform_int(int lo, int hi) {
    std::uint64_t range = static_cast<std::uint64_t>(hi - lo) + 1;
    return lo + static_cast<int>(next_u64() % range);
}

// ---------------------------------------------------------------------------
// Config parsing

namespace {

double parse_double(const std::string& key, const std::string& s) {
    double out = 0.0;
    const char* first = s.data();
    const char* last = s.data() + s.size();
    auto [ptr, ec] = std::from_chars(first, last, out);
    if (ec != std::errc() || ptr != last) {
        throw Error(ErrorCode::RangeError, key + ": not a number: '" + s + "'");
    }
    return out;
}

long long parse_int(const std::string& key, const std::string& s) {
    long long out = 0;
    const char* first = s.data();
    const char* last = s.data() + s.size();
    auto [ptr, ec] = std::from_chars(first, last, out);
    if (ec != std::errc() || ptr != last) {
        throw Error(ErrorCode::RangeError, key + ": not an integer: '" + s + "'");
    }
    return out;
}

std::uint64_t parse_u64(const std::string& key, const std::string& s) {
    std::uint64_t out = 0;
    const char* first = s.data();
    const char* last = s.data() + s.size();
    auto [ptr, ec] = std::from_chars(first, last, out);
    if (ec != std::errc() || ptr != last) {
        throw Error(ErrorCode::RangeError, key + ": not an unsigned integer: '" + s + "'");
    }
    return out;
}

BertRatios parse_ratios(const std::string& key, const std::string& s) {
    std::vector<std::string> parts;
    size_t start = 0;
    while (true) {
        size_t pos = s.find(',', start);
        if (pos == std::string::npos) {
            parts.push_back(s.substr(start));
            break;
        }
        parts.push_back(s.substr(start, pos - start));
        start = pos + 1;
    }
    if (parts.size() != 3) {
        throw Error(ErrorCode::RangeError, key + ": expected three comma-separated values");
    }
    BertRatios r;
    r.mask = parse_double(key, parts[0]);
    r.random = parse_double(key, parts[1]);
    r.keep = parse_double(key, parts[2]);
    return r;
}

std::string fmt_g17(double x) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", x);
    return buf;
}

}  // namespace

Config validate_config(const std::map<std::string, std::string>& raw) {
    Config cfg;
    for (const auto& [key, value] : raw) {
        if (key == "W") {
            cfg.window = static_cast<int>(parse_int(key, value));
        } else if (key == "epsilon") {
            cfg.epsilon = parse_double(key, value);
        } else if (key == "tau") {
            cfg.tau = parse_double(key, value);
        } else if (key == "alpha0") {
            cfg.alpha0 = parse_double(key, value);
        } else if (key == "lambda_sem") {
            cfg.lambda_sem = parse_double(key, value);
        } else if (key == "r_exp") {
            cfg.r_exp = static_cast<int>(parse_int(key, value));
        } else if (key == "lambda_d") {
            cfg.lambda_d = parse_double(key, value);
        } else if (key == "beta") {
            cfg.beta = parse_double(key, value);
        } else if (key == "sigma_max") {
            cfg.sigma_max = parse_double(key, value);
        } else if (key == "steps") {
            cfg.steps = static_cast<int>(parse_int(key, value));
        } else if (key == "bert_ratios") {
            cfg.bert_ratios = parse_ratios(key, value);
        } else if (key == "t_global") {
            cfg.t_global = parse_double(key, value);
        } else if (key == "seed") {
            cfg.seed = parse_u64(key, value);
        } else if (key == "layers") {
            cfg.layers = static_cast<int>(parse_int(key, value));
        } else if (key == "heads") {
            cfg.heads = static_cast<int>(parse_int(key, value));
        } else if (key == "dim") {
            cfg.dim = static_cast<int>(parse_int(key, value));
        } else {
            throw Error(ErrorCode::UnknownKey, key);
        }
    }

    if (cfg.window < 4 || cfg.window % 2 != 0) {
        throw Error(ErrorCode::RangeError, "W: must be even and >= 4");
    }
    if (!(cfg.epsilon > 0.0) || !std::isfinite(cfg.epsilon)) {
        throw Error(ErrorCode::RangeError, "epsilon: must be > 0");
    }
    if (!(cfg.tau > 0.0) || !std::isfinite(cfg.tau)) {
        throw Error(ErrorCode::RangeError, "tau: must be > 0");
    }
    if (!(cfg.alpha0 >= 0.0 && cfg.alpha0 <= 1.0)) {
        throw Error(ErrorCode::RangeError, "alpha0: must be in [0,1]");
    }
    if (!(cfg.lambda_sem >= 0.0 && cfg.lambda_sem <= 1.0)) {
        throw Error(ErrorCode::RangeError, "lambda_sem: must be in [0,1]");
    }
    if (cfg.r_exp < 0) {
        throw Error(ErrorCode::RangeError, "r_exp: must be >= 0");
    }
    if (!(cfg.lambda_d >= 0.0 && cfg.lambda_d <= 1.0)) {
        throw Error(ErrorCode::RangeError, "lambda_d: must be in [0,1]");
    }
    if (!(cfg.beta >= 0.0) || !std::isfinite(cfg.beta)) {
        throw Error(ErrorCode::RangeError, "beta: must be >= 0");
    }
    if (!(cfg.sigma_max >= 0.0) || !std::isfinite(cfg.sigma_max)) {
        throw Error(ErrorCode::RangeError, "sigma_max: must be >= 0");
    }
    if (cfg.steps < 1) {
        throw Error(ErrorCode::RangeError, "steps: must be >= 1");
    }
    const BertRatios& b = cfg.bert_ratios;
    if (b.mask < 0.0 || b.random < 0.0 || b.keep < 0.0 ||
        std::abs(b.mask + b.random + b.keep - 1.0) > 1e-9) {
        throw Error(ErrorCode::RangeError, "bert_ratios: must be nonnegative and sum to 1");
    }
    if (!(cfg.t_global > 0.0) || !std::isfinite(cfg.t_global)) {
        throw Error(ErrorCode::RangeError, "t_global: must be > 0");
    }
    if (cfg.layers < 1) {
        throw Error(ErrorCode::RangeError, "layers: must be >= 1");
    }
    if (cfg.heads < 1) {
        throw Error(ErrorCode::RangeError, "heads: must be >= 1");
    }
    if (cfg.dim < 1 || cfg.dim % cfg.heads != 0) {
        throw Error(ErrorCode::RangeError, "dim: must be >= 1 and divisible by heads");
    }
    return cfg;
}

std::map<std::string, std::string> config_to_map(const Config& cfg) {
    std::map<std::string, std::string> m;
    m["W"] = std::to_string(cfg.window);
    m["epsilon"] = fmt_g17(cfg.epsilon);
    m["tau"] = fmt_g17(cfg.tau);
    m["alpha0"] = fmt_g17(cfg.alpha0);
    m["lambda_sem"] = fmt_g17(cfg.lambda_sem);
    m["r_exp"] = std::to_string(cfg.r_exp);
    m["lambda_d"] = fmt_g17(cfg.lambda_d);
    m["beta"] = fmt_g17(cfg.beta);
    m["sigma_max"] = fmt_g17(cfg.sigma_max);
    m["steps"] = std::to_string(cfg.steps);
    m["bert_ratios"] = fmt_g17(cfg.bert_ratios.mask) + "," + fmt_g17(cfg.bert_ratios.random) +
                       "," + fmt_g17(cfg.bert_ratios.keep);
    m["t_global"] = fmt_g17(cfg.t_global);
    m["seed"] = std::to_string(cfg.seed);
    m["layers"] = std::to_string(cfg.layers);
    m["heads"] = std::to_string(cfg.heads);
    m["dim"] = std::to_string(cfg.dim);
    return m;
}

// ---------------------------------------------------------------------------
// Domain types

MotionSequence::MotionSequence(Mat frames_, BoolVec valid_)
    : frames(std::move(frames_)), valid(std::move(valid_)) {
    if (frames.rows < 1) throw Error(ErrorCode::RangeError, "MotionSequence: T must be >= 1");
    if (static_cast<int>(valid.size()) != frames.rows) {
        throw Error(ErrorCode::ShapeMismatch, "MotionSequence: valid mask length != T");
    }
    require_finite(frames, "MotionSequence: frames");
    if (count_true(valid) == 0) {
        throw Error(ErrorCode::RangeError, "MotionSequence: no valid frames");
    }
}

Codebook::Codebook(Mat entries_) : entries(std::move(entries_)) {
    if (entries.rows < 2) throw Error(ErrorCode::RangeError, "Codebook: V must be >= 2");
    if (entries.cols < 1) throw Error(ErrorCode::RangeError, "Codebook: D must be >= 1");
    require_finite(entries, "Codebook: entries");
}

TokenState::TokenState(std::vector<int> tokens_, BoolVec frozen_, BoolVec valid_)
    : tokens(std::move(tokens_)), frozen(std::move(frozen_)), valid(std::move(valid_)) {
    if (frozen.size() != tokens.size() || valid.size() != tokens.size()) {
        throw Error(ErrorCode::ShapeMismatch, "TokenState: mask lengths != T");
    }
    check();
}

void TokenState::check() const {
    for (size_t t = 0; t < tokens.size(); ++t) {
        if (frozen[t] && tokens[t] == kMaskToken) {
            throw Error(ErrorCode::RangeError,
                        "TokenState: frozen position " + std::to_string(t) + " is MASK");
        }
    }
}

TextCondition::TextCondition(std::vector<double> v) : vec(std::move(v)) {
    if (vec.empty()) throw Error(ErrorCode::RangeError, "TextCondition: empty vector");
    require_finite(vec, "TextCondition: vector");
}

void SpectralProfile::check() const {
    const int T = phi.rows;
    const int W = phi.cols;
    if (static_cast<int>(omega.size()) != T || static_cast<int>(valid.size()) != T) {
        throw Error(ErrorCode::ShapeMismatch, "SpectralProfile: length mismatch");
    }
    require_finite(phi, "SpectralProfile: phi");
    const double omega_cap = 1.0 / std::sqrt(static_cast<double>(W)) + 1e-6;
    for (int t = 0; t < T; ++t) {
        if (!valid[t]) continue;
        double norm2 = 0.0;
        for (int k = 0; k < W; ++k) norm2 += phi(t, k) * phi(t, k);
        double norm = std::sqrt(norm2);
        if (norm != 0.0 && (norm < 1.0 - 1e-6 || norm > 1.0 + 1e-6)) {
            throw Error(ErrorCode::RangeError, "SpectralProfile: phi row not unit or zero");
        }
        if (omega[t] < 0.0 || omega[t] > omega_cap) {
            throw Error(ErrorCode::RangeError, "SpectralProfile: omega out of bounds");
        }
    }
}

// ---------------------------------------------------------------------------
// z-score

std::vector<double> zscore(const std::vector<double>& values, const BoolVec& valid) {
    if (valid.size() != values.size()) {
        throw Error(ErrorCode::ShapeMismatch, "zscore: mask length mismatch");
    }
    const int n = count_true(valid);
    if (n == 0) throw Error(ErrorCode::EmptyInput, "zscore: no valid entries");

    double mean = 0.0;
    for (size_t i = 0; i < values.size(); ++i) {
        if (valid[i]) mean += values[i];
    }
    mean /= n;

    double var = 0.0;
    for (size_t i = 0; i < values.size(); ++i) {
        if (valid[i]) {
            double d = values[i] - mean;
            var += d * d;
        }
    }
    var /= n;
    double sd = std::sqrt(var);

    std::vector<double> out(values.size(), 0.0);
    if (sd < 1e-12) return out;
    for (size_t i = 0; i < values.size(); ++i) {
        if (valid[i]) out[i] = (values[i] - mean) / sd;
    }
    return out;
}

namespace {

std::vector<double> average_ranks(const std::vector<double>& x) {
    const size_t n = x.size();
    std::vector<size_t> idx(n);
    for (size_t i = 0; i < n; ++i) idx[i] = i;
    std::stable_sort(idx.begin(), idx.end(), [&](size_t a, size_t b) { return x[a] < x[b]; });
    std::vector<double> rank(n, 0.0);
    size_t i = 0;
    while (i < n) {
        size_t j = i;
        while (j + 1 < n && x[idx[j + 1]] == x[idx[i]]) j++;
        double avg = 0.5 * (static_cast<double>(i) + static_cast<double>(j)) + 1.0;
        for (size_t k = i; k <= j; ++k) rank[idx[k]] = avg;
        i = j + 1;
    }
    return rank;
}

}  // namespace

double spearman(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size()) {
        throw Error(ErrorCode::ShapeMismatch, "spearman: length mismatch");
    }
    if (x.size() < 2) throw Error(ErrorCode::TooShort, "spearman: need at least 2 samples");
    std::vector<double> rx = average_ranks(x);
    std::vector<double> ry = average_ranks(y);
    const double n = static_cast<double>(x.size());
    double mx = 0.0, my = 0.0;
    for (size_t i = 0; i < x.size(); ++i) {
        mx += rx[i];
        my += ry[i];
    }
    mx /= n;
    my /= n;
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (size_t i = 0; i < x.size(); ++i) {
        double a = rx[i] - mx;
        double b = ry[i] - my;
        sxy += a * b;
        sxx += a * a;
        syy += b * b;
    }
    if (sxx < 1e-12 || syy < 1e-12) return 0.0;
    return sxy / std::sqrt(sxx * syy);
}

}  // namespace dynmask
