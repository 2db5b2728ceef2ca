#include "dynmask/decoding.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "dynmask/masking.hpp"
#include "dynmask/spectral.hpp"
#include "dynmask/tokenizer.hpp"

namespace dynmask {

std::vector<double> exploration_scores(const SpectralProfile& profile, const Mat& probs,
                                       double lambda_d, const BoolVec& valid) {
    const int T = probs.rows;
    if (profile.length() != T || static_cast<int>(valid.size()) != T) {
        throw Error(ErrorCode::ShapeMismatch, "exploration_scores: length mismatch");
    }
    std::vector<double> uncertainty(T, 0.0);
    for (int t = 0; t < T; ++t) {
        if (!valid[t]) continue;
        double sum = 0.0, mx = 0.0;
        for (int v = 0; v < probs.cols; ++v) {
            double p = probs(t, v);
            if (!(p >= 0.0) || !std::isfinite(p)) {
                throw Error(ErrorCode::BadProbabilities, "exploration_scores: bad probability");
            }
            sum += p;
            mx = std::max(mx, p);
        }
        if (std::abs(sum - 1.0) > 1e-6) {
            throw Error(ErrorCode::BadProbabilities,
                        "exploration_scores: row " + std::to_string(t) + " sums to " +
                            std::to_string(sum));
        }
        uncertainty[t] = 1.0 - mx;
    }

    std::vector<double> k_hat = zscore(profile.omega, valid);
    std::vector<double> u_hat = zscore(uncertainty, valid);

    std::vector<double> b(T, 0.0);
    for (int t = 0; t < T; ++t) {
        if (!valid[t]) continue;
        double x = lambda_d * k_hat[t] + (1.0 - lambda_d) * u_hat[t];
        b[t] = 1.0 / (1.0 + std::exp(-x));
    }
    return b;
}

std::vector<double> adaptive_temperature(double t_global, double beta,
                                         const std::vector<double>& b) {
    if (!(t_global > 0.0)) {
        throw Error(ErrorCode::RangeError, "adaptive_temperature: t_global must be > 0");
    }
    if (!(beta >= 0.0)) {
        throw Error(ErrorCode::RangeError, "adaptive_temperature: beta must be >= 0");
    }
    std::vector<double> temps(b.size());
    for (size_t t = 0; t < b.size(); ++t) temps[t] = t_global * (1.0 + beta * b[t]);
    return temps;
}

std::vector<double> adaptive_noise(double sigma_max, const std::vector<double>& b) {
    if (!(sigma_max >= 0.0)) {
        throw Error(ErrorCode::RangeError, "adaptive_noise: sigma_max must be >= 0");
    }
    std::vector<double> sigmas(b.size());
    for (size_t t = 0; t < b.size(); ++t) sigmas[t] = sigma_max * b[t];
    return sigmas;
}

int masked_after(int n_valid, int step, int total_steps) {
    if (total_steps < 1 || step < 0 || step > total_steps) {
        throw Error(ErrorCode::OutOfRange, "masked_after: need 0 <= s <= S, S >= 1");
    }
    if (n_valid < 0) throw Error(ErrorCode::RangeError, "masked_after: n_valid must be >= 0");
    if (step == 0) return n_valid;
    if (step == total_steps) return 0;
    double ratio = cosine_ratio(static_cast<double>(step) / total_steps);
    return static_cast<int>(std::ceil(n_valid * ratio));
}

int keep_count(int n_valid, int step, int total_steps) {
    if (step < 1) throw Error(ErrorCode::OutOfRange, "keep_count: need s >= 1");
    return masked_after(n_valid, step - 1, total_steps) - masked_after(n_valid, step, total_steps);
}

SampleResult sample_step(const Mat& logits, const std::vector<double>& temps,
                         const std::vector<double>& noises, const TokenState& state, Rng& rng) {
    const int T = logits.rows;
    const int V = logits.cols;
    if (static_cast<int>(temps.size()) != T || static_cast<int>(noises.size()) != T ||
        state.length() != T) {
        throw Error(ErrorCode::ShapeMismatch, "sample_step: length mismatch");
    }
    require_finite(logits, "sample_step: logits");

    SampleResult out;
    out.tokens.assign(T, kMaskToken);
    out.confidences.assign(T, 0.0);

    for (int t = 0; t < T; ++t) {
        if (!state.valid[t]) continue;
        if (state.frozen[t]) {
            out.tokens[t] = state.tokens[t];
            out.confidences[t] = 1.0;
            continue;
        }
        const double temp = temps[t];
        const double sigma = noises[t];
        if (!(temp > 0.0)) throw Error(ErrorCode::RangeError, "sample_step: temperature <= 0");

        int best = 0;
        double best_score = -std::numeric_limits<double>::infinity();
        for (int v = 0; v < V; ++v) {
            double score = logits(t, v) / temp;
            if (sigma > 0.0) score += sigma * rng.gumbel();
            if (score > best_score) {
                best_score = score;
                best = v;
            }
        }
        // noise-free probability of the chosen token under the scaled logits
        double mx = logits(t, 0) / temp;
        for (int v = 1; v < V; ++v) mx = std::max(mx, logits(t, v) / temp);
        double sum = 0.0;
        for (int v = 0; v < V; ++v) sum += std::exp(logits(t, v) / temp - mx);
        out.tokens[t] = best + 1;
        out.confidences[t] = std::exp(logits(t, best) / temp - mx) / sum;
    }
    return out;
}

DecodeTrace decode(const ToyModel& model, const Codebook& codebook,
                   const TextCondition& condition, int length, const Config& cfg, Rng& rng) {
    if (length < 1) throw Error(ErrorCode::RangeError, "decode: length must be >= 1");
    if (codebook.size() != model.vocab) {
        throw Error(ErrorCode::DimMismatch, "decode: codebook size != model vocab");
    }
    const int T = length;
    const int S = cfg.steps;

    TokenState state(std::vector<int>(T, kMaskToken), BoolVec(T, 0), BoolVec(T, 1));
    std::vector<int> last_sample(T, kMaskToken);
    const std::vector<double> centroid = codebook_centroid(codebook);
    const int n_valid = T;

    DecodeTrace trace;
    int frozen_count = 0;
    for (int s = 1; s <= S; ++s) {
        // best-guess embeddings for the spectral profile
        Mat emb(T, codebook.dim());
        for (int t = 0; t < T; ++t) {
            int z = state.frozen[t] ? state.tokens[t] : last_sample[t];
            const double* src =
                (z == kMaskToken) ? centroid.data() : codebook.entries.row(z - 1);
            for (int d = 0; d < codebook.dim(); ++d) emb(t, d) = src[d];
        }
        SpectralProfile profile;
        if (T >= 2) {
            profile = msd_sequence(emb, state.valid, cfg);
        } else {
            profile.phi = Mat(T, cfg.window);
            profile.omega.assign(T, 0.0);
            profile.valid = state.valid;
        }

        ForwardResult fwd = attention_forward(model, state, condition, profile, cfg);

        Mat probs(T, model.vocab);
        for (int t = 0; t < T; ++t) {
            double mx = fwd.logits(t, 0);
            for (int v = 1; v < model.vocab; ++v) mx = std::max(mx, fwd.logits(t, v));
            double sum = 0.0;
            for (int v = 0; v < model.vocab; ++v) sum += std::exp(fwd.logits(t, v) - mx);
            for (int v = 0; v < model.vocab; ++v) {
                probs(t, v) = std::exp(fwd.logits(t, v) - mx) / sum;
            }
        }

        std::vector<double> b = exploration_scores(profile, probs, cfg.lambda_d, state.valid);
        std::vector<double> temps = adaptive_temperature(cfg.t_global, cfg.beta, b);
        std::vector<double> sigmas = adaptive_noise(cfg.sigma_max, b);
        SampleResult sample = sample_step(fwd.logits, temps, sigmas, state, rng);

        const int target_frozen = n_valid - masked_after(n_valid, s, S);
        const int newly = target_frozen - frozen_count;

        std::vector<int> unfrozen;
        for (int t = 0; t < T; ++t) {
            if (!state.frozen[t]) unfrozen.push_back(t);
        }
        std::stable_sort(unfrozen.begin(), unfrozen.end(), [&](int a, int bb) {
            return sample.confidences[a] > sample.confidences[bb];
        });

        StepRecord rec;
        rec.step = s;
        rec.b = b;
        rec.temps = temps;
        rec.sigmas = sigmas;
        rec.tokens = sample.tokens;
        rec.confidences = sample.confidences;
        for (int i = 0; i < newly && i < static_cast<int>(unfrozen.size()); ++i) {
            const int t = unfrozen[i];
            state.tokens[t] = sample.tokens[t];
            state.frozen[t] = 1;
            rec.newly_frozen.push_back(t);
            frozen_count++;
        }
        std::sort(rec.newly_frozen.begin(), rec.newly_frozen.end());

        for (int t = 0; t < T; ++t) {
            if (!state.frozen[t]) {
                last_sample[t] = sample.tokens[t];
                state.tokens[t] = kMaskToken;
            }
        }
        trace.steps.push_back(std::move(rec));
    }

    state.check();
    trace.final_state = state;
    return trace;
}

}  // namespace dynmask
