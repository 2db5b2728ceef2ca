#include "dynmask/spectral.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace dynmask {

VelocityField velocity(const Mat& embeddings) {
    const int T = embeddings.rows;
    const int D = embeddings.cols;
    if (T < 2) throw Error(ErrorCode::TooShort, "velocity: need T >= 2");
    require_finite(embeddings, "velocity: embeddings");

    VelocityField out;
    out.v = Mat(T, D);
    for (int t = 1; t < T; ++t) {
        for (int d = 0; d < D; ++d) {
            out.v(t, d) = embeddings(t, d) - embeddings(t - 1, d);
        }
    }
    for (int d = 0; d < D; ++d) out.v(0, d) = out.v(1, d);
    return out;
}

namespace {

// cos((pi/W)(n + 1/2) k) for k,n in [0,W). Kernels and ad-hoc calls share the
// same expression so cached and direct evaluation agree bitwise.
struct DctTable {
    int w = 0;
    std::vector<double> c;  // k-major

    explicit DctTable(int W) : w(W), c(static_cast<size_t>(W) * W) {
        for (int k = 0; k < W; ++k) {
            for (int n = 0; n < W; ++n) {
                c[static_cast<size_t>(k) * W + n] =
                    std::cos((M_PI / W) * (n + 0.5) * k);
            }
        }
    }
};

void dct_apply(const DctTable& tab, const Mat& window, Mat& out) {
    const int W = window.rows;
    const int D = window.cols;
    for (int k = 0; k < W; ++k) {
        const double* ck = tab.c.data() + static_cast<size_t>(k) * W;
        for (int d = 0; d < D; ++d) {
            double acc = 0.0;
            for (int n = 0; n < W; ++n) acc += window(n, d) * ck[n];
            out(k, d) = acc;
        }
    }
}

}  // namespace

Mat dct_window(const Mat& window) {
    if (window.rows < 1 || window.cols < 1) {
        throw Error(ErrorCode::ShapeMismatch, "dct_window: empty window");
    }
    require_finite(window, "dct_window: input");
    DctTable tab(window.rows);
    Mat out(window.rows, window.cols);
    dct_apply(tab, window, out);
    return out;
}

std::vector<double> spectrum_magnitude(const Mat& F) {
    require_finite(F, "spectrum_magnitude: input");
    std::vector<double> f(F.rows, 0.0);
    for (int k = 0; k < F.rows; ++k) {
        double acc = 0.0;
        for (int d = 0; d < F.cols; ++d) acc += F(k, d) * F(k, d);
        f[k] = std::sqrt(acc);
    }
    return f;
}

std::vector<double> normalize_msd(const std::vector<double>& f, double epsilon) {
    require_finite(f, "normalize_msd: input");
    double norm2 = 0.0;
    for (double x : f) {
        if (x < 0.0) throw Error(ErrorCode::NegativeInput, "normalize_msd: negative magnitude");
        norm2 += x * x;
    }
    double norm = std::sqrt(norm2);
    std::vector<double> phi(f.size(), 0.0);
    if (norm == 0.0) return phi;
    for (size_t k = 0; k < f.size(); ++k) phi[k] = f[k] / (norm + epsilon);
    return phi;
}

double omega(const std::vector<double>& phi) {
    double acc = 0.0;
    for (double x : phi) acc += x;
    return acc / static_cast<double>(phi.size());
}

SpectralProfile msd_sequence(const Mat& embeddings, const BoolVec& valid, const Config& cfg) {
    const int T = embeddings.rows;
    const int D = embeddings.cols;
    const int W = cfg.window;
    if (T < 2) throw Error(ErrorCode::TooShort, "msd_sequence: need T >= 2");
    if (static_cast<int>(valid.size()) != T) {
        throw Error(ErrorCode::ShapeMismatch, "msd_sequence: valid mask length != T");
    }

    VelocityField vel = velocity(embeddings);
    DctTable tab(W);

    SpectralProfile profile;
    profile.phi = Mat(T, W);
    profile.omega.assign(T, 0.0);
    profile.valid = valid;

    const int left = W / 2;
#pragma omp parallel for schedule(static)
    for (int t = 0; t < T; ++t) {
        if (!valid[t]) continue;
        Mat window(W, D);
        for (int n = 0; n < W; ++n) {
            int idx = std::clamp(t - left + n, 0, T - 1);
            for (int d = 0; d < D; ++d) window(n, d) = vel.v(idx, d);
        }
        Mat F(W, D);
        dct_apply(tab, window, F);
        std::vector<double> f = spectrum_magnitude(F);
        std::vector<double> phi = normalize_msd(f, cfg.epsilon);
        for (int k = 0; k < W; ++k) profile.phi(t, k) = phi[k];
        profile.omega[t] = omega(phi);
    }
    profile.check();
    return profile;
}

std::vector<double> frequency_weights(int W) {
    if (W < 1) throw Error(ErrorCode::RangeError, "frequency_weights: W must be >= 1");
    std::vector<double> w(W);
    double sum = 0.0;
    for (int k = 0; k < W; ++k) {
        w[k] = std::exp(-k / 3.0);
        sum += w[k];
    }
    for (int k = 0; k < W; ++k) w[k] /= sum;
    return w;
}

double spectral_similarity(const std::vector<double>& phi_i, const std::vector<double>& phi_j,
                           const std::vector<double>& w, double tau) {
    if (phi_i.size() != phi_j.size() || phi_i.size() != w.size()) {
        throw Error(ErrorCode::ShapeMismatch, "spectral_similarity: length mismatch");
    }
    if (!(tau > 0.0)) throw Error(ErrorCode::RangeError, "spectral_similarity: tau must be > 0");
    double acc = 0.0;
    for (size_t k = 0; k < w.size(); ++k) {
        double d = phi_i[k] - phi_j[k];
        acc += w[k] * d * d;
    }
    return -acc / tau;
}

SimilarityMatrix similarity_matrix(const SpectralProfile& profile, const Config& cfg) {
    const int T = profile.length();
    const int W = profile.window();
    const std::vector<double> w = frequency_weights(W);

    SimilarityMatrix sim;
    sim.s = Mat(T, T);
    sim.valid = profile.valid;

#pragma omp parallel for schedule(static)
    for (int i = 0; i < T; ++i) {
        if (!profile.valid[i]) continue;
        const double* pi = profile.phi.row(i);
        for (int j = 0; j < T; ++j) {
            if (!profile.valid[j]) continue;
            const double* pj = profile.phi.row(j);
            double acc = 0.0;
            for (int k = 0; k < W; ++k) {
                double d = pi[k] - pj[k];
                acc += w[k] * d * d;
            }
            sim.s(i, j) = -acc / cfg.tau;
        }
    }

    double min_valid = std::numeric_limits<double>::infinity();
    for (int i = 0; i < T; ++i) {
        if (!profile.valid[i]) continue;
        for (int j = 0; j < T; ++j) {
            if (profile.valid[j]) min_valid = std::min(min_valid, sim.s(i, j));
        }
    }
    const double sentinel = (std::isfinite(min_valid) ? min_valid : 0.0) - 1.0;
    for (int i = 0; i < T; ++i) {
        for (int j = 0; j < T; ++j) {
            if (!profile.valid[i] || !profile.valid[j]) sim.s(i, j) = sentinel;
        }
    }
    return sim;
}

std::vector<double> velocity_magnitude_signal(const Mat& embeddings, const BoolVec& valid,
                                              const Config& cfg) {
    const int T = embeddings.rows;
    const int W = cfg.window;
    if (T < 2) throw Error(ErrorCode::TooShort, "velocity_magnitude_signal: need T >= 2");
    VelocityField vel = velocity(embeddings);

    std::vector<double> mag(T, 0.0);
    for (int t = 0; t < T; ++t) {
        double acc = 0.0;
        for (int d = 0; d < embeddings.cols; ++d) acc += vel.v(t, d) * vel.v(t, d);
        mag[t] = std::sqrt(acc);
    }

    std::vector<double> out(T, 0.0);
    const int left = W / 2;
    for (int t = 0; t < T; ++t) {
        if (!valid[t]) continue;
        double acc = 0.0;
        for (int n = 0; n < W; ++n) acc += mag[std::clamp(t - left + n, 0, T - 1)];
        out[t] = acc / W;
    }
    return out;
}

}  // namespace dynmask
