#include "dynmask/reference.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

namespace dynmask::reference {

Mat naive_dct(const Mat& window) {
    const int W = window.rows;
    const int D = window.cols;
    Mat out(W, D);
    for (int k = 0; k < W; ++k) {
        for (int d = 0; d < D; ++d) {
            double acc = 0.0;
            for (int n = 0; n < W; ++n) {
                acc += window(n, d) * std::cos((M_PI / W) * (n + 0.5) * k);
            }
            out(k, d) = acc;
        }
    }
    return out;
}

std::vector<int> nearest_tokens(const Mat& features, const Codebook& codebook) {
    const int T = features.rows;
    const int V = codebook.size();
    std::vector<int> tokens(T);
    std::vector<double> dist(V);
    for (int t = 0; t < T; ++t) {
        for (int v = 0; v < V; ++v) {
            double acc = 0.0;
            for (int d = 0; d < features.cols; ++d) {
                double diff = features(t, d) - codebook.entries(v, d);
                acc += diff * diff;
            }
            dist[v] = acc;
        }
        tokens[t] = static_cast<int>(std::min_element(dist.begin(), dist.end()) - dist.begin()) + 1;
    }
    return tokens;
}

SpectralProfile msd_serial(const Mat& embeddings, const BoolVec& valid, const Config& cfg) {
    const int T = embeddings.rows;
    const int D = embeddings.cols;
    const int W = cfg.window;
    if (T < 2) throw Error(ErrorCode::TooShort, "msd_serial: need T >= 2");

    Mat vel(T, D);
    for (int t = 1; t < T; ++t) {
        for (int d = 0; d < D; ++d) vel(t, d) = embeddings(t, d) - embeddings(t - 1, d);
    }
    for (int d = 0; d < D; ++d) vel(0, d) = vel(1, d);

    SpectralProfile profile;
    profile.phi = Mat(T, W);
    profile.omega.assign(T, 0.0);
    profile.valid = valid;

    for (int t = 0; t < T; ++t) {
        if (!valid[t]) continue;
        Mat window(W, D);
        for (int n = 0; n < W; ++n) {
            int idx = t - W / 2 + n;
            if (idx < 0) idx = 0;
            if (idx > T - 1) idx = T - 1;
            for (int d = 0; d < D; ++d) window(n, d) = vel(idx, d);
        }
        Mat F = naive_dct(window);
        std::vector<double> f(W);
        for (int k = 0; k < W; ++k) {
            double acc = 0.0;
            for (int d = 0; d < D; ++d) acc += F(k, d) * F(k, d);
            f[k] = std::sqrt(acc);
        }
        double norm = 0.0;
        for (int k = 0; k < W; ++k) norm += f[k] * f[k];
        norm = std::sqrt(norm);
        double mean = 0.0;
        if (norm != 0.0) {
            for (int k = 0; k < W; ++k) {
                profile.phi(t, k) = f[k] / (norm + cfg.epsilon);
                mean += profile.phi(t, k);
            }
        }
        profile.omega[t] = mean / W;
    }
    return profile;
}

SimilarityMatrix similarity_serial(const SpectralProfile& profile, const Config& cfg) {
    const int T = profile.length();
    const int W = profile.window();

    std::vector<double> w(W);
    double wsum = 0.0;
    for (int k = 0; k < W; ++k) {
        w[k] = std::exp(-k / 3.0);
        wsum += w[k];
    }
    for (int k = 0; k < W; ++k) w[k] /= wsum;

    SimilarityMatrix sim;
    sim.s = Mat(T, T);
    sim.valid = profile.valid;
    double lowest = std::numeric_limits<double>::infinity();
    for (int i = 0; i < T; ++i) {
        for (int j = 0; j < T; ++j) {
            if (!profile.valid[i] || !profile.valid[j]) continue;
            double acc = 0.0;
            for (int k = 0; k < W; ++k) {
                double d = profile.phi(i, k) - profile.phi(j, k);
                acc += w[k] * d * d;
            }
            sim.s(i, j) = -acc / cfg.tau;
            lowest = std::min(lowest, sim.s(i, j));
        }
    }
    if (!std::isfinite(lowest)) lowest = 0.0;
    for (int i = 0; i < T; ++i) {
        for (int j = 0; j < T; ++j) {
            if (!profile.valid[i] || !profile.valid[j]) sim.s(i, j) = lowest - 1.0;
        }
    }
    return sim;
}

MaskPlan cfs_reference(const std::vector<double>& s_dyn, const std::vector<double>& s_sem, int K,
                       const Config& cfg, const BoolVec& valid) {
    const int T = static_cast<int>(valid.size());
    int n_valid = 0;
    for (auto v : valid) n_valid += (v != 0);
    const int target = std::min(K, n_valid);

    MaskPlan plan;
    plan.budget = K;
    if (target == 0) return plan;

    const int n_sem = static_cast<int>(std::llround(cfg.lambda_sem * K));
    const int n_dyn = K - n_sem;

    auto order_by = [&](const std::vector<double>& score) {
        std::vector<std::pair<double, int>> pairs;
        for (int t = 0; t < T; ++t) {
            if (valid[t]) pairs.push_back({score[t], t});
        }
        std::sort(pairs.begin(), pairs.end(), [](const auto& a, const auto& b) {
            if (a.first != b.first) return a.first > b.first;
            return a.second < b.second;
        });
        std::vector<int> idx;
        for (auto& p : pairs) idx.push_back(p.second);
        return idx;
    };

    std::set<int> chosen;
    std::vector<std::pair<int, MaskProvenance>> list;

    auto dyn_order = order_by(s_dyn);
    for (int i = 0; i < n_dyn && i < static_cast<int>(dyn_order.size()); ++i) {
        list.push_back({dyn_order[i], MaskProvenance::Dynamic});
        chosen.insert(dyn_order[i]);
    }
    int sem_used = 0;
    for (int t : order_by(s_sem)) {
        if (sem_used >= n_sem) break;
        if (chosen.count(t)) continue;
        list.push_back({t, MaskProvenance::Semantic});
        chosen.insert(t);
        sem_used++;
    }

    const size_t seeds = list.size();
    for (size_t i = 0; i < seeds; ++i) {
        int base = list[i].first;
        for (int r = 1; r <= cfg.r_exp; ++r) {
            for (int sign = 0; sign < 2; ++sign) {
                int t = base + (sign == 0 ? r : -r);
                if (t < 0 || t >= T) continue;
                if (!valid[t] || chosen.count(t)) continue;
                list.push_back({t, MaskProvenance::Expansion});
                chosen.insert(t);
            }
        }
    }

    if (static_cast<int>(list.size()) > target) {
        list.resize(target);
    } else {
        for (int t : dyn_order) {
            if (static_cast<int>(list.size()) >= target) break;
            bool already = false;
            for (auto& p : list) {
                if (p.first == t) {
                    already = true;
                    break;
                }
            }
            if (!already) list.push_back({t, MaskProvenance::Fill});
        }
    }

    for (auto& p : list) {
        plan.positions.push_back(p.first);
        plan.provenance.push_back(p.second);
    }
    return plan;
}

// ---------------------------------------------------------------------------
// Fusion-free transformer

namespace {

double ref_gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * M_SQRT1_2)); }

void ref_layer_norm(const Mat& x, const std::vector<double>& g, const std::vector<double>& b,
                    Mat& out) {
    const int n = x.rows;
    const int d = x.cols;
    for (int i = 0; i < n; ++i) {
        double mu = 0.0;
        for (int j = 0; j < d; ++j) mu += x(i, j);
        mu /= d;
        double var = 0.0;
        for (int j = 0; j < d; ++j) {
            double dd = x(i, j) - mu;
            var += dd * dd;
        }
        var /= d;
        double r = 1.0 / std::sqrt(var + 1e-5);
        for (int j = 0; j < d; ++j) out(i, j) = g[j] * ((x(i, j) - mu) * r) + b[j];
    }
}

void ref_mat_mul(const Mat& a, const Mat& b, Mat& c) {
    for (int i = 0; i < a.rows; ++i) {
        for (int j = 0; j < b.cols; ++j) {
            double acc = 0.0;
            for (int k = 0; k < a.cols; ++k) acc += a(i, k) * b(k, j);
            c(i, j) = acc;
        }
    }
}

}  // namespace

ForwardResult plain_forward(const ToyModel& model, const TokenState& tokens,
                            const TextCondition& condition) {
    const int T = tokens.length();
    const int dim = model.dim;
    const int n = T + 1;
    const int H = model.heads;
    const int dh = dim / H;
    const double scale = std::sqrt(static_cast<double>(dh));

    std::vector<int> keys;
    keys.push_back(0);
    for (int t = 0; t < T; ++t) {
        if (tokens.valid[t]) keys.push_back(t + 1);
    }

    Mat x(n, dim);
    for (int j = 0; j < dim; ++j) {
        double acc = 0.0;
        for (int e = 0; e < model.cond_dim; ++e) acc += condition.vec[e] * model.cond_proj(e, j);
        x(0, j) = acc;
    }
    for (int t = 0; t < T; ++t) {
        int z = tokens.tokens[t];
        int row = (z == kMaskToken) ? model.vocab : z - 1;
        for (int j = 0; j < dim; ++j) x(t + 1, j) = model.tok_emb(row, j) + model.pos_emb(t, j);
    }

    ForwardResult res;
    res.record.fused_logits.resize(model.layer_count);
    res.record.probs.resize(model.layer_count);

    for (int l = 0; l < model.layer_count; ++l) {
        const ToyModel::Layer& lw = model.layers[l];
        Mat a(n, dim);
        ref_layer_norm(x, lw.ln1_g, lw.ln1_b, a);
        Mat q(n, dim), k(n, dim), v(n, dim);
        ref_mat_mul(a, lw.wq, q);
        ref_mat_mul(a, lw.wk, k);
        ref_mat_mul(a, lw.wv, v);

        Mat mix(n, dim);
        for (int h = 0; h < H; ++h) {
            const int o = h * dh;
            Mat A(n, n);
            for (int i = 0; i < n; ++i) {
                for (int j = 0; j < n; ++j) {
                    double acc = 0.0;
                    for (int d = 0; d < dh; ++d) acc += q(i, o + d) * k(j, o + d);
                    A(i, j) = acc / scale;
                }
            }
            Mat P(n, n);
            for (int i = 0; i < n; ++i) {
                double mx = -std::numeric_limits<double>::infinity();
                for (int j : keys) mx = std::max(mx, A(i, j));
                double sum = 0.0;
                for (int j : keys) {
                    double e = std::exp(A(i, j) - mx);
                    P(i, j) = e;
                    sum += e;
                }
                for (int j : keys) P(i, j) /= sum;
            }
            for (int i = 0; i < n; ++i) {
                for (int d = 0; d < dh; ++d) {
                    double acc = 0.0;
                    for (int j : keys) acc += P(i, j) * v(j, o + d);
                    mix(i, o + d) = acc;
                }
            }
            res.record.fused_logits[l].push_back(A);
            res.record.probs[l].push_back(P);
        }

        Mat x_mid(n, dim);
        ref_mat_mul(mix, lw.wo, x_mid);
        for (int i = 0; i < n; ++i) {
            for (int j = 0; j < dim; ++j) x_mid(i, j) += x(i, j);
        }

        Mat b(n, dim);
        ref_layer_norm(x_mid, lw.ln2_g, lw.ln2_b, b);
        Mat h1(n, 4 * dim), g1(n, 4 * dim);
        ref_mat_mul(b, lw.w1, h1);
        for (int i = 0; i < n; ++i) {
            for (int j = 0; j < 4 * dim; ++j) g1(i, j) = ref_gelu(h1(i, j));
        }
        Mat f(n, dim);
        ref_mat_mul(g1, lw.w2, f);
        for (int i = 0; i < n; ++i) {
            for (int j = 0; j < dim; ++j) f(i, j) += x_mid(i, j);
        }
        x = std::move(f);
    }

    res.logits = Mat(T, model.vocab);
    for (int t = 0; t < T; ++t) {
        for (int vv = 0; vv < model.vocab; ++vv) {
            double acc = 0.0;
            for (int d = 0; d < dim; ++d) acc += x(t + 1, d) * model.out_proj(d, vv);
            res.logits(t, vv) = acc;
        }
    }
    return res;
}

BaselineTrace confidence_decode(const ToyModel& model, const TextCondition& condition, int length,
                                const Config& cfg) {
    const int T = length;
    const int S = cfg.steps;
    const int V = model.vocab;

    std::vector<int> final_tokens(T, kMaskToken);
    BoolVec frozen(T, 0);
    BaselineTrace trace;

    auto still_masked = [&](int s) {
        if (s == 0) return T;
        if (s == S) return 0;
        return static_cast<int>(
            std::ceil(T * std::cos(0.5 * M_PI * static_cast<double>(s) / S)));
    };

    int frozen_count = 0;
    for (int s = 1; s <= S; ++s) {
        TokenState state(final_tokens, frozen, BoolVec(T, 1));
        ForwardResult fwd = plain_forward(model, state, condition);

        BaselineStep step;
        step.tokens.assign(T, kMaskToken);
        step.confidences.assign(T, 0.0);
        for (int t = 0; t < T; ++t) {
            if (frozen[t]) {
                step.tokens[t] = final_tokens[t];
                step.confidences[t] = 1.0;
                continue;
            }
            int best = 0;
            for (int v = 1; v < V; ++v) {
                if (fwd.logits(t, v) / cfg.t_global > fwd.logits(t, best) / cfg.t_global) best = v;
            }
            double mx = fwd.logits(t, 0) / cfg.t_global;
            for (int v = 1; v < V; ++v) mx = std::max(mx, fwd.logits(t, v) / cfg.t_global);
            double sum = 0.0;
            for (int v = 0; v < V; ++v) sum += std::exp(fwd.logits(t, v) / cfg.t_global - mx);
            step.tokens[t] = best + 1;
            step.confidences[t] = std::exp(fwd.logits(t, best) / cfg.t_global - mx) / sum;
        }

        int newly = (T - still_masked(s)) - frozen_count;
        std::vector<int> order;
        for (int t = 0; t < T; ++t) {
            if (!frozen[t]) order.push_back(t);
        }
        std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
            return step.confidences[a] > step.confidences[b];
        });
        for (int i = 0; i < newly && i < static_cast<int>(order.size()); ++i) {
            const int t = order[i];
            frozen[t] = 1;
            final_tokens[t] = step.tokens[t];
            step.newly_frozen.push_back(t);
            frozen_count++;
        }
        std::sort(step.newly_frozen.begin(), step.newly_frozen.end());
        trace.steps.push_back(std::move(step));
    }
    trace.final_tokens = final_tokens;
    return trace;
}

}  // namespace dynmask::reference
