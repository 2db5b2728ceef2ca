#include "dynmask/attention.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace dynmask {

namespace {

constexpr double kLnEps = 1e-5;
constexpr double kFuseBypass = 1e-12;
constexpr double kZscoreGuard = 1e-12;

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * M_SQRT1_2)); }

double gelu_grad(double x) {
    return 0.5 * (1.0 + std::erf(x * M_SQRT1_2)) +
           x * std::exp(-0.5 * x * x) / std::sqrt(2.0 * M_PI);
}

// C = A * B
void mat_mul(const Mat& a, const Mat& b, Mat& c) {
    for (int i = 0; i < a.rows; ++i) {
        for (int j = 0; j < b.cols; ++j) {
            double acc = 0.0;
            for (int k = 0; k < a.cols; ++k) acc += a(i, k) * b(k, j);
            c(i, j) = acc;
        }
    }
}

// C += A^T * B  (A: n x m, B: n x p, C: m x p)
void accum_At_B(const Mat& a, const Mat& b, Mat& c) {
    for (int i = 0; i < a.cols; ++i) {
        for (int j = 0; j < b.cols; ++j) {
            double acc = 0.0;
            for (int k = 0; k < a.rows; ++k) acc += a(k, i) * b(k, j);
            c(i, j) += acc;
        }
    }
}

// C = A * B^T  (A: n x m, B: p x m, C: n x p)
void mat_mul_bt(const Mat& a, const Mat& b, Mat& c) {
    for (int i = 0; i < a.rows; ++i) {
        for (int j = 0; j < b.rows; ++j) {
            double acc = 0.0;
            for (int k = 0; k < a.cols; ++k) acc += a(i, k) * b(j, k);
            c(i, j) = acc;
        }
    }
}

struct LayerCache {
    Mat x_in;
    std::vector<double> mean1, rstd1;
    Mat xhat1, a;
    Mat q, k, v;
    std::vector<Mat> a_raw;               // per head
    std::vector<Mat> fused;               // per head
    std::vector<Mat> probs;               // per head
    std::vector<std::vector<double>> mu;  // per head per row; sd < 0 marks a raw row
    std::vector<std::vector<double>> sd;
    Mat attn_mix;
    Mat x_mid;
    std::vector<double> mean2, rstd2;
    Mat xhat2, bvec;
    Mat h1, g1;
    Mat x_out;
};

struct ForwardCache {
    int n = 0;
    BoolVec slot_valid;
    std::vector<int> valid_keys;
    Mat shat;  // T x T, z-scored similarity rows (valid rows only)
    bool any_fusion = false;
    std::vector<double> alpha;
    Mat x0;
    std::vector<LayerCache> layers;
    Mat logits;
};

void layer_norm(const Mat& x, const std::vector<double>& g, const std::vector<double>& b,
                std::vector<double>& mean, std::vector<double>& rstd, Mat& xhat, Mat& out) {
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
        double r = 1.0 / std::sqrt(var + kLnEps);
        mean[i] = mu;
        rstd[i] = r;
        for (int j = 0; j < d; ++j) {
            xhat(i, j) = (x(i, j) - mu) * r;
            out(i, j) = g[j] * xhat(i, j) + b[j];
        }
    }
}

// dx for one slot given dout w.r.t. the layer-norm output
void layer_norm_backward(const Mat& dout, const Mat& xhat, const std::vector<double>& rstd,
                         const std::vector<double>& g, Mat& dx, std::vector<double>& dg,
                         std::vector<double>& db) {
    const int n = dout.rows;
    const int d = dout.cols;
    for (int i = 0; i < n; ++i) {
        double m1 = 0.0, m2 = 0.0;
        for (int j = 0; j < d; ++j) {
            double dxh = dout(i, j) * g[j];
            m1 += dxh;
            m2 += dxh * xhat(i, j);
            dg[j] += dout(i, j) * xhat(i, j);
            db[j] += dout(i, j);
        }
        m1 /= d;
        m2 /= d;
        for (int j = 0; j < d; ++j) {
            double dxh = dout(i, j) * g[j];
            dx(i, j) += rstd[i] * (dxh - m1 - xhat(i, j) * m2);
        }
    }
}

// z-score one attention row over the valid keys; sd < kZscoreGuard zeroes it
void zscore_row(const double* a, const std::vector<int>& keys, double& mu, double& sd,
                std::vector<double>& out) {
    const int m = static_cast<int>(keys.size());
    mu = 0.0;
    for (int k : keys) mu += a[k];
    mu /= m;
    double var = 0.0;
    for (int k : keys) {
        double d = a[k] - mu;
        var += d * d;
    }
    var /= m;
    sd = std::sqrt(var);
    for (size_t i = 0; i < keys.size(); ++i) {
        out[i] = (sd < kZscoreGuard) ? 0.0 : (a[keys[i]] - mu) / sd;
    }
}

void forward_impl(const ToyModel& model, const TokenState& corrupted,
                  const TextCondition& condition, const SpectralProfile& profile,
                  const Config& cfg, ForwardCache& fc) {
    const int T = corrupted.length();
    const int dim = model.dim;
    const int n = T + 1;
    if (T < 1) throw Error(ErrorCode::RangeError, "attention_forward: empty sequence");
    if (T > model.t_max) {
        throw Error(ErrorCode::DimMismatch, "attention_forward: T exceeds model t_max");
    }
    if (condition.dim() != model.cond_dim) {
        throw Error(ErrorCode::DimMismatch, "attention_forward: condition dim mismatch");
    }
    if (profile.length() != T) {
        throw Error(ErrorCode::ShapeMismatch, "attention_forward: profile length != T");
    }

    fc.n = n;
    fc.slot_valid.assign(n, 0);
    fc.slot_valid[0] = 1;
    for (int t = 0; t < T; ++t) fc.slot_valid[t + 1] = corrupted.valid[t];
    fc.valid_keys.clear();
    for (int i = 0; i < n; ++i) {
        if (fc.slot_valid[i]) fc.valid_keys.push_back(i);
    }

    fc.alpha.resize(model.layer_count);
    fc.any_fusion = false;
    for (int l = 0; l < model.layer_count; ++l) {
        fc.alpha[l] = alpha_schedule(cfg.alpha0, l);
        if (fc.alpha[l] >= kFuseBypass) fc.any_fusion = true;
    }

    // spectral prior, z-scored per valid row over valid motion keys; constant
    // w.r.t. the parameters, shared by all layers and heads
    if (fc.any_fusion) {
        SimilarityMatrix sim = similarity_matrix(profile, cfg);
        fc.shat = Mat(T, T);
        for (int i = 0; i < T; ++i) {
            if (!profile.valid[i]) continue;
            std::vector<double> row(sim.s.row(i), sim.s.row(i) + T);
            std::vector<double> z = zscore(row, profile.valid);
            for (int j = 0; j < T; ++j) fc.shat(i, j) = z[j];
        }
    }

    // embeddings: condition slot, then token + positional rows
    fc.x0 = Mat(n, dim);
    for (int j = 0; j < dim; ++j) {
        double acc = 0.0;
        for (int e = 0; e < model.cond_dim; ++e) acc += condition.vec[e] * model.cond_proj(e, j);
        fc.x0(0, j) = acc;
    }
    for (int t = 0; t < T; ++t) {
        int z = corrupted.tokens[t];
        int row;
        if (z == kMaskToken) {
            row = model.vocab;
        } else if (z >= 1 && z <= model.vocab) {
            row = z - 1;
        } else {
            throw Error(ErrorCode::TokenOutOfRange,
                        "attention_forward: token " + std::to_string(z));
        }
        for (int j = 0; j < dim; ++j) fc.x0(t + 1, j) = model.tok_emb(row, j) + model.pos_emb(t, j);
    }
    require_finite(fc.x0, "attention_forward: embeddings");

    const int H = model.heads;
    const int dh = dim / H;
    const double scale = std::sqrt(static_cast<double>(dh));

    fc.layers.assign(model.layer_count, LayerCache{});
    Mat x = fc.x0;
    for (int l = 0; l < model.layer_count; ++l) {
        const ToyModel::Layer& lw = model.layers[l];
        LayerCache& c = fc.layers[l];
        const double alpha = fc.alpha[l];
        const bool fusing = alpha >= kFuseBypass;

        c.x_in = x;
        c.mean1.assign(n, 0.0);
        c.rstd1.assign(n, 0.0);
        c.xhat1 = Mat(n, dim);
        c.a = Mat(n, dim);
        layer_norm(c.x_in, lw.ln1_g, lw.ln1_b, c.mean1, c.rstd1, c.xhat1, c.a);

        c.q = Mat(n, dim);
        c.k = Mat(n, dim);
        c.v = Mat(n, dim);
        mat_mul(c.a, lw.wq, c.q);
        mat_mul(c.a, lw.wk, c.k);
        mat_mul(c.a, lw.wv, c.v);

        c.a_raw.assign(H, Mat(n, n));
        c.fused.assign(H, Mat(n, n));
        c.probs.assign(H, Mat(n, n));
        c.mu.assign(H, std::vector<double>(n, 0.0));
        c.sd.assign(H, std::vector<double>(n, -1.0));
        c.attn_mix = Mat(n, dim);

        for (int h = 0; h < H; ++h) {
            const int o = h * dh;
            Mat& A = c.a_raw[h];
            for (int i = 0; i < n; ++i) {
                for (int j = 0; j < n; ++j) {
                    double acc = 0.0;
                    for (int d = 0; d < dh; ++d) acc += c.q(i, o + d) * c.k(j, o + d);
                    A(i, j) = acc / scale;
                }
            }

            Mat& F = c.fused[h];
            if (!fusing) {
                F = A;
            } else {
                F = A;
                std::vector<double> zrow(fc.valid_keys.size());
                for (int i = 0; i < n; ++i) {
                    if (!fc.slot_valid[i]) continue;  // invalid queries keep raw logits
                    zscore_row(A.row(i), fc.valid_keys, c.mu[h][i], c.sd[h][i], zrow);
                    for (size_t kk = 0; kk < fc.valid_keys.size(); ++kk) {
                        const int j = fc.valid_keys[kk];
                        if (i == 0 || j == 0) {
                            F(i, j) = zrow[kk];  // condition slot: learned logits only
                        } else {
                            F(i, j) = (1.0 - alpha) * zrow[kk] + alpha * fc.shat(i - 1, j - 1);
                        }
                    }
                    for (int j = 0; j < n; ++j) {
                        if (!fc.slot_valid[j]) F(i, j) = -std::numeric_limits<double>::infinity();
                    }
                }
            }

            // softmax over valid keys
            Mat& P = c.probs[h];
            for (int i = 0; i < n; ++i) {
                double mx = -std::numeric_limits<double>::infinity();
                for (int j : fc.valid_keys) mx = std::max(mx, F(i, j));
                double sum = 0.0;
                for (int j : fc.valid_keys) {
                    double e = std::exp(F(i, j) - mx);
                    P(i, j) = e;
                    sum += e;
                }
                for (int j : fc.valid_keys) P(i, j) /= sum;
            }

            for (int i = 0; i < n; ++i) {
                for (int d = 0; d < dh; ++d) {
                    double acc = 0.0;
                    for (int j : fc.valid_keys) acc += P(i, j) * c.v(j, o + d);
                    c.attn_mix(i, o + d) = acc;
                }
            }
        }

        c.x_mid = Mat(n, dim);
        mat_mul(c.attn_mix, lw.wo, c.x_mid);
        for (int i = 0; i < n; ++i) {
            for (int j = 0; j < dim; ++j) c.x_mid(i, j) += c.x_in(i, j);
        }

        c.mean2.assign(n, 0.0);
        c.rstd2.assign(n, 0.0);
        c.xhat2 = Mat(n, dim);
        c.bvec = Mat(n, dim);
        layer_norm(c.x_mid, lw.ln2_g, lw.ln2_b, c.mean2, c.rstd2, c.xhat2, c.bvec);

        const int hidden = 4 * dim;
        c.h1 = Mat(n, hidden);
        c.g1 = Mat(n, hidden);
        mat_mul(c.bvec, lw.w1, c.h1);
        for (int i = 0; i < n; ++i) {
            for (int j = 0; j < hidden; ++j) c.g1(i, j) = gelu(c.h1(i, j));
        }
        c.x_out = Mat(n, dim);
        mat_mul(c.g1, lw.w2, c.x_out);
        for (int i = 0; i < n; ++i) {
            for (int j = 0; j < dim; ++j) c.x_out(i, j) += c.x_mid(i, j);
        }
        require_finite(c.x_out, "attention_forward: layer output");
        x = c.x_out;
    }

    fc.logits = Mat(T, model.vocab);
    const Mat& xf = fc.layers.back().x_out;
    for (int t = 0; t < T; ++t) {
        for (int v = 0; v < model.vocab; ++v) {
            double acc = 0.0;
            for (int d = 0; d < dim; ++d) acc += xf(t + 1, d) * model.out_proj(d, v);
            fc.logits(t, v) = acc;
        }
    }
    require_finite(fc.logits, "attention_forward: logits");
}

}  // namespace

// ---------------------------------------------------------------------------

ToyModel ToyModel::with_shape(int vocab, int dim, int heads, int layer_count, int t_max,
                              int cond_dim) {
    if (vocab < 2 || dim < 1 || heads < 1 || dim % heads != 0 || layer_count < 1 || t_max < 1 ||
        cond_dim < 1) {
        throw Error(ErrorCode::RangeError, "ToyModel: bad shape");
    }
    ToyModel m;
    m.vocab = vocab;
    m.dim = dim;
    m.heads = heads;
    m.layer_count = layer_count;
    m.t_max = t_max;
    m.cond_dim = cond_dim;
    m.tok_emb = Mat(vocab + 1, dim);
    m.pos_emb = Mat(t_max, dim);
    m.cond_proj = Mat(cond_dim, dim);
    m.out_proj = Mat(dim, vocab);
    m.layers.resize(layer_count);
    for (auto& l : m.layers) {
        l.wq = Mat(dim, dim);
        l.wk = Mat(dim, dim);
        l.wv = Mat(dim, dim);
        l.wo = Mat(dim, dim);
        l.w1 = Mat(dim, 4 * dim);
        l.w2 = Mat(4 * dim, dim);
        l.ln1_g.assign(dim, 0.0);
        l.ln1_b.assign(dim, 0.0);
        l.ln2_g.assign(dim, 0.0);
        l.ln2_b.assign(dim, 0.0);
    }
    return m;
}

ToyModel ToyModel::init(int vocab, int dim, int heads, int layer_count, int t_max, int cond_dim,
                        Rng& rng) {
    ToyModel m = with_shape(vocab, dim, heads, layer_count, t_max, cond_dim);

    auto fill = [&rng](Mat& w, double scale) {
        for (double& x : w.v) x = scale * rng.normal();
    };
    fill(m.tok_emb, 0.1);
    fill(m.pos_emb, 0.1);
    fill(m.cond_proj, 1.0 / std::sqrt(static_cast<double>(cond_dim)));
    for (auto& l : m.layers) {
        const double s = 1.0 / std::sqrt(static_cast<double>(dim));
        fill(l.wq, s);
        fill(l.wk, s);
        fill(l.wv, s);
        fill(l.wo, s);
        fill(l.w1, s);
        fill(l.w2, 1.0 / std::sqrt(4.0 * dim));
        std::fill(l.ln1_g.begin(), l.ln1_g.end(), 1.0);
        std::fill(l.ln2_g.begin(), l.ln2_g.end(), 1.0);
    }
    fill(m.out_proj, 1.0 / std::sqrt(static_cast<double>(dim)));
    return m;
}

ToyModel ToyModel::zeros_like(const ToyModel& src) {
    ToyModel m = src;
    for (double& x : m.tok_emb.v) x = 0.0;
    for (double& x : m.pos_emb.v) x = 0.0;
    for (double& x : m.cond_proj.v) x = 0.0;
    for (double& x : m.out_proj.v) x = 0.0;
    for (auto& l : m.layers) {
        for (double& x : l.wq.v) x = 0.0;
        for (double& x : l.wk.v) x = 0.0;
        for (double& x : l.wv.v) x = 0.0;
        for (double& x : l.wo.v) x = 0.0;
        for (double& x : l.w1.v) x = 0.0;
        for (double& x : l.w2.v) x = 0.0;
        std::fill(l.ln1_g.begin(), l.ln1_g.end(), 0.0);
        std::fill(l.ln1_b.begin(), l.ln1_b.end(), 0.0);
        std::fill(l.ln2_g.begin(), l.ln2_g.end(), 0.0);
        std::fill(l.ln2_b.begin(), l.ln2_b.end(), 0.0);
    }
    return m;
}

std::vector<ParamView> param_views(ToyModel& m) {
    std::vector<ParamView> out;
    auto add_mat = [&out](const std::string& name, Mat& w) {
        out.push_back({name, w.v.data(), w.v.size(), w.rows, w.cols});
    };
    auto add_vec = [&out](const std::string& name, std::vector<double>& v) {
        out.push_back({name, v.data(), v.size(), 1, static_cast<int>(v.size())});
    };
    add_mat("tok_emb", m.tok_emb);
    add_mat("pos_emb", m.pos_emb);
    add_mat("cond_proj", m.cond_proj);
    for (size_t l = 0; l < m.layers.size(); ++l) {
        std::string p = "layer" + std::to_string(l) + ".";
        add_mat(p + "wq", m.layers[l].wq);
        add_mat(p + "wk", m.layers[l].wk);
        add_mat(p + "wv", m.layers[l].wv);
        add_mat(p + "wo", m.layers[l].wo);
        add_vec(p + "ln1_g", m.layers[l].ln1_g);
        add_vec(p + "ln1_b", m.layers[l].ln1_b);
        add_mat(p + "w1", m.layers[l].w1);
        add_mat(p + "w2", m.layers[l].w2);
        add_vec(p + "ln2_g", m.layers[l].ln2_g);
        add_vec(p + "ln2_b", m.layers[l].ln2_b);
    }
    add_mat("out_proj", m.out_proj);
    return out;
}

double alpha_schedule(double alpha0, int layer) {
    if (!(alpha0 >= 0.0 && alpha0 <= 1.0)) {
        throw Error(ErrorCode::RangeError, "alpha_schedule: alpha0 must be in [0,1]");
    }
    if (layer < 0) throw Error(ErrorCode::RangeError, "alpha_schedule: layer must be >= 0");
    return alpha0 * std::exp(-layer / 3.0);
}

Mat fuse_logits(const Mat& A, const SimilarityMatrix& s_freq, double alpha_l,
                const BoolVec& valid) {
    const int T = static_cast<int>(valid.size());
    const int n = T + 1;
    if (A.rows != n || A.cols != n) {
        throw Error(ErrorCode::ShapeMismatch, "fuse_logits: A must be (T+1)x(T+1)");
    }
    if (s_freq.s.rows != T || s_freq.s.cols != T) {
        throw Error(ErrorCode::ShapeMismatch, "fuse_logits: similarity must be TxT");
    }
    if (alpha_l < kFuseBypass) return A;

    BoolVec slot_valid(n, 0);
    slot_valid[0] = 1;
    for (int t = 0; t < T; ++t) slot_valid[t + 1] = valid[t];
    std::vector<int> keys;
    for (int i = 0; i < n; ++i) {
        if (slot_valid[i]) keys.push_back(i);
    }

    Mat shat(T, T);
    for (int i = 0; i < T; ++i) {
        if (!valid[i]) continue;
        std::vector<double> row(s_freq.s.row(i), s_freq.s.row(i) + T);
        std::vector<double> z = zscore(row, valid);
        for (int j = 0; j < T; ++j) shat(i, j) = z[j];
    }

    Mat out = A;
    std::vector<double> zrow(keys.size());
    for (int i = 0; i < n; ++i) {
        if (!slot_valid[i]) continue;
        double mu, sd;
        zscore_row(A.row(i), keys, mu, sd, zrow);
        for (size_t kk = 0; kk < keys.size(); ++kk) {
            const int j = keys[kk];
            if (i == 0 || j == 0) {
                out(i, j) = zrow[kk];
            } else {
                out(i, j) = (1.0 - alpha_l) * zrow[kk] + alpha_l * shat(i - 1, j - 1);
            }
        }
        for (int j = 0; j < n; ++j) {
            if (!slot_valid[j]) out(i, j) = -std::numeric_limits<double>::infinity();
        }
    }
    return out;
}

ForwardResult attention_forward(const ToyModel& model, const TokenState& corrupted,
                                const TextCondition& condition, const SpectralProfile& profile,
                                const Config& cfg) {
    ForwardCache fc;
    forward_impl(model, corrupted, condition, profile, cfg, fc);
    ForwardResult res;
    res.logits = std::move(fc.logits);
    res.record.fused_logits.resize(model.layer_count);
    res.record.probs.resize(model.layer_count);
    for (int l = 0; l < model.layer_count; ++l) {
        res.record.fused_logits[l] = std::move(fc.layers[l].fused);
        res.record.probs[l] = std::move(fc.layers[l].probs);
    }
    return res;
}

double masked_cross_entropy(const Mat& logits, const std::vector<int>& targets,
                            const BoolVec& loss_mask) {
    const int T = logits.rows;
    const int V = logits.cols;
    if (static_cast<int>(targets.size()) != T || static_cast<int>(loss_mask.size()) != T) {
        throw Error(ErrorCode::ShapeMismatch, "masked_cross_entropy: length mismatch");
    }
    int count = 0;
    double total = 0.0;
    for (int t = 0; t < T; ++t) {
        if (!loss_mask[t]) continue;
        const int target = targets[t];
        if (target < 1 || target > V) {
            throw Error(ErrorCode::TokenOutOfRange, "masked_cross_entropy: target out of range");
        }
        double mx = logits(t, 0);
        for (int v = 1; v < V; ++v) mx = std::max(mx, logits(t, v));
        double sum = 0.0;
        for (int v = 0; v < V; ++v) sum += std::exp(logits(t, v) - mx);
        total += mx + std::log(sum) - logits(t, target - 1);
        count++;
    }
    if (count == 0) throw Error(ErrorCode::EmptyMask, "masked_cross_entropy: empty loss mask");
    return total / count;
}

BackwardResult backward(const ToyModel& model, const TrainingExample& example, const Config& cfg) {
    ForwardCache fc;
    forward_impl(model, example.corrupted, example.condition, example.profile, cfg, fc);

    const int T = example.corrupted.length();
    const int V = model.vocab;
    const int dim = model.dim;
    const int n = fc.n;
    const int H = model.heads;
    const int dh = dim / H;
    const double scale = std::sqrt(static_cast<double>(dh));

    BackwardResult res;
    res.loss = masked_cross_entropy(fc.logits, example.targets, example.loss_mask);
    res.grads = ToyModel::zeros_like(model);
    ToyModel& g = res.grads;

    int count = count_true(example.loss_mask);

    // d loss / d logits
    Mat dlogits(T, V);
    for (int t = 0; t < T; ++t) {
        if (!example.loss_mask[t]) continue;
        double mx = fc.logits(t, 0);
        for (int v = 1; v < V; ++v) mx = std::max(mx, fc.logits(t, v));
        double sum = 0.0;
        for (int v = 0; v < V; ++v) sum += std::exp(fc.logits(t, v) - mx);
        for (int v = 0; v < V; ++v) {
            double p = std::exp(fc.logits(t, v) - mx) / sum;
            dlogits(t, v) = p / count;
        }
        dlogits(t, example.targets[t] - 1) -= 1.0 / count;
    }

    // output projection
    Mat dx(n, dim);
    const Mat& xf = fc.layers.back().x_out;
    for (int t = 0; t < T; ++t) {
        for (int v = 0; v < V; ++v) {
            const double dl = dlogits(t, v);
            if (dl == 0.0) continue;
            for (int d = 0; d < dim; ++d) {
                g.out_proj(d, v) += xf(t + 1, d) * dl;
                dx(t + 1, d) += dl * model.out_proj(d, v);
            }
        }
    }

    for (int l = model.layer_count - 1; l >= 0; --l) {
        const ToyModel::Layer& lw = model.layers[l];
        ToyModel::Layer& lg = g.layers[l];
        const LayerCache& c = fc.layers[l];
        const double alpha = fc.alpha[l];
        const bool fusing = alpha >= kFuseBypass;
        const int hidden = 4 * dim;

        // feed-forward block: x_out = x_mid + gelu(ln2(x_mid) W1) W2
        Mat dg1(n, hidden);
        mat_mul_bt(dx, lw.w2, dg1);           // dg1 = dx * W2^T
        accum_At_B(c.g1, dx, lg.w2);          // dW2 += g1^T dx
        Mat dh1(n, hidden);
        for (int i = 0; i < n; ++i) {
            for (int j = 0; j < hidden; ++j) dh1(i, j) = dg1(i, j) * gelu_grad(c.h1(i, j));
        }
        accum_At_B(c.bvec, dh1, lg.w1);       // dW1 += b^T dh1
        Mat dbvec(n, dim);
        mat_mul_bt(dh1, lw.w1, dbvec);        // db = dh1 * W1^T
        Mat dx_mid = dx;                      // residual path
        layer_norm_backward(dbvec, c.xhat2, c.rstd2, lw.ln2_g, dx_mid, lg.ln2_g, lg.ln2_b);

        // attention block: x_mid = x_in + (concat_h P_h V_h) Wo
        Mat dmix(n, dim);
        mat_mul_bt(dx_mid, lw.wo, dmix);      // dO = dx_mid * Wo^T
        accum_At_B(c.attn_mix, dx_mid, lg.wo);

        Mat dq(n, dim), dk(n, dim), dv(n, dim);
        for (int h = 0; h < H; ++h) {
            const int o = h * dh;
            const Mat& P = c.probs[h];
            const Mat& A = c.a_raw[h];

            // dP and dV
            Mat dP(n, n);
            for (int i = 0; i < n; ++i) {
                for (int j : fc.valid_keys) {
                    double acc = 0.0;
                    for (int d = 0; d < dh; ++d) acc += dmix(i, o + d) * c.v(j, o + d);
                    dP(i, j) = acc;
                    for (int d = 0; d < dh; ++d) dv(j, o + d) += P(i, j) * dmix(i, o + d);
                }
            }

            // softmax backward -> dfused
            Mat dF(n, n);
            for (int i = 0; i < n; ++i) {
                double dot = 0.0;
                for (int j : fc.valid_keys) dot += dP(i, j) * P(i, j);
                for (int j : fc.valid_keys) dF(i, j) = P(i, j) * (dP(i, j) - dot);
            }

            // fusion backward -> dA
            Mat dA(n, n);
            if (!fusing) {
                dA = dF;
            } else {
                const int m = static_cast<int>(fc.valid_keys.size());
                for (int i = 0; i < n; ++i) {
                    if (!fc.slot_valid[i]) {  // raw row
                        for (int j : fc.valid_keys) dA(i, j) = dF(i, j);
                        continue;
                    }
                    const double sd = c.sd[h][i];
                    if (sd < kZscoreGuard) continue;  // z-score guard zeroed the row
                    const double mu = c.mu[h][i];
                    // gradient w.r.t. the z-scored row
                    double mean_g = 0.0, mean_ga = 0.0;
                    std::vector<double> gz(m), ahat(m);
                    for (int kk = 0; kk < m; ++kk) {
                        const int j = fc.valid_keys[kk];
                        const double w = (i == 0 || j == 0) ? 1.0 : (1.0 - alpha);
                        gz[kk] = w * dF(i, j);
                        ahat[kk] = (A(i, j) - mu) / sd;
                        mean_g += gz[kk];
                        mean_ga += gz[kk] * ahat[kk];
                    }
                    mean_g /= m;
                    mean_ga /= m;
                    for (int kk = 0; kk < m; ++kk) {
                        dA(i, fc.valid_keys[kk]) = (gz[kk] - mean_g - ahat[kk] * mean_ga) / sd;
                    }
                }
            }

            // dA -> dQ, dK
            for (int i = 0; i < n; ++i) {
                for (int j = 0; j < n; ++j) {
                    const double da = dA(i, j);
                    if (da == 0.0) continue;
                    for (int d = 0; d < dh; ++d) {
                        dq(i, o + d) += da * c.k(j, o + d) / scale;
                        dk(j, o + d) += da * c.q(i, o + d) / scale;
                    }
                }
            }
        }

        Mat da(n, dim);
        mat_mul_bt(dq, lw.wq, da);
        accum_At_B(c.a, dq, lg.wq);
        {
            Mat tmp(n, dim);
            mat_mul_bt(dk, lw.wk, tmp);
            for (size_t i = 0; i < tmp.v.size(); ++i) da.v[i] += tmp.v[i];
            accum_At_B(c.a, dk, lg.wk);
            mat_mul_bt(dv, lw.wv, tmp);
            for (size_t i = 0; i < tmp.v.size(); ++i) da.v[i] += tmp.v[i];
            accum_At_B(c.a, dv, lg.wv);
        }

        Mat dx_in = dx_mid;  // residual path
        layer_norm_backward(da, c.xhat1, c.rstd1, lw.ln1_g, dx_in, lg.ln1_g, lg.ln1_b);
        dx = std::move(dx_in);
    }

    // embeddings
    for (int j = 0; j < dim; ++j) {
        const double d0 = dx(0, j);
        for (int e = 0; e < model.cond_dim; ++e) g.cond_proj(e, j) += example.condition.vec[e] * d0;
    }
    for (int t = 0; t < T; ++t) {
        int z = example.corrupted.tokens[t];
        int row = (z == kMaskToken) ? model.vocab : z - 1;
        for (int j = 0; j < dim; ++j) {
            g.tok_emb(row, j) += dx(t + 1, j);
            g.pos_emb(t, j) += dx(t + 1, j);
        }
    }
    return res;
}

std::vector<double> train(ToyModel& model, const std::vector<TrainItem>& corpus, const Config& cfg,
                          const TrainOptions& opt) {
    if (corpus.empty()) throw Error(ErrorCode::EmptyInput, "train: empty corpus");
    if (opt.epochs < 0) throw Error(ErrorCode::RangeError, "train: epochs must be >= 0");

    std::vector<double> curve;
    curve.reserve(opt.epochs);
    const std::uint64_t nseq = corpus.size();
    for (int epoch = 0; epoch < opt.epochs; ++epoch) {
        double total = 0.0;
        for (std::uint64_t i = 0; i < nseq; ++i) {
            const TrainItem& item = corpus[i];
            Rng rng = Rng::derive(cfg.seed, "masking", epoch * nseq + i);
            TrainingExample ex =
                build_training_example(item.tokens, item.valid, item.embeddings, item.condition,
                                       model.vocab, cfg, rng, opt.policy);
            BackwardResult back = backward(model, ex, cfg);
            total += back.loss;

            auto views = param_views(model);
            auto gviews = param_views(back.grads);
            for (size_t p = 0; p < views.size(); ++p) {
                for (size_t j = 0; j < views[p].size; ++j) {
                    views[p].data[j] -= opt.lr * gviews[p].data[j];
                }
            }
        }
        curve.push_back(total / static_cast<double>(nseq));
    }
    return curve;
}

}  // namespace dynmask
