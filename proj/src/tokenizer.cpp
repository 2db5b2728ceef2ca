#include "dynmask/tokenizer.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <limits>

namespace dynmask {

std::vector<int> quantize(const Mat& features, const Codebook& codebook) {
    const int T = features.rows;
    const int D = features.cols;
    const int V = codebook.size();
    if (D != codebook.dim()) {
        throw Error(ErrorCode::DimMismatch, "quantize: feature dim " + std::to_string(D) +
                                                " != codebook dim " + std::to_string(codebook.dim()));
    }
    require_finite(features, "quantize: features");

    std::vector<int> tokens(T, 0);
#pragma omp parallel for schedule(static)
    for (int t = 0; t < T; ++t) {
        const double* x = features.row(t);
        int best = 0;
        double best_d = std::numeric_limits<double>::infinity();
        for (int v = 0; v < V; ++v) {
            const double* e = codebook.entries.row(v);
            double d = 0.0;
            for (int j = 0; j < D; ++j) {
                double diff = x[j] - e[j];
                d += diff * diff;
            }
            if (d < best_d) {
                best_d = d;
                best = v;
            }
        }
        tokens[t] = best + 1;  // tokens are 1-based
    }
    return tokens;
}

Mat lookup_embeddings(const TokenState& tokens, const Codebook& codebook,
                      const std::vector<double>& mask_fill) {
    const int T = tokens.length();
    const int D = codebook.dim();
    const int V = codebook.size();
    if (static_cast<int>(mask_fill.size()) != D) {
        throw Error(ErrorCode::DimMismatch, "lookup_embeddings: mask_fill dim != codebook dim");
    }
    Mat out(T, D);
    for (int t = 0; t < T; ++t) {
        int z = tokens.tokens[t];
        if (z == kMaskToken) {
            for (int d = 0; d < D; ++d) out(t, d) = mask_fill[d];
        } else if (z >= 1 && z <= V) {
            const double* e = codebook.entries.row(z - 1);
            for (int d = 0; d < D; ++d) out(t, d) = e[d];
        } else {
            throw Error(ErrorCode::TokenOutOfRange,
                        "lookup_embeddings: token " + std::to_string(z) + " at position " +
                            std::to_string(t));
        }
    }
    return out;
}

std::vector<double> codebook_centroid(const Codebook& codebook) {
    const int V = codebook.size();
    const int D = codebook.dim();
    std::vector<double> c(D, 0.0);
    for (int v = 0; v < V; ++v) {
        for (int d = 0; d < D; ++d) c[d] += codebook.entries(v, d);
    }
    for (int d = 0; d < D; ++d) c[d] /= V;
    return c;
}

namespace {

double sq_dist(const double* a, const double* b, int d) {
    double acc = 0.0;
    for (int j = 0; j < d; ++j) {
        double diff = a[j] - b[j];
        acc += diff * diff;
    }
    return acc;
}

// assignment step; out-of-line so both fit_codebook and quantization_error
// share the exact arithmetic
void assign_points(const Mat& x, const Mat& centers, std::vector<int>& assign,
                   std::vector<double>& dist) {
    const int n = x.rows;
    const int d = x.cols;
    const int v = centers.rows;
#pragma omp parallel for schedule(static)
    for (int i = 0; i < n; ++i) {
        int best = 0;
        double best_d = std::numeric_limits<double>::infinity();
        for (int c = 0; c < v; ++c) {
            double dd = sq_dist(x.row(i), centers.row(c), d);
            if (dd < best_d) {
                best_d = dd;
                best = c;
            }
        }
        assign[i] = best;
        dist[i] = best_d;
    }
}

}  // namespace

Codebook fit_codebook(const Mat& features, int vocab, int iters, std::uint64_t seed) {
    const int n = features.rows;
    const int d = features.cols;
    if (n < vocab) {
        throw Error(ErrorCode::TooFewSamples,
                    "fit_codebook: " + std::to_string(n) + " samples < V=" + std::to_string(vocab));
    }
    if (vocab < 2) throw Error(ErrorCode::RangeError, "fit_codebook: V must be >= 2");
    if (iters < 1) throw Error(ErrorCode::RangeError, "fit_codebook: iters must be >= 1");
    require_finite(features, "fit_codebook: features");

    Rng rng = Rng::derive(seed, "kmeans");
    Mat centers(vocab, d);

    // farthest-point init: random first center, then maximize distance to the
    // nearest already-chosen one (ties to the lowest index)
    std::vector<double> min_d(n, std::numeric_limits<double>::infinity());
    int first = rng.uniform_int(0, n - 1);
    std::copy_n(features.row(first), d, centers.row(0));
    for (int c = 1; c < vocab; ++c) {
        const double* prev = centers.row(c - 1);
        for (int i = 0; i < n; ++i) {
            min_d[i] = std::min(min_d[i], sq_dist(features.row(i), prev, d));
        }
        int far = 0;
        for (int i = 1; i < n; ++i) {
            if (min_d[i] > min_d[far]) far = i;
        }
        std::copy_n(features.row(far), d, centers.row(c));
    }

    std::vector<int> assign(n, 0);
    std::vector<double> dist(n, 0.0);
    for (int it = 0; it < iters; ++it) {
        assign_points(features, centers, assign, dist);

        std::vector<int> counts(vocab, 0);
        Mat sums(vocab, d);
        for (int i = 0; i < n; ++i) {
            counts[assign[i]]++;
            const double* x = features.row(i);
            double* s = sums.row(assign[i]);
            for (int j = 0; j < d; ++j) s[j] += x[j];
        }

        std::vector<double> residual = dist;
        for (int c = 0; c < vocab; ++c) {
            if (counts[c] > 0) {
                for (int j = 0; j < d; ++j) centers(c, j) = sums(c, j) / counts[c];
            } else {
                int far = 0;
                for (int i = 1; i < n; ++i) {
                    if (residual[i] > residual[far]) far = i;
                }
                std::copy_n(features.row(far), d, centers.row(c));
                residual[far] = -1.0;  // next empty cluster takes the next-farthest
            }
        }
    }
    return Codebook(std::move(centers));
}

double quantization_error(const Mat& features, const Codebook& codebook) {
    std::vector<int> assign(features.rows, 0);
    std::vector<double> dist(features.rows, 0.0);
    assign_points(features, codebook.entries, assign, dist);
    double total = 0.0;
    for (double x : dist) total += x;
    return total;
}

// ---------------------------------------------------------------------------
// Synthetic motion

namespace {

void check_bin(int m, int window) {
    if (m < 1 || m > window - 1) {
        throw Error(ErrorCode::BadSpec, "synth: sine/chirp bin " + std::to_string(m) +
                                            " outside [1, W-1] for W=" + std::to_string(window));
    }
}

// Appends `length` unit-amplitude rows of one segment kind starting at global
// time offset t0. Sine/chirp phase runs on the segment-local clock; segment
// boundaries are allowed to jump.
void gen_segment(SynthKind kind, int length, int t0, int bin, int bin_end, int window, int dim,
                 Rng& rng, Mat& rows, std::vector<int>& labels) {
    switch (kind) {
        case SynthKind::Static: {
            std::vector<double> base(dim);
            for (int j = 0; j < dim; ++j) base[j] = rng.normal();
            for (int t = 0; t < length; ++t) {
                for (int j = 0; j < dim; ++j) rows(t0 + t, j) = base[j];
                labels[t0 + t] = kLabelStatic;
            }
            break;
        }
        case SynthKind::Noise: {
            for (int t = 0; t < length; ++t) {
                for (int j = 0; j < dim; ++j) rows(t0 + t, j) = rng.normal();
                labels[t0 + t] = kLabelIrregular;
            }
            break;
        }
        case SynthKind::Sine:
        case SynthKind::Chirp: {
            std::vector<double> dir(dim);
            for (int j = 0; j < dim; ++j) dir[j] = rng.normal();
            std::vector<double> x(dim, 0.0);
            for (int t = 0; t < length; ++t) {
                if (t > 0) {
                    double m = static_cast<double>(bin);
                    if (kind == SynthKind::Chirp && length > 1) {
                        m = bin + (bin_end - bin) * static_cast<double>(t) / (length - 1);
                    }
                    // first differences follow the DCT-II cosine at bin m
                    double v = std::cos((M_PI / window) * (t + 0.5) * m);
                    for (int j = 0; j < dim; ++j) x[j] += dir[j] * v;
                }
                for (int j = 0; j < dim; ++j) rows(t0 + t, j) = x[j];
                labels[t0 + t] = kLabelPeriodic;
            }
            break;
        }
        case SynthKind::Composite:
            throw Error(ErrorCode::BadSpec, "synth: nested composite");
    }
}

}  // namespace

LabeledSequence synth_motion(const SynthSpec& spec) {
    if (spec.frames < 1) throw Error(ErrorCode::BadSpec, "synth: T must be >= 1");
    if (spec.feature_dim < 1) throw Error(ErrorCode::BadSpec, "synth: D must be >= 1");
    if (!(spec.amplitude > 0.0)) throw Error(ErrorCode::BadSpec, "synth: amplitude must be > 0");

    if (spec.kind == SynthKind::Sine) check_bin(spec.bin, spec.window);
    if (spec.kind == SynthKind::Chirp) {
        check_bin(spec.bin, spec.window);
        check_bin(spec.bin_end, spec.window);
    }
    if (spec.kind == SynthKind::Composite) {
        if (spec.segments.empty()) throw Error(ErrorCode::BadSpec, "synth: composite with no segments");
        int total = 0;
        for (const auto& seg : spec.segments) {
            if (seg.length < 1) throw Error(ErrorCode::BadSpec, "synth: segment length must be >= 1");
            if (seg.kind == SynthKind::Sine) check_bin(seg.bin, spec.window);
            if (seg.kind == SynthKind::Chirp) {
                check_bin(seg.bin, spec.window);
                check_bin(seg.bin_end, spec.window);
            }
            total += seg.length;
        }
        if (total != spec.frames) {
            throw Error(ErrorCode::BadSpec, "synth: segment lengths sum to " + std::to_string(total) +
                                                ", expected T=" + std::to_string(spec.frames));
        }
    }

    Rng rng = Rng::derive(spec.seed, "synth");
    Mat rows(spec.frames, spec.feature_dim);
    std::vector<int> labels(spec.frames, kLabelStatic);

    if (spec.kind == SynthKind::Composite) {
        int t0 = 0;
        for (const auto& seg : spec.segments) {
            gen_segment(seg.kind, seg.length, t0, seg.bin, seg.bin_end, spec.window,
                        spec.feature_dim, rng, rows, labels);
            t0 += seg.length;
        }
    } else {
        gen_segment(spec.kind, spec.frames, 0, spec.bin, spec.bin_end, spec.window,
                    spec.feature_dim, rng, rows, labels);
    }

    // scale last so amplitude a and 2a give exactly proportional sequences
    for (double& x : rows.v) x *= spec.amplitude;

    BoolVec valid(spec.frames, 1);
    LabeledSequence out{MotionSequence(std::move(rows), std::move(valid)), std::move(labels)};
    return out;
}

// ---------------------------------------------------------------------------
// Recipe parsing

namespace {

std::string strip_spaces(const std::string& s) {
    std::string out;
    out.reserve(s.size());
    for (char c : s) {
        if (!std::isspace(static_cast<unsigned char>(c))) out += c;
    }
    return out;
}

int parse_pos_int(const std::string& s, const char* what) {
    if (s.empty()) throw Error(ErrorCode::BadSpec, std::string("synth recipe: empty ") + what);
    int v = 0;
    for (char c : s) {
        if (!std::isdigit(static_cast<unsigned char>(c))) {
            throw Error(ErrorCode::BadSpec, std::string("synth recipe: bad ") + what + ": " + s);
        }
        v = v * 10 + (c - '0');
    }
    return v;
}

// parses "static", "noise", "sine(2)", "chirp(1->3)"
void parse_kind(const std::string& s, SynthKind& kind, int& bin, int& bin_end) {
    if (s == "static") {
        kind = SynthKind::Static;
    } else if (s == "noise") {
        kind = SynthKind::Noise;
    } else if (s.rfind("sine(", 0) == 0 && s.back() == ')') {
        kind = SynthKind::Sine;
        bin = parse_pos_int(s.substr(5, s.size() - 6), "sine bin");
        bin_end = bin;
    } else if (s.rfind("chirp(", 0) == 0 && s.back() == ')') {
        kind = SynthKind::Chirp;
        std::string body = s.substr(6, s.size() - 7);
        size_t arrow = body.find("->");
        if (arrow == std::string::npos) {
            throw Error(ErrorCode::BadSpec, "synth recipe: chirp needs a->b bins: " + s);
        }
        bin = parse_pos_int(body.substr(0, arrow), "chirp start bin");
        bin_end = parse_pos_int(body.substr(arrow + 2), "chirp end bin");
    } else {
        throw Error(ErrorCode::BadSpec, "synth recipe: unknown kind: " + s);
    }
}

}  // namespace

SynthSpec parse_synth_spec(const std::string& recipe, int window) {
    std::string s = strip_spaces(recipe);
    if (s.empty()) throw Error(ErrorCode::BadSpec, "synth recipe: empty");

    SynthSpec spec;
    spec.window = window;

    // split off the body: composite(...) may contain commas inside parens
    size_t body_end = 0;
    int depth = 0;
    while (body_end < s.size()) {
        char c = s[body_end];
        if (c == '(') depth++;
        if (c == ')') depth--;
        if (c == ',' && depth == 0) break;
        body_end++;
    }
    std::string body = s.substr(0, body_end);

    bool t_given = false;
    if (body.rfind("composite(", 0) == 0 && body.back() == ')') {
        spec.kind = SynthKind::Composite;
        std::string inner = body.substr(10, body.size() - 11);
        size_t start = 0;
        int total = 0;
        while (start <= inner.size()) {
            size_t bar = inner.find('|', start);
            std::string seg_s =
                (bar == std::string::npos) ? inner.substr(start) : inner.substr(start, bar - start);
            size_t colon = seg_s.rfind(':');
            if (colon == std::string::npos) {
                throw Error(ErrorCode::BadSpec, "synth recipe: segment needs kind:length: " + seg_s);
            }
            SynthSegment seg;
            parse_kind(seg_s.substr(0, colon), seg.kind, seg.bin, seg.bin_end);
            seg.length = parse_pos_int(seg_s.substr(colon + 1), "segment length");
            total += seg.length;
            spec.segments.push_back(seg);
            if (bar == std::string::npos) break;
            start = bar + 1;
        }
        spec.frames = total;
        t_given = true;  // derived from segments
    } else {
        parse_kind(body, spec.kind, spec.bin, spec.bin_end);
    }

    spec.frames = t_given ? spec.frames : 64;
    spec.feature_dim = 3;

    size_t pos = body_end;
    while (pos < s.size()) {
        if (s[pos] == ',') pos++;
        size_t next = s.find(',', pos);
        std::string kv = (next == std::string::npos) ? s.substr(pos) : s.substr(pos, next - pos);
        size_t eq = kv.find('=');
        if (eq == std::string::npos) {
            throw Error(ErrorCode::BadSpec, "synth recipe: expected key=value: " + kv);
        }
        std::string key = kv.substr(0, eq);
        std::string value = kv.substr(eq + 1);
        if (key == "T") {
            int t = parse_pos_int(value, "T");
            if (t_given && t != spec.frames) {
                throw Error(ErrorCode::BadSpec, "synth recipe: T does not match segment sum");
            }
            spec.frames = t;
        } else if (key == "D") {
            spec.feature_dim = parse_pos_int(value, "D");
        } else if (key == "amp") {
            try {
                size_t used = 0;
                spec.amplitude = std::stod(value, &used);
                if (used != value.size()) throw std::invalid_argument(value);
            } catch (const std::exception&) {
                throw Error(ErrorCode::BadSpec, "synth recipe: bad amp: " + value);
            }
        } else if (key == "seed") {
            spec.seed = static_cast<std::uint64_t>(parse_pos_int(value, "seed"));
        } else {
            throw Error(ErrorCode::BadSpec, "synth recipe: unknown key: " + key);
        }
        if (next == std::string::npos) break;
        pos = next;
    }
    return spec;
}

LabeledCorpus make_corpus(const std::string& recipe, int count, int window, std::uint64_t seed) {
    if (count < 1) throw Error(ErrorCode::BadSpec, "make_corpus: count must be >= 1");
    SynthSpec base = parse_synth_spec(recipe, window);

    LabeledCorpus corpus;
    for (int i = 0; i < count; ++i) {
        SynthSpec spec = base;
        spec.seed = Rng::derive(seed, "corpus", static_cast<std::uint64_t>(i)).next_u64();
        LabeledSequence seq = synth_motion(spec);
        corpus.sequences.push_back(std::move(seq.motion));
        corpus.complexity_labels.push_back(std::move(seq.labels));

        Rng crng = Rng::derive(seed, "condition", static_cast<std::uint64_t>(i));
        std::vector<double> c(base.feature_dim);
        for (double& x : c) x = crng.normal();
        corpus.text_conditions.emplace_back(std::move(c));
    }
    return corpus;
}

}  // namespace dynmask
