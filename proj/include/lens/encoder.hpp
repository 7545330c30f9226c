#pragma once

// Small pre-norm transformer. Causal or bidirectional attention behind one
// config switch, learned absolute positions, GELU feed-forward, and an
// output head that can be swapped between the original token-embedding
// matrix and KMeans centroids without touching the input embeddings.
//
// forward() keeps every intermediate needed by the training backward pass;
// at desk scale the memory cost is irrelevant and one code path means the
// gradient check exercises exactly what inference runs.

#include <cstring>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "lens/common.hpp"
#include "lens/vocab.hpp"

namespace lens {

enum class AttentionMode { causal, bidirectional };

inline const char* to_string(AttentionMode m) {
    return m == AttentionMode::causal ? "causal" : "bidirectional";
}

inline AttentionMode attention_mode_from_string(std::string_view s) {
    if (s == "causal") return AttentionMode::causal;
    if (s == "bidirectional" || s == "bidir") return AttentionMode::bidirectional;
    throw UsageError("unknown attention mode: " + std::string(s));
}

struct EncoderConfig {
    std::size_t d_model = 32;
    std::size_t n_layers = 2;
    std::size_t n_heads = 4;
    std::size_t d_ff = 64;
    std::size_t max_len = 64;
    std::size_t vocab_size = 0;
    AttentionMode attention_mode = AttentionMode::bidirectional;
    std::uint64_t seed = 0;

    void validate() const {
        if (d_model == 0 || n_layers == 0 || n_heads == 0 || d_ff == 0 || vocab_size == 0)
            throw UsageError("encoder config: all counts must be >= 1");
        if (max_len < 2) throw UsageError("encoder config: max_len must be >= 2");
        if (d_model % n_heads != 0) throw UsageError("d_model not divisible by n_heads");
    }
};

enum class HeadKind { original, centroid };

struct OutputHead {
    HeadKind kind = HeadKind::original;
    Mat matrix;  // m x d_model; m = |V| (original) or k (centroid)
};

struct LayerWeights {
    Mat ln1_gamma, ln1_beta;  // 1 x d_model
    Mat wq, wk, wv, wo;       // d_model x d_model
    Mat ln2_gamma, ln2_beta;  // 1 x d_model
    Mat w1;                   // d_model x d_ff
    Mat w2;                   // d_ff x d_model
};

struct EncoderModel {
    EncoderConfig cfg;
    Mat input_embeddings;       // |V| x d_model
    Mat positional_embeddings;  // max_len x d_model
    std::vector<LayerWeights> layers;
    Mat final_ln_gamma, final_ln_beta;  // 1 x d_model
    OutputHead head;
};

// Tensors in declaration order; the same order drives the optimizer state
// and the checkpoint layout.
template <typename Model, typename Fn>
void for_each_tensor(Model& m, Fn&& fn) {
    fn(m.input_embeddings);
    fn(m.positional_embeddings);
    for (auto& l : m.layers) {
        fn(l.ln1_gamma);
        fn(l.ln1_beta);
        fn(l.wq);
        fn(l.wk);
        fn(l.wv);
        fn(l.wo);
        fn(l.ln2_gamma);
        fn(l.ln2_beta);
        fn(l.w1);
        fn(l.w2);
    }
    fn(m.final_ln_gamma);
    fn(m.final_ln_beta);
    fn(m.head.matrix);
}

inline EncoderModel init_model(const EncoderConfig& cfg) {
    cfg.validate();
    EncoderModel m;
    m.cfg = cfg;
    auto rng = make_rng(cfg.seed);
    const double s = 1.0 / std::sqrt(static_cast<double>(cfg.d_model));

    m.input_embeddings = random_normal_matrix(rng, cfg.vocab_size, cfg.d_model, s);
    m.positional_embeddings = random_normal_matrix(rng, cfg.max_len, cfg.d_model, s);
    m.layers.resize(cfg.n_layers);
    for (auto& l : m.layers) {
        l.ln1_gamma = Mat(1, cfg.d_model, 1.0);
        l.ln1_beta = Mat(1, cfg.d_model, 0.0);
        l.wq = random_normal_matrix(rng, cfg.d_model, cfg.d_model, s);
        l.wk = random_normal_matrix(rng, cfg.d_model, cfg.d_model, s);
        l.wv = random_normal_matrix(rng, cfg.d_model, cfg.d_model, s);
        l.wo = random_normal_matrix(rng, cfg.d_model, cfg.d_model, s);
        l.ln2_gamma = Mat(1, cfg.d_model, 1.0);
        l.ln2_beta = Mat(1, cfg.d_model, 0.0);
        l.w1 = random_normal_matrix(rng, cfg.d_model, cfg.d_ff, s);
        l.w2 = random_normal_matrix(rng, cfg.d_ff, cfg.d_model, s);
    }
    m.final_ln_gamma = Mat(1, cfg.d_model, 1.0);
    m.final_ln_beta = Mat(1, cfg.d_model, 0.0);

    // Output head is untied from input embeddings: a fresh |V| x d matrix,
    // so a later centroid swap leaves the inputs intact.
    m.head.kind = HeadKind::original;
    m.head.matrix = random_normal_matrix(rng, cfg.vocab_size, cfg.d_model, s);
    return m;
}

// Head replacement; input embeddings are untouched.
inline void set_head(EncoderModel& m, OutputHead head) {
    if (head.matrix.cols != m.cfg.d_model) throw UsageError("head width mismatch");
    if (head.matrix.rows < 2) throw UsageError("head must have at least 2 rows");
    m.head = std::move(head);
}

// n x n boolean mask. Position i may attend to j iff the mode allows it and
// j is a real (non-padding) position; rows i >= n_valid are padding queries
// and get no permissions at all.
struct AttnMask {
    std::size_t n = 0;
    std::vector<std::uint8_t> allow;
    bool operator()(std::size_t i, std::size_t j) const { return allow[i * n + j] != 0; }
};

inline AttnMask attention_mask(AttentionMode mode, std::size_t n, std::size_t n_valid) {
    AttnMask m;
    m.n = n;
    m.allow.assign(n * n, 0);
    for (std::size_t i = 0; i < n_valid; ++i)
        for (std::size_t j = 0; j < n_valid; ++j) {
            const bool ok = mode == AttentionMode::bidirectional || j <= i;
            m.allow[i * n + j] = ok ? 1 : 0;
        }
    return m;
}

inline AttnMask attention_mask(AttentionMode mode, std::size_t n) {
    return attention_mask(mode, n, n);
}

namespace detail {

struct LayerNormCache {
    Mat xhat;                     // normalized rows
    std::vector<double> inv_std;  // per row
};

constexpr double kLnEps = 1e-5;

inline Mat layer_norm(const Mat& x, const Mat& gamma, const Mat& beta, LayerNormCache& cache) {
    Mat y(x.rows, x.cols);
    cache.xhat = Mat(x.rows, x.cols);
    cache.inv_std.assign(x.rows, 0.0);
    for (std::size_t i = 0; i < x.rows; ++i) {
        double mean = 0.0;
        for (std::size_t j = 0; j < x.cols; ++j) mean += x(i, j);
        mean /= static_cast<double>(x.cols);
        double var = 0.0;
        for (std::size_t j = 0; j < x.cols; ++j) {
            const double d = x(i, j) - mean;
            var += d * d;
        }
        var /= static_cast<double>(x.cols);
        const double inv = 1.0 / std::sqrt(var + kLnEps);
        cache.inv_std[i] = inv;
        for (std::size_t j = 0; j < x.cols; ++j) {
            const double xh = (x(i, j) - mean) * inv;
            cache.xhat(i, j) = xh;
            y(i, j) = gamma(0, j) * xh + beta(0, j);
        }
    }
    return y;
}

inline double gelu(double u) { return 0.5 * u * (1.0 + std::erf(u / std::sqrt(2.0))); }

inline double gelu_grad(double u) {
    const double phi = std::exp(-0.5 * u * u) / std::sqrt(2.0 * 3.14159265358979323846);
    const double Phi = 0.5 * (1.0 + std::erf(u / std::sqrt(2.0)));
    return Phi + u * phi;
}

struct LayerTrace {
    Mat x_in;
    LayerNormCache ln1;
    Mat y1, q, k, v;
    std::vector<Mat> probs;  // per head, n x n
    Mat attn_concat;
    Mat x_mid;
    LayerNormCache ln2;
    Mat y2, u, g;
};

}  // namespace detail

struct ForwardTrace {
    std::vector<int> ids_internal;  // BOS + content + padding
    std::size_t n_rows = 0;         // returned rows: BOS + content
    std::size_t n_int = 0;          // internal rows incl padding
    AttnMask mask;
    std::vector<detail::LayerTrace> layers;
    detail::LayerNormCache final_ln;
    Mat x_final;       // input to the final LayerNorm
    Mat hidden_full;   // n_int x d_model
    Mat logits_full;   // n_int x head rows
};

struct ForwardResult {
    Mat hidden;  // n_rows x d_model
    Mat logits;  // n_rows x m
};

// Runs the model over BOS + ids (+ PAD up to pad_to content positions).
// Rows for padding are dropped from the result; masked softmax guarantees
// they cannot influence the kept rows.
inline ForwardTrace forward_trace(const EncoderModel& m, std::span<const int> ids,
                                  std::size_t pad_to = 0) {
    const auto& cfg = m.cfg;
    for (int id : ids)
        if (id < 0 || static_cast<std::size_t>(id) >= cfg.vocab_size)
            throw DataError("token id out of range in forward");

    ForwardTrace t;
    t.n_rows = 1 + ids.size();
    if (t.n_rows > cfg.max_len) throw DataError("exceeds max_len");
    const std::size_t content = std::max(ids.size(), pad_to);
    t.n_int = 1 + content;
    if (t.n_int > cfg.max_len) t.n_int = cfg.max_len;

    t.ids_internal.assign(t.n_int, 2 /* PAD */);
    t.ids_internal[0] = 0 /* BOS */;
    for (std::size_t i = 0; i < ids.size(); ++i) t.ids_internal[i + 1] = ids[i];

    const std::size_t n = t.n_int;
    const std::size_t d = cfg.d_model;
    Mat x(n, d);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j)
            x(i, j) = m.input_embeddings(static_cast<std::size_t>(t.ids_internal[i]), j) +
                      m.positional_embeddings(i, j);

    t.mask = attention_mask(cfg.attention_mode, n, t.n_rows);
    const std::size_t dh = d / cfg.n_heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

    t.layers.resize(cfg.n_layers);
    for (std::size_t li = 0; li < cfg.n_layers; ++li) {
        const auto& w = m.layers[li];
        auto& tr = t.layers[li];
        tr.x_in = x;
        tr.y1 = detail::layer_norm(x, w.ln1_gamma, w.ln1_beta, tr.ln1);
        tr.q = matmul(tr.y1, w.wq);
        tr.k = matmul(tr.y1, w.wk);
        tr.v = matmul(tr.y1, w.wv);

        tr.attn_concat = Mat(n, d);
        tr.probs.assign(cfg.n_heads, Mat(n, n));
        for (std::size_t h = 0; h < cfg.n_heads; ++h) {
            const std::size_t off = h * dh;
            Mat& p = tr.probs[h];
            for (std::size_t i = 0; i < n; ++i) {
                // masked, numerically stable softmax over allowed keys
                double mx = -1e300;
                for (std::size_t j = 0; j < n; ++j) {
                    if (!t.mask(i, j)) continue;
                    double s = 0.0;
                    for (std::size_t c = 0; c < dh; ++c) s += tr.q(i, off + c) * tr.k(j, off + c);
                    s *= scale;
                    p(i, j) = s;
                    mx = std::max(mx, s);
                }
                double z = 0.0;
                for (std::size_t j = 0; j < n; ++j) {
                    if (!t.mask(i, j)) {
                        p(i, j) = 0.0;
                        continue;
                    }
                    p(i, j) = std::exp(p(i, j) - mx);
                    z += p(i, j);
                }
                if (z > 0.0)
                    for (std::size_t j = 0; j < n; ++j) p(i, j) /= z;
                for (std::size_t c = 0; c < dh; ++c) {
                    double acc = 0.0;
                    for (std::size_t j = 0; j < n; ++j) acc += p(i, j) * tr.v(j, off + c);
                    tr.attn_concat(i, off + c) = acc;
                }
            }
        }
        Mat attn_out = matmul(tr.attn_concat, w.wo);
        tr.x_mid = tr.x_in;
        add_inplace(tr.x_mid, attn_out);

        tr.y2 = detail::layer_norm(tr.x_mid, w.ln2_gamma, w.ln2_beta, tr.ln2);
        tr.u = matmul(tr.y2, w.w1);
        tr.g = tr.u;
        for (double& uv : tr.g.a) uv = detail::gelu(uv);
        Mat ff_out = matmul(tr.g, w.w2);
        x = tr.x_mid;
        add_inplace(x, ff_out);
    }

    t.x_final = x;
    t.hidden_full = detail::layer_norm(x, m.final_ln_gamma, m.final_ln_beta, t.final_ln);
    t.logits_full = matmul_nt(t.hidden_full, m.head.matrix);
    if (!t.logits_full.finite()) throw NumericError("non-finite logits in forward");
    return t;
}

inline ForwardResult forward(const EncoderModel& m, std::span<const int> ids,
                             std::size_t pad_to = 0) {
    ForwardTrace t = forward_trace(m, ids, pad_to);
    ForwardResult r;
    r.hidden = Mat(t.n_rows, m.cfg.d_model);
    r.logits = Mat(t.n_rows, m.head.matrix.rows);
    for (std::size_t i = 0; i < t.n_rows; ++i) {
        for (std::size_t j = 0; j < r.hidden.cols; ++j) r.hidden(i, j) = t.hidden_full(i, j);
        for (std::size_t j = 0; j < r.logits.cols; ++j) r.logits(i, j) = t.logits_full(i, j);
    }
    return r;
}

// ---------------------------------------------------------------------------
// Checkpoint format: magic "LENSCKPT", version u32, config block, then every
// tensor in declaration order as (u32 rows, u32 cols, rows*cols little-endian
// f64).

namespace detail {

inline void put_u32(std::ostream& o, std::uint32_t v) {
    o.write(reinterpret_cast<const char*>(&v), sizeof v);
}
inline void put_u64(std::ostream& o, std::uint64_t v) {
    o.write(reinterpret_cast<const char*>(&v), sizeof v);
}
inline std::uint32_t get_u32(std::istream& i) {
    std::uint32_t v = 0;
    i.read(reinterpret_cast<char*>(&v), sizeof v);
    return v;
}
inline std::uint64_t get_u64(std::istream& i) {
    std::uint64_t v = 0;
    i.read(reinterpret_cast<char*>(&v), sizeof v);
    return v;
}

inline void put_tensor(std::ostream& o, const Mat& m) {
    put_u32(o, static_cast<std::uint32_t>(m.rows));
    put_u32(o, static_cast<std::uint32_t>(m.cols));
    o.write(reinterpret_cast<const char*>(m.a.data()),
            static_cast<std::streamsize>(m.a.size() * sizeof(double)));
}

inline Mat get_tensor(std::istream& i) {
    const std::uint32_t r = get_u32(i);
    const std::uint32_t c = get_u32(i);
    Mat m(r, c);
    i.read(reinterpret_cast<char*>(m.a.data()),
           static_cast<std::streamsize>(m.a.size() * sizeof(double)));
    if (!i) throw DataError("checkpoint truncated");
    return m;
}

constexpr char kCkptMagic[8] = {'L', 'E', 'N', 'S', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kCkptVersion = 1;

}  // namespace detail

inline void save_checkpoint(const EncoderModel& m, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot open for write: " + path);
    out.write(detail::kCkptMagic, 8);
    detail::put_u32(out, detail::kCkptVersion);
    detail::put_u32(out, static_cast<std::uint32_t>(m.cfg.d_model));
    detail::put_u32(out, static_cast<std::uint32_t>(m.cfg.n_layers));
    detail::put_u32(out, static_cast<std::uint32_t>(m.cfg.n_heads));
    detail::put_u32(out, static_cast<std::uint32_t>(m.cfg.d_ff));
    detail::put_u32(out, static_cast<std::uint32_t>(m.cfg.max_len));
    detail::put_u32(out, static_cast<std::uint32_t>(m.cfg.vocab_size));
    detail::put_u32(out, m.cfg.attention_mode == AttentionMode::causal ? 0u : 1u);
    detail::put_u64(out, m.cfg.seed);
    detail::put_u32(out, m.head.kind == HeadKind::original ? 0u : 1u);
    for_each_tensor(m, [&](const Mat& t) { detail::put_tensor(out, t); });
    if (!out) throw DataError("checkpoint write failed: " + path);
}

inline EncoderModel load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open checkpoint: " + path);
    char magic[8];
    in.read(magic, 8);
    if (!in || std::memcmp(magic, detail::kCkptMagic, 8) != 0)
        throw DataError("bad checkpoint magic: " + path);
    if (detail::get_u32(in) != detail::kCkptVersion) throw DataError("unsupported checkpoint version");

    EncoderModel m;
    m.cfg.d_model = detail::get_u32(in);
    m.cfg.n_layers = detail::get_u32(in);
    m.cfg.n_heads = detail::get_u32(in);
    m.cfg.d_ff = detail::get_u32(in);
    m.cfg.max_len = detail::get_u32(in);
    m.cfg.vocab_size = detail::get_u32(in);
    m.cfg.attention_mode = detail::get_u32(in) == 0 ? AttentionMode::causal
                                                    : AttentionMode::bidirectional;
    m.cfg.seed = detail::get_u64(in);
    m.head.kind = detail::get_u32(in) == 0 ? HeadKind::original : HeadKind::centroid;
    m.cfg.validate();
    m.layers.resize(m.cfg.n_layers);
    for_each_tensor(m, [&](Mat& t) { t = detail::get_tensor(in); });
    return m;
}

}  // namespace lens
