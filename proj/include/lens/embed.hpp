#pragma once

// Text -> lexicon embedding pipeline: instruction template rendering, EOS
// framing, forward pass, logit shifting, log-saturation, query-span masking
// and pooling. Also the last-token dense embedding used for hybrid fusion,
// and the binary embedding file formats.

#include <cstring>
#include <fstream>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "lens/common.hpp"
#include "lens/encoder.hpp"
#include "lens/vocab.hpp"

namespace lens {

enum class Pooling { max, sum, last };

inline const char* to_string(Pooling p) {
    switch (p) {
        case Pooling::max: return "max";
        case Pooling::sum: return "sum";
        default: return "last";
    }
}

inline Pooling pooling_from_string(std::string_view s) {
    if (s == "max") return Pooling::max;
    if (s == "sum") return Pooling::sum;
    if (s == "last") return Pooling::last;
    throw UsageError("unknown pooling strategy: " + std::string(s));
}

struct LexiconEmbedding {
    std::vector<double> weights;  // length k, all >= 0
    std::size_t dim() const { return weights.size(); }
};

struct DenseEmbedding {
    std::vector<double> values;  // length d_model
    std::size_t dim() const { return values.size(); }
};

struct InstructedQuery {
    std::string task_definition;
    std::string raw_query;
    std::string rendered;
    // token index range of the raw query inside tokenize(rendered)
    std::size_t span_begin = 0;
    std::size_t span_end = 0;
};

// rendered = "<Instruct> " + task_definition + " <query> " + q. The span is
// the suffix of the rendered tokenization not fully contained in the prefix;
// with leading-space vocabularies the first query token may absorb the
// template's separator space, which keeps it inside the span.
inline InstructedQuery render_query(const Vocabulary& v, std::string_view task_definition,
                                    std::string_view q) {
    if (q.empty()) throw DataError("empty query");
    InstructedQuery iq;
    iq.task_definition = std::string(task_definition);
    iq.raw_query = std::string(q);
    const std::string prefix = "<Instruct> " + iq.task_definition + " <query> ";
    iq.rendered = prefix + iq.raw_query;

    const TokenSequence seq = tokenize(v, iq.rendered);
    iq.span_end = seq.size();
    iq.span_begin = seq.size();
    for (std::size_t i = 0; i < seq.size(); ++i) {
        if (seq.offsets[i].end > prefix.size()) {
            iq.span_begin = i;
            break;
        }
    }
    if (iq.span_begin >= iq.span_end) throw DataError("query produced no tokens");
    return iq;
}

// Eq-style log saturation: ln(1 + max(0, x)).
inline double saturate(double logit) {
    if (!std::isfinite(logit)) throw NumericError("non-finite logit in saturate");
    return std::log1p(logit > 0.0 ? logit : 0.0);
}

// Feature rows after shifting. A distinct type so a second shift is not
// expressible; construction is only via shift_logits.
struct ShiftedFeatures {
    Mat rows;  // one row per content token, EOS included
};

// The feature of the token at position i is the logit row at position i-1;
// with the BOS row first this is simply "drop the last row".
inline ShiftedFeatures shift_logits(const Mat& logits_with_bos) {
    if (logits_with_bos.rows < 2) throw DataError("nothing to shift");
    ShiftedFeatures f;
    f.rows = Mat(logits_with_bos.rows - 1, logits_with_bos.cols);
    std::copy(logits_with_bos.a.begin(),
              logits_with_bos.a.begin() +
                  static_cast<std::ptrdiff_t>(f.rows.rows * f.rows.cols),
              f.rows.a.begin());
    return f;
}

// Applies saturate element-wise over the span's rows, then reduces.
// contributors, when supplied, records which row fed each output dimension
// (max: the argmax row; sum: -1 for "all"; last: the final row).
inline LexiconEmbedding pool(const Mat& features, std::size_t begin, std::size_t end,
                             Pooling strategy, std::vector<int>* contributors = nullptr) {
    if (begin >= end || end > features.rows) throw DataError("empty or invalid pooling span");
    const std::size_t k = features.cols;
    LexiconEmbedding e;
    e.weights.assign(k, 0.0);
    if (contributors) contributors->assign(k, -1);

    switch (strategy) {
        case Pooling::max:
            for (std::size_t j = 0; j < k; ++j) {
                double best = -1.0;
                int arg = -1;
                for (std::size_t i = begin; i < end; ++i) {
                    const double w = saturate(features(i, j));
                    if (w > best) {  // ties keep the earliest position
                        best = w;
                        arg = static_cast<int>(i);
                    }
                }
                e.weights[j] = best;
                if (contributors) (*contributors)[j] = arg;
            }
            break;
        case Pooling::sum:
            for (std::size_t i = begin; i < end; ++i)
                for (std::size_t j = 0; j < k; ++j) e.weights[j] += saturate(features(i, j));
            break;
        case Pooling::last:
            for (std::size_t j = 0; j < k; ++j) {
                e.weights[j] = saturate(features(end - 1, j));
                if (contributors) (*contributors)[j] = static_cast<int>(end - 1);
            }
            break;
    }
    return e;
}

struct EmbedOptions {
    Pooling pooling = Pooling::max;
    bool include_eos = true;  // pool over the EOS feature row as well
    std::size_t pad_to = 0;   // minimum content length for forward
};

namespace detail {

struct PreparedText {
    std::vector<int> ids;       // content ids, EOS appended
    std::size_t span_begin = 0; // pooling span over feature rows
    std::size_t span_end = 0;
};

inline PreparedText prepare(const Vocabulary& v, std::string_view text, std::size_t span_begin,
                            std::size_t span_end, bool include_eos) {
    PreparedText p;
    const TokenSequence seq = tokenize(v, text);
    if (seq.empty()) throw DataError("empty input");
    p.ids = seq.ids;
    p.ids.push_back(v.eos);
    // Feature row i corresponds to content token i after the shift.
    p.span_begin = span_begin;
    p.span_end = include_eos ? p.ids.size() : span_end;
    return p;
}

}  // namespace detail

inline LexiconEmbedding embed_query(const EncoderModel& m, const Vocabulary& v,
                                    const InstructedQuery& iq, const EmbedOptions& opt = {},
                                    std::vector<int>* contributors = nullptr) {
    const auto p = detail::prepare(v, iq.rendered, iq.span_begin, iq.span_end, opt.include_eos);
    const ForwardResult r = forward(m, p.ids, opt.pad_to);
    const ShiftedFeatures f = shift_logits(r.logits);
    return pool(f.rows, p.span_begin, p.span_end, opt.pooling, contributors);
}

inline LexiconEmbedding embed_passage(const EncoderModel& m, const Vocabulary& v,
                                      std::string_view passage, const EmbedOptions& opt = {}) {
    if (passage.empty()) throw DataError("empty input");
    const TokenSequence seq = tokenize(v, passage);
    const auto p = detail::prepare(v, passage, 0, seq.size(), opt.include_eos);
    const ForwardResult r = forward(m, p.ids, opt.pad_to);
    const ShiftedFeatures f = shift_logits(r.logits);
    return pool(f.rows, p.span_begin, p.span_end, opt.pooling, nullptr);
}

// Hidden state of the final (EOS) position; the dense counterpart used for
// hybrid fusion.
inline DenseEmbedding embed_dense(const EncoderModel& m, const Vocabulary& v,
                                  std::string_view text, std::size_t pad_to = 0) {
    if (text.empty()) throw DataError("empty input");
    TokenSequence seq = tokenize(v, text);
    if (seq.empty()) throw DataError("empty input");
    std::vector<int> ids = seq.ids;
    ids.push_back(v.eos);
    const ForwardResult r = forward(m, ids, pad_to);
    DenseEmbedding d;
    const auto row = r.hidden.row(r.hidden.rows - 1);
    d.values.assign(row.begin(), row.end());
    return d;
}

inline DenseEmbedding embed_dense(const EncoderModel& m, const Vocabulary& v,
                                  const InstructedQuery& iq, std::size_t pad_to = 0) {
    return embed_dense(m, v, iq.rendered, pad_to);
}

inline double cosine_similarity(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw NumericError("cosine: dimension mismatch");
    const double na = norm(a);
    const double nb = norm(b);
    if (na == 0.0 || nb == 0.0) throw NumericError("undefined similarity");
    return dot(a, b) / (na * nb);
}

// ---------------------------------------------------------------------------
// Embedding files. Dense layout "LENSEMB1": magic, version u32, dim u32,
// count u64, count rows of dim little-endian f32. Sparse layout "LENSEMB2":
// same header, then per row u32 nnz and (u32 index, f32 value) pairs with
// strictly increasing indices. Both end with a u64 FNV-1a checksum over all
// preceding bytes.

struct EmbeddingMatrix {
    std::uint32_t dim = 0;
    std::vector<std::vector<float>> rows;
};

namespace detail {

constexpr char kEmbMagicDense[8] = {'L', 'E', 'N', 'S', 'E', 'M', 'B', '1'};
constexpr char kEmbMagicSparse[8] = {'L', 'E', 'N', 'S', 'E', 'M', 'B', '2'};
constexpr std::uint32_t kEmbVersion = 1;

template <typename T>
void append_bytes(std::string& buf, const T& v) {
    buf.append(reinterpret_cast<const char*>(&v), sizeof v);
}

}  // namespace detail

inline void write_embeddings(const EmbeddingMatrix& m, const std::string& path, bool sparse) {
    std::string buf;
    buf.append(sparse ? detail::kEmbMagicSparse : detail::kEmbMagicDense, 8);
    detail::append_bytes(buf, detail::kEmbVersion);
    detail::append_bytes(buf, m.dim);
    detail::append_bytes(buf, static_cast<std::uint64_t>(m.rows.size()));
    for (const auto& row : m.rows) {
        if (row.size() != m.dim) throw DataError("embedding row width mismatch");
        if (sparse) {
            std::uint32_t nnz = 0;
            for (float v : row)
                if (v != 0.0f) ++nnz;
            detail::append_bytes(buf, nnz);
            for (std::uint32_t j = 0; j < m.dim; ++j)
                if (row[j] != 0.0f) {
                    detail::append_bytes(buf, j);
                    detail::append_bytes(buf, row[j]);
                }
        } else {
            buf.append(reinterpret_cast<const char*>(row.data()), row.size() * sizeof(float));
        }
    }
    const std::uint64_t checksum = fnv1a(buf.data(), buf.size());
    detail::append_bytes(buf, checksum);

    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot open for write: " + path);
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!out) throw DataError("embedding write failed: " + path);
}

inline EmbeddingMatrix read_embeddings(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open embeddings: " + path);
    std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (buf.size() < 8 + 4 + 4 + 8 + 8) throw DataError("embedding file truncated: " + path);

    const std::size_t payload = buf.size() - 8;
    std::uint64_t stored = 0;
    std::memcpy(&stored, buf.data() + payload, 8);
    if (fnv1a(buf.data(), payload) != stored)
        throw DataError("embedding file checksum mismatch: " + path);

    bool sparse = false;
    if (std::memcmp(buf.data(), detail::kEmbMagicSparse, 8) == 0)
        sparse = true;
    else if (std::memcmp(buf.data(), detail::kEmbMagicDense, 8) != 0)
        throw DataError("bad embedding magic: " + path);

    std::size_t off = 8;
    auto take = [&](void* dst, std::size_t n) {
        if (off + n > payload) throw DataError("embedding file truncated: " + path);
        std::memcpy(dst, buf.data() + off, n);
        off += n;
    };
    std::uint32_t version = 0;
    take(&version, 4);
    if (version != detail::kEmbVersion) throw DataError("unsupported embedding version");

    EmbeddingMatrix m;
    take(&m.dim, 4);
    std::uint64_t count = 0;
    take(&count, 8);
    m.rows.assign(count, std::vector<float>(m.dim, 0.0f));
    for (auto& row : m.rows) {
        if (sparse) {
            std::uint32_t nnz = 0;
            take(&nnz, 4);
            std::int64_t prev = -1;
            for (std::uint32_t t = 0; t < nnz; ++t) {
                std::uint32_t idx = 0;
                float val = 0.0f;
                take(&idx, 4);
                take(&val, 4);
                if (idx >= m.dim || static_cast<std::int64_t>(idx) <= prev)
                    throw DataError("sparse indices not strictly increasing: " + path);
                prev = idx;
                row[idx] = val;
            }
        } else {
            take(row.data(), m.dim * sizeof(float));
        }
    }
    if (off != payload) throw DataError("embedding file has trailing bytes: " + path);
    return m;
}

inline std::vector<float> to_f32(std::span<const double> v) {
    std::vector<float> out(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) out[i] = static_cast<float>(v[i]);
    return out;
}

}  // namespace lens
