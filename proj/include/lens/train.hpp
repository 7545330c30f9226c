#pragma once

// Contrastive fine-tuning: InfoNCE over cosine similarities of lexicon
// embeddings with in-batch negatives, optional KL distillation from
// precomputed teacher scores, and exact reverse-mode gradients through
// forward -> shift -> saturate -> pool -> cosine. The backward pass is
// hand-written and checked against central finite differences in the tests.

#include <algorithm>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "lens/common.hpp"
#include "lens/embed.hpp"
#include "lens/encoder.hpp"
#include "lens/vocab.hpp"

namespace lens {

struct TrainingExample {
    std::string task_definition;
    std::string query;
    std::string positive;
    std::vector<std::string> negatives;
    std::optional<std::vector<double>> teacher_scores;  // aligned to [positive]+negatives
    std::string dataset_tag;
};

struct ContrastiveBatch {
    std::vector<TrainingExample> examples;
    bool in_batch_negatives = false;
    std::string dataset_tag;

    // All examples must share one dataset tag.
    static ContrastiveBatch make(std::vector<TrainingExample> examples, bool in_batch) {
        if (examples.empty()) throw DataError("empty batch");
        ContrastiveBatch b;
        b.dataset_tag = examples.front().dataset_tag;
        for (const auto& e : examples) {
            if (e.dataset_tag != b.dataset_tag)
                throw DataError("batch mixes dataset tags: " + b.dataset_tag + " vs " +
                                e.dataset_tag);
            if (e.teacher_scores && e.teacher_scores->size() != e.negatives.size() + 1)
                throw DataError("teacher_scores length must be 1 + #negatives");
        }
        b.examples = std::move(examples);
        b.in_batch_negatives = in_batch;
        return b;
    }
};

struct LossConfig {
    double temperature = 0.02;
    double kl_weight = 1.0;
    double kl_teacher_temperature = 1.0;
};

// -ln( exp(s+/t) / (exp(s+/t) + sum_j exp(s-_j/t)) ), max-subtracted.
// An empty denominator sum gives 0 by the formula; callers may pass a stream
// to be warned about it.
inline double info_nce(double sim_pos, std::span<const double> sim_negs, double tau,
                       std::ostream* warn = nullptr) {
    if (!(tau > 0.0)) throw UsageError("temperature must be > 0");
    if (!std::isfinite(sim_pos)) throw NumericError("non-finite similarity");
    for (double s : sim_negs)
        if (!std::isfinite(s)) throw NumericError("non-finite similarity");
    if (sim_negs.empty()) {
        if (warn) *warn << "warning: info_nce with no negatives, loss is 0\n";
        return 0.0;
    }
    double mx = sim_pos;
    for (double s : sim_negs) mx = std::max(mx, s);
    double z = std::exp((sim_pos - mx) / tau);
    for (double s : sim_negs) z += std::exp((s - mx) / tau);
    return -((sim_pos - mx) / tau - std::log(z));
}

// Gradient tensors, mirroring the model's shapes and declaration order.
struct HeadGrads {
    Mat matrix;
};

struct ModelGrads {
    Mat input_embeddings;
    Mat positional_embeddings;
    std::vector<LayerWeights> layers;
    Mat final_ln_gamma, final_ln_beta;
    HeadGrads head;
};

inline ModelGrads zero_grads(const EncoderModel& m) {
    ModelGrads g;
    g.input_embeddings = Mat(m.input_embeddings.rows, m.input_embeddings.cols);
    g.positional_embeddings = Mat(m.positional_embeddings.rows, m.positional_embeddings.cols);
    g.layers.resize(m.layers.size());
    for (std::size_t i = 0; i < m.layers.size(); ++i) {
        const auto& l = m.layers[i];
        auto& gl = g.layers[i];
        gl.ln1_gamma = Mat(1, l.ln1_gamma.cols);
        gl.ln1_beta = Mat(1, l.ln1_beta.cols);
        gl.wq = Mat(l.wq.rows, l.wq.cols);
        gl.wk = Mat(l.wk.rows, l.wk.cols);
        gl.wv = Mat(l.wv.rows, l.wv.cols);
        gl.wo = Mat(l.wo.rows, l.wo.cols);
        gl.ln2_gamma = Mat(1, l.ln2_gamma.cols);
        gl.ln2_beta = Mat(1, l.ln2_beta.cols);
        gl.w1 = Mat(l.w1.rows, l.w1.cols);
        gl.w2 = Mat(l.w2.rows, l.w2.cols);
    }
    g.final_ln_gamma = Mat(1, m.final_ln_gamma.cols);
    g.final_ln_beta = Mat(1, m.final_ln_beta.cols);
    g.head.matrix = Mat(m.head.matrix.rows, m.head.matrix.cols);
    return g;
}

namespace detail {

// dX for y = LN(x); accumulates dgamma/dbeta.
inline Mat layer_norm_backward(const Mat& dy, const LayerNormCache& cache, const Mat& gamma,
                               Mat& dgamma, Mat& dbeta) {
    const std::size_t n = dy.rows, d = dy.cols;
    Mat dx(n, d);
    for (std::size_t i = 0; i < n; ++i) {
        double m1 = 0.0, m2 = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            const double dxh = dy(i, j) * gamma(0, j);
            m1 += dxh;
            m2 += dxh * cache.xhat(i, j);
            dgamma(0, j) += dy(i, j) * cache.xhat(i, j);
            dbeta(0, j) += dy(i, j);
        }
        m1 /= static_cast<double>(d);
        m2 /= static_cast<double>(d);
        for (std::size_t j = 0; j < d; ++j) {
            const double dxh = dy(i, j) * gamma(0, j);
            dx(i, j) = cache.inv_std[i] * (dxh - m1 - cache.xhat(i, j) * m2);
        }
    }
    return dx;
}

// Full transformer backward for one traced text. d_logits_full covers all
// internal rows (padding rows zero); d_hidden_direct, when given, adds
// gradient arriving at the post-norm hidden states directly (the dense
// objective reads them without going through the head).
inline void backward_text(const EncoderModel& m, const ForwardTrace& t, const Mat& d_logits_full,
                          ModelGrads& g, const Mat* d_hidden_direct = nullptr) {
    const auto& cfg = m.cfg;
    const std::size_t n = t.n_int;
    const std::size_t d = cfg.d_model;
    const std::size_t dh = d / cfg.n_heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

    // logits = hidden * head^T
    Mat d_hidden = matmul(d_logits_full, m.head.matrix);
    add_inplace(g.head.matrix, matmul_tn(d_logits_full, t.hidden_full));
    if (d_hidden_direct) add_inplace(d_hidden, *d_hidden_direct);

    Mat dx = layer_norm_backward(d_hidden, t.final_ln, m.final_ln_gamma, g.final_ln_gamma,
                                 g.final_ln_beta);

    for (std::size_t li = cfg.n_layers; li-- > 0;) {
        const auto& w = m.layers[li];
        const auto& tr = t.layers[li];
        auto& gw = g.layers[li];

        // x_out = x_mid + gelu(y2 * w1) * w2
        Mat dg = matmul_nt(dx, w.w2);
        add_inplace(gw.w2, matmul_tn(tr.g, dx));
        Mat du = dg;
        for (std::size_t i = 0; i < du.a.size(); ++i) du.a[i] *= gelu_grad(tr.u.a[i]);
        Mat dy2 = matmul_nt(du, w.w1);
        add_inplace(gw.w1, matmul_tn(tr.y2, du));
        Mat dx_mid = dx;  // residual branch
        add_inplace(dx_mid, layer_norm_backward(dy2, tr.ln2, w.ln2_gamma, gw.ln2_gamma,
                                                gw.ln2_beta));

        // x_mid = x_in + attn_concat * wo
        Mat dac = matmul_nt(dx_mid, w.wo);
        add_inplace(gw.wo, matmul_tn(tr.attn_concat, dx_mid));

        Mat dq(n, d), dk(n, d), dv(n, d);
        for (std::size_t h = 0; h < cfg.n_heads; ++h) {
            const std::size_t off = h * dh;
            const Mat& p = tr.probs[h];
            // A_h = P * V_h
            for (std::size_t i = 0; i < n; ++i) {
                // dP row i, then softmax backward within the row
                double rowdot = 0.0;
                std::vector<double> dp(n, 0.0);
                for (std::size_t j = 0; j < n; ++j) {
                    if (p(i, j) == 0.0) continue;
                    double acc = 0.0;
                    for (std::size_t c = 0; c < dh; ++c)
                        acc += dac(i, off + c) * tr.v(j, off + c);
                    dp[j] = acc;
                    rowdot += dp[j] * p(i, j);
                    for (std::size_t c = 0; c < dh; ++c)
                        dv(j, off + c) += p(i, j) * dac(i, off + c);
                }
                for (std::size_t j = 0; j < n; ++j) {
                    if (p(i, j) == 0.0) continue;
                    const double ds = p(i, j) * (dp[j] - rowdot) * scale;
                    for (std::size_t c = 0; c < dh; ++c) {
                        dq(i, off + c) += ds * tr.k(j, off + c);
                        dk(j, off + c) += ds * tr.q(i, off + c);
                    }
                }
            }
        }

        Mat dy1 = matmul_nt(dq, w.wq);
        add_inplace(dy1, matmul_nt(dk, w.wk));
        add_inplace(dy1, matmul_nt(dv, w.wv));
        add_inplace(gw.wq, matmul_tn(tr.y1, dq));
        add_inplace(gw.wk, matmul_tn(tr.y1, dk));
        add_inplace(gw.wv, matmul_tn(tr.y1, dv));

        Mat dx_in = dx_mid;  // residual branch
        add_inplace(dx_in, layer_norm_backward(dy1, tr.ln1, w.ln1_gamma, gw.ln1_gamma,
                                               gw.ln1_beta));
        dx = std::move(dx_in);
    }

    for (std::size_t i = 0; i < n; ++i) {
        const auto id = static_cast<std::size_t>(t.ids_internal[i]);
        for (std::size_t j = 0; j < d; ++j) {
            g.input_embeddings(id, j) += dx(i, j);
            g.positional_embeddings(i, j) += dx(i, j);
        }
    }
}

inline double saturate_grad(double logit) { return logit > 0.0 ? 1.0 / (1.0 + logit) : 0.0; }

}  // namespace detail

// What the contrastive loss scores. The lexicon objective goes through
// shifted logits, saturation and pooling; the dense objective trains the
// EOS hidden state directly, producing the dense counterpart a hybrid run
// fuses with (a separate model trained on the same data).
enum class TrainObjective { lexicon, dense };

inline TrainObjective objective_from_string(std::string_view s) {
    if (s == "lexicon") return TrainObjective::lexicon;
    if (s == "dense") return TrainObjective::dense;
    throw UsageError("unknown training objective: " + std::string(s));
}

namespace detail {

// One embedded text with everything the backward pass needs.
struct EmbeddedText {
    PreparedText prep;
    ForwardTrace trace;
    std::vector<double> emb;
    std::vector<int> contributors;  // argmax rows for max pooling
    Pooling pooling = Pooling::max;
    TrainObjective objective = TrainObjective::lexicon;
};

inline EmbeddedText embed_text_trace(const EncoderModel& m, PreparedText prep,
                                     const EmbedOptions& opt, TrainObjective objective) {
    EmbeddedText out;
    out.prep = std::move(prep);
    out.pooling = opt.pooling;
    out.objective = objective;
    out.trace = forward_trace(m, out.prep.ids, opt.pad_to);
    if (objective == TrainObjective::dense) {
        const auto row = out.trace.hidden_full.row(out.trace.n_rows - 1);  // EOS position
        out.emb.assign(row.begin(), row.end());
        return out;
    }
    // Feature rows are the shifted logits: rows [0, n_rows-1) of the full
    // logit matrix (BOS row first, last content row dropped).
    Mat features(out.trace.n_rows - 1, out.trace.logits_full.cols);
    for (std::size_t i = 0; i < features.rows; ++i)
        for (std::size_t j = 0; j < features.cols; ++j)
            features(i, j) = out.trace.logits_full(i, j);
    out.emb =
        pool(features, out.prep.span_begin, out.prep.span_end, opt.pooling, &out.contributors)
            .weights;
    return out;
}

// Routes d_emb back into logit space (through pool and saturate) or straight
// into the EOS hidden row, then through the transformer.
inline void backward_embedded(const EncoderModel& m, const EmbeddedText& et,
                              std::span<const double> d_emb, ModelGrads& g) {
    const std::size_t k = et.emb.size();
    Mat d_logits(et.trace.n_int, et.trace.logits_full.cols);

    if (et.objective == TrainObjective::dense) {
        Mat d_hidden(et.trace.n_int, m.cfg.d_model);
        const std::size_t row = et.trace.n_rows - 1;
        for (std::size_t j = 0; j < k; ++j) d_hidden(row, j) = d_emb[j];
        backward_text(m, et.trace, d_logits, g, &d_hidden);
        return;
    }

    auto logit_at = [&](std::size_t i, std::size_t j) { return et.trace.logits_full(i, j); };
    switch (et.pooling) {
        case Pooling::max:
            for (std::size_t j = 0; j < k; ++j) {
                const int row = et.contributors[j];
                if (row < 0) continue;
                d_logits(static_cast<std::size_t>(row), j) +=
                    d_emb[j] * saturate_grad(logit_at(static_cast<std::size_t>(row), j));
            }
            break;
        case Pooling::sum:
            for (std::size_t i = et.prep.span_begin; i < et.prep.span_end; ++i)
                for (std::size_t j = 0; j < k; ++j)
                    d_logits(i, j) += d_emb[j] * saturate_grad(logit_at(i, j));
            break;
        case Pooling::last: {
            const std::size_t row = et.prep.span_end - 1;
            for (std::size_t j = 0; j < k; ++j)
                d_logits(row, j) += d_emb[j] * saturate_grad(logit_at(row, j));
            break;
        }
    }
    backward_text(m, et.trace, d_logits, g);
}

// d(cos)/da and d(cos)/db, accumulated scaled by upstream.
inline void cosine_backward(std::span<const double> a, std::span<const double> b, double upstream,
                            std::span<double> da, std::span<double> db) {
    const double na = norm(a);
    const double nb = norm(b);
    const double d = dot(a, b);
    const double s = d / (na * nb);
    for (std::size_t i = 0; i < a.size(); ++i) {
        da[i] += upstream * (b[i] / (na * nb) - s * a[i] / (na * na));
        db[i] += upstream * (a[i] / (na * nb) - s * b[i] / (nb * nb));
    }
}

}  // namespace detail

struct BatchLossResult {
    double loss = 0.0;
    std::vector<double> per_example_infonce;
    std::vector<double> per_example_kl;  // 0 where no teacher scores
    std::size_t empty_denominators = 0;
};

namespace detail {

inline std::vector<double> softmax(std::span<const double> x, double tau) {
    double mx = x[0];
    for (double v : x) mx = std::max(mx, v);
    std::vector<double> p(x.size());
    double z = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        p[i] = std::exp((x[i] - mx) / tau);
        z += p[i];
    }
    for (double& v : p) v /= z;
    return p;
}

// Shared by batch_loss and train_step: forward everything, compute the loss,
// and (optionally) push exact gradients into g.
inline BatchLossResult batch_loss_impl(const EncoderModel& m, const Vocabulary& v,
                                       const ContrastiveBatch& batch, const LossConfig& cfg,
                                       const EmbedOptions& opt, TrainObjective objective,
                                       ModelGrads* g, std::ostream* warn) {
    if (!(cfg.temperature > 0.0)) throw UsageError("temperature must be > 0");
    const std::size_t B = batch.examples.size();

    struct ExampleTexts {
        EmbeddedText query, positive;
        std::vector<EmbeddedText> negatives;
        std::vector<double> d_query, d_positive;
        std::vector<std::vector<double>> d_negatives;
    };
    std::vector<ExampleTexts> ex(B);

    for (std::size_t i = 0; i < B; ++i) {
        const auto& e = batch.examples[i];
        const InstructedQuery iq = render_query(v, e.task_definition, e.query);
        ex[i].query = embed_text_trace(
            m, prepare(v, iq.rendered, iq.span_begin, iq.span_end, opt.include_eos), opt,
            objective);
        if (e.positive.empty()) throw DataError("empty positive passage");
        {
            const TokenSequence ps = tokenize(v, e.positive);
            ex[i].positive = embed_text_trace(
                m, prepare(v, e.positive, 0, ps.size(), opt.include_eos), opt, objective);
        }
        for (const auto& neg : e.negatives) {
            if (neg.empty()) throw DataError("empty negative passage");
            const TokenSequence ns = tokenize(v, neg);
            ex[i].negatives.push_back(embed_text_trace(
                m, prepare(v, neg, 0, ns.size(), opt.include_eos), opt, objective));
        }
        const std::size_t k = ex[i].query.emb.size();
        ex[i].d_query.assign(k, 0.0);
        ex[i].d_positive.assign(k, 0.0);
        ex[i].d_negatives.assign(ex[i].negatives.size(), std::vector<double>(k, 0.0));
    }

    BatchLossResult out;
    out.per_example_infonce.assign(B, 0.0);
    out.per_example_kl.assign(B, 0.0);

    std::size_t n_teacher = 0;
    for (const auto& e : batch.examples)
        if (e.teacher_scores) ++n_teacher;

    double total = 0.0;
    for (std::size_t i = 0; i < B; ++i) {
        const auto& q = ex[i].query.emb;
        const double s_pos = cosine_similarity(q, ex[i].positive.emb);

        // negatives: own hard negatives, then other examples' positives
        std::vector<double> s_negs;
        for (const auto& n : ex[i].negatives)
            s_negs.push_back(cosine_similarity(q, n.emb));
        const std::size_t n_own = s_negs.size();
        if (batch.in_batch_negatives)
            for (std::size_t j = 0; j < B; ++j)
                if (j != i) s_negs.push_back(cosine_similarity(q, ex[j].positive.emb));

        const double li = info_nce(s_pos, s_negs, cfg.temperature, warn);
        if (s_negs.empty()) ++out.empty_denominators;
        out.per_example_infonce[i] = li;
        total += li / static_cast<double>(B);

        if (g && !s_negs.empty()) {
            // d InfoNCE / d sims = (softmax - onehot)/tau, scaled by 1/B
            std::vector<double> all;
            all.push_back(s_pos);
            all.insert(all.end(), s_negs.begin(), s_negs.end());
            const std::vector<double> p = softmax(all, cfg.temperature);
            const double w = 1.0 / (cfg.temperature * static_cast<double>(B));
            auto add_pair = [&](std::span<const double> a, std::span<const double> b,
                                std::span<double> da, std::span<double> db, double up) {
                cosine_backward(a, b, up, da, db);
            };
            add_pair(q, ex[i].positive.emb, ex[i].d_query, ex[i].d_positive,
                     (p[0] - 1.0) * w);
            for (std::size_t j = 0; j < n_own; ++j)
                add_pair(q, ex[i].negatives[j].emb, ex[i].d_query, ex[i].d_negatives[j],
                         p[1 + j] * w);
            if (batch.in_batch_negatives) {
                std::size_t slot = 1 + n_own;
                for (std::size_t j = 0; j < B; ++j) {
                    if (j == i) continue;
                    add_pair(q, ex[j].positive.emb, ex[i].d_query, ex[j].d_positive,
                             p[slot] * w);
                    ++slot;
                }
            }
        }

        if (batch.examples[i].teacher_scores) {
            // student over [positive]+own hard negatives only
            std::vector<double> sims;
            sims.push_back(s_pos);
            for (std::size_t j = 0; j < n_own; ++j) sims.push_back(s_negs[j]);
            const std::vector<double> student = softmax(sims, cfg.temperature);
            const std::vector<double> teacher =
                softmax(*batch.examples[i].teacher_scores, cfg.kl_teacher_temperature);
            double kl = 0.0;
            for (std::size_t j = 0; j < sims.size(); ++j)
                if (teacher[j] > 0.0) kl += teacher[j] * (std::log(teacher[j]) - std::log(student[j]));
            out.per_example_kl[i] = kl;
            total += cfg.kl_weight * kl / static_cast<double>(n_teacher);

            if (g) {
                const double w =
                    cfg.kl_weight / (cfg.temperature * static_cast<double>(n_teacher));
                for (std::size_t j = 0; j < sims.size(); ++j) {
                    const double up = (student[j] - teacher[j]) * w;
                    if (j == 0)
                        cosine_backward(q, ex[i].positive.emb, up, ex[i].d_query,
                                        ex[i].d_positive);
                    else
                        cosine_backward(q, ex[i].negatives[j - 1].emb, up, ex[i].d_query,
                                        ex[i].d_negatives[j - 1]);
                }
            }
        }
    }
    out.loss = total;

    if (g) {
        // One backward pass per text, in a fixed order, after all embedding
        // gradients are accumulated (in-batch negatives couple examples).
        for (std::size_t i = 0; i < B; ++i) {
            backward_embedded(m, ex[i].query, ex[i].d_query, *g);
            backward_embedded(m, ex[i].positive, ex[i].d_positive, *g);
            for (std::size_t j = 0; j < ex[i].negatives.size(); ++j)
                backward_embedded(m, ex[i].negatives[j], ex[i].d_negatives[j], *g);
        }
    }
    return out;
}

}  // namespace detail

inline BatchLossResult batch_loss(const EncoderModel& m, const Vocabulary& v,
                                  const ContrastiveBatch& batch, const LossConfig& cfg,
                                  const EmbedOptions& opt = {},
                                  TrainObjective objective = TrainObjective::lexicon,
                                  std::ostream* warn = nullptr) {
    return detail::batch_loss_impl(m, v, batch, cfg, opt, objective, nullptr, warn);
}

inline BatchLossResult batch_loss_with_grads(const EncoderModel& m, const Vocabulary& v,
                                             const ContrastiveBatch& batch, const LossConfig& cfg,
                                             const EmbedOptions& opt, ModelGrads& grads,
                                             TrainObjective objective = TrainObjective::lexicon) {
    return detail::batch_loss_impl(m, v, batch, cfg, opt, objective, &grads, nullptr);
}

// ---------------------------------------------------------------------------
// AdamW

struct OptimizerConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
};

struct OptimizerState {
    std::vector<std::vector<double>> m, v;  // one slot per tensor
    std::uint64_t step = 0;

    static OptimizerState make(const EncoderModel& model) {
        OptimizerState s;
        for_each_tensor(model, [&](const Mat& t) {
            s.m.emplace_back(t.a.size(), 0.0);
            s.v.emplace_back(t.a.size(), 0.0);
        });
        return s;
    }
};

struct StepMetrics {
    double loss = 0.0;
    double grad_norm = 0.0;
    bool aborted = false;
    std::string abort_reason;
    std::size_t empty_denominators = 0;
};

// One optimizer step. A non-finite loss or gradient aborts the step and
// leaves the model untouched.
inline StepMetrics train_step(EncoderModel& model, const Vocabulary& v,
                              const ContrastiveBatch& batch, const LossConfig& loss_cfg,
                              const EmbedOptions& embed_opt, const OptimizerConfig& opt_cfg,
                              OptimizerState& state, bool freeze_head = false,
                              TrainObjective objective = TrainObjective::lexicon) {
    StepMetrics metrics;
    ModelGrads grads = zero_grads(model);
    BatchLossResult r;
    try {
        r = batch_loss_with_grads(model, v, batch, loss_cfg, embed_opt, grads, objective);
    } catch (const NumericError& e) {
        metrics.aborted = true;
        metrics.abort_reason = e.what();
        return metrics;
    }
    metrics.loss = r.loss;
    metrics.empty_denominators = r.empty_denominators;

    double sq = 0.0;
    bool finite = std::isfinite(r.loss);
    for_each_tensor(grads, [&](const Mat& t) {
        for (double g : t.a) {
            if (!std::isfinite(g)) finite = false;
            sq += g * g;
        }
    });
    metrics.grad_norm = std::sqrt(sq);
    if (!finite || !std::isfinite(metrics.grad_norm)) {
        metrics.aborted = true;
        metrics.abort_reason = "non-finite gradient";
        return metrics;
    }

    state.step += 1;
    const double bc1 = 1.0 - std::pow(opt_cfg.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(opt_cfg.beta2, static_cast<double>(state.step));

    std::vector<Mat*> params;
    for_each_tensor(model, [&](Mat& t) { params.push_back(&t); });
    std::vector<const Mat*> gs;
    for_each_tensor(grads, [&](const Mat& t) { gs.push_back(&t); });
    const std::size_t head_slot = params.size() - 1;  // head is declared last

    for (std::size_t ti = 0; ti < params.size(); ++ti) {
        if (freeze_head && ti == head_slot) continue;
        auto& p = params[ti]->a;
        const auto& ga = gs[ti]->a;
        auto& ms = state.m[ti];
        auto& vs = state.v[ti];
        for (std::size_t j = 0; j < p.size(); ++j) {
            ms[j] = opt_cfg.beta1 * ms[j] + (1.0 - opt_cfg.beta1) * ga[j];
            vs[j] = opt_cfg.beta2 * vs[j] + (1.0 - opt_cfg.beta2) * ga[j] * ga[j];
            const double mhat = ms[j] / bc1;
            const double vhat = vs[j] / bc2;
            p[j] -= opt_cfg.lr * (mhat / (std::sqrt(vhat) + opt_cfg.eps) +
                                  opt_cfg.weight_decay * p[j]);
        }
    }

    bool ok = true;
    for_each_tensor(model, [&](const Mat& t) { ok = ok && t.finite(); });
    if (!ok) throw NumericError("non-finite parameters after optimizer step");
    return metrics;
}

}  // namespace lens
