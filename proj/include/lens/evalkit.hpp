#pragma once

// Retrieval evaluation: graded nDCG@k and MRR@k over TREC-style judgments,
// exhaustive cosine retrieval, lexicon+dense hybrid fusion, the attention x
// pooling ablation grid, the cluster-count sweep, and the synthetic desk
// corpus generator.

#include <algorithm>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "lens/cluster.hpp"
#include "lens/common.hpp"
#include "lens/data.hpp"
#include "lens/embed.hpp"
#include "lens/pipeline.hpp"

namespace lens {

struct ScoredDoc {
    std::string doc_id;
    double score = 0.0;
};

// Scores strictly non-increasing; ties broken by ascending doc id.
struct RankedList {
    std::string query_id;
    std::vector<ScoredDoc> items;
};

// Graded nDCG with gain 2^grade - 1 and discount 1/log2(rank+1). Queries
// with no relevant document are skipped (nullopt), not scored as zero.
inline std::optional<double> ndcg_at_k(const RankedList& ranked, const Qrels& judged,
                                       const std::string& query_id, std::size_t k) {
    if (k < 1) throw UsageError("k must be >= 1");
    auto it = judged.find(query_id);
    std::vector<int> grades;
    if (it != judged.end())
        for (const auto& [did, g] : it->second)
            if (g > 0) grades.push_back(g);
    if (grades.empty()) return std::nullopt;

    double dcg = 0.0;
    for (std::size_t r = 0; r < std::min(k, ranked.items.size()); ++r) {
        const auto jt = it->second.find(ranked.items[r].doc_id);
        if (jt == it->second.end() || jt->second <= 0) continue;
        dcg += (std::pow(2.0, jt->second) - 1.0) / std::log2(static_cast<double>(r + 2));
    }
    std::sort(grades.begin(), grades.end(), std::greater<int>());
    double idcg = 0.0;
    for (std::size_t r = 0; r < std::min(k, grades.size()); ++r)
        idcg += (std::pow(2.0, grades[r]) - 1.0) / std::log2(static_cast<double>(r + 2));
    return dcg / idcg;
}

// 1/rank of the first relevant document within the top k, else 0.
inline std::optional<double> mrr_at_k(const RankedList& ranked, const Qrels& judged,
                                      const std::string& query_id, std::size_t k) {
    if (k < 1) throw UsageError("k must be >= 1");
    auto it = judged.find(query_id);
    bool any_relevant = false;
    if (it != judged.end())
        for (const auto& [did, g] : it->second)
            if (g > 0) any_relevant = true;
    if (!any_relevant) return std::nullopt;

    for (std::size_t r = 0; r < std::min(k, ranked.items.size()); ++r) {
        const auto jt = it->second.find(ranked.items[r].doc_id);
        if (jt != it->second.end() && jt->second > 0)
            return 1.0 / static_cast<double>(r + 1);
    }
    return 0.0;
}

struct MetricSummary {
    double mean = 0.0;
    std::size_t evaluated = 0;
    std::size_t skipped = 0;  // queries with no relevant document
    std::vector<std::pair<std::string, double>> per_query;
};

template <typename PerQueryMetric>
MetricSummary aggregate_metric(const std::vector<RankedList>& runs, const Qrels& judged,
                               std::size_t k, PerQueryMetric&& metric) {
    MetricSummary s;
    for (const auto& run : runs) {
        const std::optional<double> v = metric(run, judged, run.query_id, k);
        if (!v) {
            ++s.skipped;
            continue;
        }
        s.per_query.push_back({run.query_id, *v});
        s.mean += *v;
        ++s.evaluated;
    }
    if (s.evaluated > 0) s.mean /= static_cast<double>(s.evaluated);
    return s;
}

// Exhaustive cosine scoring, one reference double loop. Zero vectors score 0
// against everything (an all-clamped lexicon embedding must not crash a run).
inline std::vector<RankedList> retrieve(const std::vector<std::vector<double>>& query_embs,
                                        const std::vector<std::string>& query_ids,
                                        const std::vector<std::vector<double>>& doc_embs,
                                        const std::vector<std::string>& doc_ids,
                                        std::size_t top_k) {
    if (query_embs.size() != query_ids.size() || doc_embs.size() != doc_ids.size())
        throw UsageError("embedding/id count mismatch");
    std::vector<RankedList> out;
    out.reserve(query_embs.size());
    for (std::size_t qi = 0; qi < query_embs.size(); ++qi) {
        const auto& q = query_embs[qi];
        RankedList rl;
        rl.query_id = query_ids[qi];
        rl.items.reserve(doc_embs.size());
        const double qn = norm(q);
        for (std::size_t di = 0; di < doc_embs.size(); ++di) {
            if (doc_embs[di].size() != q.size()) throw NumericError("embedding dimension mismatch");
            const double dn = norm(doc_embs[di]);
            const double score = (qn == 0.0 || dn == 0.0) ? 0.0 : dot(q, doc_embs[di]) / (qn * dn);
            rl.items.push_back({doc_ids[di], score});
        }
        std::sort(rl.items.begin(), rl.items.end(), [](const ScoredDoc& a, const ScoredDoc& b) {
            if (a.score != b.score) return a.score > b.score;
            return a.doc_id < b.doc_id;
        });
        if (rl.items.size() > top_k) rl.items.resize(top_k);
        out.push_back(std::move(rl));
    }
    return out;
}

struct HybridConfig {
    bool normalize_each = true;
    double alpha = 0.5;  // weight on the lexicon part

    void validate() const {
        if (alpha < 0.0 || alpha > 1.0) throw UsageError("alpha must be in [0,1]");
    }
};

// Concatenation fusion: [alpha * lex/|lex| , (1-alpha) * den/|den|], or the
// raw concatenation when normalize_each is off.
inline std::vector<double> hybrid_fuse(const LexiconEmbedding& lex, const DenseEmbedding& den,
                                       const HybridConfig& cfg) {
    cfg.validate();
    const double nl = norm(lex.weights);
    const double nd = norm(den.values);
    if (nl == 0.0 || nd == 0.0) throw NumericError("hybrid_fuse: zero vector");
    std::vector<double> fused;
    fused.reserve(lex.dim() + den.dim());
    for (double w : lex.weights) fused.push_back(cfg.normalize_each ? cfg.alpha * w / nl : w);
    for (double x : den.values)
        fused.push_back(cfg.normalize_each ? (1.0 - cfg.alpha) * x / nd : x);
    return fused;
}

// ---------------------------------------------------------------------------
// Batch embedding helpers shared by the grids and the CLI.

inline std::vector<std::vector<double>> embed_queries_lexicon(
    const EncoderModel& m, const Vocabulary& v, const std::vector<QueryRecord>& queries,
    const EmbedOptions& opt) {
    std::vector<std::vector<double>> out;
    out.reserve(queries.size());
    for (const auto& q : queries) {
        const InstructedQuery iq = render_query(v, q.task, q.text);
        out.push_back(embed_query(m, v, iq, opt).weights);
    }
    return out;
}

inline std::vector<std::vector<double>> embed_docs_lexicon(const EncoderModel& m,
                                                           const Vocabulary& v,
                                                           const std::vector<Doc>& docs,
                                                           const EmbedOptions& opt) {
    std::vector<std::vector<double>> out;
    out.reserve(docs.size());
    for (const auto& d : docs) out.push_back(embed_passage(m, v, d.text, opt).weights);
    return out;
}

struct RetrievalEval {
    MetricSummary ndcg10;
    MetricSummary mrr10;
};

inline RetrievalEval evaluate_lexicon_retrieval(const EncoderModel& m, const Vocabulary& v,
                                                const std::vector<Doc>& docs,
                                                const std::vector<QueryRecord>& queries,
                                                const Qrels& qrels, const EmbedOptions& opt,
                                                std::size_t top_k = 10) {
    std::vector<std::string> qids, dids;
    for (const auto& q : queries) qids.push_back(q.id);
    for (const auto& d : docs) dids.push_back(d.id);
    const auto qe = embed_queries_lexicon(m, v, queries, opt);
    const auto de = embed_docs_lexicon(m, v, docs, opt);
    const auto runs = retrieve(qe, qids, de, dids, top_k);
    RetrievalEval ev;
    ev.ndcg10 = aggregate_metric(runs, qrels, 10,
                                 [](const auto& r, const auto& j, const auto& q, std::size_t k) {
                                     return ndcg_at_k(r, j, q, k);
                                 });
    ev.mrr10 = aggregate_metric(runs, qrels, 10,
                                [](const auto& r, const auto& j, const auto& q, std::size_t k) {
                                    return mrr_at_k(r, j, q, k);
                                });
    return ev;
}

// ---------------------------------------------------------------------------
// Ablation grid (attention x pooling) and cluster-count sweep.

struct AblationRow {
    AttentionMode attention = AttentionMode::causal;
    Pooling pooling = Pooling::max;
    bool failed = false;
    std::string error;
    double initial_loss = 0.0;
    double final_loss = 0.0;
    double ndcg10 = 0.0;
    double mrr10 = 0.0;
    std::vector<double> loss_curve;
};

// Trains and evaluates all six {causal,bidirectional} x {last,sum,max}
// configurations from identical seeds and data. A failing configuration is
// reported, not fatal.
inline std::vector<AblationRow> ablation_grid(const TrainRunConfig& base,
                                              const std::vector<TrainingExample>& records,
                                              const Vocabulary& vocab,
                                              const std::vector<Doc>& docs,
                                              const std::vector<QueryRecord>& queries,
                                              const Qrels& qrels) {
    std::vector<AblationRow> rows;
    for (AttentionMode attn : {AttentionMode::causal, AttentionMode::bidirectional}) {
        for (Pooling pooling : {Pooling::last, Pooling::sum, Pooling::max}) {
            AblationRow row;
            row.attention = attn;
            row.pooling = pooling;
            try {
                TrainRunConfig cfg = base;
                cfg.encoder.attention_mode = attn;
                cfg.pooling = pooling;
                const TrainOutcome outcome = run_training(cfg, records, vocab);
                row.initial_loss = outcome.initial_loss;
                row.final_loss = outcome.final_loss;
                for (const auto& s : outcome.log)
                    if (!s.aborted) row.loss_curve.push_back(s.loss);
                const RetrievalEval ev = evaluate_lexicon_retrieval(
                    outcome.model, vocab, docs, queries, qrels, cfg.embed_options());
                row.ndcg10 = ev.ndcg10.mean;
                row.mrr10 = ev.mrr10.mean;
            } catch (const std::exception& e) {
                row.failed = true;
                row.error = e.what();
            }
            rows.push_back(std::move(row));
        }
    }
    return rows;
}

struct SweepRow {
    std::size_t k = 0;
    bool failed = false;
    std::string error;
    double final_loss = 0.0;
    double ndcg10 = 0.0;
    double mrr10 = 0.0;
};

// k = |V| means "no clustering": the original token-embedding head is kept.
inline std::vector<SweepRow> cluster_sweep(const TrainRunConfig& base,
                                           const std::vector<std::size_t>& k_values,
                                           const std::vector<TrainingExample>& records,
                                           const Vocabulary& vocab, const std::vector<Doc>& docs,
                                           const std::vector<QueryRecord>& queries,
                                           const Qrels& qrels) {
    std::vector<SweepRow> rows;
    for (std::size_t k : k_values) {
        SweepRow row;
        row.k = k;
        try {
            if (k > vocab.size()) throw UsageError("k exceeds vocabulary size");
            TrainRunConfig cfg = base;
            cfg.k = k;
            const TrainOutcome outcome = run_training(cfg, records, vocab);
            row.final_loss = outcome.final_loss;
            const RetrievalEval ev = evaluate_lexicon_retrieval(outcome.model, vocab, docs,
                                                                queries, qrels,
                                                                cfg.embed_options());
            row.ndcg10 = ev.ndcg10.mean;
            row.mrr10 = ev.mrr10.mean;
        } catch (const std::exception& e) {
            row.failed = true;
            row.error = e.what();
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

// ---------------------------------------------------------------------------
// Synthetic desk corpus: topic-keyword documents, queries with injected
// case/space variants, graded judgments and matching training records.

struct CorpusSpec {
    std::size_t n_topics = 0;  // 0: one topic per two documents
    std::size_t keywords_per_topic = 1;
    std::size_t doc_keywords_min = 2;  // sampled, on top of one guaranteed
    std::size_t doc_keywords_max = 4;  // occurrence of every topic keyword
    std::size_t doc_fillers_min = 2;
    std::size_t doc_fillers_max = 4;
    std::size_t n_fillers = 16;
    std::size_t query_keywords = 1;
    std::size_t train_records = 0;  // 0: 12 per evaluation query
    std::size_t negatives_per_record = 4;
    bool emit_teacher_scores = true;
    double capitalize_rate = 0.2;
};

struct SyntheticCorpus {
    std::vector<Doc> docs;
    std::vector<QueryRecord> queries;
    Qrels qrels;
    std::vector<TrainingExample> train;
    std::vector<std::vector<std::string>> topic_keywords;

    // Text stream for vocabulary building. Queries appear in their rendered
    // template form, the same strings the model later tokenizes, so the
    // markers and instruction words earn their true corpus frequency.
    std::string all_text() const {
        std::string s;
        for (const auto& d : docs) {
            s += d.text;
            s += '\n';
        }
        for (const auto& q : queries) {
            s += "<Instruct> " + q.task + " <query> " + q.text;
            s += '\n';
        }
        for (const auto& t : train) {
            s += "<Instruct> " + t.task_definition + " <query> " + t.query;
            s += '\n';
        }
        return s;
    }
};

namespace detail {

// Pronounceable pseudo-words keep the keyword supply unbounded and disjoint
// from real English so topical matches are unambiguous.
inline std::string synth_word(std::mt19937_64& rng, std::set<std::string>& used) {
    static const char* consonants = "bdfgklmnprstvz";
    static const char* vowels = "aeiou";
    std::uniform_int_distribution<int> syllables(2, 3);
    std::uniform_int_distribution<int> ci(0, 13), vi(0, 4);
    for (;;) {
        std::string w;
        const int n = syllables(rng);
        for (int s = 0; s < n; ++s) {
            w += consonants[ci(rng)];
            w += vowels[vi(rng)];
        }
        if (used.insert(w).second) return w;
    }
}

inline std::string maybe_capitalize(std::string w, std::mt19937_64& rng, double rate) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    if (!w.empty() && u(rng) < rate)
        w[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(w[0])));
    return w;
}

}  // namespace detail

inline const char* kMsMarcoInstruction =
    "Given a web search query, retrieve relevant passages that answer the query.";

inline SyntheticCorpus make_synthetic_corpus(std::uint64_t seed, std::size_t n_docs,
                                             std::size_t n_queries, CorpusSpec spec = {}) {
    if (n_docs < 1 || n_queries < 1) throw UsageError("need at least one doc and one query");
    if (spec.n_topics == 0) spec.n_topics = std::max<std::size_t>(1, n_docs / 2);
    auto rng = make_rng(seed);
    std::set<std::string> used;

    SyntheticCorpus c;
    c.topic_keywords.resize(spec.n_topics);
    for (auto& kws : c.topic_keywords)
        for (std::size_t i = 0; i < spec.keywords_per_topic; ++i)
            kws.push_back(detail::synth_word(rng, used));
    std::vector<std::string> fillers;
    for (std::size_t i = 0; i < spec.n_fillers; ++i)
        fillers.push_back(detail::synth_word(rng, used));

    std::uniform_real_distribution<double> unit(0.0, 1.0);
    auto pick = [&](const std::vector<std::string>& pool) -> const std::string& {
        std::uniform_int_distribution<std::size_t> d(0, pool.size() - 1);
        return pool[d(rng)];
    };

    // Documents, round-robin over topics so every topic has coverage. Every
    // topic keyword appears in every document of its topic at least once, so
    // any query keyword has a lexical match in every relevant document.
    std::vector<std::size_t> doc_topic(n_docs);
    for (std::size_t i = 0; i < n_docs; ++i) {
        const std::size_t topic = i % spec.n_topics;
        doc_topic[i] = topic;
        std::uniform_int_distribution<std::size_t> nk(spec.doc_keywords_min, spec.doc_keywords_max);
        std::uniform_int_distribution<std::size_t> nf(spec.doc_fillers_min, spec.doc_fillers_max);
        std::vector<std::string> words;
        for (const auto& kw : c.topic_keywords[topic])
            words.push_back(detail::maybe_capitalize(kw, rng, spec.capitalize_rate));
        for (std::size_t j = nk(rng); j > 0; --j)
            words.push_back(
                detail::maybe_capitalize(pick(c.topic_keywords[topic]), rng, spec.capitalize_rate));
        for (std::size_t j = nf(rng); j > 0; --j)
            words.push_back(detail::maybe_capitalize(pick(fillers), rng, spec.capitalize_rate));
        std::shuffle(words.begin(), words.end(), rng);
        std::string text;
        for (std::size_t w = 0; w < words.size(); ++w) {
            if (w) text += ' ';
            text += words[w];
        }
        char id[32];
        std::snprintf(id, sizeof id, "d%05zu", i);
        c.docs.push_back({id, text});
    }

    auto make_query_text = [&](std::size_t topic) {
        std::string text = unit(rng) < 0.5 ? "What is" : "what is";
        std::vector<std::string> kws = c.topic_keywords[topic];
        std::shuffle(kws.begin(), kws.end(), rng);
        const std::size_t n = std::min(spec.query_keywords, kws.size());
        for (std::size_t j = 0; j < n; ++j) {
            text += ' ';
            text += detail::maybe_capitalize(kws[j], rng, spec.capitalize_rate);
        }
        return text;
    };

    // Evaluation queries with graded judgments: every same-topic doc is
    // relevant (grade 1), so each query has at least one relevant document.
    for (std::size_t i = 0; i < n_queries; ++i) {
        const std::size_t topic = i % spec.n_topics;
        char id[32];
        std::snprintf(id, sizeof id, "q%05zu", i);
        c.queries.push_back({id, kMsMarcoInstruction, make_query_text(topic)});
        for (std::size_t d = 0; d < n_docs; ++d)
            if (doc_topic[d] == topic) c.qrels[id][c.docs[d].id] = 1;
    }

    // Training records over the same corpus but freshly sampled queries.
    const std::size_t n_train =
        spec.train_records > 0 ? spec.train_records : 12 * n_queries;
    std::vector<std::vector<std::size_t>> docs_of_topic(spec.n_topics);
    for (std::size_t d = 0; d < n_docs; ++d) docs_of_topic[doc_topic[d]].push_back(d);
    std::uniform_int_distribution<std::size_t> topic_dist(0, spec.n_topics - 1);
    std::uniform_int_distribution<std::size_t> doc_dist(0, n_docs - 1);
    for (std::size_t i = 0; i < n_train; ++i) {
        const std::size_t topic = topic_dist(rng);
        TrainingExample e;
        e.task_definition = kMsMarcoInstruction;
        e.query = make_query_text(topic);
        const auto& mine = docs_of_topic[topic];
        std::uniform_int_distribution<std::size_t> pd(0, mine.size() - 1);
        e.positive = c.docs[mine[pd(rng)]].text;
        while (e.negatives.size() < spec.negatives_per_record) {
            const std::size_t d = doc_dist(rng);
            if (doc_topic[d] != topic) e.negatives.push_back(c.docs[d].text);
        }
        e.dataset_tag = "retrieval";
        if (spec.emit_teacher_scores) {
            std::vector<double> ts{1.0};
            for (std::size_t j = 0; j < e.negatives.size(); ++j) ts.push_back(0.0);
            e.teacher_scores = std::move(ts);
        }
        c.train.push_back(std::move(e));
    }
    return c;
}

}  // namespace lens
