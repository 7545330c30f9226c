// lens: lexicon-based text embeddings at desk scale.
//
// Pipeline: make-corpus -> build-vocab -> train -> embed -> eval, with
// cluster/inspect-clusters for the centroid head, hybrid-eval for fused
// lexicon+dense scoring, and ablate/sweep-k for the experiment grids.
//
// Exit codes: 0 success, 1 usage, 2 data error, 3 numeric failure.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "lens/evalkit.hpp"

namespace fs = std::filesystem;
using namespace lens;

namespace {

struct GlobalOpts {
    std::string config_path;
    long long seed = -1;  // -1: take the config's seed
    bool exclude_eos = false;
    bool freeze_head = false;

    TrainRunConfig load(std::size_t vocab_size = 0) const {
        KeyValueConfig kv;
        if (!config_path.empty()) kv = load_config(config_path);
        TrainRunConfig cfg = train_config_from(kv);
        if (seed >= 0) {
            cfg.seed = static_cast<std::uint64_t>(seed);
            cfg.encoder.seed = cfg.seed;
        }
        if (exclude_eos) cfg.exclude_eos = true;
        if (freeze_head) cfg.freeze_head = true;
        if (vocab_size > 0) cfg.encoder.vocab_size = vocab_size;
        return cfg;
    }
};

std::vector<std::string> split_list(const std::string& csv) {
    std::vector<std::string> out;
    std::stringstream ss(csv);
    std::string item;
    while (std::getline(ss, item, ','))
        if (!item.empty()) out.push_back(item);
    return out;
}

struct MetricSpec {
    std::string name;  // ndcg | mrr
    std::size_t k = 10;
};

std::vector<MetricSpec> parse_metrics(const std::string& csv) {
    std::vector<MetricSpec> out;
    for (const auto& item : split_list(csv)) {
        const auto at = item.find('@');
        MetricSpec m;
        m.name = item.substr(0, at);
        if (at != std::string::npos) m.k = std::stoul(item.substr(at + 1));
        if (m.name != "ndcg" && m.name != "mrr")
            throw UsageError("unknown metric: " + item + " (expected ndcg@K or mrr@K)");
        out.push_back(m);
    }
    if (out.empty()) throw UsageError("no metrics requested");
    return out;
}

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return buf;
}

// ---------------------------------------------------------------------------

int cmd_make_corpus(const std::string& out_dir, std::uint64_t seed, std::size_t n_docs,
                    std::size_t n_queries, std::size_t topics, std::size_t train_records,
                    std::size_t negatives, bool no_teacher) {
    CorpusSpec spec;
    if (topics > 0) spec.n_topics = topics;
    if (train_records > 0) spec.train_records = train_records;
    spec.negatives_per_record = negatives;
    spec.emit_teacher_scores = !no_teacher;

    const SyntheticCorpus c = make_synthetic_corpus(seed, n_docs, n_queries, spec);
    fs::create_directories(out_dir);
    save_corpus(c.docs, out_dir + "/corpus.jsonl");
    save_queries(c.queries, out_dir + "/queries.jsonl");
    save_qrels(c.qrels, out_dir + "/qrels.txt");
    save_training_records(c.train, out_dir + "/train.jsonl");
    {
        std::ofstream out(out_dir + "/vocab_text.txt", std::ios::binary);
        if (!out) throw DataError("cannot write vocab_text.txt");
        out << c.all_text();
    }
    std::printf("wrote %zu docs, %zu queries, %zu training records to %s\n", c.docs.size(),
                c.queries.size(), c.train.size(), out_dir.c_str());
    return 0;
}

int cmd_build_vocab(const std::vector<std::string>& corpus_files,
                    const std::vector<std::string>& query_files,
                    const std::vector<std::string>& raw_files, std::size_t target_size,
                    bool no_injection, const std::string& out_path) {
    std::string text;
    for (const auto& p : corpus_files)
        for (const auto& d : load_corpus(p)) {
            text += d.text;
            text += '\n';
        }
    for (const auto& p : query_files)
        for (const auto& q : load_queries(p)) {
            text += "<Instruct> " + q.task + " <query> " + q.text;
            text += '\n';
        }
    for (const auto& p : raw_files) {
        std::ifstream in(p, std::ios::binary);
        if (!in) throw DataError("cannot open raw text: " + p);
        std::stringstream ss;
        ss << in.rdbuf();
        text += ss.str();
        text += '\n';
    }
    if (text.empty()) throw UsageError("no input text (use --corpus/--queries/--raw)");
    const Vocabulary v = build_vocabulary(text, target_size, !no_injection);
    save_vocabulary(v, out_path);
    std::printf("vocabulary of %zu tokens written to %s\n", v.size(), out_path.c_str());
    return 0;
}

int cmd_train(const GlobalOpts& g, const std::string& data_path, const std::string& vocab_path,
              const std::string& out_path, std::string map_path, std::string log_path,
              const std::string& init_out) {
    const Vocabulary vocab = load_vocabulary(vocab_path);
    TrainRunConfig cfg = g.load(vocab.size());
    cfg.checkpoint_prefix = out_path;

    std::size_t skipped = 0;
    const std::vector<TrainingExample> records = load_training_data_checked(data_path, &skipped);
    if (skipped > 0)
        std::fprintf(stderr, "skipped %zu malformed records in %s\n", skipped, data_path.c_str());

    if (!init_out.empty()) {
        EncoderConfig ec = cfg.encoder;
        ec.seed = cfg.seed;
        save_checkpoint(init_model(ec), init_out);
    }

    const TrainOutcome out = run_training(cfg, records, vocab);
    save_checkpoint(out.model, out_path);
    if (out.cluster) {
        if (map_path.empty()) map_path = out_path + ".clusters.tsv";
        save_cluster_map(*out.cluster, vocab, map_path);
    }
    if (log_path.empty()) log_path = out_path + ".log.csv";
    write_step_log(out.log, log_path);

    std::printf("trained %zu steps (%zu aborted), loss %.4f -> %.4f\n", out.log.size(),
                out.aborted_steps, out.initial_loss, out.final_loss);
    std::printf("checkpoint: %s\n", out_path.c_str());
    if (out.cluster) std::printf("cluster map: %s\n", map_path.c_str());
    return 0;
}

int cmd_cluster(const GlobalOpts& g, const std::string& model_path, std::size_t k,
                const std::string& map_path, const std::string& out_model,
                const std::string& vocab_path) {
    const TrainRunConfig cfg = g.load();
    EncoderModel model = load_checkpoint(model_path);
    auto [info, head] = build_centroid_head(model, k, cfg.seed, cfg.kmeans_max_iter,
                                            cfg.kmeans_tol);
    if (!map_path.empty()) {
        const Vocabulary vocab = load_vocabulary(vocab_path);
        save_cluster_map(info, vocab, map_path);
        std::printf("cluster map: %s\n", map_path.c_str());
    }
    if (!out_model.empty()) {
        set_head(model, std::move(head));
        save_checkpoint(model, out_model);
        std::printf("centroid-head checkpoint: %s\n", out_model.c_str());
    }
    std::printf("k=%zu inertia=%.6f iterations=%zu\n", info.k, info.inertia,
                info.inertia_history.size());
    return 0;
}

int cmd_inspect_clusters(const std::string& model_path, const std::string& vocab_path,
                         const std::string& map_path, const std::string& clusters_csv,
                         std::size_t top_n) {
    const Vocabulary vocab = load_vocabulary(vocab_path);
    const EncoderModel model = load_checkpoint(model_path);
    const ClusterMap map = load_cluster_map(map_path);
    const ClusterHead head = rebuild_cluster_head(model, map);

    std::vector<ClusterRow> rows;
    if (!clusters_csv.empty()) {
        std::vector<int> ids;
        for (const auto& s : split_list(clusters_csv)) ids.push_back(std::stoi(s));
        rows = inspect_clusters(vocab, head, ids);
    } else {
        rows = inspect_top_clusters(vocab, head, top_n);
    }
    std::fputs(format_cluster_report(vocab, rows).c_str(), stdout);
    return 0;
}

int cmd_embed(const GlobalOpts& g, const std::string& model_path, const std::string& vocab_path,
              const std::string& queries_path, const std::string& docs_path,
              const std::string& out_path, const std::string& pooling,
              const std::string& attention, bool dense, bool sparse) {
    const Vocabulary vocab = load_vocabulary(vocab_path);
    EncoderModel model = load_checkpoint(model_path);
    if (!attention.empty()) model.cfg.attention_mode = attention_mode_from_string(attention);

    const TrainRunConfig cfg = g.load();
    EmbedOptions opt = cfg.embed_options();
    if (!pooling.empty()) opt.pooling = pooling_from_string(pooling);

    EmbeddingMatrix m;
    if (!queries_path.empty()) {
        const auto queries = load_queries(queries_path);
        for (const auto& q : queries) {
            const InstructedQuery iq = render_query(vocab, q.task, q.text);
            if (dense)
                m.rows.push_back(to_f32(embed_dense(model, vocab, iq).values));
            else
                m.rows.push_back(to_f32(embed_query(model, vocab, iq, opt).weights));
        }
    } else {
        const auto docs = load_corpus(docs_path);
        for (const auto& d : docs) {
            if (dense)
                m.rows.push_back(to_f32(embed_dense(model, vocab, d.text).values));
            else
                m.rows.push_back(to_f32(embed_passage(model, vocab, d.text, opt).weights));
        }
    }
    m.dim = m.rows.empty() ? 0 : static_cast<std::uint32_t>(m.rows.front().size());
    write_embeddings(m, out_path, sparse);
    std::printf("wrote %zu embeddings of dim %u to %s\n", m.rows.size(), m.dim,
                out_path.c_str());
    return 0;
}

int run_eval(const std::vector<std::vector<double>>& qe, const std::vector<std::string>& qids,
             const std::vector<std::vector<double>>& de, const std::vector<std::string>& dids,
             const Qrels& qrels, const std::vector<MetricSpec>& metrics,
             const std::string& out_csv) {
    std::vector<std::vector<std::string>> rows;
    for (const auto& spec : metrics) {
        const auto runs = retrieve(qe, qids, de, dids, spec.k);
        const MetricSummary s =
            spec.name == "ndcg"
                ? aggregate_metric(runs, qrels, spec.k,
                                   [](const auto& r, const auto& j, const auto& q,
                                      std::size_t k) { return ndcg_at_k(r, j, q, k); })
                : aggregate_metric(runs, qrels, spec.k,
                                   [](const auto& r, const auto& j, const auto& q,
                                      std::size_t k) { return mrr_at_k(r, j, q, k); });
        std::printf("%s@%zu = %.6f (queries evaluated %zu, skipped %zu)\n", spec.name.c_str(),
                    spec.k, s.mean, s.evaluated, s.skipped);
        rows.push_back({spec.name + "@" + std::to_string(spec.k), fmt(s.mean),
                        std::to_string(s.evaluated), std::to_string(s.skipped)});
    }
    if (!out_csv.empty()) write_csv(out_csv, {"metric", "value", "evaluated", "skipped"}, rows);
    return 0;
}

std::vector<std::vector<double>> to_f64_rows(const EmbeddingMatrix& m) {
    std::vector<std::vector<double>> out;
    out.reserve(m.rows.size());
    for (const auto& r : m.rows) out.emplace_back(r.begin(), r.end());
    return out;
}

int cmd_eval(const std::string& query_emb, const std::string& doc_emb,
             const std::string& queries_path, const std::string& docs_path,
             const std::string& qrels_path, const std::string& metric_csv,
             const std::string& out_csv) {
    const auto qe = to_f64_rows(read_embeddings(query_emb));
    const auto de = to_f64_rows(read_embeddings(doc_emb));
    std::vector<std::string> qids, dids;
    for (const auto& q : load_queries(queries_path)) qids.push_back(q.id);
    for (const auto& d : load_corpus(docs_path)) dids.push_back(d.id);
    if (qids.size() != qe.size() || dids.size() != de.size())
        throw DataError("embedding row count does not match id file");
    return run_eval(qe, qids, de, dids, load_qrels(qrels_path), parse_metrics(metric_csv),
                    out_csv);
}

int cmd_hybrid_eval(const std::string& qlex_path, const std::string& dlex_path,
                    const std::string& qden_path, const std::string& dden_path,
                    const std::string& queries_path, const std::string& docs_path,
                    const std::string& qrels_path, double alpha, bool raw_concat,
                    const std::string& metric_csv, const std::string& out_csv) {
    const auto qlex = read_embeddings(qlex_path);
    const auto dlex = read_embeddings(dlex_path);
    const auto qden = read_embeddings(qden_path);
    const auto dden = read_embeddings(dden_path);
    HybridConfig cfg;
    cfg.alpha = alpha;
    cfg.normalize_each = !raw_concat;

    auto fuse_all = [&](const EmbeddingMatrix& lex, const EmbeddingMatrix& den) {
        if (lex.rows.size() != den.rows.size())
            throw DataError("lexicon and dense embedding counts differ");
        std::vector<std::vector<double>> out;
        for (std::size_t i = 0; i < lex.rows.size(); ++i) {
            LexiconEmbedding le;
            le.weights.assign(lex.rows[i].begin(), lex.rows[i].end());
            DenseEmbedding de;
            de.values.assign(den.rows[i].begin(), den.rows[i].end());
            out.push_back(hybrid_fuse(le, de, cfg));
        }
        return out;
    };
    const auto qf = fuse_all(qlex, qden);
    const auto df = fuse_all(dlex, dden);
    std::vector<std::string> qids, dids;
    for (const auto& q : load_queries(queries_path)) qids.push_back(q.id);
    for (const auto& d : load_corpus(docs_path)) dids.push_back(d.id);
    if (qids.size() != qf.size() || dids.size() != df.size())
        throw DataError("embedding row count does not match id file");
    return run_eval(qf, qids, df, dids, load_qrels(qrels_path), parse_metrics(metric_csv),
                    out_csv);
}

int cmd_ablate(const GlobalOpts& g, const std::string& data_path, const std::string& vocab_path,
               const std::string& corpus_path, const std::string& queries_path,
               const std::string& qrels_path, const std::string& out_csv) {
    const Vocabulary vocab = load_vocabulary(vocab_path);
    const TrainRunConfig base = g.load(vocab.size());
    const auto records = load_training_data_checked(data_path);
    const auto docs = load_corpus(corpus_path);
    const auto queries = load_queries(queries_path);
    const Qrels qrels = load_qrels(qrels_path);

    const auto rows = ablation_grid(base, records, vocab, docs, queries, qrels);
    std::vector<std::vector<std::string>> csv;
    for (const auto& r : rows) {
        csv.push_back({to_string(r.attention), to_string(r.pooling),
                       r.failed ? "FAILED" : "ok", fmt(r.initial_loss), fmt(r.final_loss),
                       fmt(r.ndcg10), fmt(r.mrr10)});
        std::printf("%-13s %-4s %-6s initial=%.4f final=%.4f ndcg@10=%.4f mrr@10=%.4f%s\n",
                    to_string(r.attention), to_string(r.pooling), r.failed ? "FAILED" : "ok",
                    r.initial_loss, r.final_loss, r.ndcg10, r.mrr10,
                    r.failed ? (" (" + r.error + ")").c_str() : "");
    }
    write_csv(out_csv,
              {"attention", "pooling", "status", "initial_loss", "final_loss", "ndcg@10",
               "mrr@10"},
              csv);

    // loss curves, one file next to the report
    const std::string curves = out_csv + ".losses.csv";
    std::vector<std::vector<std::string>> curve_rows;
    for (const auto& r : rows)
        for (std::size_t s = 0; s < r.loss_curve.size(); ++s)
            curve_rows.push_back({std::string(to_string(r.attention)) + "+" +
                                      to_string(r.pooling),
                                  std::to_string(s + 1), fmt(r.loss_curve[s])});
    write_csv(curves, {"config", "step", "loss"}, curve_rows);
    std::printf("report: %s\nloss curves: %s\n", out_csv.c_str(), curves.c_str());
    return 0;
}

int cmd_sweep_k(const GlobalOpts& g, const std::string& k_csv, const std::string& data_path,
                const std::string& vocab_path, const std::string& corpus_path,
                const std::string& queries_path, const std::string& qrels_path,
                const std::string& out_csv) {
    const Vocabulary vocab = load_vocabulary(vocab_path);
    const TrainRunConfig base = g.load(vocab.size());
    const auto records = load_training_data_checked(data_path);
    const auto docs = load_corpus(corpus_path);
    const auto queries = load_queries(queries_path);
    const Qrels qrels = load_qrels(qrels_path);

    std::vector<std::size_t> ks;
    for (const auto& s : split_list(k_csv)) {
        if (s == "V" || s == "vocab")  // the no-clustering baseline row
            ks.push_back(vocab.size());
        else
            ks.push_back(std::stoul(s));
    }
    if (ks.empty()) throw UsageError("no k values given");

    const auto rows = cluster_sweep(base, ks, records, vocab, docs, queries, qrels);
    std::vector<std::vector<std::string>> csv;
    for (const auto& r : rows) {
        csv.push_back({std::to_string(r.k), r.failed ? "FAILED" : "ok", fmt(r.final_loss),
                       fmt(r.ndcg10), fmt(r.mrr10)});
        std::printf("k=%-6zu %-6s final_loss=%.4f ndcg@10=%.4f mrr@10=%.4f%s\n", r.k,
                    r.failed ? "FAILED" : "ok", r.final_loss, r.ndcg10, r.mrr10,
                    r.failed ? (" (" + r.error + ")").c_str() : "");
    }
    write_csv(out_csv, {"k", "status", "final_loss", "ndcg@10", "mrr@10"}, csv);
    std::printf("report: %s\n", out_csv.c_str());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"lens: lexicon-based text embeddings with a clustered output head"};
    app.require_subcommand(1);

    GlobalOpts g;
    app.add_option("--config", g.config_path, "key=value config file")->expected(1);
    app.add_option("--seed", g.seed, "override the config seed");
    app.add_flag("--exclude-eos", g.exclude_eos, "pool only over the raw token span");
    app.add_flag("--freeze-head", g.freeze_head, "do not update the output head in training");

    // make-corpus
    auto* mc = app.add_subcommand("make-corpus", "generate a synthetic desk corpus");
    std::string mc_out = "corpus";
    std::size_t mc_docs = 200, mc_queries = 50, mc_topics = 0, mc_train = 0, mc_negs = 4;
    std::uint64_t mc_seed = 7;
    bool mc_no_teacher = false;
    mc->add_option("--out-dir", mc_out, "output directory");
    mc->add_option("--docs", mc_docs, "number of documents");
    mc->add_option("--queries", mc_queries, "number of evaluation queries");
    mc->add_option("--topics", mc_topics, "topic count (0: docs/2)");
    mc->add_option("--train-records", mc_train, "training records (0: 12 per query)");
    mc->add_option("--negatives", mc_negs, "hard negatives per record");
    mc->add_option("--corpus-seed", mc_seed, "generator seed");
    mc->add_flag("--no-teacher-scores", mc_no_teacher, "omit teacher scores");

    // build-vocab
    auto* bv = app.add_subcommand("build-vocab", "build a greedy longest-match vocabulary");
    std::vector<std::string> bv_corpus, bv_queries, bv_raw;
    std::size_t bv_target = 500;
    bool bv_noinj = false;
    std::string bv_out = "vocab.txt";
    bv->add_option("--corpus", bv_corpus, "corpus jsonl files");
    bv->add_option("--queries", bv_queries, "query jsonl files (counted in rendered form)");
    bv->add_option("--raw", bv_raw, "plain text files");
    bv->add_option("--target-size", bv_target, "vocabulary size target");
    bv->add_flag("--no-variant-injection", bv_noinj, "disable case/space variant injection");
    bv->add_option("--out", bv_out, "output vocabulary file");

    // train
    auto* tr = app.add_subcommand("train", "contrastive training run");
    std::string tr_data, tr_vocab, tr_out = "model.ckpt", tr_map, tr_log, tr_init;
    tr->add_option("--data", tr_data, "training records jsonl")->required();
    tr->add_option("--vocab", tr_vocab, "vocabulary file")->required();
    tr->add_option("--out", tr_out, "output checkpoint");
    tr->add_option("--cluster-map", tr_map, "cluster map output (default <out>.clusters.tsv)");
    tr->add_option("--log", tr_log, "step log csv (default <out>.log.csv)");
    tr->add_option("--init-out", tr_init, "also save the pre-training checkpoint");

    // cluster
    auto* cl = app.add_subcommand("cluster", "build a centroid head from a checkpoint");
    std::string cl_model, cl_map, cl_out_model, cl_vocab;
    std::size_t cl_k = 64;
    cl->add_option("--model", cl_model, "checkpoint with the original head")->required();
    cl->add_option("--k", cl_k, "cluster count");
    cl->add_option("--vocab", cl_vocab, "vocabulary file (needed for --out-map)");
    cl->add_option("--out-map", cl_map, "cluster map output");
    cl->add_option("--out-model", cl_out_model, "checkpoint with the centroid head");

    // inspect-clusters
    auto* ic = app.add_subcommand("inspect-clusters", "dump cluster member tokens");
    std::string ic_model, ic_vocab, ic_map, ic_clusters;
    std::size_t ic_top = 10;
    ic->add_option("--model", ic_model, "checkpoint with the original head")->required();
    ic->add_option("--vocab", ic_vocab, "vocabulary file")->required();
    ic->add_option("--map", ic_map, "cluster map file")->required();
    ic->add_option("--clusters", ic_clusters, "comma-separated cluster ids");
    ic->add_option("--top", ic_top, "largest clusters to show when --clusters is absent");

    // embed
    auto* em = app.add_subcommand("embed", "embed queries or documents");
    std::string em_model, em_vocab, em_queries, em_docs, em_out = "emb.bin";
    std::string em_pooling, em_attention;
    bool em_dense = false, em_sparse = false;
    em->add_option("--model", em_model, "checkpoint")->required();
    em->add_option("--vocab", em_vocab, "vocabulary file")->required();
    em->add_option("--queries", em_queries, "query jsonl (instructed embedding)");
    em->add_option("--docs", em_docs, "corpus jsonl (raw passage embedding)");
    em->add_option("--out", em_out, "output embedding file");
    em->add_option("--pooling", em_pooling, "max|sum|last (default from config)");
    em->add_option("--attention", em_attention, "causal|bidir override");
    em->add_flag("--dense", em_dense, "dense (EOS hidden state) embeddings");
    em->add_flag("--sparse", em_sparse, "write the sparse file layout");

    // eval
    auto* ev = app.add_subcommand("eval", "retrieval metrics from embedding files");
    std::string ev_qe, ev_de, ev_queries, ev_docs, ev_qrels, ev_out;
    std::string ev_metric = "ndcg@10,mrr@10";
    ev->add_option("--query-emb", ev_qe, "query embedding file")->required();
    ev->add_option("--doc-emb", ev_de, "document embedding file")->required();
    ev->add_option("--queries", ev_queries, "query jsonl (row order = id order)")->required();
    ev->add_option("--docs", ev_docs, "corpus jsonl (row order = id order)")->required();
    ev->add_option("--qrels", ev_qrels, "TREC qrels file")->required();
    ev->add_option("--metric", ev_metric, "comma list, e.g. ndcg@10,mrr@10");
    ev->add_option("--out", ev_out, "report csv");

    // hybrid-eval
    auto* he = app.add_subcommand("hybrid-eval", "fused lexicon+dense retrieval metrics");
    std::string he_qlex, he_dlex, he_qden, he_dden, he_queries, he_docs, he_qrels, he_out;
    std::string he_metric = "ndcg@10,mrr@10";
    double he_alpha = 0.5;
    bool he_raw = false;
    he->add_option("--query-lex", he_qlex, "query lexicon embeddings")->required();
    he->add_option("--doc-lex", he_dlex, "document lexicon embeddings")->required();
    he->add_option("--query-dense", he_qden, "query dense embeddings")->required();
    he->add_option("--doc-dense", he_dden, "document dense embeddings")->required();
    he->add_option("--queries", he_queries, "query jsonl")->required();
    he->add_option("--docs", he_docs, "corpus jsonl")->required();
    he->add_option("--qrels", he_qrels, "TREC qrels file")->required();
    he->add_option("--alpha", he_alpha, "weight on the lexicon part, in [0,1]");
    he->add_flag("--raw-concat", he_raw, "concatenate without per-part normalization");
    he->add_option("--metric", he_metric, "comma list, e.g. ndcg@10,mrr@10");
    he->add_option("--out", he_out, "report csv");

    // ablate
    auto* ab = app.add_subcommand("ablate", "attention x pooling grid");
    std::string ab_data, ab_vocab, ab_corpus, ab_queries, ab_qrels, ab_out = "ablation.csv";
    ab->add_option("--data", ab_data, "training records jsonl")->required();
    ab->add_option("--vocab", ab_vocab, "vocabulary file")->required();
    ab->add_option("--corpus", ab_corpus, "corpus jsonl")->required();
    ab->add_option("--queries", ab_queries, "query jsonl")->required();
    ab->add_option("--qrels", ab_qrels, "TREC qrels file")->required();
    ab->add_option("--out", ab_out, "report csv");

    // sweep-k
    auto* sw = app.add_subcommand("sweep-k", "cluster-count sweep");
    std::string sw_k, sw_data, sw_vocab, sw_corpus, sw_queries, sw_qrels, sw_out = "sweep.csv";
    sw->add_option("--k", sw_k, "comma list of cluster counts")->required();
    sw->add_option("--data", sw_data, "training records jsonl")->required();
    sw->add_option("--vocab", sw_vocab, "vocabulary file")->required();
    sw->add_option("--corpus", sw_corpus, "corpus jsonl")->required();
    sw->add_option("--queries", sw_queries, "query jsonl")->required();
    sw->add_option("--qrels", sw_qrels, "TREC qrels file")->required();
    sw->add_option("--out", sw_out, "report csv");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (mc->parsed())
            return cmd_make_corpus(mc_out, g.seed >= 0 ? g.seed : mc_seed, mc_docs, mc_queries,
                                   mc_topics, mc_train, mc_negs, mc_no_teacher);
        if (bv->parsed())
            return cmd_build_vocab(bv_corpus, bv_queries, bv_raw, bv_target, bv_noinj, bv_out);
        if (tr->parsed()) return cmd_train(g, tr_data, tr_vocab, tr_out, tr_map, tr_log, tr_init);
        if (cl->parsed()) {
            if (!cl_map.empty() && cl_vocab.empty())
                throw UsageError("--out-map needs --vocab");
            return cmd_cluster(g, cl_model, cl_k, cl_map, cl_out_model, cl_vocab);
        }
        if (ic->parsed()) return cmd_inspect_clusters(ic_model, ic_vocab, ic_map, ic_clusters, ic_top);
        if (em->parsed()) {
            if (em_queries.empty() == em_docs.empty())
                throw UsageError("embed needs exactly one of --queries or --docs");
            return cmd_embed(g, em_model, em_vocab, em_queries, em_docs, em_out, em_pooling,
                             em_attention, em_dense, em_sparse);
        }
        if (ev->parsed())
            return cmd_eval(ev_qe, ev_de, ev_queries, ev_docs, ev_qrels, ev_metric, ev_out);
        if (he->parsed())
            return cmd_hybrid_eval(he_qlex, he_dlex, he_qden, he_dden, he_queries, he_docs,
                                   he_qrels, he_alpha, he_raw, he_metric, he_out);
        if (ab->parsed())
            return cmd_ablate(g, ab_data, ab_vocab, ab_corpus, ab_queries, ab_qrels, ab_out);
        if (sw->parsed())
            return cmd_sweep_k(g, sw_k, sw_data, sw_vocab, sw_corpus, sw_queries, sw_qrels,
                               sw_out);
        throw UsageError("no subcommand");
    } catch (const UsageError& e) {
        std::fprintf(stderr, "usage error: %s\n", e.what());
        return 1;
    } catch (const NumericError& e) {
        std::fprintf(stderr, "numeric failure: %s\n", e.what());
        return 3;
    } catch (const DataError& e) {
        std::fprintf(stderr, "data error: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }
}
