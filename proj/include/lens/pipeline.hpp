#pragma once

// End-to-end training runs: config parsing, centroid-head construction,
// tag-pure batching, the epoch loop, periodic checkpoints and a step log.
// Single-threaded and deterministic under a fixed seed.

#include <algorithm>
#include <cstdio>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "lens/cluster.hpp"
#include "lens/common.hpp"
#include "lens/data.hpp"
#include "lens/embed.hpp"
#include "lens/encoder.hpp"
#include "lens/train.hpp"
#include "lens/vocab.hpp"

namespace lens {

enum class InBatchMode { automatic, on, off };

struct TrainRunConfig {
    EncoderConfig encoder;  // vocab_size is filled in from the vocabulary
    TrainObjective objective = TrainObjective::lexicon;
    Pooling pooling = Pooling::max;
    std::size_t k = 64;  // 0 or |V| keeps the original head (no clustering)
    std::size_t kmeans_max_iter = 100;
    double kmeans_tol = 1e-10;
    LossConfig loss;
    OptimizerConfig optimizer;
    std::size_t batch_size_retrieval = 32;
    std::size_t batch_size_other = 16;
    std::size_t epochs = 1;
    std::uint64_t seed = 17;
    bool exclude_eos = false;
    bool freeze_head = false;
    InBatchMode in_batch = InBatchMode::automatic;
    std::size_t checkpoint_every = 0;  // steps; 0 = final checkpoint only
    std::string checkpoint_prefix;

    EmbedOptions embed_options() const {
        EmbedOptions o;
        o.pooling = pooling;
        o.include_eos = !exclude_eos;
        return o;
    }
};

inline TrainRunConfig train_config_from(const KeyValueConfig& kv) {
    TrainRunConfig c;
    c.encoder.d_model = static_cast<std::size_t>(kv.get_int("d_model", 32));
    c.encoder.n_layers = static_cast<std::size_t>(kv.get_int("n_layers", 2));
    c.encoder.n_heads = static_cast<std::size_t>(kv.get_int("n_heads", 4));
    c.encoder.d_ff = static_cast<std::size_t>(kv.get_int("d_ff", 64));
    c.encoder.max_len = static_cast<std::size_t>(kv.get_int("max_len", 64));
    c.encoder.attention_mode =
        attention_mode_from_string(kv.get_string("attention", "bidirectional"));
    c.objective = objective_from_string(kv.get_string("objective", "lexicon"));
    c.pooling = pooling_from_string(kv.get_string("pooling", "max"));
    c.k = static_cast<std::size_t>(kv.get_int("k", 64));
    c.kmeans_max_iter = static_cast<std::size_t>(kv.get_int("kmeans_max_iter", 100));
    c.kmeans_tol = kv.get_double("kmeans_tol", 1e-10);
    c.loss.temperature = kv.get_double("tau", 0.02);
    c.loss.kl_weight = kv.get_double("kl_weight", 1.0);
    c.loss.kl_teacher_temperature = kv.get_double("kl_teacher_temperature", 1.0);
    c.optimizer.lr = kv.get_double("lr", 1e-3);
    c.optimizer.weight_decay = kv.get_double("weight_decay", 0.01);
    c.batch_size_retrieval = static_cast<std::size_t>(kv.get_int("batch_size_retrieval", 32));
    c.batch_size_other = static_cast<std::size_t>(kv.get_int("batch_size_other", 16));
    c.epochs = static_cast<std::size_t>(kv.get_int("epochs", 1));
    c.seed = static_cast<std::uint64_t>(kv.get_int("seed", 17));
    c.encoder.seed = c.seed;
    c.exclude_eos = kv.get_bool("exclude_eos", false);
    c.freeze_head = kv.get_bool("freeze_head", false);
    const std::string ib = kv.get_string("in_batch_negatives", "auto");
    if (ib == "auto")
        c.in_batch = InBatchMode::automatic;
    else if (ib == "on" || ib == "true")
        c.in_batch = InBatchMode::on;
    else if (ib == "off" || ib == "false")
        c.in_batch = InBatchMode::off;
    else
        throw UsageError("in_batch_negatives must be auto|on|off");
    c.checkpoint_every = static_cast<std::size_t>(kv.get_int("checkpoint_every", 0));
    return c;
}

struct StepLog {
    std::size_t step = 0;
    std::string dataset_tag;
    double loss = 0.0;
    double grad_norm = 0.0;
    bool aborted = false;
};

struct TrainOutcome {
    EncoderModel model;
    std::optional<ClusterHead> cluster;
    std::vector<StepLog> log;
    std::size_t aborted_steps = 0;
    double initial_loss = 0.0;
    double final_loss = 0.0;
};

// Loads training records and applies the malformed-record policy: skipped
// lines are tolerated up to 10% of the file.
inline std::vector<TrainingExample> load_training_data_checked(const std::string& path,
                                                               std::size_t* skipped = nullptr) {
    std::size_t bad = 0;
    std::vector<TrainingExample> records = load_training_records(path, &bad);
    if (skipped) *skipped = bad;
    if (records.empty()) throw DataError("no training data");
    if (bad * 10 > (records.size() + bad)) throw DataError("more than 10% malformed records in " + path);
    return records;
}

// One training run: init model, swap in the centroid head when k asks for
// clustering, then train for the configured epochs with tag-pure batches.
inline TrainOutcome run_training(const TrainRunConfig& cfg_in,
                                 const std::vector<TrainingExample>& records,
                                 const Vocabulary& vocab) {
    if (records.empty()) throw DataError("no training data");
    TrainRunConfig cfg = cfg_in;
    cfg.encoder.vocab_size = vocab.size();
    cfg.encoder.seed = cfg.seed;

    TrainOutcome out;
    out.model = init_model(cfg.encoder);
    // The dense objective never reads the output head; leave it original.
    const bool cluster =
        cfg.objective == TrainObjective::lexicon && cfg.k > 0 && cfg.k < vocab.size();
    if (cluster) {
        auto [head_info, head] =
            build_centroid_head(out.model, cfg.k, cfg.seed, cfg.kmeans_max_iter, cfg.kmeans_tol);
        set_head(out.model, std::move(head));
        out.cluster = std::move(head_info);
    }

    // Group by dataset tag; map iteration keeps tag order deterministic.
    std::map<std::string, std::vector<std::size_t>> by_tag;
    for (std::size_t i = 0; i < records.size(); ++i) by_tag[records[i].dataset_tag].push_back(i);

    auto rng = make_rng(cfg.seed ^ 0x9e3779b97f4a7c15ull);
    OptimizerState opt_state = OptimizerState::make(out.model);
    const EmbedOptions embed_opt = cfg.embed_options();

    std::size_t step = 0;
    bool have_initial = false;
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        struct PendingBatch {
            std::string tag;
            std::vector<std::size_t> idx;
        };
        std::vector<PendingBatch> batches;
        for (auto& [tag, idx] : by_tag) {
            std::vector<std::size_t> order = idx;
            std::shuffle(order.begin(), order.end(), rng);
            const std::size_t bs =
                tag == "retrieval" ? cfg.batch_size_retrieval : cfg.batch_size_other;
            for (std::size_t b = 0; b < order.size(); b += bs) {
                PendingBatch pb;
                pb.tag = tag;
                for (std::size_t j = b; j < std::min(b + bs, order.size()); ++j)
                    pb.idx.push_back(order[j]);
                batches.push_back(std::move(pb));
            }
        }
        std::shuffle(batches.begin(), batches.end(), rng);

        for (const auto& pb : batches) {
            std::vector<TrainingExample> ex;
            ex.reserve(pb.idx.size());
            for (std::size_t i : pb.idx) ex.push_back(records[i]);
            const bool in_batch = cfg.in_batch == InBatchMode::on ||
                                  (cfg.in_batch == InBatchMode::automatic && pb.tag == "retrieval");
            const ContrastiveBatch batch = ContrastiveBatch::make(std::move(ex), in_batch);

            const StepMetrics m = train_step(out.model, vocab, batch, cfg.loss, embed_opt,
                                             cfg.optimizer, opt_state, cfg.freeze_head,
                                             cfg.objective);
            ++step;
            out.log.push_back({step, pb.tag, m.loss, m.grad_norm, m.aborted});
            if (m.aborted) {
                ++out.aborted_steps;
                continue;
            }
            if (!have_initial) {
                out.initial_loss = m.loss;
                have_initial = true;
            }
            out.final_loss = m.loss;
            if (cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0 &&
                !cfg.checkpoint_prefix.empty())
                save_checkpoint(out.model,
                                cfg.checkpoint_prefix + ".step" + std::to_string(step) + ".ckpt");
        }
    }
    return out;
}

inline void write_step_log(const std::vector<StepLog>& log, const std::string& path) {
    std::vector<std::vector<std::string>> rows;
    for (const auto& s : log) {
        char loss[64], gn[64];
        std::snprintf(loss, sizeof loss, "%.9g", s.loss);
        std::snprintf(gn, sizeof gn, "%.9g", s.grad_norm);
        rows.push_back({std::to_string(s.step), s.dataset_tag, loss, gn,
                        s.aborted ? "aborted" : "ok"});
    }
    write_csv(path, {"step", "dataset", "loss", "grad_norm", "status"}, rows);
}

}  // namespace lens
