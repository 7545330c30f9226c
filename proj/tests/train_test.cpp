#include <gtest/gtest.h>

#include <filesystem>
#include <random>
#include <sstream>

#include "lens/data.hpp"
#include "lens/pipeline.hpp"
#include "lens/train.hpp"
#include "oracles.hpp"

using namespace lens;

namespace {

Vocabulary tiny_vocab() {
    return build_vocabulary(
        "red fox runs fast blue bird flies high green frog jumps far what is the query "
        "answer retrieve search find Given passages", 140, true);
}

EncoderConfig tiny_config(const Vocabulary& v, std::uint64_t seed, std::size_t layers = 1,
                          std::size_t d_model = 16) {
    EncoderConfig cfg;
    cfg.d_model = d_model;
    cfg.n_layers = layers;
    cfg.n_heads = 2;
    cfg.d_ff = 16;
    cfg.max_len = 32;
    cfg.vocab_size = v.size();
    cfg.attention_mode = AttentionMode::bidirectional;
    cfg.seed = seed;
    return cfg;
}

TrainingExample example(const std::string& q, const std::string& pos,
                        std::vector<std::string> negs, const std::string& tag = "retrieval") {
    TrainingExample e;
    e.task_definition = "retrieve passages";
    e.query = q;
    e.positive = pos;
    e.negatives = std::move(negs);
    e.dataset_tag = tag;
    return e;
}

ContrastiveBatch small_batch(bool in_batch = false) {
    return ContrastiveBatch::make(
        {example("red fox", "red fox runs fast", {"blue bird flies high"}),
         example("green frog", "green frog jumps far", {"red fox runs fast"})},
        in_batch);
}

}  // namespace

TEST(InfoNce, UniformSimilarities) {
    // sim_pos == all negatives: softmax is uniform over 1+N entries
    for (std::size_t n : {1u, 7u, 31u}) {
        const std::vector<double> negs(n, 0.42);
        EXPECT_NEAR(info_nce(0.42, negs, 0.02), std::log(1.0 + n), 1e-6);
    }
    EXPECT_NEAR(info_nce(0.3, std::vector<double>(7, 0.3), 1.0), 2.0794415, 1e-6);
}

TEST(InfoNce, ClosedForms) {
    EXPECT_NEAR(info_nce(1.0, std::vector<double>{0.0}, 1.0), std::log(1.0 + std::exp(-1.0)),
                1e-12);
    EXPECT_NEAR(info_nce(1.0, std::vector<double>{0.0}, 1.0), 0.3132617, 1e-6);
    // tau=0.02, margin 0.1: ln(1 + e^-5)
    EXPECT_NEAR(info_nce(0.6, std::vector<double>{0.5}, 0.02), std::log(1.0 + std::exp(-5.0)),
                1e-9);
    EXPECT_NEAR(info_nce(0.6, std::vector<double>{0.5}, 0.02), 0.0067153, 1e-7);
}

TEST(InfoNce, EmptyNegativesWarnsAndReturnsZero) {
    std::ostringstream warn;
    EXPECT_DOUBLE_EQ(info_nce(0.9, {}, 0.02, &warn), 0.0);
    EXPECT_NE(warn.str().find("warning"), std::string::npos);
    EXPECT_THROW(info_nce(0.5, {}, 0.0), UsageError);
}

TEST(InfoNce, BoundsAndMarginLimit) {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (int t = 0; t < 50; ++t) {
        std::vector<double> negs(1 + rng() % 8);
        for (auto& s : negs) s = u(rng);
        EXPECT_GE(info_nce(u(rng), negs, 0.05), 0.0);
    }
    // loss -> 0 as the margin grows at fixed tau
    EXPECT_LT(info_nce(1.0, std::vector<double>{-1.0}, 0.05), 1e-15);
}

TEST(InfoNce, PermutationInvariance) {
    std::mt19937_64 rng(6);
    std::vector<double> negs = {0.3, -0.2, 0.55, 0.1, -0.9, 0.42};
    const double base = info_nce(0.5, negs, 0.02);
    for (int t = 0; t < 10; ++t) {
        std::shuffle(negs.begin(), negs.end(), rng);
        EXPECT_NEAR(info_nce(0.5, negs, 0.02), base, 1e-12);
    }
}

TEST(BatchPurity, MixedTagsRejected) {
    EXPECT_THROW(ContrastiveBatch::make({example("a", "b", {}, "retrieval"),
                                         example("c", "d", {}, "sts")},
                                        false),
                 DataError);
    TrainingExample bad = example("a", "b", {"c"});
    bad.teacher_scores = std::vector<double>{1.0};  // wrong length
    EXPECT_THROW(ContrastiveBatch::make({bad}, false), DataError);
}

TEST(BatchLoss, SingleExampleNoNegativesIsZero) {
    const Vocabulary v = tiny_vocab();
    const EncoderModel m = init_model(tiny_config(v, 3));
    const ContrastiveBatch b = ContrastiveBatch::make({example("red fox", "red fox runs", {})},
                                                      false);
    const BatchLossResult r = batch_loss(m, v, b, LossConfig{});
    EXPECT_DOUBLE_EQ(r.loss, 0.0);
    EXPECT_EQ(r.empty_denominators, 1u);
}

TEST(BatchLoss, KlWeightZeroIsPureInfoNce) {
    const Vocabulary v = tiny_vocab();
    const EncoderModel m = init_model(tiny_config(v, 4));
    ContrastiveBatch b = small_batch();
    for (auto& e : b.examples) e.teacher_scores = std::vector<double>{3.0, -1.0};

    LossConfig cfg;
    cfg.kl_weight = 0.0;
    const BatchLossResult r = batch_loss(m, v, b, cfg);
    double infonce = 0.0;
    for (double li : r.per_example_infonce) infonce += li / b.examples.size();
    EXPECT_NEAR(r.loss, infonce, 1e-12);
}

TEST(BatchLoss, TeacherEqualToStudentGivesZeroKl) {
    const Vocabulary v = tiny_vocab();
    const EncoderModel m = init_model(tiny_config(v, 5));
    ContrastiveBatch b = small_batch();
    LossConfig cfg;

    // first pass to read off the student similarities
    const EmbedOptions opt;
    for (auto& e : b.examples) {
        const InstructedQuery iq = render_query(v, e.task_definition, e.query);
        const LexiconEmbedding q = embed_query(m, v, iq, opt);
        const LexiconEmbedding p = embed_passage(m, v, e.positive, opt);
        std::vector<double> scores{cosine_similarity(q.weights, p.weights) / cfg.temperature};
        for (const auto& n : e.negatives) {
            const LexiconEmbedding ne = embed_passage(m, v, n, opt);
            scores.push_back(cosine_similarity(q.weights, ne.weights) / cfg.temperature);
        }
        e.teacher_scores = scores;  // teacher temp 1.0 reproduces the student
    }
    const BatchLossResult r = batch_loss(m, v, b, cfg, opt);
    for (double kl : r.per_example_kl) EXPECT_NEAR(kl, 0.0, 1e-9);
}

TEST(TrainStep, ZeroLearningRateIsNoOp) {
    const Vocabulary v = tiny_vocab();
    EncoderModel m = init_model(tiny_config(v, 6));
    const EncoderModel before = m;
    OptimizerState state = OptimizerState::make(m);
    OptimizerConfig opt;
    opt.lr = 0.0;
    opt.weight_decay = 0.0;
    const StepMetrics metrics =
        train_step(m, v, small_batch(), LossConfig{}, EmbedOptions{}, opt, state);
    EXPECT_FALSE(metrics.aborted);
    EXPECT_EQ(m.input_embeddings.a, before.input_embeddings.a);
    EXPECT_EQ(m.head.matrix.a, before.head.matrix.a);
    EXPECT_EQ(m.layers[0].wq.a, before.layers[0].wq.a);
}

TEST(TrainStep, FrozenHeadStaysPut) {
    const Vocabulary v = tiny_vocab();
    EncoderModel m = init_model(tiny_config(v, 16));
    const Mat head_before = m.head.matrix;
    const Mat wq_before = m.layers[0].wq;
    OptimizerState state = OptimizerState::make(m);
    OptimizerConfig opt;
    opt.lr = 1e-2;
    train_step(m, v, small_batch(), LossConfig{}, EmbedOptions{}, opt, state,
               /*freeze_head=*/true);
    EXPECT_EQ(m.head.matrix.a, head_before.a);
    EXPECT_NE(m.layers[0].wq.a, wq_before.a);
}

TEST(TrainStep, RepeatedBatchUsuallyImproves) {
    // empirical smoke check: the second pass over an identical batch has
    // non-increasing loss in at least 90% of seeded trials at lr 1e-3
    const Vocabulary v = tiny_vocab();
    int improved = 0;
    for (int trial = 0; trial < 20; ++trial) {
        EncoderModel m = init_model(tiny_config(v, 1000 + trial));
        OptimizerState state = OptimizerState::make(m);
        OptimizerConfig opt;
        opt.lr = 1e-3;
        LossConfig loss;
        loss.temperature = 0.05;
        const ContrastiveBatch b = small_batch(true);
        const StepMetrics first = train_step(m, v, b, loss, EmbedOptions{}, opt, state);
        const StepMetrics second = train_step(m, v, b, loss, EmbedOptions{}, opt, state);
        ASSERT_FALSE(first.aborted);
        ASSERT_FALSE(second.aborted);
        if (second.loss <= first.loss + 1e-12) ++improved;
    }
    EXPECT_GE(improved, 18);
}

namespace {

struct ParamRef {
    std::size_t tensor = 0;
    std::size_t index = 0;
};

double loss_of(const EncoderModel& m, const Vocabulary& v, const ContrastiveBatch& b,
               const LossConfig& cfg, const EmbedOptions& opt,
               TrainObjective objective = TrainObjective::lexicon) {
    return batch_loss(m, v, b, cfg, opt, objective).loss;
}

}  // namespace

TEST(Gradients, MatchCentralFiniteDifferences) {
    const Vocabulary v = tiny_vocab();
    const LossConfig loss_cfg;  // tau = 0.02
    const EmbedOptions opt;     // max pooling
    const double h = 1e-5;

    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        EncoderModel m = init_model(tiny_config(v, 40 + seed, /*layers=*/1, /*d_model=*/16));
        ContrastiveBatch b = small_batch(true);
        b.examples[0].teacher_scores = std::vector<double>{2.0, 0.5};  // exercise the KL path

        ModelGrads grads = zero_grads(m);
        batch_loss_with_grads(m, v, b, loss_cfg, opt, grads);

        std::vector<Mat*> params;
        for_each_tensor(m, [&](Mat& t) { params.push_back(&t); });
        std::vector<const Mat*> gs;
        for_each_tensor(grads, [&](const Mat& t) { gs.push_back(&t); });

        std::mt19937_64 rng(777 + seed);
        for (int pick = 0; pick < 10; ++pick) {
            const std::size_t ti = rng() % params.size();
            const std::size_t j = rng() % params[ti]->a.size();
            double& theta = params[ti]->a[j];
            const double keep = theta;
            theta = keep + h;
            const double up = loss_of(m, v, b, loss_cfg, opt);
            theta = keep - h;
            const double down = loss_of(m, v, b, loss_cfg, opt);
            theta = keep;
            const double fd = (up - down) / (2.0 * h);
            const double an = gs[ti]->a[j];
            const double denom = std::max({std::abs(fd), std::abs(an), 1e-6});
            EXPECT_LE(std::abs(fd - an) / denom, 1e-3)
                << "seed " << seed << " tensor " << ti << " index " << j << " fd=" << fd
                << " analytic=" << an;
        }
    }
}

TEST(Gradients, DenseObjectiveMatchesFiniteDifferences) {
    const Vocabulary v = tiny_vocab();
    const LossConfig loss_cfg;
    const EmbedOptions opt;
    const double h = 1e-5;

    for (std::uint64_t seed = 0; seed < 2; ++seed) {
        EncoderModel m = init_model(tiny_config(v, 60 + seed, 1, 16));
        const ContrastiveBatch b = small_batch(true);
        ModelGrads grads = zero_grads(m);
        batch_loss_with_grads(m, v, b, loss_cfg, opt, grads, TrainObjective::dense);

        std::vector<Mat*> params;
        for_each_tensor(m, [&](Mat& t) { params.push_back(&t); });
        std::vector<const Mat*> gs;
        for_each_tensor(grads, [&](const Mat& t) { gs.push_back(&t); });

        std::mt19937_64 rng(31 + seed);
        for (int pick = 0; pick < 8; ++pick) {
            const std::size_t ti = rng() % params.size();
            const std::size_t j = rng() % params[ti]->a.size();
            double& theta = params[ti]->a[j];
            const double keep = theta;
            theta = keep + h;
            const double up = loss_of(m, v, b, loss_cfg, opt, TrainObjective::dense);
            theta = keep - h;
            const double down = loss_of(m, v, b, loss_cfg, opt, TrainObjective::dense);
            theta = keep;
            const double fd = (up - down) / (2.0 * h);
            const double an = gs[ti]->a[j];
            const double denom = std::max({std::abs(fd), std::abs(an), 1e-6});
            EXPECT_LE(std::abs(fd - an) / denom, 1e-3)
                << "seed " << seed << " tensor " << ti << " index " << j;
        }
    }
}

TEST(RunTraining, DenseObjectiveKeepsOriginalHead) {
    const Vocabulary v = tiny_vocab();
    TrainRunConfig cfg;
    cfg.encoder = tiny_config(v, 9);
    cfg.objective = TrainObjective::dense;
    cfg.k = 12;  // ignored for the dense objective
    cfg.seed = 9;
    cfg.batch_size_retrieval = 2;
    std::vector<TrainingExample> records;
    for (int i = 0; i < 4; ++i)
        records.push_back(example("red fox", "red fox runs fast", {"green frog jumps"}));
    const TrainOutcome out = run_training(cfg, records, v);
    EXPECT_FALSE(out.cluster.has_value());
    EXPECT_EQ(out.model.head.kind, HeadKind::original);
    EXPECT_FALSE(out.log.empty());
}

TEST(Gradients, MaxPoolRoutesToEarliestArgmax) {
    // deterministic subgradient: ties go to the earliest position
    Mat features(3, 2);
    features(0, 0) = 1.0;
    features(1, 0) = 1.0;  // tie with row 0
    features(2, 0) = 0.5;
    features(0, 1) = -1.0;
    features(1, 1) = 2.0;
    features(2, 1) = 2.0;  // tie with row 1
    std::vector<int> contributors;
    pool(features, 0, 3, Pooling::max, &contributors);
    EXPECT_EQ(contributors[0], 0);
    EXPECT_EQ(contributors[1], 1);
}

TEST(TrainStep, AbortsOnNonFiniteWithoutTouchingModel) {
    const Vocabulary v = tiny_vocab();
    EncoderModel m = init_model(tiny_config(v, 50));
    // poison a weight every forward pass touches so the loss blows up
    m.layers[0].wq(0, 0) = std::numeric_limits<double>::quiet_NaN();
    const EncoderModel before = m;
    OptimizerState state = OptimizerState::make(m);
    const StepMetrics metrics =
        train_step(m, v, small_batch(), LossConfig{}, EmbedOptions{}, OptimizerConfig{}, state);
    EXPECT_TRUE(metrics.aborted);
    // model untouched (compare tensors that do not carry the NaN itself)
    EXPECT_EQ(m.input_embeddings.a, before.input_embeddings.a);
    EXPECT_EQ(m.head.matrix.a, before.head.matrix.a);
    EXPECT_EQ(state.step, 0u);
}

TEST(RunTraining, ErrorsAndDeterminism) {
    namespace fs = std::filesystem;
    const Vocabulary v = tiny_vocab();

    TrainRunConfig cfg;
    cfg.encoder = tiny_config(v, 7);
    cfg.k = 12;
    cfg.seed = 7;
    cfg.batch_size_retrieval = 2;
    cfg.optimizer.lr = 1e-3;

    EXPECT_THROW(run_training(cfg, {}, v), DataError);

    std::vector<TrainingExample> records;
    for (int i = 0; i < 6; ++i) {
        records.push_back(example("red fox", "red fox runs fast", {"green frog jumps"}));
        records.push_back(example("blue bird", "blue bird flies high", {"red fox runs"}));
    }
    const TrainOutcome a = run_training(cfg, records, v);
    const TrainOutcome b = run_training(cfg, records, v);
    ASSERT_TRUE(a.cluster.has_value());
    EXPECT_EQ(a.cluster->assignment, b.cluster->assignment);

    const std::string p1 = fs::temp_directory_path() / "lens_run_a.ckpt";
    const std::string p2 = fs::temp_directory_path() / "lens_run_b.ckpt";
    save_checkpoint(a.model, p1);
    save_checkpoint(b.model, p2);
    std::ifstream f1(p1, std::ios::binary), f2(p2, std::ios::binary);
    const std::string bytes1((std::istreambuf_iterator<char>(f1)),
                             std::istreambuf_iterator<char>());
    const std::string bytes2((std::istreambuf_iterator<char>(f2)),
                             std::istreambuf_iterator<char>());
    EXPECT_EQ(bytes1, bytes2);
    EXPECT_FALSE(a.log.empty());
    fs::remove(p1);
    fs::remove(p2);
}

TEST(TrainingData, MalformedRecordPolicy) {
    namespace fs = std::filesystem;
    const std::string path = fs::temp_directory_path() / "lens_train_data.jsonl";
    {
        std::ofstream out(path);
        out << R"({"task":"t","query":"q1","pos":"p1","neg":["n1"],"dataset":"retrieval"})"
            << "\n";
        out << "this is not json\n";
        out << R"({"task":"t","query":"q2","pos":"p2","neg":[],"dataset":"retrieval"})" << "\n";
        for (int i = 0; i < 18; ++i)
            out << R"({"task":"t","query":"q","pos":"p","neg":[],"dataset":"sts"})" << "\n";
    }
    std::size_t skipped = 0;
    const auto records = load_training_data_checked(path, &skipped);
    EXPECT_EQ(skipped, 1u);
    EXPECT_EQ(records.size(), 20u);

    {
        std::ofstream out(path);
        out << R"({"task":"t","query":"q1","pos":"p1"})" << "\n";
        for (int i = 0; i < 5; ++i) out << "garbage line\n";
    }
    EXPECT_THROW(load_training_data_checked(path), DataError);
    fs::remove(path);
}

TEST(ConfigFile, ParseAndDefaults) {
    const KeyValueConfig kv = parse_config_text(
        "# comment\n"
        "d_model = 24\n"
        "attention=causal\n"
        "pooling=sum\n"
        "tau=0.05\n"
        "freeze_head=true\n"
        "\n");
    const TrainRunConfig cfg = train_config_from(kv);
    EXPECT_EQ(cfg.encoder.d_model, 24u);
    EXPECT_EQ(cfg.encoder.attention_mode, AttentionMode::causal);
    EXPECT_EQ(cfg.pooling, Pooling::sum);
    EXPECT_DOUBLE_EQ(cfg.loss.temperature, 0.05);
    EXPECT_TRUE(cfg.freeze_head);
    // defaults survive when keys are absent
    const TrainRunConfig dflt = train_config_from(parse_config_text(""));
    EXPECT_DOUBLE_EQ(dflt.loss.temperature, 0.02);
    EXPECT_EQ(dflt.batch_size_retrieval, 32u);
    EXPECT_EQ(dflt.batch_size_other, 16u);

    EXPECT_THROW(parse_config_text("novalue\n"), UsageError);
    EXPECT_THROW(train_config_from(parse_config_text("attention=sideways")), UsageError);
}
