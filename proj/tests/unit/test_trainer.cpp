#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "jam/corpus.hpp"
#include "jam/error.hpp"
#include "jam/trainer.hpp"

namespace {

using namespace jam;

TEST(Trainer, LearningRateSchedule) {
    TrainConfig c;
    c.lr = 0.01;
    c.warmup_steps = 10;
    c.total_steps = 110;
    EXPECT_EQ(lr_at(0, c), 0.0);
    EXPECT_DOUBLE_EQ(lr_at(5, c), 0.005);
    EXPECT_EQ(lr_at(10, c), 0.01);
    EXPECT_EQ(lr_at(110, c), 0.01);
    c.schedule = LrSchedule::cosine;
    EXPECT_EQ(lr_at(10, c), 0.01);
    EXPECT_NEAR(lr_at(60, c), 0.005, 1e-15);
    EXPECT_NEAR(lr_at(110, c), 0.0, 1e-15);
    EXPECT_THROW(lr_at(111, c), DomainError);
    EXPECT_EQ(parse_lr_schedule(to_string(LrSchedule::cosine)), LrSchedule::cosine);
    EXPECT_EQ(parse_phase(to_string(Phase::instruct)), Phase::instruct);
    EXPECT_EQ(parse_span_filter(to_string(SpanFilter::image)), SpanFilter::image);
}

struct Toy : ::testing::Test {
    Vocabulary vocab;
    SyntheticWorld world{vocab, WorldParams{}};
    TransformerConfig config = [this] {
        TransformerConfig c;
        c.n_layers = 2;
        c.d_model = 16;
        c.n_heads = 2;
        c.d_ff = 32;
        c.vocab_size = vocab.size();
        c.max_seq_len = 64;
        return c;
    }();
    Model model{ModelSpec{Architecture::decoder, config, {}}, init_decoder(config, 1)};
    std::vector<MixedSequence> captions = synth_corpus(world, CorpusKind::caption_pairs, 40, 1);
    std::vector<MixedSequence> texts = synth_corpus(world, CorpusKind::text_only, 40, 1);

    Model zero_model() const {
        Model z = model;
        for (auto& [_, t] : z.params) t = Tensor(t.shape());
        return z;
    }
};

// Uniform logits: perplexity equals the size of the normalisation set.
TEST_F(Toy, UniformModelPerplexity) {
    const Model z = zero_model();
    std::vector<MixedSequence> mixed = captions;
    mixed.insert(mixed.end(), texts.begin(), texts.end());
    EXPECT_NEAR(evaluate_ppl(z, mixed, SpanFilter::all, vocab), vocab.size(), 1e-9);
    EXPECT_NEAR(evaluate_ppl(z, mixed, SpanFilter::text, vocab), vocab.n_text(), 1e-9);
    EXPECT_NEAR(evaluate_ppl(z, mixed, SpanFilter::image, vocab), vocab.n_image(), 1e-9);
    EXPECT_THROW(evaluate_ppl(z, texts, SpanFilter::image, vocab), DomainError);
}

// Independent two-pass oracle over the logits.
TEST_F(Toy, NllMatchesDirectComputation) {
    const auto data = std::vector<MixedSequence>(captions.begin(), captions.begin() + 3);
    for (SpanFilter filter : {SpanFilter::all, SpanFilter::text, SpanFilter::image}) {
        double nll = 0;
        std::size_t count = 0;
        for (const auto& s : data) {
            std::vector<TokenId> tokens = s.tokens;
            tokens.push_back(vocab.eos());
            const Tensor logits = compute_logits(model, std::span(tokens).first(tokens.size() - 1));
            for (std::size_t t = 0; t + 1 < tokens.size(); ++t) {
                const std::size_t j = t + 1;
                bool in_text = false, in_image = false;
                for (const auto& sp : s.spans) {
                    if (j >= sp.start && j < sp.end) (sp.kind == SpanKind::text ? in_text : in_image) = true;
                }
                std::size_t lo = 0, hi = vocab.size();
                if (filter == SpanFilter::text) {
                    if (!in_text) continue;
                    hi = vocab.n_text();
                } else if (filter == SpanFilter::image) {
                    if (!in_image) continue;
                    lo = vocab.image_begin();
                    hi = vocab.image_end();
                }
                double z = 0;
                for (std::size_t v = lo; v < hi; ++v) z += std::exp(logits(t, v));
                nll += std::log(z) - logits(t, tokens[j]);
                ++count;
            }
        }
        const PplBreakdown got = evaluate_nll(model, data, filter, vocab);
        EXPECT_EQ(got.count, count);
        EXPECT_NEAR(got.nll_sum, nll, 1e-9 * nll);
    }
}

TEST_F(Toy, FirstLossNearLogVocab) {
    TrainData data;
    data.datasets = {captions};
    TrainConfig cfg;
    BatchBuilder builder(data, cfg, vocab, config.max_seq_len);
    const double loss = batch_loss_and_grads(model, builder.next(), nullptr);
    EXPECT_NEAR(loss, std::log(static_cast<double>(vocab.size())), 0.1);
    EXPECT_NEAR(batch_loss_and_grads(zero_model(), builder.next(), nullptr), std::log(135.0), 1e-12);
}

TEST(Trainer, ShiftTargetsMasksPrefix) {
    Example ex{{10, 11, 12, 13, 14}, 3};
    const auto [in, tgt] = shift_targets(ex);
    EXPECT_EQ(in, (std::vector<TokenId>{10, 11, 12, 13}));
    // Targets 11 and 12 lie inside the prefix; 13 is the first real token.
    EXPECT_EQ(tgt, (std::vector<TokenId>{ad::kIgnoreTarget, ad::kIgnoreTarget, 13, 14}));
    EXPECT_THROW(shift_targets(Example{{1}, 0}), DomainError);
}

TEST_F(Toy, BatchBuilderProperties) {
    TrainData data;
    data.datasets = {texts, captions};
    TrainConfig cfg;
    cfg.mixture_weights = {0.5, 0.5};
    cfg.cm3.transform_probability = 0.0;
    cfg.uncond_prob = 0.0;
    BatchBuilder a(data, cfg, vocab, config.max_seq_len), b(data, cfg, vocab, config.max_seq_len);
    for (int i = 0; i < 5; ++i) {
        const auto x = a.next();
        const auto y = b.next();
        ASSERT_EQ(x.size(), y.size());
        std::size_t tokens = 0;
        for (std::size_t j = 0; j < x.size(); ++j) {
            EXPECT_EQ(x[j].tokens, y[j].tokens);
            EXPECT_LE(x[j].tokens.size(), config.max_seq_len + 1);
            EXPECT_EQ(x[j].tokens.back(), vocab.eos());
            tokens += x[j].tokens.size();
        }
        EXPECT_GE(tokens, cfg.batch_tokens);
    }
}

TEST_F(Toy, CaptionDropoutReplacesCaption) {
    TrainData data;
    data.datasets = {captions};
    TrainConfig cfg;
    cfg.cm3.transform_probability = 0.0;
    cfg.uncond_prob = 1.0;
    BatchBuilder builder(data, cfg, vocab, config.max_seq_len);
    for (const auto& ex : builder.next()) {
        EXPECT_EQ(ex.tokens[0], vocab.query_mask());
        EXPECT_EQ(ex.tokens[1], vocab.break_id());
    }
}

TEST(Trainer, AdamFirstStepsByHand) {
    TrainConfig cfg;
    cfg.grad_clip = 0.0;
    ParameterSet p, g;
    p.insert("w", Tensor({2}, std::vector<double>{1.0, -1.0}));
    g.insert("w", Tensor({2}, std::vector<double>{0.5, -2.0}));
    Adam adam(cfg);
    adam.step(p, g, 0.1);
    // First bias-corrected step is lr * g / (|g| + eps).
    EXPECT_NEAR(p.at("w")[0], 1.0 - 0.1 * 0.5 / (0.5 + 1e-8), 1e-15);
    EXPECT_NEAR(p.at("w")[1], -1.0 + 0.1 * 2.0 / (2.0 + 1e-8), 1e-15);
    // Second step with a different gradient.
    g.at("w") = Tensor({2}, std::vector<double>{1.0, 0.0});
    adam.step(p, g, 0.1);
    const double m = (0.9 * 0.05 + 0.1 * 1.0) / (1 - 0.81);
    const double v = (0.95 * 0.05 * 0.25 + 0.05 * 1.0) / (1 - 0.95 * 0.95);
    EXPECT_NEAR(p.at("w")[0], 1.0 - 0.1 * 0.5 / (0.5 + 1e-8) - 0.1 * m / (std::sqrt(v) + 1e-8), 1e-14);
}

TEST(Trainer, GradientClipping) {
    TrainConfig cfg;
    cfg.grad_clip = 1.0;
    ParameterSet p, g;
    p.insert("w", Tensor({2}));
    g.insert("w", Tensor({2}, std::vector<double>{3.0, 4.0}));
    EXPECT_EQ(global_norm(g), 5.0);
    Adam(cfg).step(p, g, 0.1);
    EXPECT_NEAR(g.at("w")[0], 0.6, 1e-15);
    EXPECT_NEAR(g.at("w")[1], 0.8, 1e-15);
}

TEST(Trainer, SelectsLowestAveragePerplexityEarliest) {
    std::vector<CheckpointRecord> r(4);
    r[0].metrics = {10, 10};
    r[1].metrics = {4, 6};
    r[2].metrics = {6, 4};
    r[3].metrics = {5, 6};
    EXPECT_EQ(select_alignment_record(r), 1u);
    EXPECT_THROW(select_alignment_record({}), DomainError);
}

TEST_F(Toy, TrainingIsDeterministicAndLearns) {
    TrainData data;
    data.datasets = {captions};
    data.validation = std::vector<MixedSequence>(captions.begin(), captions.begin() + 8);
    data.validation.insert(data.validation.end(), texts.begin(), texts.begin() + 8);
    TrainConfig cfg;
    cfg.total_steps = 30;
    cfg.warmup_steps = 5;
    cfg.eval_interval = 10;
    cfg.lr = 1e-2;
    const TrainResult a = train(model, data, cfg, vocab, {});
    const TrainResult b = train(model, data, cfg, vocab, {});
    EXPECT_EQ(a.model.params, b.model.params);
    EXPECT_EQ(a.losses, b.losses);
    ASSERT_EQ(a.records.size(), 4u);
    EXPECT_EQ(a.records[0].params, model.params);
    EXPECT_EQ(a.records[3].params, a.model.params);
    EXPECT_LT(a.records[3].metrics.ppl_image, a.records[0].metrics.ppl_image);
    EXPECT_LT(a.losses.back(), a.losses.front());
    std::ostringstream x, y;
    write_metrics_csv(x, a.metrics);
    write_metrics_csv(y, b.metrics);
    EXPECT_EQ(x.str(), y.str());
    EXPECT_EQ(x.str().substr(0, x.str().find('\n')), "step,lr,train_loss,val_ppl_text,val_ppl_image,val_ppl_avg");
}

TEST_F(Toy, EpochModeRecordsEachEpoch) {
    TrainData data;
    data.datasets = {std::vector<MixedSequence>(captions.begin(), captions.begin() + 20)};
    data.validation = std::vector<MixedSequence>(captions.begin(), captions.begin() + 4);
    data.validation.insert(data.validation.end(), texts.begin(), texts.begin() + 4);
    TrainConfig cfg;
    cfg.phase = Phase::instruct;
    cfg.epochs = 3;
    cfg.warmup_steps = 0;
    const BatchBuilder builder(data, cfg, vocab, config.max_seq_len);
    const TrainResult r = train(model, data, cfg, vocab, {});
    ASSERT_EQ(r.records.size(), 4u);
    for (std::size_t e = 0; e < 4; ++e) {
        EXPECT_EQ(r.records[e].epoch, e);
        EXPECT_EQ(r.records[e].step, e * builder.steps_per_epoch());
    }
}

TEST(Trainer, FormatDoubleRoundTrips) {
    for (double v : {0.1, 1.0 / 3.0, 1e-300, 123456789.0}) EXPECT_EQ(std::stod(format_double(v)), v);
}

}  // namespace
