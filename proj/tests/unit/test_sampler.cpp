#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "jam/error.hpp"
#include "jam/rng.hpp"
#include "jam/sampler.hpp"
#include "jam/sequence.hpp"

namespace {

using namespace jam;

constexpr std::size_t kImageLen = 4;

TEST(Sampler, SoftmaxAndTemperature) {
    const std::vector<double> l{1.0, 2.0, -std::numeric_limits<double>::infinity()};
    const auto p = softmax(l);
    EXPECT_NEAR(p[0], 1.0 / (1.0 + std::exp(1.0)), 1e-15);
    EXPECT_EQ(p[2], 0.0);
    const auto big = softmax(std::vector<double>{1000.0, 1000.0});
    EXPECT_EQ(big[0], 0.5);
    EXPECT_EQ(apply_temperature(l, 2.0)[1], 1.0);
    EXPECT_THROW(apply_temperature(l, 0.0), DomainError);
}

TEST(Sampler, TopPWorkedExamples) {
    const std::vector<double> p{0.5, 0.3, 0.2};
    auto f = top_p_filter(p, 0.8);
    EXPECT_NEAR(f[0], 0.625, 1e-15);
    EXPECT_NEAR(f[1], 0.375, 1e-15);
    EXPECT_EQ(f[2], 0.0);
    f = top_p_filter(p, 0.81);
    EXPECT_NEAR(f[2], 0.2, 1e-15);
    f = top_p_filter(p, 0.5);
    EXPECT_EQ(f[0], 1.0);
    f = top_p_filter(std::vector<double>{0.25, 0.25, 0.25, 0.25}, 0.5);
    EXPECT_EQ(f, (std::vector<double>{0.5, 0.5, 0.0, 0.0}));
    f = top_p_filter(std::vector<double>{0.1, 0.6, 0.3}, 0.65);
    EXPECT_EQ(f[0], 0.0);
    EXPECT_NEAR(f[1], 2.0 / 3.0, 1e-15);
    EXPECT_THROW(top_p_filter(p, 0.0), DomainError);
}

// Oracle: the kept set is the minimal probability-ordered prefix whose
// mass reaches top_p.
TEST(Sampler, TopPMatchesOracle) {
    Rng rng(3);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t n = 2 + rng.uniform_int(20);
        std::vector<double> logits(n);
        for (auto& x : logits) x = 3.0 * rng.normal();
        const auto p = softmax(logits);
        const double top_p = 0.05 + 0.95 * rng.uniform();
        std::vector<std::size_t> order(n);
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return p[a] > p[b]; });
        double mass = 0;
        std::vector<bool> keep(n, false);
        for (std::size_t i : order) {
            keep[i] = true;
            mass += p[i];
            if (mass >= top_p - kTopPSlack) break;
        }
        const auto f = top_p_filter(p, top_p);
        double total = 0;
        for (std::size_t i = 0; i < n; ++i) {
            EXPECT_EQ(f[i] > 0, keep[i]) << trial;
            if (keep[i]) EXPECT_NEAR(f[i], p[i] / mass, 1e-12);
            total += f[i];
        }
        EXPECT_NEAR(total, 1.0, 1e-12);
    }
}

TEST(Sampler, CfgIdentities) {
    const std::vector<double> c{1.0, -2.0, 0.5}, u{0.0, 1.0, 4.0};
    EXPECT_EQ(cfg_mix(c, u, 1.0), c);
    EXPECT_EQ(cfg_mix(c, u, 0.0), u);
    EXPECT_EQ(cfg_mix(c, c, 3.5), c);
    const auto m = cfg_mix(c, u, 3.0);
    EXPECT_EQ(m[1], -2.0 * 1.0 + 3.0 * -2.0);
    EXPECT_THROW(cfg_mix(c, std::vector<double>{1.0}, 1.0), ShapeError);
}

TEST(Sampler, CategoricalFrequencies) {
    const std::vector<double> p{0.1, 0.0, 0.6, 0.3};
    Rng rng(5);
    std::vector<int> counts(4, 0);
    const int n = 20000;
    for (int i = 0; i < n; ++i) ++counts[sample_categorical(p, rng)];
    EXPECT_EQ(counts[1], 0);
    for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(counts[i] / double(n), p[i], 0.015);
}

struct Fake {
    Vocabulary vocab{4, 4, 1};
    std::size_t V = vocab.size();
    std::vector<double> peaked(TokenId id) const {
        std::vector<double> l(V, 0.0);
        l[id] = 50.0;
        return l;
    }
};

MixedSequence prompt_of(const Vocabulary& v, std::vector<TokenId> t) { return annotate(t, v, kImageLen); }

TEST(Generate, AlwaysEosStopsImmediately) {
    Fake f;
    const LogitsFn model = [&](std::span<const TokenId>) { return f.peaked(f.vocab.eos()); };
    const auto out = generate_interleaved(model, prompt_of(f.vocab, {0, 1}), f.vocab, kImageLen, 64, SamplerConfig{});
    EXPECT_EQ(out.tokens, (std::vector<TokenId>{0, 1, f.vocab.eos()}));
}

TEST(Generate, BreakLovingModelProducesWellFormedImages) {
    Fake f;
    // Wants <break> everywhere, and text id 2 when break is masked.
    const LogitsFn model = [&](std::span<const TokenId>) {
        auto l = f.peaked(f.vocab.break_id());
        l[f.vocab.text(2)] = 20.0;
        return l;
    };
    SamplerConfig cfg;
    cfg.max_images = 2;
    cfg.max_tokens = 100;
    const auto out = generate_interleaved(model, prompt_of(f.vocab, {0}), f.vocab, kImageLen, 100, cfg);
    EXPECT_NO_THROW(validate_sequence(out, f.vocab, kImageLen));
    const auto images = std::count_if(out.spans.begin(), out.spans.end(), [](const Span& s) { return s.kind == SpanKind::image; });
    EXPECT_EQ(images, 2);
    // Stops right after the second image.
    EXPECT_EQ(out.tokens.size(), 1 + 2 * (kImageLen + 2));
    EXPECT_EQ(out.tokens.back(), f.vocab.break_id());
}

TEST(Generate, BreakMaskedWhenBudgetTooSmall) {
    Fake f;
    const LogitsFn model = [&](std::span<const TokenId>) {
        auto l = f.peaked(f.vocab.break_id());
        l[f.vocab.text(2)] = 20.0;
        return l;
    };
    SamplerConfig cfg;
    cfg.max_tokens = kImageLen + 1;
    const auto out = generate_interleaved(model, prompt_of(f.vocab, {0}), f.vocab, kImageLen, 100, cfg);
    EXPECT_EQ(out.tokens.size(), 1 + kImageLen + 1);
    for (std::size_t i = 1; i < out.tokens.size(); ++i) EXPECT_EQ(out.tokens[i], f.vocab.text(2));
    // The model context bounds the budget too.
    cfg.max_tokens = 100;
    const auto ctx = generate_interleaved(model, prompt_of(f.vocab, {0}), f.vocab, kImageLen, kImageLen + 2, cfg);
    EXPECT_EQ(ctx.tokens.size(), kImageLen + 2);
    EXPECT_TRUE(std::all_of(ctx.tokens.begin() + 1, ctx.tokens.end(), [&](TokenId t) { return t == f.vocab.text(2); }));
}

TEST(Generate, RandomModelAlwaysGrammatical) {
    Fake f;
    for (std::uint64_t seed = 0; seed < 40; ++seed) {
        Rng table_rng(seed);
        std::vector<std::vector<double>> table(f.V, std::vector<double>(f.V));
        for (auto& row : table) {
            for (auto& x : row) x = 2.0 * table_rng.normal();
        }
        const LogitsFn model = [&](std::span<const TokenId> ctx) { return table[ctx.back()]; };
        SamplerConfig cfg;
        cfg.seed = seed;
        cfg.top_p = 1.0;
        cfg.max_tokens = 40;
        cfg.cfg_on_text = seed % 2 == 0;
        const auto out = generate_interleaved(model, prompt_of(f.vocab, {1}), f.vocab, kImageLen, 64, cfg);
        EXPECT_TRUE(is_valid_sequence(out.tokens, f.vocab, kImageLen)) << seed;
        EXPECT_LE(out.tokens.size(), 41u);
    }
}

// With alpha = 0 image tokens follow the unconditional stream alone, which
// is recognisable by its leading <query_mask>.
TEST(Generate, AlphaZeroSamplesUnconditionalDistribution) {
    Fake f;
    const std::vector<double> uncond_p{0.1, 0.2, 0.3, 0.4};
    const LogitsFn model = [&](std::span<const TokenId> ctx) {
        std::vector<double> l(f.V, -30.0);
        const bool in_image = ctx.back() == f.vocab.break_id() || f.vocab.is_image(ctx.back());
        if (!in_image) {
            l[f.vocab.break_id()] = 0.0;
            return l;
        }
        if (ctx.front() == f.vocab.query_mask()) {
            for (std::size_t i = 0; i < 4; ++i) l[f.vocab.image(i)] = std::log(uncond_p[i]);
        } else {
            l[f.vocab.image(0)] = 0.0;  // conditional stream: always code 0
        }
        return l;
    };
    std::vector<double> counts(4, 0.0);
    double total = 0;
    for (std::uint64_t seed = 0; seed < 300; ++seed) {
        SamplerConfig cfg;
        cfg.seed = seed;
        cfg.top_p = 1.0;
        cfg.cfg_alpha = 0.0;
        cfg.max_images = 1;
        const auto out = generate_interleaved(model, prompt_of(f.vocab, {0}), f.vocab, kImageLen, 64, cfg);
        for (TokenId t : out.tokens) {
            if (f.vocab.is_image(t)) {
                counts[f.vocab.image_index(t)] += 1;
                total += 1;
            }
        }
    }
    ASSERT_EQ(total, 1200.0);
    double chi2 = 0;
    for (std::size_t i = 0; i < 4; ++i) {
        const double e = uncond_p[i] * total;
        chi2 += (counts[i] - e) * (counts[i] - e) / e;
    }
    EXPECT_LT(chi2, 16.27);  // chi-square, 3 dof, p = 0.001
    // alpha = 1: the conditional stream only.
    SamplerConfig cfg;
    cfg.cfg_alpha = 1.0;
    cfg.max_images = 1;
    const auto out = generate_interleaved(model, prompt_of(f.vocab, {0}), f.vocab, kImageLen, 64, cfg);
    for (TokenId t : out.tokens) {
        if (f.vocab.is_image(t)) EXPECT_EQ(t, f.vocab.image(0));
    }
}

TEST(Generate, ReproducibleAndPromptChecks) {
    Fake f;
    Rng table_rng(1);
    std::vector<std::vector<double>> table(f.V, std::vector<double>(f.V));
    for (auto& row : table) {
        for (auto& x : row) x = table_rng.normal();
    }
    const LogitsFn model = [&](std::span<const TokenId> ctx) { return table[ctx.back()]; };
    SamplerConfig cfg;
    cfg.seed = 9;
    const auto prompt = prompt_of(f.vocab, {1, 2});
    EXPECT_EQ(generate_interleaved(model, prompt, f.vocab, kImageLen, 64, cfg),
              generate_interleaved(model, prompt, f.vocab, kImageLen, 64, cfg));
    const auto done = prompt_of(f.vocab, {1, f.vocab.eos()});
    EXPECT_EQ(generate_interleaved(model, done, f.vocab, kImageLen, 64, cfg), done);
    EXPECT_THROW(generate_interleaved(model, prompt, f.vocab, kImageLen, 1, cfg), DomainError);
    cfg.top_p = 0.0;
    EXPECT_THROW(cfg.validate(), ConfigError);
}

}  // namespace
