#include <gtest/gtest.h>

#include "jam/error.hpp"
#include "jam/fusion.hpp"
#include "jam/model.hpp"
#include "jam/vocab.hpp"

namespace {

using namespace jam;

TransformerConfig config() {
    TransformerConfig c;
    c.n_layers = 4;
    c.d_model = 8;
    c.n_heads = 2;
    c.d_ff = 12;
    c.vocab_size = 9;
    c.max_seq_len = 8;
    c.init_std = 0.3;
    return c;
}

Model parent(std::uint64_t seed) { return Model{ModelSpec{Architecture::decoder, config(), {}}, init_decoder(config(), seed)}; }

TEST(Fusion, UniformIsElementwiseMean) {
    const Model a = parent(1), b = parent(2);
    const ParameterSet m = merge_uniform(a.params, b.params);
    for (const auto& [name, t] : m) {
        const Tensor& ta = a.params.at(name);
        const Tensor& tb = b.params.at(name);
        ASSERT_EQ(t.shape(), ta.shape());
        for (std::size_t i = 0; i < t.size(); ++i) EXPECT_EQ(t[i], 0.5 * ta[i] + 0.5 * tb[i]) << name;
    }
}

TEST(Fusion, UniformOfIdenticalParentsIsIdentity) {
    const Model a = parent(1);
    EXPECT_EQ(merge_uniform(a.params, a.params), a.params);
}

TEST(Fusion, MismatchNamesTheTensor) {
    const Model a = parent(1);
    ParameterSet b = parent(2).params;
    b.insert("layers.2.attn.wk", Tensor({8, 7}));
    try {
        merge_uniform(a.params, b);
        FAIL();
    } catch (const StructureError& e) {
        EXPECT_NE(std::string(e.what()).find("layers.2.attn.wk"), std::string::npos) << e.what();
    }
    TransformerConfig other = config();
    other.d_model = 4;
    EXPECT_THROW(widen_copy(a.params, init_decoder(other, 3)), StructureError);
}

void check_widened(const ParameterSet& a, const ParameterSet& b, const ParameterSet& w, bool average) {
    for (const auto& [name, t] : w) {
        const Tensor& ta = a.at(name);
        const Tensor& tb = b.at(name);
        const std::size_t r = ta.rows(), c = ta.cols();
        if (name == param_names::kTokenEmbedding || name == param_names::kPositionEmbedding) {
            ASSERT_EQ(t.shape(), (Tensor::Shape{r, 2 * c})) << name;
            for (std::size_t i = 0; i < r; ++i) {
                for (std::size_t j = 0; j < c; ++j) {
                    EXPECT_EQ(t(i, j), ta(i, j));
                    EXPECT_EQ(t(i, c + j), tb(i, j));
                }
            }
            continue;
        }
        ASSERT_EQ(t.shape(), (Tensor::Shape{2 * r, 2 * c})) << name;
        for (std::size_t i = 0; i < r; ++i) {
            for (std::size_t j = 0; j < c; ++j) {
                const double right_a = average ? 0.5 * (ta(i, j) + tb(i, j)) : ta(i, j);
                const double right_b = average ? 0.5 * (ta(i, j) + tb(i, j)) : tb(i, j);
                EXPECT_EQ(t(i, j), ta(i, j)) << name;
                EXPECT_EQ(t(i, c + j), right_a) << name;
                EXPECT_EQ(t(r + i, j), tb(i, j)) << name;
                EXPECT_EQ(t(r + i, c + j), right_b) << name;
            }
        }
    }
}

TEST(Fusion, WidenCopyBlocksAreExact) {
    const Model a = parent(1), b = parent(2);
    const ParameterSet w = widen_copy(a.params, b.params);
    EXPECT_EQ(w.size(), a.params.size());
    check_widened(a.params, b.params, w, false);
    validate_structure(ModelSpec{Architecture::decoder, widened_config(config()), {}}, w);
}

TEST(Fusion, WidenAverageBlocksAreExact) {
    const Model a = parent(1), b = parent(2);
    const ParameterSet w = widen_average(a.params, b.params);
    check_widened(a.params, b.params, w, true);
}

TEST(Fusion, WidenedConfigKeepsHeadWidth) {
    const TransformerConfig w = widened_config(config());
    EXPECT_EQ(w.d_model, 16u);
    EXPECT_EQ(w.d_ff, 24u);
    EXPECT_EQ(w.n_heads, 4u);
    EXPECT_EQ(w.head_dim(), config().head_dim());
    EXPECT_EQ(w.n_layers, config().n_layers);
}

TEST(Fusion, CrossCopiesParentsAndSeedsSharedRows) {
    const Model a = parent(1), b = parent(2);
    const Vocabulary vocab(3, 1, 1);  // 3 text + 1 image + 5 specials = 9
    const auto sources = vocab.embedding_sources();
    const Model m = build_cross(a, b, {2, false, 0.02}, sources, 5);
    validate_structure(m.spec, m.params);
    const Tensor& shared = m.params.at(param_names::kSharedTokenEmbedding);
    for (std::size_t id = 0; id < vocab.size(); ++id) {
        const Tensor& src = (sources[id] == Branch::llm ? a : b).params.at(param_names::kTokenEmbedding);
        for (std::size_t j = 0; j < config().d_model; ++j) EXPECT_EQ(shared(id, j), src(id, j));
    }
    for (const auto& [name, t] : a.params) {
        if (name == param_names::kTokenEmbedding) continue;
        EXPECT_EQ(m.params.at(param_names::branch(Branch::llm, name)), t) << name;
        EXPECT_EQ(m.params.at(param_names::branch(Branch::img, name)), b.params.at(name)) << name;
    }
    const Tensor& out = m.params.at(param_names::kOutputProjection);
    for (std::size_t i = 0; i < 8; ++i) {
        for (std::size_t j = 0; j < 16; ++j) EXPECT_EQ(out(i, j), (j == i || j == i + 8) ? 0.5 : 0.0);
    }
}

TEST(Fusion, CrossInsertionSchedule) {
    const CrossSpec every2{2, false, 0.02};
    EXPECT_EQ(every2.insertion_count(4), 2u);
    EXPECT_FALSE(every2.has_cross_at(0));
    EXPECT_TRUE(every2.has_cross_at(1));
    EXPECT_TRUE(every2.has_cross_at(3));
    EXPECT_EQ((CrossSpec{5, false, 0.02}).insertion_count(4), 0u);
    EXPECT_EQ((CrossSpec{1, false, 0.02}).insertion_count(4), 4u);
}

// Zero-initialised output projections make every freshly inserted cross
// block an identity map, so each stream reproduces its parent's hidden
// states exactly.
class ZeroInitCross : public ::testing::TestWithParam<std::tuple<std::size_t, bool>> {};

TEST_P(ZeroInitCross, PreservesParentHiddenStates) {
    const auto [every, ffn] = GetParam();
    const Model a = parent(1), b = parent(2);
    const std::vector<TokenId> tokens{0, 3, 5, 8, 1, 2};
    for (Branch side : {Branch::llm, Branch::img}) {
        const Model m = build_cross(a, b, {every, ffn, 0.5}, std::vector<Branch>(9, side), 7);
        HiddenTrace cross_trace, parent_trace;
        compute_logits(m, tokens, &cross_trace);
        compute_logits(side == Branch::llm ? a : b, tokens, &parent_trace);
        const auto& stream = side == Branch::llm ? cross_trace.llm : cross_trace.img;
        ASSERT_EQ(stream.size(), parent_trace.llm.size());
        for (std::size_t l = 0; l < stream.size(); ++l) {
            EXPECT_EQ(stream[l], parent_trace.llm[l]) << "layer " << l;
        }
    }
}

INSTANTIATE_TEST_SUITE_P(Schedules, ZeroInitCross,
                         ::testing::Combine(::testing::Values(1, 2, 4, 5), ::testing::Bool()));

TEST(Fusion, CrossWithNonzeroOutputChangesStreams) {
    const Model a = parent(1), b = parent(2);
    Model m = build_cross(a, b, {1, false, 0.5}, std::vector<Branch>(9, Branch::llm), 7);
    Tensor& wo = m.params.at(param_names::cross(0, Branch::llm, "wo"));
    wo = Tensor(wo.shape(), 0.1);
    HiddenTrace cross_trace, parent_trace;
    compute_logits(m, std::vector<TokenId>{0, 3, 5}, &cross_trace);
    compute_logits(a, std::vector<TokenId>{0, 3, 5}, &parent_trace);
    EXPECT_NE(cross_trace.llm[1], parent_trace.llm[1]);
}

TEST(Fusion, DispatchAndNames) {
    EXPECT_EQ(parse_fusion_kind("width"), FusionKind::width_copy);
    for (FusionKind k : {FusionKind::uniform, FusionKind::width_copy, FusionKind::width_average, FusionKind::cross}) {
        EXPECT_EQ(parse_fusion_kind(to_string(k)), k);
    }
    EXPECT_THROW(parse_fusion_kind("depth"), ConfigError);
    const Model a = parent(1), b = parent(2);
    FusionSpec fs;
    fs.kind = FusionKind::uniform;
    EXPECT_EQ(fuse(a, b, fs, {}).params, merge_uniform(a.params, b.params));
    fs.kind = FusionKind::width_average;
    const Model w = fuse(a, b, fs, {});
    EXPECT_EQ(w.spec.config, widened_config(config()));
    EXPECT_EQ(w.params, widen_average(a.params, b.params));
}

}  // namespace
