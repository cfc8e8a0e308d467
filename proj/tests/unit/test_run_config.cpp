#include <gtest/gtest.h>

#include "jam/error.hpp"
#include "jam/run_config.hpp"

namespace {

using namespace jam;

TEST(RunConfig, DefaultsRoundTrip) {
    const RunConfig def;
    EXPECT_NO_THROW(def.validate());
    const std::string dumped = dump_run_config(def);
    EXPECT_EQ(dump_run_config(parse_run_config(dumped)), dumped);
}

TEST(RunConfig, MinimalDocumentGivesDefaults) {
    EXPECT_EQ(dump_run_config(parse_run_config(R"({"schema_version": 1})")), dump_run_config(RunConfig{}));
}

TEST(RunConfig, OverridesApply) {
    const RunConfig c = parse_run_config(
        R"({"schema_version": 1, "seed": 7, "model": {"n_layers": 3}, "train": {"align": {"lr": 0.5}},
            "fusion": {"kind": "width"}, "ablation": {"seeds": [4]}})");
    EXPECT_EQ(c.seed, 7u);
    EXPECT_EQ(c.model.n_layers, 3u);
    EXPECT_EQ(c.align_train.lr, 0.5);
    EXPECT_EQ(c.fusion.kind, FusionKind::width_copy);
    EXPECT_EQ(c.ablation_seeds, std::vector<std::uint64_t>{4});
    EXPECT_EQ(c.model_config().vocab_size, c.vocab().size());
}

TEST(RunConfig, RejectsUnknownKeysAndBadSchema) {
    EXPECT_THROW(parse_run_config(R"({"schema_version": 1, "sed": 7})"), ConfigError);
    EXPECT_THROW(parse_run_config(R"({"schema_version": 1, "model": {"layers": 3}})"), ConfigError);
    EXPECT_THROW(parse_run_config(R"({"seed": 7})"), ConfigError);
    EXPECT_THROW(parse_run_config(R"({"schema_version": 2})"), ConfigError);
    EXPECT_THROW(parse_run_config("{"), ConfigError);
    EXPECT_THROW(parse_run_config(R"({"schema_version": 1, "model": {"n_layers": "three"}})"), ConfigError);
}

TEST(RunConfig, RejectsInvalidValues) {
    EXPECT_THROW(parse_run_config(R"({"schema_version": 1, "model": {"n_heads": 5}})"), ConfigError);
    EXPECT_THROW(parse_run_config(R"({"schema_version": 1, "sampler": {"top_p": 1.5}})"), ConfigError);
    EXPECT_THROW(parse_run_config(R"({"schema_version": 1, "train": {"parent": {"lr": -1}}})"), ConfigError);
}

}  // namespace
