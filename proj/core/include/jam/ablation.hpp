#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "jam/corpus.hpp"
#include "jam/fusion.hpp"
#include "jam/trainer.hpp"

namespace jam {

struct AblationConfig {
    std::vector<std::uint64_t> seeds{1, 2, 3};
    TransformerConfig parent;  // vocab_size is taken from the vocabulary
    WorldParams world;
    std::size_t n_text = 2000;
    std::size_t n_caption = 2000;
    std::size_t n_instruct = 64;
    std::size_t n_validation = 64;  // per corpus kind

    TrainConfig parent_train;
    TrainConfig align_train;  // mixture weights: text_only, caption_pairs
    TrainConfig instruct_train;
    // Share of caption_pairs in the "with caption mixing" instruct run.
    double instruct_caption_mix = 0.5;

    // Cross insertion frequencies; 0 stands for "no cross blocks".
    std::vector<std::size_t> cross_every{0, 1, 2, 4};
    bool cross_ffn = false;
    double cross_init_std = 0.02;
    // The cross variant instruct tuning starts from.
    std::size_t instruct_base_every = 2;

    void validate() const;
};

struct AblationRow {
    std::uint64_t seed = 0;
    std::string group;    // parent | fusion | cross | instruct
    std::string variant;  // e.g. width_copy, cross_every_2, caption_mix
    std::uint64_t params = 0;
    double ppl_joint = 0.0;    // every target, full vocabulary, mixed validation
    double ppl_text = 0.0;     // text spans
    double ppl_image = 0.0;    // image spans
    double ppl_caption = 0.0;  // image spans of caption_pairs validation
};

struct AblationReport {
    std::vector<AblationRow> rows;

    const AblationRow& find(std::uint64_t seed, const std::string& variant) const;
    // Seeds where variant `a` has strictly lower `metric` than `b`.
    std::size_t wins(const std::string& a, const std::string& b, double AblationRow::*metric) const;
    std::size_t n_seeds() const;
};

using AblationProgress = std::function<void(const std::string&)>;

AblationReport run_ablation_suite(const AblationConfig& cfg, const Vocabulary& vocab,
                                  const AblationProgress& progress = {});

std::string cross_variant_name(std::size_t every);

void write_ablation_csv(std::ostream& out, const AblationReport& report);
// Human-readable tables: fusion, cross and instruct groups, one column per
// seed, plus the directional verdicts.
std::string format_ablation_report(const AblationReport& report);

}  // namespace jam
