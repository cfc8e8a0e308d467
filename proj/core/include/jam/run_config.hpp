#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "jam/ablation.hpp"
#include "jam/corpus.hpp"
#include "jam/fusion.hpp"
#include "jam/retrieval.hpp"
#include "jam/sampler.hpp"
#include "jam/trainer.hpp"

namespace jam {

inline constexpr int kRunConfigSchemaVersion = 1;

struct DataSizes {
    std::size_t n_text = 2000;
    std::size_t n_caption = 2000;
    std::size_t n_instruct = 64;
    std::size_t n_validation = 64;
};

// Everything an experiment needs, as one JSON document:
//
//   {"schema_version": 1, "seed": 0,
//    "vocab": {...}, "world": {...}, "data": {...}, "model": {...},
//    "fusion": {...}, "train": {"parent": {...}, "align": {...},
//    "instruct": {...}}, "sampler": {...}, "retrieval": {...},
//    "ablation": {...}}
//
// Every section and key is optional; unknown keys and a missing or
// different schema_version are rejected.
struct RunConfig {
    std::uint64_t seed = 0;
    std::size_t vocab_text = 64;
    std::size_t vocab_image = 64;
    std::size_t vocab_masks = 3;
    WorldParams world;
    DataSizes data;
    TransformerConfig model;  // vocab_size derived from the vocabulary
    FusionSpec fusion;
    TrainConfig parent_train;
    TrainConfig align_train;
    TrainConfig instruct_train;
    SamplerConfig sampler;
    RetrievalConfig retrieval;
    std::vector<std::uint64_t> ablation_seeds{1, 2, 3};
    std::vector<std::size_t> ablation_cross_every{0, 1, 2, 4};
    double instruct_caption_mix = 0.5;
    std::size_t instruct_base_every = 2;

    RunConfig();
    Vocabulary vocab() const { return Vocabulary(vocab_text, vocab_image, vocab_masks); }
    // model with vocab_size filled in
    TransformerConfig model_config() const;
    AblationConfig ablation() const;
    void validate() const;
};

RunConfig parse_run_config(const std::string& json_text);
RunConfig load_run_config(const std::filesystem::path& path);
// Canonical JSON (every key present), accepted by parse_run_config.
std::string dump_run_config(const RunConfig& cfg);

}  // namespace jam
