#pragma once

#include <cstdint>
#include <span>
#include <string>

#include "jam/model.hpp"

namespace jam {

enum class FusionKind { uniform, width_copy, width_average, cross };

struct FusionSpec {
    FusionKind kind = FusionKind::uniform;
    // Cross only: a cross block after every insertion_every-th layer.
    std::size_t insertion_every = 2;
    bool cross_ffn = false;
    double cross_init_std = 0.02;
    std::uint64_t seed = 0;

    void validate() const;
    bool operator==(const FusionSpec&) const = default;
};

const char* to_string(FusionKind kind);
// Accepts the canonical names plus "width" as an alias of width_copy.
FusionKind parse_fusion_kind(const std::string& name);

// Elementwise mean 0.5 * a + 0.5 * b of two structurally identical sets.
ParameterSet merge_uniform(const ParameterSet& a, const ParameterSet& b);

// Doubles the hidden width. Every weight matrix W (out x in) becomes the
// 2x2 block matrix [[W_a, W_a], [W_b, W_b]]; token and positional
// embeddings are concatenated along the hidden axis as [E_a | E_b].
ParameterSet widen_copy(const ParameterSet& a, const ParameterSet& b);

// As widen_copy, with the right-hand column blocks set to 0.5 * (W_a + W_b):
// [[W_a, W_avg], [W_b, W_avg]].
ParameterSet widen_average(const ParameterSet& a, const ParameterSet& b);

// d_model, d_ff and n_heads doubled; per-head width is preserved.
TransformerConfig widened_config(const TransformerConfig& config);

// Two-tower model around unchanged copies of the parents. `row_source[id]`
// names the parent whose embedding row seeds the shared table.
Model build_cross(const Model& llm, const Model& img, const CrossSpec& cross, std::span<const Branch> row_source,
                  std::uint64_t seed);

// Dispatches on spec.kind. `row_source` is used by the cross constructor only.
Model fuse(const Model& llm, const Model& img, const FusionSpec& spec, std::span<const Branch> row_source);

}  // namespace jam
