#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "jam/autodiff.hpp"
#include "jam/tensor.hpp"

namespace jam {

using TokenId = std::int32_t;

enum class NormPlacement { pre, post };

// Architecture hyperparameters of one decoder-only tower.
//
// Layer norms never carry parameters and no projection has a bias; the two
// flags exist so that a config claiming otherwise is rejected loudly.
struct TransformerConfig {
    std::size_t n_layers = 2;
    std::size_t d_model = 32;
    std::size_t n_heads = 4;
    std::size_t d_ff = 64;
    std::size_t vocab_size = 0;
    std::size_t max_seq_len = 128;
    bool no_bias = true;
    bool affine_norm = false;
    NormPlacement norm = NormPlacement::pre;
    double init_std = 0.02;

    void validate() const;
    std::size_t head_dim() const { return d_model / n_heads; }
    bool operator==(const TransformerConfig&) const = default;
};

// Named weight tensors, ordered by name so iteration (and serialization) is
// deterministic.
class ParameterSet {
public:
    using Map = std::map<std::string, Tensor, std::less<>>;

    void insert(std::string name, Tensor tensor);
    const Tensor& at(std::string_view name) const;
    Tensor& at(std::string_view name);
    bool contains(std::string_view name) const { return tensors_.find(name) != tensors_.end(); }

    std::size_t size() const { return tensors_.size(); }
    bool empty() const { return tensors_.empty(); }
    std::size_t element_count() const;
    std::vector<std::string> names() const;

    Map::const_iterator begin() const { return tensors_.begin(); }
    Map::const_iterator end() const { return tensors_.end(); }
    Map::iterator begin() { return tensors_.begin(); }
    Map::iterator end() { return tensors_.end(); }

    // Name of the first tensor (in name order) whose presence or shape
    // differs between the two sets, if any.
    std::optional<std::string> first_structural_difference(const ParameterSet& other) const;
    // Throws StructureError naming the first difference.
    void require_same_structure(const ParameterSet& other, std::string_view context) const;

    bool operator==(const ParameterSet& other) const = default;

private:
    Map tensors_;
};

enum class Architecture { decoder, jam_cross };

// Cross-attention wiring for a two-tower model.
struct CrossSpec {
    // A cross block follows every layer l (1-based) with l % insertion_every == 0.
    // Any value above n_layers disables cross-attention entirely.
    std::size_t insertion_every = 2;
    // Adds a zero-initialised feed-forward sublayer after each cross-attention.
    bool cross_ffn = false;
    double init_std = 0.02;

    bool has_cross_at(std::size_t layer_index) const {  // 0-based
        return insertion_every >= 1 && (layer_index + 1) % insertion_every == 0;
    }
    std::size_t insertion_count(std::size_t n_layers) const {
        return insertion_every == 0 ? 0 : n_layers / insertion_every;
    }
    bool operator==(const CrossSpec&) const = default;
};

// What a ParameterSet encodes. For jam_cross, `config` is the per-branch
// configuration (both branches are identical in shape).
struct ModelSpec {
    Architecture arch = Architecture::decoder;
    TransformerConfig config;
    CrossSpec cross;

    void validate() const;
    bool operator==(const ModelSpec&) const = default;
};

struct Model {
    ModelSpec spec;
    ParameterSet params;
};

enum class Branch { llm, img };

namespace param_names {

inline constexpr std::string_view kTokenEmbedding = "tok_emb";
inline constexpr std::string_view kPositionEmbedding = "pos_emb";
inline constexpr std::string_view kSharedTokenEmbedding = "shared.tok_emb";
inline constexpr std::string_view kOutputProjection = "out_proj";

// "layers.<i>.<leaf>", e.g. layers.0.attn.wq
std::string layer(std::size_t index, std::string_view leaf);
// "<branch>.<name>" for a name inside one tower of a cross model.
std::string branch(Branch b, std::string_view name);
// "cross.<i>.to_llm.<leaf>" (queries from the LLM stream) or "cross.<i>.to_img.<leaf>".
std::string cross(std::size_t layer_index, Branch query_side, std::string_view leaf);

// Per-layer leaves of a decoder block, in declaration order.
inline constexpr std::string_view kAttentionLeaves[] = {"attn.wq", "attn.wk", "attn.wv", "attn.wo"};
inline constexpr std::string_view kFeedForwardLeaves[] = {"ffn.w1", "ffn.w2"};
inline constexpr std::string_view kCrossLeaves[] = {"wq", "wk", "wv", "wo"};
inline constexpr std::string_view kCrossFeedForwardLeaves[] = {"ffn.w1", "ffn.w2"};

}  // namespace param_names

// Expected tensor shapes for every parameter of a model. Weight matrices are
// stored (out x in): a projection maps x to x * W^T.
std::map<std::string, Tensor::Shape> expected_shapes(const ModelSpec& spec);

// Throws StructureError unless params has exactly the expected names/shapes.
void validate_structure(const ModelSpec& spec, const ParameterSet& params);

// True when no tensor is a bias vector or norm gain and every name belongs
// to the architecture.
bool audit_parameters(const ModelSpec& spec, const ParameterSet& params, std::string* problem = nullptr);

// Normal(0, init_std) initialisation of a decoder.
ParameterSet init_decoder(const TransformerConfig& config, std::uint64_t seed);

// Decoder-shaped view of one tower of a cross model: the shared embedding
// becomes tok_emb, the branch prefix is stripped.
ParameterSet branch_parameters(const ModelSpec& spec, const ParameterSet& params, Branch branch);

// Closed-form parameter counts.
std::uint64_t param_count(const TransformerConfig& config);
std::uint64_t param_count(const ModelSpec& spec);
// Sum of element counts, the enumeration the closed forms must agree with.
std::uint64_t enumerate_param_count(const ParameterSet& params);

using BoundParams = std::unordered_map<std::string, ad::Var>;

// Registers every tensor as a leaf of `graph`.
BoundParams bind(ad::Graph& graph, const ParameterSet& params, bool trainable);

// Per-layer hidden states captured during forward(). Index 0 holds the
// embedding output, index l the output of layer l (after any cross block);
// `final_*` are the normalised streams fed to the output projection.
struct HiddenTrace {
    std::vector<Tensor> llm;
    std::vector<Tensor> img;
    Tensor final_llm;
    Tensor final_img;
};

// Throws DomainError for an empty sequence, an id outside the vocabulary, or
// a sequence longer than max_seq_len.
void validate_tokens(const TransformerConfig& config, std::span<const TokenId> tokens);

// Logits (T x V) for a token sequence. Causal: row t depends only on
// tokens[0..t]. For decoders only trace->llm is filled.
ad::Var forward(const ModelSpec& spec, const BoundParams& params, std::span<const TokenId> tokens,
                HiddenTrace* trace = nullptr);

// Inference convenience: builds a non-recording graph and returns logits.
Tensor compute_logits(const Model& model, std::span<const TokenId> tokens, HiddenTrace* trace = nullptr);

// Rounds every parameter through single precision (32-bit inference storage).
ParameterSet to_f32_storage(const ParameterSet& params);

const char* to_string(Architecture arch);
const char* to_string(NormPlacement norm);

}  // namespace jam
