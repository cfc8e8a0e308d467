#include "jam/model.hpp"

#include <cmath>
#include <string>

#include "jam/error.hpp"
#include "jam/rng.hpp"

namespace jam {

void TransformerConfig::validate() const {
    if (n_layers == 0) throw ConfigError("model: n_layers must be >= 1");
    if (d_model == 0 || n_heads == 0) throw ConfigError("model: d_model and n_heads must be >= 1");
    if (d_model % n_heads != 0) {
        throw ConfigError("model: d_model " + std::to_string(d_model) + " not divisible by n_heads " +
                          std::to_string(n_heads));
    }
    if (d_ff == 0) throw ConfigError("model: d_ff must be >= 1");
    if (vocab_size == 0) throw ConfigError("model: vocab_size must be >= 1");
    if (max_seq_len == 0) throw ConfigError("model: max_seq_len must be >= 1");
    if (!no_bias) throw ConfigError("model: bias terms are not supported");
    if (affine_norm) throw ConfigError("model: affine layer norms are not supported");
    if (!(init_std >= 0.0) || !std::isfinite(init_std)) throw ConfigError("model: init_std must be finite and >= 0");
}

void ModelSpec::validate() const {
    config.validate();
    if (arch == Architecture::jam_cross && cross.insertion_every < 1) {
        throw ConfigError("model: insertion_every must be >= 1 for a cross model");
    }
}

void ParameterSet::insert(std::string name, Tensor tensor) { tensors_.insert_or_assign(std::move(name), std::move(tensor)); }

const Tensor& ParameterSet::at(std::string_view name) const {
    auto it = tensors_.find(name);
    if (it == tensors_.end()) throw StructureError("missing parameter '" + std::string(name) + "'");
    return it->second;
}

Tensor& ParameterSet::at(std::string_view name) {
    auto it = tensors_.find(name);
    if (it == tensors_.end()) throw StructureError("missing parameter '" + std::string(name) + "'");
    return it->second;
}

std::size_t ParameterSet::element_count() const {
    std::size_t n = 0;
    for (const auto& [_, t] : tensors_) n += t.size();
    return n;
}

std::vector<std::string> ParameterSet::names() const {
    std::vector<std::string> out;
    out.reserve(tensors_.size());
    for (const auto& [name, _] : tensors_) out.push_back(name);
    return out;
}

std::optional<std::string> ParameterSet::first_structural_difference(const ParameterSet& other) const {
    auto a = tensors_.begin();
    auto b = other.tensors_.begin();
    while (a != tensors_.end() || b != other.tensors_.end()) {
        if (a == tensors_.end()) return b->first;
        if (b == other.tensors_.end()) return a->first;
        if (a->first != b->first) return std::min(a->first, b->first);
        if (a->second.shape() != b->second.shape()) return a->first;
        ++a;
        ++b;
    }
    return std::nullopt;
}

void ParameterSet::require_same_structure(const ParameterSet& other, std::string_view context) const {
    if (auto diff = first_structural_difference(other)) {
        std::string detail = "'" + *diff + "'";
        if (contains(*diff) && other.contains(*diff)) {
            detail += " has shape " + shape_string(at(*diff).shape()) + " vs " + shape_string(other.at(*diff).shape());
        } else {
            detail += contains(*diff) ? " missing from second operand" : " missing from first operand";
        }
        throw StructureError(std::string(context) + ": parameter sets differ at " + detail);
    }
}

namespace param_names {

std::string layer(std::size_t index, std::string_view leaf) {
    return "layers." + std::to_string(index) + "." + std::string(leaf);
}

std::string branch(Branch b, std::string_view name) {
    return std::string(b == Branch::llm ? "llm." : "img.") + std::string(name);
}

std::string cross(std::size_t layer_index, Branch query_side, std::string_view leaf) {
    return "cross." + std::to_string(layer_index) + (query_side == Branch::llm ? ".to_llm." : ".to_img.") +
           std::string(leaf);
}

}  // namespace param_names

namespace {

using ShapeMap = std::map<std::string, Tensor::Shape>;

void add_tower_shapes(ShapeMap& shapes, const TransformerConfig& c, const std::string& prefix) {
    shapes[prefix + std::string(param_names::kPositionEmbedding)] = {c.max_seq_len, c.d_model};
    for (std::size_t l = 0; l < c.n_layers; ++l) {
        for (auto leaf : param_names::kAttentionLeaves) shapes[prefix + param_names::layer(l, leaf)] = {c.d_model, c.d_model};
        shapes[prefix + param_names::layer(l, "ffn.w1")] = {c.d_ff, c.d_model};
        shapes[prefix + param_names::layer(l, "ffn.w2")] = {c.d_model, c.d_ff};
    }
}

}  // namespace

std::map<std::string, Tensor::Shape> expected_shapes(const ModelSpec& spec) {
    const TransformerConfig& c = spec.config;
    ShapeMap shapes;
    if (spec.arch == Architecture::decoder) {
        shapes[std::string(param_names::kTokenEmbedding)] = {c.vocab_size, c.d_model};
        add_tower_shapes(shapes, c, "");
        return shapes;
    }
    shapes[std::string(param_names::kSharedTokenEmbedding)] = {c.vocab_size, c.d_model};
    add_tower_shapes(shapes, c, "llm.");
    add_tower_shapes(shapes, c, "img.");
    for (std::size_t l = 0; l < c.n_layers; ++l) {
        if (!spec.cross.has_cross_at(l)) continue;
        for (Branch side : {Branch::llm, Branch::img}) {
            for (auto leaf : param_names::kCrossLeaves) shapes[param_names::cross(l, side, leaf)] = {c.d_model, c.d_model};
            if (spec.cross.cross_ffn) {
                shapes[param_names::cross(l, side, "ffn.w1")] = {c.d_ff, c.d_model};
                shapes[param_names::cross(l, side, "ffn.w2")] = {c.d_model, c.d_ff};
            }
        }
    }
    shapes[std::string(param_names::kOutputProjection)] = {c.d_model, 2 * c.d_model};
    return shapes;
}

void validate_structure(const ModelSpec& spec, const ParameterSet& params) {
    const auto shapes = expected_shapes(spec);
    for (const auto& [name, shape] : shapes) {
        if (!params.contains(name)) throw StructureError("missing parameter '" + name + "'");
        if (params.at(name).shape() != shape) {
            throw StructureError("parameter '" + name + "' has shape " + shape_string(params.at(name).shape()) +
                                 ", expected " + shape_string(shape));
        }
    }
    for (const auto& [name, _] : params) {
        if (!shapes.contains(name)) throw StructureError("unexpected parameter '" + name + "'");
    }
}

bool audit_parameters(const ModelSpec& spec, const ParameterSet& params, std::string* problem) {
    auto fail = [&](std::string why) {
        if (problem) *problem = std::move(why);
        return false;
    };
    for (const auto& [name, t] : params) {
        if (t.rank() != 2) return fail("'" + name + "' is not a matrix (bias or norm parameter?)");
        for (std::string_view banned : {"bias", "gain", "norm", "ln"}) {
            if (name.find(banned) != std::string::npos) return fail("'" + name + "' looks like a bias/norm parameter");
        }
    }
    try {
        validate_structure(spec, params);
    } catch (const StructureError& e) {
        return fail(e.what());
    }
    return true;
}

ParameterSet init_decoder(const TransformerConfig& config, std::uint64_t seed) {
    config.validate();
    Rng rng(seed);
    ParameterSet params;
    ModelSpec spec{Architecture::decoder, config, {}};
    for (const auto& [name, shape] : expected_shapes(spec)) params.insert(name, Tensor::randn(shape, config.init_std, rng));
    return params;
}

ParameterSet branch_parameters(const ModelSpec& spec, const ParameterSet& params, Branch branch) {
    if (spec.arch != Architecture::jam_cross) throw Error("branch_parameters: model is not a cross model");
    ParameterSet out;
    out.insert(std::string(param_names::kTokenEmbedding), params.at(param_names::kSharedTokenEmbedding));
    const std::string prefix = branch == Branch::llm ? "llm." : "img.";
    for (const auto& [name, t] : params) {
        if (name.starts_with(prefix)) out.insert(name.substr(prefix.size()), t);
    }
    return out;
}

std::uint64_t param_count(const TransformerConfig& c) {
    const std::uint64_t d = c.d_model;
    const std::uint64_t per_layer = 4 * d * d + 2 * d * c.d_ff;
    return c.vocab_size * d + c.max_seq_len * d + c.n_layers * per_layer;
}

std::uint64_t param_count(const ModelSpec& spec) {
    const TransformerConfig& c = spec.config;
    if (spec.arch == Architecture::decoder) return param_count(c);
    const std::uint64_t d = c.d_model;
    const std::uint64_t embedding = c.vocab_size * d;
    const std::uint64_t per_block = 4 * d * d + (spec.cross.cross_ffn ? 2 * d * c.d_ff : 0);
    const std::uint64_t cross = 2 * spec.cross.insertion_count(c.n_layers) * per_block;
    const std::uint64_t concat = 2 * d * d;
    // Both towers are counted in full, then the duplicated embedding is removed.
    return 2 * param_count(c) + cross + concat - embedding;
}

std::uint64_t enumerate_param_count(const ParameterSet& params) {
    std::uint64_t n = 0;
    for (const auto& [_, t] : params) n += t.size();
    return n;
}

BoundParams bind(ad::Graph& graph, const ParameterSet& params, bool trainable) {
    BoundParams bound;
    bound.reserve(params.size());
    for (const auto& [name, t] : params) bound.emplace(name, graph.leaf(t, trainable));
    return bound;
}

void validate_tokens(const TransformerConfig& config, std::span<const TokenId> tokens) {
    if (tokens.empty()) throw DomainError("forward: empty token sequence");
    if (tokens.size() > config.max_seq_len) {
        throw DomainError("forward: sequence length " + std::to_string(tokens.size()) + " exceeds max_seq_len " +
                          std::to_string(config.max_seq_len));
    }
    for (TokenId t : tokens) {
        if (t < 0 || static_cast<std::size_t>(t) >= config.vocab_size) {
            throw DomainError("forward: token id " + std::to_string(t) + " outside vocabulary of " +
                              std::to_string(config.vocab_size));
        }
    }
}

namespace {

constexpr double kNormEps = 1e-5;

const ad::Var& lookup(const BoundParams& params, const std::string& name) {
    auto it = params.find(name);
    if (it == params.end()) throw StructureError("forward: missing parameter '" + name + "'");
    return it->second;
}

ad::Var self_attention(const BoundParams& p, const std::string& prefix, std::size_t layer, ad::Var x,
                       std::size_t n_heads) {
    using namespace ad;
    auto w = [&](std::string_view leaf) { return lookup(p, prefix + param_names::layer(layer, leaf)); };
    Var q = matmul_nt(x, w("attn.wq"));
    Var k = matmul_nt(x, w("attn.wk"));
    Var v = matmul_nt(x, w("attn.wv"));
    return matmul_nt(attention(q, k, v, n_heads, /*causal=*/true), w("attn.wo"));
}

ad::Var feed_forward(ad::Var x, ad::Var w1, ad::Var w2) { return ad::matmul_nt(ad::gelu(ad::matmul_nt(x, w1)), w2); }

ad::Var decoder_block(const BoundParams& p, const std::string& prefix, std::size_t layer, ad::Var h,
                      const TransformerConfig& c) {
    using namespace ad;
    Var w1 = lookup(p, prefix + param_names::layer(layer, "ffn.w1"));
    Var w2 = lookup(p, prefix + param_names::layer(layer, "ffn.w2"));
    if (c.norm == NormPlacement::pre) {
        h = add(h, self_attention(p, prefix, layer, layer_norm(h, kNormEps), c.n_heads));
        return add(h, feed_forward(layer_norm(h, kNormEps), w1, w2));
    }
    h = layer_norm(add(h, self_attention(p, prefix, layer, h, c.n_heads)), kNormEps);
    return layer_norm(add(h, feed_forward(h, w1, w2)), kNormEps);
}

ad::Var embed(ad::Var token_table, ad::Var position_table, std::span<const TokenId> tokens) {
    std::vector<std::size_t> ids(tokens.begin(), tokens.end());
    return ad::add(ad::gather_rows(token_table, ids), ad::slice_rows(position_table, 0, tokens.size()));
}

// Residual cross-attention update of the query-side stream: queries from
// `query_prev`, keys/values from `kv_prev` (both previous-layer outputs).
ad::Var cross_block(const BoundParams& p, std::size_t layer, Branch query_side, ad::Var h, ad::Var query_prev,
                    ad::Var kv_prev, const ModelSpec& spec) {
    using namespace ad;
    auto w = [&](std::string_view leaf) { return lookup(p, param_names::cross(layer, query_side, leaf)); };
    Var qn = layer_norm(query_prev, kNormEps);
    Var kvn = layer_norm(kv_prev, kNormEps);
    Var q = matmul_nt(qn, w("wq"));
    Var k = matmul_nt(kvn, w("wk"));
    Var v = matmul_nt(kvn, w("wv"));
    h = add(h, matmul_nt(attention(q, k, v, spec.config.n_heads, /*causal=*/true), w("wo")));
    if (spec.cross.cross_ffn) h = add(h, feed_forward(layer_norm(h, kNormEps), w("ffn.w1"), w("ffn.w2")));
    return h;
}

ad::Var final_norm(ad::Var h, const TransformerConfig& c) {
    return c.norm == NormPlacement::pre ? ad::layer_norm(h, kNormEps) : h;
}

}  // namespace

ad::Var forward(const ModelSpec& spec, const BoundParams& params, std::span<const TokenId> tokens,
                HiddenTrace* trace) {
    using namespace ad;
    const TransformerConfig& c = spec.config;
    validate_tokens(c, tokens);

    if (spec.arch == Architecture::decoder) {
        Var table = lookup(params, std::string(param_names::kTokenEmbedding));
        Var h = embed(table, lookup(params, std::string(param_names::kPositionEmbedding)), tokens);
        if (trace) trace->llm = {h.value()};
        for (std::size_t l = 0; l < c.n_layers; ++l) {
            h = decoder_block(params, "", l, h, c);
            if (trace) trace->llm.push_back(h.value());
        }
        Var out = final_norm(h, c);
        if (trace) trace->final_llm = out.value();
        return matmul_nt(out, table);
    }

    Var table = lookup(params, std::string(param_names::kSharedTokenEmbedding));
    Var h_llm = embed(table, lookup(params, param_names::branch(Branch::llm, param_names::kPositionEmbedding)), tokens);
    Var h_img = embed(table, lookup(params, param_names::branch(Branch::img, param_names::kPositionEmbedding)), tokens);
    if (trace) {
        trace->llm = {h_llm.value()};
        trace->img = {h_img.value()};
    }
    for (std::size_t l = 0; l < c.n_layers; ++l) {
        const Var prev_llm = h_llm;
        const Var prev_img = h_img;
        h_llm = decoder_block(params, "llm.", l, h_llm, c);
        h_img = decoder_block(params, "img.", l, h_img, c);
        if (spec.cross.has_cross_at(l)) {
            h_llm = cross_block(params, l, Branch::llm, h_llm, prev_llm, prev_img, spec);
            h_img = cross_block(params, l, Branch::img, h_img, prev_img, prev_llm, spec);
        }
        if (trace) {
            trace->llm.push_back(h_llm.value());
            trace->img.push_back(h_img.value());
        }
    }
    Var out_llm = final_norm(h_llm, c);
    Var out_img = final_norm(h_img, c);
    if (trace) {
        trace->final_llm = out_llm.value();
        trace->final_img = out_img.value();
    }
    Var joint = matmul_nt(concat_cols(out_llm, out_img), lookup(params, std::string(param_names::kOutputProjection)));
    return matmul_nt(joint, table);
}

Tensor compute_logits(const Model& model, std::span<const TokenId> tokens, HiddenTrace* trace) {
    ad::Graph graph(/*record=*/false);
    BoundParams bound = bind(graph, model.params, false);
    return forward(model.spec, bound, tokens, trace).value();
}

ParameterSet to_f32_storage(const ParameterSet& params) {
    ParameterSet out;
    for (const auto& [name, t] : params) out.insert(name, kernels::round_to_f32(t));
    return out;
}

const char* to_string(Architecture arch) { return arch == Architecture::decoder ? "decoder" : "jam_cross"; }

const char* to_string(NormPlacement norm) { return norm == NormPlacement::pre ? "pre" : "post"; }

}  // namespace jam
