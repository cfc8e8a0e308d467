#include "jam/fusion.hpp"

#include "jam/error.hpp"
#include "jam/rng.hpp"

namespace jam {

void FusionSpec::validate() const {
    if (kind == FusionKind::cross && insertion_every < 1) throw ConfigError("fusion: insertion_every must be >= 1");
    if (!(cross_init_std >= 0.0)) throw ConfigError("fusion: cross_init_std must be >= 0");
}

const char* to_string(FusionKind kind) {
    switch (kind) {
        case FusionKind::uniform: return "uniform";
        case FusionKind::width_copy: return "width_copy";
        case FusionKind::width_average: return "width_average";
        case FusionKind::cross: return "cross";
    }
    return "?";
}

FusionKind parse_fusion_kind(const std::string& name) {
    if (name == "uniform") return FusionKind::uniform;
    if (name == "width_copy" || name == "width") return FusionKind::width_copy;
    if (name == "width_average") return FusionKind::width_average;
    if (name == "cross") return FusionKind::cross;
    throw ConfigError("unknown fusion kind '" + name + "'");
}

ParameterSet merge_uniform(const ParameterSet& a, const ParameterSet& b) {
    a.require_same_structure(b, "merge_uniform");
    ParameterSet out;
    for (const auto& [name, ta] : a) {
        const Tensor& tb = b.at(name);
        Tensor mean(ta.shape());
        for (std::size_t i = 0; i < ta.size(); ++i) mean[i] = 0.5 * ta[i] + 0.5 * tb[i];
        out.insert(name, std::move(mean));
    }
    return out;
}

namespace {

bool is_embedding(const std::string& name) {
    return name.ends_with(param_names::kTokenEmbedding) || name.ends_with(param_names::kPositionEmbedding);
}

Tensor concat_hidden(const Tensor& a, const Tensor& b) {
    const std::size_t rows = a.rows(), cols = a.cols();
    Tensor out({rows, 2 * cols});
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) {
            out(r, c) = a(r, c);
            out(r, cols + c) = b(r, c);
        }
    }
    return out;
}

Tensor block_matrix(const Tensor& a, const Tensor& b, bool average_right) {
    const std::size_t rows = a.rows(), cols = a.cols();
    Tensor out({2 * rows, 2 * cols});
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) {
            const double va = a(r, c), vb = b(r, c);
            const double right_top = average_right ? 0.5 * va + 0.5 * vb : va;
            const double right_bottom = average_right ? 0.5 * va + 0.5 * vb : vb;
            out(r, c) = va;
            out(r, cols + c) = right_top;
            out(rows + r, c) = vb;
            out(rows + r, cols + c) = right_bottom;
        }
    }
    return out;
}

ParameterSet widen(const ParameterSet& a, const ParameterSet& b, bool average_right, const char* what) {
    a.require_same_structure(b, what);
    ParameterSet out;
    for (const auto& [name, ta] : a) {
        if (ta.rank() != 2) throw StructureError(std::string(what) + ": '" + name + "' is not a matrix");
        const Tensor& tb = b.at(name);
        out.insert(name, is_embedding(name) ? concat_hidden(ta, tb) : block_matrix(ta, tb, average_right));
    }
    return out;
}

void require_decoder_pair(const Model& a, const Model& b, const char* what) {
    if (a.spec.arch != Architecture::decoder || b.spec.arch != Architecture::decoder) {
        throw StructureError(std::string(what) + ": parents must be decoder models");
    }
    if (!(a.spec.config == b.spec.config)) throw StructureError(std::string(what) + ": parent configurations differ");
    validate_structure(a.spec, a.params);
    a.params.require_same_structure(b.params, what);
}

}  // namespace

ParameterSet widen_copy(const ParameterSet& a, const ParameterSet& b) { return widen(a, b, false, "widen_copy"); }

ParameterSet widen_average(const ParameterSet& a, const ParameterSet& b) { return widen(a, b, true, "widen_average"); }

TransformerConfig widened_config(const TransformerConfig& config) {
    TransformerConfig wide = config;
    wide.d_model *= 2;
    wide.d_ff *= 2;
    wide.n_heads *= 2;
    return wide;
}

Model build_cross(const Model& llm, const Model& img, const CrossSpec& cross, std::span<const Branch> row_source,
                  std::uint64_t seed) {
    require_decoder_pair(llm, img, "build_cross");
    if (cross.insertion_every < 1) throw ConfigError("build_cross: insertion_every must be >= 1");
    const TransformerConfig& c = llm.spec.config;
    if (row_source.size() != c.vocab_size) {
        throw StructureError("build_cross: embedding source map covers " + std::to_string(row_source.size()) +
                             " ids, vocabulary has " + std::to_string(c.vocab_size));
    }

    Model fused;
    fused.spec = ModelSpec{Architecture::jam_cross, c, cross};
    ParameterSet& p = fused.params;

    for (const auto& [name, t] : llm.params) {
        if (name != param_names::kTokenEmbedding) p.insert(param_names::branch(Branch::llm, name), t);
    }
    for (const auto& [name, t] : img.params) {
        if (name != param_names::kTokenEmbedding) p.insert(param_names::branch(Branch::img, name), t);
    }

    const Tensor& e_llm = llm.params.at(param_names::kTokenEmbedding);
    const Tensor& e_img = img.params.at(param_names::kTokenEmbedding);
    Tensor shared(e_llm.shape());
    for (std::size_t id = 0; id < c.vocab_size; ++id) {
        const Tensor& src = row_source[id] == Branch::llm ? e_llm : e_img;
        for (std::size_t j = 0; j < c.d_model; ++j) shared(id, j) = src(id, j);
    }
    p.insert(std::string(param_names::kSharedTokenEmbedding), std::move(shared));

    Rng rng(seed);
    for (std::size_t l = 0; l < c.n_layers; ++l) {
        if (!cross.has_cross_at(l)) continue;
        for (Branch side : {Branch::llm, Branch::img}) {
            for (std::string_view leaf : {"wq", "wk", "wv"}) {
                p.insert(param_names::cross(l, side, leaf), Tensor::randn({c.d_model, c.d_model}, cross.init_std, rng));
            }
            p.insert(param_names::cross(l, side, "wo"), Tensor::zeros(c.d_model, c.d_model));
            if (cross.cross_ffn) {
                p.insert(param_names::cross(l, side, "ffn.w1"), Tensor::randn({c.d_ff, c.d_model}, cross.init_std, rng));
                p.insert(param_names::cross(l, side, "ffn.w2"), Tensor::zeros(c.d_model, c.d_ff));
            }
        }
    }

    Tensor proj({c.d_model, 2 * c.d_model});
    for (std::size_t i = 0; i < c.d_model; ++i) {
        proj(i, i) = 0.5;
        proj(i, c.d_model + i) = 0.5;
    }
    p.insert(std::string(param_names::kOutputProjection), std::move(proj));

    validate_structure(fused.spec, fused.params);
    return fused;
}

Model fuse(const Model& llm, const Model& img, const FusionSpec& spec, std::span<const Branch> row_source) {
    spec.validate();
    switch (spec.kind) {
        case FusionKind::uniform: {
            require_decoder_pair(llm, img, "merge_uniform");
            return Model{llm.spec, merge_uniform(llm.params, img.params)};
        }
        case FusionKind::width_copy:
        case FusionKind::width_average: {
            require_decoder_pair(llm, img, to_string(spec.kind));
            ModelSpec wide{Architecture::decoder, widened_config(llm.spec.config), {}};
            ParameterSet params = spec.kind == FusionKind::width_copy ? widen_copy(llm.params, img.params)
                                                                      : widen_average(llm.params, img.params);
            validate_structure(wide, params);
            return Model{wide, std::move(params)};
        }
        case FusionKind::cross: {
            CrossSpec cross{spec.insertion_every, spec.cross_ffn, spec.cross_init_std};
            return build_cross(llm, img, cross, row_source, spec.seed);
        }
    }
    throw ConfigError("fuse: unknown kind");
}

}  // namespace jam
