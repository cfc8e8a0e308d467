#include "jam/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "jam/fusion.hpp"
#include "jam/rng.hpp"

namespace jam::ad {

namespace {

double evaluate(const LossFn& f, const std::vector<Tensor>& params) {
    Graph graph(/*record=*/false);
    std::vector<Var> leaves;
    leaves.reserve(params.size());
    for (const Tensor& p : params) leaves.push_back(graph.leaf(p, false));
    return f(graph, leaves).value().item();
}

template <typename Central>
double ridders(Central central, double step) {
    constexpr int kTable = 10;
    constexpr double kShrink = 1.4;
    constexpr double kShrink2 = kShrink * kShrink;
    constexpr double kSafe = 2.0;
    double a[kTable][kTable];
    double h = step;
    a[0][0] = central(h);
    double best = a[0][0];
    double err = std::numeric_limits<double>::max();
    for (int i = 1; i < kTable; ++i) {
        h /= kShrink;
        a[0][i] = central(h);
        double fac = kShrink2;
        for (int j = 1; j <= i; ++j) {
            a[j][i] = (a[j - 1][i] * fac - a[j - 1][i - 1]) / (fac - 1.0);
            fac *= kShrink2;
            const double e = std::max(std::abs(a[j][i] - a[j - 1][i]), std::abs(a[j][i] - a[j - 1][i - 1]));
            if (e <= err) {
                err = e;
                best = a[j][i];
            }
        }
        if (std::abs(a[i][i] - a[i - 1][i - 1]) >= kSafe * err) break;
    }
    return best;
}

}  // namespace

double relative_error(double analytic, double numeric, double floor) {
    const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
    return std::abs(analytic - numeric) / denom;
}

GradCheckReport grad_check(const LossFn& f, const std::vector<Tensor>& params, const GradCheckOptions& options) {
    const double step = options.step;
    std::vector<Tensor> analytic;
    {
        Graph graph;
        std::vector<Var> leaves;
        leaves.reserve(params.size());
        for (const Tensor& p : params) leaves.push_back(graph.leaf(p, true));
        Var loss = f(graph, leaves);
        graph.backward(loss);
        for (const Var& leaf : leaves) analytic.push_back(graph.grad(leaf));
    }

    GradCheckReport report;
    std::vector<Tensor> probe = params;
    for (std::size_t p = 0; p < params.size(); ++p) {
        for (std::size_t i = 0; i < params[p].size(); ++i) {
            const double original = params[p][i];
            auto at = [&](double offset) {
                probe[p][i] = original + offset;
                return evaluate(f, probe);
            };
            double numeric = 0.0;
            if (options.stencil == Stencil::two_point) {
                numeric = (at(step) - at(-step)) / (2.0 * step);
            } else if (options.stencil == Stencil::four_point) {
                numeric = (at(-2 * step) - 8 * at(-step) + 8 * at(step) - at(2 * step)) / (12.0 * step);
            } else {
                numeric = ridders([&](double h) { return (at(h) - at(-h)) / (2.0 * h); }, step);
            }
            probe[p][i] = original;

            const double a = analytic[p][i];
            const double rel = relative_error(a, numeric, options.floor);
            const double abs_err = std::abs(a - numeric);
            ++report.checked;
            report.max_absolute_error = std::max(report.max_absolute_error, abs_err);
            if (rel > report.max_relative_error || report.checked == 1) {
                report.max_relative_error = std::max(report.max_relative_error, rel);
                report.worst_param = p;
                report.worst_index = i;
                report.worst_analytic = a;
                report.worst_numeric = numeric;
            }
        }
    }
    return report;
}

}  // namespace jam::ad

namespace jam {

Model toy_grad_check_model(const ToyGradCheckSpec& spec) {
    TransformerConfig c;
    c.n_layers = spec.n_layers;
    c.d_model = spec.d_model;
    c.n_heads = spec.n_heads;
    c.d_ff = spec.d_ff;
    c.vocab_size = spec.vocab_size;
    c.max_seq_len = spec.seq_len;
    c.init_std = spec.init_std;
    Model llm{ModelSpec{Architecture::decoder, c, {}}, init_decoder(c, mix_seed(spec.seed, 1))};
    if (spec.arch == Architecture::decoder) return llm;

    Model img{llm.spec, init_decoder(c, mix_seed(spec.seed, 2))};
    CrossSpec cross{spec.insertion_every, spec.cross_ffn, spec.init_std};
    std::vector<Branch> rows(c.vocab_size);
    for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = i % 2 == 0 ? Branch::llm : Branch::img;
    Model model = build_cross(llm, img, cross, rows, mix_seed(spec.seed, 3));
    Rng rng(mix_seed(spec.seed, 4));
    for (auto& [name, t] : model.params) {
        if (name.starts_with("cross.") || name == param_names::kOutputProjection) {
            t = Tensor::randn(t.shape(), spec.init_std, rng);
        }
    }
    return model;
}

ad::GradCheckReport check_model_gradients(const Model& model, std::span<const TokenId> inputs,
                                          std::span<const TokenId> targets, const ad::GradCheckOptions& options) {
    std::vector<std::string> names = model.params.names();
    std::vector<Tensor> values;
    for (const auto& n : names) values.push_back(model.params.at(n));
    const std::vector<TokenId> in(inputs.begin(), inputs.end());
    const std::vector<TokenId> tg(targets.begin(), targets.end());
    const ModelSpec spec = model.spec;
    auto loss = [&names, in, tg, spec](ad::Graph&, const std::vector<ad::Var>& leaves) {
        BoundParams bound;
        for (std::size_t i = 0; i < names.size(); ++i) bound.emplace(names[i], leaves[i]);
        return ad::cross_entropy(forward(spec, bound, in), tg);
    };
    return ad::grad_check(loss, values, options);
}

ad::GradCheckReport run_toy_grad_check(const ToyGradCheckSpec& spec, const ad::GradCheckOptions& options) {
    const Model model = toy_grad_check_model(spec);
    Rng rng(mix_seed(spec.seed, 5));
    std::vector<TokenId> inputs(spec.seq_len), targets(spec.seq_len);
    for (auto& t : inputs) t = static_cast<TokenId>(rng.uniform_int(spec.vocab_size));
    for (auto& t : targets) t = static_cast<TokenId>(rng.uniform_int(spec.vocab_size));
    return check_model_gradients(model, inputs, targets, options);
}

}  // namespace jam
