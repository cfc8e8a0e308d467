#pragma once

#include <functional>
#include <string>
#include <vector>

#include "jam/autodiff.hpp"
#include "jam/model.hpp"

namespace jam::ad {

// Scalar function of a list of parameter leaves, built inside `graph`.
using LossFn = std::function<Var(Graph& graph, const std::vector<Var>& params)>;

struct GradCheckReport {
    double max_relative_error = 0.0;
    double max_absolute_error = 0.0;
    std::size_t checked = 0;
    std::size_t worst_param = 0;
    std::size_t worst_index = 0;
    double worst_analytic = 0.0;
    double worst_numeric = 0.0;
};

// Relative error |a - n| / max(|a|, |n|, floor). The floor keeps entries
// whose true gradient is ~0 from turning round-off into huge ratios.
double relative_error(double analytic, double numeric, double floor);

// Central-difference schemes:
//   two_point   (f(x+h) - f(x-h)) / 2h, truncation O(h^2);
//   four_point  (f(x-2h) - 8f(x-h) + 8f(x+h) - f(x+2h)) / 12h, O(h^4);
//   ridders     two-point differences at steps h, h/1.4, h/1.4^2, ...
//               combined by Richardson extrapolation, stopping once the
//               error estimate grows (Ridders 1982). Fixed-step schemes are
//               limited by round-off eps * |f| / h; the extrapolation reaches
//               high order at a step large enough to keep round-off small.
enum class Stencil { two_point, four_point, ridders };

// Defaults: at h = 5e-4 the four-point truncation error and the round-off
// error (~eps * |f| / h) are both ~1e-11 on the toy models. The floor puts
// the threshold for "relative" at |g| = 1e-4; below it the criterion is an
// absolute error bound of 1e-4 * tolerance.
struct GradCheckOptions {
    double step = 5e-4;
    double floor = 1e-4;
    Stencil stencil = Stencil::four_point;
};

// Compares backward() against central differences for every element of
// every parameter.
GradCheckReport grad_check(const LossFn& f, const std::vector<Tensor>& params, const GradCheckOptions& options = {});

}  // namespace jam::ad

namespace jam {

struct ToyGradCheckSpec {
    Architecture arch = Architecture::decoder;
    std::size_t n_layers = 2;
    std::size_t d_model = 16;
    std::size_t n_heads = 2;
    std::size_t d_ff = 32;
    std::size_t vocab_size = 13;
    std::size_t seq_len = 6;
    std::size_t insertion_every = 1;
    bool cross_ffn = false;
    // Large enough that every nonlinearity is exercised away from zero.
    double init_std = 0.3;
    std::uint64_t seed = 0;
};

// Random model for gradient checking. Cross models get random (not zero)
// cross output projections so that every path carries gradient.
Model toy_grad_check_model(const ToyGradCheckSpec& spec);

// Gradient of the next-token loss w.r.t. every parameter, checked against
// central differences.
ad::GradCheckReport check_model_gradients(const Model& model, std::span<const TokenId> inputs,
                                          std::span<const TokenId> targets, const ad::GradCheckOptions& options = {});

ad::GradCheckReport run_toy_grad_check(const ToyGradCheckSpec& spec, const ad::GradCheckOptions& options = {});

}  // namespace jam
