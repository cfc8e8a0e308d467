#include "jam/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "jam/error.hpp"

namespace jam::ad {

namespace {

void same_shape(const Var& a, const Var& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
    }
}

void same_graph(const Var& a, const Var& b, const char* op) {
    if (&a.graph() != &b.graph()) throw Error(std::string(op) + ": operands belong to different graphs");
}

void add_into(Tensor& dst, const Tensor& src) {
    auto d = dst.data();
    auto s = src.data();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += s[i];
}

}  // namespace

Var Graph::leaf(Tensor value, bool requires_grad) {
    require_finite(value, "leaf");
    Node node;
    node.value = std::move(value);
    node.requires_grad = requires_grad && record_;
    nodes_.push_back(std::move(node));
    return Var(this, nodes_.size() - 1);
}

Var Graph::emit(Tensor value, std::span<const Var> inputs, BackwardFn backward, const char* op) {
    require_finite(value, op);
    Node node;
    node.value = std::move(value);
    if (record_) {
        for (const Var& in : inputs) {
            if (&in.graph() != this) throw Error(std::string(op) + ": input from another graph");
            node.requires_grad = node.requires_grad || nodes_[in.id()].requires_grad;
        }
        if (node.requires_grad) node.backward = std::move(backward);
    }
    nodes_.push_back(std::move(node));
    return Var(this, nodes_.size() - 1);
}

Tensor& Graph::grad_buffer(std::size_t id) {
    Node& n = nodes_[id];
    if (!n.has_grad) {
        n.grad = Tensor(n.value.shape(), 0.0);
        n.has_grad = true;
    }
    return n.grad;
}

Tensor Graph::grad(std::size_t id) const {
    const Node& n = nodes_.at(id);
    if (n.has_grad) return n.grad;
    return Tensor(n.value.shape(), 0.0);
}

void Graph::backward(Var loss) {
    if (&loss.graph() != this) throw Error("backward: loss from another graph");
    if (!record_) throw Error("backward: graph was built without recording");
    if (loss.value().size() != 1) {
        throw ShapeError("backward: loss must be scalar, got " + shape_string(loss.shape()));
    }
    for (Node& n : nodes_) {
        n.has_grad = false;
        n.grad = Tensor();
    }
    grad_buffer(loss.id())[0] = 1.0;
    for (std::size_t i = loss.id() + 1; i-- > 0;) {
        Node& n = nodes_[i];
        if (n.has_grad && n.backward) n.backward(*this, i);
    }
}

Var matmul(Var a, Var b) {
    same_graph(a, b, "matmul");
    Graph& g = a.graph();
    return g.emit(kernels::matmul(a.value(), b.value()), {a, b},
                  [a, b](Graph& g, std::size_t self) {
                      const Tensor& dy = g.upstream(self);
                      if (g.requires_grad(a.id())) add_into(g.grad_buffer(a.id()), kernels::matmul_nt(dy, b.value()));
                      if (g.requires_grad(b.id())) add_into(g.grad_buffer(b.id()), kernels::matmul_tn(a.value(), dy));
                  },
                  "matmul");
}

Var matmul_nt(Var a, Var b) {
    same_graph(a, b, "matmul_nt");
    Graph& g = a.graph();
    return g.emit(kernels::matmul_nt(a.value(), b.value()), {a, b},
                  [a, b](Graph& g, std::size_t self) {
                      const Tensor& dy = g.upstream(self);
                      if (g.requires_grad(a.id())) add_into(g.grad_buffer(a.id()), kernels::matmul(dy, b.value()));
                      if (g.requires_grad(b.id())) add_into(g.grad_buffer(b.id()), kernels::matmul_tn(dy, a.value()));
                  },
                  "matmul_nt");
}

Var transpose(Var a) {
    Graph& g = a.graph();
    return g.emit(kernels::transpose(a.value()), {a},
                  [a](Graph& g, std::size_t self) {
                      add_into(g.grad_buffer(a.id()), kernels::transpose(g.upstream(self)));
                  },
                  "transpose");
}

Var add(Var a, Var b) {
    same_graph(a, b, "add");
    same_shape(a, b, "add");
    Tensor out = a.value();
    add_into(out, b.value());
    return a.graph().emit(std::move(out), {a, b},
                          [a, b](Graph& g, std::size_t self) {
                              const Tensor& dy = g.upstream(self);
                              if (g.requires_grad(a.id())) add_into(g.grad_buffer(a.id()), dy);
                              if (g.requires_grad(b.id())) add_into(g.grad_buffer(b.id()), dy);
                          },
                          "add");
}

Var sub(Var a, Var b) {
    same_graph(a, b, "sub");
    same_shape(a, b, "sub");
    Tensor out = a.value();
    auto o = out.data();
    auto bv = b.value().data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] -= bv[i];
    return a.graph().emit(std::move(out), {a, b},
                          [a, b](Graph& g, std::size_t self) {
                              const Tensor& dy = g.upstream(self);
                              if (g.requires_grad(a.id())) add_into(g.grad_buffer(a.id()), dy);
                              if (g.requires_grad(b.id())) {
                                  auto db = g.grad_buffer(b.id()).data();
                                  auto d = dy.data();
                                  for (std::size_t i = 0; i < d.size(); ++i) db[i] -= d[i];
                              }
                          },
                          "sub");
}

Var mul(Var a, Var b) {
    same_graph(a, b, "mul");
    same_shape(a, b, "mul");
    Tensor out = a.value();
    auto o = out.data();
    auto bv = b.value().data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] *= bv[i];
    return a.graph().emit(std::move(out), {a, b},
                          [a, b](Graph& g, std::size_t self) {
                              auto d = g.upstream(self).data();
                              if (g.requires_grad(a.id())) {
                                  auto da = g.grad_buffer(a.id()).data();
                                  auto bv = b.value().data();
                                  for (std::size_t i = 0; i < d.size(); ++i) da[i] += d[i] * bv[i];
                              }
                              if (g.requires_grad(b.id())) {
                                  auto db = g.grad_buffer(b.id()).data();
                                  auto av = a.value().data();
                                  for (std::size_t i = 0; i < d.size(); ++i) db[i] += d[i] * av[i];
                              }
                          },
                          "mul");
}

Var scale(Var a, double factor) {
    Tensor out = a.value();
    for (auto& v : out.storage()) v *= factor;
    return a.graph().emit(std::move(out), {a},
                          [a, factor](Graph& g, std::size_t self) {
                              auto d = g.upstream(self).data();
                              auto da = g.grad_buffer(a.id()).data();
                              for (std::size_t i = 0; i < d.size(); ++i) da[i] += factor * d[i];
                          },
                          "scale");
}

Var sum(Var a) {
    double total = 0.0;
    for (double v : a.value().data()) total += v;
    return a.graph().emit(Tensor::scalar(total), {a},
                          [a](Graph& g, std::size_t self) {
                              const double d = g.upstream(self)[0];
                              for (auto& v : g.grad_buffer(a.id()).storage()) v += d;
                          },
                          "sum");
}

Var mean(Var a) {
    const std::size_t n = a.value().size();
    if (n == 0) throw ShapeError("mean: empty tensor");
    return scale(sum(a), 1.0 / static_cast<double>(n));
}

Var gelu(Var a) {
    constexpr double kC = 0.79788456080286535588;  // sqrt(2/pi)
    constexpr double kA = 0.044715;
    Tensor out = a.value();
    for (auto& x : out.storage()) x = 0.5 * x * (1.0 + std::tanh(kC * (x + kA * x * x * x)));
    return a.graph().emit(std::move(out), {a},
                          [a](Graph& g, std::size_t self) {
                              auto d = g.upstream(self).data();
                              auto x = a.value().data();
                              auto da = g.grad_buffer(a.id()).data();
                              for (std::size_t i = 0; i < d.size(); ++i) {
                                  const double xi = x[i];
                                  const double t = std::tanh(kC * (xi + kA * xi * xi * xi));
                                  const double dt = (1.0 - t * t) * kC * (1.0 + 3.0 * kA * xi * xi);
                                  da[i] += d[i] * (0.5 * (1.0 + t) + 0.5 * xi * dt);
                              }
                          },
                          "gelu");
}

Var layer_norm(Var x, double eps) {
    const Tensor& in = x.value();
    const std::size_t rows = in.rows(), cols = in.cols();
    if (cols == 0) throw ShapeError("layer_norm: last dimension must be >= 1");
    Tensor out(in.shape());
    std::vector<double> inv_std(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        auto xr = in.row(r);
        double mu = 0.0;
        for (double v : xr) mu += v;
        mu /= static_cast<double>(cols);
        double var = 0.0;
        for (double v : xr) var += (v - mu) * (v - mu);
        var /= static_cast<double>(cols);
        const double rstd = 1.0 / std::sqrt(var + eps);
        inv_std[r] = rstd;
        auto yr = out.row(r);
        for (std::size_t c = 0; c < cols; ++c) yr[c] = (xr[c] - mu) * rstd;
    }
    return x.graph().emit(
        std::move(out), {x},
        [x, inv_std = std::move(inv_std)](Graph& g, std::size_t self) {
            const Tensor& y = g.value(self);
            const Tensor& dy = g.upstream(self);
            Tensor& dx = g.grad_buffer(x.id());
            const std::size_t rows = y.rows(), cols = y.cols();
            const double inv_n = 1.0 / static_cast<double>(cols);
            for (std::size_t r = 0; r < rows; ++r) {
                auto yr = y.row(r);
                auto dyr = dy.row(r);
                double mean_dy = 0.0, mean_dy_y = 0.0;
                for (std::size_t c = 0; c < cols; ++c) {
                    mean_dy += dyr[c];
                    mean_dy_y += dyr[c] * yr[c];
                }
                mean_dy *= inv_n;
                mean_dy_y *= inv_n;
                auto dxr = dx.row(r);
                for (std::size_t c = 0; c < cols; ++c) dxr[c] += inv_std[r] * (dyr[c] - mean_dy - yr[c] * mean_dy_y);
            }
        },
        "layer_norm");
}

namespace {

Var softmax_rows(Var x) {
    const Tensor& in = x.value();
    Tensor out(in.shape());
    for (std::size_t r = 0; r < in.rows(); ++r) {
        auto xr = in.row(r);
        auto yr = out.row(r);
        double max = -INFINITY;
        for (double v : xr) max = std::max(max, v);
        double total = 0.0;
        for (std::size_t c = 0; c < xr.size(); ++c) {
            yr[c] = std::exp(xr[c] - max);
            total += yr[c];
        }
        for (auto& v : yr) v /= total;
    }
    return x.graph().emit(std::move(out), {x},
                          [x](Graph& g, std::size_t self) {
                              const Tensor& y = g.value(self);
                              const Tensor& dy = g.upstream(self);
                              Tensor& dx = g.grad_buffer(x.id());
                              for (std::size_t r = 0; r < y.rows(); ++r) {
                                  auto yr = y.row(r);
                                  auto dyr = dy.row(r);
                                  double dot = 0.0;
                                  for (std::size_t c = 0; c < yr.size(); ++c) dot += dyr[c] * yr[c];
                                  auto dxr = dx.row(r);
                                  for (std::size_t c = 0; c < yr.size(); ++c) dxr[c] += yr[c] * (dyr[c] - dot);
                              }
                          },
                          "softmax");
}

}  // namespace

Var softmax(Var x, int axis) {
    const std::size_t rank = x.value().rank();
    if (rank > 2) throw ShapeError("softmax: rank > 2 not supported");
    const int last = rank == 0 ? 0 : static_cast<int>(rank) - 1;
    if (axis < 0) axis = last;
    if (axis > last) throw ShapeError("softmax: axis out of range");
    if (axis == last) return softmax_rows(x);
    return transpose(softmax_rows(transpose(x)));
}

Var attention(Var q, Var k, Var v, std::size_t n_heads, bool causal) {
    same_graph(q, k, "attention");
    same_graph(q, v, "attention");
    const Tensor& Q = q.value();
    const Tensor& K = k.value();
    const Tensor& V = v.value();
    if (Q.rank() != 2 || K.rank() != 2 || V.rank() != 2) throw ShapeError("attention: operands must be matrices");
    const std::size_t tq = Q.rows(), tk = K.rows(), dim = Q.cols();
    if (K.cols() != dim || V.cols() != dim || V.rows() != tk) {
        throw ShapeError("attention: q/k/v shapes disagree: " + shape_string(Q.shape()) + ", " +
                         shape_string(K.shape()) + ", " + shape_string(V.shape()));
    }
    if (n_heads == 0 || dim % n_heads != 0) throw ShapeError("attention: width not divisible by head count");
    if (causal && tq != tk) throw ShapeError("attention: causal attention needs equal query/key lengths");
    const std::size_t dh = dim / n_heads;
    const double sc = 1.0 / std::sqrt(static_cast<double>(dh));

    // probs[h][i * tk + j]; masked entries stay zero.
    std::vector<double> probs(n_heads * tq * tk, 0.0);
    Tensor out({tq, dim});
    for (std::size_t h = 0; h < n_heads; ++h) {
        const std::size_t off = h * dh;
        double* P = probs.data() + h * tq * tk;
        for (std::size_t i = 0; i < tq; ++i) {
            const std::size_t limit = causal ? i + 1 : tk;
            const double* qi = (Q.data().data() + i * dim + off);
            double max = -INFINITY;
            for (std::size_t j = 0; j < limit; ++j) {
                const double* kj = (K.data().data() + j * dim + off);
                double s = 0.0;
                for (std::size_t c = 0; c < dh; ++c) s += qi[c] * kj[c];
                s *= sc;
                P[i * tk + j] = s;
                max = std::max(max, s);
            }
            double total = 0.0;
            for (std::size_t j = 0; j < limit; ++j) {
                P[i * tk + j] = std::exp(P[i * tk + j] - max);
                total += P[i * tk + j];
            }
            double* oi = (out.data().data() + i * dim + off);
            for (std::size_t j = 0; j < limit; ++j) {
                P[i * tk + j] /= total;
                const double p = P[i * tk + j];
                const double* vj = (V.data().data() + j * dim + off);
                for (std::size_t c = 0; c < dh; ++c) oi[c] += p * vj[c];
            }
        }
    }
    return q.graph().emit(
        std::move(out), {q, k, v},
        [q, k, v, n_heads, causal, sc, dh, dim, tq, tk, probs = std::move(probs)](Graph& g, std::size_t self) {
            const Tensor& dO = g.upstream(self);
            const Tensor& Q = q.value();
            const Tensor& K = k.value();
            const Tensor& V = v.value();
            const bool need_q = g.requires_grad(q.id());
            const bool need_k = g.requires_grad(k.id());
            const bool need_v = g.requires_grad(v.id());
            Tensor* dQ = need_q ? &g.grad_buffer(q.id()) : nullptr;
            Tensor* dK = need_k ? &g.grad_buffer(k.id()) : nullptr;
            Tensor* dV = need_v ? &g.grad_buffer(v.id()) : nullptr;
            std::vector<double> dP(tk);
            for (std::size_t h = 0; h < n_heads; ++h) {
                const std::size_t off = h * dh;
                const double* P = probs.data() + h * tq * tk;
                for (std::size_t i = 0; i < tq; ++i) {
                    const std::size_t limit = causal ? i + 1 : tk;
                    const double* doi = (dO.data().data() + i * dim + off);
                    double dot = 0.0;
                    for (std::size_t j = 0; j < limit; ++j) {
                        const double* vj = (V.data().data() + j * dim + off);
                        double s = 0.0;
                        for (std::size_t c = 0; c < dh; ++c) s += doi[c] * vj[c];
                        dP[j] = s;
                        dot += s * P[i * tk + j];
                        if (dV) {
                            double* dvj = (dV->data().data() + j * dim + off);
                            const double p = P[i * tk + j];
                            for (std::size_t c = 0; c < dh; ++c) dvj[c] += p * doi[c];
                        }
                    }
                    if (!dQ && !dK) continue;
                    const double* qi = (Q.data().data() + i * dim + off);
                    for (std::size_t j = 0; j < limit; ++j) {
                        const double ds = P[i * tk + j] * (dP[j] - dot) * sc;
                        if (ds == 0.0) continue;
                        const double* kj = (K.data().data() + j * dim + off);
                        if (dQ) {
                            double* dqi = (dQ->data().data() + i * dim + off);
                            for (std::size_t c = 0; c < dh; ++c) dqi[c] += ds * kj[c];
                        }
                        if (dK) {
                            double* dkj = (dK->data().data() + j * dim + off);
                            for (std::size_t c = 0; c < dh; ++c) dkj[c] += ds * qi[c];
                        }
                    }
                }
            }
        },
        "attention");
}

Var gather_rows(Var table, std::span<const std::size_t> ids) {
    const Tensor& t = table.value();
    if (t.rank() != 2) throw ShapeError("gather_rows: table must be a matrix");
    const std::size_t cols = t.cols();
    Tensor out({ids.size(), cols});
    for (std::size_t r = 0; r < ids.size(); ++r) {
        if (ids[r] >= t.rows()) {
            throw DomainError("gather_rows: row " + std::to_string(ids[r]) + " out of range " +
                              std::to_string(t.rows()));
        }
        std::copy_n(t.data().begin() + static_cast<std::ptrdiff_t>(ids[r] * cols), cols, out.row(r).begin());
    }
    return table.graph().emit(std::move(out), {table},
                              [table, ids = std::vector<std::size_t>(ids.begin(), ids.end())](Graph& g,
                                                                                             std::size_t self) {
                                  const Tensor& dy = g.upstream(self);
                                  Tensor& dt = g.grad_buffer(table.id());
                                  const std::size_t cols = dy.cols();
                                  for (std::size_t r = 0; r < ids.size(); ++r) {
                                      const double* src = dy.row(r).data();
                                      double* dst = &dt(ids[r], 0);
                                      for (std::size_t c = 0; c < cols; ++c) dst[c] += src[c];
                                  }
                              },
                              "gather_rows");
}

Var slice_rows(Var x, std::size_t start, std::size_t count) {
    const Tensor& t = x.value();
    if (t.rank() != 2 || start + count > t.rows()) throw ShapeError("slice_rows: range out of bounds");
    const std::size_t cols = t.cols();
    Tensor out({count, cols});
    std::copy_n(t.data().begin() + static_cast<std::ptrdiff_t>(start * cols), count * cols, out.data().begin());
    return x.graph().emit(std::move(out), {x},
                          [x, start](Graph& g, std::size_t self) {
                              const Tensor& dy = g.upstream(self);
                              auto dx = g.grad_buffer(x.id()).data().subspan(start * dy.cols(), dy.size());
                              auto d = dy.data();
                              for (std::size_t i = 0; i < d.size(); ++i) dx[i] += d[i];
                          },
                          "slice_rows");
}

Var concat_cols(Var a, Var b) {
    same_graph(a, b, "concat_cols");
    const Tensor& A = a.value();
    const Tensor& B = b.value();
    if (A.rank() != 2 || B.rank() != 2 || A.rows() != B.rows()) {
        throw ShapeError("concat_cols: incompatible " + shape_string(A.shape()) + " and " + shape_string(B.shape()));
    }
    const std::size_t ca = A.cols(), cb = B.cols();
    Tensor out({A.rows(), ca + cb});
    for (std::size_t r = 0; r < A.rows(); ++r) {
        std::copy_n(A.row(r).begin(), ca, out.row(r).begin());
        std::copy_n(B.row(r).begin(), cb, out.row(r).begin() + static_cast<std::ptrdiff_t>(ca));
    }
    return a.graph().emit(std::move(out), {a, b},
                          [a, b, ca, cb](Graph& g, std::size_t self) {
                              const Tensor& dy = g.upstream(self);
                              for (std::size_t r = 0; r < dy.rows(); ++r) {
                                  if (g.requires_grad(a.id())) {
                                      double* da = &g.grad_buffer(a.id())(r, 0);
                                      for (std::size_t c = 0; c < ca; ++c) da[c] += dy(r, c);
                                  }
                                  if (g.requires_grad(b.id())) {
                                      double* db = &g.grad_buffer(b.id())(r, 0);
                                      for (std::size_t c = 0; c < cb; ++c) db[c] += dy(r, ca + c);
                                  }
                              }
                          },
                          "concat_cols");
}

Var concat_rows(std::span<const Var> parts) {
    if (parts.empty()) throw ShapeError("concat_rows: no inputs");
    Graph& g = parts.front().graph();
    const std::size_t cols = parts.front().value().cols();
    std::size_t rows = 0;
    for (const Var& p : parts) {
        if (&p.graph() != &g) throw Error("concat_rows: operands belong to different graphs");
        if (p.value().rank() != 2 || p.value().cols() != cols) throw ShapeError("concat_rows: column count mismatch");
        rows += p.value().rows();
    }
    Tensor out({rows, cols});
    std::size_t offset = 0;
    for (const Var& p : parts) {
        std::copy(p.value().data().begin(), p.value().data().end(), out.data().begin() + static_cast<std::ptrdiff_t>(offset));
        offset += p.value().size();
    }
    std::vector<Var> inputs(parts.begin(), parts.end());
    return g.emit(std::move(out), inputs,
                  [inputs](Graph& g, std::size_t self) {
                      auto d = g.upstream(self).data();
                      std::size_t offset = 0;
                      for (const Var& p : inputs) {
                          const std::size_t n = p.value().size();
                          if (g.requires_grad(p.id())) {
                              auto dp = g.grad_buffer(p.id()).data();
                              for (std::size_t i = 0; i < n; ++i) dp[i] += d[offset + i];
                          }
                          offset += n;
                      }
                  },
                  "concat_rows");
}

Var cross_entropy(Var logits, TokenIds targets) {
    const Tensor& x = logits.value();
    if (x.rank() != 2) throw ShapeError("cross_entropy: logits must be a matrix");
    if (targets.size() != x.rows()) {
        throw ShapeError("cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                         std::to_string(x.rows()) + " rows");
    }
    const std::size_t vocab = x.cols();
    std::size_t count = 0;
    double total = 0.0;
    for (std::size_t r = 0; r < x.rows(); ++r) {
        const std::int32_t t = targets[r];
        if (t == kIgnoreTarget) continue;
        if (t < 0 || static_cast<std::size_t>(t) >= vocab) {
            throw DomainError("cross_entropy: target " + std::to_string(t) + " outside vocabulary of " +
                              std::to_string(vocab));
        }
        total += kernels::log_sum_exp(x.row(r)) - x(r, static_cast<std::size_t>(t));
        ++count;
    }
    if (count == 0) throw DomainError("cross_entropy: every target is ignored");
    const double inv = 1.0 / static_cast<double>(count);
    return logits.graph().emit(
        Tensor::scalar(total * inv), {logits},
        [logits, inv, tg = std::vector<std::int32_t>(targets.begin(), targets.end())](Graph& g, std::size_t self) {
            const double d = g.upstream(self)[0] * inv;
            const Tensor& x = logits.value();
            Tensor& dx = g.grad_buffer(logits.id());
            for (std::size_t r = 0; r < x.rows(); ++r) {
                if (tg[r] == kIgnoreTarget) continue;
                auto xr = x.row(r);
                const double lse = kernels::log_sum_exp(xr);
                auto dr = dx.row(r);
                for (std::size_t c = 0; c < xr.size(); ++c) dr[c] += d * std::exp(xr[c] - lse);
                dr[static_cast<std::size_t>(tg[r])] -= d;
            }
        },
        "cross_entropy");
}

}  // namespace jam::ad
