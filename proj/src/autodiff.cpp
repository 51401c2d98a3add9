#include "pfotgn/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <Eigen/Dense>
#include <boost/random/uniform_real_distribution.hpp>
#include <fmt/core.h>

namespace pfotgn::ad {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMatrix>;
using ConstMatMap = Eigen::Map<const RowMatrix>;

thread_local Tape* g_tape = nullptr;

constexpr double kCosineGuard = 1e-12;

std::string shape_string(const Shape& s) {
  std::string out = "{";
  for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "," : "") + std::to_string(s[i]);
  return out + "}";
}

std::size_t shape_size(const Shape& s) {
  std::size_t n = 1;
  for (int d : s) {
    if (d <= 0) throw ShapeError("non-positive dimension in shape " + shape_string(s));
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(fmt::format("{}: shapes {} and {} differ", op, shape_string(a.shape()),
                                 shape_string(b.shape())));
  }
}

ConstMatMap as_matrix(const Node& n, int rows, int cols) {
  return ConstMatMap(n.value.data(), rows, cols);
}

MatMap grad_matrix(Node& n, int rows, int cols) {
  return MatMap(n.ensure_grad().data(), rows, cols);
}

// Creates the output node; registers the reverse rule when recording.
Tensor record(Shape shape, std::vector<double> value, std::vector<Tensor> inputs,
              std::function<void(Node&)> rule) {
  for (double v : value) {
    if (!std::isfinite(v)) throw NumericalError("operation produced a non-finite value");
  }
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  Tape* tape = g_tape;
  if (tape != nullptr) {
    bool needs = false;
    for (const auto& t : inputs) needs = needs || t.requires_grad();
    if (needs) {
      node->requires_grad = true;
      node->backward = std::move(rule);
      for (auto& t : inputs) node->parents.push_back(t.shared());
      tape->push(node);
    }
  }
  return Tensor(std::move(node));
}

template <typename F, typename D>
Tensor unary(const Tensor& a, F f, D df_from_xy) {
  std::vector<double> y(a.size());
  const auto& x = a.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = f(x[i]);
  Node* an = a.node();
  return record(a.shape(), std::move(y), {a}, [an, df_from_xy](Node& out) {
    if (!an->requires_grad) return;
    auto& g = an->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) {
      g[i] += out.grad[i] * df_from_xy(an->value[i], out.value[i]);
    }
  });
}

double stable_sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double stable_log_sigmoid(double x) {
  if (x >= 0) return -std::log1p(std::exp(-x));
  return x - std::log1p(std::exp(x));
}

}  // namespace

Tensor Tensor::constant(Shape shape, std::vector<double> values) {
  if (shape_size(shape) != values.size()) {
    throw ShapeError(fmt::format("shape {} does not hold {} values", shape_string(shape),
                                 values.size()));
  }
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(values);
  return Tensor(std::move(node));
}

Tensor Tensor::zeros(Shape shape) {
  const std::size_t n = shape_size(shape);
  return constant(std::move(shape), std::vector<double>(n, 0.0));
}

Tensor Tensor::scalar(double v) { return constant({1}, {v}); }

Tensor Tensor::variable(Shape shape, std::vector<double> values) {
  Tensor t = constant(std::move(shape), std::move(values));
  t.node_->requires_grad = true;
  return t;
}

double Tensor::item() const {
  if (size() != 1) throw ShapeError("item() on a tensor of shape " + shape_string(shape()));
  return node_->value[0];
}

std::vector<double> Tensor::grad() const {
  if (node_->grad.empty()) return std::vector<double>(size(), 0.0);
  return node_->grad;
}

void Tape::backward(const Tensor& loss) {
  if (done_) throw StateError("backward already ran on this tape; reset it first");
  if (loss.size() != 1) throw ShapeError("backward needs a scalar loss");
  done_ = true;
  if (!loss.requires_grad()) return;
  loss.node()->ensure_grad()[0] += 1.0;
  for (auto it = records_.rbegin(); it != records_.rend(); ++it) {
    Node& n = **it;
    if (!n.grad.empty() && n.backward) n.backward(n);
  }
}

void Tape::reset() {
  records_.clear();
  done_ = false;
}

Tape* current_tape() { return g_tape; }

TapeScope::TapeScope(Tape& tape) : previous_(g_tape) { g_tape = &tape; }
TapeScope::~TapeScope() { g_tape = previous_; }

NoGradScope::NoGradScope() : previous_(g_tape) { g_tape = nullptr; }
NoGradScope::~NoGradScope() { g_tape = previous_; }

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> y(a.size());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = a.value()[i] + b.value()[i];
  Node* an = a.node();
  Node* bn = b.node();
  return record(a.shape(), std::move(y), {a, b}, [an, bn](Node& out) {
    for (Node* n : {an, bn}) {
      if (!n->requires_grad) continue;
      auto& g = n->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += out.grad[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<double> y(a.size());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = a.value()[i] - b.value()[i];
  Node* an = a.node();
  Node* bn = b.node();
  return record(a.shape(), std::move(y), {a, b}, [an, bn](Node& out) {
    if (an->requires_grad) {
      auto& g = an->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += out.grad[i];
    }
    if (bn->requires_grad) {
      auto& g = bn->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= out.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> y(a.size());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = a.value()[i] * b.value()[i];
  Node* an = a.node();
  Node* bn = b.node();
  return record(a.shape(), std::move(y), {a, b}, [an, bn](Node& out) {
    if (an->requires_grad) {
      auto& g = an->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += out.grad[i] * bn->value[i];
    }
    if (bn->requires_grad) {
      auto& g = bn->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += out.grad[i] * an->value[i];
    }
  });
}

Tensor scale(const Tensor& a, double c) { return affine(a, c, 0.0); }

Tensor affine(const Tensor& a, double c, double s) {
  return unary(
      a, [c, s](double x) { return c * x + s; }, [c](double, double) { return c; });
}

Tensor sigmoid(const Tensor& a) {
  return unary(a, stable_sigmoid, [](double, double y) { return y * (1.0 - y); });
}

Tensor tanh(const Tensor& a) {
  return unary(
      a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

Tensor log_sigmoid(const Tensor& a) {
  return unary(a, stable_log_sigmoid, [](double x, double) { return stable_sigmoid(-x); });
}

Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.value()) s += v;
  Node* an = a.node();
  return record({1}, {s}, {a}, [an](Node& out) {
    if (!an->requires_grad) return;
    for (auto& g : an->ensure_grad()) g += out.grad[0];
  });
}

Tensor mean(const Tensor& a) { return scale(sum(a), 1.0 / static_cast<double>(a.size())); }

Tensor weighted_sum(const Tensor& a, std::vector<double> weights) {
  if (weights.size() != a.size()) throw ShapeError("weighted_sum: weight count mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < weights.size(); ++i) s += weights[i] * a.value()[i];
  Node* an = a.node();
  return record({1}, {s}, {a}, [an, w = std::move(weights)](Node& out) {
    if (!an->requires_grad) return;
    auto& g = an->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += out.grad[0] * w[i];
  });
}

Tensor dot(const Tensor& a, const Tensor& b) {
  if (a.size() != b.size()) throw ShapeError("dot: length mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a.value()[i] * b.value()[i];
  Node* an = a.node();
  Node* bn = b.node();
  return record({1}, {s}, {a, b}, [an, bn](Node& out) {
    if (an->requires_grad) {
      auto& g = an->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += out.grad[0] * bn->value[i];
    }
    if (bn->requires_grad) {
      auto& g = bn->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += out.grad[0] * an->value[i];
    }
  });
}

Tensor logsumexp(const Tensor& a) {
  return reshape(segment_logsumexp(a.rank() == 1 ? a : reshape(a, {static_cast<int>(a.size())}),
                                   {0, a.size()}),
                 {1});
}

Tensor softmax(const Tensor& a) {
  const int rows = a.rows();
  const int cols = a.cols();
  std::vector<double> y(a.size());
  for (int r = 0; r < rows; ++r) {
    const double* x = a.value().data() + static_cast<std::size_t>(r) * cols;
    double* o = y.data() + static_cast<std::size_t>(r) * cols;
    const double m = *std::max_element(x, x + cols);
    double z = 0.0;
    for (int c = 0; c < cols; ++c) z += (o[c] = std::exp(x[c] - m));
    for (int c = 0; c < cols; ++c) o[c] /= z;
  }
  Node* an = a.node();
  return record(a.shape(), std::move(y), {a}, [an, rows, cols](Node& out) {
    if (!an->requires_grad) return;
    auto& g = an->ensure_grad();
    for (int r = 0; r < rows; ++r) {
      const std::size_t base = static_cast<std::size_t>(r) * cols;
      double inner = 0.0;
      for (int c = 0; c < cols; ++c) inner += out.grad[base + c] * out.value[base + c];
      for (int c = 0; c < cols; ++c) {
        g[base + c] += out.value[base + c] * (out.grad[base + c] - inner);
      }
    }
  });
}

Tensor cosine_similarity(const Tensor& a, const Tensor& b) {
  if (a.size() != b.size()) throw ShapeError("cosine_similarity: length mismatch");
  const int n = static_cast<int>(a.size());
  return reshape(row_cosine(reshape(a, {1, n}), reshape(b, {1, n})), {1});
}

Tensor matvec(const Tensor& w, const Tensor& x) {
  if (w.rank() != 2 || x.rank() != 1) throw ShapeError("matvec expects a matrix and a vector");
  return linear(x, w);
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  if (w.rank() != 2) throw ShapeError("linear: weight must be a matrix");
  const int rows = x.rows();
  const int in = x.cols();
  const int out_dim = w.shape()[0];
  if (w.shape()[1] != in) {
    throw ShapeError(fmt::format("linear: input width {} vs weight {}", in,
                                 shape_string(w.shape())));
  }
  if (b.defined() && (b.rank() != 1 || b.cols() != out_dim)) {
    throw ShapeError("linear: bias shape " + shape_string(b.shape()));
  }
  std::vector<double> y(static_cast<std::size_t>(rows) * out_dim);
  MatMap ym(y.data(), rows, out_dim);
  ym.noalias() = as_matrix(*x.node(), rows, in) * as_matrix(*w.node(), out_dim, in).transpose();
  if (b.defined()) {
    ym.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(b.value().data(), out_dim);
  }
  Shape shape = x.rank() == 1 ? Shape{out_dim} : Shape{rows, out_dim};
  Node* xn = x.node();
  Node* wn = w.node();
  Node* bn = b.defined() ? b.node() : nullptr;
  std::vector<Tensor> inputs{x, w};
  if (b.defined()) inputs.push_back(b);
  return record(std::move(shape), std::move(y), std::move(inputs),
                [xn, wn, bn, rows, in, out_dim](Node& out) {
                  ConstMatMap gy(out.grad.data(), rows, out_dim);
                  if (xn->requires_grad) {
                    grad_matrix(*xn, rows, in).noalias() += gy * as_matrix(*wn, out_dim, in);
                  }
                  if (wn->requires_grad) {
                    grad_matrix(*wn, out_dim, in).noalias() +=
                        gy.transpose() * as_matrix(*xn, rows, in);
                  }
                  if (bn != nullptr && bn->requires_grad) {
                    Eigen::Map<Eigen::RowVectorXd>(bn->ensure_grad().data(), out_dim) +=
                        gy.colwise().sum();
                  }
                });
}

Tensor concat(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat of nothing");
  std::vector<double> y;
  std::vector<Node*> nodes;
  for (const auto& p : parts) {
    if (p.rank() != 1) throw ShapeError("concat expects 1-D tensors");
    y.insert(y.end(), p.value().begin(), p.value().end());
    nodes.push_back(p.node());
  }
  const int n = static_cast<int>(y.size());
  return record({n}, std::move(y), parts, [nodes](Node& out) {
    std::size_t offset = 0;
    for (Node* p : nodes) {
      if (p->requires_grad) {
        auto& g = p->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += out.grad[offset + i];
      }
      offset += p->value.size();
    }
  });
}

Tensor hconcat(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("hconcat of nothing");
  const int rows = parts.front().rows();
  int cols = 0;
  std::vector<Node*> nodes;
  std::vector<int> widths;
  for (const auto& p : parts) {
    if (p.rows() != rows) throw ShapeError("hconcat: row counts differ");
    cols += p.cols();
    nodes.push_back(p.node());
    widths.push_back(p.cols());
  }
  std::vector<double> y(static_cast<std::size_t>(rows) * cols);
  int offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto& v = parts[k].value();
    for (int r = 0; r < rows; ++r) {
      std::copy_n(v.begin() + static_cast<std::size_t>(r) * widths[k], widths[k],
                  y.begin() + static_cast<std::size_t>(r) * cols + offset);
    }
    offset += widths[k];
  }
  const bool vector_out = parts.front().rank() == 1;
  Shape shape = vector_out ? Shape{cols} : Shape{rows, cols};
  return record(std::move(shape), std::move(y), parts, [nodes, widths, rows, cols](Node& out) {
    int off = 0;
    for (std::size_t k = 0; k < nodes.size(); ++k) {
      if (nodes[k]->requires_grad) {
        auto& g = nodes[k]->ensure_grad();
        for (int r = 0; r < rows; ++r) {
          for (int c = 0; c < widths[k]; ++c) {
            g[static_cast<std::size_t>(r) * widths[k] + c] +=
                out.grad[static_cast<std::size_t>(r) * cols + off + c];
          }
        }
      }
      off += widths[k];
    }
  });
}

Tensor vstack(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("vstack of nothing");
  const int cols = parts.front().cols();
  int rows = 0;
  std::vector<double> y;
  std::vector<Node*> nodes;
  for (const auto& p : parts) {
    if (p.cols() != cols) throw ShapeError("vstack: column counts differ");
    rows += p.rows();
    y.insert(y.end(), p.value().begin(), p.value().end());
    nodes.push_back(p.node());
  }
  return record({rows, cols}, std::move(y), parts, [nodes](Node& out) {
    std::size_t offset = 0;
    for (Node* p : nodes) {
      if (p->requires_grad) {
        auto& g = p->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += out.grad[offset + i];
      }
      offset += p->value.size();
    }
  });
}

Tensor slice(const Tensor& a, int begin, int length) {
  if (a.rank() != 1 || begin < 0 || length <= 0 ||
      static_cast<std::size_t>(begin + length) > a.size()) {
    throw ShapeError("slice out of range");
  }
  std::vector<double> y(a.value().begin() + begin, a.value().begin() + begin + length);
  Node* an = a.node();
  return record({length}, std::move(y), {a}, [an, begin](Node& out) {
    if (!an->requires_grad) return;
    auto& g = an->ensure_grad();
    for (std::size_t i = 0; i < out.grad.size(); ++i) g[begin + i] += out.grad[i];
  });
}

Tensor col_slice(const Tensor& a, int begin, int length) {
  const int rows = a.rows();
  const int cols = a.cols();
  if (begin < 0 || length <= 0 || begin + length > cols) throw ShapeError("col_slice out of range");
  std::vector<double> y(static_cast<std::size_t>(rows) * length);
  for (int r = 0; r < rows; ++r) {
    std::copy_n(a.value().begin() + static_cast<std::size_t>(r) * cols + begin, length,
                y.begin() + static_cast<std::size_t>(r) * length);
  }
  Shape shape = a.rank() == 1 ? Shape{length} : Shape{rows, length};
  Node* an = a.node();
  return record(std::move(shape), std::move(y), {a}, [an, rows, cols, begin, length](Node& out) {
    if (!an->requires_grad) return;
    auto& g = an->ensure_grad();
    for (int r = 0; r < rows; ++r) {
      for (int c = 0; c < length; ++c) {
        g[static_cast<std::size_t>(r) * cols + begin + c] +=
            out.grad[static_cast<std::size_t>(r) * length + c];
      }
    }
  });
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_size(shape) != a.size()) {
    throw ShapeError(fmt::format("reshape {} -> {}", shape_string(a.shape()), shape_string(shape)));
  }
  Node* an = a.node();
  return record(std::move(shape), a.value(), {a}, [an](Node& out) {
    if (!an->requires_grad) return;
    auto& g = an->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += out.grad[i];
  });
}

Tensor gather_rows(const Tensor& table, const std::vector<long>& index) {
  const int rows = table.rows();
  const int cols = table.cols();
  if (index.empty()) throw ShapeError("gather_rows with no indices");
  std::vector<double> y(index.size() * cols, 0.0);
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] < -1 || index[i] >= rows) throw ShapeError("gather_rows index out of range");
    if (index[i] < 0) continue;
    std::copy_n(table.value().begin() + index[i] * cols, cols, y.begin() + i * cols);
  }
  Node* tn = table.node();
  return record({static_cast<int>(index.size()), cols}, std::move(y), {table},
                [tn, index, cols](Node& out) {
                  if (!tn->requires_grad) return;
                  auto& g = tn->ensure_grad();
                  for (std::size_t i = 0; i < index.size(); ++i) {
                    if (index[i] < 0) continue;
                    for (int c = 0; c < cols; ++c) g[index[i] * cols + c] += out.grad[i * cols + c];
                  }
                });
}

Tensor row_dot(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "row_dot");
  const int rows = a.rows();
  const int cols = a.cols();
  std::vector<double> y(rows);
  for (int r = 0; r < rows; ++r) {
    double s = 0.0;
    for (int c = 0; c < cols; ++c) s += a.at(r, c) * b.at(r, c);
    y[r] = s;
  }
  Node* an = a.node();
  Node* bn = b.node();
  return record({rows}, std::move(y), {a, b}, [an, bn, rows, cols](Node& out) {
    for (auto [self, other] : {std::pair{an, bn}, std::pair{bn, an}}) {
      if (!self->requires_grad) continue;
      auto& g = self->ensure_grad();
      for (int r = 0; r < rows; ++r) {
        for (int c = 0; c < cols; ++c) {
          const std::size_t i = static_cast<std::size_t>(r) * cols + c;
          g[i] += out.grad[r] * other->value[i];
        }
      }
    }
  });
}

Tensor row_cosine(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "row_cosine");
  const int rows = a.rows();
  const int cols = a.cols();
  std::vector<double> y(rows);
  std::vector<double> na(rows), nb(rows);
  std::vector<char> guarded(rows, 0);
  for (int r = 0; r < rows; ++r) {
    double ab = 0.0, aa = 0.0, bb = 0.0;
    for (int c = 0; c < cols; ++c) {
      ab += a.at(r, c) * b.at(r, c);
      aa += a.at(r, c) * a.at(r, c);
      bb += b.at(r, c) * b.at(r, c);
    }
    na[r] = std::sqrt(aa);
    nb[r] = std::sqrt(bb);
    const double denom = na[r] * nb[r];
    if (denom < kCosineGuard) {
      guarded[r] = 1;
      y[r] = ab / kCosineGuard;
    } else {
      y[r] = ab / denom;
    }
  }
  Node* an = a.node();
  Node* bn = b.node();
  return record({rows}, std::move(y), {a, b},
                [an, bn, rows, cols, na, nb, guarded](Node& out) {
                  for (int pass = 0; pass < 2; ++pass) {
                    Node* self = pass == 0 ? an : bn;
                    Node* other = pass == 0 ? bn : an;
                    const auto& ns = pass == 0 ? na : nb;
                    const auto& no = pass == 0 ? nb : na;
                    if (!self->requires_grad) continue;
                    auto& g = self->ensure_grad();
                    for (int r = 0; r < rows; ++r) {
                      if (guarded[r]) continue;
                      const double cos = out.value[r];
                      for (int c = 0; c < cols; ++c) {
                        const std::size_t i = static_cast<std::size_t>(r) * cols + c;
                        g[i] += out.grad[r] * (other->value[i] / (ns[r] * no[r]) -
                                               cos * self->value[i] / (ns[r] * ns[r]));
                      }
                    }
                  }
                });
}

Tensor segment_logsumexp(const Tensor& a, const std::vector<std::size_t>& offsets) {
  if (a.rank() != 1) throw ShapeError("segment_logsumexp expects a 1-D tensor");
  if (offsets.size() < 2 || offsets.front() != 0 || offsets.back() != a.size()) {
    throw ShapeError("segment_logsumexp: offsets do not cover the input");
  }
  const std::size_t segments = offsets.size() - 1;
  std::vector<double> y(segments);
  for (std::size_t s = 0; s < segments; ++s) {
    if (offsets[s + 1] <= offsets[s]) throw ShapeError("segment_logsumexp: empty segment");
    const auto* x = a.value().data();
    const double m = *std::max_element(x + offsets[s], x + offsets[s + 1]);
    double z = 0.0;
    for (std::size_t i = offsets[s]; i < offsets[s + 1]; ++i) z += std::exp(x[i] - m);
    y[s] = m + std::log(z);
  }
  Node* an = a.node();
  return record({static_cast<int>(segments)}, std::move(y), {a}, [an, offsets](Node& out) {
    if (!an->requires_grad) return;
    auto& g = an->ensure_grad();
    for (std::size_t s = 0; s + 1 < offsets.size(); ++s) {
      for (std::size_t i = offsets[s]; i < offsets[s + 1]; ++i) {
        g[i] += out.grad[s] * std::exp(an->value[i] - out.value[s]);
      }
    }
  });
}

Tensor time_encode(const std::vector<double>& dt, const Tensor& omega, const Tensor& phase) {
  if (omega.rank() != 1 || phase.shape() != omega.shape()) {
    throw ShapeError("time_encode: omega and phase must be equal-length vectors");
  }
  if (dt.empty()) throw ShapeError("time_encode with no inputs");
  const int rows = static_cast<int>(dt.size());
  const int k = omega.cols();
  std::vector<double> y(static_cast<std::size_t>(rows) * k);
  for (int r = 0; r < rows; ++r) {
    for (int j = 0; j < k; ++j) {
      y[static_cast<std::size_t>(r) * k + j] = std::cos(dt[r] * omega.value()[j] + phase.value()[j]);
    }
  }
  Node* on = omega.node();
  Node* pn = phase.node();
  return record({rows, k}, std::move(y), {omega, phase}, [on, pn, dt, rows, k](Node& out) {
    std::vector<double>* go = on->requires_grad ? &on->ensure_grad() : nullptr;
    std::vector<double>* gp = pn->requires_grad ? &pn->ensure_grad() : nullptr;
    for (int r = 0; r < rows; ++r) {
      for (int j = 0; j < k; ++j) {
        const double s =
            -std::sin(dt[r] * on->value[j] + pn->value[j]) * out.grad[static_cast<std::size_t>(r) * k + j];
        if (go) (*go)[j] += s * dt[r];
        if (gp) (*gp)[j] += s;
      }
    }
  });
}

Tensor masked_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                        const std::vector<int>& counts, int slots, int heads,
                        std::vector<double>* weights) {
  const int rows = q.rows();
  const int d = q.cols();
  if (heads <= 0 || d % heads != 0) throw ShapeError("attention: width not divisible by heads");
  if (static_cast<int>(counts.size()) != rows || slots <= 0 || k.rows() != rows * slots ||
      k.shape() != v.shape() || k.cols() != d) {
    throw ShapeError("attention: inconsistent query/key/value shapes");
  }
  const int dh = d / heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<double> attn(static_cast<std::size_t>(rows) * heads * slots, 0.0);
  std::vector<double> y(static_cast<std::size_t>(rows) * d, 0.0);
  const auto& qv = q.value();
  const auto& kv = k.value();
  const auto& vv = v.value();
  for (int r = 0; r < rows; ++r) {
    const int n = counts[r];
    if (n < 0 || n > slots) throw ShapeError("attention: neighbor count out of range");
    if (n == 0) continue;
    for (int h = 0; h < heads; ++h) {
      double* a = attn.data() + (static_cast<std::size_t>(r) * heads + h) * slots;
      const double* qr = qv.data() + static_cast<std::size_t>(r) * d + h * dh;
      for (int j = 0; j < n; ++j) {
        const double* kr = kv.data() + (static_cast<std::size_t>(r) * slots + j) * d + h * dh;
        double s = 0.0;
        for (int c = 0; c < dh; ++c) s += qr[c] * kr[c];
        a[j] = s * inv_sqrt;
      }
      const double m = *std::max_element(a, a + n);
      double z = 0.0;
      for (int j = 0; j < n; ++j) z += (a[j] = std::exp(a[j] - m));
      for (int j = 0; j < n; ++j) a[j] /= z;
      double* yr = y.data() + static_cast<std::size_t>(r) * d + h * dh;
      for (int j = 0; j < n; ++j) {
        const double* vr = vv.data() + (static_cast<std::size_t>(r) * slots + j) * d + h * dh;
        for (int c = 0; c < dh; ++c) yr[c] += a[j] * vr[c];
      }
    }
  }
  if (weights != nullptr) *weights = attn;
  Node* qn = q.node();
  Node* kn = k.node();
  Node* vn = v.node();
  return record(
      q.shape(), std::move(y), {q, k, v},
      [qn, kn, vn, counts, slots, heads, rows, d, dh, inv_sqrt, attn = std::move(attn)](Node& out) {
        std::vector<double>* gq = qn->requires_grad ? &qn->ensure_grad() : nullptr;
        std::vector<double>* gk = kn->requires_grad ? &kn->ensure_grad() : nullptr;
        std::vector<double>* gv = vn->requires_grad ? &vn->ensure_grad() : nullptr;
        std::vector<double> da(slots);
        for (int r = 0; r < rows; ++r) {
          const int n = counts[r];
          for (int h = 0; h < heads; ++h) {
            const double* a = attn.data() + (static_cast<std::size_t>(r) * heads + h) * slots;
            const double* gy = out.grad.data() + static_cast<std::size_t>(r) * d + h * dh;
            double inner = 0.0;
            for (int j = 0; j < n; ++j) {
              const std::size_t kv_off = (static_cast<std::size_t>(r) * slots + j) * d + h * dh;
              double s = 0.0;
              for (int c = 0; c < dh; ++c) s += gy[c] * vn->value[kv_off + c];
              da[j] = s;
              inner += a[j] * s;
              if (gv) {
                for (int c = 0; c < dh; ++c) (*gv)[kv_off + c] += a[j] * gy[c];
              }
            }
            const std::size_t q_off = static_cast<std::size_t>(r) * d + h * dh;
            for (int j = 0; j < n; ++j) {
              const double ds = a[j] * (da[j] - inner) * inv_sqrt;
              const std::size_t kv_off = (static_cast<std::size_t>(r) * slots + j) * d + h * dh;
              if (gq) {
                for (int c = 0; c < dh; ++c) (*gq)[q_off + c] += ds * kn->value[kv_off + c];
              }
              if (gk) {
                for (int c = 0; c < dh; ++c) (*gk)[kv_off + c] += ds * qn->value[q_off + c];
              }
            }
          }
        }
      });
}

Tensor gru_cell(const Tensor& x, const Tensor& h, const GruParams& p) {
  if (x.rows() != h.rows()) throw ShapeError("gru_cell: batch sizes of x and h differ");
  const Tensor z = sigmoid(add(linear(x, p.w_z, p.b_z), linear(h, p.u_z)));
  const Tensor r = sigmoid(add(linear(x, p.w_r, p.b_r), linear(h, p.u_r)));
  const Tensor candidate = tanh(add(linear(x, p.w_h, p.b_h), linear(mul(r, h), p.u_h)));
  if (candidate.shape() != h.shape()) throw ShapeError("gru_cell: hidden width mismatch");
  return add(mul(z, h), mul(affine(z, -1.0, 1.0), candidate));
}

Tensor& ParameterStore::create(const std::string& name, Shape shape, Init init, Rng& rng) {
  const std::size_t n = shape_size(shape);
  std::vector<double> values(n, 0.0);
  if (init == Init::kXavierUniform) {
    const int fan_out = shape.front();
    const int fan_in = shape.size() == 2 ? shape[1] : 1;
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    boost::random::uniform_real_distribution<double> u(-limit, limit);
    for (auto& v : values) v = u(rng);
  }
  return create(name, std::move(shape), std::move(values));
}

Tensor& ParameterStore::create(const std::string& name, Shape shape, std::vector<double> values) {
  if (index_.count(name)) throw ConfigError("duplicate parameter name '" + name + "'");
  index_[name] = slots_.size();
  names_.push_back(name);
  const std::size_t n = values.size();
  slots_.push_back({Tensor::variable(std::move(shape), std::move(values)),
                    std::vector<double>(n, 0.0), std::vector<double>(n, 0.0)});
  return slots_.back().tensor;
}

Tensor& ParameterStore::get(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw ConfigError("unknown parameter '" + name + "'");
  return slots_[it->second].tensor;
}

const Tensor& ParameterStore::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ConfigError("unknown parameter '" + name + "'");
  return slots_[it->second].tensor;
}

std::size_t ParameterStore::parameter_count() const {
  std::size_t n = 0;
  for (const auto& s : slots_) n += s.tensor.size();
  return n;
}

void ParameterStore::zero_grad() {
  for (auto& s : slots_) s.tensor.clear_grad();
}

void ParameterStore::adam_step(const AdamConfig& cfg) {
  ++step_;
  const double t = static_cast<double>(step_);
  const double c1 = 1.0 - std::pow(cfg.beta1, t);
  const double c2 = 1.0 - std::pow(cfg.beta2, t);
  for (auto& s : slots_) {
    const std::vector<double>& g = s.tensor.node()->grad;
    auto& p = s.tensor.mutable_value();
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double gi = g.empty() ? 0.0 : g[i];
      s.m[i] = cfg.beta1 * s.m[i] + (1.0 - cfg.beta1) * gi;
      s.v[i] = cfg.beta2 * s.v[i] + (1.0 - cfg.beta2) * gi * gi;
      const double m_hat = s.m[i] / c1;
      const double v_hat = s.v[i] / c2;
      p[i] -= cfg.learning_rate * m_hat / (std::sqrt(v_hat) + cfg.epsilon);
    }
    s.tensor.clear_grad();
  }
}

nlohmann::ordered_json ParameterStore::to_json() const {
  nlohmann::ordered_json doc = nlohmann::ordered_json::object();
  for (std::size_t i = 0; i < slots_.size(); ++i) {
    doc[names_[i]] = {{"shape", slots_[i].tensor.shape()}, {"values", slots_[i].tensor.value()}};
  }
  return doc;
}

void ParameterStore::load_json(const nlohmann::ordered_json& doc) {
  if (!doc.is_object() || doc.size() != slots_.size()) {
    throw ParseError("checkpoint parameter set does not match the model");
  }
  for (std::size_t i = 0; i < slots_.size(); ++i) {
    if (!doc.contains(names_[i])) throw ParseError("checkpoint lacks parameter '" + names_[i] + "'");
    const auto& entry = doc.at(names_[i]);
    if (entry.at("shape").get<Shape>() != slots_[i].tensor.shape()) {
      throw ParseError("checkpoint shape mismatch for '" + names_[i] + "'");
    }
    auto values = entry.at("values").get<std::vector<double>>();
    if (values.size() != slots_[i].tensor.size()) {
      throw ParseError("checkpoint value count mismatch for '" + names_[i] + "'");
    }
    slots_[i].tensor.mutable_value() = std::move(values);
    slots_[i].tensor.clear_grad();
  }
}

GradCheckResult finite_difference_check(const std::function<Tensor()>& loss_fn,
                                        ParameterStore& store, double eps, double floor) {
  store.zero_grad();
  {
    Tape tape;
    TapeScope scope(tape);
    Tensor loss = loss_fn();
    tape.backward(loss);
  }
  std::vector<std::vector<double>> analytic;
  for (const auto& name : store.names()) analytic.push_back(store.get(name).grad());
  store.zero_grad();

  GradCheckResult result;
  NoGradScope no_grad;
  for (std::size_t p = 0; p < store.names().size(); ++p) {
    auto& values = store.get(store.names()[p]).mutable_value();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + eps;
      const double up = loss_fn().item();
      values[i] = saved - eps;
      const double down = loss_fn().item();
      values[i] = saved;
      const double numeric = (up - down) / (2.0 * eps);
      const double a = analytic[p][i];
      const double denom = std::max({std::abs(a), std::abs(numeric), floor});
      const double rel = std::abs(a - numeric) / denom;
      ++result.coordinates;
      if (rel > result.max_relative_error || result.coordinates == 1) {
        result.max_relative_error = rel;
        result.worst_parameter = store.names()[p];
        result.worst_index = i;
        result.analytic = a;
        result.numeric = numeric;
      }
    }
  }
  return result;
}

}  // namespace pfotgn::ad
