#pragma once

#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pfotgn/common.hpp"

// Tape-based reverse-mode differentiation over small dense tensors.
//
// Tensors are 1-D ({n}) or 2-D ({rows, cols}, row-major). A 1-D tensor acts as
// a single row wherever a matrix is expected. Scalars have shape {1}.
//
// Operations record themselves on the thread's active Tape only when some
// input requires a gradient. Without an active tape every op is a plain
// forward computation, which is how evaluation runs.
namespace pfotgn::ad {

using Shape = std::vector<int>;

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until something flows into it
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  std::vector<double>& ensure_grad() {
    if (grad.empty()) grad.assign(value.size(), 0.0);
    return grad;
  }
};

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  static Tensor constant(Shape shape, std::vector<double> values);
  static Tensor zeros(Shape shape);
  static Tensor scalar(double v);
  // A leaf the tape differentiates with respect to (model parameters).
  static Tensor variable(Shape shape, std::vector<double> values);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int rank() const { return static_cast<int>(node_->shape.size()); }
  int rows() const { return rank() == 2 ? node_->shape[0] : 1; }
  int cols() const { return node_->shape.back(); }
  std::size_t size() const { return node_->value.size(); }

  const std::vector<double>& value() const { return node_->value; }
  std::vector<double>& mutable_value() { return node_->value; }
  double item() const;
  double at(int r, int c) const { return node_->value[static_cast<std::size_t>(r) * cols() + c]; }

  // Zero-filled when no gradient reached this tensor.
  std::vector<double> grad() const;
  void clear_grad() { node_->grad.clear(); }
  bool requires_grad() const { return node_->requires_grad; }

  Node* node() const { return node_.get(); }
  const std::shared_ptr<Node>& shared() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

// Append-only record of executed operations.
class Tape {
 public:
  void push(std::shared_ptr<Node> node) { records_.push_back(std::move(node)); }
  std::size_t size() const { return records_.size(); }

  // Seeds d(loss)/d(loss) = 1 and runs every recorded rule once, in reverse.
  // Gradients accumulate into leaf variables. StateError on a second call.
  void backward(const Tensor& loss);
  void reset();

 private:
  std::vector<std::shared_ptr<Node>> records_;
  bool done_ = false;
};

Tape* current_tape();

// Makes `tape` the thread's active tape for the scope's lifetime.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* previous_;
};

// Suspends recording (no-grad region).
class NoGradScope {
 public:
  NoGradScope();
  ~NoGradScope();
  NoGradScope(const NoGradScope&) = delete;
  NoGradScope& operator=(const NoGradScope&) = delete;

 private:
  Tape* previous_;
};

// Elementwise, same shape.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
// c * a + s
Tensor affine(const Tensor& a, double c, double s);
Tensor sigmoid(const Tensor& a);
Tensor tanh(const Tensor& a);
// log(sigmoid(x)) = -softplus(-x), branch-stable.
Tensor log_sigmoid(const Tensor& a);

// Reductions to a scalar {1}.
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
Tensor weighted_sum(const Tensor& a, std::vector<double> weights);
Tensor dot(const Tensor& a, const Tensor& b);
Tensor logsumexp(const Tensor& a);

// Rowwise softmax with max subtraction.
Tensor softmax(const Tensor& a);
// Cosine similarity of two vectors with a 1e-12 guard on the norm product;
// a zero vector yields 0 with zero gradient.
Tensor cosine_similarity(const Tensor& a, const Tensor& b);

// W {out, in} times x {in} -> {out}.
Tensor matvec(const Tensor& w, const Tensor& x);
// x W^T (+ b). x is {in} or {rows, in}; result keeps x's rank.
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b = {});

Tensor concat(const std::vector<Tensor>& parts);   // 1-D pieces
Tensor hconcat(const std::vector<Tensor>& parts);  // equal row counts
Tensor vstack(const std::vector<Tensor>& parts);   // equal column counts
Tensor slice(const Tensor& a, int begin, int length);      // 1-D
Tensor col_slice(const Tensor& a, int begin, int length);  // columns of a matrix
Tensor reshape(const Tensor& a, Shape shape);

// Rows of `table` by index; index -1 gives a zero row.
Tensor gather_rows(const Tensor& table, const std::vector<long>& index);

// Rowwise reductions of two equally shaped matrices -> {rows}.
Tensor row_dot(const Tensor& a, const Tensor& b);
Tensor row_cosine(const Tensor& a, const Tensor& b);

// Log-sum-exp of each segment [offsets[s], offsets[s+1]) of a 1-D tensor.
Tensor segment_logsumexp(const Tensor& a, const std::vector<std::size_t>& offsets);

// cos(dt[r] * omega[k] + phase[k]) -> {rows, k}. `dt` is data, not a tensor.
Tensor time_encode(const std::vector<double>& dt, const Tensor& omega, const Tensor& phase);

// Multi-head scaled dot-product attention of each query row over its own
// block of `slots` key/value rows, of which the first counts[q] are real.
// q: {r, d}; k, v: {r * slots, d}. Queries without keys produce zeros.
// If `weights` is given it receives the per-head attention weights laid out
// as [q][head][slot] (zeros on padding).
Tensor masked_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                        const std::vector<int>& counts, int slots, int heads,
                        std::vector<double>* weights = nullptr);

struct GruParams {
  Tensor w_z, u_z, b_z;
  Tensor w_r, u_r, b_r;
  Tensor w_h, u_h, b_h;
};

// z = sig(W_z x + U_z h + b_z), r = sig(W_r x + U_r h + b_r),
// h~ = tanh(W_h x + U_h (r*h) + b_h), h' = z*h + (1-z)*h~.
// x and h may be single vectors or row batches.
Tensor gru_cell(const Tensor& x, const Tensor& h, const GruParams& p);

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

enum class Init { kXavierUniform, kZeros };

// Named trainable tensors, in creation order, with Adam state.
class ParameterStore {
 public:
  Tensor& create(const std::string& name, Shape shape, Init init, Rng& rng);
  Tensor& create(const std::string& name, Shape shape, std::vector<double> values);

  Tensor& get(const std::string& name);
  const Tensor& get(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  const std::vector<std::string>& names() const { return names_; }
  std::size_t parameter_count() const;
  std::uint64_t step_count() const { return step_; }

  void zero_grad();
  // One Adam update from the accumulated gradients, then clears them.
  void adam_step(const AdamConfig& cfg);

  // {"name": {"shape": [...], "values": [...]}, ...} in creation order.
  nlohmann::ordered_json to_json() const;
  // Overwrites values; names and shapes must match exactly.
  void load_json(const nlohmann::ordered_json& doc);

 private:
  struct Slot {
    Tensor tensor;
    std::vector<double> m, v;
  };
  std::vector<std::string> names_;
  std::vector<Slot> slots_;
  std::map<std::string, std::size_t> index_;
  std::uint64_t step_ = 0;
};

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::string worst_parameter;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  std::size_t coordinates = 0;
};

// Compares the tape gradient of `loss_fn` against central differences
// (f(p + eps) - f(p - eps)) / 2eps for every coordinate of every parameter.
// Relative error uses max(|analytic|, |numeric|, floor) as denominator. The
// default floor keeps gradients below the roundoff of a central difference
// at eps = 1e-5 (about 1e-10 absolute) from dominating the maximum.
// `loss_fn` must build the loss from the store's current values.
GradCheckResult finite_difference_check(const std::function<Tensor()>& loss_fn,
                                        ParameterStore& store, double eps = 1e-5,
                                        double floor = 1e-6);

}  // namespace pfotgn::ad
