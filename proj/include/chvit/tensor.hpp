#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace chvit {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& shape);
std::size_t shape_size(const Shape& shape);

/// Dense row-major array of doubles.
struct Tensor {
  Shape shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(Shape s, double fill = 0.0);
  Tensor(Shape s, std::vector<double> values);

  static Tensor scalar(double v) { return Tensor({1}, {v}); }

  std::size_t size() const { return data.size(); }
  std::size_t rank() const { return shape.size(); }
  bool empty() const { return data.empty(); }

  // 2-D accessors; rows() treats every leading dim as one row axis.
  std::size_t cols() const { return shape.empty() ? 1 : shape.back(); }
  std::size_t rows() const { return cols() == 0 ? 0 : size() / cols(); }
  double& operator()(std::size_t r, std::size_t c) { return data[r * cols() + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data[r * cols() + c]; }
  double& operator[](std::size_t i) { return data[i]; }
  double operator[](std::size_t i) const { return data[i]; }

  std::span<double> row(std::size_t r) { return {data.data() + r * cols(), cols()}; }
  std::span<const double> row(std::size_t r) const { return {data.data() + r * cols(), cols()}; }

  bool all_finite() const;
  void fill(double v);
};

class Graph;

/// Handle to a node in a Graph. Cheap to copy; valid while the graph lives.
struct Var {
  Graph* graph = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape; }
};

/// Reverse-mode tape. Nodes are appended in topological order, so backward is a
/// single reverse sweep. A graph belongs to one thread.
class Graph {
 public:
  using Backward = std::function<void(Graph&, std::size_t self)>;

  /// With record_grad = false no closures are stored (inference mode).
  explicit Graph(bool record_grad = true) : record_grad_(record_grad) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var constant(Tensor value);

  /// Leaf that reads `value` in place. When `grad_sink` is non-null, backward
  /// accumulates this leaf's gradient straight into it.
  Var parameter(const Tensor& value, Tensor* grad_sink);

  Var record(const char* op, Tensor value, Backward backward);

  const Tensor& value(std::size_t id) const;
  const Tensor& value(Var v) const { return value(v.id); }

  /// Gradient buffer of node `id`, zero-filled on first access.
  Tensor& grad(std::size_t id);
  Tensor& grad(Var v) { return grad(v.id); }
  bool has_grad(std::size_t id) const;

  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  bool records_grad() const { return record_grad_; }
  std::size_t size() const { return nodes_.size(); }

  /// Seeds d(root)/d(root) = 1 on a single-element root.
  void backward(Var root);
  void backward(Var root, const Tensor& seed);

 private:
  struct Node {
    Tensor value;
    const Tensor* external = nullptr;
    Tensor grad;
    Tensor* sink = nullptr;
    bool requires_grad = false;
    bool touched = false;
    Backward backward;
  };

  std::vector<Node> nodes_;
  bool record_grad_;
};

// ---------------------------------------------------------------------------
// Differentiable operations. All 2-D unless noted; shapes are checked and a
// DimensionError names both operands on mismatch.

Var matmul(Var a, Var b);
Var transpose(Var a);
Var add(Var a, Var b);
/// x[L, D] + bias broadcast over rows; bias has D elements.
Var add_row(Var x, Var bias);
Var scale(Var a, double factor);
/// Tanh-approximated GELU.
Var gelu(Var a);
/// Softmax over the last axis with max subtraction.
Var softmax(Var a);
Var layer_norm(Var x, Var gamma, Var beta, double eps = 1e-6);
/// Mean negative log-likelihood of `labels` under row-wise softmax of logits[B, K].
Var cross_entropy(Var logits, std::span<const std::size_t> labels);
Var concat_rows(std::span<const Var> parts);
Var concat_cols(std::span<const Var> parts);
Var slice_rows(Var a, std::size_t begin, std::size_t count);
Var slice_cols(Var a, std::size_t begin, std::size_t count);
/// Row r of a as shape [1, D].
inline Var row(Var a, std::size_t r) { return slice_rows(a, r, 1); }
Var mean_rows(Var a);
Var sum(Var a);

/// Multi-head scaled dot-product self-attention over x[L, d]; no projection biases.
/// When `attention` is non-null the per-head probability nodes [L, L] are appended
/// to it, in head order.
Var multihead_attention(Var x, Var wq, Var wk, Var wv, Var wo, std::size_t heads,
                        std::vector<Var>* attention = nullptr);

}  // namespace chvit
