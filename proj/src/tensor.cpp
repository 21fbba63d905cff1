#include "chvit/tensor.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include "chvit/errors.hpp"

namespace chvit {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMatrix>;
using ConstMatMap = Eigen::Map<const RowMatrix>;

ConstMatMap as_matrix(const Tensor& t) {
  return {t.data.data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols())};
}
MatMap as_matrix(Tensor& t) {
  return {t.data.data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols())};
}

void require_rank2(const char* op, const Tensor& t) {
  if (t.rank() != 2) {
    throw DimensionError(std::string(op) + ": expected a 2-D operand, got " + shape_str(t.shape));
  }
}

[[noreturn]] void mismatch(const char* op, const Shape& a, const Shape& b) {
  throw DimensionError(std::string(op) + ": incompatible shapes " + shape_str(a) + " and " +
                       shape_str(b));
}

bool needs(const Graph& g, Var v) { return g.records_grad() && g.requires_grad(v.id); }

Graph& graph_of(Var v) {
  if (v.graph == nullptr) throw StateError("operation on an unbound Var");
  return *v.graph;
}

Graph& same_graph(Var a, Var b) {
  if (a.graph != b.graph) throw StateError("operands belong to different graphs");
  return graph_of(a);
}

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2 / pi)
constexpr double kGeluA = 0.044715;

}  // namespace

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

Tensor::Tensor(Shape s, double fill) : shape(std::move(s)), data(shape_size(shape), fill) {}

Tensor::Tensor(Shape s, std::vector<double> values) : shape(std::move(s)), data(std::move(values)) {
  if (shape_size(shape) != data.size()) {
    throw DimensionError("tensor shape " + shape_str(shape) + " holds " +
                         std::to_string(shape_size(shape)) + " values, got " +
                         std::to_string(data.size()));
  }
}

bool Tensor::all_finite() const {
  return std::all_of(data.begin(), data.end(), [](double v) { return std::isfinite(v); });
}

void Tensor::fill(double v) { std::fill(data.begin(), data.end(), v); }

const Tensor& Var::value() const { return graph_of(*this).value(id); }

// ---------------------------------------------------------------------------
// Graph

Var Graph::constant(Tensor value) {
  Node n;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return {this, nodes_.size() - 1};
}

Var Graph::parameter(const Tensor& value, Tensor* grad_sink) {
  Node n;
  n.external = &value;
  n.sink = grad_sink;
  n.requires_grad = record_grad_;
  nodes_.push_back(std::move(n));
  return {this, nodes_.size() - 1};
}

Var Graph::record(const char* op, Tensor value, Backward backward) {
  if (!value.all_finite()) {
    throw NumericError(std::string("non-finite value produced by ") + op + " (shape " +
                       shape_str(value.shape) + ")");
  }
  Node n;
  n.value = std::move(value);
  if (record_grad_ && backward) {
    n.requires_grad = true;
    n.backward = std::move(backward);
  }
  nodes_.push_back(std::move(n));
  return {this, nodes_.size() - 1};
}

const Tensor& Graph::value(std::size_t id) const {
  const Node& n = nodes_.at(id);
  return n.external ? *n.external : n.value;
}

Tensor& Graph::grad(std::size_t id) {
  Node& n = nodes_.at(id);
  n.touched = true;
  Tensor& g = n.sink ? *n.sink : n.grad;
  const Tensor& v = n.external ? *n.external : n.value;
  if (g.size() != v.size()) g = Tensor(v.shape);
  return g;
}

bool Graph::has_grad(std::size_t id) const {
  const Node& n = nodes_.at(id);
  return (n.sink ? n.sink->size() : n.grad.size()) != 0;
}

void Graph::backward(Var root) {
  if (value(root.id).size() != 1) {
    throw DimensionError("backward without a seed needs a single-element root, got " +
                         shape_str(value(root.id).shape));
  }
  backward(root, Tensor(value(root.id).shape, 1.0));
}

void Graph::backward(Var root, const Tensor& seed) {
  if (root.graph != this) throw StateError("backward root belongs to another graph");
  if (!record_grad_) throw StateError("backward on a graph built without gradient recording");
  if (seed.size() != value(root.id).size()) mismatch("backward seed", seed.shape, value(root.id).shape);
  for (Node& n : nodes_) n.touched = false;
  Tensor& g = grad(root.id);
  for (std::size_t i = 0; i < g.size(); ++i) g[i] += seed[i];
  for (std::size_t id = root.id + 1; id-- > 0;) {
    Node& n = nodes_[id];
    if (n.backward && n.touched) n.backward(*this, id);
  }
}


// ---------------------------------------------------------------------------
// Operations

Var matmul(Var a, Var b) {
  Graph& g = same_graph(a, b);
  const Tensor& lhs = a.value();
  const Tensor& rhs = b.value();
  require_rank2("matmul", lhs);
  require_rank2("matmul", rhs);
  if (lhs.shape[1] != rhs.shape[0]) mismatch("matmul", lhs.shape, rhs.shape);
  Tensor out({lhs.shape[0], rhs.shape[1]});
  as_matrix(out).noalias() = as_matrix(lhs) * as_matrix(rhs);
  Graph::Backward bw;
  if (needs(g, a) || needs(g, b)) {
    bw = [ia = a.id, ib = b.id](Graph& g, std::size_t self) {
      const Tensor& go = g.grad(self);
      if (g.requires_grad(ia)) {
        as_matrix(g.grad(ia)).noalias() += as_matrix(go) * as_matrix(g.value(ib)).transpose();
      }
      if (g.requires_grad(ib)) {
        as_matrix(g.grad(ib)).noalias() += as_matrix(g.value(ia)).transpose() * as_matrix(go);
      }
    };
  }
  return g.record("matmul", std::move(out), std::move(bw));
}

Var transpose(Var a) {
  Graph& g = graph_of(a);
  const Tensor& in = a.value();
  require_rank2("transpose", in);
  Tensor out({in.shape[1], in.shape[0]});
  as_matrix(out) = as_matrix(in).transpose();
  Graph::Backward bw;
  if (needs(g, a)) {
    bw = [ia = a.id](Graph& g, std::size_t self) {
      as_matrix(g.grad(ia)) += as_matrix(g.grad(self)).transpose();
    };
  }
  return g.record("transpose", std::move(out), std::move(bw));
}

Var add(Var a, Var b) {
  Graph& g = same_graph(a, b);
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  if (x.shape != y.shape) mismatch("add", x.shape, y.shape);
  Tensor out = x;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += y[i];
  Graph::Backward bw;
  if (needs(g, a) || needs(g, b)) {
    bw = [ia = a.id, ib = b.id](Graph& g, std::size_t self) {
      const Tensor& go = g.grad(self);
      for (std::size_t id : {ia, ib}) {
        if (!g.requires_grad(id)) continue;
        Tensor& gi = g.grad(id);
        for (std::size_t i = 0; i < gi.size(); ++i) gi[i] += go[i];
      }
    };
  }
  return g.record("add", std::move(out), std::move(bw));
}

Var add_row(Var x, Var bias) {
  Graph& g = same_graph(x, bias);
  const Tensor& in = x.value();
  const Tensor& b = bias.value();
  if (b.size() != in.cols()) mismatch("add_row", in.shape, b.shape);
  Tensor out = in;
  const std::size_t cols = in.cols();
  for (std::size_t r = 0; r < in.rows(); ++r) {
    for (std::size_t c = 0; c < cols; ++c) out.data[r * cols + c] += b[c];
  }
  Graph::Backward bw;
  if (needs(g, x) || needs(g, bias)) {
    bw = [ix = x.id, ib = bias.id](Graph& g, std::size_t self) {
      const Tensor& go = g.grad(self);
      if (g.requires_grad(ix)) {
        Tensor& gx = g.grad(ix);
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += go[i];
      }
      if (g.requires_grad(ib)) {
        Tensor& gb = g.grad(ib);
        const std::size_t cols = gb.size();
        for (std::size_t i = 0; i < go.size(); ++i) gb[i % cols] += go[i];
      }
    };
  }
  return g.record("add_row", std::move(out), std::move(bw));
}

Var scale(Var a, double factor) {
  Graph& g = graph_of(a);
  Tensor out = a.value();
  for (double& v : out.data) v *= factor;
  Graph::Backward bw;
  if (needs(g, a)) {
    bw = [ia = a.id, factor](Graph& g, std::size_t self) {
      const Tensor& go = g.grad(self);
      Tensor& ga = g.grad(ia);
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += factor * go[i];
    };
  }
  return g.record("scale", std::move(out), std::move(bw));
}

Var gelu(Var a) {
  Graph& g = graph_of(a);
  const Tensor& in = a.value();
  Tensor out(in.shape);
  for (std::size_t i = 0; i < in.size(); ++i) {
    const double x = in[i];
    out[i] = 0.5 * x * (1.0 + std::tanh(kGeluC * (x + kGeluA * x * x * x)));
  }
  Graph::Backward bw;
  if (needs(g, a)) {
    bw = [ia = a.id](Graph& g, std::size_t self) {
      const Tensor& go = g.grad(self);
      const Tensor& in = g.value(ia);
      Tensor& ga = g.grad(ia);
      for (std::size_t i = 0; i < in.size(); ++i) {
        const double x = in[i];
        const double t = std::tanh(kGeluC * (x + kGeluA * x * x * x));
        const double dt = (1.0 - t * t) * kGeluC * (1.0 + 3.0 * kGeluA * x * x);
        ga[i] += go[i] * (0.5 * (1.0 + t) + 0.5 * x * dt);
      }
    };
  }
  return g.record("gelu", std::move(out), std::move(bw));
}

Var softmax(Var a) {
  Graph& g = graph_of(a);
  const Tensor& in = a.value();
  if (in.cols() == 0) throw DimensionError("softmax: empty last axis");
  Tensor out(in.shape);
  for (std::size_t r = 0; r < in.rows(); ++r) {
    auto x = in.row(r);
    auto y = out.row(r);
    const double peak = *std::max_element(x.begin(), x.end());
    double total = 0.0;
    for (std::size_t c = 0; c < x.size(); ++c) {
      y[c] = std::exp(x[c] - peak);
      total += y[c];
    }
    for (double& v : y) v /= total;
  }
  Graph::Backward bw;
  if (needs(g, a)) {
    bw = [ia = a.id](Graph& g, std::size_t self) {
      const Tensor& y = g.value(self);
      const Tensor& go = g.grad(self);
      Tensor& ga = g.grad(ia);
      for (std::size_t r = 0; r < y.rows(); ++r) {
        auto yr = y.row(r);
        auto gr = go.row(r);
        double dot = 0.0;
        for (std::size_t c = 0; c < yr.size(); ++c) dot += yr[c] * gr[c];
        auto out = ga.row(r);
        for (std::size_t c = 0; c < yr.size(); ++c) out[c] += yr[c] * (gr[c] - dot);
      }
    };
  }
  return g.record("softmax", std::move(out), std::move(bw));
}

Var layer_norm(Var x, Var gamma, Var beta, double eps) {
  Graph& g = same_graph(x, gamma);
  same_graph(x, beta);
  if (!(eps > 0.0)) throw ConfigError("layer_norm: eps must be positive");
  const Tensor& in = x.value();
  const std::size_t d = in.cols();
  if (d == 0) throw DimensionError("layer_norm: empty feature axis");
  if (gamma.value().size() != d) mismatch("layer_norm gamma", in.shape, gamma.value().shape);
  if (beta.value().size() != d) mismatch("layer_norm beta", in.shape, beta.value().shape);
  const Tensor& ga = gamma.value();
  const Tensor& be = beta.value();
  const std::size_t rows = in.rows();
  Tensor out(in.shape);
  std::vector<double> normalized(in.size());
  std::vector<double> inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    auto xr = in.row(r);
    double mean = 0.0;
    for (double v : xr) mean += v;
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (double v : xr) var += (v - mean) * (v - mean);
    var /= static_cast<double>(d);
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std[r] = is;
    for (std::size_t c = 0; c < d; ++c) {
      const double xh = (xr[c] - mean) * is;
      normalized[r * d + c] = xh;
      out.data[r * d + c] = xh * ga[c] + be[c];
    }
  }
  Graph::Backward bw;
  if (needs(g, x) || needs(g, gamma) || needs(g, beta)) {
    bw = [ix = x.id, ig = gamma.id, ib = beta.id, d, normalized = std::move(normalized),
          inv_std = std::move(inv_std)](Graph& g, std::size_t self) {
      const Tensor& go = g.grad(self);
      const Tensor& ga = g.value(ig);
      const std::size_t rows = go.size() / d;
      if (g.requires_grad(ig)) {
        Tensor& gg = g.grad(ig);
        for (std::size_t i = 0; i < go.size(); ++i) gg[i % d] += go[i] * normalized[i];
      }
      if (g.requires_grad(ib)) {
        Tensor& gb = g.grad(ib);
        for (std::size_t i = 0; i < go.size(); ++i) gb[i % d] += go[i];
      }
      if (g.requires_grad(ix)) {
        Tensor& gx = g.grad(ix);
        std::vector<double> dxh(d);
        for (std::size_t r = 0; r < rows; ++r) {
          double mean_dxh = 0.0;
          double mean_dxh_xh = 0.0;
          for (std::size_t c = 0; c < d; ++c) {
            dxh[c] = go[r * d + c] * ga[c];
            mean_dxh += dxh[c];
            mean_dxh_xh += dxh[c] * normalized[r * d + c];
          }
          mean_dxh /= static_cast<double>(d);
          mean_dxh_xh /= static_cast<double>(d);
          for (std::size_t c = 0; c < d; ++c) {
            gx[r * d + c] +=
                inv_std[r] * (dxh[c] - mean_dxh - normalized[r * d + c] * mean_dxh_xh);
          }
        }
      }
    };
  }
  return g.record("layer_norm", std::move(out), std::move(bw));
}

Var cross_entropy(Var logits, std::span<const std::size_t> labels) {
  Graph& g = graph_of(logits);
  const Tensor& in = logits.value();
  require_rank2("cross_entropy", in);
  const std::size_t batch = in.shape[0];
  const std::size_t classes = in.shape[1];
  if (labels.size() != batch) {
    throw DimensionError("cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                         std::to_string(batch) + " rows of logits");
  }
  if (batch == 0) throw InputError("cross_entropy: empty batch");
  std::vector<double> probs(in.size());
  double loss = 0.0;
  for (std::size_t r = 0; r < batch; ++r) {
    if (labels[r] >= classes) {
      throw InputError("cross_entropy: label " + std::to_string(labels[r]) + " outside [0, " +
                       std::to_string(classes) + ")");
    }
    auto x = in.row(r);
    const double peak = *std::max_element(x.begin(), x.end());
    double total = 0.0;
    for (std::size_t c = 0; c < classes; ++c) total += std::exp(x[c] - peak);
    const double log_z = peak + std::log(total);
    for (std::size_t c = 0; c < classes; ++c) probs[r * classes + c] = std::exp(x[c] - log_z);
    loss += log_z - x[labels[r]];
  }
  loss /= static_cast<double>(batch);
  Graph::Backward bw;
  if (needs(g, logits)) {
    bw = [il = logits.id, probs = std::move(probs),
          targets = std::vector<std::size_t>(labels.begin(), labels.end()),
          classes](Graph& g, std::size_t self) {
      const double go = g.grad(self)[0];
      Tensor& gl = g.grad(il);
      const double w = go / static_cast<double>(targets.size());
      for (std::size_t i = 0; i < probs.size(); ++i) gl[i] += w * probs[i];
      for (std::size_t r = 0; r < targets.size(); ++r) gl[r * classes + targets[r]] -= w;
    };
  }
  return g.record("cross_entropy", Tensor::scalar(loss), std::move(bw));
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw DimensionError("concat_rows: no operands");
  Graph& g = graph_of(parts[0]);
  const std::size_t cols = parts[0].value().cols();
  std::size_t rows = 0;
  bool grad = false;
  for (const Var& p : parts) {
    if (p.graph != &g) throw StateError("operands belong to different graphs");
    require_rank2("concat_rows", p.value());
    if (p.value().cols() != cols) mismatch("concat_rows", parts[0].value().shape, p.value().shape);
    rows += p.value().rows();
    grad = grad || needs(g, p);
  }
  Tensor out({rows, cols});
  std::size_t offset = 0;
  for (const Var& p : parts) {
    const Tensor& v = p.value();
    std::copy(v.data.begin(), v.data.end(), out.data.begin() + static_cast<std::ptrdiff_t>(offset));
    offset += v.size();
  }
  Graph::Backward bw;
  if (grad) {
    std::vector<std::size_t> ids;
    for (const Var& p : parts) ids.push_back(p.id);
    bw = [ids = std::move(ids)](Graph& g, std::size_t self) {
      const Tensor& go = g.grad(self);
      std::size_t offset = 0;
      for (std::size_t id : ids) {
        const std::size_t n = g.value(id).size();
        if (g.requires_grad(id)) {
          Tensor& gi = g.grad(id);
          for (std::size_t i = 0; i < n; ++i) gi[i] += go[offset + i];
        }
        offset += n;
      }
    };
  }
  return g.record("concat_rows", std::move(out), std::move(bw));
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no operands");
  Graph& g = graph_of(parts[0]);
  const std::size_t rows = parts[0].value().rows();
  std::size_t cols = 0;
  bool grad = false;
  for (const Var& p : parts) {
    if (p.graph != &g) throw StateError("operands belong to different graphs");
    require_rank2("concat_cols", p.value());
    if (p.value().rows() != rows) mismatch("concat_cols", parts[0].value().shape, p.value().shape);
    cols += p.value().cols();
    grad = grad || needs(g, p);
  }
  Tensor out({rows, cols});
  std::size_t offset = 0;
  for (const Var& p : parts) {
    const Tensor& v = p.value();
    for (std::size_t r = 0; r < rows; ++r) {
      std::copy_n(v.data.begin() + static_cast<std::ptrdiff_t>(r * v.cols()), v.cols(),
                  out.data.begin() + static_cast<std::ptrdiff_t>(r * cols + offset));
    }
    offset += v.cols();
  }
  Graph::Backward bw;
  if (grad) {
    std::vector<std::size_t> ids;
    for (const Var& p : parts) ids.push_back(p.id);
    bw = [ids = std::move(ids), rows, cols](Graph& g, std::size_t self) {
      const Tensor& go = g.grad(self);
      std::size_t offset = 0;
      for (std::size_t id : ids) {
        const std::size_t w = g.value(id).cols();
        if (g.requires_grad(id)) {
          Tensor& gi = g.grad(id);
          for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t c = 0; c < w; ++c) gi[r * w + c] += go[r * cols + offset + c];
          }
        }
        offset += w;
      }
    };
  }
  return g.record("concat_cols", std::move(out), std::move(bw));
}

Var slice_rows(Var a, std::size_t begin, std::size_t count) {
  Graph& g = graph_of(a);
  const Tensor& in = a.value();
  require_rank2("slice_rows", in);
  if (begin + count > in.rows() || count == 0) {
    throw DimensionError("slice_rows: rows [" + std::to_string(begin) + ", " +
                         std::to_string(begin + count) + ") out of " + shape_str(in.shape));
  }
  const std::size_t cols = in.cols();
  Tensor out({count, cols});
  std::copy_n(in.data.begin() + static_cast<std::ptrdiff_t>(begin * cols), count * cols,
              out.data.begin());
  Graph::Backward bw;
  if (needs(g, a)) {
    bw = [ia = a.id, offset = begin * cols](Graph& g, std::size_t self) {
      const Tensor& go = g.grad(self);
      Tensor& ga = g.grad(ia);
      for (std::size_t i = 0; i < go.size(); ++i) ga[offset + i] += go[i];
    };
  }
  return g.record("slice_rows", std::move(out), std::move(bw));
}

Var slice_cols(Var a, std::size_t begin, std::size_t count) {
  Graph& g = graph_of(a);
  const Tensor& in = a.value();
  require_rank2("slice_cols", in);
  if (begin + count > in.cols() || count == 0) {
    throw DimensionError("slice_cols: cols [" + std::to_string(begin) + ", " +
                         std::to_string(begin + count) + ") out of " + shape_str(in.shape));
  }
  const std::size_t rows = in.rows();
  const std::size_t cols = in.cols();
  Tensor out({rows, count});
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(in.data.begin() + static_cast<std::ptrdiff_t>(r * cols + begin), count,
                out.data.begin() + static_cast<std::ptrdiff_t>(r * count));
  }
  Graph::Backward bw;
  if (needs(g, a)) {
    bw = [ia = a.id, begin, count, cols](Graph& g, std::size_t self) {
      const Tensor& go = g.grad(self);
      Tensor& ga = g.grad(ia);
      const std::size_t rows = go.size() / count;
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < count; ++c) ga[r * cols + begin + c] += go[r * count + c];
      }
    };
  }
  return g.record("slice_cols", std::move(out), std::move(bw));
}

Var mean_rows(Var a) {
  Graph& g = graph_of(a);
  const Tensor& in = a.value();
  require_rank2("mean_rows", in);
  const std::size_t rows = in.rows();
  const std::size_t cols = in.cols();
  if (rows == 0) throw DimensionError("mean_rows: no rows");
  Tensor out({1, cols});
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) out[c] += in(r, c);
  }
  for (double& v : out.data) v /= static_cast<double>(rows);
  Graph::Backward bw;
  if (needs(g, a)) {
    bw = [ia = a.id, rows, cols](Graph& g, std::size_t self) {
      const Tensor& go = g.grad(self);
      Tensor& ga = g.grad(ia);
      const double w = 1.0 / static_cast<double>(rows);
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) ga[r * cols + c] += w * go[c];
      }
    };
  }
  return g.record("mean_rows", std::move(out), std::move(bw));
}

Var sum(Var a) {
  Graph& g = graph_of(a);
  double total = 0.0;
  for (double v : a.value().data) total += v;
  Graph::Backward bw;
  if (needs(g, a)) {
    bw = [ia = a.id](Graph& g, std::size_t self) {
      const double go = g.grad(self)[0];
      Tensor& ga = g.grad(ia);
      for (double& v : ga.data) v += go;
    };
  }
  return g.record("sum", Tensor::scalar(total), std::move(bw));
}

Var multihead_attention(Var x, Var wq, Var wk, Var wv, Var wo, std::size_t heads,
                        std::vector<Var>* attention) {
  const Tensor& in = x.value();
  require_rank2("multihead_attention", in);
  const std::size_t d = in.cols();
  if (heads == 0 || d % heads != 0) {
    throw ConfigError("multihead_attention: width " + std::to_string(d) +
                      " is not divisible by " + std::to_string(heads) + " heads");
  }
  for (Var w : {wq, wk, wv, wo}) {
    if (w.value().shape != Shape{d, d}) mismatch("multihead_attention weight", in.shape, w.value().shape);
  }
  const std::size_t head_dim = d / heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(head_dim));
  Var q = matmul(x, wq);
  Var k = matmul(x, wk);
  Var v = matmul(x, wv);
  std::vector<Var> outputs;
  outputs.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    Var qh = slice_cols(q, h * head_dim, head_dim);
    Var kh = slice_cols(k, h * head_dim, head_dim);
    Var vh = slice_cols(v, h * head_dim, head_dim);
    Var probs = softmax(scale(matmul(qh, transpose(kh)), inv_sqrt));
    if (attention) attention->push_back(probs);
    outputs.push_back(matmul(probs, vh));
  }
  Var merged = heads == 1 ? outputs.front() : concat_cols(outputs);
  return matmul(merged, wo);
}

}  // namespace chvit
