#include "phlie/diffcore.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace phlie {

std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::pair<std::size_t, std::size_t> matrix_dims(const Shape& shape) {
  if (shape.empty()) return {1, 1};
  if (shape.size() == 1) return {1, shape[0]};
  return {shape[0], shape_size(shape) / shape[0]};
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double silu(double x) { return x * sigmoid(x); }

double silu_derivative(double x) {
  const double s = sigmoid(x);
  return s * (1.0 + x * (1.0 - s));
}

// ---------------------------------------------------------------------------
// ParameterStore

void ParameterStore::add(std::string name, Shape shape, std::vector<double> values) {
  if (index_.contains(name)) throw std::invalid_argument("duplicate tensor name: " + name);
  for (auto d : shape) {
    if (d == 0) throw std::invalid_argument("tensor '" + name + "' has a zero-length axis");
  }
  const std::size_t n = shape_size(shape);
  if (values.empty()) values.assign(n, 0.0);
  if (values.size() != n) {
    throw std::invalid_argument("tensor '" + name + "' expects " + std::to_string(n) + " values, got " +
                                std::to_string(values.size()));
  }
  index_.emplace(name, entries_.size());
  entries_.push_back({std::move(name), std::move(shape), std::move(values)});
}

bool ParameterStore::contains(std::string_view name) const { return index_.contains(std::string(name)); }

ParameterStore::Entry& ParameterStore::at(std::string_view name) {
  auto it = index_.find(std::string(name));
  if (it == index_.end()) throw std::out_of_range("no tensor named " + std::string(name));
  return entries_[it->second];
}

const ParameterStore::Entry& ParameterStore::at(std::string_view name) const {
  auto it = index_.find(std::string(name));
  if (it == index_.end()) throw std::out_of_range("no tensor named " + std::string(name));
  return entries_[it->second];
}

std::size_t ParameterStore::scalar_count() const noexcept {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.values.size();
  return n;
}

std::vector<double> ParameterStore::flatten() const {
  std::vector<double> flat;
  flat.reserve(scalar_count());
  for (const auto& e : entries_) flat.insert(flat.end(), e.values.begin(), e.values.end());
  return flat;
}

void ParameterStore::unflatten(std::span<const double> flat) {
  if (flat.size() != scalar_count()) {
    throw std::invalid_argument("unflatten: expected " + std::to_string(scalar_count()) + " scalars, got " +
                                std::to_string(flat.size()));
  }
  std::size_t offset = 0;
  for (auto& e : entries_) {
    std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(offset), e.values.size(), e.values.begin());
    offset += e.values.size();
  }
}

ParameterStore ParameterStore::zeros_like() const {
  ParameterStore out;
  for (const auto& e : entries_) out.add(e.name, e.shape);
  return out;
}

Matrix ParameterStore::matrix(std::string_view name) const { return view(name); }

Eigen::Map<Matrix> ParameterStore::view(std::string_view name) {
  auto& e = at(name);
  auto [r, c] = matrix_dims(e.shape);
  return {e.values.data(), static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)};
}

Eigen::Map<const Matrix> ParameterStore::view(std::string_view name) const {
  const auto& e = at(name);
  auto [r, c] = matrix_dims(e.shape);
  return {e.values.data(), static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)};
}

bool ParameterStore::same_layout(const ParameterStore& other) const {
  if (entries_.size() != other.entries_.size()) return false;
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    if (entries_[i].name != other.entries_[i].name || entries_[i].shape != other.entries_[i].shape) return false;
  }
  return true;
}

// ---------------------------------------------------------------------------
// ConvPlan

ConvPlan::ConvPlan(std::size_t samples_, std::size_t length_, std::size_t kernel_, std::size_t dilation_,
                   std::size_t in_channels_, std::size_t out_channels_, std::vector<int> in_positions_,
                   std::vector<int> out_positions_)
    : samples(samples_),
      length(length_),
      kernel(kernel_),
      dilation(dilation_),
      in_channels(in_channels_),
      out_channels(out_channels_),
      in_positions(std::move(in_positions_)),
      out_positions(std::move(out_positions_)),
      in_lookup(length_, -1) {
  for (std::size_t i = 0; i < in_positions.size(); ++i) {
    const int p = in_positions[i];
    if (p < 0 || static_cast<std::size_t>(p) >= length) throw std::invalid_argument("conv plan: bad input position");
    in_lookup[static_cast<std::size_t>(p)] = static_cast<int>(i);
  }
  for (int p : out_positions) {
    if (p < 0 || static_cast<std::size_t>(p) >= length) throw std::invalid_argument("conv plan: bad output position");
    for (std::size_t j = 0; j < kernel; ++j) {
      const long src = static_cast<long>(p) - static_cast<long>(j * dilation);
      if (src >= 0 && in_lookup[static_cast<std::size_t>(src)] < 0) {
        throw std::invalid_argument("conv plan: output position " + std::to_string(p) + " reads uncomputed input " +
                                    std::to_string(src));
      }
    }
  }
}

// ---------------------------------------------------------------------------
// Graph

namespace {

void require_same_shape(const Matrix& a, const Matrix& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    std::ostringstream os;
    os << op << ": shape mismatch " << a.rows() << "x" << a.cols() << " vs " << b.rows() << "x" << b.cols();
    throw std::invalid_argument(os.str());
  }
}

}  // namespace

Graph::Graph(const ParameterStore* params, bool track) : params_(params), track_(track) { nodes_.reserve(256); }

double Graph::scalar(Var v) const {
  const auto& m = value(v);
  if (m.size() != 1) throw std::invalid_argument("scalar(): node is not 1x1");
  return m(0, 0);
}

Var Graph::push(Matrix value, std::string label, std::function<void(Graph&, std::size_t)> backward,
                bool needs_grad) {
  Node n;
  n.value = std::move(value);
  n.label = std::move(label);
  n.needs_grad = track_ && needs_grad;
  if (n.needs_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var{nodes_.size() - 1};
}

Matrix& Graph::grad_of(std::size_t id) {
  auto& n = nodes_[id];
  if (n.grad.size() == 0) n.grad = Matrix::Zero(n.value.rows(), n.value.cols());
  return n.grad;
}

Var Graph::param(const std::string& name) {
  if (params_ == nullptr) throw std::logic_error("graph has no parameter store bound");
  if (auto it = param_nodes_.find(name); it != param_nodes_.end()) return Var{it->second};
  Var v = push(params_->matrix(name), name, nullptr, true);
  param_nodes_.emplace(name, v.id);
  return v;
}

Var Graph::constant(Matrix value, std::string label) { return push(std::move(value), std::move(label), nullptr, false); }

Var Graph::matmul(Var a, Var b) {
  const auto& A = value(a);
  const auto& B = value(b);
  if (A.cols() != B.rows()) throw std::invalid_argument("matmul: inner dimensions differ");
  Matrix out = A * B;
  return push(std::move(out), "matmul", [a, b](Graph& g, std::size_t self) {
    const Matrix& G = g.nodes_[self].grad;
    if (g.needs(a)) g.grad_of(a.id).noalias() += G * g.nodes_[b.id].value.transpose();
    if (g.needs(b)) g.grad_of(b.id).noalias() += g.nodes_[a.id].value.transpose() * G;
  }, needs(a) || needs(b));
}

Var Graph::linear(Var x, Var w, Var b) {
  const auto& X = value(x);
  const auto& W = value(w);
  const auto& B = value(b);
  if (X.cols() != W.cols()) {
    throw std::invalid_argument("linear: input width " + std::to_string(X.cols()) + " vs weight in " +
                                std::to_string(W.cols()));
  }
  if (B.rows() != 1 || B.cols() != W.rows()) throw std::invalid_argument("linear: bias shape mismatch");
  Matrix out = X * W.transpose();
  out.rowwise() += B.row(0);
  return push(std::move(out), "linear", [x, w, b](Graph& g, std::size_t self) {
    const Matrix& G = g.nodes_[self].grad;
    if (g.needs(x)) g.grad_of(x.id).noalias() += G * g.nodes_[w.id].value;
    if (g.needs(w)) g.grad_of(w.id).noalias() += G.transpose() * g.nodes_[x.id].value;
    if (g.needs(b)) g.grad_of(b.id).row(0) += G.colwise().sum();
  }, needs(x) || needs(w) || needs(b));
}

Var Graph::add(Var a, Var b) {
  require_same_shape(value(a), value(b), "add");
  Matrix out = value(a) + value(b);
  return push(std::move(out), "add", [a, b](Graph& g, std::size_t self) {
    const Matrix& G = g.nodes_[self].grad;
    if (g.needs(a)) g.grad_of(a.id) += G;
    if (g.needs(b)) g.grad_of(b.id) += G;
  }, needs(a) || needs(b));
}

Var Graph::sub(Var a, Var b) {
  require_same_shape(value(a), value(b), "sub");
  Matrix out = value(a) - value(b);
  return push(std::move(out), "sub", [a, b](Graph& g, std::size_t self) {
    const Matrix& G = g.nodes_[self].grad;
    if (g.needs(a)) g.grad_of(a.id) += G;
    if (g.needs(b)) g.grad_of(b.id) -= G;
  }, needs(a) || needs(b));
}

Var Graph::mul(Var a, Var b) {
  require_same_shape(value(a), value(b), "mul");
  Matrix out = value(a).cwiseProduct(value(b));
  return push(std::move(out), "mul", [a, b](Graph& g, std::size_t self) {
    const Matrix& G = g.nodes_[self].grad;
    if (g.needs(a)) g.grad_of(a.id) += G.cwiseProduct(g.nodes_[b.id].value);
    if (g.needs(b)) g.grad_of(b.id) += G.cwiseProduct(g.nodes_[a.id].value);
  }, needs(a) || needs(b));
}

Var Graph::add_row(Var a, Var row) {
  const auto& A = value(a);
  const auto& R = value(row);
  if (R.rows() != 1 || R.cols() != A.cols()) throw std::invalid_argument("add_row: row shape mismatch");
  Matrix out = A;
  out.rowwise() += R.row(0);
  return push(std::move(out), "add_row", [a, row](Graph& g, std::size_t self) {
    const Matrix& G = g.nodes_[self].grad;
    if (g.needs(a)) g.grad_of(a.id) += G;
    if (g.needs(row)) g.grad_of(row.id).row(0) += G.colwise().sum();
  }, needs(a) || needs(row));
}

Var Graph::scale(Var a, double c) {
  Matrix out = value(a) * c;
  return push(std::move(out), "scale", [a, c](Graph& g, std::size_t self) {
    g.grad_of(a.id) += g.nodes_[self].grad * c;
  }, needs(a));
}

Var Graph::sigmoid(Var a) {
  Matrix out = value(a).unaryExpr([](double x) { return phlie::sigmoid(x); });
  return push(std::move(out), "sigmoid", [a](Graph& g, std::size_t self) {
    const Matrix& Y = g.nodes_[self].value;
    g.grad_of(a.id).array() += g.nodes_[self].grad.array() * Y.array() * (1.0 - Y.array());
  }, needs(a));
}

Var Graph::tanh(Var a) {
  Matrix out = value(a).array().tanh().matrix();
  return push(std::move(out), "tanh", [a](Graph& g, std::size_t self) {
    const Matrix& Y = g.nodes_[self].value;
    g.grad_of(a.id).array() += g.nodes_[self].grad.array() * (1.0 - Y.array().square());
  }, needs(a));
}

Var Graph::silu(Var a) {
  Matrix out = value(a).unaryExpr([](double x) { return phlie::silu(x); });
  return push(std::move(out), "silu", [a](Graph& g, std::size_t self) {
    const Matrix& X = g.nodes_[a.id].value;
    g.grad_of(a.id).array() +=
        g.nodes_[self].grad.array() * X.unaryExpr([](double x) { return silu_derivative(x); }).array();
  }, needs(a));
}

Var Graph::sum(Var a) {
  Matrix out(1, 1);
  out(0, 0) = value(a).sum();
  return push(std::move(out), "sum", [a](Graph& g, std::size_t self) {
    g.grad_of(a.id).array() += g.nodes_[self].grad(0, 0);
  }, needs(a));
}

Var Graph::squared_norm(Var a) {
  Matrix out(1, 1);
  out(0, 0) = value(a).squaredNorm();
  return push(std::move(out), "squared_norm", [a](Graph& g, std::size_t self) {
    g.grad_of(a.id) += (2.0 * g.nodes_[self].grad(0, 0)) * g.nodes_[a.id].value;
  }, needs(a));
}

Var Graph::sum_squared_error(Var pred, Var target) {
  require_same_shape(value(pred), value(target), "sum_squared_error");
  Matrix out(1, 1);
  out(0, 0) = (value(pred) - value(target)).squaredNorm();
  return push(std::move(out), "sum_squared_error", [pred, target](Graph& g, std::size_t self) {
    const double s = 2.0 * g.nodes_[self].grad(0, 0);
    Matrix diff = g.nodes_[pred.id].value - g.nodes_[target.id].value;
    if (g.needs(pred)) g.grad_of(pred.id) += s * diff;
    if (g.needs(target)) g.grad_of(target.id) -= s * diff;
  }, needs(pred) || needs(target));
}

Var Graph::slice_cols(Var a, std::size_t begin, std::size_t count) {
  const auto& A = value(a);
  if (begin + count > static_cast<std::size_t>(A.cols())) throw std::invalid_argument("slice_cols: out of range");
  Matrix out = A.middleCols(static_cast<Eigen::Index>(begin), static_cast<Eigen::Index>(count));
  return push(std::move(out), "slice_cols", [a, begin, count](Graph& g, std::size_t self) {
    g.grad_of(a.id).middleCols(static_cast<Eigen::Index>(begin), static_cast<Eigen::Index>(count)) +=
        g.nodes_[self].grad;
  }, needs(a));
}

Var Graph::reshape(Var a, std::size_t rows, std::size_t cols) {
  const auto& A = value(a);
  if (rows * cols != static_cast<std::size_t>(A.size())) throw std::invalid_argument("reshape: size mismatch");
  Matrix out = Eigen::Map<const Matrix>(A.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  return push(std::move(out), "reshape", [a](Graph& g, std::size_t self) {
    Matrix& GA = g.grad_of(a.id);
    const Matrix& G = g.nodes_[self].grad;
    Eigen::Map<Matrix>(GA.data(), G.rows(), G.cols()) += G;
  }, needs(a));
}

Var Graph::view_row(Var a, std::size_t row, std::size_t offset, std::size_t rows, std::size_t cols) {
  const auto& A = value(a);
  if (row >= static_cast<std::size_t>(A.rows()) || offset + rows * cols > static_cast<std::size_t>(A.cols())) {
    throw std::invalid_argument("view_row: out of range");
  }
  Matrix out = Eigen::Map<const Matrix>(A.data() + row * static_cast<std::size_t>(A.cols()) + offset,
                                        static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  return push(std::move(out), "view_row", [a, row, offset](Graph& g, std::size_t self) {
    Matrix& GA = g.grad_of(a.id);
    const Matrix& G = g.nodes_[self].grad;
    Eigen::Map<Matrix>(GA.data() + row * static_cast<std::size_t>(GA.cols()) + offset, G.rows(), G.cols()) += G;
  }, needs(a));
}

Var Graph::concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: no inputs");
  const auto cols = value(parts[0]).cols();
  Eigen::Index rows = 0;
  for (auto p : parts) {
    if (value(p).cols() != cols) throw std::invalid_argument("concat_rows: column mismatch");
    rows += value(p).rows();
  }
  Matrix out(rows, cols);
  Eigen::Index r = 0;
  for (auto p : parts) {
    out.middleRows(r, value(p).rows()) = value(p);
    r += value(p).rows();
  }
  std::vector<Var> ids(parts.begin(), parts.end());
  return push(std::move(out), "concat_rows", [ids](Graph& g, std::size_t self) {
    const Matrix& G = g.nodes_[self].grad;
    Eigen::Index r0 = 0;
    for (auto p : ids) {
      const auto n = g.nodes_[p.id].value.rows();
      if (g.needs(p)) g.grad_of(p.id) += G.middleRows(r0, n);
      r0 += n;
    }
  }, std::any_of(parts.begin(), parts.end(), [this](Var p) { return needs(p); }));
}

Var Graph::causal_conv(Var x, Var w, Var b, std::shared_ptr<const ConvPlan> plan) {
  const auto& X = value(x);
  const auto& W = value(w);
  const auto& B = value(b);
  const auto& P = *plan;
  const auto n_in = static_cast<Eigen::Index>(P.in_positions.size());
  const auto n_out = static_cast<Eigen::Index>(P.out_positions.size());
  const auto cin = static_cast<Eigen::Index>(P.in_channels);
  const auto k = static_cast<Eigen::Index>(P.kernel);
  if (X.rows() != static_cast<Eigen::Index>(P.samples) * n_in || X.cols() != cin) {
    throw std::invalid_argument("causal_conv: input is " + std::to_string(X.rows()) + "x" +
                                std::to_string(X.cols()) + ", plan expects " +
                                std::to_string(P.samples * P.in_positions.size()) + "x" +
                                std::to_string(P.in_channels));
  }
  if (W.rows() != static_cast<Eigen::Index>(P.out_channels) || W.cols() != cin * k) {
    throw std::invalid_argument("causal_conv: weight shape mismatch");
  }
  if (B.rows() != 1 || B.cols() != W.rows()) throw std::invalid_argument("causal_conv: bias shape mismatch");

  // im2col: row (s, out position), column ci * k + j.
  auto cols = std::make_shared<Matrix>(Matrix::Zero(static_cast<Eigen::Index>(P.samples) * n_out, cin * k));
  for (Eigen::Index s = 0; s < static_cast<Eigen::Index>(P.samples); ++s) {
    for (Eigen::Index o = 0; o < n_out; ++o) {
      const int t = P.out_positions[static_cast<std::size_t>(o)];
      auto dst = cols->row(s * n_out + o);
      for (Eigen::Index j = 0; j < k; ++j) {
        const long src = t - static_cast<long>(j) * static_cast<long>(P.dilation);
        if (src < 0) continue;
        const auto in_row = s * n_in + P.in_lookup[static_cast<std::size_t>(src)];
        for (Eigen::Index ci = 0; ci < cin; ++ci) dst(ci * k + j) = X(in_row, ci);
      }
    }
  }
  Matrix out = (*cols) * W.transpose();
  out.rowwise() += B.row(0);
  const bool any = needs(x) || needs(w) || needs(b);
  if (!track_ || !any) cols.reset();
  return push(std::move(out), "causal_conv", [x, w, b, plan, cols](Graph& g, std::size_t self) {
    const Matrix& G = g.nodes_[self].grad;
    if (g.needs(w)) g.grad_of(w.id).noalias() += G.transpose() * (*cols);
    if (g.needs(b)) g.grad_of(b.id).row(0) += G.colwise().sum();
    if (!g.needs(x)) return;
    const auto& P = *plan;
    Matrix dcols = G * g.nodes_[w.id].value;
    Matrix& GX = g.grad_of(x.id);
    const auto n_in = static_cast<Eigen::Index>(P.in_positions.size());
    const auto n_out = static_cast<Eigen::Index>(P.out_positions.size());
    const auto cin = static_cast<Eigen::Index>(P.in_channels);
    const auto k = static_cast<Eigen::Index>(P.kernel);
    for (Eigen::Index s = 0; s < static_cast<Eigen::Index>(P.samples); ++s) {
      for (Eigen::Index o = 0; o < n_out; ++o) {
        const int t = P.out_positions[static_cast<std::size_t>(o)];
        auto src_row = dcols.row(s * n_out + o);
        for (Eigen::Index j = 0; j < k; ++j) {
          const long src = t - static_cast<long>(j) * static_cast<long>(P.dilation);
          if (src < 0) continue;
          const auto in_row = s * n_in + P.in_lookup[static_cast<std::size_t>(src)];
          for (Eigen::Index ci = 0; ci < cin; ++ci) GX(in_row, ci) += src_row(ci * k + j);
        }
      }
    }
  }, any);
}

void Graph::backward(Var loss) {
  if (!track_) throw std::logic_error("backward() on a graph built without tracking");
  if (value(loss).size() != 1) throw std::invalid_argument("backward(): loss must be a scalar");
  const double l = value(loss)(0, 0);
  if (!std::isfinite(l)) check_finite();
  for (auto& n : nodes_) n.grad.resize(0, 0);
  grad_of(loss.id)(0, 0) = 1.0;
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    auto& n = nodes_[i];
    if (!n.backward || n.grad.size() == 0) continue;
    n.backward(*this, i);
  }
}

ParameterStore Graph::param_grads() const {
  if (params_ == nullptr) throw std::logic_error("graph has no parameter store bound");
  ParameterStore grads = params_->zeros_like();
  for (auto& e : grads.entries()) {
    auto it = param_nodes_.find(e.name);
    if (it == param_nodes_.end()) continue;
    const Matrix& G = nodes_[it->second].grad;
    if (G.size() == 0) continue;
    std::copy_n(G.data(), e.values.size(), e.values.begin());
  }
  return grads;
}

void Graph::check_finite() const {
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    if (!nodes_[i].value.allFinite()) {
      throw NonFiniteError(nodes_[i].label, "non-finite value in node " + std::to_string(i) + " (" +
                                                nodes_[i].label + ")");
    }
  }
}

// ---------------------------------------------------------------------------

ValueAndGrad value_and_grad(const LossFn& loss_fn, const ParameterStore& params) {
  Graph g(&params, true);
  Var loss = loss_fn(g);
  const double l = g.scalar(loss);
  if (!std::isfinite(l)) {
    g.check_finite();
    throw NonFiniteError("loss", "non-finite loss");
  }
  g.backward(loss);
  return {l, g.param_grads()};
}

double evaluate_loss(const LossFn& loss_fn, const ParameterStore& params) {
  Graph g(&params, false);
  return g.scalar(loss_fn(g));
}

FdReport finite_difference_check(const LossFn& loss_fn, const ParameterStore& params, double step,
                                 double tolerance, double abs_floor) {
  if (!(step > 0.0)) throw std::invalid_argument("finite_difference_check: step must be positive");
  const auto analytic = value_and_grad(loss_fn, params);
  ParameterStore probe = params;
  FdReport report;
  std::vector<FdEntry> all;
  for (std::size_t t = 0; t < probe.entries().size(); ++t) {
    auto& entry = probe.entries()[t];
    const auto& grad = analytic.grads.entries()[t].values;
    for (std::size_t i = 0; i < entry.values.size(); ++i) {
      const double saved = entry.values[i];
      entry.values[i] = saved + step;
      const double up = evaluate_loss(loss_fn, probe);
      entry.values[i] = saved - step;
      const double down = evaluate_loss(loss_fn, probe);
      entry.values[i] = saved;
      const double numeric = (up - down) / (2.0 * step);
      const double a = grad[i];
      const double denom = std::max({std::abs(a), std::abs(numeric), abs_floor});
      FdEntry fe{entry.name, i, a, numeric, std::abs(a - numeric) / denom};
      report.max_relative_error = std::max(report.max_relative_error, fe.relative_error);
      if (fe.relative_error > tolerance) report.flagged.push_back(fe);
      all.push_back(std::move(fe));
      ++report.checked;
    }
  }
  const std::size_t keep = std::min<std::size_t>(10, all.size());
  std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(keep), all.end(),
                    [](const FdEntry& x, const FdEntry& y) { return x.relative_error > y.relative_error; });
  report.worst.assign(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(keep));
  return report;
}

}  // namespace phlie
