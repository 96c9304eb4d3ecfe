#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace phlie {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Shape = std::vector<std::size_t>;

/// Rows and columns of the 2-D view of a tensor: a 1-D tensor of n is a
/// 1 x n row, higher ranks fold every trailing axis into the columns.
std::pair<std::size_t, std::size_t> matrix_dims(const Shape& shape);
std::size_t shape_size(const Shape& shape);

/// Raised when a loss or an intermediate value stops being finite. `tensor()`
/// names the first offending node (a parameter name or an op label).
class NonFiniteError : public std::runtime_error {
 public:
  NonFiniteError(std::string tensor, const std::string& what)
      : std::runtime_error(what), tensor_(std::move(tensor)) {}
  const std::string& tensor() const noexcept { return tensor_; }

 private:
  std::string tensor_;
};

/// Ordered collection of named, row-major float64 tensors.
class ParameterStore {
 public:
  struct Entry {
    std::string name;
    Shape shape;
    std::vector<double> values;
  };

  /// Adds a tensor; `values` empty means zero-filled. Duplicate names throw.
  void add(std::string name, Shape shape, std::vector<double> values = {});

  bool contains(std::string_view name) const;
  Entry& at(std::string_view name);
  const Entry& at(std::string_view name) const;

  const std::vector<Entry>& entries() const noexcept { return entries_; }
  std::vector<Entry>& entries() noexcept { return entries_; }
  std::size_t tensor_count() const noexcept { return entries_.size(); }
  std::size_t scalar_count() const noexcept;

  std::vector<double> flatten() const;
  void unflatten(std::span<const double> flat);

  /// Same names and shapes, all values zero.
  ParameterStore zeros_like() const;

  Matrix matrix(std::string_view name) const;
  Eigen::Map<Matrix> view(std::string_view name);
  Eigen::Map<const Matrix> view(std::string_view name) const;

  bool same_layout(const ParameterStore& other) const;

 private:
  std::vector<Entry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Evaluation plan for one causal dilated 1-D convolution over a batch of
/// fixed-length windows. Only the time positions listed in `out_positions`
/// are computed; inputs are stored compactly for `in_positions` and any tap
/// that falls before t = 0 reads zero (causal left padding).
struct ConvPlan {
  std::size_t samples = 0;
  std::size_t length = 0;
  std::size_t kernel = 0;
  std::size_t dilation = 1;
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  std::vector<int> in_positions;
  std::vector<int> out_positions;
  std::vector<int> in_lookup;  // length entries, -1 where a position is absent

  ConvPlan(std::size_t samples, std::size_t length, std::size_t kernel, std::size_t dilation,
           std::size_t in_channels, std::size_t out_channels, std::vector<int> in_positions,
           std::vector<int> out_positions);
};

struct Var {
  std::size_t id = 0;
};

/// Reverse-mode computation graph over matrices. Nodes can only be created
/// through the member ops below, so every composite has a known adjoint.
/// A graph built with `track = false` records values only (inference).
class Graph {
 public:
  explicit Graph(const ParameterStore* params = nullptr, bool track = true);

  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var param(const std::string& name);
  Var constant(Matrix value, std::string label = "constant");

  const Matrix& value(Var v) const { return nodes_[v.id].value; }
  const Matrix& grad(Var v) const { return nodes_[v.id].grad; }
  double scalar(Var v) const;
  const std::string& label(Var v) const { return nodes_[v.id].label; }
  bool tracking() const noexcept { return track_; }
  std::size_t node_count() const noexcept { return nodes_.size(); }

  Var matmul(Var a, Var b);
  /// x * w^T + b, with w stored (out, in) and b a 1 x out row.
  Var linear(Var x, Var w, Var b);
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var add_row(Var a, Var row);
  Var scale(Var a, double c);
  Var sigmoid(Var a);
  Var tanh(Var a);
  Var silu(Var a);
  Var sum(Var a);
  Var squared_norm(Var a);
  Var sum_squared_error(Var pred, Var target);
  Var slice_cols(Var a, std::size_t begin, std::size_t count);
  Var reshape(Var a, std::size_t rows, std::size_t cols);
  /// Reads `rows * cols` consecutive scalars of row `row` of `a`, starting at
  /// column `offset`, as a rows x cols matrix.
  Var view_row(Var a, std::size_t row, std::size_t offset, std::size_t rows, std::size_t cols);
  Var concat_rows(std::span<const Var> parts);
  /// Input rows are (sample, in_position) pairs, sample-major. Weight is
  /// (out_channels, in_channels * kernel) with column ci * kernel + j holding
  /// the tap at lag j * dilation.
  Var causal_conv(Var x, Var w, Var b, std::shared_ptr<const ConvPlan> plan);

  /// Accumulates d(loss)/d(node) for every node; `loss` must be 1 x 1.
  void backward(Var loss);

  /// Gradients for every tensor of the bound store (zero for unused ones).
  ParameterStore param_grads() const;

  /// Throws NonFiniteError naming the first node holding a NaN or Inf.
  void check_finite() const;

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    std::string label;
    std::function<void(Graph&, std::size_t)> backward;
    bool needs_grad = false;
  };

  Var push(Matrix value, std::string label, std::function<void(Graph&, std::size_t)> backward,
           bool needs_grad);
  bool needs(Var v) const { return nodes_[v.id].needs_grad; }
  Matrix& grad_of(std::size_t id);
  Node& node(Var v) { return nodes_[v.id]; }

  const ParameterStore* params_;
  bool track_;
  std::vector<Node> nodes_;
  std::unordered_map<std::string, std::size_t> param_nodes_;
};

using LossFn = std::function<Var(Graph&)>;

struct ValueAndGrad {
  double loss = 0.0;
  ParameterStore grads;
};

/// Builds the graph of `loss_fn` over `params` and runs the reverse sweep.
ValueAndGrad value_and_grad(const LossFn& loss_fn, const ParameterStore& params);

/// Loss value only, no adjoint bookkeeping.
double evaluate_loss(const LossFn& loss_fn, const ParameterStore& params);

struct FdEntry {
  std::string name;
  std::size_t index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double relative_error = 0.0;
};

struct FdReport {
  double max_relative_error = 0.0;
  std::size_t checked = 0;
  std::vector<FdEntry> worst;    // largest error first, at most 10
  std::vector<FdEntry> flagged;  // every scalar above tolerance
};

/// Central-difference gradient check over every scalar of `params`.
/// Relative error is |a - n| / max(|a|, |n|, abs_floor).
FdReport finite_difference_check(const LossFn& loss_fn, const ParameterStore& params, double step,
                                 double tolerance, double abs_floor = 1e-6);

// Scalar activations shared by graph ops and plain forward code.
double sigmoid(double x);
double silu(double x);
double silu_derivative(double x);

}  // namespace phlie
