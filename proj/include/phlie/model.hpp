#pragma once

#include "phlie/diffcore.hpp"
#include "phlie/hypernet.hpp"
#include "phlie/lie.hpp"
#include "phlie/sysgen.hpp"
#include "phlie/targets.hpp"

#include <memory>
#include <string>
#include <vector>

namespace phlie {

enum class Variant { phlienet, agnostic, augmented };

std::string variant_name(Variant v);
Variant parse_variant(const std::string& s);

struct ModelSpec {
  std::string name;
  Variant variant = Variant::phlienet;
  TargetSpec target;  // input_dim / output_dim are filled in by Model::create
  std::size_t n_e = 16;
  std::size_t d_e = 16;
  double sigma = 0.2;
  std::vector<std::size_t> hnn_hidden{64, 64};
};

/// One minibatch in normalized units. `windows` is N x (ISL * D_x), oldest
/// sample first; `targets` is N x D_x; `p_raw` holds each row's parameter.
struct Batch {
  Matrix windows;
  Matrix targets;
  std::vector<double> p_raw;
};

/// Derivative estimator bound to one parameter value. Inputs and outputs are
/// raw (un-normalized) states and derivatives, one window per row.
class Predictor {
 public:
  virtual ~Predictor() = default;
  virtual std::size_t isl() const = 0;
  virtual Matrix predict(const Matrix& windows_raw) const = 0;
};

class DerivativeModel {
 public:
  virtual ~DerivativeModel() = default;
  virtual std::string id() const = 0;
  virtual std::unique_ptr<Predictor> bind(double p_raw) const = 0;
};

class Model : public DerivativeModel {
 public:
  ModelSpec spec;
  std::size_t state_dim = 0;
  double lo = 0.0, hi = 1.0;
  Scaler scaler;
  AnchorBank bank;    // phlienet only
  HyperNetSpec hnn;   // phlienet only
  ParameterStore params;

  static inline const std::string kTargetPrefix = "f.";

  /// Fills in target dims, builds the layout and initializes all tensors from `seed`.
  static Model create(ModelSpec spec, std::size_t state_dim, double lo, double hi, Scaler scaler, std::uint64_t seed);

  /// Rebuilds derived members (bank, hnn) after `spec`/range were loaded.
  void rebuild_structure();

  std::string id() const override { return spec.name; }
  std::unique_ptr<Predictor> bind(double p_raw) const override;

  double normalized_param(double p_raw) const { return (p_raw - lo) / (hi - lo); }

  /// Flat target weights used at p_raw (generated for phlienet).
  std::vector<double> target_weights(double p_raw) const;

  /// Normalized predictions, rows in batch order.
  Var predict_graph(Graph& g, const Batch& batch) const;

  /// Mean over rows of the squared L2 error.
  Var loss_graph(Graph& g, const Batch& batch) const;
};

/// Inserts the normalized parameter after each time step's state.
Matrix augment_windows(const Matrix& windows, std::size_t state_dim, const std::vector<double>& p_norm);

}  // namespace phlie
