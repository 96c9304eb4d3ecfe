#pragma once

#include "phlie/diffcore.hpp"

#include <Eigen/Dense>

#include <functional>
#include <random>
#include <string>
#include <vector>

namespace phlie {

enum class TargetKind { tcnn_cd, lstm, ffnn };

std::string target_kind_name(TargetKind k);
TargetKind parse_target_kind(const std::string& s);

struct TargetSpec {
  TargetKind kind = TargetKind::tcnn_cd;
  std::size_t input_dim = 0;
  std::size_t output_dim = 0;
  std::size_t isl = 16;
  std::size_t kernel = 5;
  std::size_t channels = 22;
  std::size_t lstm_hidden = 48;
  std::vector<std::size_t> ffnn_hidden{40, 40};

  /// Conv layer count (tcnn only).
  std::size_t layers() const;
  void validate() const;
};

/// Minimal L with 1 + (k-1)(2^L - 1) >= ISL.
std::size_t tcnn_layers_for(std::size_t isl, std::size_t k);
std::size_t receptive_field(std::size_t layers, std::size_t k);

struct TensorLayout {
  std::string name;
  Shape shape;
  std::size_t offset = 0;
};

/// Named tensors of the target in flat order. tcnn: conv{i}.weight
/// (C_out, C_in, k), conv{i}.bias, head.weight (D_x, C), head.bias.
/// lstm: lstm.W (4H, C_in), lstm.U (4H, H), lstm.b (4H), gates ordered
/// input, forget, output, candidate; readout.weight (D_x, H), readout.bias.
/// ffnn: fc{i}.weight (out, in), fc{i}.bias.
std::vector<TensorLayout> weight_layout(const TargetSpec& spec);
std::size_t target_param_count(const TargetSpec& spec);

/// Named store from a flat vector (layout order), optionally prefixed.
ParameterStore unpack_weights(const TargetSpec& spec, std::span<const double> flat, const std::string& prefix = "");
std::vector<double> pack_weights(const TargetSpec& spec, const ParameterStore& store, const std::string& prefix = "");

/// Gaussian 1/sqrt(fan_in) weights, zero biases, names prefixed.
void init_target(const TargetSpec& spec, ParameterStore& store, const std::string& prefix, std::mt19937_64& gen);

/// Supplies the graph node holding one named target tensor, viewed as its
/// 2-D matrix (matrix_dims of the layout shape).
using WeightFetch = std::function<Var(const TensorLayout&)>;

WeightFetch fetch_params(Graph& g, const std::string& prefix = "");

/// Batched forward. `input` is N x (ISL * input_dim), each row one window,
/// oldest sample first. Returns N x output_dim.
Var target_forward(Graph& g, const TargetSpec& spec, const WeightFetch& fetch, Var input);

// Plain evaluation helpers, one window (ISL x input_dim) at a time.
Eigen::VectorXd tcnn_forward(const TargetSpec& spec, std::span<const double> flat, const Eigen::MatrixXd& history);
Eigen::VectorXd lstm_forward(const TargetSpec& spec, std::span<const double> flat, const Eigen::MatrixXd& history);
Eigen::VectorXd ffnn_forward(const TargetSpec& spec, std::span<const double> flat, const Eigen::VectorXd& input);

}  // namespace phlie
