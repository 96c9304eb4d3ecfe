#pragma once

#include "phlie/diffcore.hpp"
#include "phlie/lie.hpp"

#include <random>
#include <vector>

namespace phlie {

struct HyperNetSpec {
  std::size_t input_dim = 0;
  std::vector<std::size_t> hidden{64, 64};
  std::size_t output_dim = 0;
};

/// Tensor names: hnn.l{i}.weight / hnn.l{i}.bias for hidden layers,
/// hnn.out.weight / hnn.out.bias for the affine output layer.
std::vector<std::string> hypernet_tensor_names(const HyperNetSpec& spec);

/// Hidden layers N(0, 1/fan_in); output layer N(0, 1/(fan_in * target_layers)), zero bias.
void init_hypernet(const HyperNetSpec& spec, std::size_t target_layers, ParameterStore& store, std::mt19937_64& gen);

/// e is m x D_e; result m x output_dim.
Var hypernet_graph(Graph& g, const HyperNetSpec& spec, Var e);

/// Flat w_f for one embedding.
std::vector<double> generate_weights(const HyperNetSpec& spec, const ParameterStore& store, const Eigen::VectorXd& e);

/// Pairwise L2 distances between the weights generated at each probe.
Matrix weight_distance_matrix(const HyperNetSpec& spec, const AnchorBank& bank, const ParameterStore& store,
                              const std::vector<double>& probes);

}  // namespace phlie
