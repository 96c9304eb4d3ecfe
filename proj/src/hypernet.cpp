#include "phlie/hypernet.hpp"

#include <cmath>
#include <stdexcept>

namespace phlie {

std::vector<std::string> hypernet_tensor_names(const HyperNetSpec& spec) {
  std::vector<std::string> names;
  for (std::size_t i = 0; i < spec.hidden.size(); ++i) {
    names.push_back("hnn.l" + std::to_string(i) + ".weight");
    names.push_back("hnn.l" + std::to_string(i) + ".bias");
  }
  names.push_back("hnn.out.weight");
  names.push_back("hnn.out.bias");
  return names;
}

void init_hypernet(const HyperNetSpec& spec, std::size_t target_layers, ParameterStore& store, std::mt19937_64& gen) {
  if (spec.input_dim == 0 || spec.output_dim == 0) throw std::invalid_argument("hypernet dims must be positive");
  const auto names = hypernet_tensor_names(spec);
  std::size_t in = spec.input_dim;
  for (std::size_t i = 0; i <= spec.hidden.size(); ++i) {
    const bool last = i == spec.hidden.size();
    const std::size_t out = last ? spec.output_dim : spec.hidden[i];
    double var = 1.0 / static_cast<double>(in);
    if (last) var /= static_cast<double>(std::max<std::size_t>(1, target_layers));
    std::normal_distribution<double> nd(0.0, std::sqrt(var));
    std::vector<double> w(out * in);
    for (auto& x : w) x = nd(gen);
    store.add(names[2 * i], {out, in}, std::move(w));
    store.add(names[2 * i + 1], {out});
    in = out;
  }
}

Var hypernet_graph(Graph& g, const HyperNetSpec& spec, Var e) {
  if (static_cast<std::size_t>(g.value(e).cols()) != spec.input_dim) {
    throw std::invalid_argument("hypernet input has " + std::to_string(g.value(e).cols()) + " columns, expected " +
                                std::to_string(spec.input_dim));
  }
  const auto names = hypernet_tensor_names(spec);
  Var h = e;
  for (std::size_t i = 0; i <= spec.hidden.size(); ++i) {
    h = g.linear(h, g.param(names[2 * i]), g.param(names[2 * i + 1]));
    if (i < spec.hidden.size()) h = g.silu(h);
  }
  if (static_cast<std::size_t>(g.value(h).cols()) != spec.output_dim) {
    throw std::invalid_argument("hypernet output width does not match the bound target");
  }
  return h;
}

std::vector<double> generate_weights(const HyperNetSpec& spec, const ParameterStore& store, const Eigen::VectorXd& e) {
  Graph g(&store, false);
  Matrix row = e.transpose();
  Var w = hypernet_graph(g, spec, g.constant(std::move(row), "embedding"));
  const auto& W = g.value(w);
  return {W.data(), W.data() + W.size()};
}

Matrix weight_distance_matrix(const HyperNetSpec& spec, const AnchorBank& bank, const ParameterStore& store,
                              const std::vector<double>& probes) {
  const auto m = static_cast<Eigen::Index>(probes.size());
  const Matrix E = store.matrix(kEmbeddingsName);
  Matrix W(m, static_cast<Eigen::Index>(spec.output_dim));
  for (Eigen::Index i = 0; i < m; ++i) {
    const auto w = generate_weights(spec, store, embed(bank, E, probes[static_cast<std::size_t>(i)]));
    W.row(i) = Eigen::Map<const Eigen::RowVectorXd>(w.data(), static_cast<Eigen::Index>(w.size()));
  }
  Matrix D = Matrix::Zero(m, m);
  for (Eigen::Index i = 0; i < m; ++i)
    for (Eigen::Index j = i + 1; j < m; ++j) D(i, j) = D(j, i) = (W.row(i) - W.row(j)).norm();
  return D;
}

}  // namespace phlie
