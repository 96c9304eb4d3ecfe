#include "phlie/targets.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <stdexcept>

namespace phlie {

std::string target_kind_name(TargetKind k) {
  switch (k) {
    case TargetKind::tcnn_cd: return "tcnn_cd";
    case TargetKind::lstm: return "lstm";
    case TargetKind::ffnn: return "ffnn";
  }
  return "tcnn_cd";
}

TargetKind parse_target_kind(const std::string& s) {
  if (s == "tcnn_cd" || s == "tcnn") return TargetKind::tcnn_cd;
  if (s == "lstm") return TargetKind::lstm;
  if (s == "ffnn") return TargetKind::ffnn;
  throw std::invalid_argument("unknown target kind '" + s + "'");
}

std::size_t receptive_field(std::size_t layers, std::size_t k) {
  return 1 + (k - 1) * ((std::size_t{1} << layers) - 1);
}

std::size_t tcnn_layers_for(std::size_t isl, std::size_t k) {
  if (isl == 0) throw std::invalid_argument("ISL must be at least 1");
  if (k < 2) throw std::invalid_argument("tcnn kernel must be at least 2");
  std::size_t L = 1;
  while (receptive_field(L, k) < isl) ++L;
  return L;
}

std::size_t TargetSpec::layers() const { return tcnn_layers_for(isl, kernel); }

void TargetSpec::validate() const {
  if (input_dim == 0 || output_dim == 0) throw std::invalid_argument("target dims must be positive");
  if (isl == 0) throw std::invalid_argument("ISL must be positive");
  switch (kind) {
    case TargetKind::tcnn_cd:
      if (kernel < 2) throw std::invalid_argument("tcnn kernel must be at least 2");
      if (channels == 0) throw std::invalid_argument("tcnn channels must be positive");
      break;
    case TargetKind::lstm:
      if (lstm_hidden == 0) throw std::invalid_argument("lstm hidden size must be positive");
      break;
    case TargetKind::ffnn:
      for (auto h : ffnn_hidden)
        if (h == 0) throw std::invalid_argument("ffnn hidden widths must be positive");
      break;
  }
}

std::vector<TensorLayout> weight_layout(const TargetSpec& spec) {
  spec.validate();
  std::vector<TensorLayout> out;
  std::size_t off = 0;
  auto push = [&](std::string name, Shape shape) {
    const std::size_t n = shape_size(shape);
    out.push_back({std::move(name), std::move(shape), off});
    off += n;
  };
  switch (spec.kind) {
    case TargetKind::tcnn_cd: {
      const std::size_t L = spec.layers();
      std::size_t cin = spec.input_dim;
      for (std::size_t l = 0; l < L; ++l) {
        push("conv" + std::to_string(l) + ".weight", {spec.channels, cin, spec.kernel});
        push("conv" + std::to_string(l) + ".bias", {spec.channels});
        cin = spec.channels;
      }
      push("head.weight", {spec.output_dim, spec.channels});
      push("head.bias", {spec.output_dim});
      break;
    }
    case TargetKind::lstm: {
      const std::size_t H = spec.lstm_hidden;
      push("lstm.W", {4 * H, spec.input_dim});
      push("lstm.U", {4 * H, H});
      push("lstm.b", {4 * H});
      push("readout.weight", {spec.output_dim, H});
      push("readout.bias", {spec.output_dim});
      break;
    }
    case TargetKind::ffnn: {
      std::size_t in = spec.input_dim;
      std::size_t i = 0;
      for (auto h : spec.ffnn_hidden) {
        push("fc" + std::to_string(i) + ".weight", {h, in});
        push("fc" + std::to_string(i) + ".bias", {h});
        in = h;
        ++i;
      }
      push("fc" + std::to_string(i) + ".weight", {spec.output_dim, in});
      push("fc" + std::to_string(i) + ".bias", {spec.output_dim});
      break;
    }
  }
  return out;
}

std::size_t target_param_count(const TargetSpec& spec) {
  const auto layout = weight_layout(spec);
  return layout.back().offset + shape_size(layout.back().shape);
}

ParameterStore unpack_weights(const TargetSpec& spec, std::span<const double> flat, const std::string& prefix) {
  const auto layout = weight_layout(spec);
  if (flat.size() != target_param_count(spec)) {
    throw std::invalid_argument("weight vector has " + std::to_string(flat.size()) + " scalars, target needs " +
                                std::to_string(target_param_count(spec)));
  }
  ParameterStore store;
  for (const auto& t : layout) {
    const auto n = shape_size(t.shape);
    store.add(prefix + t.name, t.shape, std::vector<double>(flat.begin() + static_cast<std::ptrdiff_t>(t.offset),
                                                            flat.begin() + static_cast<std::ptrdiff_t>(t.offset + n)));
  }
  return store;
}

std::vector<double> pack_weights(const TargetSpec& spec, const ParameterStore& store, const std::string& prefix) {
  std::vector<double> flat(target_param_count(spec));
  for (const auto& t : weight_layout(spec)) {
    const auto& e = store.at(prefix + t.name);
    if (e.shape != t.shape) throw std::invalid_argument("tensor " + t.name + " has the wrong shape");
    std::copy(e.values.begin(), e.values.end(), flat.begin() + static_cast<std::ptrdiff_t>(t.offset));
  }
  return flat;
}

void init_target(const TargetSpec& spec, ParameterStore& store, const std::string& prefix, std::mt19937_64& gen) {
  for (const auto& t : weight_layout(spec)) {
    std::vector<double> v(shape_size(t.shape), 0.0);
    if (t.shape.size() > 1) {
      const double fan_in = static_cast<double>(shape_size(t.shape) / t.shape[0]);
      std::normal_distribution<double> nd(0.0, 1.0 / std::sqrt(fan_in));
      for (auto& x : v) x = nd(gen);
    }
    store.add(prefix + t.name, t.shape, std::move(v));
  }
}

WeightFetch fetch_params(Graph& g, const std::string& prefix) {
  return [&g, prefix](const TensorLayout& t) { return g.param(prefix + t.name); };
}

namespace {

Var tcnn_graph(Graph& g, const TargetSpec& spec, const WeightFetch& fetch, Var input) {
  const auto layout = weight_layout(spec);
  const std::size_t T = spec.isl;
  const auto N = static_cast<std::size_t>(g.value(input).rows());
  const std::size_t L = spec.layers();

  // Positions each layer has to produce so that the last layer can emit T-1.
  std::vector<std::vector<int>> out_pos(L);
  out_pos[L - 1] = {static_cast<int>(T - 1)};
  for (std::size_t l = L - 1; l > 0; --l) {
    std::set<int> need;
    const long d = 1L << l;
    for (int t : out_pos[l]) {
      for (std::size_t j = 0; j < spec.kernel; ++j) {
        const long s = t - static_cast<long>(j) * d;
        if (s >= 0) need.insert(static_cast<int>(s));
      }
    }
    out_pos[l - 1].assign(need.begin(), need.end());
  }
  std::vector<int> all(T);
  for (std::size_t t = 0; t < T; ++t) all[t] = static_cast<int>(t);

  Var h = g.reshape(input, N * T, spec.input_dim);
  std::vector<int> in_pos = all;
  std::size_t cin = spec.input_dim;
  for (std::size_t l = 0; l < L; ++l) {
    auto plan = std::make_shared<ConvPlan>(N, T, spec.kernel, std::size_t{1} << l, cin, spec.channels, in_pos,
                                           out_pos[l]);
    h = g.causal_conv(h, fetch(layout[2 * l]), fetch(layout[2 * l + 1]), plan);
    h = g.silu(h);
    in_pos = out_pos[l];
    cin = spec.channels;
  }
  return g.linear(h, fetch(layout[2 * L]), fetch(layout[2 * L + 1]));
}

Var lstm_graph(Graph& g, const TargetSpec& spec, const WeightFetch& fetch, Var input) {
  const auto layout = weight_layout(spec);
  const auto H = spec.lstm_hidden;
  Var W = fetch(layout[0]);
  Var U = fetch(layout[1]);
  Var b = fetch(layout[2]);
  Var zero = g.constant(Matrix::Zero(1, static_cast<Eigen::Index>(4 * H)), "lstm.zero_bias");
  Var h{}, c{};
  for (std::size_t t = 0; t < spec.isl; ++t) {
    Var x = g.slice_cols(input, t * spec.input_dim, spec.input_dim);
    Var z = g.linear(x, W, b);
    if (t > 0) z = g.add(z, g.linear(h, U, zero));
    Var i = g.sigmoid(g.slice_cols(z, 0, H));
    Var f = g.sigmoid(g.slice_cols(z, H, H));
    Var o = g.sigmoid(g.slice_cols(z, 2 * H, H));
    Var cc = g.tanh(g.slice_cols(z, 3 * H, H));
    c = t > 0 ? g.add(g.mul(f, c), g.mul(i, cc)) : g.mul(i, cc);
    h = g.mul(o, g.tanh(c));
  }
  return g.linear(h, fetch(layout[3]), fetch(layout[4]));
}

Var ffnn_graph(Graph& g, const TargetSpec& spec, const WeightFetch& fetch, Var input) {
  const auto layout = weight_layout(spec);
  Var h = g.slice_cols(input, (spec.isl - 1) * spec.input_dim, spec.input_dim);
  const std::size_t n = layout.size() / 2;
  for (std::size_t l = 0; l < n; ++l) {
    h = g.linear(h, fetch(layout[2 * l]), fetch(layout[2 * l + 1]));
    if (l + 1 < n) h = g.silu(h);
  }
  return h;
}

}  // namespace

Var target_forward(Graph& g, const TargetSpec& spec, const WeightFetch& fetch, Var input) {
  const auto& X = g.value(input);
  if (static_cast<std::size_t>(X.cols()) != spec.isl * spec.input_dim) {
    throw std::invalid_argument("target input has " + std::to_string(X.cols()) + " columns, expected ISL*input_dim = " +
                                std::to_string(spec.isl * spec.input_dim));
  }
  switch (spec.kind) {
    case TargetKind::tcnn_cd: return tcnn_graph(g, spec, fetch, input);
    case TargetKind::lstm: return lstm_graph(g, spec, fetch, input);
    case TargetKind::ffnn: return ffnn_graph(g, spec, fetch, input);
  }
  throw std::logic_error("unreachable");
}

namespace {

Eigen::VectorXd eval_one(const TargetSpec& spec, std::span<const double> flat, const Eigen::MatrixXd& history) {
  if (static_cast<std::size_t>(history.rows()) != spec.isl || static_cast<std::size_t>(history.cols()) != spec.input_dim) {
    throw std::invalid_argument("history must be ISL x input_dim");
  }
  const ParameterStore store = unpack_weights(spec, flat);
  Graph g(&store, false);
  Matrix row(1, history.size());
  for (Eigen::Index t = 0; t < history.rows(); ++t)
    for (Eigen::Index d = 0; d < history.cols(); ++d) row(0, t * history.cols() + d) = history(t, d);
  Var y = target_forward(g, spec, fetch_params(g), g.constant(std::move(row), "history"));
  return g.value(y).row(0).transpose();
}

}  // namespace

Eigen::VectorXd tcnn_forward(const TargetSpec& spec, std::span<const double> flat, const Eigen::MatrixXd& history) {
  if (spec.kind != TargetKind::tcnn_cd) throw std::invalid_argument("tcnn_forward on a non-tcnn spec");
  return eval_one(spec, flat, history);
}

Eigen::VectorXd lstm_forward(const TargetSpec& spec, std::span<const double> flat, const Eigen::MatrixXd& history) {
  if (spec.kind != TargetKind::lstm) throw std::invalid_argument("lstm_forward on a non-lstm spec");
  return eval_one(spec, flat, history);
}

Eigen::VectorXd ffnn_forward(const TargetSpec& spec, std::span<const double> flat, const Eigen::VectorXd& input) {
  if (spec.kind != TargetKind::ffnn) throw std::invalid_argument("ffnn_forward on a non-ffnn spec");
  Eigen::MatrixXd h = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(spec.isl), input.size());
  h.row(h.rows() - 1) = input.transpose();
  return eval_one(spec, flat, h);
}

}  // namespace phlie
