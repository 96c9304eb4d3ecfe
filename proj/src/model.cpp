#include "phlie/model.hpp"

#include "phlie/parallel.hpp"

#include <algorithm>
#include <map>
#include <numeric>
#include <random>
#include <stdexcept>

namespace phlie {

std::string variant_name(Variant v) {
  switch (v) {
    case Variant::phlienet: return "phlienet";
    case Variant::agnostic: return "agnostic";
    case Variant::augmented: return "augmented";
  }
  return "phlienet";
}

Variant parse_variant(const std::string& s) {
  if (s == "phlienet") return Variant::phlienet;
  if (s == "agnostic") return Variant::agnostic;
  if (s == "augmented") return Variant::augmented;
  throw std::invalid_argument("unknown model variant '" + s + "'");
}

Matrix augment_windows(const Matrix& windows, std::size_t D, const std::vector<double>& p_norm) {
  const auto N = windows.rows();
  const auto T = static_cast<std::size_t>(windows.cols()) / D;
  Matrix out(N, static_cast<Eigen::Index>(T * (D + 1)));
  for (Eigen::Index r = 0; r < N; ++r) {
    for (std::size_t t = 0; t < T; ++t) {
      for (std::size_t d = 0; d < D; ++d)
        out(r, static_cast<Eigen::Index>(t * (D + 1) + d)) = windows(r, static_cast<Eigen::Index>(t * D + d));
      out(r, static_cast<Eigen::Index>(t * (D + 1) + D)) = p_norm[static_cast<std::size_t>(r)];
    }
  }
  return out;
}

void Model::rebuild_structure() {
  spec.target.output_dim = state_dim;
  spec.target.input_dim = state_dim + (spec.variant == Variant::augmented ? 1 : 0);
  spec.target.validate();
  if (spec.variant == Variant::phlienet) {
    if (spec.target.kind != TargetKind::tcnn_cd) throw std::invalid_argument("phlienet generates tcnn_cd targets only");
    bank = make_anchor_bank(spec.n_e, spec.d_e, spec.sigma, {lo}, {hi});
    hnn.input_dim = spec.d_e;
    hnn.hidden = spec.hnn_hidden;
    hnn.output_dim = target_param_count(spec.target);
  }
}

Model Model::create(ModelSpec spec, std::size_t state_dim, double lo, double hi, Scaler scaler, std::uint64_t seed) {
  if (!(hi > lo)) throw std::invalid_argument("model parameter range must satisfy hi > lo");
  Model m;
  m.spec = std::move(spec);
  m.state_dim = state_dim;
  m.lo = lo;
  m.hi = hi;
  m.scaler = std::move(scaler);
  m.rebuild_structure();
  std::mt19937_64 gen(mix_seed(seed));
  if (m.spec.variant == Variant::phlienet) {
    init_embeddings(m.bank, m.params, gen);
    init_hypernet(m.hnn, m.spec.target.layers(), m.params, gen);
  } else {
    init_target(m.spec.target, m.params, kTargetPrefix, gen);
  }
  return m;
}

std::vector<double> Model::target_weights(double p_raw) const {
  if (spec.variant == Variant::phlienet) {
    return generate_weights(hnn, params, embed(bank, params.matrix(kEmbeddingsName), p_raw));
  }
  return pack_weights(spec.target, params, kTargetPrefix);
}

namespace {

struct Group {
  std::size_t begin = 0, count = 0, unique = 0;
};

}  // namespace

Var Model::predict_graph(Graph& g, const Batch& batch) const {
  const auto N = static_cast<std::size_t>(batch.windows.rows());
  if (batch.p_raw.size() != N) throw std::invalid_argument("batch parameter count mismatch");
  switch (spec.variant) {
    case Variant::agnostic:
      return target_forward(g, spec.target, fetch_params(g, kTargetPrefix), g.constant(batch.windows, "windows"));
    case Variant::augmented: {
      std::vector<double> pn(N);
      for (std::size_t r = 0; r < N; ++r) pn[r] = normalized_param(batch.p_raw[r]);
      return target_forward(g, spec.target, fetch_params(g, kTargetPrefix),
                            g.constant(augment_windows(batch.windows, state_dim, pn), "windows"));
    }
    case Variant::phlienet: break;
  }

  // Contiguous runs of equal parameter share one generated weight vector.
  std::vector<double> uniq;
  std::map<double, std::size_t> index;
  std::vector<Group> groups;
  for (std::size_t r = 0; r < N; ++r) {
    const double p = batch.p_raw[r];
    if (!groups.empty() && batch.p_raw[groups.back().begin] == p) {
      ++groups.back().count;
      continue;
    }
    auto [it, fresh] = index.emplace(p, uniq.size());
    if (fresh) uniq.push_back(p);
    groups.push_back({r, 1, it->second});
  }
  Var e = embed_graph(g, bank, uniq);
  Var wf = hypernet_graph(g, hnn, e);
  const auto layout = weight_layout(spec.target);
  std::vector<Var> outs;
  outs.reserve(groups.size());
  for (const auto& gr : groups) {
    WeightFetch fetch = [&g, wf, row = gr.unique](const TensorLayout& t) {
      auto [r, c] = matrix_dims(t.shape);
      return g.view_row(wf, row, t.offset, r, c);
    };
    Var x = g.constant(batch.windows.middleRows(static_cast<Eigen::Index>(gr.begin), static_cast<Eigen::Index>(gr.count)),
                       "windows");
    outs.push_back(target_forward(g, spec.target, fetch, x));
  }
  return outs.size() == 1 ? outs[0] : g.concat_rows(outs);
}

Var Model::loss_graph(Graph& g, const Batch& batch) const {
  const auto N = static_cast<std::size_t>(batch.windows.rows());
  if (N == 0) throw std::invalid_argument("empty batch");
  if (static_cast<std::size_t>(batch.targets.rows()) != N) throw std::invalid_argument("batch target count mismatch");
  Var pred;
  Var target;
  if (spec.variant == Variant::phlienet) {
    // group rows by parameter so each value runs the hypernetwork once
    std::vector<std::size_t> order(N);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return batch.p_raw[a] < batch.p_raw[b]; });
    Batch sorted;
    sorted.windows.resize(batch.windows.rows(), batch.windows.cols());
    sorted.targets.resize(batch.targets.rows(), batch.targets.cols());
    sorted.p_raw.resize(N);
    for (std::size_t r = 0; r < N; ++r) {
      sorted.windows.row(static_cast<Eigen::Index>(r)) = batch.windows.row(static_cast<Eigen::Index>(order[r]));
      sorted.targets.row(static_cast<Eigen::Index>(r)) = batch.targets.row(static_cast<Eigen::Index>(order[r]));
      sorted.p_raw[r] = batch.p_raw[order[r]];
    }
    pred = predict_graph(g, sorted);
    target = g.constant(std::move(sorted.targets), "targets");
  } else {
    pred = predict_graph(g, batch);
    target = g.constant(batch.targets, "targets");
  }
  return g.scale(g.sum_squared_error(pred, target), 1.0 / static_cast<double>(N));
}

namespace {

class ModelPredictor : public Predictor {
 public:
  ModelPredictor(const Model& m, double p_raw)
      : spec_(m.spec.target),
        D_(m.state_dim),
        augmented_(m.spec.variant == Variant::augmented),
        p_norm_(m.normalized_param(p_raw)),
        scaler_(m.scaler),
        weights_(unpack_weights(m.spec.target, m.target_weights(p_raw))) {}

  std::size_t isl() const override { return spec_.isl; }

  Matrix predict(const Matrix& raw) const override {
    const auto R = raw.rows();
    if (static_cast<std::size_t>(raw.cols()) != spec_.isl * D_) throw std::invalid_argument("predict: bad window width");
    Matrix x(R, raw.cols());
    for (Eigen::Index r = 0; r < R; ++r)
      for (Eigen::Index c = 0; c < raw.cols(); ++c) {
        const auto d = static_cast<std::size_t>(c) % D_;
        x(r, c) = (raw(r, c) - scaler_.x_mean[d]) / scaler_.x_std[d];
      }
    if (augmented_) x = augment_windows(x, D_, std::vector<double>(static_cast<std::size_t>(R), p_norm_));
    Graph g(&weights_, false);
    Var y = target_forward(g, spec_, fetch_params(g), g.constant(std::move(x), "windows"));
    Matrix out = g.value(y);
    for (Eigen::Index r = 0; r < R; ++r)
      for (std::size_t d = 0; d < D_; ++d) {
        auto& v = out(r, static_cast<Eigen::Index>(d));
        v = v * scaler_.dx_std[d] + scaler_.dx_mean[d];
      }
    return out;
  }

 private:
  TargetSpec spec_;
  std::size_t D_;
  bool augmented_;
  double p_norm_;
  Scaler scaler_;
  ParameterStore weights_;
};

}  // namespace

std::unique_ptr<Predictor> Model::bind(double p_raw) const { return std::make_unique<ModelPredictor>(*this, p_raw); }

}  // namespace phlie
