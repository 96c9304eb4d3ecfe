#include "phlie/analysis.hpp"

#include <Eigen/Eigenvalues>

#include <cmath>
#include <fstream>
#include <iomanip>
#include <stdexcept>

namespace phlie {

Pca2 pca2(const Matrix& X) {
  const auto m = X.rows();
  const auto D = X.cols();
  if (m < 2) throw std::invalid_argument("pca2 needs at least two points");
  Pca2 out;
  out.mean = X.colwise().mean().transpose();
  const Eigen::MatrixXd C = X.rowwise() - out.mean.transpose();
  const Eigen::MatrixXd cov = (C.transpose() * C) / static_cast<double>(m);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
  const Eigen::VectorXd ev = es.eigenvalues();  // ascending
  const double total = std::max(ev.sum(), 0.0);
  const double floor = 1e-24 * (1.0 + out.mean.squaredNorm());
  out.components = Matrix::Zero(2, D);
  out.explained.setZero();
  for (int k = 0; k < 2 && k < D; ++k) {
    const Eigen::Index col = D - 1 - k;
    const double lam = std::max(ev(col), 0.0);
    // degenerate direction stays zero; the floor absorbs rounding spread of identical points
    if (lam <= std::max(total * 1e-14, floor)) continue;
    Eigen::VectorXd v = es.eigenvectors().col(col);
    Eigen::Index arg = 0;
    v.cwiseAbs().maxCoeff(&arg);
    if (v(arg) < 0) v = -v;
    out.components.row(k) = v.transpose();
    out.explained(k) = lam / total;
  }
  out.projections = C * out.components.transpose();
  return out;
}

Matrix rbf_heatmap(const AnchorBank& bank, const std::vector<double>& probes) {
  Matrix H(static_cast<Eigen::Index>(probes.size()), static_cast<Eigen::Index>(bank.n_e));
  for (std::size_t i = 0; i < probes.size(); ++i)
    H.row(static_cast<Eigen::Index>(i)) = rbf_weights(bank, normalize_param(bank, probes[i])).transpose();
  return H;
}

std::vector<double> probe_grid(double lo, double hi, std::size_t count, double extend) {
  if (count == 0) return {};
  const double w = hi - lo;
  const double a = lo - extend * w, b = hi + extend * w;
  if (count == 1) return {0.5 * (a + b)};
  std::vector<double> g(count);
  for (std::size_t i = 0; i < count; ++i) g[i] = a + (b - a) * static_cast<double>(i) / static_cast<double>(count - 1);
  return g;
}

EmbeddingReport embedding_report(const Model& model, const std::vector<double>& probes) {
  if (model.spec.variant != Variant::phlienet) {
    throw std::invalid_argument("embedding analysis needs a phlienet checkpoint, got variant '" +
                                variant_name(model.spec.variant) + "'");
  }
  EmbeddingReport rep;
  rep.probes = probes;
  rep.anchor_embeddings = model.params.matrix(kEmbeddingsName);
  const auto m = static_cast<Eigen::Index>(probes.size());
  rep.embeddings.resize(m, static_cast<Eigen::Index>(model.bank.d_e));
  for (Eigen::Index i = 0; i < m; ++i)
    rep.embeddings.row(i) = embed(model.bank, rep.anchor_embeddings, probes[static_cast<std::size_t>(i)]).transpose();
  rep.heatmap = rbf_heatmap(model.bank, probes);
  rep.distances = m >= 1 ? weight_distance_matrix(model.hnn, model.bank, model.params, probes) : Matrix();
  if (m >= 2) {
    rep.pca = pca2(rep.embeddings);
    rep.anchor_projections =
        (rep.anchor_embeddings.rowwise() - rep.pca.mean.transpose()) * rep.pca.components.transpose();
  }
  return rep;
}

double monotone_row_fraction(const Matrix& D) {
  const auto m = D.rows();
  if (m < 2) return 1.0;
  Eigen::Index good = 0;
  for (Eigen::Index i = 0; i < m; ++i) {
    bool ok = true;
    for (Eigen::Index j = i + 1; j + 1 < m && ok; ++j) ok = D(i, j + 1) >= D(i, j);
    for (Eigen::Index j = i - 1; j >= 1 && ok; --j) ok = D(i, j - 1) >= D(i, j);
    if (ok) ++good;
  }
  return static_cast<double>(good) / static_cast<double>(m);
}

double monotone_pair_fraction(const std::vector<double>& v) {
  if (v.size() < 2) return 1.0;
  std::size_t up = 0, down = 0;
  for (std::size_t i = 0; i + 1 < v.size(); ++i) {
    if (v[i + 1] > v[i]) ++up;
    else if (v[i + 1] < v[i]) ++down;
  }
  return static_cast<double>(std::max(up, down)) / static_cast<double>(v.size() - 1);
}

void write_embedding_report(const EmbeddingReport& rep, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  auto open = [&](const char* name) {
    std::ofstream f(dir / name);
    if (!f) throw std::runtime_error(std::string("cannot write ") + (dir / name).string());
    f << std::setprecision(17);
    return f;
  };
  {
    auto f = open("embedding_pca.csv");
    f << "# explained_variance_ratio," << rep.pca.explained(0) << ',' << rep.pca.explained(1) << '\n';
    f << "kind,index,p,pc1,pc2\n";
    for (Eigen::Index i = 0; i < rep.pca.projections.rows(); ++i)
      f << "probe," << i << ',' << rep.probes[static_cast<std::size_t>(i)] << ',' << rep.pca.projections(i, 0) << ','
        << rep.pca.projections(i, 1) << '\n';
    for (Eigen::Index i = 0; i < rep.anchor_projections.rows(); ++i)
      f << "anchor," << i << ",," << rep.anchor_projections(i, 0) << ',' << rep.anchor_projections(i, 1) << '\n';
  }
  {
    auto f = open("rbf_heatmap.csv");
    f << "p";
    for (Eigen::Index a = 0; a < rep.heatmap.cols(); ++a) f << ",anchor" << a;
    f << '\n';
    for (Eigen::Index i = 0; i < rep.heatmap.rows(); ++i) {
      f << rep.probes[static_cast<std::size_t>(i)];
      for (Eigen::Index a = 0; a < rep.heatmap.cols(); ++a) f << ',' << rep.heatmap(i, a);
      f << '\n';
    }
  }
  {
    auto f = open("weight_distances.csv");
    f << "p";
    for (double p : rep.probes) f << ",p=" << p;
    f << '\n';
    for (Eigen::Index i = 0; i < rep.distances.rows(); ++i) {
      f << rep.probes[static_cast<std::size_t>(i)];
      for (Eigen::Index j = 0; j < rep.distances.cols(); ++j) f << ',' << rep.distances(i, j);
      f << '\n';
    }
  }
}

}  // namespace phlie
