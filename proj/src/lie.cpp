#include "phlie/lie.hpp"

#include <cmath>
#include <stdexcept>

namespace phlie {

AnchorBank make_anchor_bank(std::size_t n_e, std::size_t d_e, double sigma, std::vector<double> lo,
                            std::vector<double> hi) {
  if (n_e < 2) throw std::invalid_argument("anchor bank needs at least 2 anchors");
  if (d_e == 0) throw std::invalid_argument("embedding dimension must be positive");
  if (!(sigma > 0.0)) throw std::invalid_argument("rbf bandwidth must be positive");
  if (lo.empty() || lo.size() != hi.size()) throw std::invalid_argument("parameter range mismatch");
  for (std::size_t a = 0; a < lo.size(); ++a) {
    if (!(hi[a] > lo[a])) throw std::invalid_argument("parameter range must satisfy hi > lo");
  }
  AnchorBank bank;
  const std::size_t dp = lo.size();
  std::size_t total = 1;
  for (std::size_t a = 0; a < dp; ++a) total *= n_e;
  bank.n_e = total;
  bank.d_e = d_e;
  bank.sigma = sigma;
  bank.lo = std::move(lo);
  bank.hi = std::move(hi);
  bank.positions.resize(static_cast<Eigen::Index>(total), static_cast<Eigen::Index>(dp));
  for (std::size_t i = 0; i < total; ++i) {
    std::size_t rest = i;
    // last axis varies fastest
    for (std::size_t a = dp; a-- > 0;) {
      const std::size_t k = rest % n_e;
      rest /= n_e;
      bank.positions(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(a)) =
          static_cast<double>(k) / static_cast<double>(n_e - 1);
    }
  }
  return bank;
}

void init_embeddings(const AnchorBank& bank, ParameterStore& store, std::mt19937_64& gen) {
  std::normal_distribution<double> nd(0.0, 1.0 / std::sqrt(static_cast<double>(bank.d_e)));
  std::vector<double> v(bank.n_e * bank.d_e);
  for (auto& x : v) x = nd(gen);
  store.add(kEmbeddingsName, {bank.n_e, bank.d_e}, std::move(v));
}

double normalize_param(const AnchorBank& bank, double p_raw, std::size_t axis) {
  return (p_raw - bank.lo.at(axis)) / (bank.hi.at(axis) - bank.lo.at(axis));
}

Eigen::VectorXd normalize_param(const AnchorBank& bank, const Eigen::VectorXd& p_raw) {
  if (static_cast<std::size_t>(p_raw.size()) != bank.param_dim()) throw std::invalid_argument("parameter dimension mismatch");
  Eigen::VectorXd p(p_raw.size());
  for (Eigen::Index a = 0; a < p.size(); ++a) p(a) = normalize_param(bank, p_raw(a), static_cast<std::size_t>(a));
  return p;
}

Eigen::VectorXd rbf_weights(const AnchorBank& bank, const Eigen::VectorXd& p) {
  const auto n = static_cast<Eigen::Index>(bank.n_e);
  Eigen::VectorXd logits(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    logits(i) = -(bank.positions.row(i).transpose() - p).squaredNorm() / (2.0 * bank.sigma * bank.sigma);
  }
  const double mx = logits.maxCoeff();
  Eigen::VectorXd a = (logits.array() - mx).exp().matrix();
  return a / a.sum();
}

Eigen::VectorXd rbf_weights(const AnchorBank& bank, double p) {
  Eigen::VectorXd v(1);
  v(0) = p;
  return rbf_weights(bank, v);
}

Eigen::VectorXd embed(const AnchorBank& bank, const Matrix& embeddings, const Eigen::VectorXd& p_raw) {
  const Eigen::VectorXd a = rbf_weights(bank, normalize_param(bank, p_raw));
  return embeddings.transpose() * a;
}

Eigen::VectorXd embed(const AnchorBank& bank, const Matrix& embeddings, double p_raw) {
  Eigen::VectorXd v(1);
  v(0) = p_raw;
  return embed(bank, embeddings, v);
}

Eigen::VectorXd embed_dparam(const AnchorBank& bank, const Matrix& embeddings, double p_raw) {
  const double p = normalize_param(bank, p_raw);
  const Eigen::VectorXd a = rbf_weights(bank, p);
  const double s2 = bank.sigma * bank.sigma;
  Eigen::VectorXd gl(a.size());  // d logit_i / dp
  for (Eigen::Index i = 0; i < a.size(); ++i) gl(i) = -(p - bank.positions(i, 0)) / s2;
  const double mean = a.dot(gl);
  const Eigen::VectorXd da = a.cwiseProduct((gl.array() - mean).matrix()) / (bank.hi[0] - bank.lo[0]);
  return embeddings.transpose() * da;
}

Var embed_graph(Graph& g, const AnchorBank& bank, const std::vector<double>& p_raw) {
  Matrix alpha(static_cast<Eigen::Index>(p_raw.size()), static_cast<Eigen::Index>(bank.n_e));
  for (std::size_t r = 0; r < p_raw.size(); ++r) {
    alpha.row(static_cast<Eigen::Index>(r)) = rbf_weights(bank, normalize_param(bank, p_raw[r])).transpose();
  }
  Var a = g.constant(std::move(alpha), "lie.alpha");
  return g.matmul(a, g.param(kEmbeddingsName));
}

}  // namespace phlie
