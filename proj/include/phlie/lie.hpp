#pragma once

#include "phlie/diffcore.hpp"

#include <Eigen/Dense>

#include <random>
#include <vector>

namespace phlie {

/// Anchor positions and kernel settings of the LIE layer. The anchor
/// embeddings themselves live in a ParameterStore under `lie.embeddings`
/// with shape (N_e, D_e).
struct AnchorBank {
  std::size_t n_e = 0;
  std::size_t d_e = 0;
  Matrix positions;         // N_e x D_p, normalized coordinates
  double sigma = 0.2;
  std::vector<double> lo;   // training range per parameter dim
  std::vector<double> hi;

  std::size_t param_dim() const { return lo.size(); }
};

inline constexpr const char* kEmbeddingsName = "lie.embeddings";

/// Uniform anchors (i-1)/(N_e-1) for D_p = 1. For D_p > 1, `n_e` is the
/// per-axis count and the bank holds the full n_e^D_p grid.
AnchorBank make_anchor_bank(std::size_t n_e, std::size_t d_e, double sigma, std::vector<double> lo,
                            std::vector<double> hi);

/// Adds `lie.embeddings` drawn from N(0, 1/D_e).
void init_embeddings(const AnchorBank& bank, ParameterStore& store, std::mt19937_64& gen);

double normalize_param(const AnchorBank& bank, double p_raw, std::size_t axis = 0);
Eigen::VectorXd normalize_param(const AnchorBank& bank, const Eigen::VectorXd& p_raw);

/// Softmax over anchors of -|p - p_i|^2 / (2 sigma^2), p already normalized.
Eigen::VectorXd rbf_weights(const AnchorBank& bank, const Eigen::VectorXd& p);
Eigen::VectorXd rbf_weights(const AnchorBank& bank, double p);

/// e(p) = sum_i alpha_i(p) e_i for raw parameter p_raw; `embeddings` is N_e x D_e.
Eigen::VectorXd embed(const AnchorBank& bank, const Matrix& embeddings, double p_raw);
Eigen::VectorXd embed(const AnchorBank& bank, const Matrix& embeddings, const Eigen::VectorXd& p_raw);

/// d e / d p_raw for D_p = 1.
Eigen::VectorXd embed_dparam(const AnchorBank& bank, const Matrix& embeddings, double p_raw);

/// Graph form: one row of e(p) per entry of `p_raw` (D_p = 1), differentiable
/// with respect to the embeddings.
Var embed_graph(Graph& g, const AnchorBank& bank, const std::vector<double>& p_raw);

}  // namespace phlie
