#pragma once

#include "phlie/diffcore.hpp"
#include "phlie/model.hpp"

#include <filesystem>
#include <vector>

namespace phlie {

struct Pca2 {
  Matrix projections;          // m x 2
  Matrix components;           // 2 x D, rows are principal directions
  Eigen::VectorXd mean;
  Eigen::Vector2d explained = Eigen::Vector2d::Zero();  // variance ratios
};

/// Projection onto the top two principal directions of the centered points.
/// Each component's largest-magnitude coordinate is made positive.
Pca2 pca2(const Matrix& points);

/// Row i holds rbf_weights at probe i (raw parameter values).
Matrix rbf_heatmap(const AnchorBank& bank, const std::vector<double>& probes);

/// `count` raw values evenly spanning [lo, hi] widened by `extend` of the width on both sides.
std::vector<double> probe_grid(double lo, double hi, std::size_t count, double extend = 0.1);

struct EmbeddingReport {
  std::vector<double> probes;
  Matrix embeddings;        // probes x D_e
  Matrix anchor_embeddings; // N_e x D_e
  Pca2 pca;                 // fitted on the probe embeddings
  Matrix anchor_projections;
  Matrix heatmap;
  Matrix distances;
};

/// Throws std::invalid_argument for a non-phlienet model.
EmbeddingReport embedding_report(const Model& model, const std::vector<double>& probes);

/// Fraction of rows whose off-diagonal entries never decrease as |i-j| grows.
double monotone_row_fraction(const Matrix& distances);

/// Fraction of consecutive probe pairs along which `values` moves in its dominant direction.
double monotone_pair_fraction(const std::vector<double>& values);

void write_embedding_report(const EmbeddingReport& rep, const std::filesystem::path& dir);

}  // namespace phlie
