#include <doctest.h>

#include "phlie/hypernet.hpp"
#include "phlie/lie.hpp"
#include "phlie/targets.hpp"

#include <cmath>
#include <random>

using namespace phlie;

namespace {

AnchorBank bank_at(std::vector<double> pos, std::size_t d_e, double sigma = 0.2) {
  AnchorBank b = make_anchor_bank(pos.size(), d_e, sigma, {0.0}, {1.0});
  for (std::size_t i = 0; i < pos.size(); ++i) b.positions(static_cast<Eigen::Index>(i), 0) = pos[i];
  return b;
}

}  // namespace

TEST_SUITE("lie") {
  TEST_CASE("parameter normalization") {
    auto b = make_anchor_bank(4, 2, 0.2, {1.0}, {8.0});
    CHECK(normalize_param(b, 1.0) == 0.0);
    CHECK(normalize_param(b, 8.0) == 1.0);
    CHECK(normalize_param(b, 9.4) == doctest::Approx(1.2).epsilon(1e-14));
  }

  TEST_CASE("anchors span the unit interval") {
    auto b = make_anchor_bank(5, 3, 0.2, {1.0}, {8.0});
    CHECK(b.positions.rows() == 5);
    CHECK(b.positions(0, 0) == 0.0);
    CHECK(b.positions(4, 0) == 1.0);
    CHECK(b.positions(2, 0) == doctest::Approx(0.5));
  }

  TEST_CASE("two anchor weights") {
    auto b = bank_at({0.0, 1.0}, 2);
    auto mid = rbf_weights(b, 0.5);
    CHECK(mid(0) == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(mid(1) == doctest::Approx(0.5).epsilon(1e-15));
    auto a = rbf_weights(b, 0.0);
    CHECK(std::abs(a(0) - 0.9999962733607158) < 1e-14);
    CHECK(std::abs(a(1) - 3.7266392841865614e-06) < 1e-16);
  }

  TEST_CASE("three anchor worked example") {
    auto b = bank_at({0.0, 0.5, 1.0}, 3);
    Matrix E = Matrix::Identity(3, 3);
    auto a = rbf_weights(b, 0.25);
    const double z0 = std::exp(-0.78125), z2 = std::exp(-7.03125);
    const double s = 2 * z0 + z2;
    CHECK(std::abs(a(0) - z0 / s) < 1e-12);
    CHECK(std::abs(a(2) - z2 / s) < 1e-12);
    CHECK(std::abs(a(0) - 0.4995178518483899) < 1e-10);
    CHECK(std::abs(a(2) - 0.0009642963032203043) < 1e-10);
    auto e = embed(b, E, 0.25);
    CHECK(std::abs(e(0) - a(0)) < 1e-15);
    CHECK(std::abs(e(1) - a(1)) < 1e-15);
  }

  TEST_CASE("convex combination properties") {
    std::mt19937_64 gen(21);
    std::uniform_real_distribution<double> u(-0.3, 1.3);
    std::normal_distribution<double> n;
    for (int k = 0; k < 200; ++k) {
      const std::size_t ne = 2 + static_cast<std::size_t>(gen() % 30);
      auto b = make_anchor_bank(ne, 4, 0.05 + 0.5 * std::abs(n(gen)), {0.0}, {1.0});
      Matrix E(static_cast<Eigen::Index>(ne), 4);
      for (Eigen::Index i = 0; i < E.size(); ++i) E.data()[i] = n(gen);
      const double p = u(gen);
      auto a = rbf_weights(b, p);
      CHECK(std::abs(a.sum() - 1.0) < 1e-12);
      CHECK(a.minCoeff() > 0.0);
      auto e = embed(b, E, p);
      for (int d = 0; d < 4; ++d) {
        CHECK(e(d) >= E.col(d).minCoeff() - 1e-12);
        CHECK(e(d) <= E.col(d).maxCoeff() + 1e-12);
      }
    }
  }

  TEST_CASE("constant anchors give a constant embedding") {
    auto b = make_anchor_bank(6, 3, 0.2, {1.0}, {8.0});
    Matrix E(6, 3);
    E.rowwise() = Eigen::RowVector3d(0.3, -1.0, 2.0);
    for (double p : {1.0, 3.3, 8.0, 9.4}) {
      auto e = embed(b, E, p);
      CHECK((e - Eigen::Vector3d(0.3, -1.0, 2.0)).norm() < 1e-14);
    }
  }

  TEST_CASE("one-hot anchors at the midpoint") {
    auto b = bank_at({0.0, 1.0}, 2);
    auto e = embed(b, Matrix::Identity(2, 2), 0.5);
    CHECK(e(0) == doctest::Approx(0.5));
    CHECK(e(1) == doctest::Approx(0.5));
  }

  TEST_CASE("embedding derivative matches finite differences") {
    auto b = make_anchor_bank(7, 5, 0.2, {1.0}, {8.0});
    ParameterStore s;
    std::mt19937_64 gen(2);
    init_embeddings(b, s, gen);
    const Matrix E = s.matrix(kEmbeddingsName);
    for (double p : {1.2, 4.4, 7.9}) {
      const double h = 1e-6;
      Eigen::VectorXd num = (embed(b, E, p + h) - embed(b, E, p - h)) / (2 * h);
      CHECK((embed_dparam(b, E, p) - num).norm() < 1e-7 * std::max(1.0, num.norm()));
    }
  }

  TEST_CASE("graph embedding equals the direct one") {
    auto b = make_anchor_bank(4, 3, 0.3, {0.0}, {2.0});
    ParameterStore s;
    std::mt19937_64 gen(8);
    init_embeddings(b, s, gen);
    Graph g(&s);
    Var e = embed_graph(g, b, {0.5, 1.7});
    auto d0 = embed(b, s.matrix(kEmbeddingsName), 0.5);
    auto d1 = embed(b, s.matrix(kEmbeddingsName), 1.7);
    for (int d = 0; d < 3; ++d) {
      CHECK(g.value(e)(0, d) == doctest::Approx(d0(d)).epsilon(1e-14));
      CHECK(g.value(e)(1, d) == doctest::Approx(d1(d)).epsilon(1e-14));
    }
  }

  TEST_CASE("two-dimensional parameters use a grid and still sum to one") {
    auto b = make_anchor_bank(9, 2, 0.3, {0.0, 0.0}, {1.0, 2.0});
    CHECK(b.param_dim() == 2);
    CHECK(b.positions.cols() == 2);
    Eigen::Vector2d p(0.3, 0.9);
    auto a = rbf_weights(b, normalize_param(b, p));
    CHECK(std::abs(a.sum() - 1.0) < 1e-12);
  }
}

TEST_SUITE("hypernet") {
  TargetSpec tcnn2() {
    TargetSpec t;
    t.kind = TargetKind::tcnn_cd;
    t.input_dim = 2;
    t.output_dim = 2;
    t.isl = 16;
    t.channels = 22;
    return t;
  }

  TEST_CASE("output length equals the target count") {
    HyperNetSpec h{16, {64, 64}, target_param_count(tcnn2())};
    ParameterStore s;
    std::mt19937_64 gen(1);
    init_hypernet(h, tcnn2().layers(), s, gen);
    auto w = generate_weights(h, s, Eigen::VectorXd::Constant(16, 0.1));
    CHECK(w.size() == target_param_count(tcnn2()));
    auto w2 = generate_weights(h, s, Eigen::VectorXd::Constant(16, 0.1));
    CHECK(w == w2);
    CHECK(hypernet_tensor_names(h).size() == 6);
  }

  TEST_CASE("zero hypernetwork gives zero weights") {
    HyperNetSpec h{4, {8, 8}, 10};
    ParameterStore s;
    std::mt19937_64 gen(1);
    init_hypernet(h, 2, s, gen);
    for (auto& e : s.entries()) std::fill(e.values.begin(), e.values.end(), 0.0);
    for (double v : generate_weights(h, s, Eigen::Vector4d(1, -2, 3, 0.5))) CHECK(v == 0.0);
  }

  TEST_CASE("graph and direct evaluation agree") {
    HyperNetSpec h{3, {5, 4}, 7};
    ParameterStore s;
    std::mt19937_64 gen(3);
    init_hypernet(h, 2, s, gen);
    for (auto& e : s.entries())
      for (auto& v : e.values) v = std::normal_distribution<double>(0, 0.5)(gen);
    Eigen::Vector3d e(0.2, -0.4, 0.9);
    Graph g(&s);
    Var out = hypernet_graph(g, h, g.constant(e.transpose()));
    auto direct = generate_weights(h, s, e);
    for (std::size_t i = 0; i < 7; ++i) CHECK(g.value(out)(0, static_cast<Eigen::Index>(i)) == doctest::Approx(direct[i]).epsilon(1e-14));
  }

  TEST_CASE("weight distance matrix") {
    HyperNetSpec h{4, {8}, 6};
    auto b = make_anchor_bank(5, 4, 0.2, {1.0}, {8.0});
    ParameterStore s;
    std::mt19937_64 gen(5);
    init_embeddings(b, s, gen);
    init_hypernet(h, 1, s, gen);
    for (auto& e : s.entries())
      for (auto& v : e.values) v += std::normal_distribution<double>(0, 0.3)(gen);
    auto same = weight_distance_matrix(h, b, s, {3.0, 3.0, 3.0});
    CHECK(same.norm() == 0.0);
    auto two = weight_distance_matrix(h, b, s, {2.0, 6.0});
    const auto E = s.matrix(kEmbeddingsName);
    auto w1 = generate_weights(h, s, embed(b, E, 2.0)), w2 = generate_weights(h, s, embed(b, E, 6.0));
    double d = 0;
    for (std::size_t i = 0; i < w1.size(); ++i) d += (w1[i] - w2[i]) * (w1[i] - w2[i]);
    CHECK(two(0, 0) == 0.0);
    CHECK(two(1, 1) == 0.0);
    CHECK(two(0, 1) == doctest::Approx(std::sqrt(d)).epsilon(1e-12));
    CHECK(two(1, 0) == two(0, 1));
  }
}
