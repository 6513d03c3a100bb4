#include "apgl/agcl.hpp"

#include "fd.hpp"
#include "oracles.hpp"

#include <doctest.h>

#include <cmath>
#include <random>

using namespace apgl;
using namespace apgl::testing;

TEST_CASE("lightgcn_propagate") {
  SUBCASE("identity graph returns E0") {
    const SparseGraph eye = finalize_graph(CooccurrenceAccumulator{4, {}}, {});
    Matrix e0 = Matrix::Random(5, 3);
    e0.row(0).setZero();
    CHECK(lightgcn_propagate(eye, e0, 1) == e0);
    CHECK((lightgcn_propagate(eye, e0, 2) - e0).cwiseAbs().maxCoeff() < 1e-15);
  }
  SUBCASE("two-node hand example") {
    const SparseGraph g = SparseGraph::from_triplets(2, {{0, 0, 1.0}, {0, 1, 1.0}, {1, 0, 1.0}, {1, 1, 1.0}});
    const Matrix e0 = Matrix::Identity(2, 2);
    Matrix expected(2, 2);
    expected << 1, 0.5, 0.5, 1;
    CHECK(lightgcn_propagate(g, e0, 1) == expected);
  }
  SUBCASE("paper-literal scaling") {
    const SparseGraph g = random_graph(12, 2);
    const Matrix e0 = Matrix::Random(13, 4);
    for (int layers : {1, 2, 3}) {
      const Matrix mean = lightgcn_propagate(g, e0, layers, LayerCombine::Mean);
      const Matrix literal = lightgcn_propagate(g, e0, layers, LayerCombine::PaperLiteral);
      CHECK((mean * (layers + 1.0) / layers - literal).cwiseAbs().maxCoeff() < 1e-12);
    }
  }
  SUBCASE("shape mismatch") {
    const SparseGraph g = random_graph(5, 1);
    CHECK_THROWS_AS(lightgcn_propagate(g, Matrix::Zero(5, 2), 2), Error);
    CHECK_THROWS_AS(lightgcn_propagate(g, Matrix::Zero(6, 2), 0), Error);
  }
}

TEST_CASE("perturbed_propagate") {
  SUBCASE("factored order equals the dense materialisation over 20 seeds") {
    double worst = 0.0;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      std::mt19937_64 rng(seed);
      const SparseGraph g = random_graph(40, seed + 100);
      Matrix w_us = gaussian(41, 3, rng), w_v = gaussian(41, 3, rng);
      w_us.row(0).setZero();
      w_v.row(0).setZero();
      const Matrix e0 = gaussian(41, 8, rng);
      const Matrix fast = perturbed_propagate(g, w_us, w_v, 0.05, e0, 2);
      worst = std::max(worst, (fast - dense_oracle(g, w_us, w_v, 0.05, e0, 2)).cwiseAbs().maxCoeff());
    }
    CHECK(worst < 1e-9);
  }
  SUBCASE("alpha = 0 and W_us = 0 are bitwise LightGCN") {
    std::mt19937_64 rng(4);
    const SparseGraph g = random_graph(30, 4);
    const Matrix e0 = gaussian(31, 8, rng);
    const Matrix w = gaussian(31, 3, rng);
    const Matrix plain = lightgcn_propagate(g, e0, 2);
    CHECK(perturbed_propagate(g, w, w, 0.0, e0, 2) == plain);
    CHECK(perturbed_propagate(g, Matrix::Zero(31, 3), w, 0.05, e0, 2) == plain);
  }
  SUBCASE("tape version matches values and finite differences") {
    std::mt19937_64 rng(9);
    const SparseGraph g = random_graph(8, 9);
    const Matrix e0 = gaussian(9, 3, rng), w_us = gaussian(9, 2, rng), w_v = gaussian(9, 2, rng);
    Tape t(false);
    CHECK((perturbed_propagate(g, t.constant(w_us), t.constant(w_v), 0.3, t.constant(e0), 2, LayerCombine::Mean)
               .value() -
           perturbed_propagate(g, w_us, w_v, 0.3, e0, 2))
              .cwiseAbs()
              .maxCoeff() < 1e-14);
    CHECK(fd_error(
              [&](Tape& tp, const auto& x) {
                return apgl::testing::contract(
                    tp, perturbed_propagate(g, x[0], x[1], 0.3, x[2], 2, LayerCombine::Mean));
              },
              {w_us, w_v, e0}) < 1e-7);
    CHECK(fd_error([&](Tape& tp, const auto& x) {
            return apgl::testing::contract(tp, lightgcn_propagate(g, x[0], 2, LayerCombine::PaperLiteral));
          },
                   {e0}) < 1e-7);
  }
}

TEST_CASE("gce_loss") {
  SUBCASE("single item is zero") {
    const Matrix e = Matrix::Random(4, 3);
    const std::vector<int> items{2};
    CHECK(std::abs(gce_loss(e, e, items, 0.2)) < 1e-12);
  }
  SUBCASE("identical rows give B log B") {
    const Matrix e = Matrix::Ones(6, 4);
    const std::vector<int> items{1, 2, 3, 5};
    CHECK(std::abs(gce_loss(e, e, items, 0.2) - 4 * std::log(4.0)) < 1e-9);
  }
  SUBCASE("orthogonal unit rows, tau = 0.2, B = 2") {
    Matrix e = Matrix::Zero(3, 2);
    e(1, 0) = 1.0;
    e(2, 1) = 1.0;
    const std::vector<int> items{1, 2};
    const double per_anchor = -std::log(std::exp(5.0) / (std::exp(5.0) + 1.0));
    CHECK(per_anchor == doctest::Approx(0.006715).epsilon(1e-4));
    CHECK(std::abs(gce_loss(e, e, items, 0.2) - 0.013430) < 1e-6);
  }
  SUBCASE("non-negative; positive for B > 1") {
    std::mt19937_64 rng(2);
    const std::vector<int> items{1, 3, 4, 7};
    for (int trial = 0; trial < 10; ++trial) {
      const Matrix a = gaussian(8, 5, rng), b = gaussian(8, 5, rng);
      CHECK(gce_loss(a, b, items, 0.2) > 1e-12);
    }
  }
  SUBCASE("invariant to joint positive rescaling of one row") {
    std::mt19937_64 rng(5);
    Matrix a = gaussian(8, 5, rng), b = gaussian(8, 5, rng);
    const std::vector<int> items{1, 2, 6};
    const double before = gce_loss(a, b, items, 0.2);
    a.row(2) *= 7.3;
    b.row(2) *= 7.3;
    CHECK(std::abs(gce_loss(a, b, items, 0.2) - before) < 1e-9);
  }
  SUBCASE("preconditions") {
    const Matrix e = Matrix::Random(5, 3);
    const std::vector<int> empty, dup{1, 1}, pad{0, 2};
    CHECK_THROWS_AS(gce_loss(e, e, empty, 0.2), Error);
    CHECK_THROWS_AS(gce_loss(e, e, dup, 0.2), Error);
    CHECK_THROWS_AS(gce_loss(e, e, pad, 0.2), Error);
    Matrix z = e;
    z.row(3).setZero();
    const std::vector<int> ok{3, 4};
    CHECK_THROWS_AS(gce_loss(z, e, ok, 0.2), Error);
  }
  SUBCASE("gradients") {
    std::mt19937_64 rng(6);
    const std::vector<int> items{1, 2, 4};
    CHECK(fd_error([&](Tape&, const auto& x) { return gce_loss(x[0], x[1], items, 0.2); },
                   {gaussian(5, 3, rng), gaussian(5, 3, rng)}) < 1e-7);
  }
}
