#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <vector>

#include "fpna/permkit.hpp"
#include "fpna/permutation.hpp"

using namespace fpna;

namespace {

// O(n²) pair count over index pairs of the two vectors.
double tau_pairs(const Permutation& p, const Permutation& q) {
  const std::size_t n = p.size();
  long long c = 0, d = 0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) ((p[i] < p[j]) == (q[i] < q[j]) ? c : d) += 1;
  return static_cast<double>(c - d) / (0.5 * static_cast<double>(n) * static_cast<double>(n - 1));
}

double brute_min_cost(const Matrix& cost) {
  std::vector<std::size_t> idx(cost.rows());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  double best = std::numeric_limits<double>::infinity();
  do {
    double c = 0.0;
    for (std::size_t r = 0; r < idx.size(); ++r) c += cost(r, idx[r]);
    best = std::min(best, c);
  } while (std::next_permutation(idx.begin(), idx.end()));
  return best;
}

Matrix random_matrix(std::size_t n, std::mt19937_64& rng, double lo = 0.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Matrix m(n, n);
  for (double& v : m.values()) v = u(rng);
  return m;
}

}  // namespace

TEST_CASE("permutation basics") {
  CHECK_THROWS(Permutation({0, 0, 1}));
  CHECK_THROWS(Permutation({0, 3}));
  CHECK(Permutation::cyclic_shift(4, 1) == Permutation({1, 2, 3, 0}));
  CHECK(Permutation::reversal(3) == Permutation({2, 1, 0}));
  CHECK(Permutation::parse("2,0,1") == Permutation({2, 0, 1}));
  CHECK(Permutation({2, 0, 1}).to_string() == "2,0,1");
  CHECK(Permutation({2, 0, 1}).inverse() == Permutation({1, 2, 0}));
  CHECK(compose(Permutation({2, 0, 1}), Permutation({1, 2, 0})) == Permutation({0, 1, 2}));
  CHECK_THROWS(compose(Permutation::identity(2), Permutation::identity(3)));
  std::mt19937_64 a(9), b(9);
  CHECK(Permutation::random(100, a) == Permutation::random(100, b));
}

TEST_CASE("compose with inverse is identity") {
  std::mt19937_64 rng(1);
  for (std::size_t d : {1, 2, 17, 1000}) {
    const auto p = Permutation::random(d, rng);
    CHECK(compose(p, invert(p)).is_identity());
    CHECK(compose(invert(p), p).is_identity());
  }
}

TEST_CASE("kendall_tau examples") {
  CHECK(kendall_tau(Permutation({0, 1, 2}), Permutation({0, 1, 2})) == 1.0);
  CHECK(kendall_tau(Permutation({0, 1, 2}), Permutation({2, 1, 0})) == -1.0);
  CHECK(kendall_tau(Permutation({0, 1, 2}), Permutation({0, 2, 1})) == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  CHECK(kendall_tau(Permutation::identity(1), Permutation::identity(1)) == 1.0);
  CHECK_THROWS(kendall_tau(Permutation::identity(2), Permutation::identity(3)));
}

TEST_CASE("kendall_tau matches pair counting, is symmetric and relabeling invariant") {
  std::mt19937_64 rng(2);
  for (int t = 0; t < 200; ++t) {
    const std::size_t n = 2 + static_cast<std::size_t>(t % 60);
    const auto p = Permutation::random(n, rng), q = Permutation::random(n, rng), s = Permutation::random(n, rng);
    const double tau = kendall_tau(p, q);
    CHECK(tau == doctest::Approx(tau_pairs(p, q)).epsilon(1e-12));
    CHECK(tau == kendall_tau(q, p));
    CHECK(tau == kendall_tau(compose(p, s), compose(q, s)));
    CHECK(std::abs(tau) <= 1.0);
    CHECK(kendall_tau(p, p) == 1.0);
  }
}

TEST_CASE("count_inversions") {
  const std::vector<std::size_t> v{3, 1, 2, 0};
  CHECK(count_inversions(v) == 5);
  CHECK(count_inversions(std::vector<std::size_t>{}) == 0);
}

TEST_CASE("hungarian examples") {
  CHECK(hungarian(Matrix{{0.0}}) == Permutation({0}));
  const Matrix c{{1, 2}, {2, 1}};
  CHECK(hungarian(c) == Permutation({0, 1}));
  CHECK(assignment_cost(c, hungarian(c)) == 2.0);
  CHECK(hungarian(Matrix(0, 0)).size() == 0);
  CHECK_THROWS(hungarian(Matrix(2, 3)));
  CHECK_THROWS(hungarian(Matrix{{0.0, std::nan("")}, {1.0, 2.0}}));
}

TEST_CASE("hungarian is optimal against brute force") {
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<int> u(-20, 50);
  for (int t = 0; t < 30; ++t) {
    Matrix m(7, 7);
    for (double& v : m.values()) v = u(rng);
    CHECK(assignment_cost(m, hungarian(m)) == brute_min_cost(m));
  }
  for (std::size_t n = 1; n <= 6; ++n) {
    const auto m = random_matrix(n, rng, -3.0, 3.0);
    CHECK(assignment_cost(m, hungarian(m)) == doctest::Approx(brute_min_cost(m)).epsilon(1e-12));
  }
}

TEST_CASE("hungarian beats random assignments") {
  std::mt19937_64 rng(4);
  const auto m = random_matrix(60, rng);
  const double best = assignment_cost(m, hungarian(m));
  for (int t = 0; t < 1000; ++t) CHECK(best <= assignment_cost(m, Permutation::random(60, rng)) + 1e-12);
}

TEST_CASE("hungarian at 1024 finishes quickly") {
  std::mt19937_64 rng(5);
  const auto m = random_matrix(1024, rng);
  const auto t0 = std::chrono::steady_clock::now();
  const auto p = hungarian(m);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  CHECK(p.size() == 1024);
  CHECK(secs < 5.0);
}

TEST_CASE("sinkhorn examples") {
  const auto half = sinkhorn(Matrix(2, 2, 0.0), 0.7, 5);
  for (double v : half.matrix().values()) CHECK(v == doctest::Approx(0.5).epsilon(1e-15));

  Matrix diag(5, 5, 0.0);
  for (std::size_t i = 0; i < 5; ++i) diag(i, i) = 10.0;
  const auto near_id = sinkhorn(diag, 0.1, 30);
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = 0; j < 5; ++j) CHECK(std::abs(near_id.matrix()(i, j) - (i == j ? 1.0 : 0.0)) < 1e-3);

  CHECK_THROWS(sinkhorn(diag, 0.0, 5));
  CHECK_THROWS(sinkhorn(diag, 1.0, 0));
  CHECK_THROWS(sinkhorn(Matrix(2, 3), 1.0, 5));
}

TEST_CASE("sinkhorn output is doubly stochastic after 50 iterations") {
  std::mt19937_64 rng(6);
  for (std::size_t n : {2, 5, 16, 40}) {
    const auto l = random_matrix(n, rng, -2.0, 2.0);
    for (double temp : {0.5, 1.0, 3.0}) CHECK(sinkhorn(l, temp, 50).stochastic_error() < 1e-6);
  }
}

TEST_CASE("sinkhorn_backward matches central differences") {
  std::mt19937_64 rng(7);
  const std::size_t n = 4;
  const auto logits = random_matrix(n, rng, -1.0, 1.0);
  const auto weights = random_matrix(n, rng, -1.0, 1.0);
  const double temp = 0.8;
  const int iters = 6;
  auto objective = [&](const Matrix& l) {
    const auto p = sinkhorn(l, temp, iters);
    double s = 0.0;
    for (std::size_t k = 0; k < p.matrix().size(); ++k) s += weights.values()[k] * p.matrix().values()[k];
    return s;
  };
  SinkhornTape tape;
  sinkhorn(logits, temp, iters, &tape);
  const auto grad = sinkhorn_backward(logits, tape, weights);
  const double h = 1e-6;
  for (std::size_t k = 0; k < logits.size(); ++k) {
    Matrix up = logits, down = logits;
    up.values()[k] += h;
    down.values()[k] -= h;
    const double fd = (objective(up) - objective(down)) / (2 * h);
    CHECK(grad.values()[k] == doctest::Approx(fd).epsilon(1e-6).scale(1.0));
  }
}

TEST_CASE("gumbel_perturb") {
  const Matrix zero(30, 30, 0.0);
  std::mt19937_64 rng(8);
  CHECK(gumbel_perturb(zero, 0.0, rng) == zero);
  std::mt19937_64 r1(8), r2(8);
  CHECK(gumbel_perturb(zero, 1.0, r1) == gumbel_perturb(zero, 1.0, r2));
  CHECK_THROWS(gumbel_perturb(zero, -1.0, rng));

  const Matrix row(1, 100000, 0.0);
  const auto g = gumbel_perturb(row, 1.0, rng);
  const double m = std::accumulate(g.values().begin(), g.values().end(), 0.0) / 100000.0;
  CHECK(std::abs(m - 0.5772156649) < 0.01);
}

TEST_CASE("harden") {
  Matrix near_id(6, 6, 0.02);
  for (std::size_t i = 0; i < 6; ++i) near_id(i, i) = 0.9;
  CHECK(harden(SoftPermutation(near_id)).is_identity());
  Matrix anti(6, 6, 0.02);
  for (std::size_t i = 0; i < 6; ++i) anti(i, 5 - i) = 0.9;
  CHECK(harden(SoftPermutation(anti)) == Permutation::reversal(6));

  std::mt19937_64 rng(10);
  for (int t = 0; t < 20; ++t) {
    const auto soft = sinkhorn(random_matrix(6, rng, -2.0, 2.0), 1.0, 30);
    const auto got = harden(soft);
    double got_score = 0.0;
    for (std::size_t i = 0; i < 6; ++i) got_score += soft.matrix()(i, got[i]);
    std::vector<std::size_t> idx(6);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    double best = -1.0;
    do {
      double s = 0.0;
      for (std::size_t i = 0; i < 6; ++i) s += soft.matrix()(i, idx[i]);
      best = std::max(best, s);
    } while (std::next_permutation(idx.begin(), idx.end()));
    CHECK(got_score == doctest::Approx(best).epsilon(1e-12));
  }
}

TEST_CASE("hardened sinkhorn settles as the temperature drops") {
  std::mt19937_64 rng(11);
  const auto logits = random_matrix(8, rng, -1.0, 1.0);
  Matrix cost = logits;
  for (double& c : cost.values()) c = -c;
  const auto best = hungarian(cost);
  for (double temp : {0.05, 0.02, 0.01, 0.005}) CHECK(harden(sinkhorn(logits, temp, 300)) == best);
}

TEST_CASE("from_permutation places ones at (i, order[i])") {
  const auto s = SoftPermutation::from_permutation(Permutation({2, 0, 1}));
  CHECK(s.matrix()(0, 2) == 1.0);
  CHECK(s.matrix()(1, 0) == 1.0);
  CHECK(s.stochastic_error() == 0.0);
}
