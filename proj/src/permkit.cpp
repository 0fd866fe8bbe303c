#include "fpna/permkit.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace fpna {

namespace {

std::uint64_t merge_count(std::size_t* a, std::size_t* scratch, std::size_t n) {
  if (n < 2) return 0;
  const std::size_t half = n / 2;
  std::uint64_t inversions = merge_count(a, scratch, half) + merge_count(a + half, scratch, n - half);
  std::size_t i = 0, j = half, k = 0;
  while (i < half && j < n) {
    if (a[i] <= a[j]) {
      scratch[k++] = a[i++];
    } else {
      // a[j] jumps ahead of every element left in the left run
      inversions += half - i;
      scratch[k++] = a[j++];
    }
  }
  while (i < half) scratch[k++] = a[i++];
  while (j < n) scratch[k++] = a[j++];
  std::copy(scratch, scratch + n, a);
  return inversions;
}

}  // namespace

std::uint64_t count_inversions(std::span<const std::size_t> values) {
  std::vector<std::size_t> work(values.begin(), values.end());
  std::vector<std::size_t> scratch(values.size());
  return merge_count(work.data(), scratch.data(), work.size());
}

double kendall_tau(const Permutation& p, const Permutation& q) {
  if (p.size() != q.size()) throw std::invalid_argument("kendall_tau: length mismatch");
  const std::size_t n = p.size();
  if (n < 2) return 1.0;
  const Permutation relative = compose(q, p.inverse());
  const auto discordant = static_cast<double>(count_inversions(relative.indices()));
  const double pairs = 0.5 * static_cast<double>(n) * static_cast<double>(n - 1);
  return (pairs - 2.0 * discordant) / pairs;
}

Permutation hungarian(const Matrix& cost) {
  if (!cost.square()) throw std::invalid_argument("hungarian: cost matrix must be square");
  for (double c : cost.values()) {
    if (!std::isfinite(c)) throw std::invalid_argument("hungarian: non-finite cost");
  }
  const std::size_t n = cost.rows();
  if (n == 0) return Permutation{};

  // 1-based potentials; column 0 is a virtual column holding the row being
  // inserted. owner[j] is the row matched to column j (0 = free).
  constexpr double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0), min_slack(n + 1);
  std::vector<std::size_t> owner(n + 1, 0), way(n + 1, 0);
  std::vector<char> used(n + 1);

  for (std::size_t row = 1; row <= n; ++row) {
    owner[0] = row;
    std::size_t col0 = 0;
    std::fill(min_slack.begin(), min_slack.end(), inf);
    std::fill(used.begin(), used.end(), 0);
    do {
      used[col0] = 1;
      const std::size_t r0 = owner[col0];
      const double* crow = cost.data() + (r0 - 1) * n;
      const double ur = u[r0];
      double delta = inf;
      std::size_t col1 = 0;
      for (std::size_t j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = crow[j - 1] - ur - v[j];
        if (cur < min_slack[j]) {
          min_slack[j] = cur;
          way[j] = col0;
        }
        if (min_slack[j] < delta) {
          delta = min_slack[j];
          col1 = j;
        }
      }
      for (std::size_t j = 0; j <= n; ++j) {
        if (used[j]) {
          u[owner[j]] += delta;
          v[j] -= delta;
        } else {
          min_slack[j] -= delta;
        }
      }
      col0 = col1;
    } while (owner[col0] != 0);
    do {
      const std::size_t col1 = way[col0];
      owner[col0] = owner[col1];
      col0 = col1;
    } while (col0 != 0);
  }

  std::vector<std::size_t> assignment(n);
  for (std::size_t j = 1; j <= n; ++j) assignment[owner[j] - 1] = j - 1;
  return Permutation(std::move(assignment));
}

double assignment_cost(const Matrix& cost, const Permutation& assignment) {
  if (!cost.square() || cost.rows() != assignment.size()) {
    throw std::invalid_argument("assignment_cost: shape mismatch");
  }
  double total = 0.0;
  for (std::size_t r = 0; r < assignment.size(); ++r) total += cost(r, assignment[r]);
  return total;
}

SoftPermutation SoftPermutation::from_permutation(const Permutation& order) {
  Matrix m(order.size(), order.size());
  for (std::size_t i = 0; i < order.size(); ++i) m(i, order[i]) = 1.0;
  return SoftPermutation(std::move(m));
}

double SoftPermutation::stochastic_error() const {
  const std::size_t n = matrix_.rows();
  double worst = 0.0;
  std::vector<double> col(matrix_.cols(), 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    double row = 0.0;
    for (std::size_t j = 0; j < matrix_.cols(); ++j) {
      row += matrix_(i, j);
      col[j] += matrix_(i, j);
    }
    worst = std::max(worst, std::abs(row - 1.0));
  }
  for (double c : col) worst = std::max(worst, std::abs(c - 1.0));
  return worst;
}

namespace {

// log Σ exp over a strided sequence of (x - offset) values.
template <typename Get>
double log_sum_exp(std::size_t n, Get get) {
  double hi = -std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < n; ++k) hi = std::max(hi, get(k));
  double s = 0.0;
  for (std::size_t k = 0; k < n; ++k) s += std::exp(get(k) - hi);
  return hi + std::log(s);
}

}  // namespace

SoftPermutation sinkhorn(const Matrix& logits, double temperature, int iters, SinkhornTape* tape) {
  if (!(temperature > 0.0)) throw std::invalid_argument("sinkhorn: temperature must be positive");
  if (iters < 1) throw std::invalid_argument("sinkhorn: iters must be >= 1");
  if (!logits.square()) throw std::invalid_argument("sinkhorn: logits must be square");
  const std::size_t n = logits.rows();
  const double inv_t = 1.0 / temperature;

  std::vector<double> a(n, 0.0), b(n, 0.0);
  if (tape) {
    tape->temperature = temperature;
    tape->row_offsets.clear();
    tape->col_offsets.clear();
  }
  for (int t = 0; t < iters; ++t) {
    for (std::size_t i = 0; i < n; ++i) {
      const double* row = logits.data() + i * n;
      a[i] = log_sum_exp(n, [&](std::size_t j) { return row[j] * inv_t - b[j]; });
    }
    for (std::size_t j = 0; j < n; ++j) {
      b[j] = log_sum_exp(n, [&](std::size_t i) { return logits(i, j) * inv_t - a[i]; });
    }
    if (tape) {
      tape->row_offsets.push_back(a);
      tape->col_offsets.push_back(b);
    }
  }
  Matrix p(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) p(i, j) = std::exp(logits(i, j) * inv_t - a[i] - b[j]);
  return SoftPermutation(std::move(p));
}

Matrix sinkhorn_backward(const Matrix& logits, const SinkhornTape& tape, const Matrix& grad_output) {
  const std::size_t n = logits.rows();
  if (grad_output.rows() != n || grad_output.cols() != n) {
    throw std::invalid_argument("sinkhorn_backward: gradient shape mismatch");
  }
  const std::size_t iters = tape.row_offsets.size();
  if (iters == 0 || tape.col_offsets.size() != iters) throw std::invalid_argument("sinkhorn_backward: empty tape");
  const double inv_t = 1.0 / tape.temperature;
  const std::vector<double> zero(n, 0.0);

  // dY for the final iterate Y_T = X0 - a_T - b_T, with P = exp(Y_T).
  Matrix grad(n, n);
  {
    const auto& a = tape.row_offsets.back();
    const auto& b = tape.col_offsets.back();
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j)
        grad(i, j) = grad_output(i, j) * std::exp(logits(i, j) * inv_t - a[i] - b[j]);
  }
  std::vector<double> sums(n);
  for (std::size_t t = iters; t-- > 0;) {
    const auto& a = tape.row_offsets[t];
    const auto& b = tape.col_offsets[t];
    const auto& b_prev = t > 0 ? tape.col_offsets[t - 1] : zero;
    // Column normalisation: Y = R - lse_col(R); exp(Y) is the column softmax.
    std::fill(sums.begin(), sums.end(), 0.0);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) sums[j] += grad(i, j);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) grad(i, j) -= std::exp(logits(i, j) * inv_t - a[i] - b[j]) * sums[j];
    // Row normalisation: R = Y' - lse_row(Y'); exp(R) is the row softmax.
    for (std::size_t i = 0; i < n; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < n; ++j) s += grad(i, j);
      sums[i] = s;
    }
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) grad(i, j) -= std::exp(logits(i, j) * inv_t - a[i] - b_prev[j]) * sums[i];
  }
  for (double& g : grad.values()) g *= inv_t;
  return grad;
}

Matrix gumbel_perturb(const Matrix& logits, double noise_scale, std::mt19937_64& rng) {
  if (!(noise_scale >= 0.0)) throw std::invalid_argument("gumbel_perturb: noise_scale must be >= 0");
  Matrix out = logits;
  if (noise_scale == 0.0) return out;
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (double& v : out.values()) {
    double u = unit(rng);
    while (u <= 0.0) u = unit(rng);
    v += noise_scale * -std::log(-std::log(u));
  }
  return out;
}

Permutation harden(const SoftPermutation& soft) {
  Matrix cost = soft.matrix();
  for (double& c : cost.values()) c = -c;
  return hungarian(cost);
}

}  // namespace fpna
