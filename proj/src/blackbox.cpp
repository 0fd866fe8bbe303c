#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <stdexcept>

#include "fpna/attacks.hpp"

namespace fpna::attack {

namespace {

double matern52(double r, double length) {
  const double s = std::sqrt(5.0) * std::abs(r) / length;
  return (1.0 + s + s * s / 3.0) * std::exp(-s);
}

struct Gp {
  Eigen::VectorXd x;
  Eigen::LLT<Eigen::MatrixXd> chol;
  Eigen::VectorXd alpha;
  double length = 0.1;
  double mean = 0.0;
  double scale = 1.0;
};

// Standardised targets; length scale and nugget picked by marginal likelihood.
Gp fit(const std::vector<double>& xs, const std::vector<double>& ys) {
  const auto n = static_cast<Eigen::Index>(xs.size());
  Gp gp;
  gp.x = Eigen::Map<const Eigen::VectorXd>(xs.data(), n);
  Eigen::VectorXd y = Eigen::Map<const Eigen::VectorXd>(ys.data(), n);
  gp.mean = y.mean();
  const double var = (y.array() - gp.mean).square().mean();
  gp.scale = var > 0.0 ? std::sqrt(var) : 1.0;
  y = (y.array() - gp.mean) / gp.scale;

  double best_lml = -std::numeric_limits<double>::infinity();
  for (double length : {0.02, 0.05, 0.1, 0.2, 0.4}) {
    for (double nugget : {1e-6, 1e-2, 1e-1}) {
      Eigen::MatrixXd k(n, n);
      for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < n; ++j) k(i, j) = matern52(gp.x(i) - gp.x(j), length);
      k.diagonal().array() += nugget;
      Eigen::LLT<Eigen::MatrixXd> chol(k);
      if (chol.info() != Eigen::Success) continue;
      const Eigen::VectorXd alpha = chol.solve(y);
      const double logdet = 2.0 * chol.matrixL().toDenseMatrix().diagonal().array().log().sum();
      const double lml = -0.5 * y.dot(alpha) - 0.5 * logdet;
      if (lml > best_lml) {
        best_lml = lml;
        gp.length = length;
        gp.chol = chol;
        gp.alpha = alpha;
      }
    }
  }
  return gp;
}

// EI for every candidate at once.
Eigen::VectorXd expected_improvement(const Gp& gp, const std::vector<double>& cand, double best) {
  const auto n = gp.x.size();
  const auto m = static_cast<Eigen::Index>(cand.size());
  Eigen::MatrixXd kx(n, m);
  for (Eigen::Index c = 0; c < m; ++c)
    for (Eigen::Index i = 0; i < n; ++i) kx(i, c) = matern52(cand[static_cast<std::size_t>(c)] - gp.x(i), gp.length);
  const Eigen::VectorXd mu = kx.transpose() * gp.alpha;
  const Eigen::MatrixXd v = gp.chol.matrixL().solve(kx);
  const Eigen::VectorXd reduction = v.colwise().squaredNorm().transpose();
  Eigen::VectorXd ei(m);
  for (Eigen::Index c = 0; c < m; ++c) {
    const double sigma = std::sqrt(std::max(1e-12, 1.0 - reduction(c)));
    const double gain = mu(c) - best - 0.01;
    const double z = gain / sigma;
    const double cdf = 0.5 * std::erfc(-z / std::sqrt(2.0));
    const double pdf = std::exp(-0.5 * z * z) / std::sqrt(2.0 * M_PI);
    ei(c) = gain * cdf + sigma * pdf;
  }
  return ei;
}

void check_range(std::int64_t k_lo, std::int64_t k_hi, int budget) {
  if (k_lo > k_hi) throw std::invalid_argument("blackbox: empty range");
  if (budget < 2) throw std::invalid_argument("blackbox: budget must be >= 2");
}

struct Recorder {
  const std::function<double(std::int64_t)>& objective;
  BlackboxResult result;
  std::set<std::int64_t> seen;

  void eval(std::int64_t k) {
    const double v = objective(k);
    seen.insert(k);
    if (result.log.empty() || v > result.best_value) {
      result.best_value = v;
      result.best_k = k;
    }
    result.log.emplace_back(k, v);
  }
};

}  // namespace

BlackboxResult blackbox_optimize(const std::function<double(std::int64_t)>& objective, std::int64_t k_lo,
                                 std::int64_t k_hi, int budget, std::mt19937_64& rng) {
  check_range(k_lo, k_hi, budget);
  const auto span = static_cast<std::uint64_t>(k_hi - k_lo) + 1;
  const std::size_t total = std::min<std::uint64_t>(span, static_cast<std::uint64_t>(budget));
  Recorder rec{objective, {}, {}};
  const double width = static_cast<double>(span);
  auto unit = [&](std::int64_t k) { return (static_cast<double>(k - k_lo) + 0.5) / width; };

  // stratified initial design
  const std::size_t n_init = std::clamp<std::size_t>(total / 4, 2, 10);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (std::size_t i = 0; i < std::min(n_init, total); ++i) {
    const double pos = (static_cast<double>(i) + u(rng)) / static_cast<double>(n_init);
    auto k = k_lo + static_cast<std::int64_t>(std::floor(pos * width));
    k = std::clamp(k, k_lo, k_hi);
    while (rec.seen.count(k)) k = k == k_hi ? k_lo : k + 1;
    rec.eval(k);
  }

  std::uniform_int_distribution<std::int64_t> any(k_lo, k_hi);
  while (rec.result.log.size() < total) {
    std::vector<double> xs, ys;
    for (const auto& [k, v] : rec.result.log) {
      xs.push_back(unit(k));
      ys.push_back(v);
    }
    const Gp gp = fit(xs, ys);
    const double best = (rec.result.best_value - gp.mean) / gp.scale;

    std::vector<std::int64_t> candidates;
    if (span <= 2048) {
      for (std::int64_t k = k_lo; k <= k_hi; ++k) candidates.push_back(k);
    } else {
      for (int i = 0; i < 1024; ++i)
        candidates.push_back(k_lo + static_cast<std::int64_t>(std::floor((i + 0.5) / 1024.0 * width)));
      for (int i = 0; i < 256; ++i) candidates.push_back(any(rng));
    }
    std::erase_if(candidates, [&](std::int64_t k) { return rec.seen.count(k) > 0; });
    std::int64_t pick = k_lo;
    double best_ei = -1.0;
    if (!candidates.empty()) {
      std::vector<double> at;
      for (std::int64_t k : candidates) at.push_back(unit(k));
      const Eigen::VectorXd ei = expected_improvement(gp, at, best);
      for (std::size_t c = 0; c < candidates.size(); ++c)
        if (ei(static_cast<Eigen::Index>(c)) > best_ei) {
          best_ei = ei(static_cast<Eigen::Index>(c));
          pick = candidates[c];
        }
    }
    if (best_ei < 0.0) {
      // every candidate already seen
      do pick = any(rng);
      while (rec.seen.count(pick));
    }
    rec.eval(pick);
  }
  return rec.result;
}

BlackboxResult random_search(const std::function<double(std::int64_t)>& objective, std::int64_t k_lo,
                             std::int64_t k_hi, int budget, std::mt19937_64& rng) {
  check_range(k_lo, k_hi, budget);
  const auto span = static_cast<std::uint64_t>(k_hi - k_lo) + 1;
  const std::size_t total = std::min<std::uint64_t>(span, static_cast<std::uint64_t>(budget));
  Recorder rec{objective, {}, {}};
  std::uniform_int_distribution<std::int64_t> any(k_lo, k_hi);
  while (rec.result.log.size() < total) {
    std::int64_t k = any(rng);
    while (rec.seen.count(k)) k = any(rng);
    rec.eval(k);
  }
  return rec.result;
}

}  // namespace fpna::attack
