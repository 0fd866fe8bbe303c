#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>

#include "fpna/lab.hpp"
#include "lab_internal.hpp"

namespace fpna::lab {

void LpStudyConfig::validate() const {
  try {
    lp.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  if (dim < 2 || dim > 8) throw ConfigError("lp study dim must lie in [2, 8]");
  if (n_instances < 1 || max_draws < n_instances) throw ConfigError("need 1 <= n_instances <= max_draws");
  if (!(magnitude_range >= 0.0) || magnitude_range > 200.0) throw ConfigError("magnitude_range must lie in [0, 200]");
}

namespace {

// A point on a random hyperplane through the origin, both rounded to `mode`.
std::pair<std::vector<double>, std::vector<double>> draw_instance(const LpStudyConfig& cfg, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> expo(-cfg.magnitude_range / 2.0, cfg.magnitude_range / 2.0);
  std::vector<double> n(cfg.dim), x(cfg.dim);
  double norm = 0.0;
  for (double& v : n) {
    v = normal(rng);
    norm += v * v;
  }
  for (double& v : n) v = round_to(v / std::sqrt(norm), cfg.precision);
  for (double& v : x) v = normal(rng) * std::exp2(expo(rng));
  double dot = 0.0, nn = 0.0;
  for (std::size_t i = 0; i < cfg.dim; ++i) {
    dot += n[i] * x[i];
    nn += n[i] * n[i];
  }
  for (std::size_t i = 0; i < cfg.dim; ++i) x[i] = round_to(x[i] - dot / nn * n[i], cfg.precision);
  return {n, x};
}

}  // namespace

LpStudyResult run_lp_study(const LpStudyConfig& cfg) {
  cfg.validate();
  LpStudyResult result;
  std::mt19937_64 rng(detail::mix(cfg.seed ^ 0x1F));
  while (result.instances.size() < cfg.n_instances) {
    if (result.draws == cfg.max_draws) {
      throw std::runtime_error("lp study: only " + std::to_string(result.instances.size()) + " flippable instances in " +
                               std::to_string(cfg.max_draws) + " draws");
    }
    ++result.draws;
    auto [n, x] = draw_instance(cfg, rng);
    const auto model = ModelSpec::hyperplane(n, 0.0);
    const int label = predict_class(forward_exact(model, std::span<const double>(x)));
    const auto outcomes = enumerate_order_outcomes(product_stream(n, x, cfg.precision), cfg.precision);
    // the hyperplane's class under an order is 1 exactly when the ordered score is positive
    const bool flippable = std::any_of(outcomes.values.begin(), outcomes.values.end(),
                                       [&](double s) { return (s > 0.0 ? 1 : 0) != label; });
    if (!flippable) continue;
    LpInstance inst;
    inst.normal = std::move(n);
    inst.x = std::move(x);
    inst.label = label;
    inst.distinct_outcomes = outcomes.values.size();
    result.instances.push_back(std::move(inst));
  }

  attack::LpConfig lp = cfg.lp;
  lp.verify_mode = cfg.precision;
  const bool parallel = cfg.exec == Exec::Parallel;
  std::string error;
#pragma omp parallel for schedule(dynamic) if (parallel)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(result.instances.size()); ++i) {
    try {
      auto& inst = result.instances[static_cast<std::size_t>(i)];
      const auto model = ModelSpec::hyperplane(inst.normal, 0.0);
      std::mt19937_64 local(detail::mix(cfg.seed ^ detail::mix(static_cast<std::uint64_t>(i))));
      inst.report = attack::lp_attack(model, inst.x, inst.label, lp, local);
      if (inst.report.flipped) {
        const Graph g{Matrix(1, inst.x.size(), inst.x), {}, {}};
        inst.verified = attack::misclassifies(model, g, 0, inst.label, inst.report.witness, cfg.precision);
      }
    } catch (const std::exception& e) {
#pragma omp critical(lab_error)
      if (error.empty()) error = e.what();
    }
  }
  if (!error.empty()) throw std::runtime_error("lp study: " + error);
  for (const auto& inst : result.instances) {
    result.found += inst.report.flipped && inst.verified;
    result.false_positives += inst.report.flipped && !inst.verified;
  }
  return result;
}

ModelSpec ewa_designed_model(std::size_t d, double threshold) {
  if (d < 4 || d % 2 != 0) throw std::invalid_argument("ewa instance needs an even length >= 4");
  std::vector<double> w(d, 1.0);
  w.front() = 1e8;
  w.back() = -1e8;
  for (std::size_t i = 1; i < d / 2; ++i) w[i] = -1.0;
  return ModelSpec::hyperplane(w, threshold);
}

void EwaStudyConfig::validate() const {
  try {
    device.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  if (dim < 4 || dim % 2 != 0) throw ConfigError("ewa study dim must be even and >= 4");
  if (!std::isfinite(threshold)) throw ConfigError("threshold must be finite");
  if (k_min > k_max || grid_step < 1) throw ConfigError("need k_min <= k_max and grid_step >= 1");
  if (budget < 2 || trials_per_eval < 1) throw ConfigError("need budget >= 2 and trials_per_eval >= 1");
}

EwaStudyResult run_ewa_study(const EwaStudyConfig& cfg) {
  cfg.validate();
  const auto model = ewa_designed_model(cfg.dim, cfg.threshold);
  const Graph input{Matrix(1, cfg.dim, 1.0), {}, {}};
  attack::EwaConfig ewa;
  ewa.k_min = cfg.k_min;
  ewa.k_max = cfg.k_max;
  ewa.budget = cfg.budget;
  ewa.trials_per_eval = cfg.trials_per_eval;
  ewa.target_class = 1;
  ewa.max_blocks = cfg.dim;
  ewa.exec = cfg.exec;

  std::mt19937_64 rng(detail::mix(cfg.seed ^ 0xEA));
  // ewa_attack draws its objective seed first; the grid reuses it
  const std::uint64_t objective_seed = std::mt19937_64(rng)();
  EwaStudyResult result;
  result.attack = attack::ewa_attack(model, input, 0, cfg.device, ewa, cfg.precision, rng);
  if (!result.attack.witness.empty()) {
    result.witness_verified = attack::misclassifies(model, input, 0, 0, result.attack.witness, cfg.precision);
  }

  std::map<std::uint64_t, double> memo;
  const auto objective = [&](std::uint64_t k, Exec exec) {
    std::optional<double> hit;
#pragma omp critical(ewa_memo)
    {
      const auto it = memo.find(k);
      if (it != memo.end()) hit = it->second;
    }
    if (hit) return *hit;
    attack::EwaConfig local = ewa;
    local.exec = exec;
    const double v = attack::ewa_objective(model, input, 0, 1, cfg.device, local, k, cfg.precision, objective_seed);
#pragma omp critical(ewa_memo)
    memo.emplace(k, v);
    return v;
  };

  result.idle = objective(0, cfg.exec);
  for (std::uint64_t k = cfg.k_min; k <= cfg.k_max; k += cfg.grid_step) {
    result.grid.emplace_back(k, objective(k, cfg.exec));
    result.grid_max = std::max(result.grid_max, result.grid.back().second);
    if (cfg.k_max - k < cfg.grid_step) break;
  }

  result.comparison.resize(cfg.compare_trials);
  const bool parallel = cfg.exec == Exec::Parallel;
  std::string error;
#pragma omp parallel for schedule(dynamic) if (parallel)
  for (std::ptrdiff_t t = 0; t < static_cast<std::ptrdiff_t>(cfg.compare_trials); ++t) {
    try {
      const auto f = [&](std::int64_t k) { return objective(static_cast<std::uint64_t>(k), Exec::Serial); };
      const std::uint64_t s = detail::mix(cfg.seed ^ detail::mix(0xC0 + static_cast<std::uint64_t>(t)));
      std::mt19937_64 a(s), b(s ^ 0x5A);
      const auto lo = static_cast<std::int64_t>(cfg.k_min), hi = static_cast<std::int64_t>(cfg.k_max);
      result.comparison[static_cast<std::size_t>(t)] = {attack::blackbox_optimize(f, lo, hi, cfg.budget, a).best_value,
                                                        attack::random_search(f, lo, hi, cfg.budget, b).best_value};
    } catch (const std::exception& e) {
#pragma omp critical(lab_error)
      if (error.empty()) error = e.what();
    }
  }
  if (!error.empty()) throw std::runtime_error("ewa study: " + error);
  for (const auto& [opt, rnd] : result.comparison) {
    result.optimizer_wins += opt > rnd;
    result.ties += opt == rnd;
  }
  return result;
}

}  // namespace fpna::lab
