#include "fpna/attacks.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "fpna/permkit.hpp"
#include "json.hpp"

namespace fpna::attack {

namespace {

double sign(double g) { return g > 0.0 ? 1.0 : (g < 0.0 ? -1.0 : 0.0); }

Matrix input_gradient(const ModelSpec& model, const Graph& input, std::span<const Target> targets) {
  return loss_and_grads(model, input, targets).grads.input;
}

Graph with_features(const Graph& g, Matrix features) {
  Graph out{std::move(features), g.edges, g.labels};
  return out;
}

Graph single_row(std::span<const double> x) {
  return Graph{Matrix(1, x.size(), std::vector<double>(x.begin(), x.end())), {}, {}};
}

std::vector<double> first_row(const Matrix& m) { return {m.values().begin(), m.values().end()}; }

// c + delta with |delta| <= eps, pulled toward c until the computed distance
// is within eps as well
double within(double c, double delta, double eps) {
  double v = c + std::clamp(delta, -eps, eps);
  while (std::abs(v - c) > eps) v = std::nextafter(v, c);
  return v;
}

void project(Matrix& x, const Matrix& clean, double eps) {
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double c = clean.values()[i];
    x.values()[i] = within(c, x.values()[i] - c, eps);
  }
}

double mean_margin(const ModelSpec& model, const Graph& input, std::span<const std::size_t> rows) {
  const Matrix z = forward_exact(model, input);
  double s = 0.0;
  for (std::size_t r : rows) s += margin(z.row(r));
  return s / static_cast<double>(rows.size());
}

// splitmix64 finaliser
std::uint64_t mix(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

std::vector<InjectionPoint> identity_orders(const ModelSpec& model, const Graph& input) {
  std::vector<InjectionPoint> out;
  for (std::size_t s = 0; s < model.injection_sites(); ++s)
    out.push_back({s, Permutation::identity(model.site_length(s, input))});
  return out;
}

// Groups searched by LP: (site, group, size).
struct Block {
  std::size_t site;
  std::size_t group;
  std::size_t size;
};

std::vector<Block> lp_blocks(const ModelSpec& model, const Graph& input, std::size_t row) {
  std::vector<Block> blocks;
  if (model.kind != ModelKind::Gnn) {
    for (std::size_t s = 0; s < model.injection_sites(); ++s) {
      const std::size_t n = model.site_length(s, input);
      if (n >= 2) blocks.push_back({s, 0, n});
    }
    return blocks;
  }
  // conv layer l feeds `row` through the nodes layer_nodes L-1-l hops upstream
  const auto incoming = in_edges(input);
  const std::size_t layers = model.convs.size();
  std::vector<std::vector<char>> layer_nodes(layers, std::vector<char>(input.n_nodes(), 0));
  std::vector<char> reach(input.n_nodes(), 0);
  reach[row] = 1;
  for (std::size_t hop = 0; hop < layers; ++hop) {
    layer_nodes[layers - 1 - hop] = reach;
    std::vector<char> next = reach;
    for (std::size_t v = 0; v < input.n_nodes(); ++v)
      if (reach[v])
        for (std::size_t e : incoming[v]) next[input.edges[e].src] = 1;
    reach = std::move(next);
  }
  for (std::size_t l = 0; l < layers; ++l)
    for (std::size_t v = 0; v < input.n_nodes(); ++v)
      if (layer_nodes[l][v] && incoming[v].size() >= 2) blocks.push_back({l, v, incoming[v].size()});
  return blocks;
}

std::vector<InjectionPoint> harden_all(const ModelSpec& model, const Graph& input, const std::vector<Block>& blocks,
                                       const SoftPerms& soft) {
  auto out = identity_orders(model, input);
  if (model.kind != ModelKind::Gnn) {
    for (const auto& b : blocks) out[b.site].perm = harden(SoftPermutation(soft[b.site].blocks.at(0)));
    return out;
  }
  std::vector<std::map<std::size_t, Permutation>> groups(model.injection_sites());
  for (const auto& b : blocks) groups[b.site].emplace(b.group, harden(SoftPermutation(soft[b.site].blocks.at(b.group))));
  for (std::size_t s = 0; s < groups.size(); ++s) out[s].perm = edge_order_from_groups(input, groups[s]);
  return out;
}

int predicted_class(const ModelSpec& model, const Graph& input, std::size_t row,
                    std::span<const InjectionPoint> orders, Precision mode) {
  return predict_class(forward_ordered(model, input, orders, mode).row(row));
}

}  // namespace

void AttackConfig::validate() const {
  if (!(epsilon >= 0.0) || !std::isfinite(epsilon)) throw std::invalid_argument("attack: epsilon must be >= 0");
  if (steps < 1) throw std::invalid_argument("attack: steps must be >= 1");
  if (!(step_size > 0.0)) throw std::invalid_argument("attack: step_size must be > 0");
  if (!(step_decay > 0.0 && step_decay <= 1.0)) throw std::invalid_argument("attack: step_decay must lie in (0, 1]");
}

Matrix fgsm(const ModelSpec& model, const Graph& input, std::span<const Target> targets, const AttackConfig& cfg) {
  cfg.validate();
  Matrix x = input.features;
  if (cfg.epsilon == 0.0) return x;
  const Matrix g = input_gradient(model, input, targets);
  for (std::size_t i = 0; i < x.size(); ++i) {
    x.values()[i] = within(x.values()[i], cfg.epsilon * sign(g.values()[i]), cfg.epsilon);
  }
  return x;
}

Matrix pgd(const ModelSpec& model, const Graph& input, std::span<const Target> targets, const AttackConfig& cfg) {
  cfg.validate();
  Matrix x = input.features;
  if (cfg.epsilon == 0.0) return x;
  double step_size = cfg.step_size;
  for (int step = 0; step < cfg.steps; ++step) {
    const Matrix g = input_gradient(model, with_features(input, x), targets);
    for (std::size_t i = 0; i < x.size(); ++i) x.values()[i] += step_size * sign(g.values()[i]);
    project(x, input.features, cfg.epsilon);
    step_size *= cfg.step_decay;
  }
  return x;
}

Matrix random_attack(const Graph& input, const AttackConfig& cfg, std::mt19937_64& rng) {
  cfg.validate();
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Matrix x = input.features;
  for (double& v : x.values()) v = within(v, cfg.epsilon * u(rng), cfg.epsilon);
  return x;
}

Matrix targeted_margin(const ModelSpec& model, const Graph& input, std::span<const std::size_t> rows,
                       const AttackConfig& cfg) {
  cfg.validate();
  if (rows.empty()) throw std::invalid_argument("targeted_margin: no rows");
  Matrix x = input.features;
  Matrix best = x;
  double best_f = mean_margin(model, input, rows);
  if (cfg.epsilon == 0.0) return best;
  double step_size = cfg.step_size;
  for (int step = 0; step < cfg.steps; ++step) {
    const Graph current = with_features(input, x);
    const Matrix z = forward_exact(model, current);
    Matrix dz(z.rows(), z.cols());
    for (std::size_t r : rows) {
      const auto zr = z.row(r);
      const auto top = static_cast<std::size_t>(predict_class(zr));
      std::size_t second = top == 0 ? 1 : 0;
      for (std::size_t c = 0; c < zr.size(); ++c)
        if (c != top && zr[c] > zr[second]) second = c;
      dz(r, top) += 1.0;
      dz(r, second) -= 1.0;
    }
    const Matrix g = backprop(model, current, nullptr, dz).input;
    for (std::size_t i = 0; i < x.size(); ++i) x.values()[i] -= step_size * sign(g.values()[i]);
    project(x, input.features, cfg.epsilon);
    step_size *= cfg.step_decay;
    const double f = mean_margin(model, with_features(input, x), rows);
    if (f < best_f) {
      best_f = f;
      best = x;
    }
  }
  return best;
}

std::vector<double> fgsm(const ModelSpec& model, std::span<const double> x, int label, const AttackConfig& cfg) {
  const Target t{0, label};
  return first_row(fgsm(model, single_row(x), std::span(&t, 1), cfg));
}

std::vector<double> pgd(const ModelSpec& model, std::span<const double> x, int label, const AttackConfig& cfg) {
  const Target t{0, label};
  return first_row(pgd(model, single_row(x), std::span(&t, 1), cfg));
}

std::vector<double> random_attack(std::span<const double> x, const AttackConfig& cfg, std::mt19937_64& rng) {
  return first_row(random_attack(single_row(x), cfg, rng));
}

std::vector<double> targeted_margin(const ModelSpec& model, std::span<const double> x, const AttackConfig& cfg) {
  const std::size_t row = 0;
  return first_row(targeted_margin(model, single_row(x), std::span(&row, 1), cfg));
}

// ---------------------------------------------------------------------------

void LpConfig::validate() const {
  if (opt_steps < 1 || sinkhorn_iters < 1 || harden_every < 1) {
    throw std::invalid_argument("lp: step counts must be >= 1");
  }
  if (!(temperature_init > 0.0)) throw std::invalid_argument("lp: temperature must be > 0");
  if (!(temperature_decay > 0.0 && temperature_decay <= 1.0)) throw std::invalid_argument("lp: decay must lie in (0, 1]");
  if (!(noise_scale >= 0.0) || !(learning_rate > 0.0)) throw std::invalid_argument("lp: bad noise or learning rate");
}

bool misclassifies(const ModelSpec& model, const Graph& input, std::size_t row, int label,
                   std::span<const InjectionPoint> witness, Precision mode) {
  return predicted_class(model, input, row, witness, mode) != label;
}

AttackReport lp_attack(const ModelSpec& model, const Graph& input, std::size_t row, int label, const LpConfig& cfg,
                       std::mt19937_64& rng) {
  cfg.validate();
  if (row >= input.n_nodes()) throw std::invalid_argument("lp_attack: row out of range");
  if (model.injection_sites() == 0) throw std::invalid_argument("lp_attack: model has no injection site");
  AttackReport report;
  report.attack = "lp";

  const Matrix exact = forward_exact(model, input);
  if (cfg.screen && predict_class(exact.row(row)) == label) {
    const Matrix bound = logit_error_bound(model, input, cfg.verify_mode);
    bool stable = certified_stable(exact.row(row), bound.row(row));
    if (!stable) {
      const auto box = logit_interval(model, input, cfg.verify_mode);
      stable = interval_class(box.lo.row(row), box.hi.row(row)) == label;
    }
    if (stable) {
      report.certified = true;
      report.predicted = label;
      return report;
    }
  }

  auto canonical = identity_orders(model, input);
  report.predicted = predicted_class(model, input, row, canonical, cfg.verify_mode);
  if (report.predicted != label) {
    report.flipped = true;
    report.flip_rate = 1.0;
    report.witness = std::move(canonical);
    return report;
  }

  const auto blocks = lp_blocks(model, input, row);
  if (blocks.empty()) return report;
  std::vector<Matrix> logits;
  for (const auto& b : blocks) logits.emplace_back(b.size, b.size);
  SoftPerms soft(model.injection_sites());
  std::vector<Matrix> noisy(blocks.size());
  std::vector<SinkhornTape> tapes(blocks.size());
  const Target target{row, label};

  double temperature = cfg.temperature_init;
  for (int step = 1; step <= cfg.opt_steps; ++step) {
    for (std::size_t i = 0; i < blocks.size(); ++i) {
      noisy[i] = gumbel_perturb(logits[i], cfg.noise_scale, rng);
      soft[blocks[i].site].blocks[blocks[i].group] =
          sinkhorn(noisy[i], temperature, cfg.sinkhorn_iters, &tapes[i]).matrix();
    }
    const auto lg = loss_and_grads(model, input, std::span(&target, 1), &soft);
    for (std::size_t i = 0; i < blocks.size(); ++i) {
      const Matrix& dp = lg.grads.soft[blocks[i].site].blocks.at(blocks[i].group);
      const Matrix dlogits = sinkhorn_backward(noisy[i], tapes[i], dp);
      // the gradient carries the scale of the weights; clip so that no logit
      // moves by more than learning_rate and the Gumbel noise keeps exploring
      double peak = 0.0;
      for (double v : dlogits.values()) peak = std::max(peak, std::abs(v));
      const double step = cfg.learning_rate / std::max(1.0, peak);
      for (std::size_t k = 0; k < dlogits.size(); ++k) logits[i].values()[k] += step * dlogits.values()[k];
    }
    if (step % cfg.harden_every == 0 || step == cfg.opt_steps) {
      auto orders = harden_all(model, input, blocks, soft);
      const int predicted = predicted_class(model, input, row, orders, cfg.verify_mode);
      if (predicted != label) {
        report.flipped = true;
        report.flip_rate = 1.0;
        report.predicted = predicted;
        report.witness = std::move(orders);
        report.iterations_used = step;
        return report;
      }
    }
    temperature *= cfg.temperature_decay;
  }
  report.iterations_used = cfg.opt_steps;
  return report;
}

AttackReport lp_attack(const ModelSpec& model, std::span<const double> x, int label, const LpConfig& cfg,
                       std::mt19937_64& rng) {
  if (model.kind == ModelKind::Gnn) throw std::invalid_argument("lp_attack: per-sample form is for Linear and Mlp");
  return lp_attack(model, single_row(x), 0, label, cfg, rng);
}

// ---------------------------------------------------------------------------

void EwaConfig::validate() const {
  if (k_min > k_max) throw std::invalid_argument("ewa: empty k range");
  if (budget < 2 || trials_per_eval < 1) throw std::invalid_argument("ewa: budget >= 2 and trials >= 1 required");
  if (!(success_threshold > 0.0 && success_threshold <= 1.0)) {
    throw std::invalid_argument("ewa: success threshold must lie in (0, 1]");
  }
  if (max_blocks < 1) throw std::invalid_argument("ewa: max_blocks must be >= 1");
}

std::vector<InjectionPoint> scheduled_orders(const ModelSpec& model, const Graph& input,
                                             const sched::DeviceConfig& device, const sched::WorkloadSpec& load,
                                             std::size_t max_blocks, std::uint64_t seed) {
  std::vector<InjectionPoint> out;
  for (std::size_t s = 0; s < model.injection_sites(); ++s) {
    const std::size_t len = model.site_length(s, input);
    if (len == 0) continue;
    const std::size_t n_blocks = std::min(max_blocks, len);
    const auto trace = sched::simulate_reduction(device, load, n_blocks, mix(seed ^ mix(s)));
    out.push_back({s, sched::feed_model_order(trace, len)});
  }
  return out;
}

double ewa_objective(const ModelSpec& model, const Graph& input, std::size_t row, int target,
                     const sched::DeviceConfig& device, const EwaConfig& cfg, std::uint64_t k, Precision mode,
                     std::uint64_t seed, std::vector<InjectionPoint>* witness) {
  sched::WorkloadSpec load = cfg.workload;
  load.matrix_size = k;
  const int trials = cfg.trials_per_eval;
  std::vector<char> hit(static_cast<std::size_t>(trials), 0);
  const bool parallel = cfg.exec == Exec::Parallel;
#pragma omp parallel for schedule(dynamic) if (parallel)
  for (int t = 0; t < trials; ++t) {
    const auto orders = scheduled_orders(model, input, device, load, cfg.max_blocks, mix(seed + static_cast<std::uint64_t>(t)));
    hit[static_cast<std::size_t>(t)] = predicted_class(model, input, row, orders, mode) == target;
  }
  std::size_t hits = 0;
  for (int t = 0; t < trials; ++t) {
    if (!hit[static_cast<std::size_t>(t)]) continue;
    if (witness && hits == 0) {
      *witness = scheduled_orders(model, input, device, load, cfg.max_blocks, mix(seed + static_cast<std::uint64_t>(t)));
    }
    ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(trials);
}

AttackReport ewa_attack(const ModelSpec& model, const Graph& input, std::size_t row,
                        const sched::DeviceConfig& device, const EwaConfig& cfg, Precision mode,
                        std::mt19937_64& rng) {
  cfg.validate();
  device.validate();
  int target = 0;
  if (cfg.target_class) {
    target = *cfg.target_class;
    if (target < 0 || static_cast<std::size_t>(target) >= model.n_classes()) {
      throw std::invalid_argument("ewa: target class out of range");
    }
  } else {
    const Matrix z = forward_exact(model, input);
    const auto zr = z.row(row);
    const auto top = static_cast<std::size_t>(predict_class(zr));
    std::size_t second = top == 0 ? 1 : 0;
    for (std::size_t c = 0; c < zr.size(); ++c)
      if (c != top && zr[c] > zr[second]) second = c;
    target = static_cast<int>(second);
  }
  // common random numbers: every k sees the same trial seeds
  const std::uint64_t seed = rng();
  const auto objective = [&](std::int64_t k) {
    return ewa_objective(model, input, row, target, device, cfg, static_cast<std::uint64_t>(k), mode, seed);
  };
  const auto best = blackbox_optimize(objective, static_cast<std::int64_t>(cfg.k_min),
                                      static_cast<std::int64_t>(cfg.k_max), cfg.budget, rng);
  AttackReport report;
  report.attack = "ewa";
  report.matrix_size = static_cast<std::uint64_t>(best.best_k);
  report.flip_rate = best.best_value;
  report.iterations_used = static_cast<int>(best.log.size());
  report.predicted = target;
  report.flipped = best.best_value >= cfg.success_threshold;
  if (best.best_value > 0.0) {
    ewa_objective(model, input, row, target, device, cfg, *report.matrix_size, mode, seed, &report.witness);
  }
  return report;
}

std::string report_json(const AttackReport& report, const std::string& input_id, double epsilon, std::uint64_t seed) {
  nlohmann::json witness = nlohmann::json::object();
  if (report.matrix_size) witness["k"] = *report.matrix_size;
  nlohmann::json orders = nlohmann::json::array();
  for (const auto& w : report.witness) {
    orders.push_back({{"layer", w.layer}, {"perm", std::vector<std::size_t>(w.perm.indices().begin(), w.perm.indices().end())}});
  }
  witness["orders"] = std::move(orders);
  const nlohmann::json j{{"input_id", input_id},     {"attack", report.attack},       {"epsilon", epsilon},
                         {"flipped", report.flipped}, {"flip_rate", report.flip_rate}, {"witness", witness},
                         {"seed", seed}};
  return j.dump();
}

}  // namespace fpna::attack
