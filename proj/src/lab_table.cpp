#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "fpna/lab.hpp"
#include "fpna/stats.hpp"
#include "lab_internal.hpp"

namespace fpna::lab {

AccuracyTableConfig::AccuracyTableConfig() {
  // ε = 0.1 is a strong attack on features of this scale
  sbm.feature_signal = 0.2;
  sbm.feature_noise = 0.2;
  lp.opt_steps = 400;
  lp.harden_every = 1;
  lp.sinkhorn_iters = 10;
}

void AccuracyTableConfig::validate() const {
  try {
    sbm.validate();
    device.validate();
    lp.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  if (hidden.empty()) throw ConfigError("hidden needs at least one conv width");
  for (auto h : hidden)
    if (h == 0) throw ConfigError("hidden widths must be positive");
  if (n_train == 0 || n_val == 0 || n_train + n_val > sbm.n_nodes) {
    throw ConfigError("need n_train, n_val > 0 and n_train + n_val <= n_nodes");
  }
  if (train.epochs < 1 || !(train.learning_rate > 0.0)) throw ConfigError("training needs epochs >= 1 and lr > 0");
  if (models < 1 || runs < 1) throw ConfigError("models and runs must be >= 1");
  if (attacks.empty() || epsilons.empty()) throw ConfigError("attacks and epsilons must not be empty");
  for (const auto& a : attacks)
    if (a != "random" && a != "fgsm" && a != "pgd" && a != "targeted") throw ConfigError("unknown attack: " + a);
  for (double e : epsilons)
    if (!(e >= 0.0) || !std::isfinite(e)) throw ConfigError("epsilons must be >= 0");
  if (attack_steps < 1 || !(step_fraction > 0.0)) throw ConfigError("attack_steps >= 1 and step_fraction > 0 required");
  if (!(step_decay > 0.0 && step_decay <= 1.0)) throw ConfigError("step_decay must lie in (0, 1]");
  if (max_blocks < 1) throw ConfigError("max_blocks must be >= 1");
  if (ewa_enabled && (ewa_k_min > ewa_k_max || ewa_budget < 2 || ewa_runs < 1)) {
    throw ConfigError("ewa needs k_min <= k_max, budget >= 2 and runs >= 1");
  }
}

namespace {

struct Scores {
  double det = 0.0;
  double nondet = 0.0;
  double lp = 0.0;
  double ewa = 0.0;
  std::size_t lp_misses = 0;
  std::size_t lp_certified = 0;
};

class Evaluator {
 public:
  Evaluator(const AccuracyTableConfig& cfg, const ModelSpec& model, std::span<const std::size_t> val,
            std::uint64_t seed)
      : cfg_(cfg), model_(model), val_(val), seed_(seed) {}

  Scores score(const Graph& g, std::uint64_t row_seed) const {
    Scores s;
    const double n = static_cast<double>(val_.size());
    s.det = 1.0 - static_cast<double>(count(wrong_canonical(g))) / n;

    const auto nd = wrong_any(g, sched::WorkloadSpec::idle(), cfg_.runs, seed_);
    s.nondet = 1.0 - static_cast<double>(count(nd)) / n;

    if (cfg_.lp_enabled) {
      attack::LpConfig lp = cfg_.lp;
      lp.verify_mode = cfg_.precision;
      std::size_t flagged = 0;
      for (std::size_t i = 0; i < val_.size(); ++i) {
        const auto rf = receptive_field(g, val_[i], model_.convs.size());
        std::mt19937_64 rng(detail::mix(row_seed ^ detail::mix(val_[i])));
        const auto report = attack::lp_attack(model_, rf.graph, rf.target, g.labels[val_[i]], lp, rng);
        flagged += report.flipped;
        s.lp_certified += report.certified;
        if (nd[i] && !report.flipped) ++s.lp_misses;
      }
      s.lp = 1.0 - static_cast<double>(flagged) / n;
    }

    if (cfg_.ewa_enabled) {
      auto objective = [&](std::int64_t k) {
        const auto load = sched::WorkloadSpec::dgemm(static_cast<std::uint64_t>(k));
        return static_cast<double>(count(wrong_any(g, load, cfg_.ewa_runs, seed_ ^ 0xE3A)));
      };
      std::mt19937_64 rng(detail::mix(row_seed ^ 0xB0));
      const auto best = attack::blackbox_optimize(objective, static_cast<std::int64_t>(cfg_.ewa_k_min),
                                                  static_cast<std::int64_t>(cfg_.ewa_k_max), cfg_.ewa_budget, rng);
      s.ewa = 1.0 - best.best_value / n;
    }
    return s;
  }

 private:
  static std::size_t count(const std::vector<char>& v) { return static_cast<std::size_t>(std::count(v.begin(), v.end(), 1)); }

  void mark(const Matrix& logits, const Graph& g, std::vector<char>& wrong) const {
    for (std::size_t i = 0; i < val_.size(); ++i)
      if (predict_class(logits.row(val_[i])) != g.labels[val_[i]]) wrong[i] = 1;
  }

  std::vector<char> wrong_canonical(const Graph& g) const {
    std::vector<char> wrong(val_.size(), 0);
    mark(forward_ordered(model_, g, {}, cfg_.precision), g, wrong);
    return wrong;
  }

  // Wrong in at least one of `runs` scheduled runs; run t uses the same
  // seeds for every graph and workload.
  std::vector<char> wrong_any(const Graph& g, const sched::WorkloadSpec& load, std::size_t runs,
                              std::uint64_t seed) const {
    std::vector<char> wrong(val_.size(), 0);
    for (std::size_t t = 0; t < runs; ++t) {
      const auto orders = attack::scheduled_orders(model_, g, cfg_.device, load, cfg_.max_blocks, detail::mix(seed + t));
      mark(forward_ordered(model_, g, orders, cfg_.precision), g, wrong);
    }
    return wrong;
  }

  const AccuracyTableConfig& cfg_;
  const ModelSpec& model_;
  std::span<const std::size_t> val_;
  std::uint64_t seed_;
};

Matrix perturb(const std::string& name, const ModelSpec& model, const Graph& g, std::span<const Target> targets,
               std::span<const std::size_t> rows, const attack::AttackConfig& ac, std::uint64_t seed) {
  if (name == "random") {
    std::mt19937_64 rng(seed);
    return attack::random_attack(g, ac, rng);
  }
  if (name == "fgsm") return attack::fgsm(model, g, targets, ac);
  if (name == "pgd") return attack::pgd(model, g, targets, ac);
  return attack::targeted_margin(model, g, rows, ac);
}

}  // namespace

AccuracyTable run_accuracy_table(const AccuracyTableConfig& cfg) {
  cfg.validate();
  const Graph graph = data::make_sbm(cfg.sbm, detail::mix(cfg.seed ^ 0x5B));
  const auto split = data::split_rows(graph.n_nodes(), cfg.n_train, cfg.n_val, detail::mix(cfg.seed ^ 0x5C));
  std::vector<Target> targets;
  for (auto r : split.val) targets.push_back({r, graph.labels[r]});

  struct Cell {
    std::string attack;
    double epsilon;
  };
  std::vector<Cell> cells;
  for (const auto& a : cfg.attacks)
    for (double e : cfg.epsilons) cells.push_back({a, e});

  std::vector<std::size_t> dims{cfg.sbm.feature_dim};
  dims.insert(dims.end(), cfg.hidden.begin(), cfg.hidden.end());
  dims.push_back(static_cast<std::size_t>(cfg.sbm.n_classes));

  std::vector<std::vector<Scores>> scores(cfg.models, std::vector<Scores>(cells.size()));
  std::vector<double> clean(cfg.models);
  const bool parallel = cfg.exec == Exec::Parallel;
  std::string error;
#pragma omp parallel for schedule(dynamic) if (parallel)
  for (std::ptrdiff_t mi = 0; mi < static_cast<std::ptrdiff_t>(cfg.models); ++mi) {
    try {
      const auto m = static_cast<std::size_t>(mi);
      const std::uint64_t mseed = detail::mix(cfg.seed ^ detail::mix(0x100 + m));
      auto model = ModelSpec::init(ModelKind::Gnn, dims, mseed, cfg.aggregation);
      model = train(std::move(model), graph, split.train, cfg.train);
      clean[m] = accuracy(forward_exact(model, graph), graph, split.val);
      if (!(clean[m] > 1.0 / cfg.sbm.n_classes)) {
        throw std::runtime_error("model " + std::to_string(m) + " is untrained (validation accuracy " +
                                 format_double(clean[m]) + ")");
      }
      const Evaluator eval(cfg, model, split.val, mseed);
      std::optional<Scores> unperturbed;
      for (std::size_t c = 0; c < cells.size(); ++c) {
        const std::uint64_t row_seed = detail::mix(mseed ^ detail::mix(c));
        if (cells[c].epsilon == 0.0) {
          // every attack leaves the graph unchanged at ε = 0
          if (!unperturbed) unperturbed = eval.score(graph, mseed);
          scores[m][c] = *unperturbed;
          continue;
        }
        attack::AttackConfig ac;
        ac.epsilon = cells[c].epsilon;
        ac.steps = cfg.attack_steps;
        ac.step_size = cells[c].epsilon * cfg.step_fraction;
        ac.step_decay = cfg.step_decay;
        ac.seed = row_seed;
        Graph attacked = graph;
        attacked.features = perturb(cells[c].attack, model, graph, targets, split.val, ac, row_seed);
        scores[m][c] = eval.score(attacked, row_seed);
      }
    } catch (const std::exception& e) {
#pragma omp critical(lab_error)
      if (error.empty()) error = e.what();
    }
  }
  if (!error.empty()) throw std::runtime_error("accuracy-table: " + error);

  AccuracyTable table;
  table.clean_accuracy = clean;
  for (std::size_t c = 0; c < cells.size(); ++c) {
    std::vector<double> det, nd, lp, ewa;
    AccuracyRow row;
    row.attack = cells[c].attack;
    row.epsilon = cells[c].epsilon;
    for (std::size_t m = 0; m < cfg.models; ++m) {
      const auto& s = scores[m][c];
      det.push_back(s.det);
      nd.push_back(s.nondet);
      lp.push_back(s.lp);
      ewa.push_back(s.ewa);
      row.lp_misses += s.lp_misses;
      row.lp_certified += s.lp_certified;
    }
    row.acc_deterministic = mean(det);
    row.sd_deterministic = stddev(det);
    row.acc_nondet = mean(nd);
    row.sd_nondet = stddev(nd);
    if (cfg.lp_enabled) {
      row.acc_lp = mean(lp);
      row.sd_lp = stddev(lp);
    }
    if (cfg.ewa_enabled) {
      row.acc_ewa = mean(ewa);
      row.sd_ewa = stddev(ewa);
    }
    table.rows.push_back(row);
  }
  return table;
}

}  // namespace fpna::lab
