#include <set>
#include <type_traits>

#include "fpna/lab.hpp"
#include "json.hpp"
#include "lab_internal.hpp"

namespace fpna::lab {

namespace {

using nlohmann::json;

std::string precision_name(Precision p) {
  switch (p) {
    case Precision::Binary16: return "fp16";
    case Precision::Binary32: return "fp32";
    case Precision::Binary64: return "fp64";
  }
  return "?";
}

json encode(Precision p) { return precision_name(p); }
json encode(Family f) { return std::string(to_string(f)); }
json encode(Exec e) { return e == Exec::Parallel ? "parallel" : "serial"; }
json encode(Aggregation a) { return a == Aggregation::Add ? "add" : "mean"; }
json encode(Optimizer o) { return o == Optimizer::Adam ? "adam" : "gd"; }
template <class T>
json encode(const T& v) {
  return json(v);
}

void decode(const json& j, Precision& p) {
  try {
    p = parse_precision(j.get<std::string>());
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
}
void decode(const json& j, Family& f) { f = parse_family(j.get<std::string>()); }
void decode(const json& j, Exec& e) {
  const auto s = j.get<std::string>();
  if (s != "serial" && s != "parallel") throw ConfigError("exec must be serial or parallel");
  e = s == "parallel" ? Exec::Parallel : Exec::Serial;
}
void decode(const json& j, Aggregation& a) {
  const auto s = j.get<std::string>();
  if (s != "add" && s != "mean") throw ConfigError("aggregation must be add or mean");
  a = s == "add" ? Aggregation::Add : Aggregation::Mean;
}
void decode(const json& j, Optimizer& o) {
  const auto s = j.get<std::string>();
  if (s != "adam" && s != "gd") throw ConfigError("optimizer must be adam or gd");
  o = s == "adam" ? Optimizer::Adam : Optimizer::GradientDescent;
}
template <class T>
void decode(const json& j, T& v) {
  if constexpr (std::is_same_v<T, bool>) {
    if (!j.is_boolean()) throw ConfigError("expected true or false");
  } else if constexpr (std::is_unsigned_v<T>) {
    if (!j.is_number_unsigned()) throw ConfigError("expected a non-negative integer");
  } else if constexpr (std::is_integral_v<T>) {
    if (!j.is_number_integer()) throw ConfigError("expected an integer");
  }
  v = j.get<T>();
}

struct Writer {
  json doc = json::object();
  template <class T>
  void operator()(const char* key, T& v) {
    doc[key] = encode(v);
  }
};

struct Reader {
  const json& doc;
  std::set<std::string> used{"experiment"};
  template <class T>
  void operator()(const char* key, T& v) {
    used.insert(key);
    if (!doc.contains(key)) return;
    try {
      decode(doc.at(key), v);
    } catch (const json::exception&) {
      throw ConfigError(std::string("wrong type for key '") + key + "'");
    } catch (const ConfigError& e) {
      throw ConfigError(std::string(key) + ": " + e.what());
    }
  }
  void finish() const {
    for (const auto& [k, _] : doc.items())
      if (!used.count(k)) throw ConfigError("unknown config key '" + k + "'");
  }
};

template <class V>
void device_fields(V& v, sched::DeviceConfig& d) {
  v("sm_count", d.sm_count);
  v("base_jitter", d.base_jitter);
  v("power_scale", d.power_scale);
}

template <class V>
void lp_fields(V& v, attack::LpConfig& lp) {
  v("lp_opt_steps", lp.opt_steps);
  v("lp_temperature_init", lp.temperature_init);
  v("lp_temperature_decay", lp.temperature_decay);
  v("lp_sinkhorn_iters", lp.sinkhorn_iters);
  v("lp_noise_scale", lp.noise_scale);
  v("lp_learning_rate", lp.learning_rate);
  v("lp_harden_every", lp.harden_every);
  v("lp_screen", lp.screen);
}

template <class V>
void fields(V& v, BoundarySpreadConfig& c) {
  v("dim", c.dim);
  v("n_points", c.n_points);
  v("sigma", c.sigma);
  v("precision", c.precision);
  v("family", c.family);
  v("family_size", c.family_size);
  v("n_blocks", c.n_blocks);
  v("workload_k", c.workload_k);
  device_fields(v, c.device);
  v("write_outcomes", c.write_outcomes);
  v("seed", c.seed);
  v("exec", c.exec);
}

template <class V>
void fields(V& v, PerturbSweepConfig& c) {
  v("dim", c.dim);
  v("n_points", c.n_points);
  v("sigma", c.sigma);
  v("epsilon", c.epsilon);
  v("n_min", c.n_min);
  v("n_max", c.n_max);
  v("n_step", c.n_step);
  v("precision", c.precision);
  v("runs", c.runs);
  v("n_blocks", c.n_blocks);
  device_fields(v, c.device);
  v("ewa_k", c.ewa_k);
  v("lp_points", c.lp_points);
  v("lp_every", c.lp_every);
  lp_fields(v, c.lp);
  v("seed", c.seed);
  v("exec", c.exec);
}

template <class V>
void fields(V& v, AccuracyTableConfig& c) {
  v("n_nodes", c.sbm.n_nodes);
  v("n_classes", c.sbm.n_classes);
  v("p_in", c.sbm.p_in);
  v("p_out", c.sbm.p_out);
  v("feature_dim", c.sbm.feature_dim);
  v("feature_signal", c.sbm.feature_signal);
  v("feature_noise", c.sbm.feature_noise);
  v("hidden", c.hidden);
  v("aggregation", c.aggregation);
  v("n_train", c.n_train);
  v("n_val", c.n_val);
  v("epochs", c.train.epochs);
  v("learning_rate", c.train.learning_rate);
  v("optimizer", c.train.optimizer);
  v("weight_decay", c.train.weight_decay);
  v("models", c.models);
  v("runs", c.runs);
  v("attacks", c.attacks);
  v("epsilons", c.epsilons);
  v("attack_steps", c.attack_steps);
  v("step_fraction", c.step_fraction);
  v("step_decay", c.step_decay);
  v("precision", c.precision);
  device_fields(v, c.device);
  v("max_blocks", c.max_blocks);
  v("lp_enabled", c.lp_enabled);
  lp_fields(v, c.lp);
  v("ewa_enabled", c.ewa_enabled);
  v("ewa_k_min", c.ewa_k_min);
  v("ewa_k_max", c.ewa_k_max);
  v("ewa_budget", c.ewa_budget);
  v("ewa_runs", c.ewa_runs);
  v("seed", c.seed);
  v("exec", c.exec);
}

template <class V>
void fields(V& v, TauStudyConfig& c) {
  v("workloads", c.workloads);
  v("sm_counts", c.sm_counts);
  v("power_scales", c.power_scales);
  v("n_blocks", c.n_blocks);
  v("trials", c.trials);
  v("base_jitter", c.base_jitter);
  v("seed", c.seed);
  v("exec", c.exec);
}

template <class V>
void fields(V& v, LpStudyConfig& c) {
  v("dim", c.dim);
  v("n_instances", c.n_instances);
  v("magnitude_range", c.magnitude_range);
  v("precision", c.precision);
  lp_fields(v, c.lp);
  v("max_draws", c.max_draws);
  v("seed", c.seed);
  v("exec", c.exec);
}

template <class V>
void fields(V& v, EwaStudyConfig& c) {
  v("dim", c.dim);
  v("threshold", c.threshold);
  v("precision", c.precision);
  device_fields(v, c.device);
  v("k_min", c.k_min);
  v("k_max", c.k_max);
  v("grid_step", c.grid_step);
  v("budget", c.budget);
  v("trials_per_eval", c.trials_per_eval);
  v("compare_trials", c.compare_trials);
  v("seed", c.seed);
  v("exec", c.exec);
}

template <class Config>
Config parse(std::string_view text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  if (!doc.is_object()) throw ConfigError("config must be a JSON object");
  Config cfg;
  Reader reader{doc};
  fields(reader, cfg);
  reader.finish();
  cfg.validate();
  return cfg;
}

template <class Config>
std::string dump(const Config& cfg) {
  Writer w;
  fields(w, const_cast<Config&>(cfg));
  return w.doc.dump();
}

std::vector<std::filesystem::path> prepare(const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw std::runtime_error("cannot create output directory " + dir.string());
  return {};
}

void put(std::vector<std::filesystem::path>& written, const std::filesystem::path& path, std::string_view text) {
  write_atomic(path, text);
  written.push_back(path);
}

}  // namespace

BoundarySpreadConfig boundary_spread_from_json(std::string_view text) { return parse<BoundarySpreadConfig>(text); }
PerturbSweepConfig perturb_sweep_from_json(std::string_view text) { return parse<PerturbSweepConfig>(text); }
AccuracyTableConfig accuracy_table_from_json(std::string_view text) { return parse<AccuracyTableConfig>(text); }
TauStudyConfig tau_study_from_json(std::string_view text) { return parse<TauStudyConfig>(text); }
LpStudyConfig lp_study_from_json(std::string_view text) { return parse<LpStudyConfig>(text); }
EwaStudyConfig ewa_study_from_json(std::string_view text) { return parse<EwaStudyConfig>(text); }

std::string to_json(const BoundarySpreadConfig& cfg) { return dump(cfg); }
std::string to_json(const PerturbSweepConfig& cfg) { return dump(cfg); }
std::string to_json(const AccuracyTableConfig& cfg) { return dump(cfg); }
std::string to_json(const TauStudyConfig& cfg) { return dump(cfg); }
std::string to_json(const LpStudyConfig& cfg) { return dump(cfg); }
std::string to_json(const EwaStudyConfig& cfg) { return dump(cfg); }

std::vector<std::filesystem::path> write_artifacts(const BoundarySpreadConfig& cfg, const BoundarySpreadResult& result,
                                                   const std::filesystem::path& dir) {
  auto written = prepare(dir);
  const auto config = to_json(cfg);
  if (cfg.write_outcomes) {
    detail::Csv csv(config, "point,member,outcome");
    for (std::size_t p = 0; p < result.outcomes.size(); ++p)
      for (std::size_t m = 0; m < result.outcomes[p].size(); ++m) {
        csv.cell(std::uint64_t{p}).cell(std::uint64_t{m}).cell(result.outcomes[p][m]);
        csv.end_row();
      }
    put(written, dir / "boundary_spread_outcomes.csv", csv.text());
  }
  detail::Csv points(config, "point,residual,min,max,mean,stddev,spread");
  for (std::size_t p = 0; p < result.points.size(); ++p) {
    const auto& s = result.points[p];
    points.cell(std::uint64_t{p}).cell(s.residual).cell(s.min).cell(s.max).cell(s.mean).cell(s.stddev).cell(s.spread());
    points.end_row();
  }
  put(written, dir / "boundary_spread_points.csv", points.text());

  json summary{{"experiment", "boundary-spread"},
               {"config", json::parse(config)},
               {"config_hash", fnv1a_hex(config)},
               {"min", result.min},
               {"max", result.max},
               {"mean", result.mean},
               {"stddev", result.stddev},
               {"max_abs", result.max_abs}};
  put(written, dir / "boundary_spread_summary.json", summary.dump(2) + "\n");
  return written;
}

std::vector<std::filesystem::path> write_artifacts(const PerturbSweepConfig& cfg, const PerturbSweepResult& result,
                                                   const std::filesystem::path& dir) {
  auto written = prepare(dir);
  const auto config = to_json(cfg);
  detail::Csv csv(config, "n,synthetic,sampled,lp,ewa");
  for (const auto& r : result.rows) {
    csv.cell(r.n).cell(r.synthetic).cell(r.sampled).cell(r.lp).cell(r.ewa);
    csv.end_row();
  }
  put(written, dir / "perturb_sweep.csv", csv.text());
  json summary{{"experiment", "perturb-sweep"},
               {"config", json::parse(config)},
               {"config_hash", fnv1a_hex(config)},
               {"zero_crossing", result.zero_crossing ? json(*result.zero_crossing) : json(nullptr)}};
  put(written, dir / "perturb_sweep_summary.json", summary.dump(2) + "\n");
  return written;
}

std::vector<std::filesystem::path> write_artifacts(const AccuracyTableConfig& cfg, const AccuracyTable& result,
                                                   const std::filesystem::path& dir) {
  auto written = prepare(dir);
  const auto config = to_json(cfg);
  std::string header = "attack,epsilon,acc_deterministic,sd_deterministic,acc_nondet,sd_nondet";
  if (cfg.lp_enabled) header += ",acc_lp,sd_lp,lp_misses,lp_certified";
  if (cfg.ewa_enabled) header += ",acc_ewa,sd_ewa";
  detail::Csv csv(config, header);
  json rows = json::array();
  for (const auto& r : result.rows) {
    csv.cell(r.attack).cell(r.epsilon).cell(r.acc_deterministic).cell(r.sd_deterministic).cell(r.acc_nondet).cell(
        r.sd_nondet);
    json row{{"attack", r.attack},
             {"epsilon", r.epsilon},
             {"acc_deterministic", r.acc_deterministic},
             {"sd_deterministic", r.sd_deterministic},
             {"acc_nondet", r.acc_nondet},
             {"sd_nondet", r.sd_nondet}};
    if (cfg.lp_enabled) {
      csv.cell(r.acc_lp).cell(r.sd_lp).cell(std::uint64_t{r.lp_misses}).cell(std::uint64_t{r.lp_certified});
      row["acc_lp"] = *r.acc_lp;
      row["sd_lp"] = *r.sd_lp;
      row["lp_misses"] = r.lp_misses;
      row["lp_certified"] = r.lp_certified;
    }
    if (cfg.ewa_enabled) {
      csv.cell(r.acc_ewa).cell(r.sd_ewa);
      row["acc_ewa"] = *r.acc_ewa;
      row["sd_ewa"] = *r.sd_ewa;
    }
    csv.end_row();
    rows.push_back(row);
  }
  put(written, dir / "accuracy_table.csv", csv.text());
  json doc{{"experiment", "accuracy-table"},
           {"config", json::parse(config)},
           {"config_hash", fnv1a_hex(config)},
           {"clean_accuracy", result.clean_accuracy},
           {"rows", rows}};
  put(written, dir / "accuracy_table.json", doc.dump(2) + "\n");
  return written;
}

std::vector<std::filesystem::path> write_artifacts(const TauStudyConfig& cfg, const std::vector<TauCell>& result,
                                                   const std::filesystem::path& dir) {
  auto written = prepare(dir);
  const auto config = to_json(cfg);
  detail::Csv summary(config, "workload,sm_count,power_scale,mean,variance,min,max,modes");
  for (const auto& cell : result) {
    summary.cell(cell.workload).cell(cell.sm_count).cell(cell.power_scale).cell(cell.dist.mean).cell(
        cell.dist.variance).cell(cell.dist.min).cell(cell.dist.max).cell(cell.dist.modes);
    summary.end_row();
    detail::Csv hist(config, "bin_lo,bin_hi,count");
    const auto& h = cell.dist.histogram;
    for (std::size_t i = 0; i < h.counts.size(); ++i) {
      hist.cell(h.bin_lo(i)).cell(h.bin_hi(i)).cell(h.counts[i]);
      hist.end_row();
    }
    const std::string name = "tau_hist_k" + std::to_string(cell.workload) + "_sm" + std::to_string(cell.sm_count) +
                             "_p" + format_double(cell.power_scale) + ".csv";
    put(written, dir / name, hist.text());
  }
  put(written, dir / "tau_summary.csv", summary.text());
  return written;
}

std::vector<std::filesystem::path> write_artifacts(const LpStudyConfig& cfg, const LpStudyResult& result,
                                                   const std::filesystem::path& dir) {
  auto written = prepare(dir);
  const auto config = to_json(cfg);
  detail::Csv csv(config, "instance,label,distinct_outcomes,flipped,verified,certified,iterations,predicted");
  std::string reports;
  for (std::size_t i = 0; i < result.instances.size(); ++i) {
    const auto& inst = result.instances[i];
    const auto& r = inst.report;
    csv.cell(std::uint64_t{i}).cell(inst.label).cell(std::uint64_t{inst.distinct_outcomes}).cell(int{r.flipped}).cell(
        int{inst.verified}).cell(int{r.certified}).cell(r.iterations_used).cell(r.predicted);
    csv.end_row();
    reports += attack::report_json(r, "instance-" + std::to_string(i), 0.0, cfg.seed) + "\n";
  }
  put(written, dir / "lp_study.csv", csv.text());
  put(written, dir / "lp_reports.jsonl", reports);
  json summary{{"experiment", "lp-attack"},
               {"config", json::parse(config)},
               {"config_hash", fnv1a_hex(config)},
               {"instances", result.instances.size()},
               {"draws", result.draws},
               {"found", result.found},
               {"false_positives", result.false_positives}};
  put(written, dir / "lp_study_summary.json", summary.dump(2) + "\n");
  return written;
}

std::vector<std::filesystem::path> write_artifacts(const EwaStudyConfig& cfg, const EwaStudyResult& result,
                                                   const std::filesystem::path& dir) {
  auto written = prepare(dir);
  const auto config = to_json(cfg);
  detail::Csv grid(config, "k,objective");
  grid.cell(std::uint64_t{0}).cell(result.idle);
  grid.end_row();
  for (const auto& [k, v] : result.grid) {
    grid.cell(k).cell(v);
    grid.end_row();
  }
  put(written, dir / "ewa_grid.csv", grid.text());
  detail::Csv compare(config, "trial,optimizer,random");
  for (std::size_t t = 0; t < result.comparison.size(); ++t) {
    compare.cell(std::uint64_t{t}).cell(result.comparison[t].first).cell(result.comparison[t].second);
    compare.end_row();
  }
  put(written, dir / "ewa_compare.csv", compare.text());
  json summary{{"experiment", "ewa"},
               {"config", json::parse(config)},
               {"config_hash", fnv1a_hex(config)},
               {"best_k", result.attack.matrix_size ? json(*result.attack.matrix_size) : json(nullptr)},
               {"best_objective", result.attack.flip_rate},
               {"flipped", result.attack.flipped},
               {"witness_verified", result.witness_verified},
               {"idle_objective", result.idle},
               {"grid_max", result.grid_max},
               {"optimizer_wins", result.optimizer_wins},
               {"ties", result.ties},
               {"report", json::parse(attack::report_json(result.attack, "designed", 0.0, cfg.seed))}};
  put(written, dir / "ewa_summary.json", summary.dump(2) + "\n");
  return written;
}

}  // namespace fpna::lab
