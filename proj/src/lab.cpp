#include "fpna/lab.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include "fpna/stats.hpp"
#include "lab_internal.hpp"

namespace fpna::lab {

std::string format_double(double x) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, res.ptr);
}

std::string fnv1a_hex(std::string_view text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  for (int i = 15; i >= 0; --i) {
    buf[i] = "0123456789abcdef"[h & 0xf];
    h >>= 4;
  }
  return std::string(buf, 16);
}

void write_atomic(const std::filesystem::path& path, std::string_view content) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + tmp.string() + " for writing");
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    out.flush();
    if (!out) throw std::runtime_error("write failed: " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp, ec);
    throw std::runtime_error("cannot rename onto " + path.string());
  }
}

std::string_view to_string(Family f) noexcept {
  switch (f) {
    case Family::Cyclic: return "cyclic";
    case Family::Sampled: return "sampled";
    case Family::SchedulerTrace: return "scheduler-trace";
  }
  return "?";
}

Family parse_family(std::string_view name) {
  if (name == "cyclic") return Family::Cyclic;
  if (name == "sampled") return Family::Sampled;
  if (name == "scheduler-trace") return Family::SchedulerTrace;
  throw ConfigError("unknown permutation family: " + std::string(name));
}

std::vector<double> boundary_normal(std::size_t d) {
  if (d < 2) throw std::invalid_argument("boundary_normal: d must be >= 2");
  const double norm = std::sqrt(static_cast<double>(d) * static_cast<double>(d - 1));
  std::vector<double> n(d, -1.0 / norm);
  n[0] = static_cast<double>(d - 1) / norm;
  return n;
}

std::vector<double> sample_boundary_point(std::span<const double> normal, double sigma, std::mt19937_64& rng) {
  std::normal_distribution<double> gauss(0.0, sigma);
  std::vector<double> x(normal.size());
  for (double& v : x) v = gauss(rng);
  const double along = compensated_dot(normal, x);
  for (std::size_t i = 0; i < x.size(); ++i) x[i] -= along * normal[i];
  for (int pass = 0; pass < 2; ++pass) x[0] -= compensated_dot(normal, x) / normal[0];
  return x;
}

std::vector<Permutation> make_family(Family family, std::size_t d, std::size_t size, const sched::DeviceConfig& device,
                                     const sched::WorkloadSpec& load, std::size_t n_blocks, std::uint64_t seed) {
  std::vector<Permutation> out;
  switch (family) {
    case Family::Cyclic:
      for (std::size_t s = 0; s < d; ++s) out.push_back(Permutation::cyclic_shift(d, s));
      break;
    case Family::Sampled: {
      std::mt19937_64 rng(seed);
      for (std::size_t i = 0; i < size; ++i) out.push_back(Permutation::random(d, rng));
      break;
    }
    case Family::SchedulerTrace: {
      const std::size_t blocks = std::min(n_blocks, d);
      for (std::size_t i = 0; i < size; ++i) {
        const auto trace = sched::simulate_reduction(device, load, blocks, detail::mix(seed + i));
        out.push_back(sched::feed_model_order(trace, d));
      }
      break;
    }
  }
  return out;
}

void BoundarySpreadConfig::validate() const {
  if (dim < 2) throw ConfigError("dim must be >= 2");
  if (n_points < 1) throw ConfigError("n_points must be >= 1");
  if (!(sigma > 0.0) || !std::isfinite(sigma)) throw ConfigError("sigma must be positive");
  if (family != Family::Cyclic && family_size < 1) throw ConfigError("family_size must be >= 1");
  if (n_blocks < 1) throw ConfigError("n_blocks must be >= 1");
  try {
    device.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
}

namespace {

std::vector<std::vector<double>> sample_points(std::span<const double> normal, std::size_t n, double sigma,
                                               std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<std::vector<double>> points;
  points.reserve(n);
  for (std::size_t p = 0; p < n; ++p) points.push_back(sample_boundary_point(normal, sigma, rng));
  return points;
}

std::vector<double> outcomes_for(Family family, std::span<const double> normal, std::span<const double> x,
                                 std::span<const Permutation> members, Precision mode) {
  if (family == Family::Cyclic) return cyclic_dot_outcomes(normal, x, mode);
  return family_dot_outcomes(normal, x, members, mode);
}

int side(double score) { return score > 0.0 ? 1 : 0; }

}  // namespace

BoundarySpreadResult run_boundary_spread(const BoundarySpreadConfig& cfg) {
  cfg.validate();
  const auto normal = boundary_normal(cfg.dim);
  const auto points = sample_points(normal, cfg.n_points, cfg.sigma, cfg.seed);
  std::vector<Permutation> members;
  if (cfg.family != Family::Cyclic) {
    members = make_family(cfg.family, cfg.dim, cfg.family_size, cfg.device, sched::WorkloadSpec::dgemm(cfg.workload_k),
                          cfg.n_blocks, detail::mix(cfg.seed ^ 0xFA));
  }

  BoundarySpreadResult result;
  result.points.resize(points.size());
  result.outcomes.resize(points.size());
  const bool parallel = cfg.exec == Exec::Parallel;
  const auto n = static_cast<std::ptrdiff_t>(points.size());
  std::string error;
#pragma omp parallel for schedule(dynamic) if (parallel)
  for (std::ptrdiff_t p = 0; p < n; ++p) {
    try {
      const auto& x = points[static_cast<std::size_t>(p)];
      auto out = outcomes_for(cfg.family, normal, x, members, cfg.precision);
      PointSpread s;
      s.residual = compensated_dot(normal, x);
      s.min = *std::min_element(out.begin(), out.end());
      s.max = *std::max_element(out.begin(), out.end());
      s.mean = mean(out);
      s.stddev = stddev(out);
      result.points[static_cast<std::size_t>(p)] = s;
      result.outcomes[static_cast<std::size_t>(p)] = std::move(out);
    } catch (const std::exception& e) {
#pragma omp critical(lab_error)
      if (error.empty()) error = e.what();
    }
  }
  if (!error.empty()) throw std::runtime_error("boundary-spread: " + error);

  std::vector<double> all;
  all.reserve(points.size() * result.outcomes.front().size());
  for (const auto& o : result.outcomes) all.insert(all.end(), o.begin(), o.end());
  result.min = *std::min_element(all.begin(), all.end());
  result.max = *std::max_element(all.begin(), all.end());
  result.mean = mean(all);
  result.stddev = stddev(all);
  result.max_abs = std::max(std::abs(result.min), std::abs(result.max));
  return result;
}

void PerturbSweepConfig::validate() const {
  if (dim < 2) throw ConfigError("dim must be >= 2");
  if (n_points < 1) throw ConfigError("n_points must be >= 1");
  if (!(sigma > 0.0) || !std::isfinite(sigma)) throw ConfigError("sigma must be positive");
  if (!(epsilon > 0.0) || !std::isfinite(epsilon)) throw ConfigError("epsilon must be positive");
  if (n_min < 0 || n_max < n_min || n_step < 1) throw ConfigError("sweep needs 0 <= n_min <= n_max and n_step >= 1");
  if (runs < 1 || n_blocks < 1) throw ConfigError("runs and n_blocks must be >= 1");
  if (lp_points > n_points) throw ConfigError("lp_points exceeds n_points");
  if (lp_every < 1) throw ConfigError("lp_every must be >= 1");
  try {
    device.validate();
    lp.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
}

PerturbSweepResult run_perturb_sweep(const PerturbSweepConfig& cfg) {
  cfg.validate();
  const auto normal = boundary_normal(cfg.dim);
  const auto points = sample_points(normal, cfg.n_points, cfg.sigma, cfg.seed);
  const auto idle = make_family(Family::SchedulerTrace, cfg.dim, cfg.runs, cfg.device, sched::WorkloadSpec::idle(),
                                cfg.n_blocks, detail::mix(cfg.seed ^ 0x1D));
  std::vector<Permutation> loaded;
  if (cfg.ewa_k > 0) {
    loaded = make_family(Family::SchedulerTrace, cfg.dim, cfg.runs, cfg.device, sched::WorkloadSpec::dgemm(cfg.ewa_k),
                         cfg.n_blocks, detail::mix(cfg.seed ^ 0xE7));
  }
  std::vector<int> grid;
  for (int n = cfg.n_min; n <= cfg.n_max; n += cfg.n_step) grid.push_back(n);

  const std::size_t np = points.size();
  const std::size_t cells = grid.size() * np;
  std::vector<std::size_t> cyc_flips(cells), idle_flips(cells), ewa_flips(cells);
  std::vector<signed char> lp_flag(cells, -1);
  const auto model = ModelSpec::hyperplane(normal, 0.0);
  attack::LpConfig lp = cfg.lp;
  lp.verify_mode = cfg.precision;

  const bool parallel = cfg.exec == Exec::Parallel;
  std::string error;
#pragma omp parallel for schedule(dynamic) if (parallel)
  for (std::ptrdiff_t c = 0; c < static_cast<std::ptrdiff_t>(cells); ++c) {
    try {
      const std::size_t g = static_cast<std::size_t>(c) / np;
      const std::size_t p = static_cast<std::size_t>(c) % np;
      const double shift = grid[g] * cfg.epsilon;
      std::vector<double> x = points[p];
      for (std::size_t i = 0; i < x.size(); ++i) x[i] += shift * normal[i];
      const int ref = side(compensated_dot(normal, x));
      auto count = [&](std::span<const double> outs) {
        return static_cast<std::size_t>(std::count_if(outs.begin(), outs.end(), [&](double o) { return side(o) != ref; }));
      };
      cyc_flips[static_cast<std::size_t>(c)] = count(cyclic_dot_outcomes(normal, x, cfg.precision));
      idle_flips[static_cast<std::size_t>(c)] = count(family_dot_outcomes(normal, x, idle, cfg.precision));
      if (!loaded.empty())
        ewa_flips[static_cast<std::size_t>(c)] = count(family_dot_outcomes(normal, x, loaded, cfg.precision));
      if (p < cfg.lp_points && (grid[g] - cfg.n_min) % cfg.lp_every == 0) {
        std::mt19937_64 rng(detail::mix(cfg.seed ^ detail::mix(static_cast<std::uint64_t>(c))));
        lp_flag[static_cast<std::size_t>(c)] = attack::lp_attack(model, x, ref, lp, rng).flipped ? 1 : 0;
      }
    } catch (const std::exception& e) {
#pragma omp critical(lab_error)
      if (error.empty()) error = e.what();
    }
  }
  if (!error.empty()) throw std::runtime_error("perturb-sweep: " + error);

  PerturbSweepResult result;
  for (std::size_t g = 0; g < grid.size(); ++g) {
    SweepRow row;
    row.n = grid[g];
    std::size_t cyc = 0, run = 0, ewa = 0, lp_hits = 0, lp_seen = 0;
    for (std::size_t p = 0; p < np; ++p) {
      const std::size_t c = g * np + p;
      cyc += cyc_flips[c];
      run += idle_flips[c];
      ewa += ewa_flips[c];
      if (lp_flag[c] >= 0) {
        ++lp_seen;
        lp_hits += static_cast<std::size_t>(lp_flag[c]);
      }
    }
    row.synthetic = static_cast<double>(cyc) / static_cast<double>(np * cfg.dim);
    row.sampled = static_cast<double>(run) / static_cast<double>(np * idle.size());
    if (!loaded.empty()) row.ewa = static_cast<double>(ewa) / static_cast<double>(np * loaded.size());
    if (lp_seen > 0) row.lp = static_cast<double>(lp_hits) / static_cast<double>(lp_seen);
    result.rows.push_back(row);
  }
  if (!result.rows.empty() && result.rows.back().synthetic == 0.0) {
    std::size_t g = result.rows.size();
    while (g > 0 && result.rows[g - 1].synthetic == 0.0) --g;
    result.zero_crossing = result.rows[g].n;
  }
  return result;
}

void TauStudyConfig::validate() const {
  if (workloads.empty() || sm_counts.empty() || power_scales.empty()) throw ConfigError("tau grid must not be empty");
  if (n_blocks < 2) throw ConfigError("n_blocks must be >= 2");
  if (trials < 2) throw ConfigError("trials must be >= 2");
  for (int sm : sm_counts)
    if (sm < 1) throw ConfigError("sm_count must be >= 1");
  for (double p : power_scales)
    if (!(p > 0.0) || !std::isfinite(p)) throw ConfigError("power_scale must be positive");
  if (!(base_jitter > 0.0) || !std::isfinite(base_jitter)) throw ConfigError("base_jitter must be positive");
}

std::vector<TauCell> run_tau_study(const TauStudyConfig& cfg) {
  cfg.validate();
  std::vector<TauCell> cells;
  for (auto k : cfg.workloads)
    for (int sm : cfg.sm_counts)
      for (double p : cfg.power_scales) cells.push_back({k, sm, p, {}});
  const bool parallel = cfg.exec == Exec::Parallel;
#pragma omp parallel for schedule(dynamic) if (parallel)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(cells.size()); ++i) {
    auto& cell = cells[static_cast<std::size_t>(i)];
    sched::DeviceConfig device{cell.sm_count, cfg.base_jitter, cell.power_scale};
    const auto load = sched::WorkloadSpec::dgemm(cell.workload);
    cell.dist = sched::tau_distribution(device, load, load, cfg.n_blocks, cfg.trials, cfg.seed,
                                        sched::independent_stream(cfg.seed));
  }
  return cells;
}

}  // namespace fpna::lab
