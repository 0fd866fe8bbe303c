#include "fpna/schedsim.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <numeric>
#include <ostream>
#include <queue>
#include <random>
#include <sstream>
#include <stdexcept>

#include "fpna/permkit.hpp"

namespace fpna::sched {

void DeviceConfig::validate() const {
  if (sm_count < 1) throw std::invalid_argument("DeviceConfig: sm_count must be >= 1");
  if (!(base_jitter >= 0.0)) throw std::invalid_argument("DeviceConfig: base_jitter must be >= 0");
  if (!(power_scale > 0.0)) throw std::invalid_argument("DeviceConfig: power_scale must be > 0");
}

double default_occupancy(std::uint64_t matrix_size) {
  const double r = static_cast<double>(matrix_size) / 10000.0;
  return std::min(0.9, r * r * 0.9);
}

double WorkloadSpec::occupancy_at_size() const {
  if (!occupancy) return 0.0;
  const double occ = occupancy(matrix_size);
  if (!(occ >= 0.0 && occ < 1.0)) throw std::invalid_argument("WorkloadSpec: occupancy must lie in [0, 1)");
  if (matrix_size == 0 && occ != 0.0) throw std::invalid_argument("WorkloadSpec: occupancy(0) must be 0");
  return occ;
}

int effective_units(const DeviceConfig& device, const WorkloadSpec& load) {
  const double occ = load.occupancy_at_size();
  const auto units = static_cast<int>(std::floor(static_cast<double>(device.sm_count) * (1.0 - occ)));
  return std::max(1, units);
}

namespace {

// Unscaled completion times; power_scale is applied by the caller.
std::vector<double> raw_completion_times(const DeviceConfig& device, const WorkloadSpec& load,
                                         std::size_t n_blocks, std::uint64_t seed) {
  device.validate();
  if (!(load.burst_rate >= 0.0) || !(load.stall_scale >= 0.0)) {
    throw std::invalid_argument("WorkloadSpec: burst_rate and stall_scale must be >= 0");
  }
  const int units = effective_units(device, load);
  const double stall_rate = load.burst_rate * load.occupancy_at_size();
  const double stall_mean = load.stall_scale * device.base_jitter;

  std::mt19937_64 rng(seed);
  std::exponential_distribution<double> unit_exp(1.0);

  // (free time, unit id); the earliest free unit takes the next block,
  // lowest id first on ties.
  using Slot = std::pair<double, int>;
  std::priority_queue<Slot, std::vector<Slot>, std::greater<>> free_units;
  for (int u = 0; u < units; ++u) free_units.emplace(0.0, u);

  std::vector<double> completion(n_blocks);
  for (std::size_t block = 0; block < n_blocks; ++block) {
    auto [start, unit] = free_units.top();
    free_units.pop();
    const double busy = device.base_jitter > 0.0 ? device.base_jitter * unit_exp(rng) : 0.0;
    // Stalls hold back the block's atomic commit, not its unit: the unit
    // picks up the next block while the commit waits on the workload.
    double stalled = 0.0;
    if (stall_rate > 0.0 && busy > 0.0) {
      std::poisson_distribution<int> stalls(stall_rate * busy / device.base_jitter);
      const int count = stalls(rng);
      for (int s = 0; s < count; ++s) stalled += stall_mean * unit_exp(rng);
    }
    completion[block] = start + busy + stalled;
    free_units.emplace(start + busy, unit);
  }
  return completion;
}

}  // namespace

std::vector<double> simulate_completion_times(const DeviceConfig& device, const WorkloadSpec& load,
                                              std::size_t n_blocks, std::uint64_t seed) {
  auto times = raw_completion_times(device, load, n_blocks, seed);
  for (double& t : times) t *= device.power_scale;
  return times;
}

BieoTrace simulate_reduction(const DeviceConfig& device, const WorkloadSpec& load, std::size_t n_blocks,
                             std::uint64_t seed) {
  if (n_blocks == 0) throw std::invalid_argument("simulate_reduction: n_blocks must be >= 1");
  // Ranks come from the unscaled timeline: multiplying every delay by the
  // same power_scale is order preserving, and ranking before the multiply
  // keeps that exact under rounding.
  const auto times = raw_completion_times(device, load, n_blocks, seed);
  std::vector<std::size_t> order(n_blocks);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return times[a] < times[b] || (times[a] == times[b] && a < b);
  });
  BieoTrace trace;
  trace.execution_rank.resize(n_blocks);
  for (std::size_t r = 0; r < n_blocks; ++r) trace.execution_rank[order[r]] = r;
  return trace;
}

Permutation trace_to_perm(const BieoTrace& trace) {
  return Permutation(trace.execution_rank).inverse();
}

BieoTrace perm_to_trace(const Permutation& order) {
  const Permutation ranks = order.inverse();
  return BieoTrace{{ranks.indices().begin(), ranks.indices().end()}};
}

Permutation feed_model_order(const BieoTrace& trace, std::size_t stream_len) {
  const std::size_t blocks = trace.n_blocks();
  if (stream_len == 0 || blocks == 0 || stream_len < blocks) {
    throw std::invalid_argument("feed_model_order: stream of " + std::to_string(stream_len) +
                                " elements cannot be split over " + std::to_string(blocks) + " blocks");
  }
  const std::size_t chunk = (stream_len + blocks - 1) / blocks;
  const Permutation block_order = trace_to_perm(trace);
  std::vector<std::size_t> order;
  order.reserve(stream_len);
  for (std::size_t r = 0; r < blocks; ++r) {
    const std::size_t begin = block_order[r] * chunk;
    const std::size_t end = std::min(stream_len, begin + chunk);
    for (std::size_t i = begin; i < end; ++i) order.push_back(i);
  }
  return Permutation(std::move(order));
}

TauDistribution tau_distribution(const DeviceConfig& device, const WorkloadSpec& load_a,
                                 const WorkloadSpec& load_b, std::size_t n_blocks, std::size_t trials,
                                 std::uint64_t seed_a, std::uint64_t seed_b, Exec exec) {
  if (trials < 2) throw std::invalid_argument("tau_distribution: trials must be >= 2");
  device.validate();
  TauDistribution out;
  out.taus.resize(trials);
  const bool parallel = exec == Exec::Parallel;
  const auto n = static_cast<std::ptrdiff_t>(trials);
#pragma omp parallel for schedule(dynamic) if (parallel)
  for (std::ptrdiff_t t = 0; t < n; ++t) {
    const auto offset = static_cast<std::uint64_t>(t);
    const auto a = trace_to_perm(simulate_reduction(device, load_a, n_blocks, seed_a + offset));
    const auto b = trace_to_perm(simulate_reduction(device, load_b, n_blocks, seed_b + offset));
    out.taus[static_cast<std::size_t>(t)] = kendall_tau(a, b);
  }
  out.histogram = Histogram::build(out.taus, -1.0, 1.0, 0.01);
  out.min = *std::min_element(out.taus.begin(), out.taus.end());
  out.max = *std::max_element(out.taus.begin(), out.taus.end());
  out.mean = mean(out.taus);
  out.variance = variance(out.taus);
  out.modes = out.histogram.count_modes();
  return out;
}

void write_trace_file(std::ostream& out, const TraceFile& file) {
  out << "# n_blocks=" << file.n_blocks << " seed=" << file.seed << " k=" << file.matrix_size << '\n';
  for (const auto& trace : file.traces) out << trace_to_perm(trace).to_string() << '\n';
}

TraceFile read_trace_file(std::istream& in) {
  TraceFile file;
  std::string line;
  bool header = false;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line.front() == '#') {
      std::istringstream fields(line.substr(1));
      std::string field;
      while (fields >> field) {
        const auto eq = field.find('=');
        if (eq == std::string::npos) continue;
        const auto key = field.substr(0, eq);
        const auto value = std::stoull(field.substr(eq + 1));
        if (key == "n_blocks") file.n_blocks = value;
        else if (key == "seed") file.seed = value;
        else if (key == "k") file.matrix_size = value;
      }
      header = true;
      continue;
    }
    const auto order = Permutation::parse(line);
    if (header && order.size() != file.n_blocks) {
      throw std::invalid_argument("trace file: line has " + std::to_string(order.size()) + " blocks, header says " +
                                  std::to_string(file.n_blocks));
    }
    file.traces.push_back(perm_to_trace(order));
  }
  if (!header) throw std::invalid_argument("trace file: missing '# n_blocks=' header");
  return file;
}

}  // namespace fpna::sched
