#pragma once

// Seeded model of asynchronous block scheduling for a parallel reduction.
//
// Blocks are dispatched in index order onto the parallel units left over by
// an external workload. A block occupies its unit for an exponentially
// distributed time. While the workload runs it injects stalls that delay the
// block's atomic accumulation without holding its unit. Commits happen at
// completion, so the completion order is the block-index-vs-execution-order
// (BIEO) trace. This is a model with the
// qualitative behaviour of measured traces, not a description of any real
// hardware scheduler.

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "fpna/ordered.hpp"
#include "fpna/permutation.hpp"
#include "fpna/stats.hpp"

namespace fpna::sched {

struct DeviceConfig {
  int sm_count = 32;         // parallel execution units
  double base_jitter = 1.0;  // mean block execution time
  double power_scale = 1.0;  // uniform multiplier on every delay

  void validate() const;
};

/// min(0.9, 0.9 (k / 10000)²)
double default_occupancy(std::uint64_t matrix_size);

struct WorkloadSpec {
  std::uint64_t matrix_size = 0;  // k; 0 means no external workload
  /// Fraction of the units taken by a workload of size k; must be 0 at k = 0,
  /// non-decreasing, and below 1.
  std::function<double(std::uint64_t)> occupancy = default_occupancy;
  double burst_rate = 1.0;   // stall events per unit of block time at full occupancy
  double stall_scale = 20.0; // mean stall length in units of base_jitter

  static WorkloadSpec idle() { return {}; }
  static WorkloadSpec dgemm(std::uint64_t k) {
    WorkloadSpec w;
    w.matrix_size = k;
    return w;
  }
  double occupancy_at_size() const;
};

/// execution_rank[i] is the rank at which block i performed its accumulation.
struct BieoTrace {
  std::vector<std::size_t> execution_rank;

  std::size_t n_blocks() const noexcept { return execution_rank.size(); }
};

/// Units left to the reduction: max(1, floor(W (1 - occupancy(k)))).
int effective_units(const DeviceConfig& device, const WorkloadSpec& load);

/// One simulated reduction of `n_blocks` blocks. Deterministic per argument
/// set and seed. Ranks are the argsort of completion times with ties broken
/// by block index. power_scale multiplies every delay and therefore leaves
/// the ranks unchanged.
BieoTrace simulate_reduction(const DeviceConfig& device, const WorkloadSpec& load, std::size_t n_blocks,
                             std::uint64_t seed);

/// Completion times of the same simulation (including power_scale).
std::vector<double> simulate_completion_times(const DeviceConfig& device, const WorkloadSpec& load,
                                              std::size_t n_blocks, std::uint64_t seed);

/// Accumulation order: position r holds the block executed at rank r.
Permutation trace_to_perm(const BieoTrace& trace);
/// Inverse of trace_to_perm.
BieoTrace perm_to_trace(const Permutation& order);

/// Maps a block-level order onto a stream of `stream_len` elements. Blocks own
/// contiguous chunks of ceil(stream_len / n_blocks) elements (the last ones
/// may be shorter or empty) and visit their chunk sequentially. Throws
/// std::invalid_argument if stream_len is 0 or smaller than the block count.
Permutation feed_model_order(const BieoTrace& trace, std::size_t stream_len);

struct TauDistribution {
  std::vector<double> taus;  // one per trial, in trial order
  Histogram histogram;       // bin width 0.01 over [-1, 1]
  double min = 0.0;
  double max = 0.0;
  double mean = 0.0;
  double variance = 0.0;
  int modes = 0;
};

/// Kendall tau between a trace under `load_a` (seed_a + t) and a trace under
/// `load_b` (seed_b + t) for t in [0, trials). Passing seed_b == seed_a pairs
/// each trial with itself. Throws std::invalid_argument when trials < 2.
TauDistribution tau_distribution(const DeviceConfig& device, const WorkloadSpec& load_a,
                                 const WorkloadSpec& load_b, std::size_t n_blocks, std::size_t trials,
                                 std::uint64_t seed_a, std::uint64_t seed_b, Exec exec = Exec::Serial);

/// The default independent B stream used by the CLI.
inline std::uint64_t independent_stream(std::uint64_t seed) { return seed ^ 0x9E3779B97F4A7C15ULL; }

/// Trace files: a header `# n_blocks=<n> seed=<s> k=<k>` followed by one
/// accumulation order per line as comma-separated block indices.
struct TraceFile {
  std::size_t n_blocks = 0;
  std::uint64_t seed = 0;
  std::uint64_t matrix_size = 0;
  std::vector<BieoTrace> traces;
};

void write_trace_file(std::ostream& out, const TraceFile& file);
TraceFile read_trace_file(std::istream& in);

}  // namespace fpna::sched
