#pragma once

// Input-space attacks, the learnable-permutation (LP) attack over
// accumulation orders, and the simulated external workload attack (EWA).
//
// Every attack addresses one or more rows of a Graph: a batch of samples for
// Linear and Mlp models, or target nodes of a (sub)graph for Gnn models.
// Input attacks perturb the whole feature matrix.

#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "fpna/model.hpp"
#include "fpna/ordered.hpp"
#include "fpna/schedsim.hpp"

namespace fpna::attack {

struct AttackConfig {
  double epsilon = 0.1;
  int steps = 10;
  double step_size = 0.01;
  /// pgd and targeted: the step size is multiplied by this after every step.
  double step_decay = 1.0;
  std::uint64_t seed = 0;

  void validate() const;
};

/// x + ε sign(∇ₓ L) for the mean cross-entropy over `targets`; sign(0) = 0.
Matrix fgsm(const ModelSpec& model, const Graph& input, std::span<const Target> targets, const AttackConfig& cfg);

/// `steps` sign-gradient steps of size step_size, each projected back onto
/// the ∞-ball of radius ε around the clean features.
Matrix pgd(const ModelSpec& model, const Graph& input, std::span<const Target> targets, const AttackConfig& cfg);

/// x + ε u with u uniform on [-1, 1] per feature.
Matrix random_attack(const Graph& input, const AttackConfig& cfg, std::mt19937_64& rng);

/// Sign-gradient descent on the mean margin of the target rows inside the
/// ε-ball; returns the iterate with the smallest mean margin seen, which may
/// be the clean input.
Matrix targeted_margin(const ModelSpec& model, const Graph& input, std::span<const std::size_t> rows,
                       const AttackConfig& cfg);

/// Single-sample forms for Linear and Mlp models.
std::vector<double> fgsm(const ModelSpec& model, std::span<const double> x, int label, const AttackConfig& cfg);
std::vector<double> pgd(const ModelSpec& model, std::span<const double> x, int label, const AttackConfig& cfg);
std::vector<double> random_attack(std::span<const double> x, const AttackConfig& cfg, std::mt19937_64& rng);
std::vector<double> targeted_margin(const ModelSpec& model, std::span<const double> x, const AttackConfig& cfg);

// ---------------------------------------------------------------------------

struct LpConfig {
  int opt_steps = 1000;
  double temperature_init = 1.0;
  double temperature_decay = 0.995;  // per step
  int sinkhorn_iters = 30;
  double noise_scale = 1.0;
  double learning_rate = 0.1;
  int harden_every = 25;
  Precision verify_mode = Precision::Binary32;
  /// Skip the search when the error bound or the logit interval proves no
  /// order can flip the row.
  bool screen = true;

  void validate() const;
};

struct AttackReport {
  std::string attack;
  bool flipped = false;
  /// Orders that produce the flip (LP, EWA); one entry per injection site.
  std::vector<InjectionPoint> witness;
  std::optional<std::uint64_t> matrix_size;  // EWA: the best k
  double flip_rate = 0.0;
  int iterations_used = 0;
  int predicted = -1;   // class under the witness, or under canonical order
  bool certified = false;  // LP: stopped by the screen
};

/// True when forward_ordered under `witness` predicts something other than
/// `label` for `row`.
bool misclassifies(const ModelSpec& model, const Graph& input, std::size_t row, int label,
                   std::span<const InjectionPoint> witness, Precision mode);

/// Gradient ascent on the cross-entropy of `row` over Gumbel-Sinkhorn soft
/// permutations at every injection site, with weights and features frozen.
/// Every harden_every steps the current samples are rounded to permutations
/// and checked with forward_ordered in verify_mode; the first verified
/// misclassification is returned. The canonical order is checked before the
/// search. For Gnn models only in-edge groups that reach `row` are searched.
AttackReport lp_attack(const ModelSpec& model, const Graph& input, std::size_t row, int label, const LpConfig& cfg,
                       std::mt19937_64& rng);
AttackReport lp_attack(const ModelSpec& model, std::span<const double> x, int label, const LpConfig& cfg,
                       std::mt19937_64& rng);

// ---------------------------------------------------------------------------

struct BlackboxResult {
  std::int64_t best_k = 0;
  double best_value = 0.0;
  std::vector<std::pair<std::int64_t, double>> log;  // evaluation order
};

/// Maximises `objective` over the integers of [k_lo, k_hi] with at most
/// `budget` evaluations: a stratified initial design, then expected
/// improvement under a Gaussian process with a Matérn 5/2 kernel. Never
/// evaluates a point twice or outside the range. Deterministic per rng state.
BlackboxResult blackbox_optimize(const std::function<double(std::int64_t)>& objective, std::int64_t k_lo,
                                 std::int64_t k_hi, int budget, std::mt19937_64& rng);

/// Same budget spent on uniform random draws (without repeats).
BlackboxResult random_search(const std::function<double(std::int64_t)>& objective, std::int64_t k_lo,
                             std::int64_t k_hi, int budget, std::mt19937_64& rng);

struct EwaConfig {
  std::uint64_t k_min = 1000;
  std::uint64_t k_max = 10000;
  int budget = 100;
  int trials_per_eval = 200;
  /// Class the attacker wants; unset means the runner-up of the exact logits.
  std::optional<int> target_class;
  double success_threshold = 0.75;
  /// Blocks per simulated reduction, capped at each site's stream length.
  std::size_t max_blocks = 64;
  /// Stall model of the co-located workload; matrix_size is set per evaluation.
  sched::WorkloadSpec workload;
  Exec exec = Exec::Serial;

  void validate() const;
};

/// Orders for one scheduled run: every injection site gets its own simulated
/// reduction (seed derived from `seed` and the site) fed onto its stream.
std::vector<InjectionPoint> scheduled_orders(const ModelSpec& model, const Graph& input,
                                             const sched::DeviceConfig& device, const sched::WorkloadSpec& load,
                                             std::size_t max_blocks, std::uint64_t seed);

/// O(k): fraction of `trials` scheduled runs under a workload of size k that
/// predict `target` for `row`. Trial t uses the same seeds for every k.
/// Optionally returns the orders of the first run that hit the target.
double ewa_objective(const ModelSpec& model, const Graph& input, std::size_t row, int target,
                     const sched::DeviceConfig& device, const EwaConfig& cfg, std::uint64_t k, Precision mode,
                     std::uint64_t seed, std::vector<InjectionPoint>* witness = nullptr);

/// Black-box search for the workload size that maximises O(k).
AttackReport ewa_attack(const ModelSpec& model, const Graph& input, std::size_t row,
                        const sched::DeviceConfig& device, const EwaConfig& cfg, Precision mode,
                        std::mt19937_64& rng);

/// {input_id, attack, epsilon, flipped, flip_rate, witness, seed} as JSON text.
std::string report_json(const AttackReport& report, const std::string& input_id, double epsilon,
                        std::uint64_t seed);

}  // namespace fpna::attack
