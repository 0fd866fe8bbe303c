#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "fpna/matrix.hpp"
#include "fpna/permutation.hpp"

namespace fpna {

// ---------------------------------------------------------------------------
// Rank correlation

/// Kendall's tau between two strict rankings of the same n items:
/// (concordant - discordant) / (n(n-1)/2). Ties cannot occur. Counts the
/// discordant pairs as inversions of q∘p⁻¹ with a merge sort, O(n log n).
/// Returns 1 for n < 2. Throws std::invalid_argument on length mismatch.
double kendall_tau(const Permutation& p, const Permutation& q);

/// Number of pairs i < j with values[i] > values[j].
std::uint64_t count_inversions(std::span<const std::size_t> values);

// ---------------------------------------------------------------------------
// Linear assignment

/// Optimal assignment for a square cost matrix: result[row] = column, with
/// minimal total cost. Shortest augmenting path with potentials, O(n³).
/// Throws std::invalid_argument for non-square or non-finite input.
Permutation hungarian(const Matrix& cost);

/// Σ_r cost(r, assignment[r]).
double assignment_cost(const Matrix& cost, const Permutation& assignment);

// ---------------------------------------------------------------------------
// Differentiable permutations

/// A doubly-stochastic matrix. Row/column sums are within `tolerance` of 1 for
/// a converged Sinkhorn output; the wrapper does not re-validate on access.
class SoftPermutation {
 public:
  SoftPermutation() = default;
  explicit SoftPermutation(Matrix matrix) : matrix_(std::move(matrix)) {}

  /// The 0/1 matrix with P(i, order[i]) = 1, so (P s)_i = s[order[i]].
  static SoftPermutation from_permutation(const Permutation& order);

  const Matrix& matrix() const noexcept { return matrix_; }
  std::size_t size() const noexcept { return matrix_.rows(); }

  /// Largest |row sum - 1| or |column sum - 1|.
  double stochastic_error() const;

 private:
  Matrix matrix_;
};

/// Row offsets a_t and column offsets b_t after each Sinkhorn iteration; the
/// iterate after the row half-step is logits/T - a_t - b_{t-1} and after the
/// column half-step logits/T - a_t - b_t. O(iters·d) memory.
struct SinkhornTape {
  double temperature = 1.0;
  std::vector<std::vector<double>> row_offsets;
  std::vector<std::vector<double>> col_offsets;
};

/// exp(logits / temperature) followed by `iters` alternating row and column
/// normalisations, carried out in the log domain. Throws
/// std::invalid_argument for temperature <= 0, iters < 1 or a non-square
/// matrix.
SoftPermutation sinkhorn(const Matrix& logits, double temperature, int iters, SinkhornTape* tape = nullptr);

/// Reverse-mode derivative of sinkhorn: given dL/dP returns dL/dlogits.
Matrix sinkhorn_backward(const Matrix& logits, const SinkhornTape& tape, const Matrix& grad_output);

/// logits + noise_scale · G with G_ij = -log(-log(u)), u ~ U(0,1) from `rng`.
Matrix gumbel_perturb(const Matrix& logits, double noise_scale, std::mt19937_64& rng);

/// The permutation maximising <P, soft>: hungarian(-soft).
Permutation harden(const SoftPermutation& soft);

}  // namespace fpna
