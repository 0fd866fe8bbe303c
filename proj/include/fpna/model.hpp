#pragma once

// Small classifiers with two forward paths: an exact binary64 surrogate that
// is differentiable in inputs, weights and soft permutations, and an ordered
// evaluator in which every reduction runs in a chosen precision under an
// injected accumulation order.

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <vector>

#include "fpna/matrix.hpp"
#include "fpna/permutation.hpp"
#include "fpna/precision.hpp"

namespace fpna {

enum class ModelKind { Linear, Mlp, Gnn };
enum class Aggregation { Add, Mean };

struct Edge {
  std::size_t src = 0;
  std::size_t dst = 0;
  friend bool operator==(const Edge&, const Edge&) = default;
};

/// Rows of `features` are samples (Linear, Mlp) or nodes (Gnn). Edge order is
/// the canonical accumulation order of the scatter reduction.
struct Graph {
  Matrix features;
  std::vector<Edge> edges;
  std::vector<int> labels;  // optional; one per row when present

  std::size_t n_nodes() const noexcept { return features.rows(); }
  void validate() const;
};

struct DenseLayer {
  Matrix weight;  // out × in
  std::vector<double> bias;
};

/// h' = ReLU(W_self h + W_neigh agg(h) + b)
struct ConvLayer {
  Matrix self_weight;   // out × in
  Matrix neigh_weight;  // out × in
  std::vector<double> bias;
};

struct ModelSpec {
  ModelKind kind = ModelKind::Linear;
  Aggregation aggregation = Aggregation::Add;
  /// Input width, hidden widths, class count.
  std::vector<std::size_t> dims;
  /// Linear: one layer. Mlp: one per consecutive pair of dims, ReLU between.
  /// Gnn: the classification head.
  std::vector<DenseLayer> dense;
  std::vector<ConvLayer> convs;  // Gnn only

  std::size_t input_dim() const { return dims.front(); }
  std::size_t n_classes() const { return dims.back(); }
  /// One per dense layer (Linear, Mlp) or per conv layer (Gnn).
  std::size_t injection_sites() const;
  /// Length of the reduction stream at a site: the layer's fan-in, or the
  /// edge count for Gnn sites.
  std::size_t site_length(std::size_t site, const Graph& input) const;
  void validate() const;

  /// Glorot-uniform weights and zero biases; Gnn dims are
  /// {features, conv widths..., classes}.
  static ModelSpec init(ModelKind kind, std::vector<std::size_t> dims, std::uint64_t seed,
                        Aggregation aggregation = Aggregation::Add);
  /// Two-class hyperplane: logits (0, n·x - b), so class 1 means n·x > b.
  static ModelSpec hyperplane(std::span<const double> normal, double bias);
};

struct InjectionPoint {
  std::size_t layer = 0;
  Permutation perm;
};

/// Soft permutations for one site, keyed by group. Dense sites use group 0
/// (a fan-in × fan-in matrix). Gnn sites use one group per destination node,
/// a deg × deg matrix over that node's in-edges in canonical order. Missing
/// groups are the identity.
struct SoftSite {
  std::map<std::size_t, Matrix> blocks;
};
using SoftPerms = std::vector<SoftSite>;

struct Target {
  std::size_t row = 0;
  int label = 0;
};

/// Binary64 forward pass in canonical order; rows × classes. With `soft`, a
/// reduction Σ_j w_j s_j at an injected site becomes (P w)·(P s).
Matrix forward_exact(const ModelSpec& model, const Graph& input, const SoftPerms* soft = nullptr);

/// Every reduction runs in `mode` via ordered folds: weights, inputs and
/// products are rounded, and each add rounds. Sites without an injection use
/// the canonical order. Throws OverflowError when a value leaves the finite
/// range of `mode`.
Matrix forward_ordered(const ModelSpec& model, const Graph& input, std::span<const InjectionPoint> injections,
                       Precision mode);

/// Per-sample convenience for Linear and Mlp models.
std::vector<double> forward_exact(const ModelSpec& model, std::span<const double> x, const SoftPerms* soft = nullptr);
std::vector<double> forward_ordered(const ModelSpec& model, std::span<const double> x,
                                    std::span<const InjectionPoint> injections, Precision mode);

/// max_i f_i - max_{i != argmax} f_i with the argmax taken at the lowest index.
double margin(std::span<const double> logits);
/// argmax with ties to the lowest index.
int predict_class(std::span<const double> logits);

struct ModelGrads {
  Matrix input;                 // same shape as features
  std::vector<DenseLayer> dense;
  std::vector<ConvLayer> convs;
  SoftPerms soft;               // same blocks as the soft argument
};

/// Reverse-mode gradients of Σ_rc dlogits(r, c) · logits(r, c) through
/// forward_exact.
ModelGrads backprop(const ModelSpec& model, const Graph& input, const SoftPerms* soft, const Matrix& dlogits);

struct LossGrads {
  double loss = 0.0;
  ModelGrads grads;
};

/// Mean cross-entropy of softmax(logits) over `targets`, with gradients.
LossGrads loss_and_grads(const ModelSpec& model, const Graph& input, std::span<const Target> targets,
                         const SoftPerms* soft = nullptr);
double cross_entropy(std::span<const double> logits, int label);

enum class Optimizer { Adam, GradientDescent };

struct TrainConfig {
  int epochs = 200;
  double learning_rate = 0.01;
  Optimizer optimizer = Optimizer::Adam;
  double weight_decay = 0.0;
};

/// Full-batch training on the labelled rows. Deterministic. Throws
/// std::runtime_error if the loss becomes non-finite.
ModelSpec train(ModelSpec model, const Graph& data, std::span<const std::size_t> rows, const TrainConfig& config);

double accuracy(const Matrix& logits, const Graph& data, std::span<const std::size_t> rows);

/// Upper bound on |forward_ordered - exact| for every logit, valid for every
/// injected order, from running-error propagation with γ_n = n u / (1 - n u).
/// Also covers the binary64 evaluation of the exact path. Entries are
/// infinite where the bound does not apply (n u >= 1).
Matrix logit_error_bound(const ModelSpec& model, const Graph& input, Precision mode);

struct LogitInterval {
  Matrix lo, hi;
};

/// Per-logit enclosure of forward_ordered over every injected order: an
/// interval pass that repeats the ordered evaluation with monotone rounded
/// operations, widening only the order-dependent reductions by γ_{n-1} Σ|t|.
/// Usually much tighter than logit_error_bound.
LogitInterval logit_interval(const ModelSpec& model, const Graph& input, Precision mode);

/// The class whose lower bound beats every other upper bound, if any.
std::optional<int> interval_class(std::span<const double> lo, std::span<const double> hi);

/// True when no accumulation order in `mode` can change the predicted class
/// of `row`.
bool certified_stable(std::span<const double> exact_logits, std::span<const double> bound);

/// The part of a graph that determines one node's output after `hops`
/// aggregation layers. Node and edge maps point back into the full graph;
/// local edges keep their canonical relative order.
struct Subgraph {
  Graph graph;
  std::vector<std::size_t> nodes;  // local -> global
  std::vector<std::size_t> edges;  // local -> global
  std::size_t target = 0;          // local id of the node
};
Subgraph receptive_field(const Graph& graph, std::size_t node, std::size_t hops);

/// In-edges of every node in canonical order.
std::vector<std::vector<std::size_t>> in_edges(const Graph& graph);

/// Builds a global edge order from per-destination orders: the in-edges of
/// node v keep their canonical slots but are visited in `orders[v]` (indices
/// into v's canonical in-edge list). Nodes without an entry keep their order.
Permutation edge_order_from_groups(const Graph& graph, const std::map<std::size_t, Permutation>& orders);

/// Relative order of each destination's in-edges under a global edge order.
std::map<std::size_t, Permutation> group_orders(const Graph& graph, const Permutation& edge_order);

}  // namespace fpna
