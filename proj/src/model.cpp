#include "fpna/model.hpp"

#include <algorithm>
#include <optional>
#include <tuple>
#include <cmath>
#include <limits>
#include <random>
#include <stdexcept>
#include <string>

namespace fpna {

namespace {

[[noreturn]] void shape_error(const std::string& what) { throw std::invalid_argument("model: " + what); }

double relu(double x) { return x > 0.0 ? x : 0.0; }

// ---------------------------------------------------------------------------
// Small dense helpers

// out(r, o) = Σ_i in(r, i) W(o, i) + b(o)
Matrix affine(const Matrix& in, const Matrix& w, std::span<const double> b) {
  Matrix out(in.rows(), w.rows());
  for (std::size_t r = 0; r < in.rows(); ++r) {
    const auto x = in.row(r);
    for (std::size_t o = 0; o < w.rows(); ++o) {
      const auto wr = w.row(o);
      double s = 0.0;
      for (std::size_t i = 0; i < x.size(); ++i) s += wr[i] * x[i];
      out(r, o) = b.empty() ? s : s + b[o];
    }
  }
  return out;
}

// in · Q with Q square
Matrix right_multiply(const Matrix& in, const Matrix& q) {
  Matrix out(in.rows(), q.cols());
  for (std::size_t r = 0; r < in.rows(); ++r)
    for (std::size_t k = 0; k < q.rows(); ++k) {
      const double v = in(r, k);
      if (v == 0.0) continue;
      for (std::size_t c = 0; c < q.cols(); ++c) out(r, c) += v * q(k, c);
    }
  return out;
}

// PᵀP
Matrix gram(const Matrix& p) {
  const std::size_t n = p.cols();
  Matrix q(n, n);
  for (std::size_t k = 0; k < p.rows(); ++k) {
    const auto pk = p.row(k);
    for (std::size_t i = 0; i < n; ++i) {
      if (pk[i] == 0.0) continue;
      for (std::size_t j = 0; j < n; ++j) q(i, j) += pk[i] * pk[j];
    }
  }
  return q;
}

// dL/dP for Q = PᵀP given dL/dQ = G: P (G + Gᵀ).
Matrix gram_backward(const Matrix& p, const Matrix& g) {
  const std::size_t n = p.rows();
  Matrix sym(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) sym(i, j) = g(i, j) + g(j, i);
  Matrix out(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < n; ++k) {
      const double v = p(i, k);
      if (v == 0.0) continue;
      for (std::size_t j = 0; j < n; ++j) out(i, j) += v * sym(k, j);
    }
  return out;
}

const Matrix* soft_block(const SoftPerms* soft, std::size_t site, std::size_t group) {
  if (!soft || site >= soft->size()) return nullptr;
  const auto& blocks = (*soft)[site].blocks;
  const auto it = blocks.find(group);
  return it == blocks.end() ? nullptr : &it->second;
}

void check_soft(const ModelSpec& model, const Graph& input, const SoftPerms* soft,
                const std::vector<std::vector<std::size_t>>& incoming) {
  if (!soft) return;
  if (soft->size() > model.injection_sites()) shape_error("more soft sites than injection points");
  for (std::size_t s = 0; s < soft->size(); ++s) {
    for (const auto& [group, m] : (*soft)[s].blocks) {
      std::size_t want = 0;
      if (model.kind == ModelKind::Gnn) {
        if (group >= input.n_nodes()) shape_error("soft block for a node outside the graph");
        want = incoming[group].size();
      } else {
        if (group != 0) shape_error("dense soft sites use group 0 only");
        want = model.site_length(s, input);
      }
      if (m.rows() != want || m.cols() != want) shape_error("soft block shape does not match its reduction");
    }
  }
}

// ---------------------------------------------------------------------------
// Exact forward with cached activations

struct DenseCache {
  Matrix input;   // h
  Matrix mixed;   // h Q (or h)
  Matrix q;       // PᵀP when injected
  bool injected = false;
  Matrix pre;     // before ReLU
};

struct ConvCache {
  Matrix input;  // h
  Matrix agg;
  std::vector<std::vector<double>> coeff;  // per node, per in-edge weight c = Q a
  std::vector<Matrix> q;                   // per node; empty if not injected
  Matrix pre;
};

struct Tape {
  std::vector<DenseCache> dense;
  std::vector<ConvCache> convs;
  std::vector<std::vector<std::size_t>> incoming;
  Matrix logits;
};

std::vector<double> base_weights(Aggregation agg, std::size_t degree) {
  return std::vector<double>(degree, agg == Aggregation::Mean ? 1.0 / static_cast<double>(degree) : 1.0);
}

Tape run_exact(const ModelSpec& model, const Graph& input, const SoftPerms* soft) {
  model.validate();
  input.validate();
  if (input.features.cols() != model.input_dim()) shape_error("feature width does not match the model input");
  Tape tape;
  if (model.kind == ModelKind::Gnn) tape.incoming = in_edges(input);
  check_soft(model, input, soft, tape.incoming);

  Matrix h = input.features;
  if (model.kind == ModelKind::Gnn) {
    const std::size_t n = input.n_nodes();
    for (std::size_t l = 0; l < model.convs.size(); ++l) {
      const auto& layer = model.convs[l];
      ConvCache c;
      c.input = h;
      c.agg = Matrix(n, h.cols());
      c.coeff.resize(n);
      c.q.resize(n);
      for (std::size_t v = 0; v < n; ++v) {
        const auto& inc = tape.incoming[v];
        if (inc.empty()) continue;
        auto a = base_weights(model.aggregation, inc.size());
        auto out = c.agg.row(v);
        if (const Matrix* p = soft_block(soft, l, v)) {
          c.q[v] = gram(*p);
          std::vector<double> qa(inc.size(), 0.0);
          for (std::size_t j = 0; j < inc.size(); ++j)
            for (std::size_t k = 0; k < inc.size(); ++k) qa[k] += a[j] * c.q[v](j, k);
          a = std::move(qa);
          for (std::size_t k = 0; k < inc.size(); ++k) {
            const auto src = h.row(input.edges[inc[k]].src);
            for (std::size_t f = 0; f < out.size(); ++f) out[f] += a[k] * src[f];
          }
        } else {
          // sum first, then divide, as the ordered path does
          for (std::size_t k = 0; k < inc.size(); ++k) {
            const auto src = h.row(input.edges[inc[k]].src);
            for (std::size_t f = 0; f < out.size(); ++f) out[f] += src[f];
          }
          if (model.aggregation == Aggregation::Mean) {
            const auto deg = static_cast<double>(inc.size());
            for (double& x : out) x /= deg;
          }
        }
        c.coeff[v] = std::move(a);
      }
      c.pre = Matrix(n, layer.self_weight.rows());
      for (std::size_t v = 0; v < n; ++v) {
        const auto hv = h.row(v);
        const auto av = c.agg.row(v);
        for (std::size_t o = 0; o < c.pre.cols(); ++o) {
          const auto ws = layer.self_weight.row(o);
          const auto wn = layer.neigh_weight.row(o);
          double s = 0.0;
          for (std::size_t i = 0; i < hv.size(); ++i) s += ws[i] * hv[i];
          for (std::size_t i = 0; i < av.size(); ++i) s += wn[i] * av[i];
          c.pre(v, o) = s + layer.bias[o];
        }
      }
      h = c.pre;
      for (double& v : h.values()) v = relu(v);
      tape.convs.push_back(std::move(c));
    }
  }

  for (std::size_t l = 0; l < model.dense.size(); ++l) {
    const auto& layer = model.dense[l];
    DenseCache c;
    c.input = h;
    const Matrix* p = model.kind == ModelKind::Gnn ? nullptr : soft_block(soft, l, 0);
    if (p) {
      c.q = gram(*p);
      c.injected = true;
      c.mixed = right_multiply(h, c.q);
    } else {
      c.mixed = h;
    }
    c.pre = affine(c.mixed, layer.weight, layer.bias);
    h = c.pre;
    if (l + 1 < model.dense.size())
      for (double& v : h.values()) v = relu(v);
    tape.dense.push_back(std::move(c));
  }
  tape.logits = std::move(h);
  return tape;
}


// ---------------------------------------------------------------------------
// Ordered evaluation

class Rounder {
 public:
  explicit Rounder(Precision mode) : mode_(mode) {}
  double operator()(double x) const noexcept { return detail::round_fast(x, mode_); }
  Precision mode() const noexcept { return mode_; }

 private:
  Precision mode_;
};

Matrix rounded_copy(const Matrix& m, const Rounder& r, const char* what) {
  Matrix out = m;
  for (double& v : out.values()) {
    if (!std::isfinite(v)) throw std::invalid_argument(std::string("forward_ordered: non-finite ") + what);
    v = r(v);
    if (!std::isfinite(v)) throw OverflowError(std::string("forward_ordered: ") + what + " overflows " +
                                               std::string(to_string(r.mode())));
  }
  return out;
}

std::vector<double> rounded_copy(std::span<const double> b, const Rounder& r, const char* what) {
  Matrix m(1, b.size(), std::vector<double>(b.begin(), b.end()));
  auto out = rounded_copy(m, r, what);
  return {out.values().begin(), out.values().end()};
}

void check_layer(const Matrix& m, Precision mode, std::size_t layer) {
  for (double v : m.values()) {
    if (!std::isfinite(v)) {
      throw OverflowError("forward_ordered: layer " + std::to_string(layer) + " overflows " +
                          std::string(to_string(mode)));
    }
  }
}

std::vector<const Permutation*> resolve_injections(const ModelSpec& model, const Graph& input,
                                                   std::span<const InjectionPoint> injections) {
  std::vector<const Permutation*> perms(model.injection_sites(), nullptr);
  for (const auto& inj : injections) {
    if (inj.layer >= perms.size()) shape_error("injection at layer " + std::to_string(inj.layer) + " out of range");
    if (perms[inj.layer]) shape_error("two injections at layer " + std::to_string(inj.layer));
    if (inj.perm.size() != model.site_length(inj.layer, input)) {
      shape_error("injection at layer " + std::to_string(inj.layer) + " has length " +
                  std::to_string(inj.perm.size()) + ", reduction has " +
                  std::to_string(model.site_length(inj.layer, input)));
    }
    perms[inj.layer] = &inj.perm;
  }
  return perms;
}

// ---------------------------------------------------------------------------
// Error bounds

double gamma(std::size_t n, double u) {
  const double nu = static_cast<double>(n) * u;
  return nu < 1.0 ? nu / (1.0 - nu) : std::numeric_limits<double>::infinity();
}

// Running-error bound on every logit for an evaluation that rounds with unit
// roundoff u, relative to the exact values recorded in `tape`.
Matrix propagate_bound(const ModelSpec& model, const Graph& input, const Tape& tape, double u, bool round_inputs) {
  Matrix eps(input.features.rows(), input.features.cols());
  if (round_inputs)
    for (std::size_t i = 0; i < eps.size(); ++i) eps.values()[i] = u * std::abs(input.features.values()[i]);

  if (model.kind == ModelKind::Gnn) {
    for (std::size_t l = 0; l < model.convs.size(); ++l) {
      const auto& layer = model.convs[l];
      const auto& c = tape.convs[l];
      const std::size_t n = c.input.rows(), width = c.input.cols();
      Matrix agg_err(n, width);
      for (std::size_t v = 0; v < n; ++v) {
        const auto& inc = tape.incoming[v];
        if (inc.empty()) continue;
        const double g = gamma(inc.size(), u);
        for (std::size_t f = 0; f < width; ++f) {
          double carried = 0.0, magnitude = 0.0;
          for (std::size_t e : inc) {
            const std::size_t src = input.edges[e].src;
            carried += eps(src, f);
            magnitude += std::abs(c.input(src, f)) + eps(src, f);
          }
          double err = carried + g * magnitude;
          if (model.aggregation == Aggregation::Mean) {
            const auto deg = static_cast<double>(inc.size());
            err = err / deg + u * (std::abs(c.agg(v, f)) + err / deg);
          }
          agg_err(v, f) = err;
        }
      }
      Matrix next(n, layer.self_weight.rows());
      const double g = gamma(2 * width + 4, u);
      for (std::size_t v = 0; v < n; ++v)
        for (std::size_t o = 0; o < next.cols(); ++o) {
          double carried = 0.0, magnitude = std::abs(layer.bias[o]);
          for (std::size_t i = 0; i < width; ++i) {
            const double ws = std::abs(layer.self_weight(o, i)), wn = std::abs(layer.neigh_weight(o, i));
            carried += ws * eps(v, i) + wn * agg_err(v, i);
            magnitude += ws * (std::abs(c.input(v, i)) + eps(v, i)) + wn * (std::abs(c.agg(v, i)) + agg_err(v, i));
          }
          next(v, o) = carried + g * magnitude;
        }
      eps = std::move(next);
    }
  }

  for (std::size_t l = 0; l < model.dense.size(); ++l) {
    const auto& layer = model.dense[l];
    const auto& h = tape.dense[l].input;
    Matrix next(h.rows(), layer.weight.rows());
    const double g = gamma(h.cols() + 4, u);
    for (std::size_t r = 0; r < h.rows(); ++r)
      for (std::size_t o = 0; o < next.cols(); ++o) {
        double carried = 0.0, magnitude = std::abs(layer.bias[o]);
        for (std::size_t i = 0; i < h.cols(); ++i) {
          const double w = std::abs(layer.weight(o, i));
          carried += w * eps(r, i);
          magnitude += w * (std::abs(h(r, i)) + eps(r, i));
        }
        next(r, o) = carried + g * magnitude;
      }
    eps = std::move(next);
  }
  return eps;
}

// ---------------------------------------------------------------------------
// Parameter views for training

std::vector<std::span<double>> parameter_views(std::vector<DenseLayer>& dense, std::vector<ConvLayer>& convs) {
  std::vector<std::span<double>> out;
  for (auto& c : convs) {
    out.push_back(c.self_weight.values());
    out.push_back(c.neigh_weight.values());
    out.push_back(c.bias);
  }
  for (auto& d : dense) {
    out.push_back(d.weight.values());
    out.push_back(d.bias);
  }
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------

void Graph::validate() const {
  const std::size_t n = n_nodes();
  for (const auto& e : edges) {
    if (e.src >= n || e.dst >= n) {
      throw std::invalid_argument("graph: edge (" + std::to_string(e.src) + ", " + std::to_string(e.dst) +
                                  ") outside " + std::to_string(n) + " nodes");
    }
  }
  if (!labels.empty() && labels.size() != n) throw std::invalid_argument("graph: label count != node count");
}

std::size_t ModelSpec::injection_sites() const { return kind == ModelKind::Gnn ? convs.size() : dense.size(); }

std::size_t ModelSpec::site_length(std::size_t site, const Graph& input) const {
  if (site >= injection_sites()) shape_error("site " + std::to_string(site) + " out of range");
  return kind == ModelKind::Gnn ? input.edges.size() : dense[site].weight.cols();
}

void ModelSpec::validate() const {
  if (dims.size() < 2) shape_error("need at least input and class dims");
  if (dims.back() < 2) shape_error("need at least two classes");
  const std::size_t expected_dense = kind == ModelKind::Gnn ? 1 : dims.size() - 1;
  if (kind == ModelKind::Linear && dims.size() != 2) shape_error("linear model has exactly two dims");
  if (kind == ModelKind::Gnn && dims.size() < 3) shape_error("gnn needs at least one conv layer");
  if (dense.size() != expected_dense) shape_error("wrong number of dense layers");
  const std::size_t n_convs = kind == ModelKind::Gnn ? dims.size() - 2 : 0;
  if (convs.size() != n_convs) shape_error("wrong number of conv layers");
  for (std::size_t l = 0; l < convs.size(); ++l) {
    const auto& c = convs[l];
    const std::size_t in = dims[l], out = dims[l + 1];
    if (c.self_weight.rows() != out || c.self_weight.cols() != in || c.neigh_weight.rows() != out ||
        c.neigh_weight.cols() != in || c.bias.size() != out) {
      shape_error("conv layer " + std::to_string(l) + " shape");
    }
  }
  const std::size_t offset = kind == ModelKind::Gnn ? dims.size() - 2 : 0;
  for (std::size_t l = 0; l < dense.size(); ++l) {
    const std::size_t in = dims[offset + l], out = dims[offset + l + 1];
    if (dense[l].weight.rows() != out || dense[l].weight.cols() != in || dense[l].bias.size() != out) {
      shape_error("dense layer " + std::to_string(l) + " shape");
    }
  }
}

ModelSpec ModelSpec::init(ModelKind kind, std::vector<std::size_t> dims, std::uint64_t seed,
                          Aggregation aggregation) {
  ModelSpec m;
  m.kind = kind;
  m.aggregation = aggregation;
  m.dims = std::move(dims);
  if (m.dims.size() < 2) shape_error("need at least input and class dims");
  std::mt19937_64 rng(seed);
  auto glorot = [&](std::size_t out, std::size_t in) {
    const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
    std::uniform_real_distribution<double> u(-limit, limit);
    Matrix w(out, in);
    for (double& v : w.values()) v = u(rng);
    return w;
  };
  std::size_t l = 0;
  if (kind == ModelKind::Gnn) {
    for (; l + 2 < m.dims.size(); ++l) {
      ConvLayer c;
      c.self_weight = glorot(m.dims[l + 1], m.dims[l]);
      c.neigh_weight = glorot(m.dims[l + 1], m.dims[l]);
      c.bias.assign(m.dims[l + 1], 0.0);
      m.convs.push_back(std::move(c));
    }
  }
  for (; l + 1 < m.dims.size(); ++l) {
    DenseLayer d;
    d.weight = glorot(m.dims[l + 1], m.dims[l]);
    d.bias.assign(m.dims[l + 1], 0.0);
    m.dense.push_back(std::move(d));
  }
  m.validate();
  return m;
}

ModelSpec ModelSpec::hyperplane(std::span<const double> normal, double bias) {
  ModelSpec m;
  m.kind = ModelKind::Linear;
  m.dims = {normal.size(), 2};
  DenseLayer d;
  d.weight = Matrix(2, normal.size());
  std::copy(normal.begin(), normal.end(), d.weight.row(1).begin());
  d.bias = {0.0, -bias};
  m.dense.push_back(std::move(d));
  m.validate();
  return m;
}

Matrix forward_exact(const ModelSpec& model, const Graph& input, const SoftPerms* soft) {
  return run_exact(model, input, soft).logits;
}

Matrix forward_ordered(const ModelSpec& model, const Graph& input, std::span<const InjectionPoint> injections,
                       Precision mode) {
  model.validate();
  input.validate();
  if (input.features.cols() != model.input_dim()) shape_error("feature width does not match the model input");
  const auto perms = resolve_injections(model, input, injections);
  const Rounder R(mode);
  Matrix h = rounded_copy(input.features, R, "input");

  if (model.kind == ModelKind::Gnn) {
    const std::size_t n = input.n_nodes(), n_edges = input.edges.size();
    std::vector<std::size_t> degree(n, 0);
    for (const auto& e : input.edges) ++degree[e.dst];
    for (std::size_t l = 0; l < model.convs.size(); ++l) {
      const auto& layer = model.convs[l];
      const Matrix ws = rounded_copy(layer.self_weight, R, "weight");
      const Matrix wn = rounded_copy(layer.neigh_weight, R, "weight");
      const auto bias = rounded_copy(layer.bias, R, "bias");
      const std::size_t width = h.cols();
      Matrix agg(n, width);
      const Permutation* perm = perms[l];
      for (std::size_t i = 0; i < n_edges; ++i) {
        const Edge& e = input.edges[perm ? (*perm)[i] : i];
        const auto src = h.row(e.src);
        auto acc = agg.row(e.dst);
        for (std::size_t f = 0; f < width; ++f) acc[f] = R(acc[f] + src[f]);
      }
      if (model.aggregation == Aggregation::Mean) {
        for (std::size_t v = 0; v < n; ++v) {
          if (degree[v] == 0) continue;
          const auto deg = static_cast<double>(degree[v]);
          for (double& x : agg.row(v)) x = R(x / deg);
        }
      }
      check_layer(agg, mode, l);
      Matrix next(n, layer.self_weight.rows());
      for (std::size_t v = 0; v < n; ++v) {
        const auto hv = h.row(v);
        const auto av = agg.row(v);
        for (std::size_t o = 0; o < next.cols(); ++o) {
          const auto wso = ws.row(o);
          const auto wno = wn.row(o);
          double acc = 0.0;
          for (std::size_t i = 0; i < width; ++i) acc = R(acc + R(wso[i] * hv[i]));
          for (std::size_t i = 0; i < width; ++i) acc = R(acc + R(wno[i] * av[i]));
          next(v, o) = relu(R(acc + bias[o]));
        }
      }
      check_layer(next, mode, l);
      h = std::move(next);
    }
  }

  for (std::size_t l = 0; l < model.dense.size(); ++l) {
    const auto& layer = model.dense[l];
    const Matrix w = rounded_copy(layer.weight, R, "weight");
    const auto bias = rounded_copy(layer.bias, R, "bias");
    const Permutation* perm = model.kind == ModelKind::Gnn ? nullptr : perms[l];
    const std::size_t fan_in = w.cols();
    Matrix next(h.rows(), w.rows());
    for (std::size_t r = 0; r < h.rows(); ++r) {
      const auto x = h.row(r);
      for (std::size_t o = 0; o < w.rows(); ++o) {
        const auto wo = w.row(o);
        double acc = 0.0;
        if (perm) {
          for (std::size_t i = 0; i < fan_in; ++i) {
            const std::size_t j = (*perm)[i];
            acc = R(acc + R(wo[j] * x[j]));
          }
        } else {
          for (std::size_t i = 0; i < fan_in; ++i) acc = R(acc + R(wo[i] * x[i]));
        }
        acc = R(acc + bias[o]);
        next(r, o) = l + 1 < model.dense.size() ? relu(acc) : acc;
      }
    }
    check_layer(next, mode, model.convs.size() + l);
    h = std::move(next);
  }
  return h;
}

std::vector<double> forward_exact(const ModelSpec& model, std::span<const double> x, const SoftPerms* soft) {
  if (model.kind == ModelKind::Gnn) shape_error("per-sample forward is for Linear and Mlp models");
  Graph g{Matrix(1, x.size(), std::vector<double>(x.begin(), x.end())), {}, {}};
  const Matrix out = forward_exact(model, g, soft);
  return {out.values().begin(), out.values().end()};
}

std::vector<double> forward_ordered(const ModelSpec& model, std::span<const double> x,
                                    std::span<const InjectionPoint> injections, Precision mode) {
  if (model.kind == ModelKind::Gnn) shape_error("per-sample forward is for Linear and Mlp models");
  Graph g{Matrix(1, x.size(), std::vector<double>(x.begin(), x.end())), {}, {}};
  const Matrix out = forward_ordered(model, g, injections, mode);
  return {out.values().begin(), out.values().end()};
}

int predict_class(std::span<const double> logits) {
  if (logits.empty()) throw std::invalid_argument("predict_class: empty logits");
  std::size_t best = 0;
  for (std::size_t i = 1; i < logits.size(); ++i)
    if (logits[i] > logits[best]) best = i;
  return static_cast<int>(best);
}

double margin(std::span<const double> logits) {
  if (logits.size() < 2) throw std::invalid_argument("margin: need at least two logits");
  const auto top = static_cast<std::size_t>(predict_class(logits));
  double second = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < logits.size(); ++i)
    if (i != top) second = std::max(second, logits[i]);
  return logits[top] - second;
}

ModelGrads backprop(const ModelSpec& model, const Graph& input, const SoftPerms* soft, const Matrix& dlogits) {
  const Tape tape = run_exact(model, input, soft);
  if (dlogits.rows() != tape.logits.rows() || dlogits.cols() != tape.logits.cols()) {
    shape_error("dlogits shape does not match the logits");
  }
  ModelGrads grads;
  grads.dense.resize(model.dense.size());
  grads.convs.resize(model.convs.size());
  if (soft) grads.soft.resize(soft->size());

  Matrix g = dlogits;
  for (std::size_t l = model.dense.size(); l-- > 0;) {
    const auto& layer = model.dense[l];
    const auto& c = tape.dense[l];
    auto& out = grads.dense[l];
    out.weight = Matrix(layer.weight.rows(), layer.weight.cols());
    out.bias.assign(layer.bias.size(), 0.0);
    Matrix dmixed(c.mixed.rows(), c.mixed.cols());
    for (std::size_t r = 0; r < g.rows(); ++r) {
      const auto x = c.mixed.row(r);
      auto dx = dmixed.row(r);
      for (std::size_t o = 0; o < g.cols(); ++o) {
        const double go = g(r, o);
        if (go == 0.0) continue;
        out.bias[o] += go;
        auto dw = out.weight.row(o);
        const auto w = layer.weight.row(o);
        for (std::size_t i = 0; i < x.size(); ++i) {
          dw[i] += go * x[i];
          dx[i] += go * w[i];
        }
      }
    }
    Matrix dh;
    if (c.injected) {
      dh = right_multiply(dmixed, c.q);  // Q is symmetric
      const std::size_t n = c.q.rows();
      Matrix dq(n, n);
      for (std::size_t r = 0; r < c.input.rows(); ++r)
        for (std::size_t k = 0; k < n; ++k) {
          const double hk = c.input(r, k);
          if (hk == 0.0) continue;
          for (std::size_t j = 0; j < n; ++j) dq(k, j) += hk * dmixed(r, j);
        }
      grads.soft[l].blocks[0] = gram_backward((*soft)[l].blocks.at(0), dq);
    } else {
      dh = std::move(dmixed);
    }
    if (l > 0) {
      const auto& prev = tape.dense[l - 1].pre;
      for (std::size_t i = 0; i < dh.size(); ++i)
        if (!(prev.values()[i] > 0.0)) dh.values()[i] = 0.0;
    }
    g = std::move(dh);
  }

  for (std::size_t l = model.convs.size(); l-- > 0;) {
    const auto& layer = model.convs[l];
    const auto& c = tape.convs[l];
    auto& out = grads.convs[l];
    for (std::size_t i = 0; i < g.size(); ++i)
      if (!(c.pre.values()[i] > 0.0)) g.values()[i] = 0.0;
    out.self_weight = Matrix(layer.self_weight.rows(), layer.self_weight.cols());
    out.neigh_weight = Matrix(layer.neigh_weight.rows(), layer.neigh_weight.cols());
    out.bias.assign(layer.bias.size(), 0.0);
    const std::size_t n = c.input.rows(), width = c.input.cols();
    Matrix dh(n, width), dagg(n, width);
    for (std::size_t v = 0; v < n; ++v) {
      const auto hv = c.input.row(v);
      const auto av = c.agg.row(v);
      auto dhv = dh.row(v);
      auto dav = dagg.row(v);
      for (std::size_t o = 0; o < g.cols(); ++o) {
        const double go = g(v, o);
        if (go == 0.0) continue;
        out.bias[o] += go;
        auto dws = out.self_weight.row(o);
        auto dwn = out.neigh_weight.row(o);
        const auto ws = layer.self_weight.row(o);
        const auto wn = layer.neigh_weight.row(o);
        for (std::size_t i = 0; i < width; ++i) {
          dws[i] += go * hv[i];
          dwn[i] += go * av[i];
          dhv[i] += go * ws[i];
          dav[i] += go * wn[i];
        }
      }
    }
    for (std::size_t v = 0; v < n; ++v) {
      const auto& inc = tape.incoming[v];
      if (inc.empty()) continue;
      const auto dav = dagg.row(v);
      const auto& coeff = c.coeff[v];
      for (std::size_t k = 0; k < inc.size(); ++k) {
        auto ds = dh.row(input.edges[inc[k]].src);
        for (std::size_t f = 0; f < width; ++f) ds[f] += coeff[k] * dav[f];
      }
      if (!c.q[v].empty()) {
        const std::size_t m = inc.size();
        const auto a = base_weights(model.aggregation, m);
        std::vector<double> dc(m, 0.0);
        for (std::size_t k = 0; k < m; ++k) {
          const auto src = c.input.row(input.edges[inc[k]].src);
          for (std::size_t f = 0; f < width; ++f) dc[k] += src[f] * dav[f];
        }
        Matrix dq(m, m);
        for (std::size_t j = 0; j < m; ++j)
          for (std::size_t k = 0; k < m; ++k) dq(j, k) = a[j] * dc[k];
        grads.soft[l].blocks[v] = gram_backward((*soft)[l].blocks.at(v), dq);
      }
    }
    g = std::move(dh);
  }
  grads.input = std::move(g);
  return grads;
}

double cross_entropy(std::span<const double> logits, int label) {
  if (label < 0 || static_cast<std::size_t>(label) >= logits.size()) {
    throw std::invalid_argument("cross_entropy: label out of range");
  }
  const double hi = *std::max_element(logits.begin(), logits.end());
  double s = 0.0;
  for (double z : logits) s += std::exp(z - hi);
  return hi + std::log(s) - logits[static_cast<std::size_t>(label)];
}

LossGrads loss_and_grads(const ModelSpec& model, const Graph& input, std::span<const Target> targets,
                         const SoftPerms* soft) {
  if (targets.empty()) throw std::invalid_argument("loss_and_grads: no targets");
  const Matrix logits = forward_exact(model, input, soft);
  Matrix dlogits(logits.rows(), logits.cols());
  const double scale = 1.0 / static_cast<double>(targets.size());
  LossGrads out;
  for (const auto& t : targets) {
    if (t.row >= logits.rows()) throw std::invalid_argument("loss_and_grads: target row out of range");
    const auto z = logits.row(t.row);
    out.loss += scale * cross_entropy(z, t.label);
    const double hi = *std::max_element(z.begin(), z.end());
    double s = 0.0;
    for (double v : z) s += std::exp(v - hi);
    for (std::size_t c = 0; c < z.size(); ++c) {
      const double p = std::exp(z[c] - hi) / s;
      dlogits(t.row, c) += scale * (p - (static_cast<int>(c) == t.label ? 1.0 : 0.0));
    }
  }
  out.grads = backprop(model, input, soft, dlogits);
  return out;
}

ModelSpec train(ModelSpec model, const Graph& data, std::span<const std::size_t> rows, const TrainConfig& config) {
  if (data.labels.size() != data.n_nodes()) throw std::invalid_argument("train: data has no labels");
  if (rows.empty()) throw std::invalid_argument("train: no training rows");
  std::vector<Target> targets;
  targets.reserve(rows.size());
  for (std::size_t r : rows) targets.push_back({r, data.labels.at(r)});

  auto params = parameter_views(model.dense, model.convs);
  std::vector<std::vector<double>> m1, m2;
  for (const auto& p : params) {
    m1.emplace_back(p.size(), 0.0);
    m2.emplace_back(p.size(), 0.0);
  }
  constexpr double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    auto lg = loss_and_grads(model, data, targets);
    if (!std::isfinite(lg.loss)) throw std::runtime_error("train: loss diverged at epoch " + std::to_string(epoch));
    auto grads = parameter_views(lg.grads.dense, lg.grads.convs);
    const double c1 = 1.0 - std::pow(beta1, epoch), c2 = 1.0 - std::pow(beta2, epoch);
    for (std::size_t k = 0; k < params.size(); ++k) {
      // every third view in a conv triple and every second in a dense pair is a bias
      const bool is_bias = k < 3 * model.convs.size() ? k % 3 == 2 : (k - 3 * model.convs.size()) % 2 == 1;
      for (std::size_t i = 0; i < params[k].size(); ++i) {
        double gi = grads[k][i];
        if (!is_bias) gi += config.weight_decay * params[k][i];
        if (config.optimizer == Optimizer::GradientDescent) {
          params[k][i] -= config.learning_rate * gi;
        } else {
          m1[k][i] = beta1 * m1[k][i] + (1.0 - beta1) * gi;
          m2[k][i] = beta2 * m2[k][i] + (1.0 - beta2) * gi * gi;
          params[k][i] -= config.learning_rate * (m1[k][i] / c1) / (std::sqrt(m2[k][i] / c2) + adam_eps);
        }
      }
    }
  }
  return model;
}

double accuracy(const Matrix& logits, const Graph& data, std::span<const std::size_t> rows) {
  if (rows.empty()) return 0.0;
  std::size_t correct = 0;
  for (std::size_t r : rows) correct += predict_class(logits.row(r)) == data.labels.at(r);
  return static_cast<double>(correct) / static_cast<double>(rows.size());
}

Matrix logit_error_bound(const ModelSpec& model, const Graph& input, Precision mode) {
  const Tape tape = run_exact(model, input, nullptr);
  Matrix bound = propagate_bound(model, input, tape, traits(mode).unit_roundoff, true);
  const Matrix own = propagate_bound(model, input, tape, traits(Precision::Binary64).unit_roundoff, false);
  // the magnitudes above come from the binary64 pass rather than exact values;
  // the relative slack covers that second-order difference
  for (std::size_t i = 0; i < bound.size(); ++i) bound.values()[i] = (bound.values()[i] + own.values()[i]) * (1.0 + 1e-6);
  return bound;
}

namespace {

// Enclosure of a fold of n terms t_i in [lo_i, hi_i] in any order, starting
// from zero: within γ_{n-1} Σ max|t_i| of the exact sum. The sums here are
// binary64, so their own rounding is added as slack.
std::pair<double, double> any_order_fold(double sum_lo, double sum_hi, double magnitude, std::size_t n, double u) {
  const double spread = (n > 1 ? gamma(n - 1, u) : 0.0) * magnitude;
  const double slack = 2.0 * gamma(n + 1, 0x1p-53) * magnitude;
  return {sum_lo - spread - slack, sum_hi + spread + slack};
}

struct Box {
  Matrix lo, hi;
};

// w times an interval, rounded the way forward_ordered rounds a product.
std::pair<double, double> scaled(double w, double lo, double hi, const Rounder& R) {
  return w >= 0.0 ? std::pair{R(w * lo), R(w * hi)} : std::pair{R(w * hi), R(w * lo)};
}

}  // namespace

LogitInterval logit_interval(const ModelSpec& model, const Graph& input, Precision mode) {
  model.validate();
  input.validate();
  if (input.features.cols() != model.input_dim()) shape_error("feature width does not match the model input");
  const Rounder R(mode);
  const double u = traits(mode).unit_roundoff;
  Box h{rounded_copy(input.features, R, "input"), {}};
  h.hi = h.lo;

  if (model.kind == ModelKind::Gnn) {
    const auto incoming = in_edges(input);
    const std::size_t n = input.n_nodes();
    for (const auto& layer : model.convs) {
      const Matrix ws = rounded_copy(layer.self_weight, R, "weight");
      const Matrix wn = rounded_copy(layer.neigh_weight, R, "weight");
      const auto bias = rounded_copy(layer.bias, R, "bias");
      const std::size_t width = h.lo.cols();
      Box agg{Matrix(n, width), Matrix(n, width)};
      for (std::size_t v = 0; v < n; ++v) {
        const auto& inc = incoming[v];
        if (inc.empty()) continue;
        for (std::size_t f = 0; f < width; ++f) {
          double sl = 0.0, sh = 0.0, mag = 0.0;
          for (std::size_t e : inc) {
            const std::size_t src = input.edges[e].src;
            sl += h.lo(src, f);
            sh += h.hi(src, f);
            mag += std::max(std::abs(h.lo(src, f)), std::abs(h.hi(src, f)));
          }
          auto [lo, hi] = any_order_fold(sl, sh, mag, inc.size(), u);
          if (model.aggregation == Aggregation::Mean) {
            const auto deg = static_cast<double>(inc.size());
            lo = R(lo / deg);
            hi = R(hi / deg);
          }
          agg.lo(v, f) = lo;
          agg.hi(v, f) = hi;
        }
      }
      Box next{Matrix(n, ws.rows()), Matrix(n, ws.rows())};
      for (std::size_t v = 0; v < n; ++v)
        for (std::size_t o = 0; o < ws.rows(); ++o) {
          double lo = 0.0, hi = 0.0;
          for (std::size_t i = 0; i < width; ++i) {
            const auto [pl, ph] = scaled(ws(o, i), h.lo(v, i), h.hi(v, i), R);
            lo = R(lo + pl);
            hi = R(hi + ph);
          }
          for (std::size_t i = 0; i < width; ++i) {
            const auto [pl, ph] = scaled(wn(o, i), agg.lo(v, i), agg.hi(v, i), R);
            lo = R(lo + pl);
            hi = R(hi + ph);
          }
          next.lo(v, o) = relu(R(lo + bias[o]));
          next.hi(v, o) = relu(R(hi + bias[o]));
        }
      h = std::move(next);
    }
  }

  for (std::size_t l = 0; l < model.dense.size(); ++l) {
    const auto& layer = model.dense[l];
    const Matrix w = rounded_copy(layer.weight, R, "weight");
    const auto bias = rounded_copy(layer.bias, R, "bias");
    const bool any_order = model.kind != ModelKind::Gnn;
    const bool last = l + 1 == model.dense.size();
    Box next{Matrix(h.lo.rows(), w.rows()), Matrix(h.lo.rows(), w.rows())};
    for (std::size_t r = 0; r < h.lo.rows(); ++r)
      for (std::size_t o = 0; o < w.rows(); ++o) {
        double lo = 0.0, hi = 0.0;
        if (any_order) {
          double mag = 0.0;
          for (std::size_t i = 0; i < w.cols(); ++i) {
            const auto [pl, ph] = scaled(w(o, i), h.lo(r, i), h.hi(r, i), R);
            lo += pl;
            hi += ph;
            mag += std::max(std::abs(pl), std::abs(ph));
          }
          std::tie(lo, hi) = any_order_fold(lo, hi, mag, w.cols(), u);
        } else {
          for (std::size_t i = 0; i < w.cols(); ++i) {
            const auto [pl, ph] = scaled(w(o, i), h.lo(r, i), h.hi(r, i), R);
            lo = R(lo + pl);
            hi = R(hi + ph);
          }
        }
        lo = R(lo + bias[o]);
        hi = R(hi + bias[o]);
        next.lo(r, o) = last ? lo : relu(lo);
        next.hi(r, o) = last ? hi : relu(hi);
      }
    h = std::move(next);
  }
  return {std::move(h.lo), std::move(h.hi)};
}

std::optional<int> interval_class(std::span<const double> lo, std::span<const double> hi) {
  for (std::size_t c = 0; c < lo.size(); ++c) {
    bool wins = true;
    for (std::size_t j = 0; j < lo.size() && wins; ++j)
      if (j != c && !(lo[c] > hi[j])) wins = false;
    if (wins) return static_cast<int>(c);
  }
  return std::nullopt;
}

bool certified_stable(std::span<const double> exact_logits, std::span<const double> bound) {
  const auto top = static_cast<std::size_t>(predict_class(exact_logits));
  for (std::size_t j = 0; j < exact_logits.size(); ++j) {
    if (j == top) continue;
    // a lower-index rival wins ties, so it needs strict separation too
    if (!(exact_logits[top] - exact_logits[j] > bound[top] + bound[j])) return false;
  }
  return true;
}

std::vector<std::vector<std::size_t>> in_edges(const Graph& graph) {
  std::vector<std::vector<std::size_t>> incoming(graph.n_nodes());
  for (std::size_t e = 0; e < graph.edges.size(); ++e) incoming.at(graph.edges[e].dst).push_back(e);
  return incoming;
}

Subgraph receptive_field(const Graph& graph, std::size_t node, std::size_t hops) {
  graph.validate();
  if (node >= graph.n_nodes()) throw std::invalid_argument("receptive_field: node out of range");
  const auto incoming = in_edges(graph);
  // frontier[k]: nodes within k hops upstream of `node`
  std::vector<char> within(graph.n_nodes(), 0), inner(graph.n_nodes(), 0);
  within[node] = 1;
  std::vector<std::size_t> frontier{node};
  for (std::size_t k = 0; k < hops; ++k) {
    if (k + 1 == hops) inner = within;  // nodes whose in-edges are kept
    std::vector<std::size_t> next;
    for (std::size_t v : frontier)
      for (std::size_t e : incoming[v]) {
        const std::size_t s = graph.edges[e].src;
        if (!within[s]) {
          within[s] = 1;
          next.push_back(s);
        }
      }
    frontier = std::move(next);
  }

  Subgraph sub;
  std::vector<std::size_t> local(graph.n_nodes(), 0);
  for (std::size_t v = 0; v < graph.n_nodes(); ++v) {
    if (!within[v]) continue;
    local[v] = sub.nodes.size();
    sub.nodes.push_back(v);
  }
  sub.target = local[node];
  sub.graph.features = Matrix(sub.nodes.size(), graph.features.cols());
  for (std::size_t i = 0; i < sub.nodes.size(); ++i) {
    const auto src = graph.features.row(sub.nodes[i]);
    std::copy(src.begin(), src.end(), sub.graph.features.row(i).begin());
    if (!graph.labels.empty()) sub.graph.labels.push_back(graph.labels[sub.nodes[i]]);
  }
  if (hops > 0) {
    for (std::size_t e = 0; e < graph.edges.size(); ++e) {
      if (!inner[graph.edges[e].dst]) continue;
      sub.edges.push_back(e);
      sub.graph.edges.push_back({local[graph.edges[e].src], local[graph.edges[e].dst]});
    }
  }
  return sub;
}

Permutation edge_order_from_groups(const Graph& graph, const std::map<std::size_t, Permutation>& orders) {
  const auto incoming = in_edges(graph);
  std::vector<std::size_t> order(graph.edges.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  for (const auto& [v, local] : orders) {
    if (v >= incoming.size() || local.size() != incoming[v].size()) {
      throw std::invalid_argument("edge_order_from_groups: order for node " + std::to_string(v) +
                                  " does not match its in-degree");
    }
    const auto& slots = incoming[v];
    for (std::size_t k = 0; k < slots.size(); ++k) order[slots[k]] = slots[local[k]];
  }
  return Permutation(std::move(order));
}

std::map<std::size_t, Permutation> group_orders(const Graph& graph, const Permutation& edge_order) {
  if (edge_order.size() != graph.edges.size()) throw std::invalid_argument("group_orders: length mismatch");
  const auto incoming = in_edges(graph);
  std::vector<std::size_t> slot_of(graph.edges.size());
  for (const auto& inc : incoming)
    for (std::size_t k = 0; k < inc.size(); ++k) slot_of[inc[k]] = k;
  std::map<std::size_t, std::vector<std::size_t>> seq;
  for (std::size_t i = 0; i < edge_order.size(); ++i) {
    const std::size_t e = edge_order[i];
    seq[graph.edges[e].dst].push_back(slot_of[e]);
  }
  std::map<std::size_t, Permutation> out;
  for (auto& [v, s] : seq) out.emplace(v, Permutation(std::move(s)));
  return out;
}

}  // namespace fpna
