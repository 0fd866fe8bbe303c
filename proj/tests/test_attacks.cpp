#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <set>
#include <random>
#include <vector>

#include "fpna/attacks.hpp"
#include "fpna/data.hpp"
#include "json.hpp"

using namespace fpna;
using namespace fpna::attack;

namespace {

double linf(std::span<const double> a, std::span<const double> b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

ModelSpec two_class_linear(Matrix w, std::vector<double> b) {
  ModelSpec m;
  m.kind = ModelKind::Linear;
  m.dims = {w.cols(), w.rows()};
  m.dense.push_back({std::move(w), std::move(b)});
  m.validate();
  return m;
}

struct Trained {
  ModelSpec model;
  Graph data;
  std::vector<std::size_t> val;
};

// Overlapping blobs so that small perturbations matter.
const Trained& toy() {
  static const Trained t = [] {
    Trained out;
    out.data = data::make_blobs(400, 4, 2, 1.0, 1.0, 7);
    const auto split = data::split_rows(400, 200, 200, 3);
    out.model = train(ModelSpec::init(ModelKind::Mlp, {4, 8, 2}, 5), out.data, split.train, TrainConfig{});
    out.val = split.val;
    return out;
  }();
  return t;
}

std::vector<Target> targets_of(const Graph& g, std::span<const std::size_t> rows) {
  std::vector<Target> t;
  for (std::size_t r : rows) t.push_back({r, g.labels[r]});
  return t;
}

// One row per validation sample, attacked independently.
std::size_t flips(const Trained& t, const std::function<std::vector<double>(std::span<const double>, int)>& attack) {
  std::size_t count = 0;
  for (std::size_t r : t.val) {
    const auto x = t.data.features.row(r);
    const int label = t.data.labels[r];
    if (predict_class(forward_exact(t.model, x)) != label) continue;
    const auto adv = attack(x, label);
    count += predict_class(forward_exact(t.model, std::span<const double>(adv))) != label;
  }
  return count;
}

// Classes over every order of the first site of a Linear model.
std::map<int, std::size_t> exhaustive_classes(const ModelSpec& model, std::span<const double> x, Precision mode) {
  std::vector<std::size_t> idx(x.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::map<int, std::size_t> classes;
  do {
    const std::vector<InjectionPoint> inj{{0, Permutation(idx)}};
    ++classes[predict_class(forward_ordered(model, x, inj, mode))];
  } while (std::next_permutation(idx.begin(), idx.end()));
  return classes;
}

// A point on a random hyperplane through the origin with spread-out magnitudes.
std::pair<ModelSpec, std::vector<double>> boundary_instance(std::size_t d, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> expo(-6.0, 6.0);
  std::vector<double> n(d), x(d);
  double norm = 0.0;
  for (double& v : n) {
    v = normal(rng);
    norm += v * v;
  }
  for (double& v : n) v /= std::sqrt(norm);
  for (double& v : x) v = normal(rng) * std::exp2(expo(rng));
  double dot = 0.0;
  for (std::size_t i = 0; i < d; ++i) dot += n[i] * x[i];
  for (std::size_t i = 0; i < d; ++i) x[i] -= dot * n[i];
  return {ModelSpec::hyperplane(n, 0.0), x};
}

void check_witness(const ModelSpec& model, const Graph& g, std::size_t row, int label, const AttackReport& r,
                   Precision mode) {
  REQUIRE(r.flipped);
  const auto z = forward_ordered(model, g, r.witness, mode);
  CHECK(predict_class(z.row(row)) != label);
  CHECK(predict_class(z.row(row)) == r.predicted);
  CHECK(forward_ordered(model, g, r.witness, mode) == z);
}

// ewa instance: stream 1e8, -1 x 511, +1 x 511, -1e8 against a threshold.
// Exact score 0 (class 0); blocks committing after the last one carry +1s.
ModelSpec ewa_model(double threshold) {
  std::vector<double> w(1024, 1.0);
  w[0] = 1e8;
  w[1023] = -1e8;
  for (std::size_t i = 1; i < 512; ++i) w[i] = -1.0;
  return ModelSpec::hyperplane(w, threshold);
}

Graph ones(std::size_t d) { return Graph{Matrix(1, d, 1.0), {}, {}}; }

}  // namespace

TEST_CASE("fgsm") {
  const auto model = two_class_linear(Matrix{{1.0, -2.0}, {-0.5, 3.0}}, {0.1, -0.2});
  const std::vector<double> x{0.3, 0.4};
  AttackConfig cfg;
  cfg.epsilon = 0.0;
  CHECK(fgsm(model, x, 0, cfg) == x);

  SUBCASE("matches the analytic gradient") {
    // ∇ₓ CE = Wᵀ (softmax(z) - e_y)
    const double z0 = 1.0 * 0.3 - 2.0 * 0.4 + 0.1, z1 = -0.5 * 0.3 + 3.0 * 0.4 - 0.2;
    const double p1 = 1.0 / (1.0 + std::exp(z0 - z1)), p0 = 1.0 - p1;
    for (int label : {0, 1}) {
      const double d0 = p0 - (label == 0), d1 = p1 - (label == 1);
      const double g0 = 1.0 * d0 - 0.5 * d1, g1 = -2.0 * d0 + 3.0 * d1;
      cfg.epsilon = 0.05;
      const auto adv = fgsm(model, x, label, cfg);
      CHECK(adv[0] == doctest::Approx(0.3 + 0.05 * (g0 > 0 ? 1.0 : -1.0)).epsilon(1e-15));
      CHECK(adv[1] == doctest::Approx(0.4 + 0.05 * (g1 > 0 ? 1.0 : -1.0)).epsilon(1e-15));
    }
  }
  SUBCASE("zero gradient leaves the coordinate alone") {
    const auto flat = two_class_linear(Matrix{{1.0, 0.0}, {2.0, 0.0}}, {0.0, 0.0});
    cfg.epsilon = 0.1;
    const auto adv = fgsm(flat, x, 0, cfg);
    CHECK(adv[1] == x[1]);
    CHECK(std::abs(adv[0] - x[0]) == doctest::Approx(0.1));
  }
}

TEST_CASE("pgd") {
  const auto& t = toy();
  AttackConfig cfg;
  cfg.epsilon = 0.3;
  cfg.steps = 1;
  cfg.step_size = 0.3;
  for (std::size_t r : {t.val[0], t.val[1], t.val[2]}) {
    const auto x = t.data.features.row(r);
    CHECK(pgd(t.model, x, t.data.labels[r], cfg) == fgsm(t.model, x, t.data.labels[r], cfg));
  }
  cfg.steps = 20;
  cfg.step_size = 0.05;
  for (std::size_t r : t.val) {
    const auto x = t.data.features.row(r);
    CHECK(linf(pgd(t.model, x, t.data.labels[r], cfg), x) <= cfg.epsilon);
  }
  const auto by_fgsm = flips(t, [&](std::span<const double> x, int y) { return fgsm(t.model, x, y, cfg); });
  const auto by_pgd = flips(t, [&](std::span<const double> x, int y) { return pgd(t.model, x, y, cfg); });
  CHECK(by_fgsm > 0);
  CHECK(by_pgd >= by_fgsm);
}

TEST_CASE("random attack") {
  const std::vector<double> x{1.0, -2.0, 3.0};
  AttackConfig cfg;
  cfg.epsilon = 0.0;
  std::mt19937_64 rng(1);
  CHECK(random_attack(x, cfg, rng) == x);
  cfg.epsilon = 0.5;
  std::mt19937_64 a(9), b(9);
  const auto ra = random_attack(x, cfg, a);
  CHECK(ra == random_attack(x, cfg, b));
  CHECK(linf(ra, x) <= 0.5);

  const auto& t = toy();
  cfg.epsilon = 0.2;
  std::mt19937_64 noise(4);
  const auto by_random = flips(t, [&](std::span<const double> xs, int) { return random_attack(xs, cfg, noise); });
  const auto by_fgsm = flips(t, [&](std::span<const double> xs, int y) { return fgsm(t.model, xs, y, cfg); });
  CHECK(by_random < by_fgsm);
}

TEST_CASE("targeted margin") {
  const std::vector<double> n{0.6, -0.8};
  const auto model = ModelSpec::hyperplane(n, 0.0);
  AttackConfig cfg;
  cfg.epsilon = 1.0;
  cfg.step_size = 0.01;

  SUBCASE("on the boundary nothing gets worse") {
    const std::vector<double> x{0.8, 0.6};
    const double f0 = margin(forward_exact(model, std::span<const double>(x)));
    const auto adv = targeted_margin(model, x, cfg);
    CHECK(margin(forward_exact(model, std::span<const double>(adv))) <= f0);
  }
  SUBCASE("linear margin drops by step·‖n‖₁ per step below the safe step") {
    // F = |n·x|; a sign step moves n·x by step·‖n‖₁ = 0.014, safe while F > 0.014
    const std::vector<double> x{1.0, 0.5};  // n·x = 0.2
    double previous = margin(forward_exact(model, std::span<const double>(x)));
    for (int steps = 1; steps <= 10; ++steps) {
      cfg.steps = steps;
      const auto adv = targeted_margin(model, x, cfg);
      const double f = margin(forward_exact(model, std::span<const double>(adv)));
      CHECK(f < previous);
      CHECK(f == doctest::Approx(0.2 - 0.014 * steps).epsilon(1e-9));
      previous = f;
    }
  }
  SUBCASE("stays in the ball and returns the best iterate") {
    const auto& t = toy();
    cfg.epsilon = 0.1;
    cfg.steps = 30;
    cfg.step_size = 0.02;
    for (std::size_t r : t.val) {
      const auto x = t.data.features.row(r);
      const auto adv = targeted_margin(t.model, x, cfg);
      CHECK(linf(adv, x) <= cfg.epsilon);
      CHECK(margin(forward_exact(t.model, std::span<const double>(adv))) <=
            margin(forward_exact(t.model, x)));
    }
  }
}

TEST_CASE("attacks respect the ball on gnn features") {
  std::mt19937_64 rng(3);
  data::SbmConfig sbm;
  sbm.n_nodes = 60;
  sbm.p_in = 0.2;
  sbm.p_out = 0.02;
  sbm.feature_dim = 4;
  sbm.n_classes = 2;
  const auto g = data::make_sbm(sbm, 5);
  const auto model = ModelSpec::init(ModelKind::Gnn, {4, 6, 2}, 2);
  const std::vector<std::size_t> rows{0, 1, 2, 3};
  const auto targets = targets_of(g, rows);
  AttackConfig cfg;
  cfg.epsilon = 0.05;
  cfg.steps = 5;
  cfg.step_size = 0.02;
  CHECK(linf(fgsm(model, g, targets, cfg).values(), g.features.values()) <= 0.05);
  CHECK(linf(pgd(model, g, targets, cfg).values(), g.features.values()) <= 0.05);
  CHECK(linf(random_attack(g, cfg, rng).values(), g.features.values()) <= 0.05);
  CHECK(linf(targeted_margin(model, g, rows, cfg).values(), g.features.values()) <= 0.05);
}

TEST_CASE("attack config validation") {
  AttackConfig cfg;
  cfg.epsilon = -1.0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg.epsilon = 0.1;
  cfg.steps = 0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  LpConfig lp;
  lp.temperature_decay = 1.5;
  CHECK_THROWS_AS(lp.validate(), std::invalid_argument);
}

TEST_CASE("lp finds the cancelling order on a linear model") {
  // exact: 1e8 + 1 - 1e8 = 1 > 0.5; in fp32 the 1 is lost when added to 1e8
  const std::vector<double> w{1e8, -1e8, 1.0};
  const auto model = ModelSpec::hyperplane(w, 0.5);
  const std::vector<double> x{1.0, 1.0, 1.0};
  CHECK(predict_class(forward_ordered(model, std::span<const double>(x), {}, Precision::Binary32)) == 1);
  std::mt19937_64 rng(1);
  const auto r = lp_attack(model, x, 1, LpConfig{}, rng);
  check_witness(model, Graph{Matrix(1, 3, x), {}, {}}, 0, 1, r, Precision::Binary32);
  CHECK(r.iterations_used <= 1000);
}

TEST_CASE("lp reports the canonical order when it already misclassifies") {
  const std::vector<double> w{1e8, 1.0, -1e8};
  const auto model = ModelSpec::hyperplane(w, 0.5);
  const std::vector<double> x{1.0, 1.0, 1.0};
  std::mt19937_64 rng(1);
  const auto r = lp_attack(model, x, 1, LpConfig{}, rng);
  REQUIRE(r.flipped);
  CHECK(r.iterations_used == 0);
  CHECK(r.witness.front().perm.is_identity());
}

TEST_CASE("lp gives up on inputs far from the boundary") {
  std::mt19937_64 rng(2);
  const std::size_t d = 6;
  const auto [model, on_boundary] = boundary_instance(d, rng);
  std::vector<double> x = on_boundary;
  const auto& n = model.dense[0].weight;
  for (std::size_t i = 0; i < d; ++i) x[i] += 0.05 * n(1, i);  // margin well past any rounding
  LpConfig cfg;
  auto r = lp_attack(model, x, 1, cfg, rng);
  CHECK_FALSE(r.flipped);
  CHECK(r.certified);
  cfg.screen = false;
  cfg.opt_steps = 200;
  r = lp_attack(model, x, 1, cfg, rng);
  CHECK_FALSE(r.flipped);
  CHECK(r.iterations_used == 200);
  CHECK(exhaustive_classes(model, x, Precision::Binary32).size() == 1);
}

TEST_CASE("lp finds witnesses on crafted boundary points") {
  std::mt19937_64 rng(2024);
  int instances = 0, found = 0;
  while (instances < 12) {
    const auto [model, x] = boundary_instance(6, rng);
    const int label = predict_class(forward_exact(model, std::span<const double>(x)));
    const auto classes = exhaustive_classes(model, x, Precision::Binary32);
    if (classes.size() < 2 && classes.count(label)) continue;
    ++instances;
    const auto r = lp_attack(model, x, label, LpConfig{}, rng);
    if (!r.flipped) continue;
    ++found;
    check_witness(model, Graph{Matrix(1, 6, x), {}, {}}, 0, label, r, Precision::Binary32);
  }
  CHECK(found >= 10);
}

TEST_CASE("lp on a gnn node") {
  // node 3 receives 1e8, -1e8, 1 in canonical order: fp32 keeps the 1
  Graph g{Matrix{{1e8}, {1.0}, {-1e8}, {0.0}}, {{0, 3}, {2, 3}, {1, 3}}, {}};
  ModelSpec m = ModelSpec::init(ModelKind::Gnn, {1, 1, 2}, 0);
  m.convs[0].self_weight = Matrix{{0.0}};
  m.convs[0].neigh_weight = Matrix{{1.0}};
  m.convs[0].bias = {0.0};
  m.dense[0].weight = Matrix{{0.0}, {1.0}};
  m.dense[0].bias = {0.0, -0.5};
  CHECK(predict_class(forward_ordered(m, g, {}, Precision::Binary32).row(3)) == 1);
  std::mt19937_64 rng(6);
  const auto r = lp_attack(m, g, 3, 1, LpConfig{}, rng);
  check_witness(m, g, 3, 1, r, Precision::Binary32);
  CHECK_THROWS_AS(lp_attack(m, std::vector<double>{1.0}, 0, LpConfig{}, rng), std::invalid_argument);
}

TEST_CASE("lp witnesses on a trained gnn re-verify") {
  data::SbmConfig sbm;
  sbm.n_nodes = 80;
  sbm.p_in = 0.15;
  sbm.p_out = 0.03;
  sbm.feature_dim = 4;
  sbm.n_classes = 3;
  sbm.feature_signal = 0.5;
  const auto g = data::make_sbm(sbm, 8);
  const auto rows = data::split_rows(80, 40, 40, 1);
  const auto model = train(ModelSpec::init(ModelKind::Gnn, {4, 8, 3}, 3), g, rows.train, TrainConfig{});
  LpConfig cfg;
  cfg.verify_mode = Precision::Binary16;
  cfg.opt_steps = 200;
  std::mt19937_64 rng(12);
  int flipped = 0;
  for (std::size_t node : rows.val) {
    const auto sub = receptive_field(g, node, 1);
    const auto r = lp_attack(model, sub.graph, sub.target, g.labels[node], cfg, rng);
    if (!r.flipped) continue;
    ++flipped;
    check_witness(model, sub.graph, sub.target, g.labels[node], r, cfg.verify_mode);
  }
  MESSAGE("flipped " << flipped << " of " << rows.val.size());
}

TEST_CASE("blackbox optimizer contract") {
  std::mt19937_64 rng(1);
  SUBCASE("constant objective") {
    const auto r = blackbox_optimize([](std::int64_t) { return 3.0; }, 0, 100, 10, rng);
    CHECK(r.best_value == 3.0);
    CHECK(r.log.size() == 10);
  }
  SUBCASE("quadratic within 5% of the maximum on [0, 100] with 20 evaluations") {
    for (int trial = 0; trial < 20; ++trial) {
      const double peak = std::uniform_real_distribution<double>(10.0, 90.0)(rng);
      const auto f = [peak](std::int64_t k) { return 100.0 - (static_cast<double>(k) - peak) * (static_cast<double>(k) - peak) / 10.0; };
      const auto r = blackbox_optimize(f, 0, 100, 20, rng);
      CHECK(r.best_value >= 0.95 * 100.0);
    }
  }
  SUBCASE("bookkeeping, range and determinism") {
    std::mt19937_64 noise(5);
    std::vector<double> table(501);
    for (double& v : table) v = std::uniform_real_distribution<double>(0.0, 1.0)(noise);
    const auto f = [&](std::int64_t k) { return table.at(static_cast<std::size_t>(k - 500)); };
    std::mt19937_64 a(7), b(7);
    const auto ra = blackbox_optimize(f, 500, 1000, 40, a);
    const auto rb = blackbox_optimize(f, 500, 1000, 40, b);
    CHECK(ra.log == rb.log);
    double best = -1.0;
    std::set<std::int64_t> seen;
    for (const auto& [k, v] : ra.log) {
      CHECK(k >= 500);
      CHECK(k <= 1000);
      CHECK(seen.insert(k).second);
      best = std::max(best, v);
    }
    CHECK(ra.best_value == best);
    CHECK(f(ra.best_k) == best);
  }
  SUBCASE("budget larger than the range evaluates every point once") {
    const auto r = blackbox_optimize([](std::int64_t k) { return -std::abs(static_cast<double>(k) - 3.0); }, 0, 6, 50, rng);
    CHECK(r.log.size() == 7);
    CHECK(r.best_k == 3);
  }
  CHECK_THROWS_AS(blackbox_optimize([](std::int64_t) { return 0.0; }, 5, 4, 10, rng), std::invalid_argument);
  CHECK_THROWS_AS(blackbox_optimize([](std::int64_t) { return 0.0; }, 0, 4, 1, rng), std::invalid_argument);
}

TEST_CASE("ewa finds nothing without an order-sensitive reduction") {
  const std::vector<double> w{3.0, -1.0, 2.0, 5.0};
  const auto model = ModelSpec::hyperplane(w, 0.5);
  const std::vector<double> x{1.0, 2.0, -3.0, 4.0};
  EwaConfig cfg;
  cfg.budget = 8;
  cfg.trials_per_eval = 20;
  std::mt19937_64 rng(1);
  const auto r = ewa_attack(model, Graph{Matrix(1, 4, x), {}, {}}, 0, sched::DeviceConfig{}, cfg,
                            Precision::Binary64, rng);
  CHECK(r.flip_rate == 0.0);
  CHECK_FALSE(r.flipped);
  CHECK(r.witness.empty());
}

TEST_CASE("ewa objective rises with the workload and the attack finds the peak") {
  const auto model = ewa_model(40.5);
  const Graph x = ones(1024);
  CHECK(predict_class(forward_exact(model, x).row(0)) == 0);
  EwaConfig cfg;
  cfg.trials_per_eval = 100;
  cfg.max_blocks = 1024;
  cfg.target_class = 1;
  const sched::DeviceConfig device;
  const std::uint64_t seed = 99;
  const double idle = ewa_objective(model, x, 0, 1, device, cfg, 0, Precision::Binary32, seed);
  double grid_best = 0.0;
  for (std::uint64_t k = 1000; k <= 10000; k += 250)
    grid_best = std::max(grid_best, ewa_objective(model, x, 0, 1, device, cfg, k, Precision::Binary32, seed));
  CHECK(grid_best > idle);

  cfg.budget = 30;
  std::mt19937_64 rng(3);
  const auto r = ewa_attack(model, x, 0, device, cfg, Precision::Binary32, rng);
  REQUIRE(r.matrix_size.has_value());
  CHECK(*r.matrix_size >= cfg.k_min);
  CHECK(*r.matrix_size <= cfg.k_max);
  CHECK(r.flip_rate >= 0.9 * grid_best);
  CHECK(r.flipped == (r.flip_rate >= cfg.success_threshold));
  // the witness is an LP witness: a stream order that misclassifies
  REQUIRE_FALSE(r.witness.empty());
  CHECK(misclassifies(model, x, 0, 0, r.witness, Precision::Binary32));
}

TEST_CASE("scheduled orders are seeded") {
  const auto model = ModelSpec::init(ModelKind::Mlp, {40, 30, 2}, 1);
  const Graph x = ones(40);
  const sched::DeviceConfig device;
  const auto load = sched::WorkloadSpec::dgemm(5000);
  const auto a = scheduled_orders(model, x, device, load, 16, 5);
  const auto b = scheduled_orders(model, x, device, load, 16, 5);
  REQUIRE(a.size() == 2);
  CHECK(a[0].perm == b[0].perm);
  CHECK(a[1].perm == b[1].perm);
  CHECK(a[0].perm.size() == 40);
  CHECK(a[1].perm.size() == 30);
  CHECK_FALSE(a[0].perm == scheduled_orders(model, x, device, load, 16, 6)[0].perm);
}

TEST_CASE("report json") {
  AttackReport r;
  r.attack = "lp";
  r.flipped = true;
  r.flip_rate = 1.0;
  r.witness = {{0, Permutation({2, 0, 1})}};
  const auto j = nlohmann::json::parse(report_json(r, "row-3", 0.1, 42));
  CHECK(j["input_id"] == "row-3");
  CHECK(j["attack"] == "lp");
  CHECK(j["epsilon"] == 0.1);
  CHECK(j["flipped"] == true);
  CHECK(j["flip_rate"] == 1.0);
  CHECK(j["seed"] == 42);
  CHECK(j["witness"]["orders"][0]["perm"] == std::vector<int>{2, 0, 1});
}
