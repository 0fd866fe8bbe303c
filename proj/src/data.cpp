#include "fpna/data.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>

namespace fpna::data {

namespace {

std::vector<std::vector<double>> class_means(int n_classes, std::size_t dim, double scale, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<std::vector<double>> means(static_cast<std::size_t>(n_classes), std::vector<double>(dim));
  for (auto& m : means)
    for (double& v : m) v = scale * normal(rng);
  return means;
}

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    std::string field = line.substr(start, comma == std::string::npos ? std::string::npos : comma - start);
    const auto b = field.find_first_not_of(" \t\r");
    const auto e = field.find_last_not_of(" \t\r");
    out.push_back(b == std::string::npos ? std::string() : field.substr(b, e - b + 1));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}

template <typename T>
bool parse(const std::string& s, T& out) {
  const auto* end = s.data() + s.size();
  const auto [ptr, ec] = std::from_chars(s.data(), end, out);
  return ec == std::errc() && ptr == end;
}

// Non-empty lines as fields; a first line that does not parse is a header.
std::vector<std::vector<std::string>> read_rows(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::vector<std::vector<std::string>> rows;
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    auto fields = split_line(line);
    if (first) {
      first = false;
      double probe = 0.0;
      if (!parse(fields.front(), probe)) continue;
    }
    rows.push_back(std::move(fields));
  }
  return rows;
}

[[noreturn]] void bad_field(const std::filesystem::path& path, std::size_t row, const std::string& field) {
  throw std::runtime_error(path.string() + ": row " + std::to_string(row + 1) + ": cannot parse '" + field + "'");
}

}  // namespace

Graph make_blobs(std::size_t n, std::size_t dim, int n_classes, double separation, double noise,
                 std::uint64_t seed) {
  if (n_classes < 2 || dim == 0) throw std::invalid_argument("make_blobs: need two classes and dim >= 1");
  std::mt19937_64 rng(seed);
  const auto means = class_means(n_classes, dim, separation, rng);
  std::normal_distribution<double> normal(0.0, noise);
  Graph g;
  g.features = Matrix(n, dim);
  for (std::size_t r = 0; r < n; ++r) {
    const int label = static_cast<int>(r % static_cast<std::size_t>(n_classes));
    for (std::size_t c = 0; c < dim; ++c) g.features(r, c) = means[static_cast<std::size_t>(label)][c] + normal(rng);
    g.labels.push_back(label);
  }
  return g;
}

void SbmConfig::validate() const {
  if (n_nodes < 2 || n_classes < 2 || feature_dim == 0) throw std::invalid_argument("sbm: degenerate size");
  if (!(p_in >= 0.0 && p_in <= 1.0 && p_out >= 0.0 && p_out <= 1.0)) {
    throw std::invalid_argument("sbm: edge probabilities must lie in [0, 1]");
  }
  if (!(feature_noise >= 0.0)) throw std::invalid_argument("sbm: negative feature noise");
}

Graph make_sbm(const SbmConfig& config, std::uint64_t seed) {
  config.validate();
  std::mt19937_64 rng(seed);
  Graph g;
  const std::size_t n = config.n_nodes;
  std::uniform_int_distribution<int> cls(0, config.n_classes - 1);
  for (std::size_t v = 0; v < n; ++v) g.labels.push_back(cls(rng));
  const auto means = class_means(config.n_classes, config.feature_dim, config.feature_signal, rng);
  std::normal_distribution<double> normal(0.0, config.feature_noise);
  g.features = Matrix(n, config.feature_dim);
  for (std::size_t v = 0; v < n; ++v)
    for (std::size_t c = 0; c < config.feature_dim; ++c)
      g.features(v, c) = means[static_cast<std::size_t>(g.labels[v])][c] + normal(rng);

  std::uniform_real_distribution<double> coin(0.0, 1.0);
  std::vector<std::vector<std::size_t>> adj(n);
  for (std::size_t a = 0; a < n; ++a)
    for (std::size_t b = a + 1; b < n; ++b) {
      const double p = g.labels[a] == g.labels[b] ? config.p_in : config.p_out;
      if (coin(rng) < p) {
        adj[a].push_back(b);
        adj[b].push_back(a);
      }
    }
  for (std::size_t a = 0; a < n; ++a) {
    std::sort(adj[a].begin(), adj[a].end());
    for (std::size_t b : adj[a]) g.edges.push_back({a, b});
  }
  return g;
}

Split split_rows(std::size_t n, std::size_t n_train, std::size_t n_val, std::uint64_t seed) {
  if (n_train > n) throw std::invalid_argument("split_rows: more training rows than rows");
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  Split s;
  s.train.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_train));
  const std::size_t val_end = std::min(n, n_train + n_val);
  s.val.assign(idx.begin() + static_cast<std::ptrdiff_t>(n_train), idx.begin() + static_cast<std::ptrdiff_t>(val_end));
  std::sort(s.train.begin(), s.train.end());
  std::sort(s.val.begin(), s.val.end());
  return s;
}

Graph load_graph_csv(const std::filesystem::path& edges, const std::filesystem::path& features,
                     const std::filesystem::path& labels) {
  Graph g;
  const auto feature_rows = read_rows(features);
  if (feature_rows.empty()) throw std::runtime_error(features.string() + ": no rows");
  const std::size_t dim = feature_rows.front().size();
  g.features = Matrix(feature_rows.size(), dim);
  for (std::size_t r = 0; r < feature_rows.size(); ++r) {
    if (feature_rows[r].size() != dim) {
      throw std::runtime_error(features.string() + ": row " + std::to_string(r + 1) + " has a different width");
    }
    for (std::size_t c = 0; c < dim; ++c)
      if (!parse(feature_rows[r][c], g.features(r, c))) bad_field(features, r, feature_rows[r][c]);
  }
  const auto edge_rows = read_rows(edges);
  for (std::size_t r = 0; r < edge_rows.size(); ++r) {
    if (edge_rows[r].size() != 2) throw std::runtime_error(edges.string() + ": expected src,dst");
    Edge e;
    if (!parse(edge_rows[r][0], e.src)) bad_field(edges, r, edge_rows[r][0]);
    if (!parse(edge_rows[r][1], e.dst)) bad_field(edges, r, edge_rows[r][1]);
    g.edges.push_back(e);
  }
  if (!labels.empty()) {
    const auto label_rows = read_rows(labels);
    for (std::size_t r = 0; r < label_rows.size(); ++r) {
      int label = 0;
      if (!parse(label_rows[r].front(), label)) bad_field(labels, r, label_rows[r].front());
      g.labels.push_back(label);
    }
  }
  g.validate();
  return g;
}

}  // namespace fpna::data
