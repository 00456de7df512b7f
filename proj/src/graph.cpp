#include "promos/graph.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <string_view>

#include <Eigen/Dense>
#include <Eigen/SVD>

#include "promos/error.hpp"
#include "promos/rng.hpp"

namespace promos {

namespace fs = std::filesystem;

// ---------------------------------------------------------------- Graph

Graph Graph::from_edges(std::string name, std::size_t num_nodes,
                        std::span<const std::pair<std::uint32_t, std::uint32_t>> edges,
                        Tensor features, std::optional<std::vector<int>> labels) {
  if (features.rows() != num_nodes) {
    throw ValidationError("node/feature count mismatch: " + std::to_string(num_nodes) +
                          " nodes but " + std::to_string(features.rows()) + " feature rows");
  }
  if (labels && labels->size() != num_nodes) {
    throw ValidationError("node/label count mismatch: " + std::to_string(num_nodes) + " nodes but " +
                          std::to_string(labels->size()) + " labels");
  }
  std::vector<std::vector<std::uint32_t>> adj(num_nodes);
  for (auto [u, v] : edges) {
    if (u >= num_nodes || v >= num_nodes) {
      throw ValidationError("dangling node id " + std::to_string(std::max(u, v)) + " (n=" +
                            std::to_string(num_nodes) + ")");
    }
    if (u == v) continue;
    adj[u].push_back(v);
    adj[v].push_back(u);
  }
  Graph g;
  g.name_ = std::move(name);
  g.offsets_.assign(num_nodes + 1, 0);
  for (std::size_t i = 0; i < num_nodes; ++i) {
    auto& row = adj[i];
    std::sort(row.begin(), row.end());
    row.erase(std::unique(row.begin(), row.end()), row.end());
    g.offsets_[i + 1] = g.offsets_[i] + row.size();
  }
  g.targets_.reserve(g.offsets_.back());
  for (auto& row : adj) g.targets_.insert(g.targets_.end(), row.begin(), row.end());
  g.features_ = std::move(features);
  g.labels_ = std::move(labels);
  return g;
}

bool Graph::has_edge(std::size_t u, std::size_t v) const {
  auto nb = neighbors(u);
  return std::binary_search(nb.begin(), nb.end(), static_cast<std::uint32_t>(v));
}

std::size_t Graph::anomaly_count() const {
  if (!labels_) return 0;
  return static_cast<std::size_t>(std::count(labels_->begin(), labels_->end(), 1));
}

std::vector<std::pair<std::uint32_t, std::uint32_t>> Graph::edge_list() const {
  std::vector<std::pair<std::uint32_t, std::uint32_t>> out;
  out.reserve(num_edges());
  for (std::size_t u = 0; u < num_nodes(); ++u)
    for (auto v : neighbors(u))
      if (u < v) out.emplace_back(static_cast<std::uint32_t>(u), v);
  return out;
}

Graph Graph::with_features(Tensor features) const {
  if (features.rows() != num_nodes()) throw ValidationError("with_features: row count mismatch");
  Graph g = *this;
  g.features_ = std::move(features);
  return g;
}

Graph Graph::with_labels(std::vector<int> labels) const {
  if (labels.size() != num_nodes()) throw ValidationError("with_labels: size mismatch");
  Graph g = *this;
  g.labels_ = std::move(labels);
  return g;
}

Graph Graph::with_name(std::string name) const {
  Graph g = *this;
  g.name_ = std::move(name);
  return g;
}

// ---------------------------------------------------------------- I/O

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

[[noreturn]] void parse_fail(const fs::path& file, std::size_t line, const std::string& what) {
  throw ValidationError(file.filename().string() + ":" + std::to_string(line) + ": " + what);
}

template <class T>
T parse_number(std::string_view tok, const fs::path& file, std::size_t line) {
  tok = trim(tok);
  T value{};
  auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), value);
  if (ec != std::errc() || ptr != tok.data() + tok.size() || tok.empty()) {
    parse_fail(file, line, "malformed value '" + std::string(tok) + "'");
  }
  return value;
}

std::ifstream open_or_throw(const fs::path& file) {
  std::ifstream in(file);
  if (!in) throw ValidationError("cannot open " + file.string());
  return in;
}

void append_double(std::string& out, double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  out.append(buf, ptr);
}

}  // namespace

LoadResult load_graph(const fs::path& dir) {
  const fs::path edges_file = dir / "edges.tsv";
  const fs::path features_file = dir / "features.csv";
  const fs::path labels_file = dir / "labels.csv";
  if (!fs::exists(edges_file)) throw ValidationError("missing " + edges_file.string());
  if (!fs::exists(features_file)) throw ValidationError("missing " + features_file.string());

  LoadResult result;
  std::optional<std::size_t> declared_nodes;
  std::vector<std::pair<std::uint32_t, std::uint32_t>> edges;
  {
    auto in = open_or_throw(edges_file);
    std::string raw;
    std::size_t line = 0;
    while (std::getline(in, raw)) {
      ++line;
      std::string_view s = trim(raw);
      if (s.empty()) continue;
      if (s.front() == '#') {
        s.remove_prefix(1);
        s = trim(s);
        if (s.starts_with("nodes:")) {
          declared_nodes = parse_number<std::size_t>(s.substr(6), edges_file, line);
        }
        continue;
      }
      const auto tab = s.find('\t');
      if (tab == std::string_view::npos) parse_fail(edges_file, line, "expected 'u<TAB>v'");
      const auto u = parse_number<std::uint32_t>(s.substr(0, tab), edges_file, line);
      const auto v = parse_number<std::uint32_t>(s.substr(tab + 1), edges_file, line);
      edges.emplace_back(u, v);
    }
  }

  std::vector<double> values;
  std::size_t rows = 0, cols = 0;
  {
    auto in = open_or_throw(features_file);
    std::string raw;
    std::size_t line = 0;
    while (std::getline(in, raw)) {
      ++line;
      std::string_view s = trim(raw);
      if (s.empty()) continue;
      std::size_t count = 0;
      while (true) {
        const auto comma = s.find(',');
        values.push_back(parse_number<double>(s.substr(0, comma), features_file, line));
        ++count;
        if (comma == std::string_view::npos) break;
        s.remove_prefix(comma + 1);
      }
      if (rows == 0) cols = count;
      if (count != cols) {
        parse_fail(features_file, line, "expected " + std::to_string(cols) + " columns, got " +
                                            std::to_string(count));
      }
      ++rows;
    }
  }
  if (rows == 0) throw ValidationError(features_file.string() + ": no feature rows");

  std::uint32_t max_id = 0;
  for (auto [u, v] : edges) max_id = std::max({max_id, u, v});
  const std::size_t n = declared_nodes.value_or(edges.empty() ? rows : std::size_t{max_id} + 1);
  if (n != rows || (!edges.empty() && max_id >= rows)) {
    throw ValidationError("node/feature count mismatch: edges imply " + std::to_string(n) +
                          " nodes, features.csv has " + std::to_string(rows) + " rows");
  }

  std::optional<std::vector<int>> labels;
  if (fs::exists(labels_file)) {
    auto in = open_or_throw(labels_file);
    std::vector<int> ys;
    std::string raw;
    std::size_t line = 0;
    while (std::getline(in, raw)) {
      ++line;
      std::string_view s = trim(raw);
      if (s.empty()) continue;
      const int y = parse_number<int>(s, labels_file, line);
      if (y != 0 && y != 1) parse_fail(labels_file, line, "label must be 0 or 1");
      ys.push_back(y);
    }
    if (ys.size() != rows) {
      throw ValidationError("node/label count mismatch: " + std::to_string(ys.size()) +
                            " labels for " + std::to_string(rows) + " nodes");
    }
    labels = std::move(ys);
  }

  // Symmetry audit of the raw listing before the CSR builder mirrors edges.
  {
    std::vector<std::pair<std::uint32_t, std::uint32_t>> sorted = edges;
    std::sort(sorted.begin(), sorted.end());
    std::size_t one_way = 0, self_loops = 0;
    for (auto [u, v] : edges) {
      if (u == v) {
        ++self_loops;
        continue;
      }
      if (!std::binary_search(sorted.begin(), sorted.end(), std::make_pair(v, u))) ++one_way;
    }
    result.symmetrized = one_way > 0;
    if (one_way > 0) {
      result.warnings.push_back(std::to_string(one_way) +
                                " edge(s) listed in one direction only; symmetrized");
    }
    if (self_loops > 0) result.warnings.push_back(std::to_string(self_loops) + " self-loop(s) dropped");
  }

  result.graph = Graph::from_edges(dir.filename().string(), n, edges,
                                   Tensor({rows, cols}, std::move(values)), std::move(labels));
  return result;
}

void write_graph(const Graph& g, const fs::path& dir) {
  fs::create_directories(dir);
  {
    std::string out = "# nodes: " + std::to_string(g.num_nodes()) + "\n";
    // Both directions, so the file reads back without a symmetrization warning.
    for (std::size_t u = 0; u < g.num_nodes(); ++u)
      for (auto v : g.neighbors(u)) {
        out += std::to_string(u);
        out += '\t';
        out += std::to_string(v);
        out += '\n';
      }
    std::ofstream(dir / "edges.tsv", std::ios::binary) << out;
  }
  {
    std::string out;
    const Tensor& x = g.features();
    for (std::size_t r = 0; r < x.rows(); ++r) {
      for (std::size_t c = 0; c < x.cols(); ++c) {
        if (c) out += ',';
        append_double(out, x(r, c));
      }
      out += '\n';
    }
    std::ofstream(dir / "features.csv", std::ios::binary) << out;
  }
  if (g.labels()) {
    std::string out;
    for (int y : *g.labels()) {
      out += static_cast<char>('0' + y);
      out += '\n';
    }
    std::ofstream(dir / "labels.csv", std::ios::binary) << out;
  }
}

// ---------------------------------------------------------------- Unification

UnifiedFeatures project_features(const Tensor& x, std::size_t target_dim, std::uint64_t seed) {
  if (target_dim < 1) throw ValidationError("unify_features: target dim must be >= 1");
  const std::size_t n = x.rows(), d0 = x.cols();
  UnifiedFeatures out;
  out.features = Tensor::matrix(n, target_dim);
  if (d0 < target_dim) {
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t c = 0; c < d0; ++c) out.features(r, c) = x(r, c);
    return out;
  }

  using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  Eigen::Map<const Mat> xm(x.data().data(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d0));
  const Eigen::RowVectorXd mu = xm.colwise().mean();
  const Mat centered = xm.rowwise() - mu;

  Eigen::MatrixXd basis;
  Eigen::BDCSVD<Eigen::MatrixXd> svd(Eigen::MatrixXd(centered), Eigen::ComputeFullV);
  const bool ok = svd.info() == Eigen::Success && svd.matrixV().allFinite();
  if (ok) {
    basis = svd.matrixV().leftCols(static_cast<Eigen::Index>(target_dim));
  } else {
    Rng rng = Rng::stream(seed, "unify-fallback");
    Eigen::MatrixXd gauss(static_cast<Eigen::Index>(d0), static_cast<Eigen::Index>(target_dim));
    for (Eigen::Index c = 0; c < gauss.cols(); ++c)
      for (Eigen::Index r = 0; r < gauss.rows(); ++r) gauss(r, c) = rng.normal();
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(gauss);
    basis = qr.householderQ() * Eigen::MatrixXd::Identity(gauss.rows(), gauss.cols());
    out.fallback = true;
  }
  // Sign convention: largest-magnitude entry of each basis vector is positive.
  for (Eigen::Index c = 0; c < basis.cols(); ++c) {
    Eigen::Index arg = 0;
    for (Eigen::Index r = 1; r < basis.rows(); ++r)
      if (std::abs(basis(r, c)) > std::abs(basis(arg, c))) arg = r;
    if (basis(arg, c) < 0) basis.col(c) *= -1.0;
  }
  const Mat proj = centered * basis;
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < target_dim; ++c)
      out.features(r, c) = proj(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
  return out;
}

UnifiedFeatures unify_features(const Tensor& x, std::size_t target_dim, std::uint64_t seed) {
  UnifiedFeatures out = project_features(x, target_dim, seed);
  for (std::size_t r = 0; r < out.features.rows(); ++r) {
    auto row = out.features.row_span(r);
    double s = 0.0;
    for (double v : row) s += v * v;
    if (s == 0.0) continue;
    const double inv = 1.0 / std::sqrt(s);
    for (double& v : row) v *= inv;
  }
  return out;
}

Graph unify_graph(const Graph& g, std::size_t target_dim, std::uint64_t seed) {
  return g.with_features(unify_features(g.features(), target_dim, seed).features);
}

// ---------------------------------------------------------------- Enhancement

Tensor neighbor_mean(const Graph& g) {
  const std::size_t n = g.num_nodes(), d = g.feature_dim();
  const Tensor& x = g.features();
  Tensor out = Tensor::matrix(n, d);
  for (std::size_t i = 0; i < n; ++i) {
    auto nb = g.neighbors(i);
    if (nb.empty()) continue;
    auto dst = out.row_span(i);
    for (auto j : nb) {
      auto src = x.row_span(j);
      for (std::size_t c = 0; c < d; ++c) dst[c] += src[c];
    }
    const double inv = 1.0 / static_cast<double>(nb.size());
    for (double& v : dst) v *= inv;
  }
  return out;
}

EnhancedFeatures enhance(const Graph& g) {
  const Tensor& x = g.features();
  const Tensor mean = neighbor_mean(g);
  EnhancedFeatures out{x, x};
  for (std::size_t i = 0; i < x.size(); ++i) {
    out.residual[i] = x[i] - mean[i];
    out.enhanced[i] = x[i] + out.residual[i];
  }
  return out;
}

// ---------------------------------------------------------------- Injection

void InjectionSpec::validate(std::size_t num_nodes) const {
  std::vector<std::string> problems;
  if (clique_size == 0) problems.push_back("clique_size must be positive");
  if (clique_count == 0) problems.push_back("clique_count must be positive");
  if (candidates == 0) problems.push_back("candidates must be positive");
  if (clique_size * clique_count > num_nodes) {
    problems.push_back("clique_size*clique_count exceeds node count " + std::to_string(num_nodes));
  }
  if (num_nodes > 0 && candidates > num_nodes - 1) {
    problems.push_back("candidates must be <= n-1 = " + std::to_string(num_nodes - 1));
  }
  if (!problems.empty()) {
    std::string msg = "invalid injection spec:";
    for (const auto& p : problems) msg += " " + p + ";";
    throw ValidationError(msg);
  }
}

namespace {

std::vector<int> labels_or_zeros(const Graph& g) {
  return g.labels() ? *g.labels() : std::vector<int>(g.num_nodes(), 0);
}

std::vector<std::size_t> unlabeled_nodes(const std::vector<int>& labels) {
  std::vector<std::size_t> pool;
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (labels[i] == 0) pool.push_back(i);
  return pool;
}

}  // namespace

InjectionResult inject_structural(const Graph& g, const InjectionSpec& spec) {
  if (spec.clique_size == 0 || spec.clique_count == 0) {
    throw ValidationError("inject_structural: clique size and count must be positive");
  }
  const std::size_t total = spec.clique_size * spec.clique_count;
  if (total > g.num_nodes()) throw ValidationError("inject_structural: p*q exceeds node count");
  std::vector<int> labels = labels_or_zeros(g);
  const auto pool = unlabeled_nodes(labels);
  if (pool.size() < total) {
    throw ValidationError("insufficient unlabeled nodes: need " + std::to_string(total) + ", have " +
                          std::to_string(pool.size()));
  }
  Rng rng = Rng::stream(spec.seed, "injection-structural");
  const auto picks = rng.sample_without_replacement(pool.size(), total);

  InjectionResult result;
  auto edges = g.edge_list();
  for (std::size_t c = 0; c < spec.clique_count; ++c) {
    std::vector<std::size_t> members;
    for (std::size_t j = 0; j < spec.clique_size; ++j) members.push_back(pool[picks[c * spec.clique_size + j]]);
    for (std::size_t a = 0; a < members.size(); ++a) {
      labels[members[a]] = 1;
      for (std::size_t b = a + 1; b < members.size(); ++b) {
        edges.emplace_back(static_cast<std::uint32_t>(members[a]), static_cast<std::uint32_t>(members[b]));
      }
    }
    result.cliques.push_back(std::move(members));
  }
  result.graph = Graph::from_edges(g.name(), g.num_nodes(), edges, g.features(), std::move(labels));
  return result;
}

InjectionResult inject_feature(const Graph& g, const InjectionSpec& spec) {
  const std::size_t n = g.num_nodes();
  if (n < 2 || spec.candidates == 0) throw ValidationError("inject_feature: candidate pool empty");
  if (spec.candidates > n - 1) throw ValidationError("inject_feature: candidates must be <= n-1");
  if (spec.feature_count > n) throw ValidationError("inject_feature: feature count exceeds node count");
  std::vector<int> labels = labels_or_zeros(g);
  const auto pool = unlabeled_nodes(labels);
  if (pool.size() < spec.feature_count) {
    throw ValidationError("insufficient unlabeled nodes for feature anomalies: need " +
                          std::to_string(spec.feature_count) + ", have " + std::to_string(pool.size()));
  }
  Rng rng = Rng::stream(spec.seed, "injection-feature");
  const auto picks = rng.sample_without_replacement(pool.size(), spec.feature_count);

  const Tensor& original = g.features();
  Tensor features = original;
  const std::size_t d = original.cols();
  InjectionResult result;
  for (std::size_t t = 0; t < picks.size(); ++t) {
    const std::size_t target = pool[picks[t]];
    Rng cand_rng = rng.split(static_cast<std::uint64_t>(t));
    auto cands = cand_rng.sample_without_replacement(n - 1, spec.candidates);
    for (auto& c : cands)
      if (c >= target) ++c;
    std::sort(cands.begin(), cands.end());
    std::size_t best = cands.front();
    double best_dist = -1.0;
    for (auto c : cands) {
      double dist = 0.0;
      for (std::size_t k = 0; k < d; ++k) {
        const double diff = original(target, k) - original(c, k);
        dist += diff * diff;
      }
      if (dist > best_dist) {
        best_dist = dist;
        best = c;
      }
    }
    for (std::size_t k = 0; k < d; ++k) features(target, k) = original(best, k);
    labels[target] = 1;
    result.feature_targets.push_back(target);
    result.feature_sources.push_back(best);
  }
  result.graph = g.with_features(std::move(features)).with_labels(std::move(labels));
  return result;
}

InjectionResult inject_anomalies(const Graph& g, const InjectionSpec& spec) {
  spec.validate(g.num_nodes());
  InjectionResult structural = inject_structural(g, spec);
  InjectionResult feature = inject_feature(structural.graph, spec);
  feature.cliques = std::move(structural.cliques);
  return feature;
}

}  // namespace promos
