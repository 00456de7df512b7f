#include "promos/teacher.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "promos/error.hpp"
#include "promos/optimizer.hpp"

namespace promos {

namespace {

Tensor glorot(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Tensor w = Tensor::matrix(fan_in, fan_out);
  for (double& v : w.data()) v = rng.uniform(-limit, limit);
  return w;
}

}  // namespace

void TeacherModel::validate() const {
  const auto& w1 = gcn_w1.value;
  const auto& w2 = gcn_w2.value;
  const auto& aw = adapter_w.value;
  const auto& ab = adapter_b.value;
  if (w1.shape().size() != 2 || w2.shape().size() != 2 || aw.shape().size() != 2) {
    throw ValidationError("teacher: weights must be matrices");
  }
  if (w1.cols() != w2.rows()) {
    throw ValidationError("teacher: gcn_w1 " + w1.shape_string() + " does not chain into gcn_w2 " +
                          w2.shape_string());
  }
  if (w2.cols() != aw.rows()) {
    throw ValidationError("teacher: gcn_w2 " + w2.shape_string() + " does not chain into adapter " +
                          aw.shape_string());
  }
  if (ab.rows() != 1 || ab.cols() != aw.cols()) {
    throw ValidationError("teacher: adapter bias " + ab.shape_string() + " does not match adapter " +
                          aw.shape_string());
  }
}

TeacherModel init_teacher(std::size_t in_dim, std::size_t hidden_dim, std::size_t out_dim,
                          std::size_t adapter_dim, Rng rng) {
  TeacherModel m;
  Rng enc = rng.split("encoder");
  m.gcn_w1.value = glorot(in_dim, hidden_dim, enc);
  m.gcn_w2.value = glorot(hidden_dim, out_dim, enc);
  if (out_dim == adapter_dim) {
    m.adapter_w.value = Tensor::identity(out_dim);
  } else {
    Rng ad_rng = rng.split("adapter");
    m.adapter_w.value = glorot(out_dim, adapter_dim, ad_rng);
  }
  m.adapter_b.value = Tensor::matrix(1, adapter_dim);
  return m;
}

std::shared_ptr<const ad::SparseMatrix> normalized_adjacency(
    std::size_t n, std::span<const std::pair<std::uint32_t, std::uint32_t>> edges) {
  std::vector<std::vector<std::uint32_t>> adj(n);
  for (std::size_t i = 0; i < n; ++i) adj[i].push_back(static_cast<std::uint32_t>(i));
  for (auto [u, v] : edges) {
    if (u == v) continue;
    adj[u].push_back(v);
    adj[v].push_back(u);
  }
  std::vector<double> inv_sqrt_deg(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::sort(adj[i].begin(), adj[i].end());
    adj[i].erase(std::unique(adj[i].begin(), adj[i].end()), adj[i].end());
    inv_sqrt_deg[i] = 1.0 / std::sqrt(static_cast<double>(adj[i].size()));
  }
  auto s = std::make_shared<ad::SparseMatrix>();
  s->rows = s->cols = n;
  s->offsets.assign(n + 1, 0);
  for (std::size_t i = 0; i < n; ++i) s->offsets[i + 1] = s->offsets[i] + adj[i].size();
  s->indices.reserve(s->offsets.back());
  s->values.reserve(s->offsets.back());
  for (std::size_t i = 0; i < n; ++i) {
    for (auto j : adj[i]) {
      s->indices.push_back(j);
      s->values.push_back(inv_sqrt_deg[i] * inv_sqrt_deg[j]);
    }
  }
  return s;
}

std::shared_ptr<const ad::SparseMatrix> normalized_adjacency(const Graph& g) {
  const auto edges = g.edge_list();
  return normalized_adjacency(g.num_nodes(), edges);
}

ad::Var gcn_forward(ad::Tape& tape, const std::shared_ptr<const ad::SparseMatrix>& adj, ad::Var x,
                    const TeacherModel& model) {
  if (x.cols() != model.in_dim()) {
    throw ValidationError("teacher: feature dim " + std::to_string(x.cols()) +
                          " does not match encoder input dim " + std::to_string(model.in_dim()));
  }
  ad::Var w1 = tape.parameter(model.gcn_w1);
  ad::Var w2 = tape.parameter(model.gcn_w2);
  ad::Var h = ad::relu(ad::propagate(adj, ad::matmul(x, w1)));
  ad::Var u = ad::propagate(adj, ad::matmul(h, w2));
  return model.frozen ? ad::stop_gradient(u) : u;
}

ad::Var gcn_forward(ad::Tape& tape, const Graph& g, const TeacherModel& model) {
  return gcn_forward(tape, normalized_adjacency(g), tape.constant(g.features()), model);
}

Tensor gcn_forward(const Graph& g, const TeacherModel& model) {
  ad::Tape tape;
  return gcn_forward(tape, g, model).value();
}

ad::Var adapt(ad::Tape& tape, ad::Var u, const TeacherModel& model) {
  if (u.cols() != model.adapter_w.value.rows()) {
    throw ValidationError("adapter: input dim " + std::to_string(u.cols()) + " does not match " +
                          std::to_string(model.adapter_w.value.rows()));
  }
  return ad::add_bias(ad::matmul(u, tape.parameter(model.adapter_w)), tape.parameter(model.adapter_b));
}

void SSLConfig::validate() const {
  std::string msg;
  if (!(edge_drop_rate >= 0.0 && edge_drop_rate < 1.0)) msg += " edge_drop_rate must be in [0,1);";
  if (!(feature_mask_rate >= 0.0 && feature_mask_rate < 1.0)) msg += " feature_mask_rate must be in [0,1);";
  if (!(temperature > 0.0)) msg += " temperature must be positive;";
  if (!(lr > 0.0)) msg += " lr must be positive;";
  if (hidden_dim == 0 || out_dim == 0) msg += " teacher dims must be positive;";
  if (!msg.empty()) throw ValidationError("invalid ssl config:" + msg);
}

AugmentedView augment(const Graph& g, double edge_drop_rate, double feature_mask_rate, Rng rng) {
  Rng edge_rng = rng.split("edges");
  Rng feat_rng = rng.split("features");
  std::vector<std::pair<std::uint32_t, std::uint32_t>> kept;
  for (const auto& e : g.edge_list())
    if (!edge_rng.bernoulli(edge_drop_rate)) kept.push_back(e);
  AugmentedView view;
  view.adjacency = normalized_adjacency(g.num_nodes(), kept);
  view.features = g.features();
  const std::size_t d = g.feature_dim();
  std::vector<double> keep(d);
  for (double& k : keep) k = feat_rng.bernoulli(feature_mask_rate) ? 0.0 : 1.0;
  for (std::size_t r = 0; r < view.features.rows(); ++r)
    for (std::size_t c = 0; c < d; ++c) view.features(r, c) *= keep[c];
  return view;
}

namespace {

ad::Var info_nce_direction(ad::Var za, ad::Var zb, double temperature, const Tensor& eye) {
  ad::Var logits = ad::scale(ad::matmul_nt(za, zb), 1.0 / temperature);
  ad::Var logp = ad::row_log_softmax(logits);
  const double n = static_cast<double>(za.rows());
  return ad::scale(ad::sum(ad::mul_const(logp, eye)), -1.0 / n);
}

}  // namespace

ad::Var contrastive_loss(ad::Tape& tape, const AugmentedView& a, const AugmentedView& b,
                         const TeacherModel& model, double temperature) {
  ad::Var ha = gcn_forward(tape, a.adjacency, tape.constant(a.features), model);
  ad::Var hb = gcn_forward(tape, b.adjacency, tape.constant(b.features), model);
  ad::Var za = ad::row_normalize(ha);
  ad::Var zb = ad::row_normalize(hb);
  const Tensor eye = Tensor::identity(za.rows());
  return ad::scale(ad::add(info_nce_direction(za, zb, temperature, eye),
                           info_nce_direction(zb, za, temperature, eye)),
                   0.5);
}

double evaluate_contrastive(const Graph& g, const TeacherModel& model, const SSLConfig& cfg, Rng rng) {
  TeacherModel open = model;
  open.frozen = false;
  const auto va = augment(g, cfg.edge_drop_rate, cfg.feature_mask_rate, rng.split("a"));
  const auto vb = augment(g, cfg.edge_drop_rate, cfg.feature_mask_rate, rng.split("b"));
  ad::Tape tape;
  return contrastive_loss(tape, va, vb, open, cfg.temperature).value().item();
}

PretrainResult ssl_pretrain(std::span<const Graph> graphs, const SSLConfig& cfg) {
  cfg.validate();
  if (graphs.empty()) throw ValidationError("ssl_pretrain: at least one training graph required");
  const std::size_t d = graphs.front().feature_dim();
  for (const auto& g : graphs) {
    if (g.feature_dim() != d) {
      throw ValidationError("ssl_pretrain: graph '" + g.name() + "' has feature dim " +
                            std::to_string(g.feature_dim()) + ", expected " + std::to_string(d));
    }
  }
  PretrainResult result;
  result.model = init_teacher(d, cfg.hidden_dim, cfg.out_dim, d, Rng::stream(cfg.seed, "teacher-init"));
  TeacherModel& model = result.model;
  model.frozen = false;
  Optimizer opt(OptimizerKind::Adam, cfg.lr, {&model.gcn_w1, &model.gcn_w2});
  const Rng aug = Rng::stream(cfg.seed, "teacher-augment");

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    double total = 0.0;
    for (std::size_t gi = 0; gi < graphs.size(); ++gi) {
      const Rng step_rng = aug.split(static_cast<std::uint64_t>(epoch * graphs.size() + gi));
      const auto va = augment(graphs[gi], cfg.edge_drop_rate, cfg.feature_mask_rate, step_rng.split("a"));
      const auto vb = augment(graphs[gi], cfg.edge_drop_rate, cfg.feature_mask_rate, step_rng.split("b"));
      ad::Tape tape;
      ad::Var loss = contrastive_loss(tape, va, vb, model, cfg.temperature);
      const double value = loss.value().item();
      if (!std::isfinite(value)) {
        throw NumericError("ssl_pretrain: non-finite loss at epoch " + std::to_string(epoch) +
                           " graph '" + graphs[gi].name() + "'");
      }
      total += value;
      opt.step(tape.backward(loss));
    }
    result.epoch_loss.push_back(total / static_cast<double>(graphs.size()));
  }
  model.frozen = true;
  return result;
}

}  // namespace promos
