#include "promos/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

#include "promos/config.hpp"
#include "promos/metrics.hpp"

namespace promos {

std::vector<std::string> ModelConfig::problems() const {
  std::vector<std::string> p;
  if (num_students == 0) p.push_back("model.num_students must be >= 1");
  if (top_k < 1 || top_k > num_students) p.push_back("model.top_k must satisfy 1 <= top_k <= num_students");
  if (num_prototypes < 2) p.push_back("model.num_prototypes must be >= 2");
  if (student_hidden == 0) p.push_back("model.student_hidden must be >= 1");
  if (!(temperature > 0.0)) p.push_back("model.temperature must be positive");
  if (!(beta >= 0.0)) p.push_back("model.beta must be non-negative");
  if (!std::isfinite(mu)) p.push_back("model.mu must be finite");
  if (!(epsilon > 0.0)) p.push_back("model.epsilon must be positive");
  if (!(mask_drop_rate >= 0.0 && mask_drop_rate < 1.0)) p.push_back("model.mask_drop_rate must be in [0,1)");
  return p;
}

std::vector<std::string> TrainConfig::problems() const {
  std::vector<std::string> p;
  if (!(lr > 0.0)) p.push_back("train.lr must be positive");
  if (!(lambda >= 0.0)) p.push_back("train.lambda must be non-negative");
  if (!(div_weight >= 0.0)) p.push_back("train.div_weight must be non-negative");
  if (!(load_balance_weight >= 0.0)) p.push_back("train.load_balance_weight must be non-negative");
  if (!(z_loss_weight >= 0.0)) p.push_back("train.z_loss_weight must be non-negative");
  if (!use_psd && lambda == 0.0) p.push_back("train.use_psd=false requires lambda > 0");
  return p;
}

namespace {

void throw_problems(const std::string& what, const std::vector<std::string>& problems) {
  if (problems.empty()) return;
  std::string msg = what + ":";
  for (const auto& p : problems) msg += "\n  " + p;
  throw ValidationError(msg);
}

}  // namespace

void ModelConfig::validate() const { throw_problems("invalid model config", problems()); }
void TrainConfig::validate() const { throw_problems("invalid train config", problems()); }

void PromosModel::validate() const {
  model_config.validate();
  train_config.validate();
  teacher.validate();
  students.validate();
  global.validate();
  local.validate();
  const std::size_t d = dim();
  if (teacher.in_dim() != d || teacher.adapter_dim() != d) {
    throw ValidationError("model: teacher maps " + std::to_string(teacher.in_dim()) + " -> " +
                          std::to_string(teacher.adapter_dim()) + " but students use d=" + std::to_string(d));
  }
  if (global.dim() != d || local.dim() != d) throw ValidationError("model: codebook dim does not match d");
}

std::vector<ad::Parameter*> PromosModel::trainable() {
  std::vector<ad::Parameter*> out{&teacher.adapter_w, &teacher.adapter_b};
  for (auto* p : students.parameters()) out.push_back(p);
  out.push_back(&global.prototypes);
  out.push_back(&local.prototypes);
  return out;
}

PromosModel initialize(std::span<const Graph> train_graphs, TeacherModel teacher, const ModelConfig& mcfg,
                       const TrainConfig& tcfg) {
  mcfg.validate();
  tcfg.validate();
  if (train_graphs.empty()) throw ValidationError("initialize: at least one training graph required");
  const std::size_t d = train_graphs.front().feature_dim();
  std::size_t total = 0;
  for (const auto& g : train_graphs) {
    if (g.feature_dim() != d) {
      throw ValidationError("initialize: graph '" + g.name() + "' has feature dim " +
                            std::to_string(g.feature_dim()) + ", expected " + std::to_string(d));
    }
    total += g.num_nodes();
  }
  Tensor pool = Tensor::matrix(total, d);
  std::size_t row = 0;
  for (const auto& g : train_graphs)
    for (std::size_t i = 0; i < g.num_nodes(); ++i, ++row) {
      auto src = g.features().row_span(i);
      std::copy(src.begin(), src.end(), pool.row_span(row).begin());
    }

  PromosModel m;
  m.teacher = std::move(teacher);
  m.teacher.frozen = true;
  m.model_config = mcfg;
  m.train_config = tcfg;
  m.students = init_students(d, mcfg.student_hidden, mcfg.num_students, mcfg.top_k, mcfg.mask_drop_rate,
                             Rng::stream(tcfg.seed, "student-init"), Rng::stream(tcfg.seed, "router-init"));
  m.global = {Branch::Shared,
              {"prototypes.global", kmeans_init(pool, mcfg.num_prototypes, Rng::stream(tcfg.seed, "kmeans-g").key())},
              mcfg.temperature};
  m.local = {Branch::Personalized,
             {"prototypes.local", kmeans_init(pool, mcfg.num_prototypes, Rng::stream(tcfg.seed, "kmeans-l").key())},
             mcfg.temperature};
  m.validate();
  return m;
}

namespace {

// Everything the loss and the score share: both student branches, teacher
// embedding and the per-branch prototype distributions.
struct Forward {
  ad::Var z;  // adapted teacher output
  ad::Var x_tilde;
  Routing routing;
  PersonalizedOutput personal;
  ad::Var h[2];
  ad::Var books[2];
  ad::Var q[2];
  ad::Var s[2];
};

Forward run_forward(ad::Tape& tape, const Graph& g, const std::shared_ptr<const ad::SparseMatrix>& adj,
                    const Tensor& enhanced, const PromosModel& m, const Mask& mask) {
  if (g.feature_dim() != m.dim()) {
    throw ValidationError("graph '" + g.name() + "' has feature dim " + std::to_string(g.feature_dim()) +
                          " but the model expects " + std::to_string(m.dim()));
  }
  Forward f;
  ad::Var u = gcn_forward(tape, adj, tape.constant(g.features()), m.teacher);
  f.z = adapt(tape, u, m.teacher);
  f.x_tilde = tape.constant(enhanced);
  f.h[0] = shared_forward(tape, f.x_tilde, mask, m.students);
  f.routing = route(tape, f.x_tilde, m.students);
  f.personal = personalized_forward(tape, f.x_tilde, mask, f.routing, m.students);
  f.h[1] = f.personal.h;
  f.books[0] = tape.parameter(m.global.prototypes);
  f.books[1] = tape.parameter(m.local.prototypes);
  const double tau = m.model_config.temperature;
  for (int b = 0; b < 2; ++b) {
    f.q[b] = proto_distribution(f.z, f.books[b], tau);
    f.s[b] = proto_distribution(f.h[b], f.books[b], tau);
  }
  return f;
}

ad::Var accumulate(ad::Var total, ad::Var term, double weight) {
  if (weight == 0.0) return total;
  ad::Var t = weight == 1.0 ? term : ad::scale(term, weight);
  return total.valid() ? ad::add(total, t) : t;
}

LossTerms loss_from_forward(ad::Tape& tape, const Forward& f, const PromosModel& m, const TrainConfig& cfg) {
  LossTerms terms;
  const auto& mc = m.model_config;
  terms.psd = psd_loss(f.q, f.s);

  std::vector<std::size_t> nearest[2];
  std::vector<double> weights[2];
  std::vector<DcrBranch> branches;
  for (int b = 0; b < 2; ++b) {
    const Tensor& book = f.books[b].value();
    nearest[b] = quantize(f.z.value(), book).indices;
    const Tensor rel = relation_matrix(book, mc.temperature);
    weights[b] = reliability_weights(f.q[b].value(), rel, nearest[b], mc.beta, mc.mu, mc.epsilon).normalized;
  }
  for (int b = 0; b < 2; ++b) branches.push_back({f.books[b], nearest[b], weights[b]});
  terms.dcr = dcr_loss(f.z, branches);

  ad::Var total;
  if (cfg.use_psd) total = terms.psd;
  total = accumulate(total, terms.dcr, cfg.lambda);
  if (cfg.div_weight != 0.0) {
    if (m.students.top_k < 2) throw ValidationError("div_weight > 0 requires top_k >= 2");
    ad::Var h1 = ranked_student_output(tape, f.x_tilde, f.routing, f.personal, 0);
    ad::Var h2 = ranked_student_output(tape, f.x_tilde, f.routing, f.personal, 1);
    terms.div = div_loss(h1, h2, f.books[1], mc.temperature);
    total = accumulate(total, terms.div, cfg.div_weight);
  }
  if (cfg.load_balance_weight != 0.0) {
    terms.load_balance = load_balance_loss(f.routing, m.students.num_students());
    total = accumulate(total, terms.load_balance, cfg.load_balance_weight);
  }
  if (cfg.z_loss_weight != 0.0) {
    terms.z_loss = router_z_loss(f.routing);
    total = accumulate(total, terms.z_loss, cfg.z_loss_weight);
  }
  terms.total = total;
  if (!terms.total.value().all_finite()) throw NumericError("non-finite training loss");
  return terms;
}

}  // namespace

LossTerms total_loss(ad::Tape& tape, const Graph& g, const PromosModel& model, const Mask& mask,
                     const TrainConfig& cfg) {
  const Forward f = run_forward(tape, g, normalized_adjacency(g), enhance(g).enhanced, model, mask);
  return loss_from_forward(tape, f, model, cfg);
}

TrainResult train(PromosModel model, std::span<const Graph> train_graphs, const TrainConfig& cfg) {
  cfg.validate();
  model.validate();
  if (!model.teacher.frozen) throw ValidationError("train: teacher must be frozen");
  model.train_config = cfg;
  struct Cached {
    std::shared_ptr<const ad::SparseMatrix> adj;
    Tensor enhanced;
  };
  std::vector<Cached> cache;
  for (const auto& g : train_graphs) {
    if (g.feature_dim() != model.dim()) {
      throw ValidationError("train: graph '" + g.name() + "' has feature dim " + std::to_string(g.feature_dim()) +
                            ", model expects " + std::to_string(model.dim()));
    }
    cache.push_back({normalized_adjacency(g), enhance(g).enhanced});
  }

  TrainResult result;
  Optimizer opt(cfg.optimizer, cfg.lr, model.trainable());
  const Rng mask_root = Rng::stream(cfg.seed, "mask");
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    double sum = 0.0;
    for (std::size_t gi = 0; gi < train_graphs.size(); ++gi) {
      const Graph& g = train_graphs[gi];
      const std::uint64_t mask_seed = mask_root.split(static_cast<std::uint64_t>(epoch)).split(gi).key();
      const Mask mask = sample_mask(g.num_nodes(), model.dim(), model.students.mask_drop_rate, mask_seed);
      ad::Tape tape;
      StepRecord rec{epoch, gi, 0.0, 0.0, 0.0};
      ad::Gradients grads;
      try {
        const Forward f = run_forward(tape, g, cache[gi].adj, cache[gi].enhanced, model, mask);
        const LossTerms terms = loss_from_forward(tape, f, model, cfg);
        rec.loss = terms.total.value().item();
        rec.psd = terms.psd.value().item();
        rec.dcr = terms.dcr.value().item();
        grads = tape.backward(terms.total);
      } catch (const NumericError& e) {
        throw TrainingAborted("training aborted at epoch " + std::to_string(epoch) + " graph '" + g.name() +
                                  "': " + e.what(),
                              model);
      }
      opt.step(grads);
      result.steps.push_back(rec);
      sum += rec.loss;
    }
    result.epoch_loss.push_back(train_graphs.empty() ? 0.0 : sum / static_cast<double>(train_graphs.size()));
    result.epoch_wall_ms.push_back(
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count());
  }
  result.model = std::move(model);
  return result;
}

ScoreReport score(const Graph& g, const PromosModel& model) {
  const std::size_t n = g.num_nodes();
  ad::Tape tape;
  const Forward f = run_forward(tape, g, normalized_adjacency(g), enhance(g).enhanced, model,
                                inactive_mask(n, model.dim()));
  const double lambda = model.train_config.lambda;
  const bool with_psd = model.train_config.use_psd;
  ScoreReport r;
  r.scores.assign(n, 0.0);
  r.psd_term.assign(n, 0.0);
  r.geo_term.assign(n, 0.0);
  const Tensor& z = f.z.value();
  for (int b = 0; b < 2; ++b) {
    const Tensor& book = f.books[b].value();
    const Tensor& q = f.q[b].value();
    const Tensor& s = f.s[b].value();
    const Tensor& h = f.h[b].value();
    const Quantization qh = quantize(h, book);
    const Quantization qz = quantize(z, book);
    for (std::size_t i = 0; i < n; ++i) {
      if (with_psd) {
        double kl = 0.0;
        for (std::size_t m = 0; m < q.cols(); ++m) {
          kl += q(i, m) * (std::log(std::max(q(i, m), ad::kLogFloor)) - std::log(std::max(s(i, m), ad::kLogFloor)));
        }
        r.psd_term[i] += kl;
      }
      double geo = 0.0;
      for (std::size_t c = 0; c < h.cols(); ++c) {
        const double dh = h(i, c) - qh.quantized(i, c);
        geo += dh * dh;
      }
      for (std::size_t c = 0; c < z.cols(); ++c) {
        const double dz = z(i, c) - qz.quantized(i, c);
        geo += dz * dz;
      }
      r.geo_term[i] += geo;
    }
  }
  for (std::size_t i = 0; i < n; ++i) r.scores[i] = r.psd_term[i] + lambda * r.geo_term[i];
  r.expert_activation = f.routing.activation_histogram(model.students.num_students());
  if (g.labels()) {
    const auto& y = *g.labels();
    const bool both = std::find(y.begin(), y.end(), 1) != y.end() && std::find(y.begin(), y.end(), 0) != y.end();
    if (both) {
      r.auroc = auroc(r.scores, y);
      r.auprc = auprc(r.scores, y);
    }
  }
  return r;
}

Checkpoint model_checkpoint(const PromosModel& m) {
  Checkpoint ck;
  ck.kind = "model";
  ck.meta["model"] = to_json(m.model_config);
  ck.meta["train"] = to_json(m.train_config);
  ck.meta["train"]["seed"] = m.train_config.seed;
  ck.add(m.teacher.gcn_w1);
  ck.add(m.teacher.gcn_w2);
  ck.add(m.teacher.adapter_w);
  ck.add(m.teacher.adapter_b);
  for (const auto* p : m.students.parameters()) ck.add(*p);
  ck.add(m.global.prototypes);
  ck.add(m.local.prototypes);
  return ck;
}

PromosModel model_from_checkpoint(const Checkpoint& ck) {
  if (ck.kind != "model") throw CheckpointError("expected a model checkpoint, got kind '" + ck.kind + "'");
  PromosModel m;
  try {
    m.model_config = model_config_from_json(ck.meta.at("model"));
    auto train = ck.meta.at("train");
    const auto seed = train.at("seed").get<std::uint64_t>();
    train.erase("seed");
    m.train_config = train_config_from_json(train);
    m.train_config.seed = seed;
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("model checkpoint has malformed metadata: ") + e.what());
  }
  m.teacher = teacher_from_checkpoint(ck);
  const auto& mc = m.model_config;
  const Tensor& router = ck.get("students.router");
  const std::size_t d = router.cols();
  m.students = init_students(d, mc.student_hidden, mc.num_students, mc.top_k, mc.mask_drop_rate, Rng(0), Rng(0));
  for (auto* p : m.students.parameters()) {
    const Tensor& t = ck.get(p->name);
    if (!t.same_shape(p->value)) {
      throw CheckpointError("tensor '" + p->name + "' has shape " + t.shape_string() + ", expected " +
                            p->value.shape_string());
    }
    p->value = t;
  }
  m.global = {Branch::Shared, {"prototypes.global", ck.get("prototypes.global")}, mc.temperature};
  m.local = {Branch::Personalized, {"prototypes.local", ck.get("prototypes.local")}, mc.temperature};
  m.validate();
  return m;
}

}  // namespace promos
