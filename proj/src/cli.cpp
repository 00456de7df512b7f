#include "promos/cli.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "promos/analysis.hpp"
#include "promos/checkpoint.hpp"
#include "promos/config.hpp"
#include "promos/error.hpp"
#include "promos/graph.hpp"
#include "promos/pipeline.hpp"
#include "promos/synthetic.hpp"
#include "promos/teacher.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace promos::cli {

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

// Options shared by commands that take a run config.
struct ConfigOptions {
  std::string config_path;
  std::optional<std::uint64_t> seed;

  void attach(CLI::App* app) {
    app->add_option("--config", config_path, "JSON run config (defaults are used for missing keys)");
    app->add_option("--seed", seed, "Root seed (overrides the config)");
  }

  RunConfig load() const {
    RunConfig c = config_path.empty() ? RunConfig{} : load_run_config(config_path);
    if (seed) c.seed = *seed;
    c.resolve();
    c.validate();
    return c;
  }
};

std::vector<Graph> load_graphs(const std::vector<std::string>& dirs, std::size_t dim, std::uint64_t seed,
                               std::ostream& err) {
  std::vector<Graph> out;
  for (const auto& d : dirs) {
    LoadResult r = load_graph(d);
    for (const auto& w : r.warnings) err << "warning: " << d << ": " << w << "\n";
    out.push_back(unify_graph(r.graph.with_name(fs::path(d).filename().string()), dim, seed));
  }
  return out;
}

void dump_prototypes(const PromosModel& m, const fs::path& dir) {
  fs::create_directories(dir);
  write_matrix_csv(dir / "prototypes_global.csv", m.global.prototypes.value);
  write_matrix_csv(dir / "prototypes_local.csv", m.local.prototypes.value);
}

std::string scores_csv(const ScoreReport& r, const Graph& g) {
  std::string out = g.labels() ? "node_id,score,psd_term,geo_term,label\n" : "node_id,score,psd_term,geo_term\n";
  for (std::size_t i = 0; i < r.scores.size(); ++i) {
    out += std::to_string(i) + "," + format_double(r.scores[i]) + "," + format_double(r.psd_term[i]) + "," +
           format_double(r.geo_term[i]);
    if (g.labels()) out += "," + std::to_string((*g.labels())[i]);
    out += "\n";
  }
  return out;
}

json metrics_json(const ScoreReport& r, const Graph& g, double runtime_ms, const std::string& cfg_hash) {
  json j;
  j["graph"] = g.name();
  j["nodes"] = g.num_nodes();
  j["edges"] = g.num_edges();
  j["auroc"] = r.auroc ? json(*r.auroc) : json(nullptr);
  j["auprc"] = r.auprc ? json(*r.auprc) : json(nullptr);
  j["anomalies"] = g.labels() ? json(g.anomaly_count()) : json(nullptr);
  j["runtime_ms"] = runtime_ms;
  j["config_hash"] = cfg_hash;
  j["expert_activation"] = r.expert_activation;
  return j;
}

std::string model_config_hash(const PromosModel& m) { return content_hash(model_checkpoint(m).meta.dump()); }

// ---------------------------------------------------------------- commands

int cmd_gen_synthetic(const SbmSpec& spec, const std::string& out, std::ostream& os) {
  const Graph g = generate_sbm(spec);
  write_graph(g, out);
  os << "wrote " << out << " (" << g.num_nodes() << " nodes, " << g.num_edges() << " edges)\n";
  return 0;
}

int cmd_inject(const std::string& in, const std::string& out, const RunConfig& cfg, bool force, std::ostream& os) {
  LoadResult r = load_graph(in);
  if (r.graph.labels() && !force) {
    throw ValidationError(in + " already has labels.csv; pass --force to inject anyway");
  }
  Graph base = r.graph;
  if (base.labels() && force) base = base.with_labels(std::vector<int>(base.num_nodes(), 0));
  const InjectionResult inj = inject_anomalies(base, cfg.injection);
  write_graph(inj.graph, out);
  json manifest;
  manifest["source"] = in;
  manifest["spec"] = to_json(cfg.injection);
  manifest["spec"]["seed"] = cfg.injection.seed;
  manifest["cliques"] = inj.cliques;
  manifest["feature_targets"] = inj.feature_targets;
  manifest["feature_sources"] = inj.feature_sources;
  manifest["anomaly_count"] = inj.graph.anomaly_count();
  write_text(fs::path(out) / "injection_manifest.json", manifest.dump(2) + "\n");
  os << "wrote " << out << " with " << inj.graph.anomaly_count() << " anomalies\n";
  return 0;
}

int cmd_pretrain(const std::vector<std::string>& graphs, const std::string& out, const RunConfig& cfg,
                 std::ostream& os, std::ostream& err) {
  if (graphs.empty()) throw ValidationError("pretrain: at least one --graphs directory required");
  const auto gs = load_graphs(graphs, cfg.unify_dim, cfg.seed, err);
  const auto t0 = Clock::now();
  const PretrainResult res = ssl_pretrain(gs, cfg.ssl);
  const double runtime = ms_since(t0);
  const fs::path dir(out);
  write_checkpoint(dir / "teacher.ckpt", teacher_checkpoint(res.model));
  std::string log = "epoch,loss\n";
  for (std::size_t e = 0; e < res.epoch_loss.size(); ++e) log += std::to_string(e) + "," + format_double(res.epoch_loss[e]) + "\n";
  write_text(dir / "pretrain_loss.csv", log);
  write_text(dir / "config.json", dump_config(cfg));
  write_text(dir / "timing.json", json{{"runtime_ms", runtime}}.dump(2) + "\n");
  os << "wrote " << (dir / "teacher.ckpt").string() << " (" << res.epoch_loss.size() << " epochs";
  if (!res.epoch_loss.empty()) os << ", final loss " << res.epoch_loss.back();
  os << ")\n";
  return 0;
}

int cmd_import_teacher(const std::string& in, const std::string& out, std::ostream& os) {
  const TeacherModel t = import_teacher_csv(in);
  write_checkpoint(fs::path(out) / "teacher.ckpt", teacher_checkpoint(t));
  os << "imported teacher " << t.in_dim() << " -> " << t.hidden_dim() << " -> " << t.out_dim() << "\n";
  return 0;
}

int cmd_train(const std::string& teacher_path, const std::vector<std::string>& graphs, const std::string& out,
              const RunConfig& cfg, bool dump_protos, std::ostream& os, std::ostream& err) {
  if (graphs.empty()) throw ValidationError("train: at least one --graphs directory required");
  TeacherModel teacher = teacher_from_checkpoint(read_checkpoint(teacher_path));
  const auto gs = load_graphs(graphs, cfg.unify_dim, cfg.seed, err);
  const fs::path dir(out);
  write_text(dir / "config.json", dump_config(cfg));
  PromosModel init = initialize(gs, std::move(teacher), cfg.model, cfg.train);
  const auto t0 = Clock::now();
  TrainResult res;
  try {
    res = train(std::move(init), gs, cfg.train);
  } catch (const TrainingAborted& e) {
    write_checkpoint(dir / "last_good.ckpt", model_checkpoint(e.last_good()));
    err << "error: " << e.what() << "\nlast good model written to " << (dir / "last_good.ckpt").string() << "\n";
    return 1;
  }
  const double runtime = ms_since(t0);
  write_checkpoint(dir / "model.ckpt", model_checkpoint(res.model));
  std::string trace = "epoch,graph,loss,psd,dcr\n";
  for (const auto& s : res.steps) {
    trace += std::to_string(s.epoch) + "," + gs[s.graph].name() + "," + format_double(s.loss) + "," +
             format_double(s.psd) + "," + format_double(s.dcr) + "\n";
  }
  write_text(dir / "loss_trace.csv", trace);
  json timing;
  timing["runtime_ms"] = runtime;
  timing["epoch_wall_ms"] = res.epoch_wall_ms;
  write_text(dir / "timing.json", timing.dump(2) + "\n");
  if (dump_protos) dump_prototypes(res.model, dir);
  os << "wrote " << (dir / "model.ckpt").string() << " (" << res.epoch_loss.size() << " epochs";
  if (!res.epoch_loss.empty()) os << ", final loss " << res.epoch_loss.back();
  os << ")\n";
  return 0;
}

struct Scored {
  Graph graph;
  ScoreReport report;
  double runtime_ms;
};

Scored score_dir(const PromosModel& model, const std::string& graph_dir, std::ostream& err) {
  auto gs = load_graphs({graph_dir}, model.dim(), model.train_config.seed, err);
  const auto t0 = Clock::now();
  ScoreReport r = score(gs.front(), model);
  return {std::move(gs.front()), std::move(r), ms_since(t0)};
}

void write_score_outputs(const Scored& s, const fs::path& dir, const std::string& cfg_hash) {
  write_text(dir / "scores.csv", scores_csv(s.report, s.graph));
  write_text(dir / "metrics.json", metrics_json(s.report, s.graph, s.runtime_ms, cfg_hash).dump(2) + "\n");
}

std::string metric_text(const std::optional<double>& v) {
  if (!v) return "n/a";
  std::ostringstream ss;
  ss.setf(std::ios::fixed);
  ss.precision(4);
  ss << *v;
  return ss.str();
}

int cmd_score(const std::string& model_path, const std::string& graph_dir, const std::string& out,
              bool dump_protos, std::ostream& os, std::ostream& err) {
  const PromosModel model = model_from_checkpoint(read_checkpoint(model_path));
  const Scored s = score_dir(model, graph_dir, err);
  const fs::path dir(out);
  write_score_outputs(s, dir, model_config_hash(model));
  if (dump_protos) dump_prototypes(model, dir);
  os << s.graph.name() << ": " << s.graph.num_nodes() << " nodes";
  if (s.report.auroc) os << ", AUROC " << metric_text(s.report.auroc) << ", AUPRC " << metric_text(s.report.auprc);
  os << "\n";
  return 0;
}

int cmd_eval(const std::string& model_path, const std::vector<std::string>& graphs, const std::string& out,
             std::ostream& os, std::ostream& err) {
  if (graphs.empty()) throw ValidationError("eval: at least one --graphs directory required");
  const PromosModel model = model_from_checkpoint(read_checkpoint(model_path));
  const std::string hash = model_config_hash(model);
  const fs::path dir(out);
  std::string table = "graph,nodes,edges,anomalies,auroc,auprc\n";
  json summary = json::array();
  os << "graph                 nodes   auroc   auprc\n";
  for (const auto& gdir : graphs) {
    const Scored s = score_dir(model, gdir, err);
    write_score_outputs(s, dir / s.graph.name(), hash);
    auto opt = [](const std::optional<double>& v) { return v ? format_double(*v) : std::string(); };
    table += s.graph.name() + "," + std::to_string(s.graph.num_nodes()) + "," + std::to_string(s.graph.num_edges()) +
             "," + (s.graph.labels() ? std::to_string(s.graph.anomaly_count()) : std::string()) + "," +
             opt(s.report.auroc) + "," + opt(s.report.auprc) + "\n";
    summary.push_back(metrics_json(s.report, s.graph, s.runtime_ms, hash));
    std::string name = s.graph.name();
    if (name.size() < 20) name.resize(20, ' ');
    os << name << "  " << s.graph.num_nodes() << "  " << metric_text(s.report.auroc) << "  "
       << metric_text(s.report.auprc) << "\n";
  }
  write_text(dir / "summary.csv", table);
  write_text(dir / "metrics.json", summary.dump(2) + "\n");
  return 0;
}

int cmd_theorem_check(std::size_t ensembles, std::size_t trials, std::uint64_t seed, const std::string& out,
                      std::ostream& os) {
  Rng rng = Rng::stream(seed, "theorem-ensembles");
  std::string table = "ensemble,n,v,rho,weight_norm2,closed_form_gap,monte_carlo_gap,standard_error\n";
  bool ok = true;
  auto check = [&](const std::string& label, const EquicorrelatedEnsemble& e, std::uint64_t mc_seed) {
    const double closed = error_gap(e);
    const MonteCarloResult mc = monte_carlo_gap(e, trials, mc_seed);
    const bool good = closed <= 1e-12 && std::abs(mc.gap - closed) < 5.0 * mc.gap_se + 1e-12 && mc.gap <= 5.0 * mc.gap_se + 1e-12;
    ok = ok && good;
    table += label + "," + std::to_string(e.n) + "," + format_double(e.v) + "," + format_double(e.rho) + "," +
             format_double(e.weight_norm2()) + "," + format_double(closed) + "," + format_double(mc.gap) + "," +
             format_double(mc.gap_se) + "\n";
    char line[160];
    std::snprintf(line, sizeof(line), "%-9s N=%zu v=%.3f rho=%+.3f  closed=%+.5f  mc=%+.5f  se=%.5f  %s\n", label.c_str(),
                  e.n, e.v, e.rho, closed, mc.gap, mc.gap_se, good ? "ok" : "FAIL");
    os << line;
  };
  for (std::size_t i = 0; i < ensembles; ++i) check(std::to_string(i), random_ensemble(rng), rng.split(i).key());
  EquicorrelatedEnsemble one_hot;
  one_hot.g = {1.0, 0.0};
  check("one-hot", one_hot, rng.split("one-hot").key());
  if (!out.empty()) write_text(out, table);
  os << (ok ? "all gaps non-positive within tolerance\n" : "theorem check FAILED\n");
  return ok ? 0 : 1;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Zero-shot node anomaly scoring across graphs with prototype-guided student ensembles", "promos"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "promos 0.1.0");

  int code = 0;
  ConfigOptions copts;

  auto* gen = app.add_subcommand("gen-synthetic", "Write a seeded two-block SBM graph");
  SbmSpec sbm;
  std::string gen_out;
  gen->add_option("--out", gen_out, "Output graph directory")->required();
  gen->add_option("--nodes", sbm.nodes)->capture_default_str();
  gen->add_option("--blocks", sbm.blocks)->capture_default_str();
  gen->add_option("--p-in", sbm.p_in)->capture_default_str();
  gen->add_option("--p-out", sbm.p_out)->capture_default_str();
  gen->add_option("--dim", sbm.feature_dim)->capture_default_str();
  gen->add_option("--mean-scale", sbm.mean_scale)->capture_default_str();
  gen->add_option("--noise", sbm.noise)->capture_default_str();
  gen->add_option("--mean-seed", sbm.mean_seed, "Seed of the block means (share it across a graph family)")
      ->capture_default_str();
  gen->add_option("--seed", sbm.seed, "Seed of edges and feature noise")->capture_default_str();
  gen->add_option("--name", sbm.name)->capture_default_str();
  gen->callback([&] { code = cmd_gen_synthetic(sbm, gen_out, out); });

  auto* inj = app.add_subcommand("inject", "Inject structural and attributive anomalies");
  std::string inj_in, inj_out;
  std::optional<std::size_t> clique_size, clique_count, feature_count, candidates;
  bool force = false;
  inj->add_option("--graph", inj_in, "Input graph directory")->required();
  inj->add_option("--out", inj_out, "Output graph directory")->required();
  inj->add_option("--clique-size", clique_size, "p");
  inj->add_option("--clique-count", clique_count, "q");
  inj->add_option("--feature-count", feature_count);
  inj->add_option("--candidates", candidates, "k");
  inj->add_flag("--force", force, "Inject even if the graph already has labels");
  copts.attach(inj);
  inj->callback([&] {
    RunConfig cfg = copts.load();
    if (clique_size) cfg.injection.clique_size = *clique_size;
    if (clique_count) cfg.injection.clique_count = *clique_count;
    if (feature_count) cfg.injection.feature_count = *feature_count;
    if (candidates) cfg.injection.candidates = *candidates;
    code = cmd_inject(inj_in, inj_out, cfg, force, out);
  });

  auto* pre = app.add_subcommand("pretrain", "Self-supervised teacher pretraining");
  std::vector<std::string> pre_graphs;
  std::string pre_out;
  std::optional<std::size_t> pre_epochs;
  pre->add_option("--graphs", pre_graphs, "Training graph directories")->required();
  pre->add_option("--out", pre_out, "Output directory")->required();
  pre->add_option("--epochs", pre_epochs, "SSL epochs (0 = random frozen teacher)");
  copts.attach(pre);
  pre->callback([&] {
    RunConfig cfg = copts.load();
    if (pre_epochs) cfg.ssl.epochs = *pre_epochs;
    cfg.train_graphs = pre_graphs;
    cfg.output_dir = pre_out;
    code = cmd_pretrain(pre_graphs, pre_out, cfg, out, err);
  });

  auto* imp = app.add_subcommand("import-teacher", "Convert external teacher weights (CSV) to a checkpoint");
  std::string imp_in, imp_out;
  imp->add_option("--dir", imp_in, "Directory with gcn_w1.csv, gcn_w2.csv [adapter_w.csv, adapter_b.csv]")
      ->required();
  imp->add_option("--out", imp_out, "Output directory")->required();
  imp->callback([&] { code = cmd_import_teacher(imp_in, imp_out, out); });

  auto* tr = app.add_subcommand("train", "Train the student ensemble and codebooks");
  std::string tr_teacher, tr_out;
  std::vector<std::string> tr_graphs;
  std::optional<std::size_t> tr_epochs;
  bool tr_dump = false;
  tr->add_option("--teacher", tr_teacher, "Teacher checkpoint")->required();
  tr->add_option("--graphs", tr_graphs, "Training graph directories")->required();
  tr->add_option("--out", tr_out, "Output directory")->required();
  tr->add_option("--epochs", tr_epochs);
  tr->add_flag("--dump-prototypes", tr_dump, "Also write both codebooks as CSV");
  copts.attach(tr);
  tr->callback([&] {
    RunConfig cfg = copts.load();
    if (tr_epochs) cfg.train.epochs = *tr_epochs;
    cfg.train_graphs = tr_graphs;
    cfg.output_dir = tr_out;
    code = cmd_train(tr_teacher, tr_graphs, tr_out, cfg, tr_dump, out, err);
  });

  auto* sc = app.add_subcommand("score", "Zero-shot scoring of one graph");
  std::string sc_model, sc_graph, sc_out;
  bool sc_dump = false;
  sc->add_option("--model", sc_model, "Model checkpoint")->required();
  sc->add_option("--graph", sc_graph, "Graph directory")->required();
  sc->add_option("--out", sc_out, "Output directory")->required();
  sc->add_flag("--dump-prototypes", sc_dump, "Also write both codebooks as CSV");
  sc->callback([&] { code = cmd_score(sc_model, sc_graph, sc_out, sc_dump, out, err); });

  auto* ev = app.add_subcommand("eval", "Score several graphs and write a combined table");
  std::string ev_model, ev_out;
  std::vector<std::string> ev_graphs;
  ev->add_option("--model", ev_model, "Model checkpoint")->required();
  ev->add_option("--graphs", ev_graphs, "Graph directories")->required();
  ev->add_option("--out", ev_out, "Output directory")->required();
  ev->callback([&] { code = cmd_eval(ev_model, ev_graphs, ev_out, out, err); });

  auto* th = app.add_subcommand("theorem-check", "Closed-form vs Monte-Carlo MoS error gap");
  std::size_t ensembles = 100, trials = 200000;
  std::uint64_t th_seed = 0;
  std::string th_out;
  th->add_option("--ensembles", ensembles)->capture_default_str();
  th->add_option("--trials", trials)->capture_default_str();
  th->add_option("--seed", th_seed)->capture_default_str();
  th->add_option("--out", th_out, "Optional CSV table");
  th->callback([&] { code = cmd_theorem_check(ensembles, trials, th_seed, th_out, out); });

  std::vector<const char*> argv;
  argv.push_back("promos");
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::CallForVersion&) {
    out << "promos 0.1.0\n";
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  } catch (const ValidationError& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  } catch (const CheckpointError& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return code;
}

int run(int argc, const char* const* argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run(args, std::cout, std::cerr);
}

}  // namespace promos::cli
