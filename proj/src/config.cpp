#include "promos/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "promos/checkpoint.hpp"
#include "promos/error.hpp"

using nlohmann::json;

namespace promos {

namespace {

// Reads fields out of one JSON object, remembering which keys were consumed
// and collecting problems instead of throwing.
class Reader {
 public:
  Reader(const json& j, std::string prefix, std::vector<std::string>& problems)
      : j_(j), prefix_(std::move(prefix)), problems_(problems) {
    if (!j.is_object()) {
      problems_.push_back(where() + " must be an object");
      ok_ = false;
    }
  }

  template <class T>
  void get(const std::string& key, T& out) {
    if (!ok_) return;
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    try {
      if constexpr (std::is_same_v<T, bool>) {
        if (!it->is_boolean()) throw std::invalid_argument("expected a boolean");
      } else if constexpr (std::is_integral_v<T>) {
        if (!it->is_number_integer()) throw std::invalid_argument("expected an integer");
        if (std::is_unsigned_v<T> && it->is_number_integer() && !it->is_number_unsigned() && it->get<long long>() < 0) {
          throw std::invalid_argument("expected a non-negative integer");
        }
      } else if constexpr (std::is_floating_point_v<T>) {
        if (!it->is_number()) throw std::invalid_argument("expected a number");
      }
      out = it->get<T>();
    } catch (const std::exception& e) {
      problems_.push_back(key_path(key) + ": " + e.what());
    }
  }

  const json* child(const std::string& key) {
    if (!ok_) return nullptr;
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  void finish() {
    if (!ok_) return;
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!seen_.count(it.key())) problems_.push_back("unknown key " + key_path(it.key()));
  }

  std::string key_path(const std::string& key) const { return prefix_.empty() ? key : prefix_ + "." + key; }

 private:
  std::string where() const { return prefix_.empty() ? "config" : prefix_; }

  const json& j_;
  std::string prefix_;
  std::vector<std::string>& problems_;
  std::set<std::string> seen_;
  bool ok_ = true;
};

void read_ssl(const json& j, SSLConfig& c, std::vector<std::string>& problems) {
  Reader r(j, "ssl", problems);
  r.get("edge_drop_rate", c.edge_drop_rate);
  r.get("feature_mask_rate", c.feature_mask_rate);
  r.get("temperature", c.temperature);
  r.get("epochs", c.epochs);
  r.get("lr", c.lr);
  r.get("hidden_dim", c.hidden_dim);
  r.get("out_dim", c.out_dim);
  r.finish();
}

void read_model(const json& j, ModelConfig& c, std::vector<std::string>& problems) {
  Reader r(j, "model", problems);
  r.get("num_students", c.num_students);
  r.get("top_k", c.top_k);
  r.get("num_prototypes", c.num_prototypes);
  r.get("student_hidden", c.student_hidden);
  r.get("temperature", c.temperature);
  r.get("beta", c.beta);
  r.get("mu", c.mu);
  r.get("epsilon", c.epsilon);
  r.get("mask_drop_rate", c.mask_drop_rate);
  r.finish();
}

void read_train(const json& j, TrainConfig& c, std::vector<std::string>& problems) {
  Reader r(j, "train", problems);
  r.get("lr", c.lr);
  r.get("epochs", c.epochs);
  r.get("lambda", c.lambda);
  std::string opt = optimizer_name(c.optimizer);
  r.get("optimizer", opt);
  try {
    c.optimizer = parse_optimizer(opt);
  } catch (const ValidationError& e) {
    problems.push_back(r.key_path("optimizer") + ": " + e.what());
  }
  r.get("div_weight", c.div_weight);
  r.get("load_balance_weight", c.load_balance_weight);
  r.get("z_loss_weight", c.z_loss_weight);
  r.get("use_psd", c.use_psd);
  r.finish();
}

void read_injection(const json& j, InjectionSpec& c, std::vector<std::string>& problems) {
  Reader r(j, "injection", problems);
  r.get("clique_size", c.clique_size);
  r.get("clique_count", c.clique_count);
  r.get("feature_count", c.feature_count);
  r.get("candidates", c.candidates);
  r.finish();
}

[[noreturn]] void throw_problems(const std::vector<std::string>& problems) {
  std::string msg = "invalid config (" + std::to_string(problems.size()) + " problem" +
                    (problems.size() == 1 ? "" : "s") + "):";
  for (const auto& p : problems) msg += "\n  " + p;
  throw ValidationError(msg);
}

}  // namespace

void RunConfig::resolve() {
  ssl.seed = seed;
  train.seed = seed;
  injection.seed = seed;
}

std::vector<std::string> RunConfig::problems() const {
  std::vector<std::string> p;
  if (unify_dim == 0) p.push_back("unify_dim must be positive");
  try {
    ssl.validate();
  } catch (const ValidationError& e) {
    p.push_back(e.what());
  }
  for (auto& s : model.problems()) p.push_back(s);
  for (auto& s : train.problems()) p.push_back(s);
  if (injection.clique_size == 0) p.push_back("injection.clique_size must be positive");
  if (injection.clique_count == 0) p.push_back("injection.clique_count must be positive");
  if (injection.candidates == 0) p.push_back("injection.candidates must be positive");
  return p;
}

void RunConfig::validate() const {
  const auto p = problems();
  if (!p.empty()) throw_problems(p);
}

json to_json(const SSLConfig& c) {
  return {{"edge_drop_rate", c.edge_drop_rate}, {"feature_mask_rate", c.feature_mask_rate},
          {"temperature", c.temperature},       {"epochs", c.epochs},
          {"lr", c.lr},                         {"hidden_dim", c.hidden_dim},
          {"out_dim", c.out_dim}};
}

json to_json(const ModelConfig& c) {
  return {{"num_students", c.num_students}, {"top_k", c.top_k},       {"num_prototypes", c.num_prototypes},
          {"student_hidden", c.student_hidden}, {"temperature", c.temperature}, {"beta", c.beta},
          {"mu", c.mu},                     {"epsilon", c.epsilon}, {"mask_drop_rate", c.mask_drop_rate}};
}

json to_json(const TrainConfig& c) {
  return {{"lr", c.lr},
          {"epochs", c.epochs},
          {"lambda", c.lambda},
          {"optimizer", optimizer_name(c.optimizer)},
          {"div_weight", c.div_weight},
          {"load_balance_weight", c.load_balance_weight},
          {"z_loss_weight", c.z_loss_weight},
          {"use_psd", c.use_psd}};
}

json to_json(const InjectionSpec& c) {
  return {{"clique_size", c.clique_size},
          {"clique_count", c.clique_count},
          {"feature_count", c.feature_count},
          {"candidates", c.candidates}};
}

json to_json(const RunConfig& c) {
  return {{"seed", c.seed},
          {"unify_dim", c.unify_dim},
          {"ssl", to_json(c.ssl)},
          {"model", to_json(c.model)},
          {"train", to_json(c.train)},
          {"injection", to_json(c.injection)},
          {"paths", {{"train_graphs", c.train_graphs}, {"test_graphs", c.test_graphs}, {"output_dir", c.output_dir}}}};
}

namespace {

template <class T, class F>
T parse_section(const json& j, F read) {
  T c;
  std::vector<std::string> problems;
  read(j, c, problems);
  if (!problems.empty()) throw_problems(problems);
  return c;
}

}  // namespace

SSLConfig ssl_config_from_json(const json& j) { return parse_section<SSLConfig>(j, read_ssl); }
ModelConfig model_config_from_json(const json& j) { return parse_section<ModelConfig>(j, read_model); }
TrainConfig train_config_from_json(const json& j) { return parse_section<TrainConfig>(j, read_train); }
InjectionSpec injection_from_json(const json& j) { return parse_section<InjectionSpec>(j, read_injection); }

RunConfig run_config_from_json(const json& j) {
  RunConfig c;
  std::vector<std::string> problems;
  Reader r(j, "", problems);
  r.get("seed", c.seed);
  r.get("unify_dim", c.unify_dim);
  if (const json* s = r.child("ssl")) read_ssl(*s, c.ssl, problems);
  if (const json* s = r.child("model")) read_model(*s, c.model, problems);
  if (const json* s = r.child("train")) read_train(*s, c.train, problems);
  if (const json* s = r.child("injection")) read_injection(*s, c.injection, problems);
  if (const json* s = r.child("paths")) {
    Reader pr(*s, "paths", problems);
    pr.get("train_graphs", c.train_graphs);
    pr.get("test_graphs", c.test_graphs);
    pr.get("output_dir", c.output_dir);
    pr.finish();
  }
  r.finish();
  c.resolve();
  for (auto& p : c.problems()) problems.push_back(p);
  if (!problems.empty()) throw_problems(problems);
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
  return run_config_from_json(j);
}

std::string dump_config(const RunConfig& c) { return to_json(c).dump(2) + "\n"; }

std::string config_hash(const RunConfig& c) { return content_hash(to_json(c).dump()); }

}  // namespace promos
