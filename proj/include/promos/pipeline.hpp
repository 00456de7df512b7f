#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "promos/checkpoint.hpp"
#include "promos/error.hpp"
#include "promos/graph.hpp"
#include "promos/optimizer.hpp"
#include "promos/prototypes.hpp"
#include "promos/students.hpp"
#include "promos/teacher.hpp"

namespace promos {

struct ModelConfig {
  std::size_t num_students = 20;
  std::size_t top_k = 2;
  std::size_t num_prototypes = 20;  // per branch
  std::size_t student_hidden = 64;
  double temperature = 2.0;
  double beta = 1.0;
  double mu = 0.6;
  double epsilon = 1e-8;
  double mask_drop_rate = 0.1;

  std::vector<std::string> problems() const;
  void validate() const;
};

struct TrainConfig {
  double lr = 5e-3;
  std::size_t epochs = 10;
  double lambda = 0.5;
  std::uint64_t seed = 0;
  OptimizerKind optimizer = OptimizerKind::Sgd;
  double div_weight = 0.0;
  double load_balance_weight = 0.0;
  double z_loss_weight = 0.0;
  bool use_psd = true;  // false: the w/o-PSD ablation (no KL in training or scoring)

  std::vector<std::string> problems() const;
  void validate() const;
};

struct PromosModel {
  TeacherModel teacher;
  StudentEnsemble students;
  PrototypeCodebook global;  // shared branch
  PrototypeCodebook local;   // personalized branch
  ModelConfig model_config;
  TrainConfig train_config;

  std::size_t dim() const { return students.dim(); }
  void validate() const;
  /// Adapter, students, router and both codebooks. Never the encoder.
  std::vector<ad::Parameter*> trainable();
};

/// Stage A: codebooks from seeded k-means over the concatenated features of all
/// training graphs, fresh students and router. Graphs must already be unified.
PromosModel initialize(std::span<const Graph> train_graphs, TeacherModel teacher, const ModelConfig& mcfg,
                       const TrainConfig& tcfg);

struct LossTerms {
  ad::Var psd;
  ad::Var dcr;
  ad::Var div;
  ad::Var load_balance;
  ad::Var z_loss;
  ad::Var total;
};

/// L_PSD + λ L_DCR plus any optional term whose weight is non-zero.
LossTerms total_loss(ad::Tape& tape, const Graph& g, const PromosModel& model, const Mask& mask,
                     const TrainConfig& cfg);

struct StepRecord {
  std::size_t epoch = 0;
  std::size_t graph = 0;
  double loss = 0.0;
  double psd = 0.0;
  double dcr = 0.0;
};

struct TrainResult {
  PromosModel model;
  std::vector<StepRecord> steps;
  std::vector<double> epoch_loss;     // mean over graphs
  std::vector<double> epoch_wall_ms;  // kept apart from the deterministic trace
};

/// Thrown on a non-finite loss; carries the model from the last good step.
class TrainingAborted : public NumericError {
 public:
  TrainingAborted(const std::string& what, PromosModel last_good)
      : NumericError(what), last_good_(std::move(last_good)) {}
  const PromosModel& last_good() const { return last_good_; }

 private:
  PromosModel last_good_;
};

/// Stage B: per epoch, graphs in the given order, one full-graph optimizer step each.
TrainResult train(PromosModel model, std::span<const Graph> train_graphs, const TrainConfig& cfg);

struct ScoreReport {
  std::vector<double> scores;
  std::vector<double> psd_term;
  std::vector<double> geo_term;
  std::optional<double> auroc;
  std::optional<double> auprc;
  std::vector<std::size_t> expert_activation;
};

/// Stage C: zero-shot scoring with masks disabled. Does not modify the model.
ScoreReport score(const Graph& g, const PromosModel& model);

Checkpoint model_checkpoint(const PromosModel& m);
PromosModel model_from_checkpoint(const Checkpoint& ck);

}  // namespace promos
