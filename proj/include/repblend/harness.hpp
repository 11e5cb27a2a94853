#pragma once

#include "repblend/heads.hpp"
#include "repblend/labelspace.hpp"
#include "repblend/metrics.hpp"
#include "repblend/model.hpp"
#include "repblend/optim.hpp"
#include "repblend/pprb.hpp"
#include "repblend/synthetic.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <ostream>
#include <string>
#include <vector>

namespace repblend {

struct DataSourceConfig {
  // "synthetic" generates scenes in memory; "directory" reads datasets
  // written by `write_dataset`.
  std::string kind = "synthetic";
  SyntheticSceneSpec scene;
  int train_images = 2000;
  int test_images = 500;
  std::string train_dir;
  std::string test_dir;
  // Optional CSV with already-partial training labels; skips label dropping.
  std::string train_labels;
};

struct OptimizerConfig {
  Scalar learning_rate = 1e-3;
  Scalar weight_decay = 5e-4;
  Scalar beta1 = 0.9;
  Scalar beta2 = 0.999;
  int batch_size = 16;
  int epochs = 12;
  int decay_every = 10;
  Scalar decay_factor = 0.1;
};

struct ModuleToggles {
  bool instance_blend = true;
  bool prototype_blend = true;
  bool contrastive = true;
  bool vector_space_blend = false;
  bool contrastive_known_pairs_only = false;
  bool augment_flip = true;
};

struct ExperimentConfig {
  std::string name = "run";
  DataSourceConfig data;
  std::vector<double> proportions = {0.2};
  OptimizerConfig optimizer;
  LossConfig loss;
  ModelConfig model;
  ModuleToggles toggles;
  std::uint64_t seed = 0;
  std::string output_dir;

  /// Desk-scale defaults (64x64 synthetic scenes, 12 epochs, batch 16).
  static ExperimentConfig desk();
  /// Full-scale optimiser and schedule constants (448x448 input, lr 1e-5,
  /// batch 32, 20 epochs). Recorded for reference; not practical on a CPU.
  static ExperimentConfig full_scale();

  void validate() const;
};

void to_json(nlohmann::json& j, const ExperimentConfig& config);
void from_json(const nlohmann::json& j, ExperimentConfig& config);

ExperimentConfig load_config(const std::filesystem::path& path);
/// Applies `dotted.key=value`; the value is parsed as JSON, falling back to
/// a plain string.
void apply_override(ExperimentConfig& config, const std::string& assignment);

/// Ablation rows: baseline, instance-only, prototype-only, full.
struct AblationVariant {
  std::string method;
  ModuleToggles toggles;
};
std::vector<AblationVariant> ablation_variants(const ModuleToggles& base);

struct TraceRow {
  int epoch = 0;
  std::int64_t iteration = 0;
  Scalar classification = 0.0;
  Scalar contrastive = 0.0;
  Scalar total = 0.0;
  Scalar mean_alpha = 0.0;
  Scalar mean_beta = 0.0;
  Scalar clean = 0.0;
  Scalar instance = 0.0;
  Scalar prototype = 0.0;
};

std::string trace_csv_header();
std::string format_trace_row(const TraceRow& row);

struct StepOptions {
  bool instance_blend = false;
  bool prototype_blend = false;
  bool contrastive = false;
  bool vector_space_blend = false;
  ContrastiveOptions contrastive_options;
  Scalar contrastive_weight = 0.05;
};

/// One batch through every active path. Adds the gradient of `total` into
/// the model's parameters (the caller zeroes them) and returns the loss
/// terms. Prototype choices consume `prototype_rng`; `bank` may be null.
TraceRow forward_backward(Model& model, std::span<const Matrix> images, const LabelMatrix& labels,
                          const StepOptions& options, const PrototypeBank* bank, Rng& prototype_rng,
                          Diagnostics* diag = nullptr);

struct Checkpoint {
  std::string config_json;
  std::vector<std::string> category_names;
  Matrix adjacency;
  int epoch = 0;  // last completed epoch
  std::vector<std::pair<std::string, Matrix>> params;
  std::int64_t optimizer_steps = 0;
  std::vector<Matrix> optimizer_m;
  std::vector<Matrix> optimizer_v;
  std::optional<PrototypeBank> bank;
  std::vector<int> bank_epochs;
  std::string shuffle_rng;
  std::string prototype_rng;
  std::string augment_rng;
  std::int64_t iteration = 0;

  bool operator==(const Checkpoint&) const = default;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Rebuilds the model a checkpoint describes.
Model restore_model(const Checkpoint& checkpoint);

struct TrainHooks {
  // Receives each trace row as soon as its iteration finishes.
  std::function<void(const TraceRow&)> on_iteration;
  // Receives the checkpoint at the end of every epoch.
  std::function<void(const Checkpoint&)> on_epoch;
  // Stop after this epoch (for resumable runs); 0 runs to completion.
  int stop_after_epoch = 0;
};

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<TraceRow> trace;
  std::vector<int> bank_epochs;
  Diagnostics diagnostics;
};

/// Trains on `train` (partial labels). Passing `resume` continues from the
/// end of its epoch.
TrainResult train(const ExperimentConfig& config, const Dataset& train,
                  const std::optional<Checkpoint>& resume = std::nullopt,
                  const TrainHooks& hooks = {});

/// Clean forward path only; `test` must be completely labelled.
EvalReport evaluate(const Model& model, const Dataset& test, double proportion,
                    Diagnostics* diag = nullptr);
EvalReport evaluate(const Checkpoint& checkpoint, const Dataset& test, double proportion,
                    Diagnostics* diag = nullptr);

struct ExperimentData {
  Dataset train;  // complete labels
  Dataset test;
};

ExperimentData load_experiment_data(const ExperimentConfig& config);

/// Seed-derived label drop for one proportion.
LabelMatrix partial_labels(const ExperimentConfig& config, const LabelMatrix& full, double proportion);

struct SweepResult {
  std::vector<EvalReport> reports;
  std::vector<std::vector<TraceRow>> traces;
};

/// Train + evaluate per proportion with a shared base seed. When
/// `config.output_dir` is set, traces, checkpoints and reports are written
/// below it.
SweepResult sweep(const ExperimentConfig& config, const ExperimentData& data);

}  // namespace repblend
