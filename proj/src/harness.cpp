#include "repblend/harness.hpp"

#include "repblend/iprb.hpp"
#include "repblend/serialization.hpp"

#include <cereal/archives/portable_binary.hpp>
#include <cereal/types/optional.hpp>
#include <cereal/types/string.hpp>
#include <cereal/types/utility.hpp>
#include <cereal/types/vector.hpp>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace repblend {
namespace {

std::string rng_state(const Rng& rng) {
  std::ostringstream out;
  out << rng;
  return out.str();
}

Rng rng_from_state(const std::string& state) {
  Rng rng;
  std::istringstream in(state);
  in >> rng;
  if (!in) throw std::invalid_argument("corrupt RNG state in checkpoint");
  return rng;
}

Matrix build_adjacency(const ModelConfig& model, const LabelMatrix& labels) {
  switch (model.adjacency) {
    case AdjacencyKind::Uniform: return uniform_adjacency(labels.categories());
    case AdjacencyKind::Identity: return identity_adjacency(labels.categories());
    case AdjacencyKind::Cooccurrence: return cooccurrence_adjacency(labels);
  }
  return uniform_adjacency(labels.categories());
}

std::string proportion_dir(double p) {
  char buffer[32];
  std::snprintf(buffer, sizeof buffer, "p%.2f", p);
  return buffer;
}

/// d loss / d (blended vectors) for the vector-space instance blend.
void vector_instance_backward(const std::vector<CategoryVectors>& vectors,
                              const BlendMaskPair& masks, const std::vector<Eigen::Index>& partner,
                              const std::vector<Matrix>& grad_blended, const Matrix& grad_labels,
                              std::vector<Matrix>& grad_vectors, Vector& grad_alpha) {
  for (std::size_t n = 0; n < vectors.size(); ++n) {
    const auto m = static_cast<std::size_t>(partner[n]);
    for (Eigen::Index c = 0; c < masks.keep.cols(); ++c) {
      const auto row = static_cast<Eigen::Index>(n);
      grad_vectors[n].row(c) += masks.keep(row, c) * grad_blended[n].row(c);
      if (masks.partner(row, c) == 0.0) continue;
      grad_vectors[m].row(c) += masks.partner(row, c) * grad_blended[n].row(c);
      grad_alpha(c) += (vectors[n].row(c) - vectors[m].row(c)).dot(grad_blended[n].row(c)) -
                       grad_labels(row, c);
    }
  }
}

}  // namespace

TraceRow forward_backward(Model& model, std::span<const Matrix> images, const LabelMatrix& labels,
                        const StepOptions& options, const PrototypeBank* bank, Rng& prototype_rng,
                        Diagnostics* diag) {
  if (labels.samples() != static_cast<Eigen::Index>(images.size()) || images.empty()) {
    throw std::invalid_argument("forward_backward: one label row per image expected");
  }
  const auto batch = static_cast<Eigen::Index>(images.size());
  const auto bsz = images.size();
  const Pooling pooling = model.config().pooling;
  const bool instance_on = options.instance_blend;
  const bool prototype_on = options.prototype_blend && bank != nullptr;

  // Sum and mean pooling commute with the blends, so blending pooled
  // vectors gives the same result and gradients as blending maps, and the
  // maps themselves are only needed for prototype bins or max pooling.
  const bool vector_space = options.vector_space_blend || pooling != Pooling::Max;
  const bool linear_pool = pooling != Pooling::Max;
  const bool need_maps = !linear_pool || prototype_on;

  std::vector<GlobalFeatureMap> globals(bsz);
  std::vector<BackboneCache> backbone_caches(bsz);
  std::vector<DecoupleCache> decouple_caches(bsz);
  std::vector<Matrix> attention(bsz);
  std::vector<CategoryFeatureMaps> maps(need_maps ? bsz : 0);
  std::vector<CategoryVectors> clean(bsz);
  const FeatureShape shape = model.backbone.output_shape();
  for (std::size_t b = 0; b < bsz; ++b) {
    globals[b] = model.backbone.extract(images[b], &backbone_caches[b]);
    attention[b] = model.decoupler.attention(globals[b], &decouple_caches[b]);
    if (need_maps) maps[b] = attend(globals[b], attention[b]);
    clean[b] = linear_pool ? pool_attended(globals[b], attention[b], pooling) : pool(maps[b], pooling);
  }

  const Vector alpha = model.alpha.effective();
  const Vector beta = model.beta.effective();

  // Instance-perspective path.
  std::optional<BatchInstanceBlend> inst;
  std::vector<CategoryVectors> inst_vectors;
  BlendMaskPair vec_masks;
  std::vector<Eigen::Index> partner;
  LabelMatrix inst_labels;
  if (instance_on) {
    if (vector_space) {
      partner = pair_batch(batch, diag);
      const LabelMatrix partner_labels = flip_rows(labels, partner);
      vec_masks = build_blend_masks(labels, partner_labels, alpha);
      inst_labels = LabelMatrix(vec_masks.keep.cwiseProduct(labels.values()) +
                                vec_masks.partner.cwiseProduct(partner_labels.values()));
      for (std::size_t b = 0; b < bsz; ++b) {
        const auto m = static_cast<std::size_t>(partner[b]);
        const auto row = static_cast<Eigen::Index>(b);
        inst_vectors.push_back(vec_masks.keep.row(row).transpose().asDiagonal() * clean[b] +
                               vec_masks.partner.row(row).transpose().asDiagonal() * clean[m]);
      }
    } else {
      inst = blend_batch(maps, labels, alpha, diag);
      inst_labels = inst->labels;
      for (const auto& blended : inst->maps) inst_vectors.push_back(pool(blended, pooling));
    }
  }

  // Prototype-perspective path.
  std::vector<PrototypeChoice> choices;
  std::vector<PrototypeBlend> proto;
  std::vector<CategoryVectors> proto_vectors;
  Matrix proto_label_values;
  if (prototype_on) {
    proto_label_values.resize(batch, model.categories());
    for (std::size_t b = 0; b < bsz; ++b) {
      const Vector y = labels.row(static_cast<Eigen::Index>(b));
      choices.push_back(choose_prototype(maps[b], y, *bank, prototype_rng));
      const auto& choice = choices.back();
      if (vector_space) {
        CategoryVectors v = clean[b];
        Vector y_blend = y;
        if (choice.category) {
          const Eigen::Index c = *choice.category;
          CategoryFeatureMaps one{shape, {bank->prototype(c, choice.bin)}, Matrix::Zero(1, shape.positions())};
          v.row(c) = beta(c) * clean[b].row(c) + (1.0 - beta(c)) * pool(one, pooling).row(0);
          y_blend(c) = 1.0 - beta(c);
        }
        proto_vectors.push_back(std::move(v));
        proto_label_values.row(static_cast<Eigen::Index>(b)) = y_blend.transpose();
      } else {
        proto.push_back(apply_prototype_choice(maps[b], y, *bank, choice, beta));
        proto_vectors.push_back(pool(proto.back().maps, pooling));
        proto_label_values.row(static_cast<Eigen::Index>(b)) = proto.back().labels.transpose();
      }
    }
  }
  const LabelMatrix proto_labels =
      prototype_on ? LabelMatrix(proto_label_values) : LabelMatrix{};

  // Shared head over all active paths.
  std::vector<CategoryVectors> all_vectors = clean;
  all_vectors.insert(all_vectors.end(), inst_vectors.begin(), inst_vectors.end());
  all_vectors.insert(all_vectors.end(), proto_vectors.begin(), proto_vectors.end());
  HeadCache head_cache;
  const Matrix scores = model.head.forward(all_vectors, &head_cache);

  Matrix grad_scores = Matrix::Zero(scores.rows(), scores.cols());
  Matrix inst_grad_labels = Matrix::Zero(batch, model.categories());
  Matrix proto_grad_labels = Matrix::Zero(batch, model.categories());
  TraceRow row;
  auto path_loss = [&](const LabelMatrix& y, Eigen::Index offset, Matrix* grad_labels) {
    Scalar sum = 0.0;
    for (Eigen::Index b = 0; b < batch; ++b) {
      auto result = partial_bce_with_grad(y.row(b), scores.row(offset + b).transpose(), diag);
      sum += result.loss;
      grad_scores.row(offset + b) = result.grad_scores.transpose();
      if (grad_labels != nullptr) grad_labels->row(b) = result.grad_labels.transpose();
    }
    return sum;
  };
  row.clean = path_loss(labels, 0, nullptr);
  Eigen::Index offset = batch;
  if (instance_on) {
    row.instance = path_loss(inst_labels, offset, &inst_grad_labels);
    offset += batch;
  }
  if (prototype_on) row.prototype = path_loss(proto_labels, offset, &proto_grad_labels);
  row.classification = row.clean + row.instance + row.prototype;

  std::vector<Matrix> grad_contrastive;
  if (options.contrastive) {
    row.contrastive = contrastive_batch_loss(clean, labels, options.contrastive_options, diag,
                                             &grad_contrastive);
  }
  LossConfig weights;
  weights.contrastive_weight = options.contrastive_weight;
  row.total = total_loss(row.classification, row.contrastive, weights);
  row.mean_alpha = alpha.mean();
  row.mean_beta = beta.mean();

  // Backward.
  const std::vector<Matrix> grad_vectors = model.head.backward(head_cache, grad_scores);
  std::vector<Matrix> grad_clean(grad_vectors.begin(), grad_vectors.begin() + batch);
  if (options.contrastive) {
    for (std::size_t b = 0; b < bsz; ++b) {
      grad_clean[b] += options.contrastive_weight * grad_contrastive[b];
    }
  }
  Vector grad_alpha = Vector::Zero(model.categories());
  Vector grad_beta = Vector::Zero(model.categories());
  offset = batch;

  if (vector_space) {
    if (instance_on) {
      std::vector<Matrix> grad_inst(grad_vectors.begin() + offset,
                                    grad_vectors.begin() + offset + batch);
      vector_instance_backward(clean, vec_masks, partner, grad_inst, inst_grad_labels,
                               grad_clean, grad_alpha);
      offset += batch;
    }
    if (prototype_on) {
      for (std::size_t b = 0; b < bsz; ++b) {
        const Matrix& g = grad_vectors[static_cast<std::size_t>(offset) + b];
        const auto& choice = choices[b];
        if (!choice.category) {
          grad_clean[b] += g;
          continue;
        }
        const Eigen::Index c = *choice.category;
        CategoryFeatureMaps one{shape, {bank->prototype(c, choice.bin)}, Matrix::Zero(1, shape.positions())};
        Matrix pass = g;
        pass.row(c) *= beta(c);
        grad_clean[b] += pass;
        grad_beta(c) += (clean[b].row(c) - pool(one, pooling).row(0)).dot(g.row(c)) -
                        proto_grad_labels(static_cast<Eigen::Index>(b), c);
      }
    }
  }

  if (linear_pool) {
    for (std::size_t b = 0; b < bsz; ++b) {
      const Matrix grad_f = model.decoupler.backward_pooled(globals[b], attention[b],
                                                             decouple_caches[b], grad_clean[b], pooling);
      model.backbone.backward(backbone_caches[b], grad_f);
    }
  } else {
    std::vector<std::vector<Matrix>> grad_maps(bsz);
    for (std::size_t b = 0; b < bsz; ++b) grad_maps[b] = pool_backward(maps[b], grad_clean[b], pooling);
    if (!vector_space) {
      if (instance_on) {
        std::vector<std::vector<Matrix>> grad_blended(bsz);
        for (std::size_t b = 0; b < bsz; ++b) {
          grad_blended[b] =
              pool_backward(inst->maps[b], grad_vectors[static_cast<std::size_t>(offset) + b], pooling);
        }
        grad_alpha += blend_batch_backward(maps, *inst, grad_blended, inst_grad_labels, grad_maps);
        offset += batch;
      }
      if (prototype_on) {
        for (std::size_t b = 0; b < bsz; ++b) {
          const auto grad_blended =
              pool_backward(proto[b].maps, grad_vectors[static_cast<std::size_t>(offset) + b], pooling);
          grad_beta += prototype_blend_backward(
              maps[b], *bank, choices[b], beta, grad_blended,
              proto_grad_labels.row(static_cast<Eigen::Index>(b)).transpose(), grad_maps[b]);
        }
      }
    }
    for (std::size_t b = 0; b < bsz; ++b) {
      const Matrix grad_f =
          model.decoupler.backward(globals[b], maps[b], decouple_caches[b], grad_maps[b]);
      model.backbone.backward(backbone_caches[b], grad_f);
    }
  }
  model.alpha.accumulate(grad_alpha);
  model.beta.accumulate(grad_beta);
  return row;
}

namespace {

class Trainer {
 public:
  Trainer(const ExperimentConfig& config, const Dataset& data, const Matrix& adjacency)
      : config_(config),
        data_(data),
        model_(config.model, data.category_names, adjacency, config.seed),
        shuffle_rng_(derive_stream(config.seed, "batch-order")),
        prototype_rng_(derive_stream(config.seed, "prototype-sampling")),
        augment_rng_(derive_stream(config.seed, "augmentation")) {
    AdamConfig adam;
    adam.learning_rate = config.optimizer.learning_rate;
    adam.weight_decay = config.optimizer.weight_decay;
    adam.beta1 = config.optimizer.beta1;
    adam.beta2 = config.optimizer.beta2;
    optimizer_ = Adam(model_.trainable_parameters(), adam);
    adjacency_ = adjacency;
  }

  void restore(const Checkpoint& ckpt) {
    std::map<std::string, const Matrix*> by_name;
    for (const auto& [name, value] : ckpt.params) by_name[name] = &value;
    for (auto& p : model_.parameters()) {
      const auto it = by_name.find(p.name);
      if (it == by_name.end()) throw std::invalid_argument("checkpoint lacks parameter " + p.name);
      p.param->value = *it->second;
    }
    optimizer_.restore(ckpt.optimizer_steps, ckpt.optimizer_m, ckpt.optimizer_v);
    bank_ = ckpt.bank;
    bank_epochs_ = ckpt.bank_epochs;
    shuffle_rng_ = rng_from_state(ckpt.shuffle_rng);
    prototype_rng_ = rng_from_state(ckpt.prototype_rng);
    augment_rng_ = rng_from_state(ckpt.augment_rng);
    iteration_ = ckpt.iteration;
    epoch_ = ckpt.epoch;
  }

  Checkpoint snapshot() {
    Checkpoint ckpt;
    // The output location is not part of the run, so identical runs written
    // to different directories give identical checkpoints.
    ExperimentConfig stored = config_;
    stored.output_dir.clear();
    ckpt.config_json = nlohmann::json(stored).dump();
    ckpt.category_names = data_.category_names;
    ckpt.adjacency = adjacency_;
    ckpt.epoch = epoch_;
    for (auto& p : model_.parameters()) ckpt.params.emplace_back(p.name, p.param->value);
    ckpt.optimizer_steps = optimizer_.steps();
    ckpt.optimizer_m = optimizer_.first_moments();
    ckpt.optimizer_v = optimizer_.second_moments();
    ckpt.bank = bank_;
    ckpt.bank_epochs = bank_epochs_;
    ckpt.shuffle_rng = rng_state(shuffle_rng_);
    ckpt.prototype_rng = rng_state(prototype_rng_);
    ckpt.augment_rng = rng_state(augment_rng_);
    ckpt.iteration = iteration_;
    return ckpt;
  }

  void run(const TrainHooks& hooks, std::vector<TraceRow>& trace) {
    const auto& opt = config_.optimizer;
    const auto& loss = config_.loss;
    const auto samples = static_cast<std::size_t>(data_.size());
    std::vector<Eigen::Index> order(samples);

    for (int epoch = epoch_ + 1; epoch <= opt.epochs; ++epoch) {
      const Scalar lr = opt.learning_rate *
                        std::pow(opt.decay_factor, static_cast<Scalar>((epoch - 1) / opt.decay_every));
      const bool blending = epoch >= loss.blend_start_epoch;
      if (config_.toggles.prototype_blend && blending &&
          (epoch - loss.blend_start_epoch) % loss.prototype_refresh_period == 0) {
        rebuild_bank(epoch);
      }

      std::iota(order.begin(), order.end(), Eigen::Index{0});
      for (std::size_t i = samples; i > 1; --i) {
        std::swap(order[i - 1], order[uniform_index(shuffle_rng_, i)]);
      }
      for (std::size_t start = 0; start < samples; start += static_cast<std::size_t>(opt.batch_size)) {
        const std::size_t end = std::min(samples, start + static_cast<std::size_t>(opt.batch_size));
        std::vector<Eigen::Index> batch(order.begin() + static_cast<std::ptrdiff_t>(start),
                                        order.begin() + static_cast<std::ptrdiff_t>(end));
        TraceRow row = step(batch, blending, lr);
        row.epoch = epoch;
        row.iteration = ++iteration_;
        trace.push_back(row);
        if (hooks.on_iteration) hooks.on_iteration(row);
      }
      epoch_ = epoch;
      if (hooks.on_epoch) hooks.on_epoch(snapshot());
      if (hooks.stop_after_epoch > 0 && epoch >= hooks.stop_after_epoch) break;
    }
  }

  const std::vector<int>& bank_epochs() const { return bank_epochs_; }
  Diagnostics diagnostics() const { return diag_; }

 private:
  void rebuild_bank(int epoch) {
    PrototypeAccumulator acc(model_.categories(), model_.backbone.output_shape(),
                             config_.model.prototype_level);
    for (Eigen::Index n = 0; n < data_.size(); ++n) {
      acc.add(model_.feature_maps(data_.images[static_cast<std::size_t>(n)].to_matrix()),
              data_.labels.row(n));
    }
    bank_ = acc.finish(epoch);
    bank_epochs_.push_back(epoch);
  }

  TraceRow step(const std::vector<Eigen::Index>& batch_index, bool blending, Scalar lr) {
    const auto& toggles = config_.toggles;
    StepOptions options;
    options.instance_blend = blending && toggles.instance_blend;
    options.prototype_blend = blending && toggles.prototype_blend;
    options.contrastive = toggles.contrastive;
    options.vector_space_blend = toggles.vector_space_blend;
    options.contrastive_options.known_pairs_only = toggles.contrastive_known_pairs_only;
    options.contrastive_weight = config_.loss.contrastive_weight;

    std::vector<Matrix> images;
    images.reserve(batch_index.size());
    for (const Eigen::Index n : batch_index) {
      images.push_back(data_.images[static_cast<std::size_t>(n)].to_matrix());
      if (toggles.augment_flip && uniform_index(augment_rng_, 2) == 1) {
        images.back() = flip_horizontal(images.back(), config_.model.backbone.input_height,
                                        config_.model.backbone.input_width);
      }
    }
    model_.zero_grad();
    const TraceRow row = forward_backward(model_, images, data_.labels.select_rows(batch_index), options,
                                          bank_ ? &*bank_ : nullptr, prototype_rng_, &diag_);
    optimizer_.step(model_.trainable_parameters(), lr);
    return row;
  }

  const ExperimentConfig& config_;
  const Dataset& data_;
  Model model_;
  Matrix adjacency_;
  Adam optimizer_;
  Rng shuffle_rng_;
  Rng prototype_rng_;
  Rng augment_rng_;
  std::optional<PrototypeBank> bank_;
  std::vector<int> bank_epochs_;
  std::int64_t iteration_ = 0;
  int epoch_ = 0;
  Diagnostics diag_;
};

}  // namespace

std::string trace_csv_header() {
  return "epoch,iteration,L_cls,L_cst,total,mean_alpha,mean_beta,L_clean,L_instance,L_prototype\n";
}

std::string format_trace_row(const TraceRow& r) {
  char buffer[320];
  std::snprintf(buffer, sizeof buffer, "%d,%lld,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g\n",
                r.epoch, static_cast<long long>(r.iteration), r.classification, r.contrastive,
                r.total, r.mean_alpha, r.mean_beta, r.clean, r.instance, r.prototype);
  return buffer;
}

template <class Archive>
void serialize(Archive& ar, Checkpoint& c) {
  ar(c.config_json, c.category_names, c.adjacency, c.epoch, c.params, c.optimizer_steps,
     c.optimizer_m, c.optimizer_v, c.bank, c.bank_epochs, c.shuffle_rng, c.prototype_rng,
     c.augment_rng, c.iteration);
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  cereal::PortableBinaryOutputArchive archive(out);
  archive(checkpoint);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  cereal::PortableBinaryInputArchive archive(in);
  Checkpoint checkpoint;
  archive(checkpoint);
  return checkpoint;
}

Model restore_model(const Checkpoint& checkpoint) {
  const auto config = nlohmann::json::parse(checkpoint.config_json).get<ExperimentConfig>();
  Model model(config.model, checkpoint.category_names, checkpoint.adjacency, config.seed);
  std::map<std::string, const Matrix*> by_name;
  for (const auto& [name, value] : checkpoint.params) by_name[name] = &value;
  for (auto& p : model.parameters()) {
    const auto it = by_name.find(p.name);
    if (it == by_name.end()) throw std::invalid_argument("checkpoint lacks parameter " + p.name);
    p.param->value = *it->second;
  }
  return model;
}

TrainResult train(const ExperimentConfig& config, const Dataset& train_set,
                  const std::optional<Checkpoint>& resume, const TrainHooks& hooks) {
  config.validate();
  if (train_set.size() < 1) throw std::invalid_argument("train: empty dataset");
  if (config.toggles.prototype_blend && !(train_set.labels.values().array() == 1.0).any()) {
    throw std::invalid_argument(
        "train: prototype blending needs at least one known positive label, found none");
  }
  const Matrix adjacency = resume ? resume->adjacency : build_adjacency(config.model, train_set.labels);
  Trainer trainer(config, train_set, adjacency);
  if (resume) trainer.restore(*resume);

  TrainResult result;
  trainer.run(hooks, result.trace);
  result.checkpoint = trainer.snapshot();
  result.bank_epochs = trainer.bank_epochs();
  result.diagnostics = trainer.diagnostics();
  return result;
}

EvalReport evaluate(const Model& model, const Dataset& test, double proportion, Diagnostics* diag) {
  if (test.labels.categories() != model.categories()) {
    throw std::invalid_argument("evaluate: test set category count differs from the model");
  }
  const Matrix scores = model.predict_all(test.images);
  return evaluate_scores(scores, test.labels.binary(), proportion, 0.5, diag);
}

EvalReport evaluate(const Checkpoint& checkpoint, const Dataset& test, double proportion,
                    Diagnostics* diag) {
  if (static_cast<Eigen::Index>(checkpoint.category_names.size()) != test.labels.categories()) {
    throw std::invalid_argument("evaluate: test set category count differs from the checkpoint");
  }
  return evaluate(restore_model(checkpoint), test, proportion, diag);
}

ExperimentData load_experiment_data(const ExperimentConfig& config) {
  ExperimentData data;
  if (config.data.kind == "synthetic") {
    SyntheticSceneSpec train_spec = config.data.scene;
    SyntheticSceneSpec test_spec = config.data.scene;
    test_spec.seed = config.data.scene.seed ^ 0x9e3779b97f4a7c15ULL;
    data.train = generate_synthetic(train_spec, config.data.train_images);
    data.test = generate_synthetic(test_spec, config.data.test_images);
  } else {
    data.train = read_dataset(config.data.train_dir);
    data.test = read_dataset(config.data.test_dir);
  }
  return data;
}

LabelMatrix partial_labels(const ExperimentConfig& config, const LabelMatrix& full, double proportion) {
  ProportionSpec spec;
  spec.proportion = proportion;
  const auto tag = static_cast<std::uint64_t>(std::llround(proportion * 1000.0));
  spec.seed = config.seed * 1000003ULL + tag;
  return drop_labels(full, spec);
}

SweepResult sweep(const ExperimentConfig& config, const ExperimentData& data) {
  config.validate();
  SweepResult result;
  const std::filesystem::path root = config.output_dir.empty()
                                         ? std::filesystem::path{}
                                         : std::filesystem::path(config.output_dir) / config.name;
  for (double p : config.proportions) {
    Dataset train_set = data.train;
    if (!config.data.train_labels.empty()) {
      train_set.labels = read_label_csv(config.data.train_labels).labels;
    } else {
      train_set.labels = partial_labels(config, data.train.labels, p);
    }

    std::ofstream trace_out;
    TrainHooks hooks;
    std::filesystem::path run_dir;
    if (!root.empty()) {
      run_dir = root / proportion_dir(p);
      std::filesystem::create_directories(run_dir);
      trace_out.open(run_dir / "trace.csv", std::ios::binary);
      trace_out << trace_csv_header();
      hooks.on_iteration = [&trace_out](const TraceRow& row) {
        trace_out << format_trace_row(row);
        trace_out.flush();
      };
    }
    TrainResult trained = train(config, train_set, std::nullopt, hooks);
    EvalReport report = evaluate(restore_model(trained.checkpoint), data.test, p);
    if (!root.empty()) {
      report.loss_trace = (std::filesystem::path(proportion_dir(p)) / "trace.csv").generic_string();
      save_checkpoint(run_dir / "checkpoint.bin", trained.checkpoint);
      const std::vector<EvalReport> single{report};
      std::ofstream(run_dir / "report.json", std::ios::binary) << format_report_json(single);
    }
    result.reports.push_back(std::move(report));
    result.traces.push_back(std::move(trained.trace));
  }
  if (!root.empty()) {
    std::ofstream(root / "report.csv", std::ios::binary) << format_report_csv(result.reports);
    std::ofstream(root / "report.json", std::ios::binary) << format_report_json(result.reports);
  }
  return result;
}

}  // namespace repblend
