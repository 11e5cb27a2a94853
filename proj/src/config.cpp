#include "repblend/harness.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

namespace repblend {

NLOHMANN_JSON_SERIALIZE_ENUM(Pooling, {{Pooling::Sum, "sum"}, {Pooling::Mean, "mean"}, {Pooling::Max, "max"}})
NLOHMANN_JSON_SERIALIZE_ENUM(AdjacencyKind, {{AdjacencyKind::Uniform, "uniform"},
                                             {AdjacencyKind::Cooccurrence, "cooccurrence"},
                                             {AdjacencyKind::Identity, "identity"}})

namespace {

using nlohmann::json;

json stages_to_json(const std::vector<ConvStage>& stages) {
  json out = json::array();
  for (const auto& s : stages) {
    out.push_back({{"channels", s.channels}, {"kernel", s.kernel}, {"stride", s.stride},
                   {"padding", s.padding}, {"relu", s.relu}});
  }
  return out;
}

std::vector<ConvStage> stages_from_json(const json& j) {
  std::vector<ConvStage> stages;
  for (const auto& s : j) {
    stages.push_back({s.at("channels").get<Eigen::Index>(), s.value("kernel", Eigen::Index{3}),
                      s.value("stride", Eigen::Index{1}), s.value("padding", Eigen::Index{0}),
                      s.value("relu", true)});
  }
  return stages;
}

// Rejects keys the schema does not know; arrays are taken as-is.
void check_known_keys(const json& reference, const json& candidate, const std::string& where) {
  if (!candidate.is_object() || !reference.is_object()) return;
  for (const auto& [key, value] : candidate.items()) {
    if (!reference.contains(key)) throw std::invalid_argument("unknown config key: " + where + key);
    check_known_keys(reference.at(key), value, where + key + ".");
  }
}

}  // namespace

ExperimentConfig ExperimentConfig::desk() { return ExperimentConfig{}; }

ExperimentConfig ExperimentConfig::full_scale() {
  ExperimentConfig config;
  config.name = "full-scale";
  config.optimizer.learning_rate = 1e-5;
  config.optimizer.batch_size = 32;
  config.optimizer.epochs = 20;
  config.optimizer.decay_every = 10;
  config.optimizer.decay_factor = 0.1;
  config.optimizer.weight_decay = 5e-4;
  config.model.backbone.input_height = 448;
  config.model.backbone.input_width = 448;
  config.data.scene.image_size = 448;
  config.proportions = {0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9};
  return config;
}

void ExperimentConfig::validate() const {
  loss.validate();
  model.backbone.validate();
  if (data.kind != "synthetic" && data.kind != "directory") {
    throw std::invalid_argument("data.kind must be synthetic or directory");
  }
  if (proportions.empty()) throw std::invalid_argument("at least one proportion is required");
  for (double p : proportions) {
    if (!(p > 0.0 && p <= 1.0)) throw std::invalid_argument("proportions must lie in (0, 1]");
  }
  if (optimizer.batch_size < 1 || optimizer.epochs < 1 || optimizer.decay_every < 1) {
    throw std::invalid_argument("optimizer batch size, epochs and decay period must be positive");
  }
  if (!(optimizer.learning_rate > 0.0)) throw std::invalid_argument("learning rate must be positive");
  if (model.prototype_level < 0 || model.prototype_level > 3) {
    throw std::invalid_argument("model.prototype_level must be in [0, 3]");
  }
  if (model.propagation_steps < 0) throw std::invalid_argument("propagation steps must be >= 0");
}

void to_json(nlohmann::json& j, const ExperimentConfig& c) {
  const auto& s = c.data.scene;
  const auto& b = c.model.backbone;
  j = json{
      {"name", c.name},
      {"seed", c.seed},
      {"output_dir", c.output_dir},
      {"proportions", c.proportions},
      {"data",
       {{"kind", c.data.kind},
        {"train_images", c.data.train_images},
        {"test_images", c.data.test_images},
        {"train_dir", c.data.train_dir},
        {"test_dir", c.data.test_dir},
        {"train_labels", c.data.train_labels},
        {"scene",
         {{"categories", s.categories},
          {"image_size", s.image_size},
          {"min_objects", s.min_objects},
          {"max_objects", s.max_objects},
          {"clutter", s.clutter},
          {"seed", s.seed},
          {"category_pool", s.category_pool}}}}},
      {"optimizer",
       {{"learning_rate", c.optimizer.learning_rate},
        {"weight_decay", c.optimizer.weight_decay},
        {"beta1", c.optimizer.beta1},
        {"beta2", c.optimizer.beta2},
        {"batch_size", c.optimizer.batch_size},
        {"epochs", c.optimizer.epochs},
        {"decay_every", c.optimizer.decay_every},
        {"decay_factor", c.optimizer.decay_factor}}},
      {"loss",
       {{"contrastive_weight", c.loss.contrastive_weight},
        {"blend_start_epoch", c.loss.blend_start_epoch},
        {"prototype_refresh_period", c.loss.prototype_refresh_period}}},
      {"model",
       {{"backbone",
         {{"input_channels", b.input_channels},
          {"input_height", b.input_height},
          {"input_width", b.input_width},
          {"stages", stages_to_json(b.stages)},
          {"freeze_depth", b.freeze_depth},
          {"pretrained_weights", b.pretrained_weights}}},
        {"embedding_dim", c.model.embedding_dim},
        {"joint_dim", c.model.joint_dim},
        {"pooling", c.model.pooling},
        {"propagation_steps", c.model.propagation_steps},
        {"adjacency", c.model.adjacency},
        {"embedding_file", c.model.embedding_file},
        {"prototype_level", c.model.prototype_level},
        {"alpha_init", c.model.alpha_init},
        {"beta_init", c.model.beta_init}}},
      {"toggles",
       {{"instance_blend", c.toggles.instance_blend},
        {"prototype_blend", c.toggles.prototype_blend},
        {"contrastive", c.toggles.contrastive},
        {"vector_space_blend", c.toggles.vector_space_blend},
        {"contrastive_known_pairs_only", c.toggles.contrastive_known_pairs_only},
        {"augment_flip", c.toggles.augment_flip}}},
  };
}

void from_json(const nlohmann::json& input, ExperimentConfig& c) {
  json reference = ExperimentConfig::desk();
  check_known_keys(reference, input, "");
  json j = reference;
  j.merge_patch(input);

  c.name = j.at("name").get<std::string>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.output_dir = j.at("output_dir").get<std::string>();
  c.proportions = j.at("proportions").get<std::vector<double>>();

  const auto& d = j.at("data");
  c.data.kind = d.at("kind").get<std::string>();
  c.data.train_images = d.at("train_images").get<int>();
  c.data.test_images = d.at("test_images").get<int>();
  c.data.train_dir = d.at("train_dir").get<std::string>();
  c.data.test_dir = d.at("test_dir").get<std::string>();
  c.data.train_labels = d.at("train_labels").get<std::string>();
  const auto& s = d.at("scene");
  c.data.scene.categories = s.at("categories").get<int>();
  c.data.scene.image_size = s.at("image_size").get<int>();
  c.data.scene.min_objects = s.at("min_objects").get<int>();
  c.data.scene.max_objects = s.at("max_objects").get<int>();
  c.data.scene.clutter = s.at("clutter").get<double>();
  c.data.scene.seed = s.at("seed").get<std::uint64_t>();
  c.data.scene.category_pool = s.at("category_pool").get<std::vector<int>>();

  const auto& o = j.at("optimizer");
  c.optimizer.learning_rate = o.at("learning_rate").get<Scalar>();
  c.optimizer.weight_decay = o.at("weight_decay").get<Scalar>();
  c.optimizer.beta1 = o.at("beta1").get<Scalar>();
  c.optimizer.beta2 = o.at("beta2").get<Scalar>();
  c.optimizer.batch_size = o.at("batch_size").get<int>();
  c.optimizer.epochs = o.at("epochs").get<int>();
  c.optimizer.decay_every = o.at("decay_every").get<int>();
  c.optimizer.decay_factor = o.at("decay_factor").get<Scalar>();

  const auto& l = j.at("loss");
  c.loss.contrastive_weight = l.at("contrastive_weight").get<Scalar>();
  c.loss.blend_start_epoch = l.at("blend_start_epoch").get<int>();
  c.loss.prototype_refresh_period = l.at("prototype_refresh_period").get<int>();

  const auto& m = j.at("model");
  const auto& b = m.at("backbone");
  c.model.backbone.input_channels = b.at("input_channels").get<Eigen::Index>();
  c.model.backbone.input_height = b.at("input_height").get<Eigen::Index>();
  c.model.backbone.input_width = b.at("input_width").get<Eigen::Index>();
  c.model.backbone.stages = stages_from_json(b.at("stages"));
  c.model.backbone.freeze_depth = b.at("freeze_depth").get<int>();
  c.model.backbone.pretrained_weights = b.at("pretrained_weights").get<std::string>();
  c.model.embedding_dim = m.at("embedding_dim").get<Eigen::Index>();
  c.model.joint_dim = m.at("joint_dim").get<Eigen::Index>();
  c.model.pooling = m.at("pooling").get<Pooling>();
  c.model.propagation_steps = m.at("propagation_steps").get<int>();
  c.model.adjacency = m.at("adjacency").get<AdjacencyKind>();
  c.model.embedding_file = m.at("embedding_file").get<std::string>();
  c.model.prototype_level = m.at("prototype_level").get<int>();
  c.model.alpha_init = m.at("alpha_init").get<Scalar>();
  c.model.beta_init = m.at("beta_init").get<Scalar>();

  const auto& t = j.at("toggles");
  c.toggles.instance_blend = t.at("instance_blend").get<bool>();
  c.toggles.prototype_blend = t.at("prototype_blend").get<bool>();
  c.toggles.contrastive = t.at("contrastive").get<bool>();
  c.toggles.vector_space_blend = t.at("vector_space_blend").get<bool>();
  c.toggles.contrastive_known_pairs_only = t.at("contrastive_known_pairs_only").get<bool>();
  c.toggles.augment_flip = t.at("augment_flip").get<bool>();
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config " + path.string());
  ExperimentConfig config = nlohmann::json::parse(in).get<ExperimentConfig>();
  config.validate();
  return config;
}

void apply_override(ExperimentConfig& config, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw std::invalid_argument("override must look like key.path=value: " + assignment);
  }
  const std::string key = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);
  nlohmann::json value;
  try {
    value = nlohmann::json::parse(raw);
  } catch (const nlohmann::json::parse_error&) {
    value = raw;
  }
  std::string pointer = "/" + key;
  for (auto& ch : pointer) {
    if (ch == '.') ch = '/';
  }
  nlohmann::json doc = config;
  const nlohmann::json::json_pointer ptr(pointer);
  if (!doc.contains(ptr)) throw std::invalid_argument("unknown config key: " + key);
  doc[ptr] = value;
  config = doc.get<ExperimentConfig>();
}

std::vector<AblationVariant> ablation_variants(const ModuleToggles& base) {
  ModuleToggles baseline = base;
  baseline.instance_blend = false;
  baseline.prototype_blend = false;
  baseline.contrastive = false;
  ModuleToggles instance = base;
  instance.instance_blend = true;
  instance.prototype_blend = false;
  instance.contrastive = true;
  ModuleToggles prototype = base;
  prototype.instance_blend = false;
  prototype.prototype_blend = true;
  prototype.contrastive = true;
  ModuleToggles full = base;
  full.instance_blend = true;
  full.prototype_blend = true;
  full.contrastive = true;
  return {{"baseline", baseline}, {"instance", instance}, {"prototype", prototype}, {"full", full}};
}

}  // namespace repblend
