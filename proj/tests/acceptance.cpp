// Acceptance checks. Prints one PASS/FAIL line per criterion on stdout and
// exits nonzero when any fails. Pass criterion numbers as arguments to run a
// subset.

#include "oracles.hpp"
#include "repblend/harness.hpp"
#include "repblend/iprb.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>
#include <string>

using namespace repblend;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

std::string fmt(const char* format, double a) {
  char buffer[128];
  std::snprintf(buffer, sizeof buffer, format, a);
  return buffer;
}

Scalar max_abs_diff(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) return std::numeric_limits<Scalar>::infinity();
  return a.size() == 0 ? 0.0 : (a - b).cwiseAbs().maxCoeff();
}

Vector random_ratios(Rng& rng, Eigen::Index categories) {
  Vector r(categories);
  for (Eigen::Index c = 0; c < categories; ++c) r(c) = oracle::uniform(rng, 0.01, 0.99);
  return r;
}

// Shared by criteria 1 and 2: randomized IPRB and PPRB instances checked
// against the loop oracles, counting known-entry violations on the way.
struct BlendSweep {
  int instances = 0;
  Scalar worst = 0.0;
  long violations = 0;
  long bad_choices = 0;
  double seconds = 0.0;
};

const BlendSweep& blend_sweep() {
  static const BlendSweep result = [] {
    BlendSweep out;
    const auto start = Clock::now();
    Rng rng = derive_stream(101, "acceptance-blend");
    const FeatureShape shape{3, 4, 4};
    auto check_known = [&](const LabelMatrix& y, Eigen::Index n, const CategoryFeatureMaps& before,
                           const CategoryFeatureMaps& after, const Vector& labels_after) {
      for (Eigen::Index c = 0; c < y.categories(); ++c) {
        if (y(n, c) == 0.0) continue;
        if (labels_after(c) != y(n, c) ||
            after.maps[static_cast<std::size_t>(c)] != before.maps[static_cast<std::size_t>(c)]) {
          ++out.violations;
        }
      }
    };
    for (int trial = 0; trial < 1200; ++trial) {
      const auto batch = static_cast<Eigen::Index>(1 + uniform_index(rng, 8));
      const auto categories = static_cast<Eigen::Index>(1 + uniform_index(rng, 10));
      std::vector<CategoryFeatureMaps> maps;
      for (Eigen::Index n = 0; n < batch; ++n) maps.push_back(oracle::random_maps(rng, categories, shape));
      const auto y = oracle::random_labels(rng, batch, categories);
      const Vector alpha = random_ratios(rng, categories);
      const Vector beta = random_ratios(rng, categories);

      const auto inst = blend_batch(maps, y, alpha);
      const auto want = oracle::instance_blend(maps, y, alpha);
      out.worst = std::max(out.worst, max_abs_diff(inst.labels.values(), want.labels));
      for (Eigen::Index n = 0; n < batch; ++n) {
        for (Eigen::Index c = 0; c < categories; ++c) {
          out.worst = std::max(out.worst, max_abs_diff(inst.maps[n].maps[c], want.maps[n].maps[c]));
        }
        check_known(y, n, maps[n], inst.maps[n], inst.labels.row(n).transpose());
      }
      ++out.instances;

      const int level = static_cast<int>(uniform_index(rng, 2));
      const auto bank = build_prototypes(maps, y, level, 5);
      const auto ref = oracle::build_bank(maps, y, level);
      for (Eigen::Index n = 0; n < batch; ++n) {
        const Vector yn = y.row(n).transpose();
        const auto choice = choose_prototype(maps[n], yn, bank, rng);
        const auto got = apply_prototype_mask(maps[n], yn, build_prototype_mask(bank, choice, beta));
        const Matrix* proto = nullptr;
        Eigen::Index c = 0;
        if (choice.category) {
          c = *choice.category;
          const int self = oracle::spatial_bin(maps[n].maps[c], shape, level);
          const auto it = ref.prototypes.find({c, choice.bin});
          if (yn(c) != 0.0 || choice.bin == self || it == ref.prototypes.end()) {
            ++out.bad_choices;
            continue;
          }
          proto = &it->second;
        } else {
          // Pass-through is only allowed when no unknown category has a
          // usable bin besides its own.
          for (Eigen::Index k = 0; k < categories; ++k) {
            if (yn(k) == 0.0 && level > 0 && ref.prototypes.count({k, 0}) != 0) ++out.bad_choices;
          }
        }
        const auto [want_maps, want_labels] =
            oracle::prototype_blend(maps[n], yn, proto, c, choice.category ? beta(c) : 1.0);
        out.worst = std::max(out.worst, max_abs_diff(got.labels, want_labels));
        for (Eigen::Index k = 0; k < categories; ++k) {
          out.worst = std::max(out.worst, max_abs_diff(got.maps.maps[k], want_maps.maps[k]));
        }
        check_known(y, n, maps[n], got.maps, got.labels);
      }
      ++out.instances;
    }
    out.seconds = seconds_since(start);
    return out;
  }();
  return result;
}

Outcome criterion_1() {
  const auto& s = blend_sweep();
  const bool pass = s.instances >= 1000 && s.worst <= 1e-6 && s.bad_choices == 0 && s.seconds < 30.0;
  std::ostringstream d;
  d << s.instances << " instances, max deviation " << fmt("%.3g", s.worst) << ", invalid draws "
    << s.bad_choices << ", " << fmt("%.1f", s.seconds) << " s";
  return {pass, d.str()};
}

Outcome criterion_2() {
  const auto& s = blend_sweep();
  return {s.violations == 0, std::to_string(s.violations) + " known-entry violations over " +
                                 std::to_string(s.instances) + " blends"};
}

Outcome criterion_3() {
  Rng rng = derive_stream(103, "acceptance-bank");
  const FeatureShape shape{3, 8, 8};
  Scalar worst = 0.0;
  long mismatched_slots = 0;
  for (int trial = 0; trial < 90; ++trial) {
    const int level = trial % 3;
    const auto images = static_cast<Eigen::Index>(1 + uniform_index(rng, 64));
    const auto categories = static_cast<Eigen::Index>(1 + uniform_index(rng, 10));
    std::vector<CategoryFeatureMaps> maps;
    for (Eigen::Index n = 0; n < images; ++n) maps.push_back(oracle::random_maps(rng, categories, shape));
    const auto y = oracle::random_labels(rng, images, categories);
    const auto bank = build_prototypes(maps, y, level);
    const auto ref = oracle::build_bank(maps, y, level);
    for (Eigen::Index c = 0; c < categories; ++c) {
      for (int k = 0; k < bank.bins(); ++k) {
        const auto it = ref.prototypes.find({c, k});
        if ((it != ref.prototypes.end()) != bank.is_usable(c, k)) {
          ++mismatched_slots;
        } else if (it != ref.prototypes.end()) {
          worst = std::max(worst, max_abs_diff(bank.prototype(c, k), it->second));
        }
      }
    }
  }

  // Self-bin exclusion: every draw must avoid the input's own bin.
  long draws = 0, violations = 0;
  while (draws < 10000) {
    const int level = 1 + static_cast<int>(uniform_index(rng, 2));
    const Eigen::Index categories = 4;
    std::vector<CategoryFeatureMaps> maps;
    for (int n = 0; n < 24; ++n) maps.push_back(oracle::random_maps(rng, categories, shape));
    const auto y = oracle::random_labels(rng, 24, categories);
    const auto bank = build_prototypes(maps, y, level);
    for (int i = 0; i < 100; ++i) {
      const auto probe = oracle::random_maps(rng, categories, shape);
      const Vector unknown = Vector::Zero(categories);
      const auto choice = choose_prototype(probe, unknown, bank, rng);
      if (!choice.category) continue;
      ++draws;
      const int self = oracle::spatial_bin(probe.maps[*choice.category], shape, level);
      if (choice.bin == self || !bank.is_usable(*choice.category, choice.bin)) ++violations;
    }
  }
  std::ostringstream d;
  d << "max deviation " << fmt("%.3g", worst) << ", usability mismatches " << mismatched_slots
    << ", self-bin violations " << violations << " / " << draws;
  return {worst <= 1e-6 && mismatched_slots == 0 && violations == 0, d.str()};
}

Outcome criterion_4() {
  Rng rng = derive_stream(104, "acceptance-loss");
  Scalar bce_worst = 0.0;
  for (int trial = 0; trial < 2000; ++trial) {
    const auto c = static_cast<Eigen::Index>(1 + uniform_index(rng, 12));
    Vector y(c), s(c);
    for (Eigen::Index i = 0; i < c; ++i) {
      const auto kind = uniform_index(rng, 4);
      y(i) = kind == 3 ? oracle::uniform(rng, 0.01, 0.99) : static_cast<Scalar>(kind) - 1.0;
      s(i) = oracle::uniform(rng, 0.0, 1.0);
    }
    bce_worst = std::max(bce_worst, std::abs(partial_bce(y, s) - oracle::partial_bce(y, s)));
  }
  Vector y(3), s(3);
  y << 1, -1, 0;
  s << 0.8, 0.3, 0.9;
  const Scalar hand = partial_bce(y, s);

  Scalar cst_worst = 0.0;
  for (int trial = 0; trial < 300; ++trial) {
    const auto batch = static_cast<Eigen::Index>(2 + uniform_index(rng, 7));
    const auto categories = static_cast<Eigen::Index>(1 + uniform_index(rng, 10));
    std::vector<Matrix> vectors;
    for (Eigen::Index n = 0; n < batch; ++n) {
      Matrix v(categories, 5);
      for (Eigen::Index i = 0; i < v.size(); ++i) v.data()[i] = oracle::uniform(rng, -1.0, 1.0);
      vectors.push_back(v);
    }
    const auto labels = oracle::random_labels(rng, batch, categories);
    for (const bool known_only : {false, true}) {
      ContrastiveOptions options;
      options.known_pairs_only = known_only;
      cst_worst = std::max(cst_worst, std::abs(contrastive_batch_loss(vectors, labels, options) -
                                               oracle::contrastive(vectors, labels, known_only)));
    }
  }
  std::ostringstream d;
  d << "BCE deviation " << fmt("%.3g", bce_worst) << ", hand case " << fmt("%.6f", hand)
    << ", contrastive deviation " << fmt("%.3g", cst_worst);
  return {bce_worst <= 1e-7 && std::abs(hand - 0.2899) <= 1e-4 && cst_worst <= 1e-6, d.str()};
}

Scalar central_difference(Scalar& x, const std::function<Scalar()>& f) {
  const Scalar saved = x;
  const Scalar eps = 1e-6;
  x = saved + eps;
  const Scalar up = f();
  x = saved - eps;
  const Scalar down = f();
  x = saved;
  return (up - down) / (2.0 * eps);
}

Outcome criterion_5() {
  ModelConfig config;
  config.backbone.input_height = 16;
  config.backbone.input_width = 16;
  config.backbone.stages = {{8, 3, 2, 1, true}, {8, 3, 2, 1, true}};
  config.embedding_dim = 8;
  config.joint_dim = 8;
  config.propagation_steps = 1;
  const std::vector<std::string> names{"a", "b", "c", "d"};

  Scalar worst = 0.0;
  int checked = 0;
  int silent_ratio_trials = 0;
  for (int trial = 0; trial < 6; ++trial) {
    config.pooling = trial % 2 == 0 ? Pooling::Sum : Pooling::Max;
    Model model(config, names, uniform_adjacency(4), static_cast<std::uint64_t>(trial));
    Rng rng = derive_stream(static_cast<std::uint64_t>(trial), "acceptance-grad");
    for (auto& p : model.parameters()) {
      if (p.name.rfind("blend.", 0) == 0 || p.name.rfind("decoupler.", 0) == 0) {
        for (Eigen::Index i = 0; i < p.param->value.size(); ++i) {
          p.param->value.data()[i] += oracle::uniform(rng, -0.5, 0.5);
        }
      }
    }
    std::vector<Matrix> images;
    for (int n = 0; n < 4; ++n) {
      Matrix image(3, 256);
      for (Eigen::Index i = 0; i < image.size(); ++i) image.data()[i] = oracle::uniform(rng, 0.0, 1.0);
      images.push_back(image);
    }
    // Every category has a positive and an unknown, so both blends fire.
    Matrix y(4, 4);
    y << 1, 0, -1, 0, 0, 1, 0, 1, 1, -1, 1, 0, 0, 0, 0, 1;
    const LabelMatrix labels(y);
    PrototypeAccumulator acc(4, model.backbone.output_shape(), 1);
    for (int n = 0; n < 4; ++n) acc.add(model.feature_maps(images[n]), labels.row(n));
    const PrototypeBank bank = acc.finish(5);

    StepOptions options;
    options.instance_blend = true;
    options.prototype_blend = true;
    options.contrastive = true;
    const Rng proto_rng = derive_stream(static_cast<std::uint64_t>(trial), "acceptance-proto");
    const std::function<Scalar()> objective = [&] {
      Rng r = proto_rng;
      return forward_backward(model, images, labels, options, &bank, r).total;
    };
    model.zero_grad();
    objective();
    const auto params = model.parameters();
    std::vector<Matrix> grads;
    for (const auto& p : params) grads.push_back(p.param->grad);
    for (std::size_t k = 0; k < params.size(); ++k) {
      const auto& name = params[k].name;
      const bool ratio = name.rfind("blend.", 0) == 0;
      if (name.find("classifier") == std::string::npos && !ratio) continue;
      if (ratio && grads[k].cwiseAbs().maxCoeff() == 0.0) ++silent_ratio_trials;
      for (Eigen::Index i = 0; i < params[k].param->value.size(); ++i) {
        const Scalar numeric = central_difference(params[k].param->value.data()[i], objective);
        const Scalar analytic = grads[k].data()[i];
        const Scalar scale = std::max({std::abs(analytic), std::abs(numeric), Scalar(1e-4)});
        worst = std::max(worst, std::abs(analytic - numeric) / scale);
        ++checked;
      }
    }
  }
  std::ostringstream d;
  d << checked << " coordinates, max relative error " << fmt("%.3g", worst)
    << ", ratio vectors without gradient " << silent_ratio_trials;
  return {worst <= 1e-3 && silent_ratio_trials == 0 && checked > 0, d.str()};
}

Outcome criterion_6() {
  Rng rng = derive_stream(106, "acceptance-metrics");
  Scalar worst = 0.0;
  for (int trial = 0; trial < 2000; ++trial) {
    const auto n = static_cast<Eigen::Index>(1 + uniform_index(rng, 16));
    const auto c = static_cast<Eigen::Index>(1 + uniform_index(rng, 8));
    Matrix s(n, c);
    Eigen::MatrixXi g(n, c);
    for (Eigen::Index i = 0; i < s.size(); ++i) {
      s.data()[i] = trial % 2 == 0 ? static_cast<Scalar>(uniform_index(rng, 5)) / 4.0
                                   : oracle::uniform(rng, 0.0, 1.0);
      g.data()[i] = static_cast<int>(uniform_index(rng, 2));
    }
    for (Eigen::Index k = 0; k < c; ++k) {
      std::vector<Scalar> col(s.col(k).data(), s.col(k).data() + n);
      std::vector<int> truth(g.col(k).data(), g.col(k).data() + n);
      const auto got = average_precision(col, truth);
      const Scalar want = oracle::average_precision(col, truth);
      if (got.has_value() != (want >= 0.0)) {
        worst = std::numeric_limits<Scalar>::infinity();
      } else if (got) {
        worst = std::max(worst, std::abs(*got - want));
      }
    }
    const auto got = f1_measures(s, g, 0.5);
    const auto want = oracle::f1(s, g, 0.5);
    for (const auto& [a, b] : {std::pair{got.overall_precision, want.op}, {got.overall_recall, want.orec},
                               {got.overall_f1, want.of1}, {got.class_precision, want.cp},
                               {got.class_recall, want.cr}, {got.class_f1, want.cf1}}) {
      worst = std::max(worst, std::abs(a - b));
    }
  }

  int hand_failures = 0;
  auto ap = [](std::vector<Scalar> scores, std::vector<int> gt) { return *average_precision(scores, gt); };
  hand_failures += ap({0.9, 0.7, 0.2, 0.1}, {1, 1, 0, 0}) == 1.0 ? 0 : 1;
  hand_failures += ap({0.9, 0.1}, {0, 1}) == 0.5 ? 0 : 1;
  hand_failures += std::abs(ap({0.9, 0.8, 0.7}, {1, 0, 1}) - 5.0 / 6.0) < 1e-15 ? 0 : 1;
  Eigen::MatrixXi gt(2, 2);
  gt << 1, 0, 1, 1;
  const auto perfect = f1_measures(gt.cast<Scalar>(), gt);
  hand_failures += perfect.overall_f1 == 1.0 && perfect.class_f1 == 1.0 ? 0 : 1;
  const auto none = f1_measures(Matrix::Zero(2, 2), gt);
  hand_failures += none.overall_f1 == 0.0 && none.class_f1 == 0.0 ? 0 : 1;
  Matrix pred(2, 2);
  pred << 1, 1, 0, 1;
  const auto m = f1_measures(pred, gt);
  const bool two_by_two =
      std::abs(m.overall_precision - 2.0 / 3.0) < 1e-15 && std::abs(m.overall_recall - 2.0 / 3.0) < 1e-15 &&
      std::abs(m.overall_f1 - 2.0 / 3.0) < 1e-15 && std::abs(m.class_precision - 0.75) < 1e-15 &&
      std::abs(m.class_recall - 0.75) < 1e-15 && std::abs(m.class_f1 - 0.75) < 1e-15;
  hand_failures += two_by_two ? 0 : 1;

  std::ostringstream d;
  d << "max deviation " << fmt("%.3g", worst) << ", hand examples failing " << hand_failures << " / 6";
  return {worst <= 1e-9 && hand_failures == 0, d.str()};
}

Outcome criterion_7() {
  auto config = ExperimentConfig::desk();
  config.data.train_images = 192;
  config.data.test_images = 16;
  config.seed = 7;
  const auto data = load_experiment_data(config);
  Dataset train_set = data.train;
  train_set.labels = partial_labels(config, data.train.labels, 0.2);

  std::set<int> built_at;
  TrainHooks hooks;
  hooks.on_epoch = [&](const Checkpoint& ckpt) {
    if (ckpt.bank) built_at.insert(ckpt.bank->built_at_epoch);
  };
  const auto result = train(config, train_set, std::nullopt, hooks);
  long early_nonzero = 0, late_zero = 0;
  for (const auto& row : result.trace) {
    if (row.epoch < config.loss.blend_start_epoch) {
      if (row.instance != 0.0 || row.prototype != 0.0) ++early_nonzero;
    } else if (!(row.instance > 0.0) || !(row.prototype > 0.0)) {
      ++late_zero;
    }
  }
  const std::set<int> expected{5, 10};
  std::ostringstream d;
  d << result.trace.size() << " iterations, nonzero before epoch 5: " << early_nonzero
    << ", zero from epoch 5: " << late_zero << ", banks built at {";
  for (int e : built_at) d << (e == *built_at.begin() ? "" : ",") << e;
  d << "}";
  return {early_nonzero == 0 && late_zero == 0 && built_at == expected &&
              result.bank_epochs == std::vector<int>{5, 10},
          d.str()};
}

Scalar median3(std::vector<Scalar> v) {
  std::sort(v.begin(), v.end());
  return v[v.size() / 2];
}

Outcome criterion_8() {
  const auto start = Clock::now();
  auto config = ExperimentConfig::desk();
  config.proportions = {0.2};
  const auto data = load_experiment_data(config);
  const auto variants = ablation_variants(config.toggles);
  std::vector<std::vector<Scalar>> maps(variants.size());
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    for (std::size_t v = 0; v < variants.size(); ++v) {
      auto run = config;
      run.seed = seed;
      run.toggles = variants[v].toggles;
      const auto result = sweep(run, data);
      maps[v].push_back(100.0 * result.reports.front().mean_ap);
      std::fprintf(stderr, "  seed %llu %-10s mAP %.2f  (%.0f s elapsed)\n",
                   static_cast<unsigned long long>(seed), variants[v].method.c_str(), maps[v].back(),
                   seconds_since(start));
    }
  }
  const Scalar base = median3(maps[0]);
  const Scalar inst = median3(maps[1]);
  const Scalar proto = median3(maps[2]);
  const Scalar full = median3(maps[3]);
  const double elapsed = seconds_since(start);
  const bool gain = full >= base + 1.0;
  const bool ordered = base <= inst && base <= proto && inst <= full && proto <= full;
  char buffer[256];
  std::snprintf(buffer, sizeof buffer,
                "median mAP baseline %.2f, instance %.2f, prototype %.2f, full %.2f; %.0f s", base,
                inst, proto, full, elapsed);
  return {gain && ordered && elapsed < 20 * 60, buffer};
}

std::string slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream out;
  out << in.rdbuf();
  return out.str();
}

Outcome criterion_9() {
  auto config = ExperimentConfig::desk();
  config.name = "determinism";
  config.data.train_images = 160;
  config.data.test_images = 80;
  config.optimizer.epochs = 6;
  config.proportions = {0.2, 0.5};
  const auto base = std::filesystem::temp_directory_path() / "repblend_acceptance_determinism";
  std::filesystem::remove_all(base);
  const auto data = load_experiment_data(config);
  for (const char* run : {"a", "b"}) {
    config.output_dir = (base / run).string();
    sweep(config, data);
  }
  int compared = 0, differing = 0;
  for (const auto& entry : std::filesystem::recursive_directory_iterator(base / "a")) {
    if (!entry.is_regular_file()) continue;
    const auto rel = std::filesystem::relative(entry.path(), base / "a");
    ++compared;
    if (slurp(entry.path()) != slurp(base / "b" / rel)) {
      ++differing;
      std::fprintf(stderr, "  differs: %s\n", rel.string().c_str());
    }
  }
  std::filesystem::remove_all(base);
  return {compared >= 8 && differing == 0,
          std::to_string(compared) + " files compared, " + std::to_string(differing) + " differ"};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"blending algebra matches loop oracles", criterion_1},
      {"known labels and maps are never modified", criterion_2},
      {"prototype bank oracle and self-bin exclusion", criterion_3},
      {"partial BCE and contrastive loss oracles", criterion_4},
      {"finite-difference gradients for classifier, alpha, beta", criterion_5},
      {"metric oracles and hand examples", criterion_6},
      {"blend schedule and bank rebuild epochs", criterion_7},
      {"directional ablation at p=0.2 over 3 seeds", criterion_8},
      {"identical runs give byte-identical reports", criterion_9},
  };
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::stoi(argv[i]));

  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int number = static_cast<int>(i) + 1;
    if (!selected.empty() && selected.count(number) == 0) continue;
    Outcome outcome;
    try {
      outcome = criteria[i].second();
    } catch (const std::exception& e) {
      outcome = {false, std::string("exception: ") + e.what()};
    }
    failures += outcome.pass ? 0 : 1;
    std::cout << (outcome.pass ? "PASS" : "FAIL") << " criterion " << number << ": " << criteria[i].first
              << " (" << outcome.detail << ")" << std::endl;
  }
  return failures == 0 ? 0 : 1;
}
