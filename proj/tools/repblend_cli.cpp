#include "repblend/harness.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

namespace fs = std::filesystem;
using namespace repblend;

namespace {

struct ConfigArgs {
  std::string config_file;
  std::vector<std::string> overrides;
};

void add_config_options(CLI::App* cmd, ConfigArgs& args) {
  cmd->add_option("-c,--config", args.config_file, "JSON experiment config")->check(CLI::ExistingFile);
  cmd->add_option("--set", args.overrides, "Override a config field: key.path=value (repeatable)");
}

// Output root: config value, then $REPBLEND_OUTPUT_ROOT, then ./runs.
void resolve_output_root(ExperimentConfig& config) {
  if (!config.output_dir.empty()) return;
  const char* env = std::getenv("REPBLEND_OUTPUT_ROOT");
  config.output_dir = env != nullptr && *env != '\0' ? env : "runs";
}

ExperimentConfig build_config(const ConfigArgs& args, ExperimentConfig config = ExperimentConfig::desk()) {
  if (!args.config_file.empty()) config = load_config(args.config_file);
  for (const auto& o : args.overrides) apply_override(config, o);
  resolve_output_root(config);
  config.validate();
  return config;
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream out;
  out << in.rdbuf();
  return out.str();
}

void write_file(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

void print_diagnostics(const Diagnostics& d) {
  std::cerr << "diagnostics: zero-norm vectors " << d.zero_norm_vectors << ", singleton batches "
            << d.singleton_batches << ", all-unknown rows " << d.all_unknown_rows
            << ", categories without positives " << d.categories_without_positives
            << ", degenerate F1 terms " << d.degenerate_f1_terms << "\n";
}

void run_generate(const ConfigArgs& args, const std::string& out_dir) {
  const auto config = build_config(args);
  if (config.data.kind != "synthetic") throw std::invalid_argument("generate needs data.kind=synthetic");
  const fs::path root = out_dir.empty() ? fs::path(config.output_dir) / config.name / "data" : fs::path(out_dir);
  const auto data = load_experiment_data(config);
  write_dataset(root / "train", data.train);
  write_dataset(root / "test", data.test);
  std::cout << "wrote " << data.train.size() << " train and " << data.test.size() << " test images to "
            << root.string() << "\n";
}

void run_prepare(const ConfigArgs& args, const std::string& labels_csv, const std::string& coco,
                 const std::string& out_dir) {
  const auto config = build_config(args);
  if (labels_csv.empty() == coco.empty()) {
    throw std::invalid_argument("prepare needs exactly one of --labels or --coco");
  }
  const LabeledSet full = coco.empty() ? read_label_csv(labels_csv) : load_coco_annotations(coco);
  const fs::path root = out_dir.empty() ? fs::path(config.output_dir) / config.name / "labels" : fs::path(out_dir);
  fs::create_directories(root);
  if (!coco.empty()) write_label_csv(root / "labels_full.csv", full);
  for (double p : config.proportions) {
    LabeledSet partial = full;
    partial.labels = partial_labels(config, full.labels, p);
    char name[32];
    std::snprintf(name, sizeof name, "labels_p%.2f.csv", p);
    write_label_csv(root / name, partial);
    std::cout << root / name << "\n";
  }
}

void run_train(const ConfigArgs& args, double proportion, const std::string& resume, int stop_after) {
  const auto config = build_config(args);
  const double p = proportion > 0.0 ? proportion : config.proportions.front();
  const auto data = load_experiment_data(config);
  Dataset train_set = data.train;
  train_set.labels = config.data.train_labels.empty() ? partial_labels(config, data.train.labels, p)
                                                      : read_label_csv(config.data.train_labels).labels;

  char tag[32];
  std::snprintf(tag, sizeof tag, "p%.2f", p);
  const fs::path run_dir = fs::path(config.output_dir) / config.name / tag;
  fs::create_directories(run_dir);
  write_file(run_dir / "config.json", nlohmann::json(config).dump(2) + "\n");

  std::optional<Checkpoint> start;
  if (!resume.empty()) start = load_checkpoint(resume);
  std::ofstream trace(run_dir / "trace.csv", start ? std::ios::binary | std::ios::app : std::ios::binary);
  if (!start) trace << trace_csv_header();
  TrainHooks hooks;
  hooks.stop_after_epoch = stop_after;
  hooks.on_iteration = [&trace](const TraceRow& row) { trace << format_trace_row(row); };
  hooks.on_epoch = [&](const Checkpoint& ckpt) {
    trace.flush();
    save_checkpoint(run_dir / "checkpoint.bin", ckpt);
    std::cerr << "epoch " << ckpt.epoch << " done\n";
  };
  const auto result = train(config, train_set, start, hooks);
  save_checkpoint(run_dir / "checkpoint.bin", result.checkpoint);
  print_diagnostics(result.diagnostics);
  std::cout << (run_dir / "checkpoint.bin").string() << "\n";
}

void run_evaluate(const ConfigArgs& args, const std::string& checkpoint_path, const std::string& data_dir,
                  double proportion, const std::string& out) {
  const auto ckpt = load_checkpoint(checkpoint_path);
  ExperimentConfig stored = nlohmann::json::parse(ckpt.config_json).get<ExperimentConfig>();
  const auto config = build_config(args, stored);
  Dataset test;
  if (!data_dir.empty()) {
    test = read_dataset(data_dir);
  } else {
    test = load_experiment_data(config).test;
  }
  const double p = proportion > 0.0 ? proportion : config.proportions.front();
  Diagnostics diag;
  const std::vector<EvalReport> reports{evaluate(ckpt, test, p, &diag)};
  print_diagnostics(diag);
  if (out.empty()) {
    std::cout << format_report_csv(reports);
  } else {
    write_file(fs::path(out) / "report.json", format_report_json(reports));
    write_file(fs::path(out) / "report.csv", format_report_csv(reports));
    std::cout << format_report_csv(reports);
  }
}

void run_sweep(const ConfigArgs& args, bool ablation) {
  auto config = build_config(args);
  const auto data = load_experiment_data(config);
  if (!ablation) {
    const auto result = sweep(config, data);
    std::cout << format_report_csv(result.reports);
    return;
  }
  std::vector<SweepRow> rows;
  const std::string base_name = config.name;
  for (const auto& variant : ablation_variants(config.toggles)) {
    auto run = config;
    run.name = base_name + "/" + variant.method;
    run.toggles = variant.toggles;
    std::cerr << "variant " << variant.method << "\n";
    rows.push_back({variant.method, sweep(run, data).reports});
  }
  const auto table = format_sweep_table(rows);
  write_file(fs::path(config.output_dir) / base_name / "ablation.csv", table);
  std::cout << table;
}

void run_report(const std::vector<std::string>& inputs, const std::string& format) {
  if (format == "table") {
    std::vector<SweepRow> rows;
    for (const auto& input : inputs) {
      const fs::path path(input);
      rows.push_back({path.parent_path().filename().string(), parse_report_json(read_file(path))});
    }
    std::cout << format_sweep_table(rows);
    return;
  }
  std::vector<EvalReport> reports;
  for (const auto& input : inputs) {
    for (auto& r : parse_report_json(read_file(input))) reports.push_back(std::move(r));
  }
  std::cout << (format == "json" ? format_report_json(reports) : format_report_csv(reports));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-label training and evaluation with missing labels"};
  app.require_subcommand(1);

  ConfigArgs gen_args;
  std::string gen_out;
  auto* gen = app.add_subcommand("generate", "Write synthetic train/test datasets");
  add_config_options(gen, gen_args);
  gen->add_option("-o,--out", gen_out, "Output directory");

  ConfigArgs prep_args;
  std::string prep_labels, prep_coco, prep_out;
  auto* prep = app.add_subcommand("prepare", "Drop labels at each configured proportion");
  add_config_options(prep, prep_args);
  prep->add_option("--labels", prep_labels, "Complete label CSV")->check(CLI::ExistingFile);
  prep->add_option("--coco", prep_coco, "COCO-style instance annotation JSON")->check(CLI::ExistingFile);
  prep->add_option("-o,--out", prep_out, "Output directory");

  ConfigArgs train_args;
  double train_p = 0.0;
  std::string train_resume;
  int train_stop = 0;
  auto* tr = app.add_subcommand("train", "Train one run");
  add_config_options(tr, train_args);
  tr->add_option("-p,--proportion", train_p, "Known-label proportion (default: first configured)");
  tr->add_option("--resume", train_resume, "Checkpoint to continue from")->check(CLI::ExistingFile);
  tr->add_option("--stop-after", train_stop, "Stop after this epoch");

  ConfigArgs eval_args;
  std::string eval_ckpt, eval_data, eval_out;
  double eval_p = 0.0;
  auto* ev = app.add_subcommand("evaluate", "Evaluate a checkpoint on the test split");
  add_config_options(ev, eval_args);
  ev->add_option("--checkpoint", eval_ckpt, "Checkpoint file")->required()->check(CLI::ExistingFile);
  ev->add_option("--data", eval_data, "Dataset directory (default: test split of the stored config)");
  ev->add_option("-p,--proportion", eval_p, "Proportion recorded in the report");
  ev->add_option("-o,--out", eval_out, "Directory for report.json and report.csv");

  ConfigArgs sweep_args;
  bool sweep_ablation = false;
  auto* sw = app.add_subcommand("sweep", "Train and evaluate every configured proportion");
  add_config_options(sw, sweep_args);
  sw->add_flag("--ablation", sweep_ablation, "Run baseline, instance-only, prototype-only and full");

  std::vector<std::string> report_inputs;
  std::string report_format = "csv";
  auto* rep = app.add_subcommand("report", "Render report JSON files");
  rep->add_option("inputs", report_inputs, "report.json files")->required()->check(CLI::ExistingFile);
  rep->add_option("-f,--format", report_format, "csv, json or table")
      ->check(CLI::IsMember({"csv", "json", "table"}));

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) run_generate(gen_args, gen_out);
    if (*prep) run_prepare(prep_args, prep_labels, prep_coco, prep_out);
    if (*tr) run_train(train_args, train_p, train_resume, train_stop);
    if (*ev) run_evaluate(eval_args, eval_ckpt, eval_data, eval_p, eval_out);
    if (*sw) run_sweep(sweep_args, sweep_ablation);
    if (*rep) run_report(report_inputs, report_format);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
