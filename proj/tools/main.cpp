// Command line front end: partition | train | eval | ablate | report.
// Every numeric result is produced by library calls; this file only parses
// options, moves files, and formats output.
//
// Exit codes: 0 success, 2 configuration/input error, 3 invariant violation.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "fedalign/errors.hpp"
#include "fedalign/io.hpp"
#include "fedalign/kernels.hpp"
#include "fedalign/simulator.hpp"

namespace fs = std::filesystem;
using fedalign::json;

namespace {

struct CliOptions {
  fedalign::RunConfig defaults;  // numeric defaults come from RunConfig

  int rounds = defaults.rounds;
  int clients = defaults.clients;
  int local_epochs = defaults.local_epochs;
  double tau = defaults.tau;
  double mu = defaults.mu;
  double lr = defaults.lr;
  int batch_size = defaults.batch_size;
  int rank = defaults.rank;
  int lora_start = defaults.lora_start;
  int boundary = defaults.boundary;
  double gamma = defaults.gamma;
  bool ex_query = defaults.ex_query;
  std::string sim_kind = "cosine";
  bool negate_euclidean = defaults.negate_euclidean;
  std::string desc_style = "GT";
  int desc_variants = defaults.desc_variants;
  double upload_ratio = defaults.upload_ratio;
  int text_epochs = defaults.text_epochs;
  std::string partition = "dir";
  double alpha = defaults.alpha;
  int classes_per_client = defaults.classes_per_client;
  int num_classes = defaults.dataset.num_classes;
  int train_per_class = defaults.dataset.train_per_class;
  int test_per_class = defaults.dataset.test_per_class;
  double separation = defaults.dataset.separation;
  double noise_std = defaults.dataset.noise_std;
  int num_blocks = defaults.num_blocks;
  int d_in = defaults.d_in;
  int d_hidden = defaults.d_hidden;
  int d_embed = defaults.d_embed;
  std::string activation = "tanh";
  std::uint64_t seed = defaults.seed;
  std::string local_eval_mode = "auto";
  bool parallel = defaults.parallel_clients;

  std::string out_dir = "out";
  std::string backend = "auto";

  fedalign::RunConfig to_run_config() const {
    fedalign::RunConfig cfg;
    cfg.rounds = rounds;
    cfg.clients = clients;
    cfg.local_epochs = local_epochs;
    cfg.tau = tau;
    cfg.mu = mu;
    cfg.lr = lr;
    cfg.batch_size = batch_size;
    cfg.rank = rank;
    cfg.lora_start = lora_start;
    cfg.boundary = boundary;
    cfg.gamma = gamma;
    cfg.ex_query = ex_query;
    cfg.sim_kind = fedalign::sim_kind_from_string(sim_kind);
    cfg.negate_euclidean = negate_euclidean;
    cfg.desc_style = fedalign::desc_style_from_string(desc_style);
    cfg.desc_variants = desc_variants;
    cfg.upload_ratio = upload_ratio;
    cfg.text_epochs = text_epochs;
    cfg.partition = fedalign::partition_kind_from_string(partition);
    cfg.alpha = alpha;
    cfg.classes_per_client = classes_per_client;
    cfg.dataset.num_classes = num_classes;
    cfg.dataset.train_per_class = train_per_class;
    cfg.dataset.test_per_class = test_per_class;
    cfg.dataset.separation = separation;
    cfg.dataset.noise_std = noise_std;
    cfg.num_blocks = num_blocks;
    cfg.d_in = d_in;
    cfg.d_hidden = d_hidden;
    cfg.d_embed = d_embed;
    cfg.activation = fedalign::activation_from_string(activation);
    cfg.seed = seed;
    cfg.local_eval_mode =
        fedalign::local_eval_mode_from_string(local_eval_mode);
    cfg.parallel_clients = parallel;
    cfg.validate();
    return cfg;
  }
};

void add_run_options(CLI::App* cmd, CliOptions& opts) {
  cmd->set_config("--config", "", "key=value config file; flags override it");
  cmd->allow_config_extras(false);
  cmd->add_option("--rounds", opts.rounds, "global rounds T");
  cmd->add_option("--clients", opts.clients, "client count K");
  cmd->add_option("--local_epochs", opts.local_epochs, "local epochs E");
  cmd->add_option("--tau", opts.tau, "softmax temperature");
  cmd->add_option("--mu", opts.mu, "orthogonality penalty weight");
  cmd->add_option("--lr", opts.lr, "Adam learning rate");
  cmd->add_option("--batch_size", opts.batch_size, "local batch size");
  cmd->add_option("--rank", opts.rank, "adapter rank r");
  cmd->add_option("--lora_start", opts.lora_start, "first adapted block l");
  cmd->add_option("--boundary", opts.boundary,
                  "first query-aggregated block m");
  cmd->add_option("--gamma", opts.gamma, "adapter scale");
  cmd->add_option("--ex_query", opts.ex_query,
                  "exclude self weight from personalized aggregation");
  cmd->add_option("--sim_kind", opts.sim_kind, "cosine|dot|euclidean");
  cmd->add_option("--negate_euclidean", opts.negate_euclidean,
                  "negate euclidean distances inside softmax weighting");
  cmd->add_option("--desc_style", opts.desc_style, "ST|GT");
  cmd->add_option("--desc_variants", opts.desc_variants,
                  "GT variants per class");
  cmd->add_option("--upload_ratio", opts.upload_ratio,
                  "fraction of correct features uploaded, in (0,1]");
  cmd->add_option("--text_epochs", opts.text_epochs,
                  "server text epochs per round");
  cmd->add_option("--partition", opts.partition, "iid|dir|path");
  cmd->add_option("--alpha", opts.alpha, "Dir concentration");
  cmd->add_option("--classes_per_client", opts.classes_per_client,
                  "Path classes per client");
  cmd->add_option("--num_classes", opts.num_classes, "mixture classes");
  cmd->add_option("--train_per_class", opts.train_per_class,
                  "train samples per class");
  cmd->add_option("--test_per_class", opts.test_per_class,
                  "test samples per class");
  cmd->add_option("--separation", opts.separation,
                  "mean separation in noise_std units");
  cmd->add_option("--noise_std", opts.noise_std, "sample noise std");
  cmd->add_option("--num_blocks", opts.num_blocks, "encoder blocks L");
  cmd->add_option("--d_in", opts.d_in, "input dim");
  cmd->add_option("--d_hidden", opts.d_hidden, "hidden dim");
  cmd->add_option("--d_embed", opts.d_embed, "embedding dim");
  cmd->add_option("--activation", opts.activation, "tanh|identity");
  cmd->add_option("--seed", opts.seed, "run seed");
  cmd->add_option("--local_eval_mode", opts.local_eval_mode,
                  "auto|aggregated_with_self|raw_local");
  cmd->add_option("--parallel", opts.parallel, "parallel client updates");
  cmd->add_option("--out", opts.out_dir, "output directory");
  cmd->add_option("--backend", opts.backend,
                  "kernel backend: auto|scalar|avx2|neon");
}

void apply_backend(const std::string& backend) {
  if (backend == "auto") {
    fedalign::kernels::reset();
    return;
  }
  if (backend == "scalar") {
    fedalign::kernels::force(fedalign::kernels::Backend::scalar);
  } else if (backend == "avx2") {
    fedalign::kernels::force(fedalign::kernels::Backend::avx2);
  } else if (backend == "neon") {
    fedalign::kernels::force(fedalign::kernels::Backend::neon);
  } else {
    throw fedalign::ConfigError("unknown backend: " + backend);
  }
}

void write_run_outputs(const fs::path& out_dir,
                       const fedalign::RunResult& result) {
  fs::create_directories(out_dir);
  fedalign::write_file(out_dir / "metrics.jsonl",
                       fedalign::metrics_to_jsonl(result.metrics));
  json summary = fedalign::run_summary(result);
  summary["backend"] = fedalign::kernels::name(fedalign::kernels::active());
  fedalign::write_file(out_dir / "run_summary.json", summary.dump(2) + "\n");
  fedalign::write_file(out_dir / "aggregation_report.json",
                       fedalign::aggregation_report(result).dump(2) + "\n");
  fedalign::write_checkpoints(out_dir / "checkpoints", result);
}

int cmd_partition(const CliOptions& opts) {
  const fedalign::RunConfig cfg = opts.to_run_config();
  fedalign::Rng root(cfg.seed);
  fedalign::Rng data_rng = root.split("data");
  fedalign::Rng means_rng = data_rng.split("means");
  const auto means = fedalign::sample_class_means(
      cfg.dataset.num_classes, cfg.d_in, cfg.dataset.separation,
      cfg.dataset.noise_std, means_rng);
  fedalign::Rng train_rng = data_rng.split("train");
  const fedalign::Dataset train = fedalign::sample_around_means(
      means, cfg.dataset.train_per_class, cfg.dataset.noise_std, train_rng);
  fedalign::Rng part_rng = root.split("partition");
  const fedalign::Partition partition =
      fedalign::make_partition(train, cfg.partition_spec(), part_rng);
  const fedalign::PartitionStats stats =
      fedalign::partition_stats(partition, train);

  fs::create_directories(opts.out_dir);
  const fs::path out(opts.out_dir);
  fedalign::write_file(
      out / "partition.json",
      fedalign::partition_to_json(cfg.partition_spec(), partition, cfg.seed)
              .dump(2) +
          "\n");
  fedalign::write_file(out / "heatmap.csv", fedalign::heatmap_csv(stats));

  std::cout << "partition kind=" << to_string(cfg.partition)
            << " clients=" << cfg.clients << " samples=" << train.size()
            << "\n";
  for (std::size_t k = 0; k < partition.assignments.size(); ++k) {
    std::cout << "  client " << k << ": " << partition.assignments[k].size()
              << " samples, max class share " << stats.max_class_share[k]
              << "\n";
  }
  if (!stats.empty_clients.empty()) {
    std::cout << "  empty clients: " << stats.empty_clients.size() << "\n";
  }
  std::cout << "wrote " << (out / "partition.json").string() << " and "
            << (out / "heatmap.csv").string() << "\n";
  return 0;
}

int cmd_train(const CliOptions& opts, const std::string& baseline) {
  const fedalign::RunConfig cfg = opts.to_run_config();
  fedalign::RunResult result;
  if (baseline.empty()) {
    result = fedalign::run_training(cfg);
  } else {
    result = fedalign::run_baseline(
        cfg, fedalign::baseline_kind_from_string(baseline));
  }
  write_run_outputs(opts.out_dir, result);
  for (const fedalign::RoundMetrics& m : result.metrics) {
    std::cout << "round " << m.round << ": global_acc=" << m.global_accuracy;
    if (m.local_accuracy_mean) {
      std::cout << " local_acc_mean=" << *m.local_accuracy_mean;
    }
    std::cout << " ce=" << m.local_ce_loss << " text_loss=" << m.text_loss
              << "\n";
  }
  std::cout << "wrote metrics to " << (fs::path(opts.out_dir) / "metrics.jsonl").string()
            << "\n";
  return 0;
}

int cmd_eval(const std::string& run_dir) {
  const fs::path dir(run_dir);
  json summary;
  try {
    summary = json::parse(fedalign::read_text_file(dir / "run_summary.json"));
  } catch (const json::exception& e) {
    throw fedalign::FormatError(std::string("run_summary.json: ") + e.what());
  }
  const fedalign::RunConfig cfg =
      fedalign::config_from_json(summary.at("config"));
  const fedalign::Checkpoints ckpt =
      fedalign::read_checkpoints(dir / "checkpoints", cfg.clients);

  // Rebuild the frozen state exactly as the run did.
  fedalign::Rng root(cfg.seed);
  fedalign::Rng data_rng = root.split("data");
  fedalign::Rng means_rng = data_rng.split("means");
  const auto means = fedalign::sample_class_means(
      cfg.dataset.num_classes, cfg.d_in, cfg.dataset.separation,
      cfg.dataset.noise_std, means_rng);
  fedalign::Rng train_rng = data_rng.split("train");
  (void)fedalign::sample_around_means(means, cfg.dataset.train_per_class,
                                      cfg.dataset.noise_std, train_rng);
  fedalign::Rng test_rng = data_rng.split("test");
  const fedalign::Dataset test = fedalign::sample_around_means(
      means, cfg.dataset.test_per_class, cfg.dataset.noise_std, test_rng);
  const fedalign::EncoderState backbone = fedalign::make_backbone(
      cfg.encoder_config(), root.split("backbone/image"));

  std::vector<std::set<int>> labels;
  for (const auto& arr : summary.at("client_labels")) {
    labels.emplace_back(arr.begin(), arr.end());
  }

  const fedalign::ObjectiveConfig obj = cfg.objective_config();
  const double global_acc = fedalign::evaluate_global(
      backbone, ckpt.global_deltas, ckpt.text_feats, test, obj);
  const auto local_accs = fedalign::evaluate_local(
      backbone, ckpt.client_deltas, ckpt.text_feats, labels, test, obj);

  json out{{"global_accuracy", global_acc}};
  json locals = json::array();
  for (const auto& acc : local_accs) {
    if (acc) {
      locals.push_back(*acc);
    } else {
      locals.push_back(nullptr);
    }
  }
  out["local_accuracies"] = locals;

  bool matches = true;
  if (summary.contains("final")) {
    const json& final = summary.at("final");
    matches = final.at("global_accuracy").get<double>() == global_acc &&
              final.at("local_accuracies") == locals;
    out["matches_final_metrics"] = matches;
  }
  std::cout << out.dump(2) << "\n";
  return matches ? 0 : 3;
}

struct AxisSetter {
  std::string name;
  void (*apply)(fedalign::RunConfig&, const std::string&);
};

bool parse_bool_value(const std::string& v) {
  if (v == "on" || v == "true" || v == "1") return true;
  if (v == "off" || v == "false" || v == "0") return false;
  throw fedalign::ConfigError("expected on/off, got " + v);
}

void apply_axis(fedalign::RunConfig& cfg, const std::string& axis,
                const std::string& value) {
  if (axis == "mu") {
    cfg.mu = std::stod(value);
  } else if (axis == "boundary_m") {
    cfg.boundary = std::stoi(value);
  } else if (axis == "rank_r") {
    cfg.rank = std::stoi(value);
  } else if (axis == "lora_start_l") {
    cfg.lora_start = std::stoi(value);
  } else if (axis == "desc_style") {
    cfg.desc_style = fedalign::desc_style_from_string(value);
  } else if (axis == "ex_query") {
    cfg.ex_query = parse_bool_value(value);
  } else if (axis == "sim_kind") {
    cfg.sim_kind = fedalign::sim_kind_from_string(value);
  } else if (axis == "upload_ratio") {
    cfg.upload_ratio = std::stod(value);
  } else if (axis == "alpha") {
    cfg.alpha = std::stod(value);
    cfg.partition = fedalign::PartitionKind::dirichlet;
  } else {
    throw fedalign::ConfigError("unknown ablation axis: " + axis);
  }
}

int cmd_ablate(const CliOptions& opts, const std::string& axis,
               const std::vector<std::string>& values) {
  if (values.empty()) {
    throw fedalign::ConfigError("ablate: need at least one axis value");
  }
  const fedalign::RunConfig base = opts.to_run_config();
  std::ostringstream csv;
  csv << "axis,value,seed,global_accuracy,local_accuracy_mean,local_ce_loss,"
         "text_loss,upload_total_factored,upload_total_dense,"
         "download_total_factored,download_total_dense\n";
  for (std::size_t i = 0; i < values.size(); ++i) {
    fedalign::RunConfig cfg = base;
    apply_axis(cfg, axis, values[i]);
    cfg.seed = base.seed + i;  // derived sub-seed per value
    cfg.validate();
    const fedalign::RunResult result = fedalign::run_training(cfg);
    const fedalign::CommLedger ledger = fedalign::comm_ledger(result);
    const fedalign::RoundMetrics& final = result.metrics.back();
    csv << axis << "," << values[i] << "," << cfg.seed << ","
        << json(final.global_accuracy).dump() << ",";
    if (final.local_accuracy_mean) {
      csv << json(*final.local_accuracy_mean).dump();
    }
    csv << "," << json(final.local_ce_loss).dump() << ","
        << json(final.text_loss).dump() << ","
        << ledger.totals.upload_factored << "," << ledger.totals.upload_dense
        << "," << ledger.totals.download_factored << ","
        << ledger.totals.download_dense << "\n";
    std::cout << axis << "=" << values[i]
              << " global_acc=" << final.global_accuracy << "\n";
  }
  fs::create_directories(opts.out_dir);
  const fs::path out = fs::path(opts.out_dir) / "ablation.csv";
  fedalign::write_file(out, csv.str());
  std::cout << "wrote " << out.string() << "\n";
  return 0;
}

int cmd_report(const std::vector<std::string>& files,
               const std::string& out_path) {
  if (files.empty()) {
    throw fedalign::ConfigError("report: need at least one input file");
  }
  bool any_jsonl = false;
  bool any_csv = false;
  for (const std::string& f : files) {
    if (f.ends_with(".jsonl")) {
      any_jsonl = true;
    } else if (f.ends_with(".csv")) {
      any_csv = true;
    } else {
      throw fedalign::ConfigError("report: expected .jsonl or .csv: " + f);
    }
  }
  if (any_jsonl && any_csv) {
    throw fedalign::ConfigError("report: cannot mix jsonl and csv inputs");
  }

  std::ostringstream out;
  if (any_jsonl) {
    out << "source,round,global_accuracy,local_accuracy_mean\n";
    for (const std::string& f : files) {
      const std::string text = fedalign::read_text_file(f);
      std::istringstream lines(text);
      std::string line;
      std::string last;
      while (std::getline(lines, line)) {
        if (!line.empty()) last = line;
      }
      if (last.empty()) {
        throw fedalign::FormatError("report: empty metrics file " + f);
      }
      json rec;
      try {
        rec = json::parse(last);
      } catch (const json::exception& e) {
        throw fedalign::FormatError("report: bad jsonl in " + f + ": " +
                                    e.what());
      }
      out << f << "," << rec.at("round") << ","
          << rec.at("global_accuracy").dump() << ","
          << rec.at("local_accuracy_mean").dump() << "\n";
    }
  } else {
    std::string header;
    for (const std::string& f : files) {
      const std::string text = fedalign::read_text_file(f);
      std::istringstream lines(text);
      std::string line;
      if (!std::getline(lines, line)) {
        throw fedalign::FormatError("report: empty csv " + f);
      }
      if (header.empty()) {
        header = line;
        out << header << "\n";
      } else if (line != header) {
        throw fedalign::FormatError("report: csv headers disagree: " + f);
      }
      while (std::getline(lines, line)) {
        if (!line.empty()) out << line << "\n";
      }
    }
  }

  if (out_path.empty()) {
    std::cout << out.str();
  } else {
    fedalign::write_file(out_path, out.str());
    std::cout << "wrote " << out_path << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Federated modality-alignment protocol simulator"};
  app.require_subcommand(1);

  CliOptions part_opts;
  CLI::App* partition = app.add_subcommand(
      "partition", "generate a client partition and its heatmap");
  add_run_options(partition, part_opts);

  CliOptions train_opts;
  std::string baseline;
  CLI::App* train =
      app.add_subcommand("train", "run federated training end to end");
  add_run_options(train, train_opts);
  train->add_option("--baseline", baseline,
                    "zero_shot|local_only|weighted_only instead of the full "
                    "protocol");

  std::string eval_dir;
  CLI::App* eval = app.add_subcommand(
      "eval", "recompute final accuracies from a train output directory");
  eval->add_option("--run", eval_dir, "directory written by train")
      ->required();

  CliOptions ablate_opts;
  std::string axis;
  std::vector<std::string> axis_values;
  CLI::App* ablate =
      app.add_subcommand("ablate", "sweep one knob, one full run per value");
  add_run_options(ablate, ablate_opts);
  ablate->add_option("--axis", axis,
                     "mu|boundary_m|rank_r|lora_start_l|desc_style|ex_query|"
                     "sim_kind|upload_ratio|alpha")
      ->required();
  ablate->add_option("--values", axis_values, "axis values")
      ->required()
      ->delimiter(',');

  std::vector<std::string> report_files;
  std::string report_out;
  CLI::App* report = app.add_subcommand(
      "report", "merge metrics jsonl files or ablation csv files");
  report->add_option("files", report_files, "input files")->required();
  report->add_option("--out", report_out, "output csv path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help
    app.exit(e);
    return 2;
  }

  try {
    if (*partition) {
      apply_backend(part_opts.backend);
      return cmd_partition(part_opts);
    }
    if (*train) {
      apply_backend(train_opts.backend);
      return cmd_train(train_opts, baseline);
    }
    if (*eval) return cmd_eval(eval_dir);
    if (*ablate) {
      apply_backend(ablate_opts.backend);
      return cmd_ablate(ablate_opts, axis, axis_values);
    }
    if (*report) return cmd_report(report_files, report_out);
  } catch (const fedalign::ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const fedalign::ParameterError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const fedalign::FormatError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const fedalign::Error& e) {
    std::cerr << "invariant violation: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "unexpected error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
