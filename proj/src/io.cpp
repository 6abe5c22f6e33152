#include "fedalign/io.hpp"

#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "fedalign/errors.hpp"

namespace fedalign {

json config_to_json(const RunConfig& cfg) {
  return json{{"rounds", cfg.rounds},
              {"clients", cfg.clients},
              {"local_epochs", cfg.local_epochs},
              {"tau", cfg.tau},
              {"mu", cfg.mu},
              {"lr", cfg.lr},
              {"batch_size", cfg.batch_size},
              {"rank", cfg.rank},
              {"lora_start", cfg.lora_start},
              {"boundary", cfg.boundary},
              {"gamma", cfg.gamma},
              {"ex_query", cfg.ex_query},
              {"sim_kind", to_string(cfg.sim_kind)},
              {"negate_euclidean", cfg.negate_euclidean},
              {"desc_style", to_string(cfg.desc_style)},
              {"desc_variants", cfg.desc_variants},
              {"upload_ratio", cfg.upload_ratio},
              {"text_epochs", cfg.text_epochs},
              {"partition", to_string(cfg.partition)},
              {"alpha", cfg.alpha},
              {"classes_per_client", cfg.classes_per_client},
              {"num_classes", cfg.dataset.num_classes},
              {"train_per_class", cfg.dataset.train_per_class},
              {"test_per_class", cfg.dataset.test_per_class},
              {"separation", cfg.dataset.separation},
              {"noise_std", cfg.dataset.noise_std},
              {"num_blocks", cfg.num_blocks},
              {"d_in", cfg.d_in},
              {"d_hidden", cfg.d_hidden},
              {"d_embed", cfg.d_embed},
              {"activation", to_string(cfg.activation)},
              {"seed", cfg.seed},
              {"local_eval_mode", to_string(cfg.local_eval_mode)},
              {"parallel", cfg.parallel_clients}};
}

RunConfig config_from_json(const json& j) {
  RunConfig cfg;
  try {
    cfg.rounds = j.at("rounds").get<int>();
    cfg.clients = j.at("clients").get<int>();
    cfg.local_epochs = j.at("local_epochs").get<int>();
    cfg.tau = j.at("tau").get<double>();
    cfg.mu = j.at("mu").get<double>();
    cfg.lr = j.at("lr").get<double>();
    cfg.batch_size = j.at("batch_size").get<int>();
    cfg.rank = j.at("rank").get<int>();
    cfg.lora_start = j.at("lora_start").get<int>();
    cfg.boundary = j.at("boundary").get<int>();
    cfg.gamma = j.at("gamma").get<double>();
    cfg.ex_query = j.at("ex_query").get<bool>();
    cfg.sim_kind = sim_kind_from_string(j.at("sim_kind").get<std::string>());
    cfg.negate_euclidean = j.at("negate_euclidean").get<bool>();
    cfg.desc_style =
        desc_style_from_string(j.at("desc_style").get<std::string>());
    cfg.desc_variants = j.at("desc_variants").get<int>();
    cfg.upload_ratio = j.at("upload_ratio").get<double>();
    cfg.text_epochs = j.at("text_epochs").get<int>();
    cfg.partition =
        partition_kind_from_string(j.at("partition").get<std::string>());
    cfg.alpha = j.at("alpha").get<double>();
    cfg.classes_per_client = j.at("classes_per_client").get<int>();
    cfg.dataset.num_classes = j.at("num_classes").get<int>();
    cfg.dataset.train_per_class = j.at("train_per_class").get<int>();
    cfg.dataset.test_per_class = j.at("test_per_class").get<int>();
    cfg.dataset.separation = j.at("separation").get<double>();
    cfg.dataset.noise_std = j.at("noise_std").get<double>();
    cfg.num_blocks = j.at("num_blocks").get<int>();
    cfg.d_in = j.at("d_in").get<int>();
    cfg.d_hidden = j.at("d_hidden").get<int>();
    cfg.d_embed = j.at("d_embed").get<int>();
    cfg.activation =
        activation_from_string(j.at("activation").get<std::string>());
    cfg.seed = j.at("seed").get<std::uint64_t>();
    cfg.local_eval_mode =
        local_eval_mode_from_string(j.at("local_eval_mode").get<std::string>());
    cfg.parallel_clients = j.at("parallel").get<bool>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config json: ") + e.what());
  }
  return cfg;
}

json metrics_to_json(const RoundMetrics& m) {
  json locals = json::array();
  for (const auto& acc : m.local_accuracies) {
    if (acc) {
      locals.push_back(*acc);
    } else {
      locals.push_back(nullptr);
    }
  }
  json j{{"round", m.round},
         {"global_accuracy", m.global_accuracy},
         {"local_accuracies", locals},
         {"local_ce_loss", m.local_ce_loss},
         {"text_loss", m.text_loss},
         {"upload_scalars_factored", m.upload_scalars_factored},
         {"upload_scalars_dense", m.upload_scalars_dense},
         {"download_scalars_factored", m.download_scalars_factored},
         {"download_scalars_dense", m.download_scalars_dense}};
  if (m.local_accuracy_mean) {
    j["local_accuracy_mean"] = *m.local_accuracy_mean;
  } else {
    j["local_accuracy_mean"] = nullptr;
  }
  return j;
}

std::string metrics_to_jsonl(const std::vector<RoundMetrics>& metrics) {
  std::string out;
  for (const RoundMetrics& m : metrics) {
    out += metrics_to_json(m).dump();
    out += '\n';
  }
  return out;
}

json run_summary(const RunResult& result) {
  const CommLedger ledger = comm_ledger(result);
  json labels = json::array();
  for (const auto& set : result.client_labels) {
    labels.push_back(std::vector<int>(set.begin(), set.end()));
  }
  json j{{"config", config_to_json(result.config)},
         {"run_kind", result.run_kind},
         {"rounds_completed",
          static_cast<int>(result.metrics.size()) - 1},
         {"client_labels", labels},
         {"wall_time_sec", result.wall_time_total},
         {"comm_totals",
          {{"upload_scalars_factored", ledger.totals.upload_factored},
           {"upload_scalars_dense", ledger.totals.upload_dense},
           {"download_scalars_factored", ledger.totals.download_factored},
           {"download_scalars_dense", ledger.totals.download_dense}}}};
  if (!result.metrics.empty()) {
    j["final"] = metrics_to_json(result.metrics.back());
  }
  return j;
}

json aggregation_report(const RunResult& result) {
  json rounds = json::array();
  for (const AggregationRecord& rec : result.agg_records) {
    json alpha = json::array();
    for (std::size_t k = 0; k < rec.alpha.rows(); ++k) {
      json row = json::array();
      for (std::size_t j = 0; j < rec.alpha.cols(); ++j) {
        row.push_back(rec.alpha.at(k, j));
      }
      alpha.push_back(std::move(row));
    }
    rounds.push_back(json{{"round", rec.round},
                          {"alpha", std::move(alpha)},
                          {"global_delta_norm", rec.global_delta_norm},
                          {"personalized_delta_norms",
                           rec.personalized_delta_norms}});
  }
  return json{{"rounds", std::move(rounds)}};
}

json partition_to_json(const PartitionSpec& spec, const Partition& partition,
                       std::uint64_t seed) {
  json j;
  j["spec"] = {{"kind", to_string(spec.kind)},
               {"alpha", spec.alpha},
               {"classes_per_client", spec.classes_per_client},
               {"clients", spec.num_clients},
               {"seed", seed}};
  j["assignments"] = partition.assignments;
  j["class_counts"] = partition.class_counts;
  return j;
}

std::string heatmap_csv(const PartitionStats& stats) {
  std::ostringstream out;
  out << "client";
  const std::size_t num_classes =
      stats.histogram.empty() ? 0 : stats.histogram[0].size();
  for (std::size_t c = 0; c < num_classes; ++c) out << ",class_" << c;
  out << "\n";
  for (std::size_t k = 0; k < stats.histogram.size(); ++k) {
    out << k;
    for (const std::int64_t count : stats.histogram[k]) out << "," << count;
    out << "\n";
  }
  return out.str();
}

Dataset load_dataset_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("dataset csv: cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw FormatError("dataset csv: empty file");

  std::vector<std::string> header;
  {
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, ',')) header.push_back(field);
  }
  if (header.size() < 2 || header.back() != "y") {
    throw FormatError("dataset csv: header must be x0..x{d-1},y");
  }
  const std::size_t dim = header.size() - 1;
  for (std::size_t i = 0; i < dim; ++i) {
    if (header[i] != "x" + std::to_string(i)) {
      throw FormatError("dataset csv: unexpected header column " + header[i]);
    }
  }

  Dataset data;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string field;
    Vec x;
    x.reserve(dim);
    while (std::getline(ss, field, ',')) {
      try {
        x.push_back(std::stod(field));
      } catch (const std::exception&) {
        throw FormatError("dataset csv: bad number at line " +
                          std::to_string(line_no));
      }
    }
    if (x.size() != dim + 1) {
      throw FormatError("dataset csv: wrong field count at line " +
                        std::to_string(line_no));
    }
    const double label = x.back();
    x.pop_back();
    const int y = static_cast<int>(label);
    if (label != static_cast<double>(y) || y < 0) {
      throw FormatError("dataset csv: label must be a nonnegative integer "
                        "at line " +
                        std::to_string(line_no));
    }
    data.xs.push_back(std::move(x));
    data.ys.push_back(y);
    data.num_classes = std::max(data.num_classes, y + 1);
  }
  if (data.empty()) throw FormatError("dataset csv: no samples");
  return data;
}

PackageWire package_to_wire(const UploadPackage& pkg) {
  PackageWire wire;
  std::vector<const Matrix*> mats;
  mats.reserve(pkg.deltas.size());
  for (const DenseDelta& d : pkg.deltas) mats.push_back(&d);
  wire.deltas = write_fald(1.0, mats);

  json protos = json::object();
  for (const auto& [label, vec] : pkg.prototypes) {
    protos[std::to_string(label)] = vec;
  }
  json feats = json::array();
  for (const auto& [vec, label] : pkg.shared_feats) {
    feats.push_back(json{{"f", vec}, {"y", label}});
  }
  json class_counts = json::object();
  for (const auto& [label, count] : pkg.class_counts) {
    class_counts[std::to_string(label)] = count;
  }
  json correct_counts = json::object();
  for (const auto& [label, count] : pkg.correct_counts) {
    correct_counts[std::to_string(label)] = count;
  }
  wire.meta = json{{"client_id", pkg.client_id},
                   {"prototypes", std::move(protos)},
                   {"shared_feats", std::move(feats)},
                   {"num_samples", pkg.num_samples},
                   {"class_counts", std::move(class_counts)},
                   {"num_correct", pkg.num_correct},
                   {"correct_counts", std::move(correct_counts)},
                   {"mean_ce", pkg.mean_ce},
                   {"empty_shard", pkg.empty_shard}};
  return wire;
}

UploadPackage package_from_wire(const PackageWire& wire) {
  UploadPackage pkg;
  const FaldContent content = read_fald(wire.deltas);
  pkg.deltas = content.matrices;
  try {
    const json& meta = wire.meta;
    pkg.client_id = meta.at("client_id").get<int>();
    for (const auto& [key, value] : meta.at("prototypes").items()) {
      pkg.prototypes[std::stoi(key)] = value.get<Vec>();
    }
    for (const auto& item : meta.at("shared_feats")) {
      pkg.shared_feats.emplace_back(item.at("f").get<Vec>(),
                                    item.at("y").get<int>());
    }
    pkg.num_samples = meta.at("num_samples").get<std::int64_t>();
    for (const auto& [key, value] : meta.at("class_counts").items()) {
      pkg.class_counts[std::stoi(key)] = value.get<std::int64_t>();
    }
    pkg.num_correct = meta.at("num_correct").get<std::int64_t>();
    for (const auto& [key, value] : meta.at("correct_counts").items()) {
      pkg.correct_counts[std::stoi(key)] = value.get<std::int64_t>();
    }
    pkg.mean_ce = meta.at("mean_ce").get<double>();
    pkg.empty_shard = meta.at("empty_shard").get<bool>();
  } catch (const json::exception& e) {
    throw FormatError(std::string("package meta: ") + e.what());
  }
  return pkg;
}

namespace {

json encoder_sidecar(const EncoderConfig& cfg) {
  return json{{"num_blocks", cfg.num_blocks},
              {"d_in", cfg.d_in},
              {"d_hidden", cfg.d_hidden},
              {"d_embed", cfg.d_embed},
              {"activation", to_string(cfg.activation)},
              {"lora_start", cfg.lora_start},
              {"rank", cfg.rank},
              {"gamma", cfg.gamma}};
}

std::vector<std::uint8_t> stack_to_fald(const std::vector<DenseDelta>& stack) {
  std::vector<const Matrix*> mats;
  mats.reserve(stack.size());
  for (const DenseDelta& d : stack) mats.push_back(&d);
  return write_fald(1.0, mats);
}

}  // namespace

void write_checkpoints(const std::filesystem::path& dir,
                       const RunResult& result) {
  std::filesystem::create_directories(dir);
  const json sidecar = encoder_sidecar(result.config.encoder_config());

  write_file(dir / "global_delta.fald",
             stack_to_fald(result.final_global_deltas));
  write_file(dir / "global_delta.json", sidecar.dump(2) + "\n");
  for (std::size_t k = 0; k < result.final_eval_deltas.size(); ++k) {
    const std::string stem = "client_" + std::to_string(k) + "_delta";
    write_file(dir / (stem + ".fald"),
               stack_to_fald(result.final_eval_deltas[k]));
    write_file(dir / (stem + ".json"), sidecar.dump(2) + "\n");
  }
  json text = json::array();
  for (const Vec& feat : result.final_text_feats) text.push_back(feat);
  write_file(dir / "text_features.json", text.dump() + "\n");
}

Checkpoints read_checkpoints(const std::filesystem::path& dir,
                             int num_clients) {
  Checkpoints ckpt;
  ckpt.global_deltas =
      read_fald(read_binary_file(dir / "global_delta.fald")).matrices;
  for (int k = 0; k < num_clients; ++k) {
    const std::string stem = "client_" + std::to_string(k) + "_delta";
    ckpt.client_deltas.push_back(
        read_fald(read_binary_file(dir / (stem + ".fald"))).matrices);
  }
  json text;
  try {
    text = json::parse(read_text_file(dir / "text_features.json"));
    for (const auto& item : text) {
      ckpt.text_feats.push_back(item.get<Vec>());
    }
  } catch (const json::exception& e) {
    throw FormatError(std::string("text features: ") + e.what());
  }
  return ckpt;
}

void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path.string());
  out << text;
}

void write_file(const std::filesystem::path& path,
                const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::uint8_t> read_binary_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot read " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return bytes;
}

}  // namespace fedalign
