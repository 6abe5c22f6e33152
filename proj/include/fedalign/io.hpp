#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fedalign/datagen.hpp"
#include "fedalign/simulator.hpp"

namespace fedalign {

using json = nlohmann::json;

// --- run config ---
json config_to_json(const RunConfig& cfg);
RunConfig config_from_json(const json& j);

// --- metrics ---
// One JSON object per round, snake_case keys, wall time excluded so that
// identical runs produce byte-identical files.
json metrics_to_json(const RoundMetrics& m);
std::string metrics_to_jsonl(const std::vector<RoundMetrics>& metrics);

json run_summary(const RunResult& result);
json aggregation_report(const RunResult& result);

// --- partitions ---
json partition_to_json(const PartitionSpec& spec, const Partition& partition,
                       std::uint64_t seed);
std::string heatmap_csv(const PartitionStats& stats);

// --- datasets ---
// CSV with a header row x0..x{d-1},y.
Dataset load_dataset_csv(const std::filesystem::path& path);

// --- upload packages ---
struct PackageWire {
  std::vector<std::uint8_t> deltas;  // fald container, one matrix per layer
  json meta;                         // prototypes, features, counts
};

PackageWire package_to_wire(const UploadPackage& pkg);
UploadPackage package_from_wire(const PackageWire& wire);

// --- checkpoints ---
// Layout under <dir>: global_delta.fald, client_<k>_delta.fald, matching
// .json sidecars with the encoder configuration, text_features.json.
void write_checkpoints(const std::filesystem::path& dir,
                       const RunResult& result);

struct Checkpoints {
  std::vector<DenseDelta> global_deltas;
  std::vector<std::vector<DenseDelta>> client_deltas;
  std::vector<Vec> text_feats;
};

Checkpoints read_checkpoints(const std::filesystem::path& dir,
                             int num_clients);

// --- small file helpers ---
void write_file(const std::filesystem::path& path, const std::string& text);
void write_file(const std::filesystem::path& path,
                const std::vector<std::uint8_t>& bytes);
std::string read_text_file(const std::filesystem::path& path);
std::vector<std::uint8_t> read_binary_file(const std::filesystem::path& path);

}  // namespace fedalign
