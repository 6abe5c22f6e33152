#pragma once

#include <cstdint>
#include <mutex>
#include <optional>
#include <set>
#include <vector>

#include "fedalign/client.hpp"
#include "fedalign/datagen.hpp"
#include "fedalign/server.hpp"

namespace fedalign {

struct DatasetSpec {
  int num_classes = 4;
  int train_per_class = 200;
  int test_per_class = 50;
  double separation = 6.0;
  double noise_std = 1.0;
};

enum class LocalEvalMode { auto_rule, aggregated_with_self, raw_local };

const char* to_string(LocalEvalMode m);
LocalEvalMode local_eval_mode_from_string(const std::string& s);

struct RunConfig {
  int rounds = 10;       // global rounds T
  int clients = 5;       // K
  int local_epochs = 1;  // E
  double tau = 2.66;
  double mu = 0.1;
  double lr = 1e-3;
  int batch_size = 64;
  int rank = 4;        // r
  int lora_start = 2;  // l
  int boundary = 9;    // m
  double gamma = 0.25;
  bool ex_query = true;
  SimKind sim_kind = SimKind::cosine;
  bool negate_euclidean = true;
  DescStyle desc_style = DescStyle::GT;
  int desc_variants = 3;
  double upload_ratio = 1.0;
  int text_epochs = 1;
  PartitionKind partition = PartitionKind::dirichlet;
  double alpha = 0.1;
  int classes_per_client = 1;
  DatasetSpec dataset;
  int num_blocks = 12;
  int d_in = 16;
  int d_hidden = 32;
  int d_embed = 16;
  Activation activation = Activation::tanh;
  std::uint64_t seed = 1;
  LocalEvalMode local_eval_mode = LocalEvalMode::auto_rule;
  bool parallel_clients = true;

  EncoderConfig encoder_config() const;
  ObjectiveConfig objective_config() const;
  ClientConfig client_config() const;
  ServerConfig server_config() const;
  PartitionSpec partition_spec() const;
  LocalEvalMode resolved_eval_mode() const;

  // Throws ConfigError on any inconsistency.
  void validate() const;
};

struct RoundMetrics {
  int round = 0;
  double global_accuracy = 0.0;
  std::vector<std::optional<double>> local_accuracies;
  std::optional<double> local_accuracy_mean;
  double local_ce_loss = 0.0;
  double text_loss = 0.0;
  std::int64_t upload_scalars_factored = 0;
  std::int64_t upload_scalars_dense = 0;
  std::int64_t download_scalars_factored = 0;
  std::int64_t download_scalars_dense = 0;
  double wall_time_sec = 0.0;  // recorded, never serialized into the JSONL
};

// In-process exchange between clients and server with a per-message scalar
// ledger. Clients may push from multiple threads; collection orders by
// client id so aggregation never depends on arrival order.
class Transport {
 public:
  struct RoundLedger {
    std::int64_t upload_factored = 0;
    std::int64_t upload_dense = 0;
    std::int64_t download_factored = 0;
    std::int64_t download_dense = 0;
  };

  // An unmetered transport moves packages without touching the ledger
  // (used when a baseline only simulates local work).
  Transport(const EncoderConfig& image_cfg, int d_embed, bool metered = true)
      : image_cfg_(image_cfg), d_embed_(d_embed), metered_(metered) {}

  void upload(UploadPackage&& pkg);
  std::vector<UploadPackage> collect(std::size_t expected);

  // One personalized-delta message to one client.
  void meter_download_deltas();
  // One text-feature broadcast per round.
  void meter_download_text(int num_classes);

  RoundLedger round_ledger() const;
  void start_round();

 private:
  EncoderConfig image_cfg_;
  int d_embed_ = 0;
  bool metered_ = true;
  mutable std::mutex mutex_;
  std::vector<UploadPackage> pending_;
  RoundLedger current_;
};

struct RoundUploadStats {
  std::vector<std::int64_t> prototypes;  // per client
  std::vector<std::int64_t> shared;      // per client, after subsampling
};

struct AggregationRecord {
  int round = 0;
  Matrix alpha;
  double global_delta_norm = 0.0;
  std::vector<double> personalized_delta_norms;
};

struct RunResult {
  RunConfig config;
  std::string run_kind = "fedalign";  // or a baseline name
  std::vector<RoundMetrics> metrics;  // metrics[0] is the zero-shot record
  std::vector<RoundUploadStats> upload_stats;  // one entry per trained round
  std::vector<AggregationRecord> agg_records;
  std::vector<DenseDelta> final_global_deltas;
  std::vector<std::vector<DenseDelta>> final_eval_deltas;  // per client
  std::vector<Vec> final_text_feats;
  std::vector<std::set<int>> client_labels;
  double wall_time_total = 0.0;
};

enum class BaselineKind { zero_shot, local_only, weighted_only };

const char* to_string(BaselineKind k);
BaselineKind baseline_kind_from_string(const std::string& s);

// Full protocol: T rounds of local updates, text training, aggregation and
// broadcast, with per-round metrics. Deterministic for a fixed config.
RunResult run_training(const RunConfig& cfg);

// zero_shot: no training at all. local_only: clients train, nothing is
// exchanged. weighted_only: sample-count weighted aggregation replaces the
// query-based personalization everywhere.
RunResult run_baseline(const RunConfig& cfg, BaselineKind kind);

// Backbone with the given per-adapted-layer offsets installed, no adapters.
EncoderState with_offsets(const EncoderState& backbone,
                          const std::vector<DenseDelta>& deltas);

// Argmax accuracy over a dataset; throws ParameterError when it is empty.
double evaluate_accuracy(const EncoderState& encoder,
                         const std::vector<Vec>& text_feats,
                         const Dataset& data, const ObjectiveConfig& obj);

double evaluate_global(const EncoderState& backbone,
                       const std::vector<DenseDelta>& global_deltas,
                       const std::vector<Vec>& text_feats, const Dataset& test,
                       const ObjectiveConfig& obj);

// Per-client accuracy on the label-filtered local test sets; clients with an
// empty local test set report no value.
std::vector<std::optional<double>> evaluate_local(
    const EncoderState& backbone,
    const std::vector<std::vector<DenseDelta>>& per_client_deltas,
    const std::vector<Vec>& text_feats,
    const std::vector<std::set<int>>& client_labels, const Dataset& test,
    const ObjectiveConfig& obj);

struct CommLedgerEntry {
  int round = 0;
  std::int64_t upload_factored = 0;
  std::int64_t upload_dense = 0;
  std::int64_t download_factored = 0;
  std::int64_t download_dense = 0;
};

struct CommLedger {
  std::vector<CommLedgerEntry> rounds;
  CommLedgerEntry totals;
};

// Closed-form per-round scalar counts recomputed from the recorded upload
// statistics and the configuration.
CommLedger comm_ledger(const RunResult& result);

}  // namespace fedalign
