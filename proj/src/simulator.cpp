#include "fedalign/simulator.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <exception>
#include <string>
#include <thread>

#include "fedalign/errors.hpp"

namespace fedalign {

const char* to_string(LocalEvalMode m) {
  switch (m) {
    case LocalEvalMode::auto_rule: return "auto";
    case LocalEvalMode::aggregated_with_self: return "aggregated_with_self";
    case LocalEvalMode::raw_local: return "raw_local";
  }
  return "unknown";
}

LocalEvalMode local_eval_mode_from_string(const std::string& s) {
  if (s == "auto") return LocalEvalMode::auto_rule;
  if (s == "aggregated_with_self") return LocalEvalMode::aggregated_with_self;
  if (s == "raw_local") return LocalEvalMode::raw_local;
  throw ParameterError("unknown local_eval_mode: " + s);
}

const char* to_string(BaselineKind k) {
  switch (k) {
    case BaselineKind::zero_shot: return "zero_shot";
    case BaselineKind::local_only: return "local_only";
    case BaselineKind::weighted_only: return "weighted_only";
  }
  return "unknown";
}

BaselineKind baseline_kind_from_string(const std::string& s) {
  if (s == "zero_shot") return BaselineKind::zero_shot;
  if (s == "local_only") return BaselineKind::local_only;
  if (s == "weighted_only") return BaselineKind::weighted_only;
  throw ParameterError("unknown baseline: " + s);
}

EncoderConfig RunConfig::encoder_config() const {
  EncoderConfig enc;
  enc.num_blocks = num_blocks;
  enc.d_in = d_in;
  enc.d_hidden = d_hidden;
  enc.d_embed = d_embed;
  enc.activation = activation;
  enc.lora_start = lora_start;
  enc.rank = rank;
  enc.gamma = gamma;
  return enc;
}

ObjectiveConfig RunConfig::objective_config() const {
  ObjectiveConfig obj;
  obj.tau = tau;
  obj.mu = mu;
  obj.sim_kind = sim_kind;
  obj.negate_euclidean = negate_euclidean;
  return obj;
}

ClientConfig RunConfig::client_config() const {
  ClientConfig ccfg;
  ccfg.local_epochs = local_epochs;
  ccfg.batch_size = batch_size;
  ccfg.mu = mu;
  ccfg.tau = tau;
  ccfg.lr = lr;
  ccfg.upload_ratio = upload_ratio;
  ccfg.sim_kind = sim_kind;
  ccfg.negate_euclidean = negate_euclidean;
  return ccfg;
}

ServerConfig RunConfig::server_config() const {
  ServerConfig scfg;
  scfg.boundary_m = boundary;
  scfg.ex_query = ex_query;
  scfg.tau = tau;
  scfg.lr = lr;
  scfg.text_epochs = text_epochs;
  scfg.sim_kind = sim_kind;
  scfg.negate_euclidean = negate_euclidean;
  return scfg;
}

PartitionSpec RunConfig::partition_spec() const {
  PartitionSpec spec;
  spec.kind = partition;
  spec.alpha = alpha;
  spec.classes_per_client = classes_per_client;
  spec.num_clients = clients;
  return spec;
}

LocalEvalMode RunConfig::resolved_eval_mode() const {
  if (local_eval_mode != LocalEvalMode::auto_rule) return local_eval_mode;
  return partition == PartitionKind::pathological
             ? LocalEvalMode::raw_local
             : LocalEvalMode::aggregated_with_self;
}

void RunConfig::validate() const {
  if (rounds < 0) throw ConfigError("rounds must be >= 0");
  if (clients < 1) throw ConfigError("clients must be >= 1");
  if (local_epochs < 1) throw ConfigError("local_epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (!(tau > 0.0)) throw ConfigError("tau must be positive");
  if (mu < 0.0) throw ConfigError("mu must be >= 0");
  if (lr < 0.0) throw ConfigError("lr must be >= 0");
  if (!(upload_ratio > 0.0) || upload_ratio > 1.0) {
    throw ConfigError("upload_ratio must be in (0, 1]");
  }
  if (text_epochs < 1) throw ConfigError("text_epochs must be >= 1");
  if (desc_style == DescStyle::GT && desc_variants < 2) {
    throw ConfigError("GT descriptions need desc_variants >= 2");
  }
  if (desc_variants < 1) throw ConfigError("desc_variants must be >= 1");
  encoder_config().validate();
  if (boundary < lora_start || boundary > num_blocks + 1) {
    throw ConfigError("boundary must lie in [lora_start, num_blocks + 1]");
  }
  if (ex_query && clients == 1) {
    throw ConfigError("ex_query with a single client leaves no aggregation "
                      "support");
  }
  if (dataset.num_classes < 2) {
    throw ConfigError("dataset needs at least two classes");
  }
  if (dataset.train_per_class < 1 || dataset.test_per_class < 1) {
    throw ConfigError("dataset needs at least one sample per class and split");
  }
  if (dataset.separation < 0.0 || dataset.noise_std < 0.0) {
    throw ConfigError("dataset separation and noise_std must be >= 0");
  }
  if (partition == PartitionKind::dirichlet && !(alpha > 0.0)) {
    throw ConfigError("Dir partition needs alpha > 0");
  }
  if (partition == PartitionKind::pathological &&
      static_cast<std::int64_t>(classes_per_client) * clients >
          dataset.num_classes) {
    throw ConfigError("Path partition infeasible: classes_per_client * "
                      "clients exceeds the class count");
  }
}

void Transport::upload(UploadPackage&& pkg) {
  std::int64_t factored = 0;
  std::int64_t dense = 0;
  if (metered_) {
    factored = upload_cost(pkg, CostMode::factored, d_embed_, image_cfg_);
    dense = upload_cost(pkg, CostMode::dense, d_embed_, image_cfg_);
  }
  std::lock_guard<std::mutex> lock(mutex_);
  current_.upload_factored += factored;
  current_.upload_dense += dense;
  pending_.push_back(std::move(pkg));
}

std::vector<UploadPackage> Transport::collect(std::size_t expected) {
  std::lock_guard<std::mutex> lock(mutex_);
  if (pending_.size() != expected) {
    throw ContractError("transport: expected " + std::to_string(expected) +
                        " packages, have " + std::to_string(pending_.size()));
  }
  std::sort(pending_.begin(), pending_.end(),
            [](const UploadPackage& a, const UploadPackage& b) {
              return a.client_id < b.client_id;
            });
  std::vector<UploadPackage> out;
  out.swap(pending_);
  return out;
}

void Transport::meter_download_deltas() {
  std::lock_guard<std::mutex> lock(mutex_);
  current_.download_factored += image_cfg_.stack_lora_params();
  current_.download_dense += image_cfg_.stack_dense_params();
}

void Transport::meter_download_text(int num_classes) {
  std::lock_guard<std::mutex> lock(mutex_);
  const std::int64_t scalars =
      static_cast<std::int64_t>(num_classes) * d_embed_;
  current_.download_factored += scalars;
  current_.download_dense += scalars;
}

Transport::RoundLedger Transport::round_ledger() const {
  std::lock_guard<std::mutex> lock(mutex_);
  return current_;
}

void Transport::start_round() {
  std::lock_guard<std::mutex> lock(mutex_);
  current_ = RoundLedger{};
}

EncoderState with_offsets(const EncoderState& backbone,
                          const std::vector<DenseDelta>& deltas) {
  EncoderState state = backbone;
  std::size_t idx = 0;
  for (int i = 0; i < state.cfg.num_blocks; ++i) {
    state.blocks[i].lora.reset();
    if (!state.cfg.block_adapted(i)) continue;
    if (idx >= deltas.size()) {
      throw ShapeError("with_offsets: not enough delta layers");
    }
    if (!state.blocks[i].w0.same_shape(deltas[idx])) {
      throw ShapeError("with_offsets: delta shape mismatch");
    }
    state.blocks[i].init_offset = deltas[idx];
    ++idx;
  }
  if (idx != deltas.size()) {
    throw ShapeError("with_offsets: too many delta layers");
  }
  return state;
}

double evaluate_accuracy(const EncoderState& encoder,
                         const std::vector<Vec>& text_feats,
                         const Dataset& data, const ObjectiveConfig& obj) {
  if (data.empty()) {
    throw ParameterError("evaluate_accuracy: empty dataset");
  }
  const ComposedEncoder composed = compose(encoder);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const Vec emb = forward(composed, encoder.cfg, data.xs[i], nullptr);
    const Vec probs = predict_probs(emb, text_feats, obj);
    if (static_cast<int>(argmax(probs)) == data.ys[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

double evaluate_global(const EncoderState& backbone,
                       const std::vector<DenseDelta>& global_deltas,
                       const std::vector<Vec>& text_feats, const Dataset& test,
                       const ObjectiveConfig& obj) {
  return evaluate_accuracy(with_offsets(backbone, global_deltas), text_feats,
                           test, obj);
}

std::vector<std::optional<double>> evaluate_local(
    const EncoderState& backbone,
    const std::vector<std::vector<DenseDelta>>& per_client_deltas,
    const std::vector<Vec>& text_feats,
    const std::vector<std::set<int>>& client_labels, const Dataset& test,
    const ObjectiveConfig& obj) {
  if (per_client_deltas.size() != client_labels.size()) {
    throw ShapeError("evaluate_local: clients vs label sets");
  }
  std::vector<std::optional<double>> accs(per_client_deltas.size());
  for (std::size_t k = 0; k < per_client_deltas.size(); ++k) {
    const Dataset local = build_local_testset(test, client_labels[k]);
    if (local.empty()) continue;  // recorded as absent, not zero
    accs[k] = evaluate_accuracy(with_offsets(backbone, per_client_deltas[k]),
                                text_feats, local, obj);
  }
  return accs;
}

namespace {

std::vector<DenseDelta> zero_delta_stack(const EncoderConfig& cfg) {
  std::vector<DenseDelta> stack;
  for (int i = 0; i < cfg.num_blocks; ++i) {
    if (!cfg.block_adapted(i)) continue;
    stack.emplace_back(cfg.block_rows(i), cfg.block_cols(i));
  }
  return stack;
}

double stack_norm(const std::vector<DenseDelta>& stack) {
  double sq = 0.0;
  for (const DenseDelta& d : stack) {
    const double n = d.frobenius_norm();
    sq += n * n;
  }
  return std::sqrt(sq);
}

std::optional<double> mean_present(
    const std::vector<std::optional<double>>& values) {
  double total = 0.0;
  std::size_t n = 0;
  for (const auto& v : values) {
    if (v) {
      total += *v;
      ++n;
    }
  }
  if (n == 0) return std::nullopt;
  return total / static_cast<double>(n);
}

void run_local_updates(std::vector<ClientState>& clients,
                       const ClientConfig& ccfg, Transport& transport,
                       bool parallel) {
  if (!parallel || clients.size() == 1) {
    for (ClientState& client : clients) {
      transport.upload(local_update(client, ccfg));
    }
    return;
  }
  std::vector<std::thread> workers;
  std::mutex err_mutex;
  std::exception_ptr first_error;
  workers.reserve(clients.size());
  for (ClientState& client : clients) {
    workers.emplace_back([&client, &ccfg, &transport, &err_mutex,
                          &first_error] {
      try {
        transport.upload(local_update(client, ccfg));
      } catch (...) {
        std::lock_guard<std::mutex> lock(err_mutex);
        if (!first_error) first_error = std::current_exception();
      }
    });
  }
  for (std::thread& w : workers) w.join();
  if (first_error) std::rethrow_exception(first_error);
}

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() -
                                       start)
      .count();
}

RunResult run_engine(const RunConfig& cfg,
                     std::optional<BaselineKind> baseline) {
  cfg.validate();
  const auto run_start = std::chrono::steady_clock::now();

  const EncoderConfig enc_cfg = cfg.encoder_config();
  const ObjectiveConfig obj = cfg.objective_config();
  const ClientConfig ccfg = cfg.client_config();
  const int num_classes = cfg.dataset.num_classes;

  Rng root(cfg.seed);
  Rng data_rng = root.split("data");
  Rng means_rng = data_rng.split("means");
  const std::vector<Vec> means =
      sample_class_means(num_classes, cfg.d_in, cfg.dataset.separation,
                         cfg.dataset.noise_std, means_rng);
  Rng train_rng = data_rng.split("train");
  const Dataset train = sample_around_means(
      means, cfg.dataset.train_per_class, cfg.dataset.noise_std, train_rng);
  Rng test_rng = data_rng.split("test");
  const Dataset test = sample_around_means(
      means, cfg.dataset.test_per_class, cfg.dataset.noise_std, test_rng);

  Rng part_rng = root.split("partition");
  const Partition partition = make_partition(train, cfg.partition_spec(),
                                             part_rng);

  const EncoderState image_backbone =
      make_backbone(enc_cfg, root.split("backbone/image"));

  ServerState server;
  server.cfg = cfg.server_config();
  server.image_cfg = enc_cfg;
  server.text_encoder = make_backbone(enc_cfg, root.split("backbone/text"));
  {
    Rng lora_rng = root.split("server/lora");
    attach_fresh_lora(server.text_encoder, lora_rng);
  }
  server.descriptions =
      make_descriptions(num_classes, cfg.desc_style, cfg.desc_variants,
                        cfg.d_in, root.split("descriptions"));
  server.rng = root.split("server/rng");
  server.adam.lr = cfg.lr;
  server.text_feats =
      emit_text_features(server.text_encoder, server.descriptions);
  server.global_deltas = zero_delta_stack(enc_cfg);

  const Rng client_root = root.split("client");
  std::vector<ClientState> clients(cfg.clients);
  std::vector<std::set<int>> labels(cfg.clients);
  for (int k = 0; k < cfg.clients; ++k) {
    ClientState& client = clients[k];
    client.id = k;
    client.rng = client_root.split(static_cast<std::uint64_t>(k));
    client.shard.num_classes = num_classes;
    for (const std::size_t idx : partition.assignments[k]) {
      client.shard.xs.push_back(train.xs[idx]);
      client.shard.ys.push_back(train.ys[idx]);
    }
    client.encoder = image_backbone;
    attach_fresh_lora(client.encoder, client.rng);
    client.text_feats = server.text_feats;
    client.adam.lr = cfg.lr;
    labels[k] = client_label_set(partition, k);
  }

  RunResult result;
  result.config = cfg;
  result.run_kind = baseline ? to_string(*baseline) : "fedalign";
  result.client_labels = labels;

  const std::vector<DenseDelta> zero_stack = zero_delta_stack(enc_cfg);
  {
    const auto round_start = std::chrono::steady_clock::now();
    RoundMetrics m0;
    m0.round = 0;
    m0.global_accuracy = evaluate_global(image_backbone, zero_stack,
                                         server.text_feats, test, obj);
    m0.local_accuracies = evaluate_local(
        image_backbone,
        std::vector<std::vector<DenseDelta>>(cfg.clients, zero_stack),
        server.text_feats, labels, test, obj);
    m0.local_accuracy_mean = mean_present(m0.local_accuracies);
    m0.wall_time_sec = seconds_since(round_start);
    result.metrics.push_back(std::move(m0));
  }
  result.final_global_deltas = zero_stack;
  result.final_eval_deltas.assign(cfg.clients, zero_stack);
  result.final_text_feats = server.text_feats;

  const bool is_zero_shot = baseline == BaselineKind::zero_shot;
  const bool is_local_only = baseline == BaselineKind::local_only;
  const bool is_weighted_only = baseline == BaselineKind::weighted_only;
  const int rounds = is_zero_shot ? 0 : cfg.rounds;

  Transport transport(enc_cfg, cfg.d_embed, /*metered=*/!is_local_only);
  const LocalEvalMode eval_mode = cfg.resolved_eval_mode();

  for (int round = 1; round <= rounds; ++round) {
    const auto round_start = std::chrono::steady_clock::now();
    transport.start_round();
    run_local_updates(clients, ccfg, transport, cfg.parallel_clients);
    std::vector<UploadPackage> pkgs =
        transport.collect(static_cast<std::size_t>(cfg.clients));

    if (!is_local_only) {
      RoundUploadStats stats;
      for (const UploadPackage& pkg : pkgs) {
        stats.prototypes.push_back(
            static_cast<std::int64_t>(pkg.prototypes.size()));
        stats.shared.push_back(
            static_cast<std::int64_t>(pkg.shared_feats.size()));
      }
      result.upload_stats.push_back(std::move(stats));
    }

    double text_loss = 0.0;
    if (!is_local_only) {
      text_loss = train_text_encoder(server, pkgs).loss;
    }

    std::vector<std::vector<DenseDelta>> raw_deltas;
    raw_deltas.reserve(pkgs.size());
    std::vector<std::int64_t> sample_counts;
    for (const UploadPackage& pkg : pkgs) {
      raw_deltas.push_back(pkg.deltas);
      sample_counts.push_back(pkg.num_samples);
    }

    std::vector<std::vector<DenseDelta>> personalized;
    AggregationRecord agg;
    agg.round = round;
    if (is_local_only) {
      // nothing crosses the wire
    } else if (is_weighted_only) {
      server.global_deltas = weighted_aggregate(raw_deltas, sample_counts);
      personalized.assign(cfg.clients, server.global_deltas);
      agg.alpha = Matrix(cfg.clients, cfg.clients);
      std::int64_t total = 0;
      for (const std::int64_t n : sample_counts) total += n;
      for (int k = 0; k < cfg.clients; ++k) {
        for (int j = 0; j < cfg.clients; ++j) {
          agg.alpha.at(k, j) = static_cast<double>(sample_counts[j]) /
                               static_cast<double>(total);
        }
      }
    } else {
      BroadcastBundle bundle = aggregate_and_broadcast(server, pkgs);
      personalized = std::move(bundle.personalized);
      agg.alpha = bundle.coeffs.alpha;
    }

    if (!is_local_only) {
      for (int k = 0; k < cfg.clients; ++k) {
        transport.meter_download_deltas();
        apply_broadcast(clients[k], personalized[k], server.text_feats);
      }
      transport.meter_download_text(num_classes);
      agg.global_delta_norm = stack_norm(server.global_deltas);
      for (const auto& stack : personalized) {
        agg.personalized_delta_norms.push_back(stack_norm(stack));
      }
      result.agg_records.push_back(std::move(agg));
    }

    RoundMetrics m;
    m.round = round;
    const Transport::RoundLedger ledger = transport.round_ledger();
    m.upload_scalars_factored = ledger.upload_factored;
    m.upload_scalars_dense = ledger.upload_dense;
    m.download_scalars_factored = ledger.download_factored;
    m.download_scalars_dense = ledger.download_dense;
    m.text_loss = text_loss;
    {
      double ce_total = 0.0;
      int n = 0;
      for (const UploadPackage& pkg : pkgs) {
        if (pkg.empty_shard) continue;
        ce_total += pkg.mean_ce;
        ++n;
      }
      m.local_ce_loss = n > 0 ? ce_total / n : 0.0;
    }

    std::vector<std::vector<DenseDelta>> eval_deltas;
    if (is_local_only) {
      double acc_total = 0.0;
      for (const UploadPackage& pkg : pkgs) {
        acc_total += evaluate_global(image_backbone, pkg.deltas,
                                     server.text_feats, test, obj);
      }
      m.global_accuracy = acc_total / static_cast<double>(cfg.clients);
      eval_deltas = raw_deltas;
    } else {
      m.global_accuracy = evaluate_global(
          image_backbone, server.global_deltas, server.text_feats, test, obj);
      if (eval_mode == LocalEvalMode::raw_local) {
        eval_deltas = raw_deltas;
      } else if (is_weighted_only) {
        eval_deltas.assign(cfg.clients, server.global_deltas);
      } else {
        // Final inference keeps the self weight: recompute the coefficients
        // without the ex-query mask and splice as usual.
        std::vector<std::map<int, Vec>> prototypes;
        std::vector<std::map<int, std::int64_t>> class_counts;
        for (const UploadPackage& pkg : pkgs) {
          prototypes.push_back(pkg.prototypes);
          class_counts.push_back(pkg.class_counts);
        }
        const CoefficientMatrix with_self = influence_coefficients(
            prototypes, class_counts, sample_counts, /*ex_query=*/false,
            cfg.sim_kind, cfg.negate_euclidean);
        for (int k = 0; k < cfg.clients; ++k) {
          Vec row(cfg.clients);
          for (int j = 0; j < cfg.clients; ++j) {
            row[j] = with_self.alpha.at(k, j);
          }
          eval_deltas.push_back(splice(server.global_deltas,
                                       query_aggregate(row, raw_deltas),
                                       cfg.lora_start, cfg.boundary,
                                       cfg.num_blocks));
        }
      }
    }
    m.local_accuracies = evaluate_local(image_backbone, eval_deltas,
                                        server.text_feats, labels, test, obj);
    m.local_accuracy_mean = mean_present(m.local_accuracies);
    m.wall_time_sec = seconds_since(round_start);
    result.metrics.push_back(std::move(m));

    result.final_global_deltas = server.global_deltas;
    result.final_eval_deltas = std::move(eval_deltas);
    result.final_text_feats = server.text_feats;
  }

  result.wall_time_total = seconds_since(run_start);
  return result;
}

}  // namespace

RunResult run_training(const RunConfig& cfg) {
  return run_engine(cfg, std::nullopt);
}

RunResult run_baseline(const RunConfig& cfg, BaselineKind kind) {
  return run_engine(cfg, kind);
}

CommLedger comm_ledger(const RunResult& result) {
  const EncoderConfig enc_cfg = result.config.encoder_config();
  const std::int64_t lora_params = enc_cfg.stack_lora_params();
  const std::int64_t dense_params = enc_cfg.stack_dense_params();
  const std::int64_t d_embed = result.config.d_embed;
  const std::int64_t text_scalars =
      static_cast<std::int64_t>(result.config.dataset.num_classes) * d_embed;
  const bool downloads = result.run_kind != "local_only";

  CommLedger ledger;
  for (std::size_t t = 0; t < result.upload_stats.size(); ++t) {
    const RoundUploadStats& stats = result.upload_stats[t];
    CommLedgerEntry entry;
    entry.round = static_cast<int>(t) + 1;
    for (std::size_t k = 0; k < stats.prototypes.size(); ++k) {
      const std::int64_t payload =
          d_embed * stats.prototypes[k] + (d_embed + 1) * stats.shared[k];
      entry.upload_factored += lora_params + payload;
      entry.upload_dense += dense_params + payload;
    }
    if (downloads) {
      const std::int64_t k =
          static_cast<std::int64_t>(stats.prototypes.size());
      entry.download_factored = k * lora_params + text_scalars;
      entry.download_dense = k * dense_params + text_scalars;
    }
    ledger.rounds.push_back(entry);
    ledger.totals.upload_factored += entry.upload_factored;
    ledger.totals.upload_dense += entry.upload_dense;
    ledger.totals.download_factored += entry.download_factored;
    ledger.totals.download_dense += entry.download_dense;
  }
  return ledger;
}

}  // namespace fedalign
