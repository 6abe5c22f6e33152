#include "fedalign/server.hpp"

#include <string>

#include "fedalign/errors.hpp"

namespace fedalign {

std::map<int, double> relational_attention(const std::map<int, Vec>& protos_k,
                                           const std::map<int, Vec>& protos_j,
                                           SimKind sim_kind,
                                           bool negate_euclidean) {
  std::map<int, double> factors;
  for (const auto& [c, u_k] : protos_k) {
    double total = 0.0;
    for (const auto& [c_other, u_j] : protos_j) {
      total += similarity(u_k, u_j, sim_kind, negate_euclidean);
    }
    factors[c] = total;
  }
  return factors;
}

CoefficientMatrix influence_coefficients(
    const std::vector<std::map<int, Vec>>& prototypes,
    const std::vector<std::map<int, std::int64_t>>& class_counts,
    const std::vector<std::int64_t>& sample_counts, bool ex_query,
    SimKind sim_kind, bool negate_euclidean) {
  const std::size_t num_clients = prototypes.size();
  if (num_clients == 0 || class_counts.size() != num_clients ||
      sample_counts.size() != num_clients) {
    throw ParameterError("influence_coefficients: inconsistent inputs");
  }
  CoefficientMatrix coeffs;
  coeffs.alpha = Matrix(num_clients, num_clients);
  coeffs.raw_scores = Matrix(num_clients, num_clients);
  coeffs.d_raw.assign(num_clients,
                      std::vector<std::map<int, double>>(num_clients));
  for (std::size_t k = 0; k < num_clients; ++k) {
    Vec row(num_clients, 0.0);
    for (std::size_t j = 0; j < num_clients; ++j) {
      coeffs.d_raw[k][j] = relational_attention(prototypes[k], prototypes[j],
                                                sim_kind, negate_euclidean);
      if (sample_counts[k] <= 0) continue;
      double score = 0.0;
      for (const auto& [c, d] : coeffs.d_raw[k][j]) {
        const auto it = class_counts[k].find(c);
        const std::int64_t n_kc = it == class_counts[k].end() ? 0 : it->second;
        score += static_cast<double>(n_kc) /
                 static_cast<double>(sample_counts[k]) * d;
      }
      row[j] = score;
    }
    for (std::size_t j = 0; j < num_clients; ++j) {
      coeffs.raw_scores.at(k, j) = row[j];
    }
    const std::vector<std::size_t> mask =
        ex_query ? std::vector<std::size_t>{k} : std::vector<std::size_t>{};
    const Vec soft = masked_softmax(row, mask);
    for (std::size_t j = 0; j < num_clients; ++j) {
      coeffs.alpha.at(k, j) = soft[j];
    }
  }
  return coeffs;
}

namespace {

void check_delta_stacks(
    const std::vector<std::vector<DenseDelta>>& client_deltas) {
  if (client_deltas.empty()) {
    throw ShapeError("aggregate: no client deltas");
  }
  const std::size_t layers = client_deltas[0].size();
  for (const auto& stack : client_deltas) {
    if (stack.size() != layers) {
      throw ShapeError("aggregate: clients disagree on layer count");
    }
  }
}

}  // namespace

std::vector<DenseDelta> query_aggregate(
    const Vec& alpha_row,
    const std::vector<std::vector<DenseDelta>>& client_deltas) {
  check_delta_stacks(client_deltas);
  if (alpha_row.size() != client_deltas.size()) {
    throw ShapeError("query_aggregate: row length vs client count");
  }
  const std::size_t layers = client_deltas[0].size();
  std::vector<DenseDelta> out;
  out.reserve(layers);
  for (std::size_t layer = 0; layer < layers; ++layer) {
    std::vector<DenseDelta> per_client;
    per_client.reserve(client_deltas.size());
    for (const auto& stack : client_deltas) per_client.push_back(stack[layer]);
    out.push_back(linear_combine(per_client, alpha_row));
  }
  return out;
}

std::vector<DenseDelta> weighted_aggregate(
    const std::vector<std::vector<DenseDelta>>& client_deltas,
    const std::vector<std::int64_t>& sample_counts) {
  check_delta_stacks(client_deltas);
  if (sample_counts.size() != client_deltas.size()) {
    throw ShapeError("weighted_aggregate: count vector vs client count");
  }
  std::int64_t total = 0;
  for (const std::int64_t n : sample_counts) {
    if (n < 0) throw ParameterError("weighted_aggregate: negative count");
    total += n;
  }
  if (total == 0) {
    throw ParameterError("weighted_aggregate: all sample counts are zero");
  }
  Vec weights(sample_counts.size());
  for (std::size_t j = 0; j < sample_counts.size(); ++j) {
    weights[j] =
        static_cast<double>(sample_counts[j]) / static_cast<double>(total);
  }
  return query_aggregate(weights, client_deltas);
}

std::vector<DenseDelta> splice(const std::vector<DenseDelta>& global_deltas,
                               const std::vector<DenseDelta>& personal_deltas,
                               int lora_start, int boundary, int num_blocks) {
  if (lora_start < 0 || boundary < lora_start || boundary > num_blocks + 1) {
    throw ParameterError("splice: need lora_start <= boundary <= L+1");
  }
  const std::size_t layers = static_cast<std::size_t>(num_blocks - lora_start);
  if (global_deltas.size() != layers || personal_deltas.size() != layers) {
    throw ParameterError("splice: stack sizes do not cover blocks l..L-1");
  }
  std::vector<DenseDelta> out;
  out.reserve(layers);
  for (int block = lora_start; block < num_blocks; ++block) {
    const std::size_t idx = static_cast<std::size_t>(block - lora_start);
    out.push_back(block < boundary ? global_deltas[idx]
                                   : personal_deltas[idx]);
  }
  return out;
}

std::vector<Vec> emit_text_features(
    const EncoderState& text_encoder,
    const std::vector<ClassDescription>& descs) {
  const ComposedEncoder composed = compose(text_encoder);
  std::vector<Vec> feats;
  feats.reserve(descs.size());
  for (const ClassDescription& desc : descs) {
    if (desc.variants.empty()) {
      throw ContractError("emit_text_features: description has no variants");
    }
    feats.push_back(
        forward(composed, text_encoder.cfg, desc.variants[0], nullptr));
  }
  return feats;
}

TextTrainOutcome train_text_encoder(ServerState& server,
                                    const std::vector<UploadPackage>& pkgs) {
  std::vector<Vec> feats;
  std::vector<int> labels;
  for (const UploadPackage& pkg : pkgs) {
    for (const auto& [feat, label] : pkg.shared_feats) {
      feats.push_back(feat);
      labels.push_back(label);
    }
  }
  TextTrainOutcome outcome;
  if (feats.empty()) {
    outcome.empty_upload = true;
    return outcome;
  }
  ObjectiveConfig obj;
  obj.tau = server.cfg.tau;
  obj.mu = 0.0;
  obj.sim_kind = server.cfg.sim_kind;
  obj.negate_euclidean = server.cfg.negate_euclidean;

  server.adam.lr = server.cfg.lr;
  const std::vector<Matrix*> params = trainable_params(server.text_encoder);
  double loss_total = 0.0;
  for (int epoch = 0; epoch < server.cfg.text_epochs; ++epoch) {
    TextBatchResult res = text_objective(feats, labels, server.text_encoder,
                                         server.descriptions, obj, server.rng);
    adam_step(params, gradient_ptrs(res.grads), server.adam);
    loss_total += res.loss;
  }
  outcome.loss =
      loss_total / static_cast<double>(std::max(1, server.cfg.text_epochs));
  server.text_feats = emit_text_features(server.text_encoder,
                                         server.descriptions);
  return outcome;
}

BroadcastBundle aggregate_and_broadcast(ServerState& server,
                                        const std::vector<UploadPackage>& pkgs) {
  const std::size_t num_clients = pkgs.size();
  if (num_clients == 0) {
    throw ParameterError("aggregate_and_broadcast: no packages");
  }
  for (std::size_t k = 0; k < num_clients; ++k) {
    if (pkgs[k].client_id != static_cast<int>(k)) {
      throw ContractError(
          "aggregate_and_broadcast: packages must be ordered by client id");
    }
  }
  std::vector<std::vector<DenseDelta>> deltas;
  std::vector<std::map<int, Vec>> prototypes;
  std::vector<std::map<int, std::int64_t>> class_counts;
  std::vector<std::int64_t> sample_counts;
  deltas.reserve(num_clients);
  for (const UploadPackage& pkg : pkgs) {
    deltas.push_back(pkg.deltas);
    prototypes.push_back(pkg.prototypes);
    class_counts.push_back(pkg.class_counts);
    sample_counts.push_back(pkg.num_samples);
  }

  BroadcastBundle bundle;
  bundle.coeffs = influence_coefficients(
      prototypes, class_counts, sample_counts, server.cfg.ex_query,
      server.cfg.sim_kind, server.cfg.negate_euclidean);
  bundle.global_deltas = weighted_aggregate(deltas, sample_counts);

  const int lora_start = server.image_cfg.lora_start;
  const int num_blocks = server.image_cfg.num_blocks;
  bundle.personalized.reserve(num_clients);
  for (std::size_t k = 0; k < num_clients; ++k) {
    Vec row(num_clients);
    for (std::size_t j = 0; j < num_clients; ++j) {
      row[j] = bundle.coeffs.alpha.at(k, j);
    }
    const std::vector<DenseDelta> query = query_aggregate(row, deltas);
    bundle.personalized.push_back(splice(bundle.global_deltas, query,
                                         lora_start, server.cfg.boundary_m,
                                         num_blocks));
  }
  server.global_deltas = bundle.global_deltas;
  return bundle;
}

}  // namespace fedalign
