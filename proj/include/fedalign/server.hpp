#pragma once

#include <cstdint>
#include <map>
#include <vector>

#include "fedalign/client.hpp"
#include "fedalign/encoder.hpp"
#include "fedalign/objectives.hpp"

namespace fedalign {

// Row-stochastic aggregation coefficients plus the raw attention factors
// they were built from. Row k weighs every client j's delta for client k's
// personalized initialization.
struct CoefficientMatrix {
  Matrix alpha;       // K x K, rows sum to 1
  Matrix raw_scores;  // pre-softmax influence factors
  // d_{kj}^c factors: d_raw[k][j] maps class -> summed similarity.
  std::vector<std::vector<std::map<int, double>>> d_raw;
};

// d_{kj}^c = sum over classes c' of client j:  sim(u_{k,c}, u_{j,c'}).
// Classes missing on either side contribute nothing.
std::map<int, double> relational_attention(const std::map<int, Vec>& protos_k,
                                           const std::map<int, Vec>& protos_j,
                                           SimKind sim_kind,
                                           bool negate_euclidean = true);

// alpha_{kj} = softmax_j( sum_c (N_{k,c}/N_k) d_{kj}^c ), with the diagonal
// excluded from the softmax support when ex_query is on.
CoefficientMatrix influence_coefficients(
    const std::vector<std::map<int, Vec>>& prototypes,
    const std::vector<std::map<int, std::int64_t>>& class_counts,
    const std::vector<std::int64_t>& sample_counts, bool ex_query,
    SimKind sim_kind, bool negate_euclidean = true);

// Layerwise linear combination of the clients' delta stacks with one
// coefficient row.
std::vector<DenseDelta> query_aggregate(
    const Vec& alpha_row,
    const std::vector<std::vector<DenseDelta>>& client_deltas);

// Layerwise sample-count weighted mean.
std::vector<DenseDelta> weighted_aggregate(
    const std::vector<std::vector<DenseDelta>>& client_deltas,
    const std::vector<std::int64_t>& sample_counts);

// Stacks cover blocks l..L-1; blocks below the boundary m take the global
// deltas, blocks from m upward take the personalized ones. m == l means all
// personalized, m == L+1 all global.
std::vector<DenseDelta> splice(const std::vector<DenseDelta>& global_deltas,
                               const std::vector<DenseDelta>& personal_deltas,
                               int lora_start, int boundary, int num_blocks);

struct ServerConfig {
  int boundary_m = 9;
  bool ex_query = true;
  double tau = 2.66;
  double lr = 1e-3;
  int text_epochs = 1;
  SimKind sim_kind = SimKind::cosine;
  bool negate_euclidean = true;
};

struct ServerState {
  ServerConfig cfg;
  EncoderConfig image_cfg;  // for splice indices and delta shapes
  EncoderState text_encoder;
  std::vector<ClassDescription> descriptions;
  std::vector<DenseDelta> global_deltas;  // per adapted image layer
  std::vector<Vec> text_feats;            // current broadcast features
  AdamState adam;
  Rng rng;

  ServerState() : rng(0) {}
};

// Deterministic per-class features: frozen variant 0 of each description.
std::vector<Vec> emit_text_features(const EncoderState& text_encoder,
                                    const std::vector<ClassDescription>& descs);

struct TextTrainOutcome {
  double loss = 0.0;  // mean pre-step loss across epochs
  bool empty_upload = false;
};

// text_epochs full-batch Adam steps on the union of uploaded features, then
// refreshes server.text_feats. An empty union leaves everything unchanged.
TextTrainOutcome train_text_encoder(ServerState& server,
                                    const std::vector<UploadPackage>& pkgs);

struct BroadcastBundle {
  std::vector<std::vector<DenseDelta>> personalized;  // spliced, per client
  std::vector<DenseDelta> global_deltas;
  CoefficientMatrix coeffs;
};

// Coefficients -> per-client query aggregation -> global weighted
// aggregation -> boundary splice. Packages must arrive one per client in
// ascending id order.
BroadcastBundle aggregate_and_broadcast(ServerState& server,
                                        const std::vector<UploadPackage>& pkgs);

}  // namespace fedalign
