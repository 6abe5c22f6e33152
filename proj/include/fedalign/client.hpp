#pragma once

#include <cstdint>
#include <map>
#include <utility>
#include <vector>

#include "fedalign/datagen.hpp"
#include "fedalign/encoder.hpp"
#include "fedalign/objectives.hpp"

namespace fedalign {

struct ClientConfig {
  int local_epochs = 1;
  int batch_size = 64;
  double mu = 0.1;
  double tau = 2.66;
  double lr = 1e-3;
  double upload_ratio = 1.0;  // fraction of correct features shipped
  SimKind sim_kind = SimKind::cosine;
  bool negate_euclidean = true;
};

struct ClientState {
  int id = 0;
  Dataset shard;
  EncoderState encoder;
  AdamState adam;
  std::vector<Vec> text_feats;  // last broadcast, one per class
  Rng rng;

  ClientState() : rng(0) {}
};

// Per-round payload: cumulative effective deltas per adapted layer, class
// prototypes, the correctly predicted feature subset, and the counts.
struct UploadPackage {
  int client_id = 0;
  std::vector<DenseDelta> deltas;
  std::map<int, Vec> prototypes;
  std::vector<std::pair<Vec, int>> shared_feats;
  std::int64_t num_samples = 0;                    // N_k
  std::map<int, std::int64_t> class_counts;        // N_{k,c}
  std::int64_t num_correct = 0;                    // N~_k before subsampling
  std::map<int, std::int64_t> correct_counts;      // N~_{k,c}
  double mean_ce = 0.0;  // mean per-step batch CE during this round
  bool empty_shard = false;
};

// Cumulative effective change per adapted layer: init_offset + gamma b a.
std::vector<DenseDelta> cumulative_deltas(const EncoderState& encoder);

// Mean of the correctly predicted features per class; classes with no entry
// are absent from the map.
std::map<int, Vec> compute_prototypes(
    const std::vector<std::pair<Vec, int>>& correct_feats);

// E epochs of mini-batch Adam on the combined local loss. During the final
// epoch the correctly predicted (feature, label) pairs are collected; the
// prototypes come from the full correct set, the shared features are then
// subsampled to ceil(upload_ratio * N~_k).
UploadPackage local_update(ClientState& client, const ClientConfig& cfg);

// Install broadcast deltas as the new frozen offsets, reattach fresh
// adapters, replace the text features, and reset the optimizer.
void apply_broadcast(ClientState& client,
                     const std::vector<DenseDelta>& personalized_deltas,
                     const std::vector<Vec>& text_feats);

enum class CostMode { factored, dense };

// Scalar count of one upload: adapter parameters (factored or dense
// accounting) + d_embed per prototype + (d_embed + 1) per shared feature.
std::int64_t upload_cost(const UploadPackage& pkg, CostMode mode, int d_embed,
                         const EncoderConfig& enc_cfg);

}  // namespace fedalign
