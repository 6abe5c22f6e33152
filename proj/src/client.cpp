#include "fedalign/client.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "fedalign/errors.hpp"
#include "fedalign/kernels.hpp"

namespace fedalign {

std::vector<DenseDelta> cumulative_deltas(const EncoderState& encoder) {
  std::vector<DenseDelta> deltas;
  for (const LayerWeights& layer : encoder.blocks) {
    if (!layer.lora) continue;
    DenseDelta d = layer.init_offset;
    d.add_scaled(effective_delta(*layer.lora), 1.0);
    deltas.push_back(std::move(d));
  }
  return deltas;
}

std::map<int, Vec> compute_prototypes(
    const std::vector<std::pair<Vec, int>>& correct_feats) {
  std::map<int, Vec> sums;
  std::map<int, std::int64_t> counts;
  for (const auto& [feat, label] : correct_feats) {
    auto [it, fresh] = sums.emplace(label, Vec(feat.size(), 0.0));
    kernels::axpy(it->second.data(), 1.0, feat.data(), feat.size());
    ++counts[label];
  }
  for (auto& [label, sum] : sums) {
    kernels::scal(sum.data(), 1.0 / static_cast<double>(counts[label]),
                  sum.size());
  }
  return sums;
}

UploadPackage local_update(ClientState& client, const ClientConfig& cfg) {
  if (cfg.local_epochs < 1 || cfg.batch_size < 1) {
    throw ParameterError("local_update: epochs and batch size must be >= 1");
  }
  UploadPackage pkg;
  pkg.client_id = client.id;
  pkg.num_samples = static_cast<std::int64_t>(client.shard.size());
  for (const int y : client.shard.ys) ++pkg.class_counts[y];

  if (client.shard.empty()) {
    pkg.empty_shard = true;
    pkg.deltas = cumulative_deltas(client.encoder);
    return pkg;
  }
  if (client.text_feats.empty()) {
    throw ContractError("local_update: no text features installed");
  }

  ObjectiveConfig obj;
  obj.tau = cfg.tau;
  obj.mu = cfg.mu;
  obj.sim_kind = cfg.sim_kind;
  obj.negate_euclidean = cfg.negate_euclidean;

  client.adam.lr = cfg.lr;
  const std::vector<Matrix*> params = trainable_params(client.encoder);

  std::vector<std::pair<Vec, int>> collected;
  double ce_total = 0.0;
  std::int64_t steps = 0;

  std::vector<std::size_t> order(client.shard.size());
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 0; epoch < cfg.local_epochs; ++epoch) {
    const bool last_epoch = epoch == cfg.local_epochs - 1;
    client.rng.shuffle(order);
    for (std::size_t start = 0; start < order.size();
         start += cfg.batch_size) {
      const std::size_t end =
          std::min(order.size(), start + cfg.batch_size);
      std::vector<const Vec*> xs;
      std::vector<int> ys;
      xs.reserve(end - start);
      ys.reserve(end - start);
      for (std::size_t i = start; i < end; ++i) {
        xs.push_back(&client.shard.xs[order[i]]);
        ys.push_back(client.shard.ys[order[i]]);
      }
      const ComposedEncoder composed = compose(client.encoder);
      LocalBatchResult res = local_objective(client.encoder, composed, xs, ys,
                                             client.text_feats, obj);
      if (last_epoch) {
        for (std::size_t i = 0; i < ys.size(); ++i) {
          if (res.predictions[i] == ys[i]) {
            collected.emplace_back(std::move(res.embeddings[i]), ys[i]);
          }
        }
      }
      adam_step(params, gradient_ptrs(res.grads), client.adam);
      ce_total += res.ce;
      ++steps;
    }
  }
  pkg.mean_ce = steps > 0 ? ce_total / static_cast<double>(steps) : 0.0;

  pkg.num_correct = static_cast<std::int64_t>(collected.size());
  for (const auto& [feat, label] : collected) ++pkg.correct_counts[label];
  pkg.prototypes = compute_prototypes(collected);

  if (cfg.upload_ratio <= 0.0 || cfg.upload_ratio > 1.0) {
    throw ParameterError("local_update: upload_ratio must be in (0, 1]");
  }
  if (collected.empty() || cfg.upload_ratio == 1.0) {
    pkg.shared_feats = std::move(collected);
  } else {
    const std::size_t keep = static_cast<std::size_t>(
        std::ceil(cfg.upload_ratio * static_cast<double>(collected.size())));
    std::vector<std::size_t> picks(collected.size());
    std::iota(picks.begin(), picks.end(), 0);
    client.rng.shuffle(picks);
    picks.resize(keep);
    std::sort(picks.begin(), picks.end());  // keep collection order
    pkg.shared_feats.reserve(keep);
    for (const std::size_t i : picks) {
      pkg.shared_feats.push_back(std::move(collected[i]));
    }
  }

  pkg.deltas = cumulative_deltas(client.encoder);
  return pkg;
}

void apply_broadcast(ClientState& client,
                     const std::vector<DenseDelta>& personalized_deltas,
                     const std::vector<Vec>& text_feats) {
  std::vector<LayerWeights*> adapted;
  for (int i = 0; i < client.encoder.cfg.num_blocks; ++i) {
    if (client.encoder.cfg.block_adapted(i)) {
      adapted.push_back(&client.encoder.blocks[i]);
    }
  }
  if (adapted.size() != personalized_deltas.size()) {
    throw ShapeError("apply_broadcast: delta count " +
                     std::to_string(personalized_deltas.size()) +
                     " vs adapted layers " + std::to_string(adapted.size()));
  }
  for (std::size_t i = 0; i < adapted.size(); ++i) {
    if (!adapted[i]->w0.same_shape(personalized_deltas[i])) {
      throw ShapeError("apply_broadcast: delta shape mismatch at layer " +
                       std::to_string(i));
    }
  }
  if (!client.text_feats.empty() &&
      text_feats.size() != client.text_feats.size()) {
    throw ShapeError("apply_broadcast: text feature count changed");
  }
  for (std::size_t i = 0; i < adapted.size(); ++i) {
    adapted[i]->init_offset = personalized_deltas[i];
  }
  attach_fresh_lora(client.encoder, client.rng);
  client.text_feats = text_feats;
  client.adam.reset();
}

std::int64_t upload_cost(const UploadPackage& pkg, CostMode mode, int d_embed,
                         const EncoderConfig& enc_cfg) {
  const std::int64_t adapter_scalars = mode == CostMode::factored
                                           ? enc_cfg.stack_lora_params()
                                           : enc_cfg.stack_dense_params();
  return adapter_scalars +
         static_cast<std::int64_t>(d_embed) *
             static_cast<std::int64_t>(pkg.prototypes.size()) +
         static_cast<std::int64_t>(d_embed + 1) *
             static_cast<std::int64_t>(pkg.shared_feats.size());
}

}  // namespace fedalign
