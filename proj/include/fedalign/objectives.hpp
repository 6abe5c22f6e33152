#pragma once

#include <cstdint>
#include <vector>

#include "fedalign/encoder.hpp"
#include "fedalign/matrix.hpp"
#include "fedalign/similarity.hpp"

namespace fedalign {

struct ObjectiveConfig {
  double tau = 2.66;  // temperature on the similarity logits
  double mu = 0.1;    // weight of the orthogonality penalty
  SimKind sim_kind = SimKind::cosine;
  bool negate_euclidean = true;
};

// softmax_c( sim(zv, text_feats[c]) / tau ); sums to one.
Vec predict_probs(const Vec& zv, const std::vector<Vec>& text_feats,
                  const ObjectiveConfig& cfg);

std::size_t argmax(const Vec& v);

// -(1/N) sum_i log prob_i[label_i]; probabilities are floored at 1e-30 and
// `clamped` (when given) counts how often the floor fired.
double cross_entropy(const std::vector<Vec>& prob_batches,
                     const std::vector<int>& labels,
                     std::int64_t* clamped = nullptr);

// || Zbar Zbar^T - I ||_F where the rows of Zbar are the per-label means of
// the given unit features, one row per distinct label, ascending label order.
double orthogonality_penalty(const std::vector<Vec>& feats,
                             const std::vector<int>& labels);

// Combined local loss (cross-entropy + mu * orthogonality) over one batch,
// with analytic gradients for every active adapter factor.
struct LocalBatchResult {
  double loss = 0.0;
  double ce = 0.0;
  double orth = 0.0;
  LoraGrads grads;
  std::vector<Vec> embeddings;  // normalized, one per sample
  std::vector<int> predictions;
  std::int64_t clamped = 0;
};

LocalBatchResult local_objective(const EncoderState& encoder,
                                 const ComposedEncoder& composed,
                                 const std::vector<const Vec*>& xs,
                                 const std::vector<int>& ys,
                                 const std::vector<Vec>& text_feats,
                                 const ObjectiveConfig& cfg);

LocalBatchResult local_objective(const EncoderState& encoder,
                                 const std::vector<const Vec*>& xs,
                                 const std::vector<int>& ys,
                                 const std::vector<Vec>& text_feats,
                                 const ObjectiveConfig& cfg);

// Server-side text loss: text features are recomputed through the text
// encoder from selected description variants, then cross-entropy of the
// uploaded image features against all class text features. Gradients flow to
// the text adapters only.
struct TextBatchResult {
  double loss = 0.0;
  LoraGrads grads;
  std::vector<Vec> text_feats;  // as used in this evaluation
  std::int64_t clamped = 0;
};

TextBatchResult text_objective(const std::vector<Vec>& feats,
                               const std::vector<int>& labels,
                               const EncoderState& text_encoder,
                               const std::vector<ClassDescription>& descs,
                               const ObjectiveConfig& cfg, Rng& rng);

// Bias-corrected Adam over a set of parameter matrices. Moment buffers are
// allocated on first use and must keep matching shapes afterwards.
struct AdamState {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::int64_t step = 0;
  std::vector<Vec> m;
  std::vector<Vec> v;

  void reset();
};

void adam_step(const std::vector<Matrix*>& params,
               const std::vector<const Matrix*>& grads, AdamState& state);

// Trainable adapter factors of an encoder in a stable order
// (per adapted block: a then b), plus the matching gradient pointers.
std::vector<Matrix*> trainable_params(EncoderState& state);
std::vector<const Matrix*> gradient_ptrs(const LoraGrads& grads);

}  // namespace fedalign
