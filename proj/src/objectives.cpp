#include "fedalign/objectives.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <string>

#include "fedalign/errors.hpp"
#include "fedalign/kernels.hpp"

namespace fedalign {

Vec predict_probs(const Vec& zv, const std::vector<Vec>& text_feats,
                  const ObjectiveConfig& cfg) {
  if (text_feats.empty()) {
    throw ParameterError("predict_probs: empty class list");
  }
  if (!(cfg.tau > 0.0)) {
    throw ParameterError("predict_probs: tau must be positive");
  }
  Vec scores(text_feats.size());
  for (std::size_t c = 0; c < text_feats.size(); ++c) {
    scores[c] =
        similarity(zv, text_feats[c], cfg.sim_kind, cfg.negate_euclidean) /
        cfg.tau;
  }
  return masked_softmax(scores, {});
}

std::size_t argmax(const Vec& v) {
  return static_cast<std::size_t>(
      std::max_element(v.begin(), v.end()) - v.begin());
}

double cross_entropy(const std::vector<Vec>& prob_batches,
                     const std::vector<int>& labels, std::int64_t* clamped) {
  if (prob_batches.size() != labels.size()) {
    throw ShapeError("cross_entropy: batch and label counts differ");
  }
  if (prob_batches.empty()) {
    throw ParameterError("cross_entropy: empty batch");
  }
  double total = 0.0;
  for (std::size_t i = 0; i < prob_batches.size(); ++i) {
    const int y = labels[i];
    if (y < 0 || static_cast<std::size_t>(y) >= prob_batches[i].size()) {
      throw ParameterError("cross_entropy: label out of range");
    }
    double p = prob_batches[i][y];
    if (p < 1e-30) {
      p = 1e-30;
      if (clamped) ++*clamped;
    }
    total -= std::log(p);
  }
  return total / static_cast<double>(prob_batches.size());
}

namespace {

// Distinct labels ascending plus the per-label mean rows.
struct ClassMeans {
  std::vector<int> labels;          // ascending
  std::vector<std::size_t> counts;  // per row
  Matrix rows;                      // R x d
  std::map<int, std::size_t> row_of;
};

ClassMeans class_means(const std::vector<Vec>& feats,
                       const std::vector<int>& labels) {
  ClassMeans cm;
  for (const int y : labels) {
    if (cm.row_of.emplace(y, 0).second) cm.labels.push_back(y);
  }
  std::sort(cm.labels.begin(), cm.labels.end());
  for (std::size_t r = 0; r < cm.labels.size(); ++r) {
    cm.row_of[cm.labels[r]] = r;
  }
  cm.counts.assign(cm.labels.size(), 0);
  cm.rows = Matrix(cm.labels.size(), feats[0].size());
  for (std::size_t i = 0; i < feats.size(); ++i) {
    const std::size_t r = cm.row_of[labels[i]];
    kernels::axpy(cm.rows.row(r), 1.0, feats[i].data(), feats[i].size());
    ++cm.counts[r];
  }
  for (std::size_t r = 0; r < cm.labels.size(); ++r) {
    kernels::scal(cm.rows.row(r), 1.0 / static_cast<double>(cm.counts[r]),
                  cm.rows.cols());
  }
  return cm;
}

// G = Zbar Zbar^T - I, symmetric.
Matrix gram_minus_identity(const Matrix& rows) {
  Matrix g(rows.rows(), rows.rows());
  for (std::size_t i = 0; i < rows.rows(); ++i) {
    for (std::size_t j = 0; j < rows.rows(); ++j) {
      g.at(i, j) = kernels::dot(rows.row(i), rows.row(j), rows.cols());
    }
    g.at(i, i) -= 1.0;
  }
  return g;
}

}  // namespace

double orthogonality_penalty(const std::vector<Vec>& feats,
                             const std::vector<int>& labels) {
  if (feats.empty() || feats.size() != labels.size()) {
    throw ParameterError("orthogonality_penalty: need a nonempty batch");
  }
  const ClassMeans cm = class_means(feats, labels);
  return gram_minus_identity(cm.rows).frobenius_norm();
}

LocalBatchResult local_objective(const EncoderState& encoder,
                                 const ComposedEncoder& composed,
                                 const std::vector<const Vec*>& xs,
                                 const std::vector<int>& ys,
                                 const std::vector<Vec>& text_feats,
                                 const ObjectiveConfig& cfg) {
  if (xs.empty() || xs.size() != ys.size()) {
    throw ParameterError("local_objective: need a nonempty batch");
  }
  const int num_classes = static_cast<int>(text_feats.size());
  for (const int y : ys) {
    if (y < 0 || y >= num_classes) {
      throw ParameterError("local_objective: label without text feature");
    }
  }
  const std::size_t n = xs.size();
  const double inv_n = 1.0 / static_cast<double>(n);

  LocalBatchResult out;
  out.grads = zero_grads(encoder);
  out.embeddings.reserve(n);
  out.predictions.reserve(n);

  std::vector<ForwardCache> caches(n);
  std::vector<Vec> probs(n);
  for (std::size_t i = 0; i < n; ++i) {
    out.embeddings.push_back(
        forward(composed, encoder.cfg, *xs[i], &caches[i]));
    probs[i] = predict_probs(out.embeddings[i], text_feats, cfg);
    out.predictions.push_back(static_cast<int>(argmax(probs[i])));
  }
  out.ce = cross_entropy(probs, ys, &out.clamped);

  const ClassMeans cm = class_means(out.embeddings, ys);
  const Matrix g = gram_minus_identity(cm.rows);
  out.orth = g.frobenius_norm();
  out.loss = out.ce + cfg.mu * out.orth;

  // d orth / d Zbar = 2 G Zbar / ||G||_F (G symmetric); zero at the
  // nonsmooth origin.
  Matrix d_rows(cm.rows.rows(), cm.rows.cols());
  if (out.orth > 0.0 && cfg.mu != 0.0) {
    d_rows = matmul(g, cm.rows);
    d_rows.scale(2.0 / out.orth);
  }

  for (std::size_t i = 0; i < n; ++i) {
    Vec g_embed(out.embeddings[i].size(), 0.0);
    // Cross-entropy: d(-log p_y)/d logit_c = p_c - [c == y], logits are
    // sim/tau.
    for (int c = 0; c < num_classes; ++c) {
      double w = probs[i][c] - (c == ys[i] ? 1.0 : 0.0);
      if (w == 0.0) continue;
      w *= inv_n / cfg.tau;
      const Vec sg = similarity_grad_x(out.embeddings[i], text_feats[c],
                                       cfg.sim_kind, cfg.negate_euclidean);
      kernels::axpy(g_embed.data(), w, sg.data(), g_embed.size());
    }
    if (out.orth > 0.0 && cfg.mu != 0.0) {
      const std::size_t r = cm.row_of.at(ys[i]);
      kernels::axpy(g_embed.data(),
                    cfg.mu / static_cast<double>(cm.counts[r]), d_rows.row(r),
                    g_embed.size());
    }
    backward(encoder, composed, caches[i], g_embed, out.grads);
  }
  return out;
}

LocalBatchResult local_objective(const EncoderState& encoder,
                                 const std::vector<const Vec*>& xs,
                                 const std::vector<int>& ys,
                                 const std::vector<Vec>& text_feats,
                                 const ObjectiveConfig& cfg) {
  return local_objective(encoder, compose(encoder), xs, ys, text_feats, cfg);
}

TextBatchResult text_objective(const std::vector<Vec>& feats,
                               const std::vector<int>& labels,
                               const EncoderState& text_encoder,
                               const std::vector<ClassDescription>& descs,
                               const ObjectiveConfig& cfg, Rng& rng) {
  if (feats.empty() || feats.size() != labels.size()) {
    throw ParameterError("text_objective: need a nonempty feature set");
  }
  const int num_classes = static_cast<int>(descs.size());
  for (const int y : labels) {
    if (y < 0 || y >= num_classes) {
      throw ConfigError("text_objective: label " + std::to_string(y) +
                        " has no description");
    }
  }
  const std::size_t n = feats.size();
  const double inv_n = 1.0 / static_cast<double>(n);

  TextBatchResult out;
  out.grads = zero_grads(text_encoder);

  const ComposedEncoder composed = compose(text_encoder);
  std::vector<ForwardCache> caches(num_classes);
  out.text_feats.reserve(num_classes);
  for (int c = 0; c < num_classes; ++c) {
    const Vec& input = select_variant(descs[c], rng);
    out.text_feats.push_back(
        forward(composed, text_encoder.cfg, input, &caches[c]));
  }

  std::vector<Vec> probs(n);
  for (std::size_t i = 0; i < n; ++i) {
    probs[i] = predict_probs(feats[i], out.text_feats, cfg);
  }
  out.loss = cross_entropy(probs, labels, &out.clamped);

  for (int c = 0; c < num_classes; ++c) {
    Vec g_feat(out.text_feats[c].size(), 0.0);
    bool nonzero = false;
    for (std::size_t i = 0; i < n; ++i) {
      double w = probs[i][c] - (labels[i] == c ? 1.0 : 0.0);
      if (w == 0.0) continue;
      w *= inv_n / cfg.tau;
      const Vec sg = similarity_grad_x(out.text_feats[c], feats[i],
                                       cfg.sim_kind, cfg.negate_euclidean);
      kernels::axpy(g_feat.data(), w, sg.data(), g_feat.size());
      nonzero = true;
    }
    if (nonzero) {
      backward(text_encoder, composed, caches[c], g_feat, out.grads);
    }
  }
  return out;
}

void AdamState::reset() {
  step = 0;
  m.clear();
  v.clear();
}

void adam_step(const std::vector<Matrix*>& params,
               const std::vector<const Matrix*>& grads, AdamState& state) {
  if (params.size() != grads.size()) {
    throw ShapeError("adam_step: parameter and gradient counts differ");
  }
  if (state.m.empty()) {
    state.m.resize(params.size());
    state.v.resize(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
      state.m[i].assign(params[i]->size(), 0.0);
      state.v[i].assign(params[i]->size(), 0.0);
    }
  }
  if (state.m.size() != params.size()) {
    throw ShapeError("adam_step: state tracks a different parameter set");
  }
  ++state.step;
  const double bias1 = 1.0 - std::pow(state.beta1, state.step);
  const double bias2 = 1.0 - std::pow(state.beta2, state.step);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Matrix& p = *params[i];
    const Matrix& g = *grads[i];
    if (!p.same_shape(g) || state.m[i].size() != p.size()) {
      throw ShapeError("adam_step: shape mismatch at parameter " +
                       std::to_string(i));
    }
    kernels::adam_update(p.data(), state.m[i].data(), state.v[i].data(),
                         g.data(), p.size(), state.lr, state.beta1,
                         state.beta2, state.eps, bias1, bias2);
  }
}

std::vector<Matrix*> trainable_params(EncoderState& state) {
  std::vector<Matrix*> params;
  for (LayerWeights& layer : state.blocks) {
    if (!layer.lora) continue;
    params.push_back(&layer.lora->a);
    params.push_back(&layer.lora->b);
  }
  return params;
}

std::vector<const Matrix*> gradient_ptrs(const LoraGrads& grads) {
  std::vector<const Matrix*> ptrs;
  for (std::size_t i = 0; i < grads.d_a.size(); ++i) {
    ptrs.push_back(&grads.d_a[i]);
    ptrs.push_back(&grads.d_b[i]);
  }
  return ptrs;
}

}  // namespace fedalign
