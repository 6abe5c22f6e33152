#pragma once

#include <string>
#include <vector>

#include "fedalign/lora.hpp"
#include "fedalign/matrix.hpp"
#include "fedalign/rng.hpp"

namespace fedalign {

enum class Activation { tanh, identity };

const char* to_string(Activation a);
Activation activation_from_string(const std::string& s);

enum class DescStyle { ST, GT };

const char* to_string(DescStyle s);
DescStyle desc_style_from_string(const std::string& s);

// Toy stack of L dense blocks standing in for a transformer tower.
// Block 0 maps d_in -> d_hidden, blocks 1..L-1 map d_hidden -> d_hidden,
// and a frozen projection maps d_hidden -> d_embed. Adapters attach to
// blocks lora_start..L-1.
struct EncoderConfig {
  int num_blocks = 12;
  int d_in = 16;
  int d_hidden = 32;
  int d_embed = 16;
  Activation activation = Activation::tanh;
  int lora_start = 2;
  int rank = 4;
  double gamma = 0.25;

  void validate() const;
  bool block_adapted(int i) const { return i >= lora_start; }
  std::size_t block_rows(int i) const;
  std::size_t block_cols(int i) const;
  // Trainable scalars summed over adapted blocks.
  std::int64_t stack_lora_params() const;
  // Dense scalars summed over adapted blocks (for the dense accounting mode).
  std::int64_t stack_dense_params() const;
};

struct EncoderState {
  EncoderConfig cfg;
  std::vector<LayerWeights> blocks;
  Matrix projection;  // frozen, never trains
};

// Frozen backbone seeded from `rng`; no adapters, zero offsets.
EncoderState make_backbone(const EncoderConfig& cfg, Rng rng);

// Attach fresh zero-effect adapters to blocks >= lora_start.
void attach_fresh_lora(EncoderState& state, Rng& rng);

// Effective per-block weights for the current adapter values.
struct ComposedEncoder {
  std::vector<Matrix> weights;
  Matrix projection;
};

ComposedEncoder compose(const EncoderState& state);

// Intermediates needed by backward: d-dimensional activations per block plus
// the unnormalized embedding.
struct ForwardCache {
  Vec input;
  std::vector<Vec> pre;   // pre-activation per block
  std::vector<Vec> post;  // post-activation per block
  Vec raw_embed;          // projection output before normalization
  double raw_norm = 0.0;
};

// Normalized embedding; optionally fills the cache for a later backward.
Vec forward(const ComposedEncoder& composed, const EncoderConfig& cfg,
            const Vec& x, ForwardCache* cache = nullptr);

// Convenience: compose then forward.
Vec forward(const EncoderState& state, const Vec& x,
            ForwardCache* cache = nullptr);

// Gradients for the adapter factors of each adapted block, in block order.
struct LoraGrads {
  std::vector<Matrix> d_a;
  std::vector<Matrix> d_b;

  void add_scaled(const LoraGrads& other, double s);
};

LoraGrads zero_grads(const EncoderState& state);

// Reverse-mode pass from d(loss)/d(normalized embedding) down to every
// active adapter factor; accumulates into `grads`. The cache must come from
// a forward over the same composed weights, otherwise a ContractError is
// thrown.
void backward(const EncoderState& state, const ComposedEncoder& composed,
              const ForwardCache& cache, const Vec& grad_embedding,
              LoraGrads& grads);

// Synthetic class descriptions: ST has a single anchor vector per class, GT
// carries `variants` jittered unit vectors around the anchor.
struct ClassDescription {
  int class_id = 0;
  DescStyle style = DescStyle::ST;
  std::vector<Vec> variants;
};

std::vector<ClassDescription> make_descriptions(int num_classes,
                                                DescStyle style, int variants,
                                                int d_in, Rng rng);

// ST: the single variant. GT: uniformly random member.
const Vec& select_variant(const ClassDescription& desc, Rng& rng);

}  // namespace fedalign
