#include "fedalign/encoder.hpp"

#include <cmath>
#include <string>

#include "fedalign/errors.hpp"
#include "fedalign/kernels.hpp"
#include "fedalign/similarity.hpp"

namespace fedalign {

const char* to_string(Activation a) {
  return a == Activation::tanh ? "tanh" : "identity";
}

Activation activation_from_string(const std::string& s) {
  if (s == "tanh") return Activation::tanh;
  if (s == "identity") return Activation::identity;
  throw ParameterError("unknown activation: " + s);
}

const char* to_string(DescStyle s) { return s == DescStyle::ST ? "ST" : "GT"; }

DescStyle desc_style_from_string(const std::string& s) {
  if (s == "ST") return DescStyle::ST;
  if (s == "GT") return DescStyle::GT;
  throw ParameterError("unknown description style: " + s);
}

void EncoderConfig::validate() const {
  if (num_blocks < 1) throw ConfigError("encoder: num_blocks must be >= 1");
  if (d_in < 1 || d_hidden < 1 || d_embed < 1) {
    throw ConfigError("encoder: dims must be positive");
  }
  if (d_embed > d_hidden) {
    throw ConfigError("encoder: d_embed must be <= d_hidden");
  }
  if (lora_start < 0 || lora_start > num_blocks) {
    throw ConfigError("encoder: lora_start must be in [0, num_blocks]");
  }
  if (rank < 1) throw ConfigError("encoder: rank must be >= 1");
  for (int i = lora_start; i < num_blocks; ++i) {
    if (static_cast<std::size_t>(rank) >
        std::min(block_rows(i), block_cols(i))) {
      throw ConfigError("encoder: rank exceeds adapted matrix dims");
    }
  }
  if (!(gamma > 0.0) || !std::isfinite(gamma)) {
    throw ConfigError("encoder: gamma must be finite and positive");
  }
}

std::size_t EncoderConfig::block_rows(int) const {
  return static_cast<std::size_t>(d_hidden);
}

std::size_t EncoderConfig::block_cols(int i) const {
  return static_cast<std::size_t>(i == 0 ? d_in : d_hidden);
}

std::int64_t EncoderConfig::stack_lora_params() const {
  std::int64_t total = 0;
  for (int i = lora_start; i < num_blocks; ++i) {
    total += lora_param_count(block_rows(i), block_cols(i),
                              static_cast<std::size_t>(rank));
  }
  return total;
}

std::int64_t EncoderConfig::stack_dense_params() const {
  std::int64_t total = 0;
  for (int i = lora_start; i < num_blocks; ++i) {
    total += static_cast<std::int64_t>(block_rows(i)) *
             static_cast<std::int64_t>(block_cols(i));
  }
  return total;
}

namespace {

// Backbone weight scale relative to 1/sqrt(fan_in). Below 1 the blocks stay
// in the near-linear tanh regime, where small adapter deltas shift the
// embedding map appreciably and client deltas superpose almost linearly --
// the regime a pretrained tower puts the real model in.
constexpr double kBackboneGain = 0.3;

}  // namespace

EncoderState make_backbone(const EncoderConfig& cfg, Rng rng) {
  cfg.validate();
  EncoderState state;
  state.cfg = cfg;
  state.blocks.resize(cfg.num_blocks);
  for (int i = 0; i < cfg.num_blocks; ++i) {
    const std::size_t rows = cfg.block_rows(i);
    const std::size_t cols = cfg.block_cols(i);
    LayerWeights& layer = state.blocks[i];
    layer.w0 = Matrix(rows, cols);
    const double std = kBackboneGain / std::sqrt(static_cast<double>(cols));
    for (double& v : layer.w0.values()) v = rng.gaussian(0.0, std);
    layer.init_offset = Matrix(rows, cols);
  }
  state.projection = Matrix(cfg.d_embed, cfg.d_hidden);
  const double pstd = 1.0 / std::sqrt(static_cast<double>(cfg.d_hidden));
  for (double& v : state.projection.values()) v = rng.gaussian(0.0, pstd);
  return state;
}

void attach_fresh_lora(EncoderState& state, Rng& rng) {
  const EncoderConfig& cfg = state.cfg;
  for (int i = 0; i < cfg.num_blocks; ++i) {
    if (!cfg.block_adapted(i)) {
      state.blocks[i].lora.reset();
      continue;
    }
    state.blocks[i].lora =
        init_lora(cfg.block_rows(i), cfg.block_cols(i),
                  static_cast<std::size_t>(cfg.rank), cfg.gamma, rng);
  }
}

ComposedEncoder compose(const EncoderState& state) {
  ComposedEncoder composed;
  composed.weights.reserve(state.blocks.size());
  for (const LayerWeights& layer : state.blocks) {
    composed.weights.push_back(compose_weight(layer));
  }
  composed.projection = state.projection;
  return composed;
}

namespace {

inline void apply_activation(Activation act, Vec& v) {
  if (act == Activation::tanh) {
    for (double& x : v) x = std::tanh(x);
  }
}

}  // namespace

Vec forward(const ComposedEncoder& composed, const EncoderConfig& cfg,
            const Vec& x, ForwardCache* cache) {
  if (x.size() != static_cast<std::size_t>(cfg.d_in)) {
    throw ShapeError("forward: input dim " + std::to_string(x.size()) +
                     ", expected " + std::to_string(cfg.d_in));
  }
  if (composed.weights.size() != static_cast<std::size_t>(cfg.num_blocks)) {
    throw ContractError("forward: composed block count mismatch");
  }
  if (cache) {
    cache->input = x;
    cache->pre.assign(cfg.num_blocks, {});
    cache->post.assign(cfg.num_blocks, {});
  }
  Vec h = x;
  for (int i = 0; i < cfg.num_blocks; ++i) {
    Vec pre = matvec(composed.weights[i], h);
    Vec post = pre;
    apply_activation(cfg.activation, post);
    if (cache) {
      cache->pre[i] = std::move(pre);
      cache->post[i] = post;
    }
    h = std::move(post);
  }
  Vec raw = matvec(composed.projection, h);
  const double norm = l2_norm(raw);
  if (norm <= 0.0) {
    throw DegenerateInputError("forward: embedding collapsed to zero");
  }
  if (cache) {
    cache->raw_embed = raw;
    cache->raw_norm = norm;
  }
  kernels::scal(raw.data(), 1.0 / norm, raw.size());
  return raw;
}

Vec forward(const EncoderState& state, const Vec& x, ForwardCache* cache) {
  return forward(compose(state), state.cfg, x, cache);
}

void LoraGrads::add_scaled(const LoraGrads& other, double s) {
  if (d_a.size() != other.d_a.size() || d_b.size() != other.d_b.size()) {
    throw ShapeError("LoraGrads: mismatched adapter counts");
  }
  for (std::size_t i = 0; i < d_a.size(); ++i) {
    d_a[i].add_scaled(other.d_a[i], s);
    d_b[i].add_scaled(other.d_b[i], s);
  }
}

LoraGrads zero_grads(const EncoderState& state) {
  LoraGrads grads;
  for (const LayerWeights& layer : state.blocks) {
    if (!layer.lora) continue;
    grads.d_a.emplace_back(layer.lora->a.rows(), layer.lora->a.cols());
    grads.d_b.emplace_back(layer.lora->b.rows(), layer.lora->b.cols());
  }
  return grads;
}

namespace {

void check_cache(const EncoderConfig& cfg, const ComposedEncoder& composed,
                 const ForwardCache& cache) {
  const std::size_t blocks = static_cast<std::size_t>(cfg.num_blocks);
  if (composed.weights.size() != blocks || cache.pre.size() != blocks ||
      cache.post.size() != blocks ||
      cache.input.size() != static_cast<std::size_t>(cfg.d_in) ||
      cache.raw_embed.size() != static_cast<std::size_t>(cfg.d_embed) ||
      cache.raw_norm <= 0.0) {
    throw ContractError("backward: cache does not match this encoder");
  }
  for (std::size_t i = 0; i < blocks; ++i) {
    if (cache.pre[i].size() != composed.weights[i].rows() ||
        cache.post[i].size() != composed.weights[i].rows()) {
      throw ContractError("backward: cache block dims do not match");
    }
  }
}

}  // namespace

void backward(const EncoderState& state, const ComposedEncoder& composed,
              const ForwardCache& cache, const Vec& grad_embedding,
              LoraGrads& grads) {
  const EncoderConfig& cfg = state.cfg;
  check_cache(cfg, composed, cache);
  if (grad_embedding.size() != static_cast<std::size_t>(cfg.d_embed)) {
    throw ShapeError("backward: upstream gradient dim mismatch");
  }

  // Through y = u / ||u||:  du = (g - (y.g) y) / ||u||.
  Vec y = cache.raw_embed;
  kernels::scal(y.data(), 1.0 / cache.raw_norm, y.size());
  const double yg =
      kernels::dot(y.data(), grad_embedding.data(), y.size());
  Vec d_raw(y.size(), 0.0);
  kernels::axpy(d_raw.data(), 1.0 / cache.raw_norm, grad_embedding.data(),
                d_raw.size());
  kernels::axpy(d_raw.data(), -yg / cache.raw_norm, y.data(), d_raw.size());

  // Projection is frozen; only the incoming activation gradient is needed.
  Vec d_h = matvec_transposed(composed.projection, d_raw);

  // Map block index -> position in the adapter gradient arrays.
  std::vector<int> adapted_pos(cfg.num_blocks, -1);
  int pos = 0;
  for (int i = 0; i < cfg.num_blocks; ++i) {
    if (state.blocks[i].lora) adapted_pos[i] = pos++;
  }
  if (grads.d_a.size() != static_cast<std::size_t>(pos)) {
    throw ContractError("backward: gradient accumulator shape mismatch");
  }

  for (int i = cfg.num_blocks - 1; i >= 0; --i) {
    // d pre = d h (.) act'(pre); tanh'(z) = 1 - tanh(z)^2.
    Vec d_z = std::move(d_h);
    if (cfg.activation == Activation::tanh) {
      const Vec& post = cache.post[i];
      for (std::size_t j = 0; j < d_z.size(); ++j) {
        d_z[j] *= 1.0 - post[j] * post[j];
      }
    }
    const Vec& h_prev = (i == 0) ? cache.input : cache.post[i - 1];
    if (adapted_pos[i] >= 0) {
      const LoraDelta& lora = *state.blocks[i].lora;
      const int p = adapted_pos[i];
      // dW = d_z h_prev^T; dB = gamma dW A^T = gamma d_z (A h_prev)^T,
      // dA = gamma B^T dW = gamma (B^T d_z) h_prev^T.
      const Vec a_h = matvec(lora.a, h_prev);
      add_outer(grads.d_b[p], lora.gamma, d_z.data(), d_z.size(), a_h.data(),
                a_h.size());
      const Vec bt_dz = matvec_transposed(lora.b, d_z);
      add_outer(grads.d_a[p], lora.gamma, bt_dz.data(), bt_dz.size(),
                h_prev.data(), h_prev.size());
    }
    if (i > 0) {
      d_h = matvec_transposed(composed.weights[i], d_z);
    }
  }
}

std::vector<ClassDescription> make_descriptions(int num_classes,
                                                DescStyle style, int variants,
                                                int d_in, Rng rng) {
  if (num_classes < 1) {
    throw ParameterError("make_descriptions: need at least one class");
  }
  if (style == DescStyle::GT && variants < 2) {
    throw ParameterError("make_descriptions: GT needs >= 2 variants");
  }
  const std::size_t dim = static_cast<std::size_t>(d_in);

  // Class anchors: orthonormalized while the dimension allows, plain unit
  // vectors afterwards. Separated anchors keep the zero-shot text features
  // distinguishable.
  std::vector<Vec> anchors;
  anchors.reserve(num_classes);
  for (int c = 0; c < num_classes; ++c) {
    Vec v(dim);
    for (double& x : v) x = rng.gaussian(0.0, 1.0);
    if (c < d_in) {
      for (const Vec& prev : anchors) {
        const double proj = kernels::dot(v.data(), prev.data(), dim);
        kernels::axpy(v.data(), -proj, prev.data(), dim);
      }
    }
    anchors.push_back(l2_normalize(v));
  }

  const double jitter = 0.3 / std::sqrt(static_cast<double>(d_in));
  std::vector<ClassDescription> descs;
  descs.reserve(num_classes);
  for (int c = 0; c < num_classes; ++c) {
    ClassDescription desc;
    desc.class_id = c;
    desc.style = style;
    if (style == DescStyle::ST) {
      desc.variants.push_back(anchors[c]);
    } else {
      for (int v = 0; v < variants; ++v) {
        Vec var = anchors[c];
        for (double& x : var) x += rng.gaussian(0.0, jitter);
        desc.variants.push_back(l2_normalize(var));
      }
    }
    descs.push_back(std::move(desc));
  }
  return descs;
}

const Vec& select_variant(const ClassDescription& desc, Rng& rng) {
  if (desc.variants.empty()) {
    throw ContractError("select_variant: description has no variants");
  }
  if (desc.style == DescStyle::ST || desc.variants.size() == 1) {
    return desc.variants[0];
  }
  return desc.variants[rng.next_below(desc.variants.size())];
}

}  // namespace fedalign
