#include "fedalign/lora.hpp"

#include <cmath>
#include <cstring>
#include <string>

#include "fedalign/errors.hpp"

namespace fedalign {

LoraDelta init_lora(std::size_t d1, std::size_t d2, std::size_t r, double gamma,
                    Rng& rng) {
  if (r == 0 || r > std::min(d1, d2)) {
    throw ParameterError("init_lora: rank " + std::to_string(r) +
                         " invalid for " + std::to_string(d1) + "x" +
                         std::to_string(d2));
  }
  if (!(gamma > 0.0) || !std::isfinite(gamma)) {
    throw ParameterError("init_lora: gamma must be finite and positive");
  }
  LoraDelta delta;
  delta.gamma = gamma;
  delta.a = Matrix(r, d2);
  delta.b = Matrix(d1, r);  // zeros: fresh adapters leave the weight intact
  const double bound = std::sqrt(6.0 / static_cast<double>(d2));
  for (double& v : delta.a.values()) v = rng.uniform(-bound, bound);
  return delta;
}

DenseDelta effective_delta(const LoraDelta& delta) {
  Matrix product = matmul(delta.b, delta.a);
  product.scale(delta.gamma);
  return product;
}

Matrix compose_weight(const LayerWeights& layer) {
  if (!layer.w0.same_shape(layer.init_offset)) {
    throw ShapeError("compose_weight: w0 and init_offset shapes differ");
  }
  Matrix w = layer.w0;
  w.add_scaled(layer.init_offset, 1.0);
  if (layer.lora) {
    const DenseDelta d = effective_delta(*layer.lora);
    if (!d.same_shape(w)) {
      throw ShapeError("compose_weight: adapter shape mismatch");
    }
    w.add_scaled(d, 1.0);
  }
  return w;
}

DenseDelta linear_combine(const std::vector<DenseDelta>& deltas,
                          const Vec& coeffs) {
  if (deltas.empty()) {
    throw ShapeError("linear_combine: empty delta list");
  }
  if (deltas.size() != coeffs.size()) {
    throw ShapeError("linear_combine: " + std::to_string(deltas.size()) +
                     " deltas vs " + std::to_string(coeffs.size()) +
                     " coefficients");
  }
  DenseDelta out(deltas[0].rows(), deltas[0].cols());
  for (std::size_t j = 0; j < deltas.size(); ++j) {
    out.add_scaled(deltas[j], coeffs[j]);  // throws on shape mismatch
  }
  return out;
}

std::int64_t lora_param_count(std::size_t d1, std::size_t d2, std::size_t r) {
  return static_cast<std::int64_t>(r) *
         (static_cast<std::int64_t>(d1) + static_cast<std::int64_t>(d2));
}

namespace {

constexpr char kMagic[4] = {'F', 'A', 'L', 'D'};
constexpr std::uint16_t kVersion = 1;

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v & 0xff));
  out.push_back(static_cast<std::uint8_t>((v >> 8) & 0xff));
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) {
    out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
  }
}

void put_f64(std::vector<std::uint8_t>& out, double v) {
  std::uint64_t bits = 0;
  std::memcpy(&bits, &v, sizeof(bits));
  for (int i = 0; i < 8; ++i) {
    out.push_back(static_cast<std::uint8_t>((bits >> (8 * i)) & 0xff));
  }
}

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& bytes) : bytes_(bytes) {}

  std::uint16_t u16() {
    need(2);
    const std::uint16_t v = static_cast<std::uint16_t>(
        bytes_[pos_] | (static_cast<std::uint16_t>(bytes_[pos_ + 1]) << 8));
    pos_ += 2;
    return v;
  }

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) {
      v |= static_cast<std::uint32_t>(bytes_[pos_ + i]) << (8 * i);
    }
    pos_ += 4;
    return v;
  }

  double f64() {
    need(8);
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) {
      bits |= static_cast<std::uint64_t>(bytes_[pos_ + i]) << (8 * i);
    }
    pos_ += 8;
    double v = 0.0;
    std::memcpy(&v, &bits, sizeof(v));
    return v;
  }

  void raw(std::uint8_t* dst, std::size_t n) {
    need(n);
    std::memcpy(dst, bytes_.data() + pos_, n);
    pos_ += n;
  }

  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  void need(std::size_t n) {
    if (bytes_.size() - pos_ < n) {
      throw FormatError("fald: truncated stream");
    }
  }

  const std::vector<std::uint8_t>& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> write_fald(double gamma,
                                     const std::vector<const Matrix*>& mats) {
  std::vector<std::uint8_t> out;
  out.insert(out.end(), kMagic, kMagic + 4);
  put_u16(out, kVersion);
  put_f64(out, gamma);
  put_u32(out, static_cast<std::uint32_t>(mats.size()));
  for (const Matrix* m : mats) {
    put_u32(out, static_cast<std::uint32_t>(m->rows()));
    put_u32(out, static_cast<std::uint32_t>(m->cols()));
    for (const double v : m->values()) put_f64(out, v);
  }
  return out;
}

FaldContent read_fald(const std::vector<std::uint8_t>& bytes) {
  Reader r(bytes);
  std::uint8_t magic[4];
  r.raw(magic, 4);
  if (std::memcmp(magic, kMagic, 4) != 0) {
    throw FormatError("fald: bad magic");
  }
  const std::uint16_t version = r.u16();
  if (version != kVersion) {
    throw FormatError("fald: unsupported version " + std::to_string(version));
  }
  FaldContent content;
  content.gamma = r.f64();
  const std::uint32_t count = r.u32();
  content.matrices.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t rows = r.u32();
    const std::uint32_t cols = r.u32();
    const std::uint64_t cells =
        static_cast<std::uint64_t>(rows) * static_cast<std::uint64_t>(cols);
    if (rows == 0 || cols == 0 || cells * 8 > r.remaining()) {
      throw FormatError("fald: header dims do not match payload");
    }
    Matrix m(rows, cols);
    for (double& v : m.values()) v = r.f64();
    content.matrices.push_back(std::move(m));
  }
  if (r.remaining() != 0) {
    throw FormatError("fald: trailing bytes after payload");
  }
  return content;
}

std::vector<std::uint8_t> serialize_delta(const LoraDelta& delta) {
  return write_fald(delta.gamma, {&delta.b, &delta.a});
}

LoraDelta deserialize_delta(const std::vector<std::uint8_t>& bytes) {
  FaldContent content = read_fald(bytes);
  if (content.matrices.size() != 2) {
    throw FormatError("delta: expected two matrices, got " +
                      std::to_string(content.matrices.size()));
  }
  LoraDelta delta;
  delta.gamma = content.gamma;
  delta.b = std::move(content.matrices[0]);
  delta.a = std::move(content.matrices[1]);
  if (delta.b.cols() != delta.a.rows()) {
    throw FormatError("delta: factor ranks disagree");
  }
  return delta;
}

}  // namespace fedalign
