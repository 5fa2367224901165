#ifndef IEB_EMBSTORE_HPP
#define IEB_EMBSTORE_HPP

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "ieb/common.hpp"

namespace ieb {

/// Dense row-major matrix of embeddings aligned to instruction ids.
class EmbeddingMatrix {
 public:
  EmbeddingMatrix() = default;

  EmbeddingMatrix(std::vector<std::string> ids, std::size_t dim, std::vector<double> values)
      : ids_(std::move(ids)), dim_(dim), values_(std::move(values)) {
    if (dim_ == 0) throw Error(Errc::precondition, "embedding dimension must be positive");
    if (values_.size() != ids_.size() * dim_)
      throw Error(Errc::precondition, "embedding payload size does not match count x dim");
    for (std::size_t i = 0; i < ids_.size(); ++i)
      if (!row_of_.emplace(ids_[i], i).second)
        throw Error(Errc::conflict, "duplicate embedding id '" + ids_[i] + "'");
  }

  std::size_t rows() const { return ids_.size(); }
  std::size_t dim() const { return dim_; }
  const std::vector<std::string>& ids() const { return ids_; }
  const std::vector<double>& values() const { return values_; }

  std::span<const double> row(std::size_t i) const { return {values_.data() + i * dim_, dim_}; }
  std::span<double> row(std::size_t i) { return {values_.data() + i * dim_, dim_}; }

  bool contains(const std::string& id) const { return row_of_.count(id) > 0; }
  std::size_t row_of(const std::string& id) const {
    auto it = row_of_.find(id);
    if (it == row_of_.end()) throw Error(Errc::not_found, "id '" + id + "' has no embedding");
    return it->second;
  }

  // Rows for the given ids, in the given order.
  EmbeddingMatrix select(const std::vector<std::string>& ids) const {
    std::vector<double> out;
    out.reserve(ids.size() * dim_);
    for (const auto& id : ids) {
      auto r = row(row_of(id));
      out.insert(out.end(), r.begin(), r.end());
    }
    return EmbeddingMatrix(ids, dim_, std::move(out));
  }

  friend bool operator==(const EmbeddingMatrix& a, const EmbeddingMatrix& b) {
    return a.ids_ == b.ids_ && a.dim_ == b.dim_ && a.values_ == b.values_;
  }

 private:
  std::vector<std::string> ids_;
  std::size_t dim_ = 0;
  std::vector<double> values_;
  std::map<std::string, std::size_t> row_of_;
};

inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double norm2(std::span<const double> a) { return std::sqrt(dot(a, a)); }

inline double squared_distance(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

/// Cosine similarity, clamped to [-1, 1].
inline double cosine(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw Error(Errc::precondition, "cosine of vectors with different dimensions");
  const double na = norm2(a), nb = norm2(b);
  if (na == 0.0 || nb == 0.0) throw Error(Errc::domain, "cosine of a zero vector");
  return std::clamp(dot(a, b) / (na * nb), -1.0, 1.0);
}

// Normalizes a row in place; throws on a zero row.
inline void normalize_row(std::span<double> v) {
  const double n = norm2(v);
  if (!(n > 0.0) || !std::isfinite(n)) throw Error(Errc::domain, "cannot normalize a zero or non-finite row");
  for (auto& x : v) x /= n;
}

inline constexpr double kUnitNormTolerance = 1e-6;

// ---------------------------------------------------------------------------
// Binary container: magic | u32 version | u32 count | u32 dim | f32 payload |
// count x (u32 length + UTF-8 id). All integers and floats little-endian.

namespace binio {

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

inline void put_f32(std::string& out, float f) { put_u32(out, std::bit_cast<std::uint32_t>(f)); }

class Reader {
 public:
  Reader(std::string_view bytes, std::string name) : bytes_(bytes), name_(std::move(name)) {}

  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }
  float f32(const char* what) { return std::bit_cast<float>(u32(what)); }
  std::string_view take(std::size_t n, const char* what) {
    need(n, what);
    auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::size_t offset() const { return pos_; }
  std::size_t remaining() const { return bytes_.size() - pos_; }
  [[noreturn]] void fail(const std::string& what) const {
    throw Error(Errc::format, name_ + ": " + what + " at byte offset " + std::to_string(pos_));
  }

 private:
  void need(std::size_t n, const char* what) const {
    if (bytes_.size() - pos_ < n)
      fail(std::string("truncated ") + what + " (need " + std::to_string(n) + " bytes, have " +
           std::to_string(bytes_.size() - pos_) + ")");
  }
  std::string_view bytes_;
  std::string name_;
  std::size_t pos_ = 0;
};

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::io, "cannot open '" + path + "'");
  return std::string(std::istreambuf_iterator<char>(in), {});
}

inline void write_file(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(Errc::io, "cannot write '" + path + "'");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  out.flush();
  if (!out) throw Error(Errc::io, "write failed for '" + path + "'");
}

}  // namespace binio

inline constexpr std::string_view kEmbeddingMagic = "IEBV";
inline constexpr std::uint32_t kFormatVersion = 1;

struct EmbeddingReadResult {
  EmbeddingMatrix matrix;
  // Set when at least one stored row was off unit norm by more than 1e-6.
  bool renormalized = false;
  std::size_t renormalized_rows = 0;
};

inline std::string encode_embeddings(const EmbeddingMatrix& m) {
  if (m.rows() > 0xffffffffu || m.dim() > 0xffffffffu)
    throw Error(Errc::precondition, "matrix too large for the container");
  std::string out;
  out.reserve(16 + m.values().size() * 4);
  out.append(kEmbeddingMagic);
  binio::put_u32(out, kFormatVersion);
  binio::put_u32(out, static_cast<std::uint32_t>(m.rows()));
  binio::put_u32(out, static_cast<std::uint32_t>(m.dim()));
  for (double v : m.values()) binio::put_f32(out, static_cast<float>(v));
  for (const auto& id : m.ids()) {
    binio::put_u32(out, static_cast<std::uint32_t>(id.size()));
    out.append(id);
  }
  return out;
}

inline EmbeddingReadResult decode_embeddings(std::string_view bytes, const std::string& name = "<memory>") {
  binio::Reader r(bytes, name);
  if (r.take(4, "magic") != kEmbeddingMagic) r.fail("bad magic (expected IEBV)");
  const std::uint32_t version = r.u32("version");
  if (version != kFormatVersion) r.fail("unsupported version " + std::to_string(version));
  const std::uint32_t count = r.u32("count");
  const std::uint32_t dim = r.u32("dim");
  if (dim == 0) r.fail("zero dimension");
  const std::size_t payload = static_cast<std::size_t>(count) * dim;
  if (r.remaining() / 4 < payload)
    r.fail("truncated payload: header declares " + std::to_string(count) + " rows of dim " + std::to_string(dim));
  std::vector<double> values(payload);
  for (auto& v : values) {
    v = r.f32("payload");
    if (!std::isfinite(v)) r.fail("non-finite payload value");
  }
  std::vector<std::string> ids;
  ids.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t len = r.u32("id length");
    ids.emplace_back(r.take(len, "id bytes"));
  }
  if (r.remaining() != 0) r.fail("trailing bytes after id block");
  EmbeddingReadResult result{EmbeddingMatrix(std::move(ids), dim, std::move(values))};
  for (std::size_t i = 0; i < result.matrix.rows(); ++i) {
    auto row = result.matrix.row(i);
    if (std::abs(norm2(row) - 1.0) > kUnitNormTolerance) {
      normalize_row(row);
      ++result.renormalized_rows;
    }
  }
  result.renormalized = result.renormalized_rows > 0;
  return result;
}

inline EmbeddingReadResult read_embeddings(const std::string& path) {
  return decode_embeddings(binio::read_file(path), path);
}

inline void write_embeddings(const EmbeddingMatrix& m, const std::string& path) {
  binio::write_file(path, encode_embeddings(m));
}

// ---------------------------------------------------------------------------
// Offline fallback embedder

struct FallbackEmbedderConfig {
  std::size_t dim = 256;
  std::size_t ngram = 3;
  std::uint64_t seed = 0;
};

/// Signed feature hashing of character n-grams.
///
/// Each n-gram of the ASCII-lowercased text is hashed with FNV-1a (basis
/// mixed with the seed); the low bits pick a coordinate and the top bit a
/// sign. Texts shorter than n contribute one gram. Rows are L2-normalized.
inline std::vector<double> fallback_vector(std::string_view text, const FallbackEmbedderConfig& cfg) {
  std::vector<double> v(cfg.dim, 0.0);
  const std::string lowered = to_lower_ascii(text);
  const std::uint64_t basis = kFnvOffset ^ mix64(cfg.seed);
  const std::size_t n = std::min(cfg.ngram, lowered.size());
  for (std::size_t i = 0; i + n <= lowered.size(); ++i) {
    const std::uint64_t h = fnv1a64(std::string_view(lowered).substr(i, n), basis);
    v[static_cast<std::size_t>(h % cfg.dim)] += (h >> 63) ? -1.0 : 1.0;
  }
  normalize_row(v);
  return v;
}

inline EmbeddingMatrix fallback_embed(const std::vector<std::string>& ids, const std::vector<std::string>& texts,
                                      const FallbackEmbedderConfig& cfg) {
  if (cfg.dim < 8) throw Error(Errc::precondition, "fallback embedder needs dim >= 8");
  if (cfg.ngram < 1) throw Error(Errc::precondition, "fallback embedder needs ngram >= 1");
  if (ids.size() != texts.size()) throw Error(Errc::precondition, "ids and texts differ in length");
  std::vector<double> values;
  values.reserve(texts.size() * cfg.dim);
  for (const auto& t : texts) {
    if (t.empty()) throw Error(Errc::precondition, "fallback embedder got an empty text");
    auto v = fallback_vector(t, cfg);
    values.insert(values.end(), v.begin(), v.end());
  }
  return EmbeddingMatrix(ids, cfg.dim, std::move(values));
}

inline std::string hex64(std::uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i, v >>= 4) s[static_cast<std::size_t>(i)] = digits[v & 0xf];
  return s;
}

// FNV-1a digest of a byte string, as 16 hex digits.
inline std::string digest_bytes(std::string_view bytes) { return hex64(fnv1a64(bytes)); }

}  // namespace ieb

#endif  // IEB_EMBSTORE_HPP
