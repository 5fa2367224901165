#ifndef IEB_TRAINER_HPP
#define IEB_TRAINER_HPP

#include <cstdio>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "ieb/common.hpp"
#include "ieb/embstore.hpp"
#include "ieb/pairgen.hpp"

namespace ieb {

enum class Activation : std::uint32_t { identity = 0, tanh = 1 };

inline const char* to_string(Activation a) { return a == Activation::tanh ? "tanh" : "identity"; }

/// Row-major block of vectors of one dimension.
struct DenseRows {
  std::size_t dim = 0;
  std::vector<double> data;

  DenseRows() = default;
  explicit DenseRows(std::size_t d) : dim(d) {}
  DenseRows(std::size_t d, std::vector<double> values) : dim(d), data(std::move(values)) {}

  std::size_t count() const { return dim == 0 ? 0 : data.size() / dim; }
  std::span<const double> row(std::size_t i) const { return {data.data() + i * dim, dim}; }
  std::span<double> row(std::size_t i) { return {data.data() + i * dim, dim}; }
  void push(std::span<const double> v) { data.insert(data.end(), v.begin(), v.end()); }
};

/// Linear map (optionally biased, optionally tanh-activated) applied to frozen
/// base embeddings; outputs are L2-normalized downstream.
struct ProjectionHead {
  std::size_t dim_in = 0;
  std::size_t dim_out = 0;
  std::vector<double> weight;  // dim_out x dim_in, row-major
  std::vector<double> bias;    // empty or dim_out
  Activation activation = Activation::identity;

  static ProjectionHead identity(std::size_t dim) {
    ProjectionHead h{dim, dim, std::vector<double>(dim * dim, 0.0), {}, Activation::identity};
    for (std::size_t i = 0; i < dim; ++i) h.weight[i * dim + i] = 1.0;
    return h;
  }

  // Gaussian entries with variance 1/dim_in.
  static ProjectionHead random(std::size_t dim_in, std::size_t dim_out, std::uint64_t seed) {
    ProjectionHead h{dim_in, dim_out, std::vector<double>(dim_in * dim_out), {}, Activation::identity};
    Rng rng(seed);
    const double scale = 1.0 / std::sqrt(static_cast<double>(dim_in));
    for (auto& w : h.weight) w = rng.normal() * scale;
    return h;
  }

  bool has_bias() const { return !bias.empty(); }

  // Pre-activation z = W x + b.
  void linear(std::span<const double> x, std::span<double> z) const {
    for (std::size_t o = 0; o < dim_out; ++o) {
      double s = has_bias() ? bias[o] : 0.0;
      const double* w = weight.data() + o * dim_in;
      for (std::size_t i = 0; i < dim_in; ++i) s += w[i] * x[i];
      z[o] = s;
    }
  }

  void check() const {
    if (dim_in == 0 || dim_out == 0) throw Error(Errc::precondition, "projection head has a zero dimension");
    if (weight.size() != dim_in * dim_out) throw Error(Errc::precondition, "projection head weight has the wrong size");
    if (has_bias() && bias.size() != dim_out) throw Error(Errc::precondition, "projection head bias has the wrong size");
    for (double w : weight)
      if (!std::isfinite(w)) throw Error(Errc::numeric, "projection head has a non-finite weight");
    for (double b : bias)
      if (!std::isfinite(b)) throw Error(Errc::numeric, "projection head has a non-finite bias");
  }

  friend bool operator==(const ProjectionHead&, const ProjectionHead&) = default;
};

struct HeadGradient {
  std::vector<double> weight;
  std::vector<double> bias;
};

struct LossResult {
  double loss = 0.0;
  std::vector<double> per_instance;
};

namespace detail {

inline void require_finite(const DenseRows& rows, const char* what) {
  for (double v : rows.data)
    if (!std::isfinite(v)) throw Error(Errc::numeric, std::string("non-finite value in ") + what);
}

// -log softmax of the diagonal entry, evaluated without overflow. When the
// positive logit is the maximum the loss is log1p of the other terms, which
// keeps tiny losses accurate.
inline double diagonal_nll(std::span<const double> logits, std::size_t positive) {
  double mx = logits[positive];
  for (double s : logits) mx = std::max(mx, s);
  double rest = 0.0;
  for (std::size_t m = 0; m < logits.size(); ++m)
    if (m != positive) rest += std::exp(logits[m] - mx);
  if (mx == logits[positive]) return std::log1p(rest);
  return mx - logits[positive] + std::log(rest + std::exp(logits[positive] - mx));
}

}  // namespace detail

/// InfoNCE from a precomputed N x (N + M) logit matrix whose first N columns
/// are the positives (column i belongs to instance i).
inline LossResult infonce_from_logits(const DenseRows& logits) {
  const std::size_t n = logits.count();
  if (n == 0) throw Error(Errc::precondition, "empty contrastive batch");
  if (logits.dim < n) throw Error(Errc::precondition, "logit matrix has fewer columns than instances");
  detail::require_finite(logits, "logits");
  LossResult out;
  out.per_instance.resize(n);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    out.per_instance[i] = detail::diagonal_nll(logits.row(i), i);
    total += out.per_instance[i];
  }
  out.loss = total / static_cast<double>(n);
  return out;
}

/// Contrastive loss over unit-normalized projections.
///
/// Instance i scores its anchor against every positive in the batch and every
/// hard negative attached anywhere in the batch; its own positive is the
/// target class. Logits are dot products divided by the temperature.
inline LossResult infonce_loss(const DenseRows& anchors, const DenseRows& positives, const DenseRows& negatives,
                               double temperature) {
  if (!(temperature > 0.0)) throw Error(Errc::precondition, "temperature must be positive");
  const std::size_t n = anchors.count();
  if (n == 0) throw Error(Errc::precondition, "empty contrastive batch");
  if (positives.count() != n) throw Error(Errc::precondition, "anchor and positive counts differ");
  if (positives.dim != anchors.dim || (negatives.count() > 0 && negatives.dim != anchors.dim))
    throw Error(Errc::precondition, "batch rows differ in dimension");
  detail::require_finite(anchors, "anchors");
  detail::require_finite(positives, "positives");
  detail::require_finite(negatives, "negatives");
  const std::size_t m = negatives.count();
  DenseRows logits(n + m);
  logits.data.resize(n * (n + m));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t c = 0; c < n; ++c) logits.data[i * (n + m) + c] = dot(anchors.row(i), positives.row(c)) / temperature;
    for (std::size_t c = 0; c < m; ++c) logits.data[i * (n + m) + n + c] = dot(anchors.row(i), negatives.row(c)) / temperature;
  }
  return infonce_from_logits(logits);
}

namespace detail {

// Forward pass through the head for a block of rows, keeping what the
// backward pass needs.
struct ProjectedRows {
  DenseRows z;       // pre-activation
  DenseRows a;       // activation
  DenseRows h;       // normalized output
  std::vector<double> norm;
};

inline ProjectedRows project_rows(const ProjectionHead& head, const DenseRows& x) {
  ProjectedRows p{DenseRows(head.dim_out), DenseRows(head.dim_out), DenseRows(head.dim_out), {}};
  const std::size_t n = x.count();
  p.z.data.resize(n * head.dim_out);
  p.a.data.resize(n * head.dim_out);
  p.h.data.resize(n * head.dim_out);
  p.norm.resize(n);
  for (std::size_t r = 0; r < n; ++r) {
    head.linear(x.row(r), p.z.row(r));
    auto a = p.a.row(r);
    auto z = p.z.row(r);
    for (std::size_t o = 0; o < head.dim_out; ++o) a[o] = head.activation == Activation::tanh ? std::tanh(z[o]) : z[o];
    const double nrm = norm2(a);
    if (!(nrm > 0.0)) throw Error(Errc::domain, "projection produced a zero vector");
    p.norm[r] = nrm;
    auto h = p.h.row(r);
    for (std::size_t o = 0; o < head.dim_out; ++o) h[o] = a[o] / nrm;
  }
  return p;
}

// Accumulates the parameter gradient of one row given dL/dh for it.
inline void backprop_row(const ProjectionHead& head, const ProjectedRows& p, std::size_t r, std::span<const double> x,
                         std::span<const double> grad_h, HeadGradient& g) {
  auto h = p.h.row(r);
  auto a = p.a.row(r);
  const double h_dot_g = dot(h, grad_h);
  for (std::size_t o = 0; o < head.dim_out; ++o) {
    // Jacobian of a -> a/|a| is (I - h h^T)/|a|.
    double dz = (grad_h[o] - h[o] * h_dot_g) / p.norm[r];
    if (head.activation == Activation::tanh) dz *= 1.0 - a[o] * a[o];
    if (dz == 0.0) continue;
    double* gw = g.weight.data() + o * head.dim_in;
    for (std::size_t i = 0; i < head.dim_in; ++i) gw[i] += dz * x[i];
    if (head.has_bias()) g.bias[o] += dz;
  }
}

}  // namespace detail

struct LossAndGradient {
  double loss = 0.0;
  HeadGradient gradient;
};

/// Batch loss and its exact gradient with respect to the head parameters,
/// from raw base embeddings. Includes the normalization Jacobian.
inline LossAndGradient loss_gradient(const DenseRows& anchors, const DenseRows& positives, const DenseRows& negatives,
                                     const ProjectionHead& head, double temperature) {
  if (!(temperature > 0.0)) throw Error(Errc::precondition, "temperature must be positive");
  head.check();
  const std::size_t n = anchors.count();
  if (n == 0) throw Error(Errc::precondition, "empty contrastive batch");
  if (positives.count() != n) throw Error(Errc::precondition, "anchor and positive counts differ");
  for (const DenseRows* rows : {&anchors, &positives, &negatives})
    if (rows->count() > 0 && rows->dim != head.dim_in) throw Error(Errc::precondition, "batch dimension does not match the head");
  detail::require_finite(anchors, "anchors");
  detail::require_finite(positives, "positives");
  detail::require_finite(negatives, "negatives");

  const auto pa = detail::project_rows(head, anchors);
  const auto pp = detail::project_rows(head, positives);
  const auto pn = detail::project_rows(head, negatives);
  const std::size_t m = negatives.count();
  const std::size_t cols = n + m;
  const auto column = [&](std::size_t c) { return c < n ? pp.h.row(c) : pn.h.row(c - n); };

  DenseRows logits(cols);
  logits.data.resize(n * cols);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < cols; ++c) logits.data[i * cols + c] = dot(pa.h.row(i), column(c)) / temperature;
  const LossResult loss = infonce_from_logits(logits);

  // dL/dlogit = (softmax - onehot) / N
  DenseRows coef(cols);
  coef.data.resize(n * cols);
  for (std::size_t i = 0; i < n; ++i) {
    auto row = logits.row(i);
    const double mx = *std::max_element(row.begin(), row.end());
    double z = 0.0;
    for (double s : row) z += std::exp(s - mx);
    for (std::size_t c = 0; c < cols; ++c) {
      const double p = std::exp(row[c] - mx) / z;
      coef.data[i * cols + c] = (p - (c == i ? 1.0 : 0.0)) / static_cast<double>(n) / temperature;
    }
  }

  const std::size_t d = head.dim_out;
  DenseRows grad_anchor(d), grad_col(d);
  grad_anchor.data.assign(n * d, 0.0);
  grad_col.data.assign(cols * d, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < cols; ++c) {
      const double w = coef.data[i * cols + c];
      auto hc = column(c);
      auto hi = pa.h.row(i);
      auto ga = grad_anchor.row(i);
      auto gc = grad_col.row(c);
      for (std::size_t o = 0; o < d; ++o) {
        ga[o] += w * hc[o];
        gc[o] += w * hi[o];
      }
    }

  LossAndGradient out{loss.loss, {std::vector<double>(head.weight.size(), 0.0), std::vector<double>(head.bias.size(), 0.0)}};
  for (std::size_t i = 0; i < n; ++i) detail::backprop_row(head, pa, i, anchors.row(i), grad_anchor.row(i), out.gradient);
  for (std::size_t c = 0; c < n; ++c) detail::backprop_row(head, pp, c, positives.row(c), grad_col.row(c), out.gradient);
  for (std::size_t c = 0; c < m; ++c) detail::backprop_row(head, pn, c, negatives.row(c), grad_col.row(n + c), out.gradient);
  return out;
}

/// Loss of a raw batch under a head (forward only).
inline double batch_loss(const DenseRows& anchors, const DenseRows& positives, const DenseRows& negatives,
                         const ProjectionHead& head, double temperature) {
  const auto pa = detail::project_rows(head, anchors);
  const auto pp = detail::project_rows(head, positives);
  const auto pn = detail::project_rows(head, negatives);
  return infonce_loss(pa.h, pp.h, pn.h, temperature).loss;
}

struct TrainConfig {
  double temperature = 0.05;
  std::size_t batch_size = 16;
  std::size_t epochs = 1;
  double learning_rate = 0.0;  // required; must be set by the caller
  std::uint64_t seed = 0;
  bool use_hard_negatives = true;
  std::size_t dim_out = 0;  // 0 keeps the input dimension
  Activation activation = Activation::identity;
  bool bias = false;
};

struct TrainResult {
  ProjectionHead head;
  std::vector<double> loss_trace;  // batch loss before each update
};

inline ProjectionHead initial_head(std::size_t dim_in, const TrainConfig& cfg) {
  const std::size_t dim_out = cfg.dim_out == 0 ? dim_in : cfg.dim_out;
  ProjectionHead head = dim_out == dim_in ? ProjectionHead::identity(dim_in)
                                          : ProjectionHead::random(dim_in, dim_out, derive_seed(cfg.seed, 0x4ead));
  head.activation = cfg.activation;
  if (cfg.bias) head.bias.assign(dim_out, 0.0);
  return head;
}

/// Mini-batch gradient descent with a fixed step on the contrastive loss.
/// Pairs are visited in a fresh seeded order every epoch.
inline TrainResult train_head(const EmbeddingMatrix& base, const std::vector<TriplePair>& pairs, const TrainConfig& cfg) {
  if (!(cfg.temperature > 0.0)) throw Error(Errc::precondition, "temperature must be positive");
  if (!(cfg.learning_rate > 0.0)) throw Error(Errc::precondition, "learning rate must be positive");
  if (cfg.batch_size < 1) throw Error(Errc::precondition, "batch size must be at least 1");
  if (cfg.batch_size < 2 && !cfg.use_hard_negatives)
    throw Error(Errc::precondition, "batch size must be at least 2 without hard negatives");
  for (const auto& p : pairs) {
    for (const std::string* id : {&p.anchor_id, &p.positive_id})
      if (!base.contains(*id)) throw Error(Errc::not_found, "pair id '" + *id + "' has no embedding");
    if (cfg.use_hard_negatives && p.hard_negative_id && !base.contains(*p.hard_negative_id))
      throw Error(Errc::not_found, "pair id '" + *p.hard_negative_id + "' has no embedding");
  }

  TrainResult result{initial_head(base.dim(), cfg), {}};
  std::vector<std::size_t> order(pairs.size());
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(derive_seed(cfg.seed, epoch + 1));
    rng.shuffle(order);
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t stop = std::min(order.size(), start + cfg.batch_size);
      DenseRows anchors(base.dim()), positives(base.dim()), negatives(base.dim());
      for (std::size_t k = start; k < stop; ++k) {
        const auto& p = pairs[order[k]];
        anchors.push(base.row(base.row_of(p.anchor_id)));
        positives.push(base.row(base.row_of(p.positive_id)));
        if (cfg.use_hard_negatives && p.hard_negative_id) negatives.push(base.row(base.row_of(*p.hard_negative_id)));
      }
      const auto lg = loss_gradient(anchors, positives, negatives, result.head, cfg.temperature);
      result.loss_trace.push_back(lg.loss);
      for (std::size_t w = 0; w < result.head.weight.size(); ++w) result.head.weight[w] -= cfg.learning_rate * lg.gradient.weight[w];
      for (std::size_t b = 0; b < result.head.bias.size(); ++b) result.head.bias[b] -= cfg.learning_rate * lg.gradient.bias[b];
    }
  }
  return result;
}

/// Projects, activates and re-normalizes every row; ids are preserved.
inline EmbeddingMatrix apply_head(const ProjectionHead& head, const EmbeddingMatrix& m) {
  head.check();
  if (m.rows() > 0 && m.dim() != head.dim_in)
    throw Error(Errc::precondition, "embedding dim " + std::to_string(m.dim()) + " does not match head input dim " +
                                        std::to_string(head.dim_in));
  DenseRows x(m.dim(), m.values());
  const auto p = detail::project_rows(head, x);
  return EmbeddingMatrix(m.ids(), head.dim_out, p.h.data);
}

// ---------------------------------------------------------------------------
// Checkpoint: "IEBH" | u32 version | u32 dim_out | u32 dim_in | u32 activation |
// u32 has_bias | f32 weights (row-major) | f32 bias. Little-endian.

inline constexpr std::string_view kHeadMagic = "IEBH";

inline std::string encode_head(const ProjectionHead& head) {
  head.check();
  std::string out;
  out.append(kHeadMagic);
  binio::put_u32(out, kFormatVersion);
  binio::put_u32(out, static_cast<std::uint32_t>(head.dim_out));
  binio::put_u32(out, static_cast<std::uint32_t>(head.dim_in));
  binio::put_u32(out, static_cast<std::uint32_t>(head.activation));
  binio::put_u32(out, head.has_bias() ? 1u : 0u);
  for (double w : head.weight) binio::put_f32(out, static_cast<float>(w));
  for (double b : head.bias) binio::put_f32(out, static_cast<float>(b));
  return out;
}

inline ProjectionHead decode_head(std::string_view bytes, const std::string& name = "<memory>") {
  binio::Reader r(bytes, name);
  if (r.take(4, "magic") != kHeadMagic) r.fail("bad magic (expected IEBH)");
  if (const auto v = r.u32("version"); v != kFormatVersion) r.fail("unsupported version " + std::to_string(v));
  ProjectionHead head;
  head.dim_out = r.u32("dim_out");
  head.dim_in = r.u32("dim_in");
  const std::uint32_t act = r.u32("activation");
  if (act > 1) r.fail("unknown activation " + std::to_string(act));
  head.activation = static_cast<Activation>(act);
  const std::uint32_t has_bias = r.u32("bias flag");
  if (has_bias > 1) r.fail("bad bias flag");
  if (r.remaining() / 4 < head.dim_in * head.dim_out + (has_bias ? head.dim_out : 0)) r.fail("truncated weights");
  head.weight.resize(head.dim_in * head.dim_out);
  for (auto& w : head.weight) w = r.f32("weights");
  if (has_bias) {
    head.bias.resize(head.dim_out);
    for (auto& b : head.bias) b = r.f32("bias");
  }
  if (r.remaining() != 0) r.fail("trailing bytes");
  head.check();
  return head;
}

inline void write_head(const ProjectionHead& head, const std::string& path) { binio::write_file(path, encode_head(head)); }
inline ProjectionHead read_head(const std::string& path) { return decode_head(binio::read_file(path), path); }

inline std::string loss_trace_csv(const std::vector<double>& trace) {
  std::string out = "step,loss\n";
  char buf[64];
  for (std::size_t i = 0; i < trace.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%zu,%.17g\n", i, trace[i]);
    out += buf;
  }
  return out;
}

}  // namespace ieb

#endif  // IEB_TRAINER_HPP
