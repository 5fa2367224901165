#ifndef IEB_EVAL_HPP
#define IEB_EVAL_HPP

#include <cstdio>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ieb/common.hpp"
#include "ieb/corpus.hpp"
#include "ieb/embstore.hpp"
#include "ieb/pairgen.hpp"

namespace ieb {

struct ClusterAssignment {
  std::vector<std::string> ids;
  std::vector<std::size_t> labels;  // cluster index per row
  std::size_t k = 0;
  std::size_t dim = 0;
  std::vector<double> centers;  // k x dim
  double inertia = 0.0;
  std::size_t restart = 0;            // winning restart
  std::vector<double> inertia_trace;  // winning restart, one entry per assignment step

  std::size_t cluster_of(const std::string& id) const {
    for (std::size_t i = 0; i < ids.size(); ++i)
      if (ids[i] == id) return labels[i];
    throw Error(Errc::not_found, "id '" + id + "' is not in the clustering");
  }
  std::span<const double> center(std::size_t c) const { return {centers.data() + c * dim, dim}; }
};

struct KMeansOptions {
  std::size_t restarts = 10;
  std::size_t max_iterations = 300;
  double tolerance = 1e-6;  // on the largest center shift
};

namespace detail {

struct LloydRun {
  std::vector<std::size_t> labels;
  std::vector<double> centers;
  double inertia = 0.0;
  std::vector<double> trace;
};

// Nearest center by squared distance; ties go to the lower index.
inline double assign_points(const EmbeddingMatrix& m, const std::vector<double>& centers, std::size_t k,
                            std::vector<std::size_t>& labels, std::vector<double>& dist) {
  const std::size_t d = m.dim();
  double inertia = 0.0;
  for (std::size_t i = 0; i < m.rows(); ++i) {
    std::size_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < k; ++c) {
      const double dd = squared_distance(m.row(i), {centers.data() + c * d, d});
      if (dd < best_d) {
        best_d = dd;
        best = c;
      }
    }
    labels[i] = best;
    dist[i] = best_d;
    inertia += best_d;
  }
  return inertia;
}

inline std::vector<double> kmeanspp_seed(const EmbeddingMatrix& m, std::size_t k, Rng& rng) {
  const std::size_t n = m.rows(), d = m.dim();
  std::vector<double> centers;
  centers.reserve(k * d);
  const auto add = [&](std::size_t i) {
    auto r = m.row(i);
    centers.insert(centers.end(), r.begin(), r.end());
  };
  add(rng.uniform_index(n));
  std::vector<double> d2(n);
  for (std::size_t i = 0; i < n; ++i) d2[i] = squared_distance(m.row(i), {centers.data(), d});
  for (std::size_t c = 1; c < k; ++c) {
    double total = 0.0;
    for (double v : d2) total += v;
    std::size_t pick = n - 1;
    if (total > 0.0) {
      double r = rng.uniform01() * total;
      for (std::size_t i = 0; i < n; ++i) {
        if (d2[i] > 0.0 && r < d2[i]) {
          pick = i;
          break;
        }
        r -= d2[i];
      }
      // Rounding can run off the end; fall back to the last positive weight.
      if (d2[pick] == 0.0)
        for (std::size_t i = n; i-- > 0;)
          if (d2[i] > 0.0) {
            pick = i;
            break;
          }
    } else {
      pick = rng.uniform_index(n);
    }
    add(pick);
    for (std::size_t i = 0; i < n; ++i)
      d2[i] = std::min(d2[i], squared_distance(m.row(i), {centers.data() + c * d, d}));
  }
  return centers;
}

inline LloydRun lloyd(const EmbeddingMatrix& m, std::size_t k, std::uint64_t seed, const KMeansOptions& opt) {
  const std::size_t n = m.rows(), d = m.dim();
  Rng rng(seed);
  LloydRun run;
  run.centers = kmeanspp_seed(m, k, rng);
  run.labels.assign(n, 0);
  std::vector<double> dist(n);
  run.inertia = assign_points(m, run.centers, k, run.labels, dist);
  run.trace.push_back(run.inertia);
  std::vector<double> next(k * d);
  std::vector<std::size_t> sizes(k);
  for (std::size_t iter = 0; iter < opt.max_iterations; ++iter) {
    std::fill(sizes.begin(), sizes.end(), 0);
    for (std::size_t i = 0; i < n; ++i) ++sizes[run.labels[i]];
    // An empty cluster takes the point farthest from its own center.
    for (std::size_t c = 0; c < k; ++c) {
      if (sizes[c] > 0) continue;
      std::size_t far = n;
      for (std::size_t i = 0; i < n; ++i)
        if (sizes[run.labels[i]] > 1 && (far == n || dist[i] > dist[far])) far = i;
      if (far == n) throw Error(Errc::numeric, "k-means could not repair an empty cluster");
      --sizes[run.labels[far]];
      run.labels[far] = c;
      dist[far] = 0.0;
      sizes[c] = 1;
    }
    std::fill(next.begin(), next.end(), 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      auto r = m.row(i);
      double* out = next.data() + run.labels[i] * d;
      for (std::size_t j = 0; j < d; ++j) out[j] += r[j];
    }
    double shift = 0.0;
    for (std::size_t c = 0; c < k; ++c) {
      double* out = next.data() + c * d;
      for (std::size_t j = 0; j < d; ++j) out[j] /= static_cast<double>(sizes[c]);
      shift = std::max(shift, std::sqrt(squared_distance({out, d}, {run.centers.data() + c * d, d})));
    }
    run.centers.swap(next);
    run.inertia = assign_points(m, run.centers, k, run.labels, dist);
    run.trace.push_back(run.inertia);
    if (shift < opt.tolerance) break;
  }
  return run;
}

}  // namespace detail

/// k-means with k-means++ seeding and plain Lloyd updates on squared
/// Euclidean distance; the best restart by (inertia, restart index) wins.
inline ClusterAssignment kmeans(const EmbeddingMatrix& m, std::size_t k, std::uint64_t seed,
                                const KMeansOptions& opt = {}) {
  if (k == 0) throw Error(Errc::precondition, "k must be positive");
  if (k > m.rows())
    throw Error(Errc::precondition, "k = " + std::to_string(k) + " exceeds the " + std::to_string(m.rows()) + " rows");
  if (opt.restarts == 0) throw Error(Errc::precondition, "restarts must be positive");
  std::vector<detail::LloydRun> runs(opt.restarts);
  parallel_for(opt.restarts, [&](std::size_t r) { runs[r] = detail::lloyd(m, k, derive_seed(seed, r), opt); });
  std::size_t best = 0;
  for (std::size_t r = 1; r < runs.size(); ++r)
    if (runs[r].inertia < runs[best].inertia) best = r;
  ClusterAssignment out;
  out.ids = m.ids();
  out.k = k;
  out.dim = m.dim();
  out.labels = std::move(runs[best].labels);
  out.centers = std::move(runs[best].centers);
  out.inertia = runs[best].inertia;
  out.restart = best;
  out.inertia_trace = std::move(runs[best].trace);
  return out;
}

// ---------------------------------------------------------------------------
// External clustering metrics

namespace detail {

// Maps arbitrary labels to 0..c-1 in order of first appearance.
template <typename L>
std::vector<std::size_t> dense_codes(const std::vector<L>& labels, std::size_t* distinct = nullptr) {
  std::map<L, std::size_t> code;
  std::vector<std::size_t> out;
  out.reserve(labels.size());
  for (const auto& l : labels) out.push_back(code.emplace(l, code.size()).first->second);
  if (distinct) *distinct = code.size();
  return out;
}

struct Contingency {
  std::size_t n = 0;
  std::size_t rows = 0;  // predicted clusters
  std::size_t cols = 0;  // true classes
  std::vector<std::size_t> table;
  std::vector<std::size_t> row_sum, col_sum;
  std::size_t at(std::size_t r, std::size_t c) const { return table[r * cols + c]; }
};

template <typename A, typename B>
Contingency contingency(const std::vector<A>& pred, const std::vector<B>& truth) {
  if (pred.size() != truth.size())
    throw Error(Errc::precondition, "labelings differ in length (" + std::to_string(pred.size()) + " vs " +
                                        std::to_string(truth.size()) + ")");
  if (pred.size() < 2) throw Error(Errc::precondition, "labelings need at least 2 items");
  Contingency t;
  t.n = pred.size();
  const auto p = dense_codes(pred, &t.rows);
  const auto q = dense_codes(truth, &t.cols);
  t.table.assign(t.rows * t.cols, 0);
  t.row_sum.assign(t.rows, 0);
  t.col_sum.assign(t.cols, 0);
  for (std::size_t i = 0; i < t.n; ++i) {
    ++t.table[p[i] * t.cols + q[i]];
    ++t.row_sum[p[i]];
    ++t.col_sum[q[i]];
  }
  return t;
}

inline double choose2(std::size_t x) { return 0.5 * static_cast<double>(x) * static_cast<double>(x > 0 ? x - 1 : 0); }

}  // namespace detail

/// Adjusted Rand Index from the contingency table. When both partitions are
/// trivial in the same way (expected index equals its maximum) the value is 1.
template <typename A, typename B>
double adjusted_rand_index(const std::vector<A>& pred, const std::vector<B>& truth) {
  const auto t = detail::contingency(pred, truth);
  double index = 0.0, a = 0.0, b = 0.0;
  for (std::size_t v : t.table) index += detail::choose2(v);
  for (std::size_t v : t.row_sum) a += detail::choose2(v);
  for (std::size_t v : t.col_sum) b += detail::choose2(v);
  const double expected = a * b / detail::choose2(t.n);
  const double max_index = 0.5 * (a + b);
  if (max_index == expected) return 1.0;
  return (index - expected) / (max_index - expected);
}

template <typename A, typename B>
double clustering_purity(const std::vector<A>& pred, const std::vector<B>& truth) {
  const auto t = detail::contingency(pred, truth);
  std::size_t hit = 0;
  for (std::size_t r = 0; r < t.rows; ++r) {
    std::size_t best = 0;
    for (std::size_t c = 0; c < t.cols; ++c) best = std::max(best, t.at(r, c));
    hit += best;
  }
  return static_cast<double>(hit) / static_cast<double>(t.n);
}

/// 1 - H(truth | pred) / H(truth), natural log; 1 when H(truth) = 0.
template <typename A, typename B>
double homogeneity(const std::vector<A>& pred, const std::vector<B>& truth) {
  const auto t = detail::contingency(pred, truth);
  const double n = static_cast<double>(t.n);
  double h_c = 0.0;
  for (std::size_t v : t.col_sum)
    if (v > 0) h_c -= (v / n) * std::log(v / n);
  if (h_c == 0.0) return 1.0;
  double h_ck = 0.0;
  for (std::size_t r = 0; r < t.rows; ++r)
    for (std::size_t c = 0; c < t.cols; ++c)
      if (const std::size_t v = t.at(r, c); v > 0)
        h_ck -= (v / n) * std::log(static_cast<double>(v) / static_cast<double>(t.row_sum[r]));
  return std::clamp(1.0 - h_ck / h_c, 0.0, 1.0);
}

/// Mean silhouette under cosine distance. Points alone in their cluster
/// score 0, as do points with a = b = 0.
template <typename L>
double silhouette(const EmbeddingMatrix& m, const std::vector<L>& pred) {
  if (pred.size() != m.rows()) throw Error(Errc::precondition, "labeling length does not match the row count");
  std::size_t k = 0;
  const auto code = detail::dense_codes(pred, &k);
  if (k < 2) throw Error(Errc::precondition, "silhouette needs at least 2 clusters");
  const std::size_t n = m.rows();
  std::vector<std::size_t> size(k, 0);
  for (std::size_t c : code) ++size[c];
  std::vector<double> inv_norm(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double nr = norm2(m.row(i));
    if (!(nr > 0.0)) throw Error(Errc::domain, "silhouette of a zero row");
    inv_norm[i] = 1.0 / nr;
  }
  std::vector<double> score(n, 0.0);
  parallel_for(n, [&](std::size_t i) {
    if (size[code[i]] < 2) return;
    std::vector<double> sum(k, 0.0);
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      const double c = std::clamp(dot(m.row(i), m.row(j)) * inv_norm[i] * inv_norm[j], -1.0, 1.0);
      sum[code[j]] += 1.0 - c;
    }
    const double a = sum[code[i]] / static_cast<double>(size[code[i]] - 1);
    double b = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < k; ++c)
      if (c != code[i]) b = std::min(b, sum[c] / static_cast<double>(size[c]));
    const double denom = std::max(a, b);
    score[i] = denom > 0.0 ? (b - a) / denom : 0.0;
  });
  double total = 0.0;
  for (double s : score) total += s;
  return total / static_cast<double>(n);
}

/// Average ranks (1-based); tied values share the mean of their positions.
inline std::vector<double> average_ranks(const std::vector<double>& x) {
  std::vector<std::size_t> order(x.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  std::vector<double> rank(x.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && x[order[j + 1]] == x[order[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t t = i; t <= j; ++t) rank[order[t]] = r;
    i = j + 1;
  }
  return rank;
}

inline double pearson(const std::vector<double>& x, const std::vector<double>& y) {
  const double n = static_cast<double>(x.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) throw Error(Errc::domain, "correlation is undefined for a constant vector");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

inline double spearman(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size()) throw Error(Errc::precondition, "spearman inputs differ in length");
  if (x.size() < 2) throw Error(Errc::domain, "spearman is undefined for fewer than 2 values");
  for (std::size_t i = 0; i < x.size(); ++i)
    if (!std::isfinite(x[i]) || !std::isfinite(y[i])) throw Error(Errc::numeric, "spearman input is not finite");
  return pearson(average_ranks(x), average_ranks(y));
}

// ---------------------------------------------------------------------------
// Reports

struct MetricsReport {
  double ari = 0.0;
  double cp = 0.0;
  double homo = 0.0;
  double silh = 0.0;
  std::optional<double> iis_spearman;
  std::size_t n = 0;
  std::size_t k = 0;
  std::uint64_t seed = 0;
  std::size_t restarts = 0;
};

inline nlohmann::ordered_json to_json(const MetricsReport& r) {
  nlohmann::ordered_json j;
  nlohmann::ordered_json metrics;
  if (r.k > 0) {
    metrics["ari"] = r.ari;
    metrics["cp"] = r.cp;
    metrics["homo"] = r.homo;
    metrics["silh"] = r.silh;
  }
  metrics["iis_spearman"] = r.iis_spearman ? nlohmann::ordered_json(*r.iis_spearman) : nlohmann::ordered_json(nullptr);
  j["metrics"] = metrics;
  j["meta"] = {{"n", r.n}, {"k", r.k}, {"seed", r.seed}, {"restarts", r.restarts}};
  return j;
}

struct LabeledRows {
  EmbeddingMatrix matrix;
  std::vector<std::string> keys;
};

// Labeled instructions of the corpus that have an embedding row, in corpus order.
inline LabeledRows labeled_rows(const EmbeddingMatrix& m, const Corpus& corpus) {
  std::vector<std::string> ids, keys;
  for (const auto& ins : corpus.instructions()) {
    if (!ins.label) continue;
    if (!m.contains(ins.id)) throw Error(Errc::not_found, "instruction '" + ins.id + "' has no embedding");
    ids.push_back(ins.id);
    keys.push_back(ins.label->key());
  }
  return {m.select(ids), std::move(keys)};
}

/// Instruction clustering: k-means with k = category count (unless given),
/// scored against the true categories.
inline MetricsReport run_ict(const EmbeddingMatrix& m, const Corpus& corpus, std::uint64_t seed,
                             std::optional<std::size_t> k = std::nullopt, std::size_t restarts = 10) {
  auto rows = labeled_rows(m, corpus);
  std::size_t categories = 0;
  detail::dense_codes(rows.keys, &categories);
  MetricsReport r;
  r.n = rows.keys.size();
  r.k = k.value_or(categories);
  r.seed = seed;
  r.restarts = restarts;
  if (r.n < 2) throw Error(Errc::precondition, "clustering needs at least 2 labeled instructions");
  const auto a = kmeans(rows.matrix, r.k, seed, {restarts});
  r.ari = adjusted_rand_index(a.labels, rows.keys);
  r.cp = clustering_purity(a.labels, rows.keys);
  r.homo = homogeneity(a.labels, rows.keys);
  r.silh = silhouette(rows.matrix, a.labels);
  return r;
}

/// Spearman correlation between pair cosines and their 0/1 labels.
inline double run_iis(const EmbeddingMatrix& m, const std::vector<IISPair>& pairs) {
  std::vector<double> cos, lab;
  cos.reserve(pairs.size());
  lab.reserve(pairs.size());
  for (const auto& p : pairs) {
    cos.push_back(cosine(m.row(m.row_of(p.left_id)), m.row(m.row_of(p.right_id))));
    lab.push_back(static_cast<double>(p.label));
  }
  return spearman(cos, lab);
}

// ---------------------------------------------------------------------------
// Two-dimensional PCA

struct Pca2d {
  std::vector<std::string> ids;
  std::vector<double> coords;  // n x 2
  std::array<double, 2> eigenvalues{};
  double total_variance = 0.0;
  std::vector<double> components;  // 2 x dim
};

namespace detail {

// Cyclic Jacobi for a small symmetric matrix. Returns eigenvalues in
// descending order with eigenvectors as columns of v.
inline std::vector<double> jacobi_eigen(std::vector<double> a, std::size_t p, std::vector<double>& v) {
  v.assign(p * p, 0.0);
  for (std::size_t i = 0; i < p; ++i) v[i * p + i] = 1.0;
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (std::size_t i = 0; i < p; ++i)
      for (std::size_t j = i + 1; j < p; ++j) off += a[i * p + j] * a[i * p + j];
    if (off < 1e-30) break;
    for (std::size_t i = 0; i < p; ++i)
      for (std::size_t j = i + 1; j < p; ++j) {
        const double aij = a[i * p + j];
        if (aij == 0.0) continue;
        const double theta = (a[j * p + j] - a[i * p + i]) / (2.0 * aij);
        const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0), s = t * c;
        for (std::size_t r = 0; r < p; ++r) {
          const double ari = a[r * p + i], arj = a[r * p + j];
          a[r * p + i] = c * ari - s * arj;
          a[r * p + j] = s * ari + c * arj;
        }
        for (std::size_t r = 0; r < p; ++r) {
          const double air = a[i * p + r], ajr = a[j * p + r];
          a[i * p + r] = c * air - s * ajr;
          a[j * p + r] = s * air + c * ajr;
        }
        for (std::size_t r = 0; r < p; ++r) {
          const double vri = v[r * p + i], vrj = v[r * p + j];
          v[r * p + i] = c * vri - s * vrj;
          v[r * p + j] = s * vri + c * vrj;
        }
      }
  }
  std::vector<std::size_t> order(p);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) { return a[x * p + x] > a[y * p + y]; });
  std::vector<double> values(p), sorted(p * p);
  for (std::size_t c = 0; c < p; ++c) {
    values[c] = a[order[c] * p + order[c]];
    for (std::size_t r = 0; r < p; ++r) sorted[r * p + c] = v[r * p + order[c]];
  }
  v.swap(sorted);
  return values;
}

// Modified Gram-Schmidt on the columns of q (d x p); dependent columns are
// replaced by fresh random directions.
inline void orthonormalize(std::vector<double>& q, std::size_t d, std::size_t p, Rng& rng) {
  for (std::size_t c = 0; c < p; ++c) {
    for (int attempt = 0;; ++attempt) {
      for (std::size_t prev = 0; prev < c; ++prev) {
        double s = 0.0;
        for (std::size_t r = 0; r < d; ++r) s += q[r * p + c] * q[r * p + prev];
        for (std::size_t r = 0; r < d; ++r) q[r * p + c] -= s * q[r * p + prev];
      }
      double nrm = 0.0;
      for (std::size_t r = 0; r < d; ++r) nrm += q[r * p + c] * q[r * p + c];
      nrm = std::sqrt(nrm);
      if (nrm > 1e-10 || attempt > 8) {
        for (std::size_t r = 0; r < d; ++r) q[r * p + c] = nrm > 0.0 ? q[r * p + c] / nrm : 0.0;
        break;
      }
      for (std::size_t r = 0; r < d; ++r) q[r * p + c] = rng.normal();
    }
  }
}

}  // namespace detail

/// Top two principal components of the mean-centered rows, by block
/// subspace iteration with Rayleigh-Ritz. Each component's largest-magnitude
/// loading is made positive (first such index on ties).
inline Pca2d pca2d(const EmbeddingMatrix& m) {
  const std::size_t n = m.rows(), d = m.dim();
  if (n == 0) throw Error(Errc::precondition, "pca of an empty matrix");
  std::vector<double> mean(d, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) mean[j] += m.row(i)[j];
  for (auto& v : mean) v /= static_cast<double>(n);
  std::vector<double> x(n * d);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) {
      x[i * d + j] = m.row(i)[j] - mean[j];
      total += x[i * d + j] * x[i * d + j];
    }
  const double scale = n > 1 ? 1.0 / static_cast<double>(n - 1) : 1.0;
  total *= scale;

  const std::size_t p = std::min<std::size_t>(d, 8);
  Rng rng(0x9ca2d);
  std::vector<double> q(d * p);
  for (auto& v : q) v = rng.normal();
  detail::orthonormalize(q, d, p, rng);

  // y = C q with C = X^T X / (n-1), without forming C.
  const auto apply_cov = [&](const std::vector<double>& in, std::vector<double>& out) {
    std::vector<double> xq(n * p, 0.0);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < d; ++j) {
        const double xv = x[i * d + j];
        if (xv == 0.0) continue;
        for (std::size_t c = 0; c < p; ++c) xq[i * p + c] += xv * in[j * p + c];
      }
    out.assign(d * p, 0.0);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < d; ++j) {
        const double xv = x[i * d + j];
        if (xv == 0.0) continue;
        for (std::size_t c = 0; c < p; ++c) out[j * p + c] += xv * xq[i * p + c] * scale;
      }
  };

  std::vector<double> y, vecs, values(p, 0.0);
  double prev0 = -1.0, prev1 = -1.0;
  for (int iter = 0; iter < 5000; ++iter) {
    apply_cov(q, y);
    // Rayleigh-Ritz on span(q): T = q^T C q, then rotate q and C q alike.
    std::vector<double> t(p * p, 0.0);
    for (std::size_t a = 0; a < p; ++a)
      for (std::size_t b = 0; b < p; ++b)
        for (std::size_t r = 0; r < d; ++r) t[a * p + b] += q[r * p + a] * y[r * p + b];
    for (std::size_t a = 0; a < p; ++a)
      for (std::size_t b = a + 1; b < p; ++b) t[a * p + b] = t[b * p + a] = 0.5 * (t[a * p + b] + t[b * p + a]);
    values = detail::jacobi_eigen(t, p, vecs);
    std::vector<double> qr(d * p, 0.0), yr(d * p, 0.0);
    for (std::size_t r = 0; r < d; ++r)
      for (std::size_t c = 0; c < p; ++c)
        for (std::size_t a = 0; a < p; ++a) {
          qr[r * p + c] += q[r * p + a] * vecs[a * p + c];
          yr[r * p + c] += y[r * p + a] * vecs[a * p + c];
        }
    q.swap(qr);
    if (p == d) break;
    const double ref = std::max(values[0], 1e-300);
    const double v1 = p > 1 ? values[1] : 0.0;
    if (std::abs(values[0] - prev0) <= 1e-15 * ref && std::abs(v1 - prev1) <= 1e-15 * ref) break;
    prev0 = values[0];
    prev1 = v1;
    q.swap(yr);
    detail::orthonormalize(q, d, p, rng);
  }

  Pca2d out;
  out.ids = m.ids();
  out.total_variance = total;
  out.components.assign(2 * d, 0.0);
  for (std::size_t c = 0; c < 2; ++c) {
    if (c >= p) break;
    out.eigenvalues[c] = std::max(values[c], 0.0);
    std::size_t arg = 0;
    for (std::size_t r = 0; r < d; ++r)
      if (std::abs(q[r * p + c]) > std::abs(q[arg * p + c])) arg = r;
    const double sign = q[arg * p + c] < 0.0 ? -1.0 : 1.0;
    for (std::size_t r = 0; r < d; ++r) out.components[c * d + r] = sign * q[r * p + c];
  }
  out.coords.assign(n * 2, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < 2; ++c) {
      double s = 0.0;
      for (std::size_t j = 0; j < d; ++j) s += x[i * d + j] * out.components[c * d + j];
      out.coords[i * 2 + c] = s;
    }
  return out;
}

inline std::string csv_escape(std::string_view s) {
  if (s.find_first_of(",\"\n\r") == std::string_view::npos) return std::string(s);
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

inline std::string format_real(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// CSV id,x,y,label; label is the category key or empty.
inline std::string pca_csv(const Pca2d& p, const std::vector<std::string>& labels) {
  std::string out = "id,x,y,label\n";
  for (std::size_t i = 0; i < p.ids.size(); ++i)
    out += csv_escape(p.ids[i]) + ',' + format_real(p.coords[i * 2]) + ',' + format_real(p.coords[i * 2 + 1]) + ',' +
           csv_escape(i < labels.size() ? labels[i] : std::string()) + '\n';
  return out;
}

inline std::string xml_escape(std::string_view s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

// Self-contained scatter plot, one hue per distinct label.
inline std::string pca_svg(const Pca2d& p, const std::vector<std::string>& labels, double size = 640.0) {
  std::size_t distinct = 0;
  std::vector<std::string> padded(p.ids.size());
  for (std::size_t i = 0; i < padded.size() && i < labels.size(); ++i) padded[i] = labels[i];
  const auto code = detail::dense_codes(padded, &distinct);
  double lo[2] = {0, 0}, hi[2] = {0, 0};
  for (std::size_t i = 0; i < p.ids.size(); ++i)
    for (int c = 0; c < 2; ++c) {
      const double v = p.coords[i * 2 + c];
      if (i == 0 || v < lo[c]) lo[c] = v;
      if (i == 0 || v > hi[c]) hi[c] = v;
    }
  const double pad = 20.0, span = size - 2 * pad;
  char buf[256];
  std::string out;
  std::snprintf(buf, sizeof buf,
                "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"%.0f\" height=\"%.0f\" viewBox=\"0 0 %.0f %.0f\">\n",
                size, size, size, size);
  out += buf;
  out += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  for (std::size_t i = 0; i < p.ids.size(); ++i) {
    const double fx = hi[0] > lo[0] ? (p.coords[i * 2] - lo[0]) / (hi[0] - lo[0]) : 0.5;
    const double fy = hi[1] > lo[1] ? (p.coords[i * 2 + 1] - lo[1]) / (hi[1] - lo[1]) : 0.5;
    const double hue = distinct > 0 ? 360.0 * static_cast<double>(code[i]) / static_cast<double>(distinct) : 0.0;
    std::snprintf(buf, sizeof buf, "<circle cx=\"%.3f\" cy=\"%.3f\" r=\"3\" fill=\"hsl(%.1f,70%%,45%%)\">", pad + fx * span,
                  pad + (1.0 - fy) * span, hue);
    out += buf;
    out += "<title>" + xml_escape(p.ids[i]) + (padded[i].empty() ? "" : " " + xml_escape(padded[i])) + "</title></circle>\n";
  }
  out += "</svg>\n";
  return out;
}

}  // namespace ieb

#endif  // IEB_EVAL_HPP
