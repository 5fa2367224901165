#ifndef IEB_DOWNSTREAM_HPP
#define IEB_DOWNSTREAM_HPP

#include <charconv>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ieb/common.hpp"
#include "ieb/corpus.hpp"
#include "ieb/embstore.hpp"
#include "ieb/eval.hpp"

namespace ieb {

struct SelectionResult {
  std::vector<std::string> chosen_ids;  // in cluster index order
  ClusterAssignment clusters;
  std::size_t k = 0;
};

/// Per-cluster representatives: the member nearest its center (lowest id on
/// ties), one per non-empty cluster, in cluster order.
inline std::vector<std::string> nearest_to_centers(const EmbeddingMatrix& m, const ClusterAssignment& a) {
  std::vector<std::size_t> best(a.k, m.rows());
  std::vector<double> best_d(a.k, std::numeric_limits<double>::infinity());
  for (std::size_t i = 0; i < m.rows(); ++i) {
    const std::size_t c = a.labels[i];
    const double d = squared_distance(m.row(i), a.center(c));
    if (d < best_d[c] || (d == best_d[c] && best[c] < m.rows() && m.ids()[i] < m.ids()[best[c]])) {
      best_d[c] = d;
      best[c] = i;
    }
  }
  std::vector<std::string> out;
  for (std::size_t c = 0; c < a.k; ++c)
    if (best[c] < m.rows()) out.push_back(m.ids()[best[c]]);
  return out;
}

inline SelectionResult select_for_tuning(const EmbeddingMatrix& m, std::size_t k, std::uint64_t seed,
                                         const KMeansOptions& opt = {}) {
  SelectionResult r;
  r.k = k;
  r.clusters = kmeans(m, k, seed, opt);
  r.chosen_ids = nearest_to_centers(m, r.clusters);
  return r;
}

/// Exact top-k pool rows by cosine for every query row, most similar first
/// (lowest id on ties). A query never retrieves its own id.
inline std::vector<std::vector<std::string>> retrieve_demonstrations(const EmbeddingMatrix& queries,
                                                                     const EmbeddingMatrix& pool, std::size_t topk = 2) {
  if (pool.rows() == 0) throw Error(Errc::precondition, "retrieval pool is empty");
  if (queries.rows() > 0 && queries.dim() != pool.dim())
    throw Error(Errc::precondition, "query dim " + std::to_string(queries.dim()) + " differs from pool dim " +
                                        std::to_string(pool.dim()));
  std::vector<std::vector<std::string>> out(queries.rows());
  parallel_for(queries.rows(), [&](std::size_t q) {
    const std::string& qid = queries.ids()[q];
    std::vector<std::pair<double, std::size_t>> cand;
    cand.reserve(pool.rows());
    for (std::size_t j = 0; j < pool.rows(); ++j)
      if (pool.ids()[j] != qid) cand.emplace_back(cosine(queries.row(q), pool.row(j)), j);
    if (topk > cand.size())
      throw Error(Errc::precondition, "topk = " + std::to_string(topk) + " exceeds the " + std::to_string(cand.size()) +
                                          " candidates for query '" + qid + "'");
    const auto better = [&](const auto& a, const auto& b) {
      if (a.first != b.first) return a.first > b.first;
      return pool.ids()[a.second] < pool.ids()[b.second];
    };
    std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(topk), cand.end(), better);
    for (std::size_t t = 0; t < topk; ++t) out[q].push_back(pool.ids()[cand[t].second]);
  });
  return out;
}

inline constexpr std::string_view kIclHeader =
    "Below is an instruction that describes a task. Write a response that appropriately completes the request.";

struct Demonstration {
  std::string instruction;
  std::string response;
};

/// Header, blank line, one Instruction/Response block per demonstration, then
/// the query with nothing after its Response marker.
inline std::string assemble_icl_prompt(std::string_view query, const std::vector<Demonstration>& demos) {
  std::string out(kIclHeader);
  out += "\n\n";
  for (const auto& d : demos) {
    out += "### Instruction:\n" + d.instruction + "\n\n";
    out += "### Response:\n" + d.response + "\n\n";
  }
  out += "### Instruction:\n";
  out += query;
  out += "\n\n### Response:\n";
  return out;
}

inline std::string assemble_icl_prompt(const Instruction& query, const std::vector<Demonstration>& demos) {
  return assemble_icl_prompt(std::string_view(query.text), demos);
}

/// For every size s, k-means with k = s and its per-cluster representatives.
inline std::map<std::size_t, std::vector<std::string>> tiny_benchmark(const EmbeddingMatrix& m,
                                                                      const std::vector<std::size_t>& sizes,
                                                                      std::uint64_t seed, const KMeansOptions& opt = {}) {
  std::map<std::size_t, std::vector<std::string>> out;
  for (std::size_t s : sizes) out[s] = select_for_tuning(m, s, seed, opt).chosen_ids;
  return out;
}

// ---------------------------------------------------------------------------
// Scores

class ScoreVector {
 public:
  ScoreVector() = default;
  ScoreVector(std::vector<std::string> ids, std::vector<double> scores) : ids_(std::move(ids)), scores_(std::move(scores)) {
    if (ids_.size() != scores_.size()) throw Error(Errc::precondition, "score ids and values differ in length");
    for (std::size_t i = 0; i < ids_.size(); ++i) {
      if (!std::isfinite(scores_[i])) throw Error(Errc::numeric, "score for '" + ids_[i] + "' is not finite");
      if (!index_.emplace(ids_[i], i).second) throw Error(Errc::conflict, "duplicate score id '" + ids_[i] + "'");
      total_ += scores_[i];
    }
  }

  std::size_t size() const { return ids_.size(); }
  const std::vector<std::string>& ids() const { return ids_; }
  const std::vector<double>& scores() const { return scores_; }
  bool contains(const std::string& id) const { return index_.count(id) > 0; }
  double at(const std::string& id) const {
    auto it = index_.find(id);
    if (it == index_.end()) throw Error(Errc::not_found, "no score for id '" + id + "'");
    return scores_[it->second];
  }
  double mean() const {
    if (ids_.empty()) throw Error(Errc::precondition, "mean of an empty score vector");
    return total_ / static_cast<double>(ids_.size());
  }

 private:
  std::vector<std::string> ids_;
  std::vector<double> scores_;
  std::map<std::string, std::size_t> index_;
  double total_ = 0.0;
};

// CSV "id,score"; a leading header row with a non-numeric score is skipped.
inline ScoreVector parse_scores(std::istream& in, const std::string& name = "<stream>") {
  std::vector<std::string> ids;
  std::vector<double> values;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty()) continue;
    const auto comma = line.rfind(',');
    if (comma == std::string::npos)
      throw Error(Errc::parse, name + ": line " + std::to_string(line_no) + ": expected id,score");
    const std::string id = trim(std::string_view(line).substr(0, comma));
    const std::string field = trim(std::string_view(line).substr(comma + 1));
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), v);
    if (ec != std::errc() || ptr != field.data() + field.size()) {
      if (ids.empty() && line_no == 1) continue;
      throw Error(Errc::parse, name + ": line " + std::to_string(line_no) + ": bad score '" + field + "'");
    }
    ids.push_back(id);
    values.push_back(v);
  }
  return ScoreVector(std::move(ids), std::move(values));
}

inline ScoreVector load_scores(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::io, "cannot open score file '" + path + "'");
  return parse_scores(in, path);
}

/// |mean(subset) - mean(all)| in percentage points (scores on a 0..1 scale).
inline double estimation_error(const ScoreVector& full, const std::vector<std::string>& subset) {
  if (subset.empty()) throw Error(Errc::precondition, "estimation error of an empty subset");
  double s = 0.0;
  for (const auto& id : subset) s += full.at(id);
  return std::abs(s / static_cast<double>(subset.size()) - full.mean()) * 100.0;
}

enum class TinyStrategy { embedding, random };

struct StudyResult {
  std::vector<std::size_t> sizes;
  std::size_t runs = 0;
  std::vector<double> embedding_mean;  // per size
  std::vector<double> random_mean;     // per size
};

inline std::vector<std::string> random_subset(const std::vector<std::string>& ids, std::size_t s, std::uint64_t seed) {
  if (s > ids.size()) throw Error(Errc::precondition, "subset larger than the population");
  std::vector<std::size_t> idx(ids.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  Rng rng(seed);
  // Partial Fisher-Yates: the first s slots are the sample.
  for (std::size_t i = 0; i < s; ++i) std::swap(idx[i], idx[i + rng.uniform_index(ids.size() - i)]);
  std::vector<std::string> out;
  out.reserve(s);
  for (std::size_t i = 0; i < s; ++i) out.push_back(ids[idx[i]]);
  return out;
}

/// Mean estimation error per size over re-seeded runs, for cluster-center
/// selection and uniform random selection of the same size.
inline StudyResult tiny_benchmark_study(const EmbeddingMatrix& m, const ScoreVector& scores,
                                        const std::vector<std::size_t>& sizes, std::size_t runs, std::uint64_t seed,
                                        const KMeansOptions& opt = {}) {
  if (runs == 0) throw Error(Errc::precondition, "runs must be positive");
  for (const auto& id : m.ids())
    if (!scores.contains(id)) throw Error(Errc::not_found, "no score for id '" + id + "'");
  for (std::size_t s : sizes)
    if (s == 0 || s > m.rows()) throw Error(Errc::precondition, "tiny benchmark size " + std::to_string(s) + " is out of range");
  // The full-set mean is over the evaluated split.
  std::vector<double> v;
  v.reserve(m.rows());
  for (const auto& id : m.ids()) v.push_back(scores.at(id));
  const ScoreVector split(m.ids(), std::move(v));

  StudyResult r{sizes, runs, std::vector<double>(sizes.size(), 0.0), std::vector<double>(sizes.size(), 0.0)};
  const std::size_t cells = runs * sizes.size();
  std::vector<double> emb(cells), rnd(cells);
  parallel_for(cells, [&](std::size_t cell) {
    const std::size_t run = cell / sizes.size(), si = cell % sizes.size();
    const std::uint64_t run_seed = derive_seed(seed, run);
    emb[cell] = estimation_error(split, select_for_tuning(m, sizes[si], derive_seed(run_seed, 2 * si), opt).chosen_ids);
    rnd[cell] = estimation_error(split, random_subset(m.ids(), sizes[si], derive_seed(run_seed, 2 * si + 1)));
  });
  for (std::size_t cell = 0; cell < cells; ++cell) {
    r.embedding_mean[cell % sizes.size()] += emb[cell];
    r.random_mean[cell % sizes.size()] += rnd[cell];
  }
  for (std::size_t si = 0; si < sizes.size(); ++si) {
    r.embedding_mean[si] /= static_cast<double>(runs);
    r.random_mean[si] /= static_cast<double>(runs);
  }
  return r;
}

// ---------------------------------------------------------------------------
// Cross-dataset task correlation

/// Mean over d1 rows of the best cosine into d2. With exclude_self_match a
/// d2 row with the same id as the d1 row is skipped.
inline double dataset_correlation(const EmbeddingMatrix& d1, const EmbeddingMatrix& d2, bool exclude_self_match) {
  if (d1.rows() == 0) throw Error(Errc::precondition, "first dataset is empty");
  if (d2.rows() == 0) throw Error(Errc::precondition, "second dataset is empty");
  if (d1.dim() != d2.dim()) throw Error(Errc::precondition, "datasets differ in dimension");
  std::vector<double> best(d1.rows());
  parallel_for(d1.rows(), [&](std::size_t i) {
    double b = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < d2.rows(); ++j) {
      if (exclude_self_match && d1.ids()[i] == d2.ids()[j]) continue;
      b = std::max(b, cosine(d1.row(i), d2.row(j)));
    }
    if (b == -std::numeric_limits<double>::infinity())
      throw Error(Errc::precondition, "no candidate left for '" + d1.ids()[i] + "' after excluding its self-match");
    best[i] = b;
  });
  double s = 0.0;
  for (double b : best) s += b;
  return s / static_cast<double>(d1.rows());
}

struct NamedMatrix {
  std::string name;
  std::string source;  // file path; equal sources mean the same dataset
  EmbeddingMatrix matrix;
};

struct CorrelationMatrix {
  std::vector<std::string> datasets;
  std::vector<std::vector<double>> values;  // values[p][q] = corr(p -> q)
};

/// Pairwise dataset correlations. Without an explicit flag, self-matches are
/// excluded exactly when both sides come from the same source.
inline CorrelationMatrix correlation_matrix(const std::vector<NamedMatrix>& sets,
                                            std::optional<bool> exclude_self_match = std::nullopt) {
  CorrelationMatrix c;
  for (const auto& s : sets) c.datasets.push_back(s.name);
  c.values.assign(sets.size(), std::vector<double>(sets.size(), 0.0));
  for (std::size_t p = 0; p < sets.size(); ++p)
    for (std::size_t q = 0; q < sets.size(); ++q) {
      const bool exclude = exclude_self_match.value_or(sets[p].source == sets[q].source);
      c.values[p][q] = dataset_correlation(sets[p].matrix, sets[q].matrix, exclude);
    }
  return c;
}

inline std::string correlation_csv(const CorrelationMatrix& c) {
  std::string out = "dataset";
  for (const auto& d : c.datasets) out += ',' + csv_escape(d);
  out += '\n';
  for (std::size_t p = 0; p < c.datasets.size(); ++p) {
    out += csv_escape(c.datasets[p]);
    for (double v : c.values[p]) out += ',' + format_real(v);
    out += '\n';
  }
  return out;
}

inline nlohmann::ordered_json to_json(const CorrelationMatrix& c) {
  nlohmann::ordered_json j;
  j["datasets"] = c.datasets;
  j["matrix"] = c.values;
  return j;
}

inline std::string id_list_csv(const std::vector<std::string>& ids) {
  std::string out = "id\n";
  for (const auto& id : ids) out += csv_escape(id) + '\n';
  return out;
}

}  // namespace ieb

#endif  // IEB_DOWNSTREAM_HPP
