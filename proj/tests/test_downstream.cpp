#include <gtest/gtest.h>

#include <algorithm>
#include <sstream>

#include "ieb/downstream.hpp"
#include "oracles.hpp"
#include "synthetic.hpp"

namespace {

using ieb::EmbeddingMatrix;

EmbeddingMatrix points(const std::vector<std::pair<double, double>>& xy, const std::string& prefix = "p") {
  std::vector<std::string> ids;
  std::vector<double> v;
  for (std::size_t i = 0; i < xy.size(); ++i) {
    ids.push_back(prefix + std::to_string(i));
    v.push_back(xy[i].first);
    v.push_back(xy[i].second);
  }
  return EmbeddingMatrix(ids, 2, v);
}

TEST(Selection, KEqualsNSelectsEverything) {
  const auto b = synth::gaussian_blobs(3, 4, 5, 0.3, 2);
  auto chosen = ieb::select_for_tuning(b.matrix, 12, 1).chosen_ids;
  std::sort(chosen.begin(), chosen.end());
  auto all = b.matrix.ids();
  std::sort(all.begin(), all.end());
  EXPECT_EQ(chosen, all);
}

TEST(Selection, TriplesPickTheirMiddlePoint) {
  std::vector<std::pair<double, double>> xy;
  for (auto [cx, cy] : {std::pair{0.0, 0.0}, {10.0, 0.0}, {0.0, 10.0}})
    for (double dx : {-1.0, 0.0, 1.5}) xy.emplace_back(cx + dx, cy);
  const auto m = points(xy);
  const auto r = ieb::select_for_tuning(m, 3, 5);
  auto chosen = r.chosen_ids;
  std::sort(chosen.begin(), chosen.end());
  EXPECT_EQ(chosen, (std::vector<std::string>{"p1", "p4", "p7"}));
  EXPECT_EQ(ieb::select_for_tuning(m, 3, 5).chosen_ids, r.chosen_ids);
}

TEST(Selection, RepresentativeIsExhaustiveArgmin) {
  const auto b = synth::gaussian_blobs(6, 12, 4, 0.5, 8);
  const auto r = ieb::select_for_tuning(b.matrix, 6, 2);
  ASSERT_EQ(r.chosen_ids.size(), 6u);
  for (std::size_t c = 0; c < 6; ++c) {
    std::string best;
    double best_d = INFINITY;
    for (std::size_t i = 0; i < b.matrix.rows(); ++i) {
      if (r.clusters.labels[i] != c) continue;
      double d = 0;
      for (std::size_t j = 0; j < 4; ++j) d += std::pow(b.matrix.row(i)[j] - r.clusters.center(c)[j], 2);
      if (d < best_d || (d == best_d && b.matrix.ids()[i] < best)) best_d = d, best = b.matrix.ids()[i];
    }
    EXPECT_EQ(r.chosen_ids[c], best);
  }
}

TEST(Selection, TiesGoToLowestId) {
  // Two members equidistant from their center.
  const EmbeddingMatrix m({"z", "a", "far"}, 1, {-1, 1, 100});
  ieb::ClusterAssignment a;
  a.ids = m.ids();
  a.labels = {0, 0, 1};
  a.k = 2;
  a.dim = 1;
  a.centers = {0, 100};
  EXPECT_EQ(ieb::nearest_to_centers(m, a), (std::vector<std::string>{"a", "far"}));
}

TEST(TinyBenchmark, TwoBlobsGiveOnePerBlob) {
  const auto m = points({{0, 0}, {0.1, 0}, {0, 0.1}, {9, 9}, {9.1, 9}, {9, 9.1}});
  const auto t = ieb::tiny_benchmark(m, {2, 6}, 3);
  ASSERT_EQ(t.at(2).size(), 2u);
  const auto first = std::stoi(t.at(2)[0].substr(1)), second = std::stoi(t.at(2)[1].substr(1));
  EXPECT_NE(first < 3, second < 3);
  EXPECT_EQ(t.at(6).size(), 6u);
  EXPECT_EQ(ieb::tiny_benchmark(m, {2, 6}, 3), t);
}

std::vector<std::string> oracle_topk(const EmbeddingMatrix& q, std::size_t qi, const EmbeddingMatrix& pool, std::size_t k) {
  std::vector<std::pair<long double, std::string>> all;
  const std::vector<double> qv(q.row(qi).begin(), q.row(qi).end());
  for (std::size_t j = 0; j < pool.rows(); ++j) {
    if (pool.ids()[j] == q.ids()[qi]) continue;
    all.emplace_back(oracle::cosine_distance(qv, {pool.row(j).begin(), pool.row(j).end()}), pool.ids()[j]);
  }
  std::sort(all.begin(), all.end());
  std::vector<std::string> out;
  for (std::size_t t = 0; t < k; ++t) out.push_back(all[t].second);
  return out;
}

TEST(Retrieval, AgreesWithExhaustiveScan) {
  ieb::Rng rng(12);
  for (int t = 0; t < 100; ++t) {
    const std::size_t dim = 2 + rng.uniform_index(5), nq = 1 + rng.uniform_index(5), np = 3 + rng.uniform_index(10);
    std::vector<std::string> qids, pids;
    std::vector<double> qv, pv;
    for (std::size_t i = 0; i < np; ++i) {
      pids.push_back("d" + std::to_string(i));
      // Small integer coordinates make exact cosine ties common.
      for (std::size_t j = 0; j < dim; ++j) pv.push_back(static_cast<double>(rng.uniform_index(3)) + (j == 0));
    }
    for (std::size_t i = 0; i < nq; ++i) {
      qids.push_back(rng.uniform01() < 0.5 ? "d" + std::to_string(i) : "q" + std::to_string(i));
      for (std::size_t j = 0; j < dim; ++j) qv.push_back(rng.normal());
    }
    const EmbeddingMatrix q(qids, dim, qv), pool(pids, dim, pv);
    const std::size_t k = 1 + rng.uniform_index(np - 1);
    const auto got = ieb::retrieve_demonstrations(q, pool, k);
    for (std::size_t i = 0; i < nq; ++i) {
      const auto want = oracle_topk(q, i, pool, k);
      ASSERT_EQ(got[i].size(), k);
      // Near-ties may resolve differently between double and long double.
      for (std::size_t r = 0; r < k; ++r) {
        const auto row = [&](const std::string& id) { return pool.row(pool.row_of(id)); };
        EXPECT_NEAR(ieb::cosine(q.row(i), row(got[i][r])), ieb::cosine(q.row(i), row(want[r])), 1e-12);
      }
    }
  }
}

TEST(Retrieval, DuplicateFirstAndSelfExcluded) {
  const auto pool = points({{1, 0}, {0, 1}, {1, 1}, {2, 0.001}});
  const EmbeddingMatrix q({"p0", "x"}, 2, {1, 0, 1, 0});
  const auto r = ieb::retrieve_demonstrations(q, pool, 2);
  EXPECT_EQ(r[0], (std::vector<std::string>{"p3", "p2"}));
  EXPECT_EQ(r[1], (std::vector<std::string>{"p0", "p3"}));
  const auto full = ieb::retrieve_demonstrations(q, pool, 3);
  EXPECT_EQ(full[0], (std::vector<std::string>{"p3", "p2", "p1"}));
  EXPECT_THROW(ieb::retrieve_demonstrations(q, pool, 4), ieb::Error);
  EXPECT_THROW(ieb::retrieve_demonstrations(q, EmbeddingMatrix({}, 2, {}), 1), ieb::Error);
}

TEST(IclPrompt, ExactBytes) {
  const std::string header =
      "Below is an instruction that describes a task. Write a response that appropriately completes the request.\n\n";
  EXPECT_EQ(ieb::assemble_icl_prompt("Name a fruit.", {}), header + "### Instruction:\nName a fruit.\n\n### Response:\n");
  EXPECT_EQ(ieb::assemble_icl_prompt("Q", {{"I1", "R1"}, {"I2", "R2"}}),
            header +
                "### Instruction:\nI1\n\n### Response:\nR1\n\n"
                "### Instruction:\nI2\n\n### Response:\nR2\n\n"
                "### Instruction:\nQ\n\n### Response:\n");
  ieb::Instruction ins;
  ins.id = "x";
  ins.text = "Q";
  EXPECT_EQ(ieb::assemble_icl_prompt(ins, {{"I1", "R1"}}), ieb::assemble_icl_prompt("Q", {{"I1", "R1"}}));
}

ieb::ScoreVector scores(const std::vector<double>& v) {
  std::vector<std::string> ids;
  for (std::size_t i = 0; i < v.size(); ++i) ids.push_back("s" + std::to_string(i));
  return ieb::ScoreVector(ids, v);
}

TEST(EstimationError, Examples) {
  EXPECT_DOUBLE_EQ(ieb::estimation_error(scores({1, 0, 1, 0}), {"s0", "s1"}), 0.0);
  EXPECT_DOUBLE_EQ(ieb::estimation_error(scores({0.3, 0.9, 0.1}), {"s0", "s1", "s2"}), 0.0);
  EXPECT_DOUBLE_EQ(ieb::estimation_error(scores({1, 1, 0, 0}), {"s0", "s1"}), 50.0);
  EXPECT_THROW(ieb::estimation_error(scores({1}), {}), ieb::Error);
  EXPECT_THROW(ieb::estimation_error(scores({1}), {"nope"}), ieb::Error);
}

TEST(EstimationError, TranslationCovariant) {
  ieb::Rng rng(3);
  for (int t = 0; t < 50; ++t) {
    std::vector<double> v(10), w(10);
    const double c = rng.normal() * 5;
    for (std::size_t i = 0; i < v.size(); ++i) w[i] = (v[i] = rng.uniform01()) + c;
    const std::vector<std::string> subset{"s1", "s4", "s7"};
    EXPECT_NEAR(ieb::estimation_error(scores(v), subset), ieb::estimation_error(scores(w), subset), 1e-9);
  }
}

TEST(Study, ConstantScoresGiveZero) {
  const auto b = synth::gaussian_blobs(4, 10, 4, 0.2, 6);
  const ieb::ScoreVector flat(b.matrix.ids(), std::vector<double>(b.matrix.rows(), 0.7));
  const auto r = ieb::tiny_benchmark_study(b.matrix, flat, {2, 5}, 5, 1);
  for (std::size_t i = 0; i < 2; ++i) {
    EXPECT_NEAR(r.embedding_mean[i], 0.0, 1e-12);
    EXPECT_NEAR(r.random_mean[i], 0.0, 1e-12);
  }
}

TEST(Study, SingleRunMatchesDirectCalls) {
  const auto b = synth::gaussian_blobs(4, 10, 4, 0.2, 6);
  const auto s = synth::cluster_scores(b, 4, 0.1, 2);
  const auto r = ieb::tiny_benchmark_study(b.matrix, s, {3, 7}, 1, 9);
  const std::uint64_t run_seed = ieb::derive_seed(9, 0);
  for (std::size_t si = 0; si < 2; ++si) {
    const std::size_t size = r.sizes[si];
    const auto emb = ieb::select_for_tuning(b.matrix, size, ieb::derive_seed(run_seed, 2 * si)).chosen_ids;
    const auto rnd = ieb::random_subset(b.matrix.ids(), size, ieb::derive_seed(run_seed, 2 * si + 1));
    EXPECT_DOUBLE_EQ(r.embedding_mean[si], ieb::estimation_error(s, emb));
    EXPECT_DOUBLE_EQ(r.random_mean[si], ieb::estimation_error(s, rnd));
  }
}

TEST(Study, Preconditions) {
  const auto b = synth::gaussian_blobs(2, 3, 2, 0.1, 1);
  const auto s = synth::cluster_scores(b, 2, 0.1, 1);
  EXPECT_THROW(ieb::tiny_benchmark_study(b.matrix, s, {7}, 1, 1), ieb::Error);
  EXPECT_THROW(ieb::tiny_benchmark_study(b.matrix, s, {2}, 0, 1), ieb::Error);
  EXPECT_THROW(ieb::tiny_benchmark_study(b.matrix, scores({1}), {2}, 1, 1), ieb::Error);
}

TEST(RandomSubset, DistinctAndDeterministic) {
  std::vector<std::string> ids;
  for (int i = 0; i < 20; ++i) ids.push_back(std::to_string(i));
  const auto a = ieb::random_subset(ids, 8, 4);
  EXPECT_EQ(std::set<std::string>(a.begin(), a.end()).size(), 8u);
  EXPECT_EQ(ieb::random_subset(ids, 8, 4), a);
  EXPECT_EQ(ieb::random_subset(ids, 20, 4).size(), 20u);
  EXPECT_THROW(ieb::random_subset(ids, 21, 4), ieb::Error);
}

TEST(Scores, CsvParsing) {
  std::istringstream with_header("id,score\na,0.5\nb,1\n\n");
  const auto s = ieb::parse_scores(with_header);
  EXPECT_EQ(s.size(), 2u);
  EXPECT_DOUBLE_EQ(s.at("b"), 1.0);
  EXPECT_DOUBLE_EQ(s.mean(), 0.75);
  std::istringstream bare("a,0.25\n");
  EXPECT_DOUBLE_EQ(ieb::parse_scores(bare).at("a"), 0.25);
  std::istringstream bad("a,0.5\nb,oops\n");
  try {
    ieb::parse_scores(bad, "s.csv");
    FAIL();
  } catch (const ieb::Error& e) {
    EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos);
  }
  std::istringstream dup("a,1\na,2\n");
  EXPECT_THROW(ieb::parse_scores(dup), ieb::Error);
  std::istringstream nan("a,nan\n");
  EXPECT_THROW(ieb::parse_scores(nan), ieb::Error);
}

TEST(Correlation, SelfAndOrthogonal) {
  const auto b = synth::gaussian_blobs(3, 5, 6, 0.3, 4);
  EXPECT_NEAR(ieb::dataset_correlation(b.matrix, b.matrix, false), 1.0, 1e-12);
  const EmbeddingMatrix x({"a", "b"}, 4, {1, 0, 0, 0, 0, 1, 0, 0});
  const EmbeddingMatrix y({"c", "d"}, 4, {0, 0, 1, 0, 0, 0, 0, 1});
  EXPECT_NEAR(ieb::dataset_correlation(x, y, false), 0.0, 1e-15);
}

TEST(Correlation, SubsetIsAsymmetric) {
  const auto d2 = points({{1, 0}, {0, 1}, {-1, -1}}, "x");
  const auto d1 = d2.select({"x0", "x1"});
  EXPECT_NEAR(ieb::dataset_correlation(d1, d2, false), 1.0, 1e-12);
  EXPECT_LT(ieb::dataset_correlation(d2, d1, false), 1.0);
}

TEST(Correlation, ExcludeSelf) {
  const auto d = points({{1, 0}, {1, 1}}, "x");
  EXPECT_NEAR(ieb::dataset_correlation(d, d, true), std::sqrt(0.5), 1e-12);
  const auto one = points({{1, 0}}, "x");
  EXPECT_THROW(ieb::dataset_correlation(one, one, true), ieb::Error);
}

TEST(Correlation, MatrixAutoExclusionAndOutputs) {
  const auto a = points({{1, 0}, {1, 1}}, "a");
  const auto b = points({{0, 1}, {1, 0.5}}, "b");
  const auto c = ieb::correlation_matrix({{"A", "a.iebv", a}, {"B", "b.iebv", b}});
  EXPECT_NEAR(c.values[0][0], std::sqrt(0.5), 1e-12);
  EXPECT_NEAR(c.values[0][1], ieb::dataset_correlation(a, b, false), 1e-15);
  const auto off = ieb::correlation_matrix({{"A", "a.iebv", a}, {"B", "b.iebv", b}}, false);
  EXPECT_NEAR(off.values[0][0], 1.0, 1e-12);
  EXPECT_EQ(ieb::correlation_csv(off).substr(0, 12), "dataset,A,B\n");
  const auto j = ieb::to_json(off);
  EXPECT_EQ(j["datasets"][1], "B");
  EXPECT_EQ(j["matrix"].size(), 2u);
}

TEST(IdList, Csv) { EXPECT_EQ(ieb::id_list_csv({"a", "b,c"}), "id\na\n\"b,c\"\n"); }

}  // namespace
