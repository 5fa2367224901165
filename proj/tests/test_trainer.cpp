#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "ieb/trainer.hpp"
#include "oracles.hpp"
#include "synthetic.hpp"

namespace {

using ieb::DenseRows;
using ieb::ProjectionHead;

DenseRows rows(std::size_t dim, std::vector<double> v) { return DenseRows(dim, std::move(v)); }

TEST(InfoNce, OrthogonalPairsClosedForm) {
  const auto a = rows(2, {1, 0, 0, 1});
  const auto loss = ieb::infonce_loss(a, a, DenseRows(2), 0.05);
  const double expected = std::log1p(std::exp(-20.0));
  EXPECT_NEAR(loss.per_instance[0], expected, 1e-12);
  EXPECT_NEAR(loss.per_instance[1], expected, 1e-12);
  EXPECT_NEAR(loss.loss, expected, 1e-12);
  EXPECT_NEAR(loss.loss, std::exp(-20.0) - 0.5 * std::exp(-40.0), 1e-24);
}

TEST(InfoNce, EqualHardNegativeGivesLogTwo) {
  const auto a = rows(2, {1, 0, 0, 1});
  const auto loss = ieb::infonce_loss(a, a, rows(2, {1, 0}), 0.05);
  EXPECT_NEAR(loss.per_instance[0], std::log(2.0 + std::exp(-20.0)), 1e-12);
  EXPECT_NEAR(loss.per_instance[0], 0.6931, 1e-4);
  EXPECT_NEAR(loss.per_instance[1], std::log1p(2 * std::exp(-20.0)), 1e-12);
}

TEST(InfoNce, SingletonBatchIsExactlyZero) {
  const auto a = rows(3, {0.6, 0.8, 0});
  const auto p = rows(3, {0, 0.6, 0.8});
  EXPECT_EQ(ieb::infonce_loss(a, p, DenseRows(3), 0.05).loss, 0.0);
}

TEST(InfoNce, NonNegativeAndMatchesOracle) {
  for (std::size_t t = 0; t < 40; ++t) {
    const auto c = synth::gradient_case(t, 7);
    const ProjectionHead id = ProjectionHead::identity(c.anchors.dim);
    const double lib = ieb::batch_loss(c.anchors, c.positives, c.negatives, id, c.tau);
    const auto ref = oracle::head_loss(c.anchors, c.positives, c.negatives, id, c.tau);
    EXPECT_GE(lib, 0.0);
    EXPECT_NEAR(lib, static_cast<double>(ref), 1e-10 * std::max(1.0, lib));
  }
}

TEST(InfoNce, Errors) {
  const auto a = rows(2, {1, 0});
  EXPECT_THROW(ieb::infonce_loss(DenseRows(2), DenseRows(2), DenseRows(2), 0.05), ieb::Error);
  EXPECT_THROW(ieb::infonce_loss(a, a, DenseRows(2), 0.0), ieb::Error);
  EXPECT_THROW(ieb::infonce_loss(a, rows(2, {1, 0, 0, 1}), DenseRows(2), 0.05), ieb::Error);
  try {
    ieb::infonce_loss(rows(2, {NAN, 0}), a, DenseRows(2), 0.05);
    FAIL();
  } catch (const ieb::Error& e) {
    EXPECT_EQ(e.code(), ieb::Errc::numeric);
  }
}

TEST(Gradient, MatchesFiniteDifferencesOver50Configurations) {
  double worst = 0.0;
  for (std::size_t t = 0; t < 50; ++t) {
    const auto c = synth::gradient_case(t);
    const auto g = ieb::loss_gradient(c.anchors, c.positives, c.negatives, c.head, c.tau);
    const auto fd = oracle::finite_difference(c.anchors, c.positives, c.negatives, c.head, c.tau);
    const double err = oracle::relative_error(g.gradient, fd);
    worst = std::max(worst, err);
    EXPECT_LE(err, 1e-4) << "case " << t;
    EXPECT_NEAR(g.loss, static_cast<double>(oracle::head_loss(c.anchors, c.positives, c.negatives, c.head, c.tau)),
                1e-10 * std::max(1.0, g.loss));
  }
  RecordProperty("worst_relative_error", std::to_string(worst));
}

TEST(Gradient, SymmetricBatchIsStationary) {
  // Anchors equal their positives and pairs are mutually orthogonal.
  const auto a = rows(4, {1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1});
  const auto g = ieb::loss_gradient(a, a, DenseRows(4), ProjectionHead::identity(4), 0.05);
  double norm = 0.0;
  for (double v : g.gradient.weight) norm += v * v;
  EXPECT_LT(std::sqrt(norm), 1e-6);
}

TEST(Gradient, TemperatureScalesLogits) {
  for (std::size_t t = 0; t < 10; ++t) {
    const auto c = synth::gradient_case(t, 55);
    const auto pa = ieb::detail::project_rows(c.head, c.anchors);
    const auto pp = ieb::detail::project_rows(c.head, c.positives);
    const auto pn = ieb::detail::project_rows(c.head, c.negatives);
    const std::size_t n = c.anchors.count(), cols = n + c.negatives.count();
    for (double scale : {0.5, 3.0}) {
      const double tau = c.tau * scale;
      DenseRows logits(cols);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < cols; ++j)
          logits.data.push_back(ieb::dot(pa.h.row(i), j < n ? pp.h.row(j) : pn.h.row(j - n)) / (c.tau * scale));
      const auto g = ieb::loss_gradient(c.anchors, c.positives, c.negatives, c.head, tau);
      EXPECT_NEAR(g.loss, ieb::infonce_from_logits(logits).loss, 1e-12 * std::max(1.0, g.loss));
      const auto fd = oracle::finite_difference(c.anchors, c.positives, c.negatives, c.head, tau);
      EXPECT_LE(oracle::relative_error(g.gradient, fd), 1e-4);
    }
  }
}

ieb::EmbeddingMatrix toy_embeddings() {
  const auto b = synth::gaussian_blobs(4, 6, 8, 0.3, 21);
  std::vector<double> v = b.matrix.values();
  ieb::EmbeddingMatrix m(b.matrix.ids(), 8, v);
  for (std::size_t i = 0; i < m.rows(); ++i) ieb::normalize_row(m.row(i));
  return m;
}

std::vector<ieb::TriplePair> toy_pairs() {
  std::vector<ieb::TriplePair> pairs;
  for (std::size_t c = 0; c < 4; ++c)
    for (std::size_t i = 0; i < 6; ++i) {
      const auto id = [&](std::size_t cc, std::size_t ii) { return "b" + std::to_string(cc) + "_" + std::to_string(ii); };
      pairs.push_back({id(c, i), id(c, (i + 1) % 6), id((c + 1) % 4, i)});
    }
  return pairs;
}

ieb::TrainConfig toy_config() {
  ieb::TrainConfig cfg;
  cfg.learning_rate = 0.2;
  cfg.batch_size = 4;
  cfg.temperature = 0.2;
  cfg.seed = 3;
  return cfg;
}

TEST(Training, ZeroEpochsReturnsInitialization) {
  const auto m = toy_embeddings();
  auto cfg = toy_config();
  cfg.epochs = 0;
  const auto r = ieb::train_head(m, toy_pairs(), cfg);
  EXPECT_EQ(r.head, ProjectionHead::identity(8));
  EXPECT_TRUE(r.loss_trace.empty());
  cfg.dim_out = 4;
  cfg.bias = true;
  cfg.activation = ieb::Activation::tanh;
  const auto r2 = ieb::train_head(m, toy_pairs(), cfg);
  EXPECT_EQ(r2.head, ieb::initial_head(8, cfg));
  EXPECT_EQ(r2.head.bias, std::vector<double>(4, 0.0));
}

TEST(Training, DeterministicUnderSeed) {
  const auto m = toy_embeddings();
  auto cfg = toy_config();
  cfg.epochs = 3;
  const auto a = ieb::train_head(m, toy_pairs(), cfg);
  const auto b = ieb::train_head(m, toy_pairs(), cfg);
  EXPECT_EQ(a.loss_trace, b.loss_trace);
  EXPECT_EQ(a.head, b.head);
  cfg.seed = 4;
  EXPECT_NE(ieb::train_head(m, toy_pairs(), cfg).loss_trace, a.loss_trace);
}

TEST(Training, LossDecreasesOnSeparableToy) {
  const auto m = toy_embeddings();
  auto cfg = toy_config();
  cfg.epochs = 20;
  const auto r = ieb::train_head(m, toy_pairs(), cfg);
  const std::size_t steps = r.loss_trace.size() / cfg.epochs;
  ASSERT_EQ(steps, 6u);
  double first = 0, last = 0;
  for (std::size_t i = 0; i < steps; ++i) {
    first += r.loss_trace[i];
    last += r.loss_trace[r.loss_trace.size() - steps + i];
  }
  EXPECT_LT(last, first);
}

TEST(Training, SyntheticCorpusImprovesOverRawEmbeddings) {
  const auto o = synth::efficacy_run(1);
  EXPECT_GT(o.trained_ari, o.baseline_ari);
  EXPECT_LT(o.last_loss, o.first_loss);
}

TEST(Training, Preconditions) {
  const auto m = toy_embeddings();
  auto cfg = toy_config();
  cfg.learning_rate = 0;
  EXPECT_THROW(ieb::train_head(m, toy_pairs(), cfg), ieb::Error);
  cfg = toy_config();
  cfg.batch_size = 1;
  cfg.use_hard_negatives = false;
  EXPECT_THROW(ieb::train_head(m, toy_pairs(), cfg), ieb::Error);
  cfg = toy_config();
  try {
    ieb::train_head(m, {{"b0_0", "ghost", std::nullopt}}, cfg);
    FAIL();
  } catch (const ieb::Error& e) {
    EXPECT_EQ(e.code(), ieb::Errc::not_found);
    EXPECT_NE(std::string(e.what()).find("ghost"), std::string::npos);
  }
}

TEST(ApplyHead, IdentityPreservesRows) {
  const auto m = toy_embeddings();
  const auto out = ieb::apply_head(ProjectionHead::identity(8), m);
  EXPECT_EQ(out.ids(), m.ids());
  for (std::size_t i = 0; i < m.values().size(); ++i) EXPECT_NEAR(out.values()[i], m.values()[i], 1e-12);
}

TEST(ApplyHead, ZeroHeadIsDomainError) {
  ProjectionHead zero = ProjectionHead::identity(8);
  std::fill(zero.weight.begin(), zero.weight.end(), 0.0);
  try {
    ieb::apply_head(zero, toy_embeddings());
    FAIL();
  } catch (const ieb::Error& e) {
    EXPECT_EQ(e.code(), ieb::Errc::domain);
  }
}

TEST(ApplyHead, ShapeAndUnitRows) {
  const auto base = synth::gaussian_blobs(2, 5, 16, 0.2, 1).matrix;
  auto head = ProjectionHead::random(16, 8, 9);
  head.activation = ieb::Activation::tanh;
  const auto out = ieb::apply_head(head, base);
  EXPECT_EQ(out.dim(), 8u);
  EXPECT_EQ(out.rows(), 10u);
  for (std::size_t i = 0; i < out.rows(); ++i) EXPECT_NEAR(ieb::norm2(out.row(i)), 1.0, 1e-12);
  EXPECT_THROW(ieb::apply_head(head, toy_embeddings()), ieb::Error);
}

TEST(Checkpoint, RoundTripAtFloatPrecision) {
  auto head = ProjectionHead::random(6, 3, 4);
  head.activation = ieb::Activation::tanh;
  head.bias = {0.25, -0.5, 1.0};
  for (auto& w : head.weight) w = static_cast<float>(w);
  const auto bytes = ieb::encode_head(head);
  EXPECT_EQ(bytes.substr(0, 4), "IEBH");
  EXPECT_EQ(bytes.size(), 4 + 5 * 4 + (18 + 3) * 4u);
  EXPECT_EQ(ieb::decode_head(bytes), head);

  const auto path = (std::filesystem::path(testing::TempDir()) / "head.iebh").string();
  ieb::write_head(head, path);
  EXPECT_EQ(ieb::read_head(path), head);

  EXPECT_THROW(ieb::decode_head(bytes.substr(0, bytes.size() - 2)), ieb::Error);
  EXPECT_THROW(ieb::decode_head(bytes + "z"), ieb::Error);
  std::string bad = bytes;
  bad[16] = 7;  // activation code
  EXPECT_THROW(ieb::decode_head(bad), ieb::Error);
}

TEST(Checkpoint, LossTraceCsv) {
  EXPECT_EQ(ieb::loss_trace_csv({0.5, 0.25}), "step,loss\n0,0.5\n1,0.25\n");
}

}  // namespace
