#include <gtest/gtest.h>

#include <cmath>
#include <cstring>

#include "ieb/embstore.hpp"

namespace {

using ieb::EmbeddingMatrix;

std::string le32(std::uint32_t v) {
  std::string s(4, '\0');
  for (int i = 0; i < 4; ++i) s[static_cast<std::size_t>(i)] = static_cast<char>((v >> (8 * i)) & 0xff);
  return s;
}

std::string lef(float f) {
  std::uint32_t u;
  std::memcpy(&u, &f, 4);
  return le32(u);
}

TEST(Container, BytesMatchLayout) {
  EmbeddingMatrix m({"a", "bc"}, 2, {1.0, 0.0, 0.0, -1.0});
  const std::string expected = std::string("IEBV") + le32(1) + le32(2) + le32(2) + lef(1.0f) + lef(0.0f) + lef(0.0f) +
                               lef(-1.0f) + le32(1) + "a" + le32(2) + "bc";
  EXPECT_EQ(ieb::encode_embeddings(m), expected);
}

TEST(Container, RoundTripPreservesFloat32Values) {
  ieb::Rng rng(4);
  std::vector<std::string> ids;
  std::vector<double> values;
  for (int i = 0; i < 50; ++i) {
    ids.push_back("id-" + std::to_string(i) + (i % 7 == 0 ? "\xc3\xa9" : ""));
    std::vector<double> v(17);
    for (auto& x : v) x = rng.normal();
    ieb::normalize_row(v);
    for (double x : v) values.push_back(static_cast<float>(x));
  }
  const EmbeddingMatrix m(ids, 17, values);
  const std::string bytes = ieb::encode_embeddings(m);
  const auto back = ieb::decode_embeddings(bytes);
  EXPECT_FALSE(back.renormalized);
  EXPECT_EQ(back.matrix, m);
  EXPECT_EQ(ieb::encode_embeddings(back.matrix), bytes);
}

TEST(Container, EmptyCollection) {
  const EmbeddingMatrix m({}, 8, {});
  const auto back = ieb::decode_embeddings(ieb::encode_embeddings(m));
  EXPECT_EQ(back.matrix.rows(), 0u);
  EXPECT_EQ(back.matrix.dim(), 8u);
}

TEST(Container, OffNormRowsAreRenormalizedAndFlagged) {
  const EmbeddingMatrix m({"a", "b"}, 2, {3.0, 4.0, 0.6, 0.8});
  const auto back = ieb::decode_embeddings(ieb::encode_embeddings(m));
  EXPECT_TRUE(back.renormalized);
  EXPECT_EQ(back.renormalized_rows, 1u);
  EXPECT_NEAR(back.matrix.row(0)[0], 0.6, 1e-7);
  EXPECT_NEAR(back.matrix.row(0)[1], 0.8, 1e-7);
}

ieb::Errc decode_code(const std::string& bytes) {
  try {
    ieb::decode_embeddings(bytes, "blob.iebv");
  } catch (const ieb::Error& e) {
    EXPECT_NE(std::string(e.what()).find("blob.iebv"), std::string::npos) << e.what();
    return e.code();
  }
  ADD_FAILURE() << "decode should have failed";
  return ieb::Errc::parse;
}

TEST(Container, RejectsMalformedInput) {
  const EmbeddingMatrix m({"a", "b"}, 2, {1.0, 0.0, 0.0, 1.0});
  const std::string good = ieb::encode_embeddings(m);

  std::string magic = good;
  magic[0] = 'X';
  EXPECT_EQ(decode_code(magic), ieb::Errc::format);

  // Header claims three rows while only two are present.
  std::string truncated = good.substr(0, 8) + le32(3) + good.substr(12);
  EXPECT_EQ(decode_code(truncated), ieb::Errc::format);

  EXPECT_EQ(decode_code(good + "x"), ieb::Errc::format);
  EXPECT_EQ(decode_code(good.substr(0, good.size() - 1)), ieb::Errc::format);
  EXPECT_EQ(decode_code(good.substr(0, 4) + le32(2) + good.substr(8)), ieb::Errc::format);
  EXPECT_EQ(decode_code("IEB"), ieb::Errc::format);

  std::string dup = std::string("IEBV") + le32(1) + le32(2) + le32(1) + lef(1) + lef(1) + le32(1) + "a" + le32(1) + "a";
  EXPECT_THROW(ieb::decode_embeddings(dup), ieb::Error);
}

TEST(Container, MissingFileIsIoError) {
  try {
    ieb::read_embeddings("/nonexistent/x.iebv");
    FAIL();
  } catch (const ieb::Error& e) {
    EXPECT_EQ(e.code(), ieb::Errc::io);
    EXPECT_NE(std::string(e.what()).find("/nonexistent/x.iebv"), std::string::npos);
  }
}

long double oracle_cosine(const std::vector<double>& a, const std::vector<double>& b) {
  long double ab = 0, aa = 0, bb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += static_cast<long double>(a[i]) * b[i];
    aa += static_cast<long double>(a[i]) * a[i];
    bb += static_cast<long double>(b[i]) * b[i];
  }
  return ab / std::sqrt(aa * bb);
}

TEST(Cosine, AgreesWithExtendedPrecisionOracle) {
  ieb::Rng rng(99);
  for (int t = 0; t < 1000; ++t) {
    const std::size_t d = 1 + rng.uniform_index(64);
    std::vector<double> a(d), b(d);
    const double scale = std::pow(10.0, static_cast<double>(rng.uniform_index(7)) - 3.0);
    for (std::size_t i = 0; i < d; ++i) {
      a[i] = rng.normal() * scale;
      b[i] = rng.normal();
    }
    EXPECT_NEAR(ieb::cosine(a, b), static_cast<double>(oracle_cosine(a, b)), 1e-12);
  }
}

TEST(Cosine, EdgeCases) {
  const std::vector<double> x{1, 2, 3}, y{-2, 1, 0}, z{0, 0, 0};
  const std::vector<double> neg{-1, -2, -3};
  EXPECT_NEAR(ieb::cosine(x, x), 1.0, 1e-15);
  EXPECT_NEAR(ieb::cosine(x, y), 0.0, 1e-15);
  EXPECT_NEAR(ieb::cosine(x, neg), -1.0, 1e-15);
  EXPECT_LE(ieb::cosine(x, x), 1.0);
  EXPECT_THROW(ieb::cosine(x, z), ieb::Error);
  EXPECT_THROW(ieb::cosine(x, std::vector<double>{1, 2}), ieb::Error);
}

TEST(Fallback, IdenticalTextsCoincide) {
  ieb::FallbackEmbedderConfig cfg;
  const auto m = ieb::fallback_embed({"a", "b"}, {"Write a poem.", "Write a poem."}, cfg);
  EXPECT_NEAR(ieb::cosine(m.row(0), m.row(1)), 1.0, 1e-12);
  for (std::size_t i = 0; i < m.rows(); ++i) EXPECT_NEAR(ieb::norm2(m.row(i)), 1.0, 1e-12);
}

TEST(Fallback, CaseInsensitive) {
  ieb::FallbackEmbedderConfig cfg;
  EXPECT_EQ(ieb::fallback_vector("HELLO there", cfg), ieb::fallback_vector("hello THERE", cfg));
}

TEST(Fallback, DisjointAlphabetsAreNearOrthogonal) {
  ieb::Rng rng(3);
  ieb::FallbackEmbedderConfig cfg;
  auto word = [&](const char* alphabet, std::size_t n) {
    std::string s;
    for (std::size_t i = 0; i < 40; ++i) s += alphabet[rng.uniform_index(n)];
    return s;
  };
  for (int t = 0; t < 100; ++t) {
    const auto a = ieb::fallback_vector(word("abcdefghijklm", 13), cfg);
    const auto b = ieb::fallback_vector(word("nopqrstuvwxyz", 13), cfg);
    EXPECT_LT(std::abs(ieb::cosine(a, b)), 0.2);
  }
}

TEST(Fallback, SeedChangesProjection) {
  ieb::FallbackEmbedderConfig a, b;
  b.seed = 1;
  EXPECT_NE(ieb::fallback_vector("some text", a), ieb::fallback_vector("some text", b));
}

TEST(Fallback, EmptyCollectionAndPreconditions) {
  ieb::FallbackEmbedderConfig cfg;
  const auto m = ieb::fallback_embed({}, {}, cfg);
  EXPECT_EQ(m.rows(), 0u);
  EXPECT_EQ(m.dim(), 256u);
  EXPECT_THROW(ieb::fallback_embed({"a"}, {""}, cfg), ieb::Error);
  cfg.dim = 4;
  EXPECT_THROW(ieb::fallback_embed({"a"}, {"x"}, cfg), ieb::Error);
  // Texts shorter than the gram length still embed.
  cfg.dim = 16;
  EXPECT_NEAR(ieb::norm2(ieb::fallback_vector("a", cfg)), 1.0, 1e-12);
}

TEST(Matrix, SelectAndLookup) {
  const EmbeddingMatrix m({"a", "b", "c"}, 1, {1, 2, 3});
  const auto s = m.select({"c", "a"});
  EXPECT_EQ(s.values(), (std::vector<double>{3, 1}));
  EXPECT_THROW(m.row_of("zz"), ieb::Error);
  EXPECT_THROW(EmbeddingMatrix({"a", "a"}, 1, {1, 2}), ieb::Error);
  EXPECT_THROW(EmbeddingMatrix({"a"}, 2, {1}), ieb::Error);
}

}  // namespace
