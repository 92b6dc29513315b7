// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>

#include "mmfuse/branches.hpp"
#include "mmfuse/errors.hpp"
#include "mmfuse/gradcheck.hpp"
#include "mmfuse/init.hpp"
#include "oracles.hpp"

using namespace mmfuse;

namespace {

oracle::Vec vec(const Tensor<double>& t) { return oracle::Vec(t.values().begin(), t.values().end()); }

oracle::Gru to_oracle(const GruParams<double>& p) {
  return {vec(p.wz.value), vec(p.uz.value), vec(p.bz.value), vec(p.wr.value), vec(p.ur.value),
          vec(p.br.value), vec(p.wh.value), vec(p.uh.value), vec(p.bh.value)};
}

void jitter(std::vector<Parameter<double>*> params, Rng& rng, double sd = 0.3) {
  std::normal_distribution<double> g(0.0, sd);
  for (auto* p : params)
    for (auto& v : p->value.values()) v += g(rng);
}

Tensor<double> normal(Shape shape, Rng& rng) {
  std::normal_distribution<double> g;
  Tensor<double> t(std::move(shape));
  for (auto& v : t.values()) v = g(rng);
  return t;
}

}  // namespace

TEST(Gru, BidirectionalMatchesOracle) {
  Rng rng(11);
  for (std::size_t steps : {1, 3, 5}) {
    BiGru<double> gru{GruParams<double>::create("f", 4, 3, rng), GruParams<double>::create("b", 4, 3, rng)};
    jitter(gru.fwd.parameters(), rng);
    jitter(gru.bwd.parameters(), rng);
    const Tensor<double> seq = normal({steps, 4}, rng);
    Tape<double> t(false);
    const Tensor<double> out = bigru_encode(t.constant(seq), Mask(steps, true), gru).value();
    std::vector<oracle::Vec> xs(steps);
    for (std::size_t i = 0; i < steps; ++i) xs[i] = oracle::Vec(seq.values().begin() + i * 4, seq.values().begin() + i * 4 + 4);
    const auto want = oracle::bigru(to_oracle(gru.fwd), to_oracle(gru.bwd), xs);
    ASSERT_EQ(out.shape(), (Shape{steps, 6}));
    for (std::size_t i = 0; i < steps; ++i)
      for (std::size_t j = 0; j < 6; ++j) EXPECT_NEAR(out.at(i, j), want[i][j], 1e-12);
  }
}

TEST(Gru, MaskedStepsAreSkipped) {
  Rng rng(12);
  BiGru<double> gru{GruParams<double>::create("f", 2, 2, rng), GruParams<double>::create("b", 2, 2, rng)};
  const Tensor<double> seq = normal({4, 2}, rng);
  Tape<double> t(false);
  const Tensor<double> masked = bigru_encode(t.constant(seq), Mask{true, true, false, false}, gru).value();
  Tensor<double> head({2, 2});
  for (std::size_t i = 0; i < 4; ++i) head[i] = seq[i];
  const Tensor<double> direct = bigru_encode(t.constant(head), Mask{true, true}, gru).value();
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t j = 0; j < 4; ++j) EXPECT_EQ(masked.at(i, j), direct.at(i, j));
  for (std::size_t j = 0; j < 4; ++j) EXPECT_EQ(masked.at(3, j), 0.0);
  EXPECT_THROW(bigru_encode(t.constant(seq), Mask{true}, gru), DimensionError);
}

TEST(Gru, Gradients) {
  Rng rng(13);
  BiGru<double> gru{GruParams<double>::create("f", 3, 2, rng), GruParams<double>::create("b", 3, 2, rng)};
  const Tensor<double> seq = normal({3, 3}, rng);
  auto loss = [&](Tape<double>& t) {
    Var<double> h = bigru_encode(t.constant(seq), Mask{true, true, true}, gru);
    return sum(mul(h, h));
  };
  auto params = gru.fwd.parameters();
  for (auto* p : gru.bwd.parameters()) params.push_back(p);
  const auto r = grad_check(loss, params);
  EXPECT_TRUE(r.passed) << r.failure;
}

TEST(Scse, MatchesOracle) {
  Rng rng(21);
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t h = 2 + trial % 3, w = 3 + trial % 2, c = 8;
    auto p = ScseParams<double>::create("s", c, 4, rng);
    jitter(p.parameters(), rng, 0.2);
    const Tensor<double> z = normal({h, w, c}, rng);
    Tape<double> t(false);
    Var<double> zv = t.constant(z);
    const Tensor<double> out = apply_scse(zv, scse_gates(zv, p)).value();
    const auto want = oracle::scse(vec(z), h, w, c, vec(p.fc1_w.value), vec(p.fc1_b.value), vec(p.fc2_w.value),
                                   vec(p.fc2_b.value), vec(p.sp_w.value), p.sp_b.value[0]);
    ASSERT_EQ(out.size(), want.size());
    for (std::size_t i = 0; i < want.size(); ++i) EXPECT_NEAR(out[i], want[i], 1e-12);
  }
}

TEST(Scse, ZeroInitIsIdentity) {
  Rng rng(22);
  auto p = ScseParams<double>::create("s", 8, 4, rng, true);
  const Tensor<double> z = normal({4, 4, 8}, rng);
  Tape<double> t(false);
  Var<double> zv = t.constant(z);
  EXPECT_EQ(apply_scse(zv, scse_gates(zv, p)).value(), z);
}

TEST(Scse, RatioMustDivideChannels) {
  Rng rng(23);
  EXPECT_THROW(ScseParams<double>::create("s", 6, 4, rng), ConfigError);
}

TEST(Scse, Gradients) {
  Rng rng(24);
  auto p = ScseParams<double>::create("s", 4, 2, rng);
  Parameter<double> z{"z", normal({3, 3, 4}, rng), true};
  auto loss = [&](Tape<double>& t) {
    Var<double> zv = t.param(z);
    Var<double> out = apply_scse(zv, scse_gates(zv, p));
    return sum(mul(out, out));
  };
  auto params = p.parameters();
  params.push_back(&z);
  GradCheckOptions opts;
  opts.seed = 3;
  const auto r = grad_check(loss, params, opts);
  EXPECT_TRUE(r.passed) << r.failure;
}

class ImageFixture : public ::testing::Test {
 protected:
  void SetUp() override {
    Rng rng(31);
    img.input_shape = {8, 8, 3};
    std::size_t cin = 3;
    for (std::size_t cout : {4, 8}) {
      img.backbone.push_back({glorot<double>("k", {3, 3, cin, cout}, 9 * cin, 9 * cout, rng),
                              zeros<double>("b", {cout})});
      cin = cout;
    }
    img.scse = ScseParams<double>::create("s", 8, 4, rng);
  }
  ImageBranch<double> img;
};

TEST_F(ImageFixture, ShapesAndMissingImage) {
  EXPECT_EQ(img.map_shape(), (Shape{2, 2, 8}));
  Tape<double> t(false);
  const auto none = image_branch<double>(t, nullptr, img);
  EXPECT_FALSE(none.gates.has_value());
  for (double v : none.feature.value().values()) EXPECT_EQ(v, 0.0);
  Rng rng(1);
  const Tensor<double> x = normal({8, 8, 3}, rng);
  const auto out = image_branch<double>(t, &x, img);
  EXPECT_EQ(out.feature.shape(), (Shape{8}));
  ASSERT_TRUE(out.gates.has_value());
  EXPECT_EQ(out.gates->spatial.shape(), (Shape{4}));
  const Tensor<double> wrong({4, 4, 3});
  EXPECT_THROW(image_branch<double>(t, &wrong, img), DimensionError);
}

TEST_F(ImageFixture, NoAttentionIsPlainPooling) {
  Rng rng(2);
  const Tensor<double> x = normal({8, 8, 3}, rng);
  Tape<double> t(false);
  const Tensor<double> pooled = image_branch<double>(t, &x, img, false).feature.value();
  const Tensor<double> direct = global_avg_pool(image_backbone(t.constant(x), img)).value();
  EXPECT_EQ(pooled, direct);
}

TEST(TextStream, SeparatorAndTruncation) {
  const std::vector<std::string> cap{"a", "b"}, ocr{"c", "d"};
  EXPECT_EQ(text_stream(cap, ocr, 10), (std::vector<std::string>{"a", "b", "<ocr>", "c", "d"}));
  EXPECT_EQ(text_stream(cap, ocr, 10, false), (std::vector<std::string>{"a", "b"}));
  EXPECT_EQ(text_stream(cap, ocr, 3), (std::vector<std::string>{"a", "b", "<ocr>"}));
  EXPECT_EQ(text_stream(cap, ocr, 1), (std::vector<std::string>{"a"}));
  EXPECT_EQ(text_stream({}, ocr, 10), (std::vector<std::string>{"<ocr>", "c", "d"}));
  EXPECT_TRUE(text_stream({}, {}, 10).empty());
  EXPECT_TRUE(text_stream({}, ocr, 10, false).empty());
}

class TextFixture : public ::testing::Test {
 protected:
  void SetUp() override {
    Rng rng(41);
    table = EmbeddingTable<double>::create(Vocab::build({{"shot", "dose"}}, 16), 6, 32, rng);
    tags.w = glorot<double>("hw", 5, 6, rng);
    tags.b = zeros<double>("hb", {5});
    tags.seta = SeTaParams<double>::create("hs", 5, 4, Tensor<double>({5}, 0.2), rng);
    text.gru = {GruParams<double>::create("f", 6, 3, rng), GruParams<double>::create("b", 6, 3, rng)};
    text.seta = SeTaParams<double>::create("ts", 6, 4, std::nullopt, rng);
  }
  std::vector<WordRef> refs(const std::vector<std::string>& words) const {
    std::vector<WordRef> out;
    for (const auto& w : words) out.push_back(table.lookup(w));
    return out;
  }
  EmbeddingTable<double> table;
  HashtagBranch<double> tags;
  TextBranch<double> text;
};

TEST_F(TextFixture, EmptyInputsGiveZeroFeatures) {
  Tape<double> t(false);
  const auto h = hashtag_branch<double>(t, {}, table, tags);
  EXPECT_EQ(h.feature.shape(), (Shape{5}));
  EXPECT_FALSE(h.attention.has_value());
  for (double v : h.feature.value().values()) EXPECT_EQ(v, 0.0);
  const auto x = text_branch<double>(t, {}, table, text);
  EXPECT_EQ(x.feature.shape(), (Shape{6}));
  for (double v : x.feature.value().values()) EXPECT_EQ(v, 0.0);
}

TEST_F(TextFixture, HashtagTruncationAndUniformMode) {
  tags.max_hashtags = 2;
  const auto r = refs({"bigpharma", "vaccinetruth", "sunset"});
  Tape<double> t(false);
  const auto out = hashtag_branch<double>(t, r, table, tags);
  EXPECT_EQ(out.mask.size(), 2u);
  const auto two = hashtag_branch<double>(t, std::span<const WordRef>(r).first(2), table, tags);
  EXPECT_EQ(out.feature.value(), two.feature.value());

  const auto uni = hashtag_branch<double>(t, r, table, tags, true);
  EXPECT_FALSE(uni.attention.has_value());
  const Tensor<double> hidden = hashtag_hidden(embed_refs(t, table, std::span<const WordRef>(r).first(2)), tags).value();
  for (std::size_t j = 0; j < 5; ++j)
    EXPECT_NEAR(uni.feature.value()[j], 0.5 * (hidden.at(0, j) + hidden.at(1, j)), 1e-14);
}

TEST_F(TextFixture, TextBranchGradients) {
  const auto r = refs(text_stream({"shot", "unknown"}, {"dose"}, 10));
  auto loss = [&](Tape<double>& t) {
    Var<double> f = text_branch<double>(t, r, table, text).feature;
    return sum(mul(f, f));
  };
  const auto res = grad_check(loss, text.parameters());
  EXPECT_TRUE(res.passed) << res.failure;
}
