#include <gtest/gtest.h>

#include <cmath>
#include <fstream>

#include "cmt/data/tensor_io.hpp"
#include "cmt/interpret/interpret.hpp"
#include "test_util.hpp"

namespace cmt {
namespace {

Tensor<double> random_stochastic(Rng& rng, std::size_t n) {
  Tensor<double> a = Tensor<double>::matrix(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    double sum = 0;
    for (std::size_t j = 0; j < n; ++j) sum += a(i, j) = rng.uniform() * (rng.uniform() < 0.3 ? 0.0 : 1.0) + 1e-3;
    for (std::size_t j = 0; j < n; ++j) a(i, j) /= sum;
  }
  return a;
}

RolloutInput uniform_2x2(std::size_t layers) {
  RolloutInput in;
  for (std::size_t l = 0; l < layers; ++l) in.layers.push_back(Tensor<double>({2, 2}, 0.5));
  return in;
}

TEST(Rollout, IdentityLayersGiveIdentity) {
  RolloutInput in;
  Tensor<double> eye = Tensor<double>::matrix(5, 5);
  for (std::size_t i = 0; i < 5; ++i) eye(i, i) = 1.0;
  in.layers = {eye, eye, eye};
  EXPECT_EQ(attention_rollout(in), eye);
}

TEST(Rollout, UniformTwoByTwoHandValues) {
  const auto one = attention_rollout(uniform_2x2(1));
  EXPECT_NEAR(one(0, 0), 0.75, 1e-12);
  EXPECT_NEAR(one(0, 1), 0.25, 1e-12);
  EXPECT_NEAR(one(1, 0), 0.25, 1e-12);
  EXPECT_NEAR(one(1, 1), 0.75, 1e-12);
  const auto two = attention_rollout(uniform_2x2(2));
  EXPECT_NEAR(two(0, 0), 0.625, 1e-12);
  EXPECT_NEAR(two(0, 1), 0.375, 1e-12);
  EXPECT_NEAR(two(1, 0), 0.375, 1e-12);
  EXPECT_NEAR(two(1, 1), 0.625, 1e-12);
}

TEST(Rollout, RowStochasticOnRandomStacks) {
  Rng rng(21);
  for (int k = 0; k < 200; ++k) {
    RolloutInput in;
    const std::size_t n = 1 + rng.below(24), layers = 1 + rng.below(12);
    for (std::size_t l = 0; l < layers; ++l) in.layers.push_back(random_stochastic(rng, n));
    const auto r = attention_rollout(in);
    for (std::size_t i = 0; i < n; ++i) {
      double sum = 0;
      for (std::size_t j = 0; j < n; ++j) {
        EXPECT_GE(r(i, j), 0.0);
        sum += r(i, j);
      }
      ASSERT_NEAR(sum, 1.0, 1e-6);
    }
  }
}

TEST(Rollout, AssociativeOverLayerSplits) {
  Rng rng(22);
  for (int k = 0; k < 100; ++k) {
    RolloutInput in;
    const std::size_t n = 2 + rng.below(10), layers = 2 + rng.below(8);
    for (std::size_t l = 0; l < layers; ++l) in.layers.push_back(random_stochastic(rng, n));
    const auto full = attention_rollout(in);
    const std::size_t j = 1 + rng.below(layers - 1);
    RolloutInput head;
    head.layers.assign(in.layers.begin(), in.layers.begin() + static_cast<std::ptrdiff_t>(j));
    const auto prefix = attention_rollout(head);
    const auto joined =
        extend_rollout(prefix, std::span(in.layers).subspan(j));
    for (std::size_t i = 0; i < full.size(); ++i) ASSERT_NEAR(full[i], joined[i], 1e-6);
  }
}

TEST(Rollout, RejectsMalformedStacks) {
  RolloutInput in;
  in.layers = {Tensor<double>({2, 3}, 1.0 / 3)};
  EXPECT_THROW(attention_rollout(in), std::invalid_argument);
  in.layers = {Tensor<double>({2, 2}, 0.5), Tensor<double>({3, 3}, 1.0 / 3)};
  EXPECT_THROW(attention_rollout(in), std::invalid_argument);
  in.layers = {Tensor<double>({2, 2}, 0.6)};
  EXPECT_THROW(attention_rollout(in), std::invalid_argument);
  in.layers = {Tensor<double>({2, 2}, std::vector<double>{1.5, -0.5, 0.5, 0.5})};
  EXPECT_THROW(attention_rollout(in), std::invalid_argument);
  in.layers = {Tensor<double>({2, 2}, 0.50004)};
  EXPECT_NO_THROW(attention_rollout(in));
  EXPECT_THROW(attention_rollout(RolloutInput{}), std::invalid_argument);
}

TEST(Rollout, FileRoundTripAndHeadAveraging) {
  const auto dir = testing::temp_dir("rollout_io");
  RolloutInput in = uniform_2x2(2);
  in.tokens = {"[CLS]", "fever"};
  in.word_groups = {-1, 0};
  save_rollout_input(dir / "att.cmt", in);
  const auto back = load_rollout_input(dir / "att.cmt");
  EXPECT_EQ(back.layers, in.layers);
  EXPECT_EQ(back.tokens, in.tokens);
  EXPECT_EQ(back.word_groups, in.word_groups);
  EXPECT_TRUE(back.chunk_tokens.empty());

  // Two heads: identity and uniform average to [[0.75, 0.25], [0.25, 0.75]].
  TensorMap<float> heads;
  heads.emplace("layer_0", Tensor<float>({2, 2, 2}, std::vector<float>{1, 0, 0, 1, 0.5f, 0.5f, 0.5f, 0.5f}));
  save_tensor_map(dir / "heads.cmt", heads);
  const auto avg = load_rollout_input(dir / "heads.cmt");
  ASSERT_EQ(avg.layers.size(), 1u);
  EXPECT_EQ(avg.layers[0](0, 0), 0.75);
  EXPECT_EQ(avg.layers[0](1, 0), 0.25);

  TensorMap<float> gap;
  gap.emplace("layer_0", Tensor<float>({2, 2}, 0.5f));
  gap.emplace("layer_2", Tensor<float>({2, 2}, 0.5f));
  save_tensor_map(dir / "gap.cmt", gap);
  EXPECT_THROW(load_rollout_input(dir / "gap.cmt"), FormatError);

  TensorMap<float> bad;
  bad.emplace("layer_0", Tensor<float>({2, 2}, std::vector<float>{0.9f, 0.3f, 0.5f, 0.5f}));
  save_tensor_map(dir / "bad.cmt", bad);
  EXPECT_THROW(load_rollout_input(dir / "bad.cmt"), std::invalid_argument);
}

TEST(WordImportance, SingleWordTakesAllNonClsMass) {
  Rng rng(23);
  RolloutInput in;
  for (int l = 0; l < 3; ++l) in.layers.push_back(random_stochastic(rng, 6));
  const auto r = attention_rollout(in);
  const std::vector<int> groups = {-1, 0, 0, 0, 0, 0};
  const auto w = word_importance(r, 0, groups, {});
  ASSERT_EQ(w.word_scores.size(), 1u);
  double rest = 0;
  for (std::size_t j = 1; j < 6; ++j) rest += r(0, j);
  EXPECT_NEAR(w.word_scores[0], rest, 1e-15);
  EXPECT_NEAR(w.word_scores[0], 1.0 - r(0, 0), 1e-12);
}

TEST(WordImportance, PartitionSumsToRowTotal) {
  Rng rng(24);
  for (int k = 0; k < 200; ++k) {
    const std::size_t n = 2 + rng.below(40);
    RolloutInput in;
    in.layers = {random_stochastic(rng, n), random_stochastic(rng, n)};
    const auto r = attention_rollout(in);
    std::vector<int> groups(n);
    int word = 0;
    for (std::size_t i = 0; i < n; ++i) {
      if (i > 0 && rng.uniform() < 0.5) ++word;
      groups[i] = word;
    }
    const std::size_t cls = rng.below(n);
    const auto w = word_importance(r, cls, groups, {});
    double total = 0, row = 0;
    for (double x : w.word_scores) total += x;
    for (std::size_t j = 0; j < n; ++j) row += r(cls, j);
    ASSERT_NEAR(total, row, 1e-12);
  }
}

TEST(WordImportance, ChunkScoresNormaliseByTokenCount) {
  // Equal total attention over chunks of 10 and 20 tokens.
  const std::size_t n = 30;
  Tensor<double> r = Tensor<double>::matrix(n, n);
  for (std::size_t j = 0; j < 10; ++j) r(0, j) = 0.5 / 10;
  for (std::size_t j = 10; j < 30; ++j) r(0, j) = 0.5 / 20;
  std::vector<int> groups(n);
  for (std::size_t i = 0; i < n; ++i) groups[i] = static_cast<int>(i);
  const std::vector<std::size_t> chunks = {10, 20};
  const auto w = word_importance(r, 0, groups, chunks);
  ASSERT_EQ(w.chunk_scores.size(), 2u);
  EXPECT_NEAR(w.chunk_scores[0] / w.chunk_scores[1], 2.0, 1e-12);
}

TEST(WordImportance, RejectsBadGroupsAndChunks) {
  Tensor<double> r({3, 3}, 1.0 / 3);
  EXPECT_THROW(word_importance(r, 3, std::vector<int>{0, 0, 0}, {}), std::invalid_argument);
  EXPECT_THROW(word_importance(r, 0, std::vector<int>{-1, 0, 2}, {}), std::invalid_argument);  // word 1 empty
  EXPECT_THROW(word_importance(r, 0, std::vector<int>{0, 0}, {}), std::invalid_argument);
  EXPECT_THROW(word_importance(r, 0, std::vector<int>{0, 1, 2}, std::vector<std::size_t>{2}), std::invalid_argument);
  EXPECT_THROW(word_importance(r, 0, std::vector<int>{0, 1, 2}, std::vector<std::size_t>{2, 0, 1}),
               std::invalid_argument);
}

/// A scaled, last-note-masked stay with notes at the given hours.
StayRecord toy_stay(Rng& rng, std::size_t hours, const std::vector<double>& note_hours) {
  StayRecord s;
  s.stay_id = "toy";
  s.ehr = testing::random_tensor<float>(rng, {hours, kEhrFeatures});
  for (double h : note_hours) {
    NoteRecord n;
    n.type = NoteType::kNursing;
    n.charttime_h = h;
    n.embedding.resize(kNoteEmbeddingDim);
    for (auto& x : n.embedding) x = static_cast<float>(rng.uniform(-1, 1));
    n.group = s.notes.size();
    s.notes.push_back(std::move(n));
  }
  const ScalerStats stats = fit_scaler(std::span<const StayRecord>(&s, 1));
  apply_scaler(s, stats);
  mask_last_note(s);
  return s;
}

CrossModalConfig small_cfg(Mode mode) {
  CrossModalConfig c;
  c.d_model = 16;
  c.d_ff = 32;
  c.mode = mode;
  return c;
}

TEST(CrossAttention, SingleVisibleNoteAndMaskedColumn) {
  Rng rng(25);
  const StayRecord s = toy_stay(rng, 8, {2.5, 5.0});
  const auto params = init_params(small_cfg(Mode::kCrossModal), 3);
  const auto dir = testing::temp_dir("cross_export");
  const auto e = export_cross_attention(s, params, dir / "stay");
  ASSERT_EQ(e.matrix.rows(), 8u);
  ASSERT_EQ(e.matrix.cols(), 2u);
  for (std::size_t t = 0; t < 8; ++t) {
    EXPECT_EQ(e.matrix(t, 0), t >= 3 ? 1.0f : 0.0f) << t;
    EXPECT_EQ(e.matrix(t, 1), 0.0f);
  }
  EXPECT_FALSE(e.note_visible[1]);
  EXPECT_EQ(load_tensor_map(dir / "stay.cmt").at("cross_attention"), e.matrix);
  std::ifstream notes(dir / "stay_notes.csv");
  std::string header, row;
  std::getline(notes, header);
  std::getline(notes, row);
  EXPECT_EQ(header, "note,type,charttime_h,visible");
  EXPECT_EQ(row, "0,Nursing,2.5,1");
  EXPECT_TRUE(std::filesystem::exists(dir / "stay_heatmap.csv"));
}

TEST(CrossAttention, VisibleRowsSumToOne) {
  Rng rng(26);
  const StayRecord s = toy_stay(rng, 12, {0.5, 1.0, 3.0, 4.5, 7.0, 11.0});
  const auto e = cross_attention_map(s, init_params(small_cfg(Mode::kCrossModal), 4));
  for (std::size_t t = 1; t < e.matrix.rows(); ++t) {  // the first note arrives at 0.5 h
    double sum = 0;
    for (std::size_t j = 0; j < e.matrix.cols(); ++j) sum += e.matrix(t, j);
    EXPECT_NEAR(sum, 1.0, 1e-6);
  }
  EXPECT_THROW(cross_attention_map(s, init_params(small_cfg(Mode::kEhrOnly), 4)), std::invalid_argument);
}

ModelParams ehr_twin(const ModelParams& cross) {
  ModelParams e = init_params(small_cfg(Mode::kEhrOnly), 0);
  for (auto& [name, t] : e.tensors) t = cross.tensors.at(name);
  return e;
}

TEST(Divergence, IdenticalOrZeroedModelsNeverDiverge) {
  Rng rng(27);
  const StayRecord s = toy_stay(rng, 10, {1.0, 4.0, 6.0});
  const StayInput in = make_stay_input(s);
  const auto cross = init_params(small_cfg(Mode::kCrossModal), 5);
  for (double thr : {1e-9, 0.1, 0.5}) EXPECT_TRUE(divergence_report(in, cross, cross, thr).hours.empty());

  ModelParams zeroed = cross;
  for (auto& x : zeroed.tensors.at("fuse.w_cross").values()) x = 0.0f;
  const auto r = divergence_report(in, ehr_twin(cross), zeroed, 1e-9);
  EXPECT_TRUE(r.hours.empty());
  EXPECT_EQ(r.p_ehr, r.p_cross);
}

TEST(Divergence, AttributionCitesEarlierNotesAndSurvivesLogitScaling) {
  Rng rng(28);
  const StayRecord s = toy_stay(rng, 16, {0.5, 2.0, 5.5, 9.0, 12.0, 15.0});
  const StayInput in = make_stay_input(s);
  auto cross = init_params(small_cfg(Mode::kCrossModal), 6);
  for (auto& x : cross.tensors.at("fuse.w_cross").values()) x *= 8.0f;
  const auto ehr = ehr_twin(init_params(small_cfg(Mode::kCrossModal), 7));
  const auto r = divergence_report(in, ehr, cross, 0.0);
  ASSERT_FALSE(r.hours.empty());
  for (std::size_t i = 1; i < r.hours.size(); ++i) EXPECT_LT(r.hours[i - 1].hour, r.hours[i].hour);
  for (const auto& h : r.hours) {
    if (!h.note) continue;
    EXPECT_LE(s.notes[*h.note].charttime_h, static_cast<double>(h.hour));
    EXPECT_TRUE(s.notes[*h.note].visible);
    EXPECT_GT(h.max_attention, 0.0);
    EXPECT_GE(h.entropy, 0.0);
  }

  // Doubling the query projection doubles every cross logit.
  auto sharper = cross;
  for (const char* name : {"cross.0.wq", "cross.0.bq"})
    for (auto& x : sharper.tensors.at(name).values()) x *= 2.0f;
  const auto a = predict(cross, in).attention.cross_attn.value();
  const auto b = predict(sharper, in).attention.cross_attn.value();
  for (std::size_t t = 0; t < a.rows(); ++t) {
    const auto ra = a.row(t), rb = b.row(t);
    if (std::all_of(ra.begin(), ra.end(), [](float w) { return w == 0.0f; })) continue;
    EXPECT_EQ(std::max_element(ra.begin(), ra.end()) - ra.begin(), std::max_element(rb.begin(), rb.end()) - rb.begin());
  }
}

}  // namespace
}  // namespace cmt
