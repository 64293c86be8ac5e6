#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>

#include "cmt/data/cohort.hpp"
#include "cmt/data/preprocess.hpp"
#include "cmt/data/targets.hpp"
#include "cmt/data/tensor_io.hpp"
#include "test_util.hpp"

namespace cmt {
namespace {

constexpr float kNaN = std::numeric_limits<float>::quiet_NaN();

NoteRecord make_note(double t, NoteType type, float fill = 0.0f) {
  NoteRecord n;
  n.charttime_h = t;
  n.type = type;
  n.embedding.assign(kNoteEmbeddingDim, fill);
  return n;
}

StayRecord make_stay(std::string id, std::size_t hours, std::vector<NoteRecord> notes) {
  StayRecord s;
  s.stay_id = std::move(id);
  s.ehr = Tensor<float>::matrix(hours, kEhrFeatures, 1.0f);
  for (std::size_t i = 0; i < notes.size(); ++i) notes[i].group = i;
  s.notes = std::move(notes);
  return s;
}

ManifestEntry entry_for(const std::string& id, Split split) {
  return {id, split, id + "/ehr.cmt", id + "/notes.jsonl", id + "/outcome.json", 8.0};
}

TEST(NoteType, RoundTripsAllNames) {
  EXPECT_EQ(all_note_types().size(), 14u);
  for (NoteType t : all_note_types()) EXPECT_EQ(parse_note_type(to_string(t)), t);
  EXPECT_THROW(parse_note_type("Progress"), std::invalid_argument);
}

TEST(TensorIo, RoundTripIsBitwise) {
  auto dir = testing::temp_dir("tensor_io");
  Rng rng(3);
  auto t = testing::random_tensor<float>(rng, {5, 42});
  t(1, 2) = kNaN;
  save_tensor(dir / "a.cmt", t);
  auto back = load_tensor(dir / "a.cmt");
  ASSERT_EQ(back.shape(), t.shape());
  EXPECT_EQ(std::memcmp(back.data(), t.data(), t.size() * sizeof(float)), 0);
}

TEST(TensorIo, HeaderBytesAreLittleEndian) {
  auto dir = testing::temp_dir("tensor_hdr");
  save_tensor(dir / "a.cmt", Tensor<float>({2, 3}, std::vector<float>{1, 2, 3, 4, 5, 6}));
  std::ifstream in(dir / "a.cmt", std::ios::binary);
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), {});
  ASSERT_EQ(bytes.size(), 4u + 4u + 8u + 24u);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "CMT1");
  EXPECT_EQ(bytes[4], 2);
  EXPECT_EQ(bytes[8], 2);
  EXPECT_EQ(bytes[12], 3);
  // 1.0f = 0x3F800000
  EXPECT_EQ(bytes[16], 0x00);
  EXPECT_EQ(bytes[19], 0x3F);
}

TEST(TensorIo, RejectsBadMagicAndTruncation) {
  auto dir = testing::temp_dir("tensor_bad");
  { std::ofstream(dir / "bad.cmt", std::ios::binary) << "CMT2xxxx"; }
  EXPECT_THROW(load_tensor(dir / "bad.cmt"), FormatError);
  save_tensor(dir / "ok.cmt", Tensor<float>::matrix(2, 2, 1.0f));
  std::filesystem::resize_file(dir / "ok.cmt", 20);
  EXPECT_THROW(load_tensor(dir / "ok.cmt"), FormatError);
}

TEST(TensorIo, NamedContainerRoundTrip) {
  auto dir = testing::temp_dir("tensor_map");
  Rng rng(5);
  TensorMap<float> m{{"b", testing::random_tensor<float>(rng, {3})},
                     {"a", testing::random_tensor<float>(rng, {2, 2, 2})}};
  save_tensor_map(dir / "m.cmt", m);
  EXPECT_EQ(load_tensor_map(dir / "m.cmt"), m);
}

TEST(ChartTime, EndOfChartDate) {
  EXPECT_DOUBLE_EQ(assign_charttime(0, 8.0).hours, 16.0);
  EXPECT_DOUBLE_EQ(assign_charttime(1, 8.0).hours, 40.0);
  auto before = assign_charttime(-1, 8.0);
  EXPECT_EQ(before.hours, 0.0);
  EXPECT_TRUE(before.clamped);
  EXPECT_FALSE(assign_charttime(0, 8.0).clamped);
}

TEST(ChartTime, NeverBeforeStartOfDate) {
  for (int day = 0; day < 5; ++day)
    for (double admit = 0.0; admit < 24.0; admit += 0.5) {
      const double start_of_day = 24.0 * day - admit;
      EXPECT_GE(assign_charttime(day, admit).hours, start_of_day);
    }
}

TEST(ForwardImpute, CarriesLastObservation) {
  Tensor<float> x({4, 1}, std::vector<float>{1, kNaN, kNaN, 4});
  EXPECT_EQ(forward_impute(x).storage(), (std::vector<float>{1, 1, 1, 4}));
}

TEST(ForwardImpute, LeadingGapTakesFill) {
  Tensor<float> x({2, 2}, std::vector<float>{kNaN, kNaN, 2, kNaN});
  const std::vector<double> fill{7.0, 9.0};
  auto y = forward_impute(x, fill);
  EXPECT_EQ(y.storage(), (std::vector<float>{7, 9, 2, 9}));
}

TEST(ForwardImpute, LeadingAndAllMissingScaleToZero) {
  StayRecord train = make_stay("a", 2, {make_note(0, NoteType::kNursing)});
  for (std::size_t c = 0; c < kEhrFeatures; ++c) {
    train.ehr(0, c) = 3.0f;
    train.ehr(1, c) = 5.0f;
  }
  train.ehr(0, 1) = kNaN;
  train.ehr(1, 1) = kNaN;  // all missing in training
  ScalerStats stats = fit_scaler(std::span<const StayRecord>(&train, 1));

  StayRecord s = make_stay("b", 3, {make_note(0, NoteType::kNursing)});
  for (auto& x : s.ehr.values()) x = kNaN;
  s.ehr(2, 0) = 5.0f;
  apply_scaler(s, stats);
  EXPECT_EQ(s.ehr(0, 0), 0.0f);
  EXPECT_EQ(s.ehr(1, 0), 0.0f);
  EXPECT_FLOAT_EQ(s.ehr(2, 0), 1.0f);
  for (std::size_t t = 0; t < 3; ++t) EXPECT_EQ(s.ehr(t, 1), 0.0f);
}

TEST(Scaler, TwoValueColumnHandOracle) {
  StayRecord train = make_stay("a", 2, {make_note(0, NoteType::kNursing), make_note(2, NoteType::kNursing)});
  for (std::size_t c = 0; c < kEhrFeatures; ++c) {
    train.ehr(0, c) = 0.0f;
    train.ehr(1, c) = 2.0f;
  }
  ScalerStats stats = fit_scaler(std::span<const StayRecord>(&train, 1));
  EXPECT_DOUBLE_EQ(stats.ehr_mean[0], 1.0);
  EXPECT_DOUBLE_EQ(stats.ehr_std[0], 1.0);
  EXPECT_DOUBLE_EQ(stats.time_mean, 1.0);
  EXPECT_DOUBLE_EQ(stats.time_std, 1.0);
  apply_scaler(train, stats);
  EXPECT_EQ(train.ehr(0, 0), -1.0f);
  EXPECT_EQ(train.ehr(1, 0), 1.0f);
  EXPECT_EQ(train.notes[0].scaled_time, -1.0f);
  EXPECT_EQ(train.notes[1].scaled_time, 1.0f);
}

TEST(Scaler, ConstantFeatureScalesToZero) {
  StayRecord train = make_stay("a", 5, {make_note(3, NoteType::kNursing)});
  ScalerStats stats = fit_scaler(std::span<const StayRecord>(&train, 1));
  EXPECT_EQ(stats.ehr_std[0], 0.0);
  apply_scaler(train, stats);
  for (float x : train.ehr.values()) EXPECT_EQ(x, 0.0f);
  EXPECT_EQ(train.notes[0].scaled_time, 0.0f);
}

TEST(Scaler, SecondApplicationIsRejected) {
  StayRecord s = make_stay("a", 2, {make_note(0, NoteType::kNursing)});
  ScalerStats stats = fit_scaler(std::span<const StayRecord>(&s, 1));
  apply_scaler(s, stats);
  EXPECT_THROW(apply_scaler(s, stats), std::logic_error);
}

TEST(Scaler, JsonRoundTrip) {
  ScalerStats s{{1.5, 2.0}, {0.5, 0.25}, 3.0, 4.0};
  ScalerStats back = nlohmann::json(s).get<ScalerStats>();
  EXPECT_EQ(back.ehr_mean, s.ehr_mean);
  EXPECT_EQ(back.ehr_std, s.ehr_std);
  EXPECT_EQ(back.time_std, s.time_std);
}

TEST(MaskLastNote, SingleNoteBecomesInvisible) {
  StayRecord s = make_stay("a", 4, {make_note(1, NoteType::kNursing)});
  mask_last_note(s);
  EXPECT_EQ(s.notes.size(), 1u);
  EXPECT_EQ(s.visible_notes(), 0u);
}

TEST(MaskLastNote, FiveNotesLeaveFour) {
  std::vector<NoteRecord> notes;
  for (int i = 0; i < 5; ++i) notes.push_back(make_note(i, NoteType::kNursing));
  StayRecord s = make_stay("a", 8, notes);
  mask_last_note(s);
  EXPECT_EQ(s.visible_notes(), 4u);
  EXPECT_FALSE(s.notes[4].visible);
}

TEST(MaskLastNote, TieMasksLatestInInputOrder) {
  StayRecord s = make_stay(
      "a", 8, {make_note(1, NoteType::kNursing), make_note(5, NoteType::kRadiology), make_note(5, NoteType::kEcg)});
  mask_last_note(s);
  EXPECT_TRUE(s.notes[1].visible);
  EXPECT_FALSE(s.notes[2].visible);
}

TEST(BuildNoteMatrix, EmptyWhenNothingVisible) {
  StayRecord s = make_stay("a", 3, {make_note(0, NoteType::kNursing)});
  ScalerStats stats = fit_scaler(std::span<const StayRecord>(&s, 1));
  apply_scaler(s, stats);
  mask_last_note(s);
  auto m = build_note_matrix(s);
  EXPECT_EQ(m.size(), 0u);
  EXPECT_EQ(m.features.rows(), 0u);
  EXPECT_EQ(m.features.cols(), kNoteFeatures);
}

TEST(BuildNoteMatrix, ZeroEmbeddingRow) {
  StayRecord s = make_stay("a", 3, {make_note(0, NoteType::kNursing)});
  ScalerStats stats;
  stats.ehr_mean.assign(kEhrFeatures, 0.0);
  stats.ehr_std.assign(kEhrFeatures, 1.0);
  stats.time_mean = 0.0;
  stats.time_std = 1.0;
  apply_scaler(s, stats);
  auto m = build_note_matrix(s);
  ASSERT_EQ(m.size(), 1u);
  for (std::size_t d = 0; d < kNoteFeatures; ++d) EXPECT_EQ(m.features(0, d), 0.0f);
}

TEST(BuildNoteMatrix, RequiresScaling) {
  StayRecord s = make_stay("a", 3, {make_note(0, NoteType::kNursing)});
  EXPECT_THROW(build_note_matrix(s), std::logic_error);
}

TEST(BuildNoteMatrix, TimeColumnNonDecreasingProperty) {
  Rng rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<NoteRecord> notes;
    double t = 0.0;
    const int n = 1 + static_cast<int>(rng.below(12));
    for (int i = 0; i < n; ++i) {
      t += rng.below(3) == 0 ? 0.0 : rng.uniform(0.0, 5.0);
      notes.push_back(make_note(t, NoteType::kNursing, static_cast<float>(rng.uniform())));
    }
    StayRecord s = make_stay("p", 30, notes);
    ScalerStats stats = fit_scaler(std::span<const StayRecord>(&s, 1));
    apply_scaler(s, stats);
    if (rng.below(2)) mask_last_note(s);
    auto m = build_note_matrix(s);
    EXPECT_EQ(m.size(), s.visible_notes());
    for (std::size_t r = 1; r < m.size(); ++r)
      EXPECT_LE(m.features(r - 1, kNoteEmbeddingDim), m.features(r, kNoteEmbeddingDim));
  }
}

StayRecord mixed_stay() {
  return make_stay("m", 20,
                   {make_note(1, NoteType::kNursing), make_note(2, NoteType::kRadiology),
                    make_note(3, NoteType::kNursing), make_note(4, NoteType::kEcg),
                    make_note(6, NoteType::kPhysician)});
}

TEST(FilterNoteTypes, AllTypesIsIdentity) {
  StayRecord s = mixed_stay();
  filter_note_types(s, all_note_type_set());
  EXPECT_EQ(s.notes.size(), 5u);
}

TEST(FilterNoteTypes, EmptySetRemovesAll) {
  StayRecord s = mixed_stay();
  mask_last_note(s);
  filter_note_types(s, {});
  EXPECT_TRUE(s.notes.empty());
}

TEST(FilterNoteTypes, NursingOnlyRemasksSurvivors) {
  StayRecord s = mixed_stay();
  mask_last_note(s);
  filter_note_types(s, {NoteType::kNursing});
  ASSERT_EQ(s.notes.size(), 2u);
  for (const auto& n : s.notes) EXPECT_EQ(n.type, NoteType::kNursing);
  EXPECT_TRUE(s.notes[0].visible);
  EXPECT_FALSE(s.notes[1].visible);
}

TEST(FilterNoteTypes, CompositionEqualsIntersectionProperty) {
  Rng rng(17);
  const auto types = all_note_types();
  auto random_set = [&] {
    NoteTypeSet s;
    for (NoteType t : types)
      if (rng.uniform() < 0.5) s.insert(t);
    return s;
  };
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<NoteRecord> notes;
    for (int i = 0; i < 10; ++i) notes.push_back(make_note(i, types[rng.below(types.size())]));
    StayRecord base = make_stay("p", 12, notes);
    mask_last_note(base);
    NoteTypeSet a = random_set(), b = random_set();
    NoteTypeSet inter;
    for (NoteType t : a)
      if (b.contains(t)) inter.insert(t);

    StayRecord twice = base, once = base;
    filter_note_types(twice, a);
    filter_note_types(twice, b);
    filter_note_types(once, inter);
    ASSERT_EQ(twice.notes.size(), once.notes.size());
    for (std::size_t i = 0; i < once.notes.size(); ++i) {
      EXPECT_EQ(twice.notes[i].group, once.notes[i].group);
      EXPECT_EQ(twice.notes[i].visible, once.notes[i].visible);
    }
    if (!once.notes.empty()) EXPECT_EQ(once.notes.size() - once.visible_notes(), 1u);
  }
}

TEST(ExpandChunks, OneRecordPerChunkSharingGroup) {
  NoteRecord n = make_note(2, NoteType::kNursing);
  n.chunk_embeddings = {std::vector<float>(kNoteEmbeddingDim, 1.0f), std::vector<float>(kNoteEmbeddingDim, 3.0f)};
  n.embedding.assign(kNoteEmbeddingDim, 2.0f);
  StayRecord s = make_stay("c", 5, {make_note(1, NoteType::kEcg), n});
  mask_last_note(s);
  expand_chunks(s);
  ASSERT_EQ(s.notes.size(), 3u);
  EXPECT_EQ(s.notes[1].group, s.notes[2].group);
  EXPECT_FALSE(s.notes[1].visible);
  EXPECT_FALSE(s.notes[2].visible);
  EXPECT_EQ(s.notes[2].embedding[0], 3.0f);
}

TEST(Targets, DeathAtThirtyIntervalOracle) {
  StayRecord s = make_stay("d", 30, {make_note(0, NoteType::kNursing)});
  s.outcome.death_hour = 30.0;
  auto tt = make_task_targets(s, Task::kDecompensation);
  ASSERT_EQ(tt.targets.rows(), 30u);
  for (std::size_t t = 0; t < 30; ++t) EXPECT_EQ(tt.targets(t, 0), (t >= 6 && t < 30) ? 1.0f : 0.0f) << t;
}

TEST(Targets, SurvivorAllNegative) {
  StayRecord s = make_stay("s", 60, {make_note(0, NoteType::kNursing)});
  auto d = make_task_targets(s, Task::kDecompensation);
  for (float x : d.targets.values()) EXPECT_EQ(x, 0.0f);
  auto m = make_task_targets(s, Task::kInHospitalMortality);
  EXPECT_EQ(m.targets(0, 0), 0.0f);
  EXPECT_TRUE(m.mask(0, 0));
}

TEST(Targets, ShortStayMasksIhm) {
  StayRecord s = make_stay("s", 40, {make_note(0, NoteType::kNursing)});
  EXPECT_FALSE(make_task_targets(s, Task::kInHospitalMortality).mask(0, 0));
}

TEST(Targets, PhenotypesCopied) {
  StayRecord s = make_stay("s", 4, {make_note(0, NoteType::kNursing)});
  s.outcome.pheno[3] = 1;
  s.outcome.pheno[24] = 1;
  auto p = make_task_targets(s, Task::kPhenotyping);
  ASSERT_EQ(p.targets.cols(), 25u);
  float sum = 0;
  for (float x : p.targets.values()) sum += x;
  EXPECT_EQ(sum, 2.0f);
  EXPECT_EQ(p.targets(0, 3), 1.0f);
}

TEST(Targets, MatchBruteForceScanOnRandomOutcomes) {
  Rng rng(23);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t hours = 1 + rng.below(120);
    StayRecord s = make_stay("r", hours, {make_note(0, NoteType::kNursing)});
    if (rng.below(4) != 0) {
      // Mix fractional and integral death times, including the stay end.
      double death = rng.below(2) ? rng.uniform(0.0, static_cast<double>(hours) + 30.0)
                                  : static_cast<double>(rng.below(hours + 30));
      s.outcome.death_hour = death;
    }
    auto tt = make_task_targets(s, Task::kDecompensation);
    for (std::size_t t = 0; t < hours; ++t) {
      // Scan the horizon in quarter-hour steps over (t, t + 24].
      bool positive = false;
      if (s.outcome.death_hour) {
        const double d = *s.outcome.death_hour;
        for (int q = 1; q <= 96 && !positive; ++q) {
          const double lo = static_cast<double>(t) + (q - 1) * 0.25, hi = static_cast<double>(t) + q * 0.25;
          positive = d > lo && d <= hi;
        }
      }
      ASSERT_EQ(tt.targets(t, 0), positive ? 1.0f : 0.0f) << "trial " << trial << " hour " << t;
    }
  }
}

TEST(NoteLine, RoundTripIsBitwise) {
  Rng rng(29);
  NoteRecord n = make_note(12.345678901, NoteType::kRadiology);
  for (auto& x : n.embedding) x = static_cast<float>(rng.normal(0.0, 3.0));
  n.chunk_embeddings = {n.embedding};
  n.chunk_token_counts = {77};
  NoteRecord back = note_from_json_line(note_to_json_line(n), 0.0);
  EXPECT_EQ(back.charttime_h, n.charttime_h);
  EXPECT_EQ(back.type, n.type);
  EXPECT_EQ(std::memcmp(back.embedding.data(), n.embedding.data(), kNoteEmbeddingDim * sizeof(float)), 0);
  EXPECT_EQ(back.chunk_token_counts, n.chunk_token_counts);
}

TEST(NoteLine, DateOnlyUsesAdmitHour) {
  NoteRecord n = make_note(0, NoteType::kEcg);
  n.chart_day = 1;
  NoteRecord back = note_from_json_line(note_to_json_line(n), 8.0);
  EXPECT_EQ(back.charttime_h, 40.0);
  EXPECT_EQ(back.chart_day, 1);
}

TEST(NoteLine, UnknownTypeRejected) {
  EXPECT_THROW(note_from_json_line(R"({"charttime_h":1,"type":"Progress","emb":[]})", 0.0), std::invalid_argument);
}

class CohortFixture : public ::testing::Test {
 protected:
  std::filesystem::path root =
      testing::temp_dir(std::string("cohort_") + ::testing::UnitTest::GetInstance()->current_test_info()->name());
  std::vector<ManifestEntry> entries;

  void add(const StayRecord& s, Split split) {
    auto e = entry_for(s.stay_id, split);
    write_stay(root, e, s);
    entries.push_back(e);
  }
};

TEST_F(CohortFixture, EmptyDirectoryHasNoManifest) {
  try {
    load_cohort(root);
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_STREQ(e.what(), "no manifest");
  }
}

TEST_F(CohortFixture, StayWithoutNotesIsDropped) {
  add(make_stay("s1", 5, {make_note(1, NoteType::kNursing)}), Split::kTrain);
  add(make_stay("s2", 5, {}), Split::kTrain);
  add(make_stay("s3", 5, {make_note(1, NoteType::kRadiology), make_note(2, NoteType::kNursing)}), Split::kVal);
  write_manifest(root, entries);
  Cohort c = load_cohort(root);
  EXPECT_EQ(c.stays.size(), 2u);
  EXPECT_EQ(c.manifest.stays.size(), 2u);
  EXPECT_EQ(c.manifest.dropped_without_notes, 1u);
  EXPECT_TRUE(c.manifest.rejected.empty());
  EXPECT_EQ(c.manifest.train_note_counts.at(NoteType::kNursing), 1u);
  EXPECT_FALSE(c.manifest.train_note_counts.contains(NoteType::kRadiology));
}

TEST_F(CohortFixture, BadStaysRejectedWithReason) {
  add(make_stay("good", 5, {make_note(1, NoteType::kNursing)}), Split::kTrain);
  add(make_stay("unsorted", 5, {make_note(3, NoteType::kNursing), make_note(1, NoteType::kNursing)}), Split::kTrain);
  add(make_stay("badtype", 5, {make_note(1, NoteType::kNursing)}), Split::kTrain);
  add(make_stay("badhdr", 5, {make_note(1, NoteType::kNursing)}), Split::kTrain);
  {
    std::ofstream out(root / "badtype/notes.jsonl");
    NoteRecord n = make_note(1, NoteType::kNursing);
    std::string line = note_to_json_line(n);
    line.replace(line.find("Nursing"), 7, "Bogus");
    out << line << "\n";
  }
  { std::ofstream(root / "badhdr/ehr.cmt", std::ios::binary) << "XXXX"; }
  write_manifest(root, entries);
  Cohort c = load_cohort(root);
  ASSERT_EQ(c.stays.size(), 1u);
  EXPECT_EQ(c.stays[0].stay_id, "good");
  ASSERT_EQ(c.manifest.rejected.size(), 3u);
  for (const auto& r : c.manifest.rejected) EXPECT_FALSE(r.reason.empty()) << r.id;
  EXPECT_NE(c.manifest.rejected[0].reason.find("sorted"), std::string::npos);
}

TEST_F(CohortFixture, WriteLoadRoundTripIsBitwise) {
  Rng rng(31);
  std::vector<StayRecord> written;
  for (int i = 0; i < 4; ++i) {
    StayRecord s = make_stay("r" + std::to_string(i), 3 + i, {});
    for (auto& x : s.ehr.values()) x = rng.uniform() < 0.3 ? kNaN : static_cast<float>(rng.normal());
    for (int k = 0; k < 3; ++k) {
      NoteRecord n = make_note(k * 2.5, k == 1 ? NoteType::kPhysician : NoteType::kNursing);
      for (auto& x : n.embedding) x = static_cast<float>(rng.normal());
      n.group = static_cast<std::size_t>(k);
      s.notes.push_back(n);
    }
    s.outcome.death_hour = i == 2 ? std::optional<double>(4.5) : std::nullopt;
    s.outcome.pheno[static_cast<std::size_t>(i)] = 1;
    add(s, i == 3 ? Split::kTest : Split::kTrain);
    written.push_back(s);
  }
  write_manifest(root, entries);
  Cohort c = load_cohort(root);
  ASSERT_EQ(c.stays.size(), written.size());
  for (std::size_t i = 0; i < written.size(); ++i) {
    const auto& a = written[i].ehr;
    const auto& b = c.stays[i].ehr;
    ASSERT_EQ(a.shape(), b.shape());
    EXPECT_EQ(std::memcmp(a.data(), b.data(), a.size() * sizeof(float)), 0);
    ASSERT_EQ(c.stays[i].notes.size(), 3u);
    for (std::size_t k = 0; k < 3; ++k)
      EXPECT_EQ(c.stays[i].notes[k].embedding, written[i].notes[k].embedding);
    EXPECT_EQ(c.stays[i].outcome.death_hour, written[i].outcome.death_hour);
    EXPECT_EQ(c.stays[i].outcome.pheno, written[i].outcome.pheno);
  }
  EXPECT_EQ(c.indices(Split::kTest), std::vector<std::size_t>{3});
}

TEST(Lint, PreprocessedStayIsClean) {
  StayRecord s = make_stay("l", 6, {make_note(1, NoteType::kNursing), make_note(2, NoteType::kNursing)});
  s.ehr(0, 0) = kNaN;
  EXPECT_TRUE(lint_stay(s, false).empty());
  EXPECT_FALSE(lint_stay(s, true).empty());
  ScalerStats stats = fit_scaler(std::span<const StayRecord>(&s, 1));
  apply_scaler(s, stats);
  EXPECT_TRUE(lint_stay(s, true).empty());
}

}  // namespace
}  // namespace cmt
