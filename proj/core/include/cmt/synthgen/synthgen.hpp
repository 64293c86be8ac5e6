#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cmt/data/cohort.hpp"
#include "cmt/data/stay.hpp"

namespace cmt {

struct SynthConfig {
  std::size_t n_train = 500;
  std::size_t n_val = 100;
  std::size_t n_test = 100;
  std::size_t t_min = 48;
  std::size_t t_max = 96;

  /// Leading EHR columns that observe the lagged severity.
  std::size_t d_ehr_observed = 8;
  std::size_t ehr_lag_h = 6;
  double noise_std = 0.6;
  double observe_prob = 0.7;
  double step_std = 0.05;
  double z0_min = 0.0;
  double z0_max = 0.3;
  /// Per-stay risk added to the severity. The EHR charts only the walk, so
  /// this part reaches the model through informative notes alone.
  double latent_risk_max = 0.4;

  NoteTypeSet informative_types{NoteType::kNursing, NoteType::kRadiology};
  NoteTypeSet redundant_types{NoteType::kPhysician};
  NoteTypeSet noise_types{NoteType::kEcg};
  std::map<NoteType, double> note_rate_per_type{{NoteType::kNursing, 0.25},
                                                {NoteType::kRadiology, 0.12},
                                                {NoteType::kPhysician, 0.06},
                                                {NoteType::kEcg, 0.04}};
  std::vector<std::size_t> signal_dims = default_signal_dims();
  double signal_gain = 3.0;
  double note_noise_std = 0.05;
  double background_std = 0.1;

  double horizon_h = 24.0;
  double death_threshold = 1.1;
  std::uint64_t seed = 0;
  /// Reject configurations whose splits carry no positive decompensation label.
  bool require_positive_labels = true;

  static std::vector<std::size_t> default_signal_dims();
  /// Throws std::invalid_argument describing the first violated invariant.
  void validate() const;
  std::size_t n_stays() const { return n_train + n_val + n_test; }
};

void to_json(nlohmann::json& j, const SynthConfig& c);
/// Missing keys keep their defaults; unknown keys are rejected.
void from_json(const nlohmann::json& j, SynthConfig& c);

/// One generated stay together with its hidden state.
struct SynthStay {
  StayRecord stay;
  Split split = Split::kTrain;
  /// Severity (walk + latent risk) at hours 0..T, one entry beyond the last
  /// EHR row.
  std::vector<double> z;
  double latent_risk = 0.0;
  /// Severity at each note's chart time, aligned with stay.notes.
  std::vector<double> note_z;
};

/// Deterministic in (cfg, index): each stay draws from its own RNG stream.
SynthStay generate_stay(const SynthConfig& cfg, std::size_t index);

struct SplitPrevalence {
  std::size_t stays = 0;
  std::size_t decomp_positive = 0;
  std::size_t decomp_total = 0;
  std::size_t ihm_positive = 0;
  std::size_t ihm_total = 0;

  double decomp_rate() const { return decomp_total ? double(decomp_positive) / double(decomp_total) : 0.0; }
};

struct PrevalenceReport {
  std::map<Split, SplitPrevalence> splits;
  std::string to_string() const;
};

struct PositiveLabelError : std::runtime_error {
  PrevalenceReport report;
  PositiveLabelError(const std::string& what, PrevalenceReport r)
      : std::runtime_error(what), report(std::move(r)) {}
};

/// All stays of the configured cohort, in manifest order.
std::vector<SynthStay> generate_stays(const SynthConfig& cfg);
PrevalenceReport measure_prevalence(const std::vector<SynthStay>& stays);

/// Writes the cohort directory (manifest, per-stay files, synth_config.json).
/// Throws PositiveLabelError when a split has no positive label and
/// `require_positive_labels` is set.
PrevalenceReport generate_cohort(const SynthConfig& cfg, const std::filesystem::path& root);

struct PlantedSignal {
  NoteTypeSet informative;
  NoteTypeSet redundant;
  NoteTypeSet noise;
  bool cross_modal_gain_expected = true;
};

void to_json(nlohmann::json& j, const PlantedSignal& p);
void from_json(const nlohmann::json& j, PlantedSignal& p);

PlantedSignal describe_planted_signal(const SynthConfig& cfg);

/// A stay with a calm, low-noise EHR and a latent risk near the death
/// threshold that only its one informative note (at `planted_hour`) reveals.
/// A trailing noise note follows, for last-note masking to hide.
struct ProbeStay {
  StayRecord stay;
  std::size_t planted_note = 0;  // index into stay.notes
  double planted_hour = 0.0;
};

std::vector<ProbeStay> generate_probe_stays(const SynthConfig& cfg, std::size_t count, std::uint64_t seed);

}  // namespace cmt
