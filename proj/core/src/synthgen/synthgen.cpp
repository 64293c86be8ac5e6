#include "cmt/synthgen/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "cmt/data/preprocess.hpp"
#include "cmt/data/targets.hpp"
#include "cmt/util/rng.hpp"

namespace cmt {

using nlohmann::json;

std::vector<std::size_t> SynthConfig::default_signal_dims() {
  std::vector<std::size_t> dims(16);
  std::iota(dims.begin(), dims.end(), std::size_t{0});
  return dims;
}

void SynthConfig::validate() const {
  auto fail = [](const std::string& msg) { throw std::invalid_argument("synth config: " + msg); };
  if (t_min == 0 || t_min > t_max) fail("need 1 <= t_min <= t_max");
  if (d_ehr_observed == 0 || d_ehr_observed > kEhrFeatures - 16) fail("d_ehr_observed must lie in [1, 26]");
  if (noise_std < 0 || step_std < 0 || note_noise_std < 0 || background_std < 0) fail("noise levels must be >= 0");
  if (!(observe_prob > 0.0 && observe_prob <= 1.0)) fail("observe_prob must lie in (0, 1]");
  if (!(z0_min >= 0.0 && z0_min <= z0_max && z0_max <= 1.0)) fail("need 0 <= z0_min <= z0_max <= 1");
  if (!(latent_risk_max >= 0.0)) fail("latent_risk_max must be >= 0");
  for (NoteType t : informative_types)
    if (redundant_types.contains(t) || noise_types.contains(t)) fail("note type sets must be disjoint");
  for (NoteType t : redundant_types)
    if (noise_types.contains(t)) fail("note type sets must be disjoint");
  for (const auto& [type, rate] : note_rate_per_type)
    if (!(rate > 0.0)) fail("rate for " + std::string(to_string(type)) + " must be > 0");
  for (std::size_t d : signal_dims)
    if (d >= kNoteEmbeddingDim) fail("signal dimension " + std::to_string(d) + " outside [0, 768)");
  if (signal_dims.empty()) fail("signal_dims is empty");
  if (horizon_h != kDecompHorizonHours) fail("horizon_h must be 24");
}

namespace {

json type_set_to_json(const NoteTypeSet& s) {
  json a = json::array();
  for (NoteType t : s) a.push_back(std::string(to_string(t)));
  return a;
}

NoteTypeSet type_set_from_json(const json& a) {
  NoteTypeSet s;
  for (const auto& x : a) s.insert(parse_note_type(x.get<std::string>()));
  return s;
}

}  // namespace

void to_json(json& j, const SynthConfig& c) {
  json rates = json::object();
  for (const auto& [t, r] : c.note_rate_per_type) rates[std::string(to_string(t))] = r;
  j = json{{"n_train", c.n_train},
           {"n_val", c.n_val},
           {"n_test", c.n_test},
           {"t_min", c.t_min},
           {"t_max", c.t_max},
           {"d_ehr_observed", c.d_ehr_observed},
           {"ehr_lag_h", c.ehr_lag_h},
           {"noise_std", c.noise_std},
           {"observe_prob", c.observe_prob},
           {"step_std", c.step_std},
           {"z0_min", c.z0_min},
           {"z0_max", c.z0_max},
           {"latent_risk_max", c.latent_risk_max},
           {"informative_types", type_set_to_json(c.informative_types)},
           {"redundant_types", type_set_to_json(c.redundant_types)},
           {"noise_types", type_set_to_json(c.noise_types)},
           {"note_rate_per_type", rates},
           {"signal_dims", c.signal_dims},
           {"signal_gain", c.signal_gain},
           {"note_noise_std", c.note_noise_std},
           {"background_std", c.background_std},
           {"horizon_h", c.horizon_h},
           {"death_threshold", c.death_threshold},
           {"seed", c.seed},
           {"require_positive_labels", c.require_positive_labels}};
}

void from_json(const json& j, SynthConfig& c) {
  const json defaults = SynthConfig{};
  for (const auto& [key, value] : j.items())
    if (!defaults.contains(key)) throw std::invalid_argument("synth config: unknown key '" + key + "'");
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) j.at(key).get_to(field);
  };
  get("n_train", c.n_train);
  get("n_val", c.n_val);
  get("n_test", c.n_test);
  get("t_min", c.t_min);
  get("t_max", c.t_max);
  get("d_ehr_observed", c.d_ehr_observed);
  get("ehr_lag_h", c.ehr_lag_h);
  get("noise_std", c.noise_std);
  get("observe_prob", c.observe_prob);
  get("step_std", c.step_std);
  get("z0_min", c.z0_min);
  get("z0_max", c.z0_max);
  get("latent_risk_max", c.latent_risk_max);
  if (j.contains("informative_types")) c.informative_types = type_set_from_json(j["informative_types"]);
  if (j.contains("redundant_types")) c.redundant_types = type_set_from_json(j["redundant_types"]);
  if (j.contains("noise_types")) c.noise_types = type_set_from_json(j["noise_types"]);
  if (j.contains("note_rate_per_type")) {
    c.note_rate_per_type.clear();
    for (const auto& [name, rate] : j["note_rate_per_type"].items())
      c.note_rate_per_type[parse_note_type(name)] = rate.get<double>();
  }
  get("signal_dims", c.signal_dims);
  get("signal_gain", c.signal_gain);
  get("note_noise_std", c.note_noise_std);
  get("background_std", c.background_std);
  get("horizon_h", c.horizon_h);
  if (j.contains("death_threshold")) {
    // JSON has no infinity; null and very large values both disable deaths.
    c.death_threshold = j["death_threshold"].is_null() ? INFINITY : j["death_threshold"].get<double>();
  }
  get("seed", c.seed);
  get("require_positive_labels", c.require_positive_labels);
}

namespace {

enum class Role { kInformative, kRedundant, kNoise };

Role role_of(const SynthConfig& cfg, NoteType t) {
  if (cfg.informative_types.contains(t)) return Role::kInformative;
  if (cfg.redundant_types.contains(t)) return Role::kRedundant;
  return Role::kNoise;
}

/// Cohort-level constants shared by every stay.
struct World {
  std::vector<std::vector<float>> centroids;  // per note type
  std::vector<double> ehr_gain, ehr_offset;   // per signal feature
  std::vector<std::array<double, 4>> pheno_loadings;
  std::vector<double> pheno_bias;

  explicit World(const SynthConfig& cfg) {
    for (std::size_t t = 0; t < kNumNoteTypes; ++t) {
      Rng rng(derive_seed(cfg.seed, "centroid" + std::to_string(t)));
      std::vector<float> c(kNoteEmbeddingDim);
      for (auto& x : c) x = static_cast<float>(rng.normal(0.0, 0.5));
      centroids.push_back(std::move(c));
    }
    Rng rng(derive_seed(cfg.seed, "world"));
    for (std::size_t c = 0; c < cfg.d_ehr_observed; ++c) {
      ehr_gain.push_back(rng.uniform(0.8, 1.2));
      ehr_offset.push_back(rng.uniform(-0.5, 0.5));
    }
    for (std::size_t k = 0; k < kPhenotypes; ++k) {
      std::array<double, 4> w{};
      for (auto& x : w) x = rng.normal();
      pheno_loadings.push_back(w);
      pheno_bias.push_back(rng.uniform(-0.5, 1.5));
    }
  }
};

double reflect(double x) {
  while (x < 0.0 || x > 1.0) x = x < 0.0 ? -x : 2.0 - x;
  return x;
}

constexpr std::size_t kFactorViewStart = 26;  // 8 factor views, then 8 one-hot columns
constexpr std::size_t kOneHotStart = 34;
constexpr std::size_t kOneHotLevels = 8;

/// EHR grid for hours [0, hours) given severity on hours [-lag, hours).
Tensor<float> make_ehr(const SynthConfig& cfg, const World& world, Rng& rng, const std::vector<double>& z_hist,
                       std::size_t hours, const std::array<double, 4>& factors, double other_noise = 1.0) {
  constexpr float kMissing = std::numeric_limits<float>::quiet_NaN();
  Tensor<float> ehr = Tensor<float>::matrix(hours, kEhrFeatures, kMissing);
  std::size_t level = rng.below(kOneHotLevels);
  for (std::size_t t = 0; t < hours; ++t) {
    const double lagged = z_hist[t];  // z_hist[k] is the severity at hour k - lag
    for (std::size_t c = 0; c < kOneHotStart; ++c) {
      double x;
      if (c < cfg.d_ehr_observed) x = world.ehr_offset[c] + world.ehr_gain[c] * lagged + rng.normal(0.0, cfg.noise_std);
      else if (c >= kFactorViewStart) x = factors[(c - kFactorViewStart) / 2] + rng.normal(0.0, 0.5 * other_noise);
      else x = rng.normal(0.0, other_noise);
      if (rng.uniform() < cfg.observe_prob) ehr(t, c) = static_cast<float>(x);
    }
    if (rng.uniform() < 0.05) level = rng.below(kOneHotLevels);
    if (rng.uniform() < cfg.observe_prob)
      for (std::size_t k = 0; k < kOneHotLevels; ++k) ehr(t, kOneHotStart + k) = k == level ? 1.0f : 0.0f;
  }
  return ehr;
}

/// The lagged severity as the EHR charts it at `hour`: mean of the last
/// observed signal features, mapped back to the severity scale.
double charted_severity(const SynthConfig& cfg, const World& world, const Tensor<float>& ehr, std::size_t hour,
                        double fallback) {
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t c = 0; c < cfg.d_ehr_observed; ++c) {
    for (std::size_t t = hour + 1; t-- > 0;) {
      if (!std::isnan(ehr(t, c))) {
        sum += (ehr(t, c) - world.ehr_offset[c]) / world.ehr_gain[c];
        ++n;
        break;
      }
    }
  }
  return n ? sum / static_cast<double>(n) : fallback;
}

NoteRecord make_note(const SynthConfig& cfg, const World& world, Rng& rng, NoteType type, double signal) {
  NoteRecord note;
  note.type = type;
  note.embedding = world.centroids[static_cast<std::size_t>(type)];
  for (auto& x : note.embedding) x += static_cast<float>(rng.normal(0.0, cfg.background_std));
  if (!std::isnan(signal))
    for (std::size_t d : cfg.signal_dims)
      note.embedding[d] = world.centroids[static_cast<std::size_t>(type)][d] +
                          static_cast<float>(cfg.signal_gain * signal + rng.normal(0.0, cfg.note_noise_std));
  return note;
}

void place_note(NoteRecord& note, double tau, double admit_hour) {
  if (is_date_only(note.type)) {
    const int day = static_cast<int>(std::floor((admit_hour + tau) / 24.0));
    note.chart_day = day;
    const ChartTime ct = assign_charttime(day, admit_hour);
    note.charttime_h = ct.hours;
    note.charttime_clamped = ct.clamped;
  } else {
    note.charttime_h = tau;
  }
}

void sort_notes(StayRecord& stay, std::vector<double>* aligned) {
  std::vector<std::size_t> order(stay.notes.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return stay.notes[a].charttime_h < stay.notes[b].charttime_h;
  });
  std::vector<NoteRecord> notes;
  std::vector<double> values;
  for (std::size_t i : order) {
    notes.push_back(std::move(stay.notes[i]));
    if (aligned) values.push_back((*aligned)[i]);
  }
  stay.notes = std::move(notes);
  for (std::size_t i = 0; i < stay.notes.size(); ++i) stay.notes[i].group = i;
  if (aligned) *aligned = std::move(values);
}

std::string stay_id(std::size_t index) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "s%05zu", index);
  return buf;
}

}  // namespace

SynthStay generate_stay(const SynthConfig& cfg, std::size_t index) {
  const World world(cfg);
  Rng rng(derive_seed(cfg.seed, static_cast<std::uint64_t>(index)));
  SynthStay out;
  out.split = index < cfg.n_train ? Split::kTrain : index < cfg.n_train + cfg.n_val ? Split::kVal : Split::kTest;
  StayRecord& stay = out.stay;
  stay.stay_id = stay_id(index);
  stay.admit_hour = static_cast<double>(rng.below(24));

  const std::size_t t_cap = cfg.t_min + rng.below(cfg.t_max - cfg.t_min + 1);
  const std::size_t lag = cfg.ehr_lag_h;
  std::vector<double> z_hist(t_cap + lag + 1);
  z_hist[0] = rng.uniform(cfg.z0_min, cfg.z0_max);
  for (std::size_t k = 1; k < z_hist.size(); ++k) z_hist[k] = reflect(z_hist[k - 1] + rng.normal(0.0, cfg.step_std));
  const double risk = rng.uniform(0.0, cfg.latent_risk_max);
  out.latent_risk = risk;

  std::size_t hours = t_cap;
  for (std::size_t t = 1; t <= t_cap; ++t) {
    if (z_hist[t + lag] + risk > cfg.death_threshold) {
      hours = t;
      stay.outcome.death_hour = static_cast<double>(t);
      break;
    }
  }
  out.z.assign(z_hist.begin() + static_cast<std::ptrdiff_t>(lag),
               z_hist.begin() + static_cast<std::ptrdiff_t>(lag + hours + 1));
  for (auto& z : out.z) z += risk;

  std::array<double, 4> factors{};
  for (auto& f : factors) f = rng.normal();
  for (std::size_t k = 0; k < kPhenotypes; ++k) {
    double s = rng.normal(0.0, 0.3) - world.pheno_bias[k];
    for (std::size_t i = 0; i < 4; ++i) s += world.pheno_loadings[k][i] * factors[i];
    stay.outcome.pheno[k] = s > 0.0 ? 1 : 0;
  }

  stay.ehr = make_ehr(cfg, world, rng, z_hist, hours, factors);

  for (const auto& [type, rate] : cfg.note_rate_per_type) {
    Rng note_rng(derive_seed(derive_seed(cfg.seed, static_cast<std::uint64_t>(index)), "notes" + std::string(to_string(type))));
    double tau = 0.0;
    while (true) {
      tau += -std::log(1.0 - note_rng.uniform()) / rate;
      if (tau >= static_cast<double>(hours)) break;
      const std::size_t hour = static_cast<std::size_t>(tau);
      const double z_now = out.z[hour];
      double signal = NAN;
      switch (role_of(cfg, type)) {
        case Role::kInformative: signal = z_now; break;
        case Role::kRedundant: signal = charted_severity(cfg, world, stay.ehr, hour, z_hist[hour]); break;
        case Role::kNoise: break;
      }
      NoteRecord note = make_note(cfg, world, note_rng, type, signal);
      place_note(note, tau, stay.admit_hour);
      stay.notes.push_back(std::move(note));
      out.note_z.push_back(z_now);
    }
  }
  sort_notes(stay, &out.note_z);
  return out;
}

std::vector<SynthStay> generate_stays(const SynthConfig& cfg) {
  cfg.validate();
  std::vector<SynthStay> stays;
  stays.reserve(cfg.n_stays());
  for (std::size_t i = 0; i < cfg.n_stays(); ++i) stays.push_back(generate_stay(cfg, i));
  return stays;
}

PrevalenceReport measure_prevalence(const std::vector<SynthStay>& stays) {
  PrevalenceReport report;
  for (const auto& s : stays) {
    auto& p = report.splits[s.split];
    ++p.stays;
    const auto d = make_task_targets(s.stay, Task::kDecompensation);
    for (std::size_t t = 0; t < d.targets.rows(); ++t) {
      ++p.decomp_total;
      p.decomp_positive += d.targets(t, 0) > 0.5f ? 1 : 0;
    }
    const auto m = make_task_targets(s.stay, Task::kInHospitalMortality);
    if (m.mask(0, 0)) {
      ++p.ihm_total;
      p.ihm_positive += m.targets(0, 0) > 0.5f ? 1 : 0;
    }
  }
  return report;
}

std::string PrevalenceReport::to_string() const {
  std::ostringstream os;
  bool first = true;
  for (const auto& [split, p] : splits) {
    os << (first ? "" : "; ") << cmt::to_string(split) << ": " << p.stays << " stays, decompensation "
       << p.decomp_positive << "/" << p.decomp_total << ", ihm " << p.ihm_positive << "/" << p.ihm_total;
    first = false;
  }
  return os.str();
}

PrevalenceReport generate_cohort(const SynthConfig& cfg, const std::filesystem::path& root) {
  auto stays = generate_stays(cfg);
  PrevalenceReport report = measure_prevalence(stays);
  if (cfg.require_positive_labels) {
    for (const auto& [split, p] : report.splits)
      if (p.decomp_positive == 0)
        throw PositiveLabelError("split '" + std::string(to_string(split)) +
                                     "' has no positive labels (" + report.to_string() + ")",
                                 report);
  }
  std::filesystem::create_directories(root);
  std::vector<ManifestEntry> entries;
  for (const auto& s : stays) {
    const std::string dir = "stays/" + s.stay.stay_id + "/";
    ManifestEntry e{s.stay.stay_id, s.split, dir + "ehr.cmt", dir + "notes.jsonl", dir + "outcome.json",
                    s.stay.admit_hour};
    write_stay(root, e, s.stay);
    entries.push_back(std::move(e));
  }
  write_manifest(root, entries);
  std::ofstream(root / "synth_config.json") << json(cfg).dump(2) << "\n";
  return report;
}

void to_json(json& j, const PlantedSignal& p) {
  j = json{{"informative", type_set_to_json(p.informative)},
           {"redundant", type_set_to_json(p.redundant)},
           {"noise", type_set_to_json(p.noise)},
           {"cross_modal_gain_expected", p.cross_modal_gain_expected}};
  if (!p.cross_modal_gain_expected) j["note"] = "no cross-modal gain expected";
}

void from_json(const json& j, PlantedSignal& p) {
  p.informative = type_set_from_json(j.at("informative"));
  p.redundant = type_set_from_json(j.at("redundant"));
  p.noise = type_set_from_json(j.at("noise"));
  p.cross_modal_gain_expected = j.at("cross_modal_gain_expected").get<bool>();
}

PlantedSignal describe_planted_signal(const SynthConfig& cfg) {
  PlantedSignal p;
  p.informative = cfg.informative_types;
  p.redundant = cfg.redundant_types;
  p.noise = cfg.noise_types;
  for (const auto& [type, rate] : cfg.note_rate_per_type)
    if (role_of(cfg, type) == Role::kNoise) p.noise.insert(type);
  bool any_informative = false;
  for (NoteType t : p.informative) any_informative |= cfg.note_rate_per_type.contains(t);
  p.cross_modal_gain_expected = any_informative;
  return p;
}

std::vector<ProbeStay> generate_probe_stays(const SynthConfig& cfg, std::size_t count, std::uint64_t seed) {
  constexpr double kProbeNoiseScale = 0.25;
  cfg.validate();
  if (cfg.informative_types.empty()) throw std::invalid_argument("probe stays need an informative note type");
  if (!std::isfinite(cfg.death_threshold)) throw std::invalid_argument("probe stays need a finite death threshold");
  const World world(cfg);
  const NoteType planted_type = *cfg.informative_types.begin();
  NoteType trailing_type = planted_type == NoteType::kGeneral ? NoteType::kConsult : NoteType::kGeneral;
  for (const auto& [type, rate] : cfg.note_rate_per_type)
    if (role_of(cfg, type) == Role::kNoise) trailing_type = type;
  SynthConfig quiet = cfg;
  quiet.noise_std *= kProbeNoiseScale;

  std::vector<ProbeStay> probes;
  for (std::size_t i = 0; i < count; ++i) {
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(i)));
    ProbeStay probe;
    StayRecord& stay = probe.stay;
    stay.stay_id = "probe" + std::to_string(i);
    stay.admit_hour = 0.0;
    const std::size_t hours = 60 + rng.below(25);
    const std::size_t h = 20 + rng.below(20);
    const std::size_t lag = cfg.ehr_lag_h;
    const double low = rng.uniform(0.05, 0.2);
    // Calm walk; the latent risk sits just below the death threshold.
    const double risk = cfg.death_threshold - low - rng.uniform(0.04, 0.08);
    std::vector<double> z_hist(hours + lag + 1);
    for (auto& z : z_hist) z = std::clamp(low + rng.normal(0.0, 0.01), 0.0, 1.0);
    std::array<double, 4> factors{};
    for (auto& f : factors) f = rng.normal();
    stay.ehr = make_ehr(quiet, world, rng, z_hist, hours, factors, kProbeNoiseScale);

    NoteRecord planted = make_note(cfg, world, rng, planted_type, z_hist[h + lag] + risk);
    place_note(planted, static_cast<double>(h), stay.admit_hour);
    stay.notes.push_back(std::move(planted));
    NoteRecord trailing = make_note(cfg, world, rng, trailing_type, NAN);
    place_note(trailing, static_cast<double>(hours) - 0.5, stay.admit_hour);
    trailing.group = 1;
    stay.notes.push_back(std::move(trailing));
    probe.planted_note = 0;
    probe.planted_hour = static_cast<double>(h);
    probes.push_back(std::move(probe));
  }
  return probes;
}

}  // namespace cmt
