#include "cmt/model/model.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>

#include "cmt/autodiff/layers.hpp"
#include "cmt/data/tensor_io.hpp"

namespace cmt {

using nlohmann::json;

std::string_view to_string(Mode m) {
  switch (m) {
    case Mode::kEhrOnly: return "ehr_only";
    case Mode::kTextOnly: return "text_only";
    case Mode::kCrossModal: return "cross_modal";
  }
  return "cross_modal";
}

Mode parse_mode(std::string_view name) {
  if (name == "ehr_only") return Mode::kEhrOnly;
  if (name == "text_only") return Mode::kTextOnly;
  if (name == "cross_modal") return Mode::kCrossModal;
  throw std::invalid_argument("unknown mode '" + std::string(name) + "'");
}

void CrossModalConfig::validate() const {
  auto fail = [](const std::string& msg) { throw std::invalid_argument("model config: " + msg); };
  if (d_model == 0 || d_model % 2 != 0) fail("d_model must be even and positive");
  if (n_layers == 0) fail("n_layers must be >= 1");
  if (n_heads == 0 || d_model % n_heads != 0) fail("n_heads must divide d_model");
  if (!(dropout >= 0.0 && dropout < 1.0)) fail("dropout must lie in [0, 1)");
  if (d_ehr != kEhrFeatures) fail("d_ehr must be 42");
  if (d_cn != kNoteFeatures) fail("d_cn must be 769");
  if (d_ff == 0) fail("d_ff must be positive");
}

void to_json(json& j, const CrossModalConfig& c) {
  j = json{{"d_model", c.d_model}, {"n_layers", c.n_layers}, {"n_heads", c.n_heads},
           {"dropout", c.dropout}, {"mode", std::string(to_string(c.mode))},
           {"d_ehr", c.d_ehr},     {"d_cn", c.d_cn},
           {"d_ff", c.d_ff},       {"task", std::string(to_string(c.task))}};
}

void from_json(const json& j, CrossModalConfig& c) {
  const json defaults = CrossModalConfig{};
  for (const auto& [key, value] : j.items())
    if (!defaults.contains(key)) throw std::invalid_argument("model config: unknown key '" + key + "'");
  if (j.contains("d_model")) j["d_model"].get_to(c.d_model);
  if (j.contains("n_layers")) j["n_layers"].get_to(c.n_layers);
  if (j.contains("n_heads")) j["n_heads"].get_to(c.n_heads);
  if (j.contains("dropout")) j["dropout"].get_to(c.dropout);
  if (j.contains("mode")) c.mode = parse_mode(j["mode"].get<std::string>());
  if (j.contains("d_ehr")) j["d_ehr"].get_to(c.d_ehr);
  if (j.contains("d_cn")) j["d_cn"].get_to(c.d_cn);
  if (j.contains("d_ff")) j["d_ff"].get_to(c.d_ff);
  if (j.contains("task")) c.task = parse_task(j["task"].get<std::string>());
}

namespace {

void add_block_shapes(std::map<std::string, std::vector<std::size_t>>& shapes, const std::string& prefix,
                      std::size_t d, std::size_t d_ff) {
  for (const char* w : {"wq", "wk", "wv", "wo"}) shapes[prefix + w] = {d, d};
  for (const char* b : {"bq", "bv", "bo", "ln1_gain", "ln1_bias", "ln2_gain", "ln2_bias", "ffn_b2"})
    shapes[prefix + b] = {d};
  shapes[prefix + "ffn_w1"] = {d, d_ff};
  shapes[prefix + "ffn_b1"] = {d_ff};
  shapes[prefix + "ffn_w2"] = {d_ff, d};
}

bool ends_with(const std::string& s, std::string_view suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

}  // namespace

std::map<std::string, std::vector<std::size_t>> parameter_shapes(const CrossModalConfig& cfg) {
  cfg.validate();
  const std::size_t d = cfg.d_model;
  std::map<std::string, std::vector<std::size_t>> shapes;
  // The text-only query clock embeds zeros, so it still reads the EHR bias.
  shapes["ehr_embed.w"] = {cfg.d_ehr, d};
  shapes["ehr_embed.b"] = {d};
  if (cfg.uses_ehr()) {
    for (std::size_t l = 0; l < cfg.n_layers; ++l) add_block_shapes(shapes, "self." + std::to_string(l) + ".", d, cfg.d_ff);
    shapes["fuse.w_self"] = {d, d};
  }
  if (cfg.uses_notes()) {
    shapes["note_embed.w"] = {cfg.d_cn, d};
    shapes["note_embed.b"] = {d};
    for (std::size_t l = 0; l < cfg.n_layers; ++l) add_block_shapes(shapes, "cross." + std::to_string(l) + ".", d, cfg.d_ff);
    shapes["fuse.w_cross"] = {d, d};
  }
  shapes["fuse.b"] = {d};
  shapes["head.w"] = {d, cfg.n_outputs()};
  shapes["head.b"] = {cfg.n_outputs()};
  return shapes;
}

std::size_t ModelParams::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : tensors) n += t.size();
  return n;
}

ModelParams init_params(const CrossModalConfig& cfg, std::uint64_t seed) {
  ModelParams p;
  p.config = cfg;
  for (const auto& [name, shape] : parameter_shapes(cfg)) {
    Tensor<float> t(shape);
    if (ends_with(name, "gain")) {
      for (auto& x : t.values()) x = 1.0f;
    } else if (shape.size() == 2) {
      Rng rng(derive_seed(seed, name));
      const double bound = 1.0 / std::sqrt(static_cast<double>(shape[0]));
      for (auto& x : t.values()) x = static_cast<float>(rng.uniform(-bound, bound));
    }
    p.tensors.emplace(name, std::move(t));
  }
  return p;
}

StayInput make_stay_input(const StayRecord& stay) {
  NoteMatrix m = build_note_matrix(stay);
  StayInput in;
  in.stay_id = stay.stay_id;
  in.ehr = stay.ehr;
  in.notes = std::move(m.features);
  in.note_hours = std::move(m.hours);
  in.note_source = std::move(m.source_index);
  return in;
}

Mask build_cross_mask(std::size_t ehr_hours, std::span<const double> note_times, const std::vector<bool>& visible) {
  if (note_times.size() != visible.size()) throw std::invalid_argument("build_cross_mask: length mismatch");
  Mask mask(ehr_hours, note_times.size(), false);
  for (std::size_t t = 0; t < ehr_hours; ++t)
    for (std::size_t j = 0; j < note_times.size(); ++j)
      mask.set(t, j, visible[j] && note_times[j] <= static_cast<double>(t));
  return mask;
}

template <typename T>
ParamVars bind_parameters(Graph<T>& g, const TensorMap<T>& tensors) {
  ParamVars vars;
  for (const auto& [name, t] : tensors) vars.emplace(name, g.parameter(t));
  return vars;
}

namespace {

Var lookup(const ParamVars& params, const std::string& name) {
  auto it = params.find(name);
  if (it == params.end()) throw std::invalid_argument("model parameters lack '" + name + "'");
  return it->second;
}

BlockVars block_vars(const ParamVars& p, const std::string& prefix) {
  auto v = [&](const char* n) { return lookup(p, prefix + n); };
  return {v("wq"),     v("bq"),       v("wk"),       Var{},          v("wv"),     v("bv"),
          v("wo"),     v("bo"),       v("ln1_gain"), v("ln1_bias"),  v("ffn_w1"), v("ffn_b1"),
          v("ffn_w2"), v("ffn_b2"),   v("ln2_gain"), v("ln2_bias")};
}

template <typename T>
Tensor<T> to_tensor(const Tensor<float>& t) {
  if constexpr (std::is_same_v<T, float>) return t;
  else return t.template cast<T>();
}

}  // namespace

template <typename T>
ForwardOutput<T> forward(Graph<T>& g, const StayInput& input, const ParamVars& params, const CrossModalConfig& cfg,
                         Rng* dropout_rng) {
  const std::size_t hours = input.hours();
  if (hours == 0) throw std::invalid_argument("forward: stay '" + input.stay_id + "' has no EHR hours");
  if (input.ehr.cols() != cfg.d_ehr)
    throw std::invalid_argument("forward: EHR width " + std::to_string(input.ehr.cols()) + " differs from config");
  if (input.notes.rows() > 0 && input.notes.cols() != cfg.d_cn)
    throw std::invalid_argument("forward: note width differs from config");

  const BlockOptions opts{cfg.n_heads, cfg.dropout};
  ForwardOutput<T> out;
  out.attention.stay_id = input.stay_id;
  const Var pe_ehr = g.constant(positional_encoding<T>(hours, cfg.d_model));

  // EHR stream: embedded hours plus PE, or embedded zeros plus PE as a pure
  // query clock in text-only mode.
  const Tensor<T> ehr_in = cfg.uses_ehr() ? to_tensor<T>(input.ehr) : Tensor<T>::matrix(hours, cfg.d_ehr);
  const Var x0 = g.add(
      linear_embed(g, g.constant(ehr_in), lookup(params, "ehr_embed.w"), lookup(params, "ehr_embed.b")), pe_ehr);

  Var h;  // fused per-hour representation before the head bias
  if (cfg.uses_ehr()) {
    Var x = x0;
    const Mask causal = Mask::causal(hours);
    for (std::size_t l = 0; l < cfg.n_layers; ++l) {
      auto block = transformer_block(g, x, x, causal, block_vars(params, "self." + std::to_string(l) + "."), opts,
                                     dropout_rng);
      x = block.out;
      out.attention.self_attn = std::move(block.weights);
    }
    h = g.matmul(x, lookup(params, "fuse.w_self"));
  }

  if (cfg.uses_notes()) {
    const std::size_t n_notes = input.notes.rows();
    Var c;
    if (n_notes == 0) {
      c = g.constant(Tensor<T>::matrix(hours, cfg.d_model));
      out.attention.cross_attn = Tensor<T>::matrix(hours, 0);
    } else {
      Var q = x0;
      Var kv = g.add(linear_embed(g, g.constant(to_tensor<T>(input.notes)), lookup(params, "note_embed.w"),
                                  lookup(params, "note_embed.b")),
                     g.constant(positional_encoding<T>(n_notes, cfg.d_model)));
      const std::vector<bool> visible(n_notes, true);
      const Mask mask = build_cross_mask(hours, input.note_hours, visible);
      std::vector<std::uint8_t> has_key(hours);
      for (std::size_t t = 0; t < hours; ++t) has_key[t] = mask.row_any(t) ? 1 : 0;
      for (std::size_t l = 0; l < cfg.n_layers; ++l) {
        auto block = transformer_block(g, q, kv, mask, block_vars(params, "cross." + std::to_string(l) + "."), opts,
                                       dropout_rng);
        q = block.out;
        out.attention.cross_attn = std::move(block.weights);
      }
      // Hours that cannot see any note contribute nothing from this branch.
      c = g.zero_rows(q, std::move(has_key));
    }
    Var projected = g.matmul(c, lookup(params, "fuse.w_cross"));
    h = h.valid() ? g.add(h, projected) : projected;
  }

  Var fused = g.add_bias(h, lookup(params, "fuse.b"));
  out.logits = linear_embed(g, fused, lookup(params, "head.w"), lookup(params, "head.b"));
  return out;
}

Prediction predict(const ModelParams& params, const StayInput& input) {
  Graph<float> g;
  ParamVars vars;
  for (const auto& [name, t] : params.tensors) vars.emplace(name, g.constant(t));
  auto out = forward(g, input, vars, params.config, nullptr);
  return {g.value(out.logits), std::move(out.attention)};
}

template <typename T>
std::optional<Var> pool_for_task(Graph<T>& g, Var logits, Task task) {
  const std::size_t hours = g.value(logits).rows();
  switch (task) {
    case Task::kDecompensation: return logits;
    case Task::kInHospitalMortality:
      if (static_cast<double>(hours) < kIhmHours) return std::nullopt;
      return g.select_row(logits, static_cast<std::size_t>(kIhmHours) - 1);
    case Task::kPhenotyping: return g.select_row(logits, hours - 1);
  }
  return std::nullopt;
}

std::optional<Tensor<float>> pool_for_task(const Tensor<float>& logits, Task task) {
  Graph<float> g;
  auto v = pool_for_task(g, g.constant(logits), task);
  if (!v) return std::nullopt;
  Tensor<float> out = g.value(*v);
  if (out.rank() == 1) out = Tensor<float>({1, out.size()}, out.storage());
  return out;
}

void save_checkpoint(const std::filesystem::path& path, const ModelParams& params, const CheckpointMeta& meta) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  save_tensor_map(path, params.tensors);
  json j{{"config", params.config},
         {"seed", meta.seed},
         {"step", meta.step},
         {"parameter_count", params.parameter_count()},
         {"extra", meta.extra}};
  std::ofstream out(path.string() + ".json", std::ios::binary);
  out << j.dump(2) << "\n";
  if (!out) throw std::runtime_error("cannot write " + path.string() + ".json");
}

ModelParams load_checkpoint(const std::filesystem::path& path, CheckpointMeta* meta) {
  std::ifstream in(path.string() + ".json", std::ios::binary);
  if (!in) throw FormatError("missing checkpoint metadata " + path.string() + ".json");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw FormatError(std::string("malformed checkpoint metadata: ") + e.what());
  }
  ModelParams p;
  p.config = j.at("config").get<CrossModalConfig>();
  p.tensors = load_tensor_map(path);
  const auto shapes = parameter_shapes(p.config);
  for (const auto& [name, shape] : shapes) {
    auto it = p.tensors.find(name);
    if (it == p.tensors.end()) throw FormatError("checkpoint lacks tensor '" + name + "'");
    if (it->second.shape() != shape)
      throw FormatError("checkpoint tensor '" + name + "' has shape " + it->second.shape_string());
  }
  if (p.tensors.size() != shapes.size()) throw FormatError("checkpoint holds unexpected tensors");
  if (meta) {
    meta->seed = j.value("seed", std::uint64_t{0});
    meta->step = j.value("step", std::uint64_t{0});
    meta->extra = j.value("extra", json::object());
  }
  return p;
}

template ParamVars bind_parameters(Graph<float>&, const TensorMap<float>&);
template ParamVars bind_parameters(Graph<double>&, const TensorMap<double>&);
template ForwardOutput<float> forward(Graph<float>&, const StayInput&, const ParamVars&, const CrossModalConfig&, Rng*);
template ForwardOutput<double> forward(Graph<double>&, const StayInput&, const ParamVars&, const CrossModalConfig&,
                                       Rng*);
template std::optional<Var> pool_for_task(Graph<float>&, Var, Task);
template std::optional<Var> pool_for_task(Graph<double>&, Var, Task);

}  // namespace cmt
