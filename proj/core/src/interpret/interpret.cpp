#include "cmt/interpret/interpret.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <stdexcept>

#include "cmt/data/tensor_io.hpp"

namespace cmt {

using nlohmann::json;

namespace {

[[noreturn]] void reject(const std::string& msg) { throw std::invalid_argument("rollout: " + msg); }

Tensor<double> residual_augment(const Tensor<double>& a) {
  const std::size_t n = a.rows();
  Tensor<double> out = Tensor<double>::matrix(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    double sum = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      out(i, j) = 0.5 * a(i, j) + (i == j ? 0.5 : 0.0);
      sum += out(i, j);
    }
    for (std::size_t j = 0; j < n; ++j) out(i, j) /= sum;
  }
  return out;
}

Tensor<double> matmul(const Tensor<double>& a, const Tensor<double>& b) {
  const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
  Tensor<double> out = Tensor<double>::matrix(n, m);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t p = 0; p < k; ++p) {
      const double x = a(i, p);
      for (std::size_t j = 0; j < m; ++j) out(i, j) += x * b(p, j);
    }
  return out;
}

void check_square_stochastic(const Tensor<double>& a, std::size_t n, double tolerance, const std::string& what) {
  if (a.rank() != 2 || a.rows() != a.cols()) reject(what + " is not square: " + a.shape_string());
  if (a.rows() != n) reject(what + " has size " + std::to_string(a.rows()) + ", expected " + std::to_string(n));
  for (std::size_t i = 0; i < n; ++i) {
    double sum = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      if (!(a(i, j) >= 0.0)) reject(what + " has a negative or NaN entry in row " + std::to_string(i));
      sum += a(i, j);
    }
    if (std::abs(sum - 1.0) > tolerance) reject(what + " row " + std::to_string(i) + " sums to " + std::to_string(sum));
  }
}

}  // namespace

void RolloutInput::validate(double tolerance) const {
  if (layers.empty()) reject("no layers");
  const std::size_t n = layers.front().rows();
  if (n == 0) reject("empty layer");
  for (std::size_t l = 0; l < layers.size(); ++l) check_square_stochastic(layers[l], n, tolerance, "layer_" + std::to_string(l));
  if (!tokens.empty() && tokens.size() != n) reject("token count differs from layer size");
  if (!word_groups.empty() && word_groups.size() != n) reject("word_groups length differs from layer size");
}

RolloutInput load_rollout_input(const std::filesystem::path& path) {
  const TensorMap<float> raw = load_tensor_map(path);
  std::map<std::size_t, Tensor<double>> by_index;
  for (const auto& [name, t] : raw) {
    if (name.rfind("layer_", 0) != 0) continue;
    std::size_t idx = 0;
    const char* first = name.data() + 6;
    const char* last = name.data() + name.size();
    auto res = std::from_chars(first, last, idx);
    if (res.ec != std::errc() || res.ptr != last) throw FormatError("rollout input: bad tensor name '" + name + "'");
    Tensor<double> layer;
    if (t.rank() == 3) {
      const std::size_t heads = t.shape()[0], n = t.shape()[1], m = t.shape()[2];
      layer = Tensor<double>::matrix(n, m);
      for (std::size_t h = 0; h < heads; ++h)
        for (std::size_t i = 0; i < n * m; ++i) layer[i] += t[h * n * m + i];
      for (auto& x : layer.values()) x /= static_cast<double>(heads);
    } else if (t.rank() == 2) {
      layer = t.cast<double>();
    } else {
      throw FormatError("rollout input: " + name + " has shape " + t.shape_string());
    }
    by_index.emplace(idx, std::move(layer));
  }
  RolloutInput in;
  std::size_t expect = 0;
  for (auto& [idx, layer] : by_index) {
    if (idx != expect++) throw FormatError("rollout input: layers are not numbered 0..L-1");
    in.layers.push_back(std::move(layer));
  }

  std::ifstream side(path.string() + ".json", std::ios::binary);
  if (side) {
    json j;
    try {
      j = json::parse(side);
    } catch (const json::parse_error& e) {
      throw FormatError(std::string("rollout sidecar: ") + e.what());
    }
    in.tokens = j.value("tokens", std::vector<std::string>{});
    in.word_groups = j.value("word_groups", std::vector<int>{});
    if (j.contains("chunk_tokens") && !j["chunk_tokens"].is_null())
      in.chunk_tokens = j["chunk_tokens"].get<std::vector<std::size_t>>();
  }
  in.validate();
  return in;
}

void save_rollout_input(const std::filesystem::path& path, const RolloutInput& input) {
  TensorMap<float> tensors;
  for (std::size_t l = 0; l < input.layers.size(); ++l)
    tensors.emplace("layer_" + std::to_string(l), input.layers[l].cast<float>());
  save_tensor_map(path, tensors);
  std::ofstream side(path.string() + ".json", std::ios::binary);
  side << json{{"tokens", input.tokens}, {"word_groups", input.word_groups}, {"chunk_tokens", input.chunk_tokens}}.dump()
       << "\n";
  if (!side) throw std::runtime_error("cannot write " + path.string() + ".json");
}

Tensor<double> extend_rollout(const Tensor<double>& prefix, std::span<const Tensor<double>> layers) {
  Tensor<double> r = prefix;
  for (const auto& a : layers) {
    if (a.rank() != 2 || a.rows() != r.rows() || a.cols() != r.rows()) reject("layer shape " + a.shape_string());
    r = matmul(residual_augment(a), r);
  }
  return r;
}

Tensor<double> attention_rollout(const RolloutInput& input) {
  input.validate();
  const std::size_t n = input.size();
  Tensor<double> eye = Tensor<double>::matrix(n, n);
  for (std::size_t i = 0; i < n; ++i) eye(i, i) = 1.0;
  return extend_rollout(eye, input.layers);
}

WordImportance word_importance(const Tensor<double>& rollout, std::size_t cls_index, std::span<const int> word_groups,
                               std::span<const std::size_t> chunk_tokens) {
  const std::size_t n = rollout.rows();
  if (rollout.rank() != 2 || rollout.cols() != n) reject("rollout matrix is not square");
  if (cls_index >= n) reject("cls_index " + std::to_string(cls_index) + " out of range");
  if (word_groups.size() != n) reject("word_groups length differs from token count");
  WordImportance out;
  out.token_scores.assign(rollout.row(cls_index).begin(), rollout.row(cls_index).end());

  int max_word = -1;
  for (int w : word_groups) {
    if (w < -1) reject("word index below -1");
    max_word = std::max(max_word, w);
  }
  out.word_scores.assign(static_cast<std::size_t>(max_word + 1), 0.0);
  std::vector<std::size_t> owned(out.word_scores.size(), 0);
  for (std::size_t i = 0; i < n; ++i) {
    if (word_groups[i] < 0) continue;
    out.word_scores[static_cast<std::size_t>(word_groups[i])] += out.token_scores[i];
    ++owned[static_cast<std::size_t>(word_groups[i])];
  }
  for (std::size_t w = 0; w < owned.size(); ++w)
    if (owned[w] == 0) reject("word " + std::to_string(w) + " has no tokens");

  if (!chunk_tokens.empty()) {
    std::size_t begin = 0;
    for (std::size_t count : chunk_tokens) {
      if (count == 0) reject("empty chunk");
      if (begin + count > n) reject("chunk token counts exceed token count");
      double sum = 0.0;
      for (std::size_t i = begin; i < begin + count; ++i) sum += out.token_scores[i];
      out.chunk_scores.push_back(sum / static_cast<double>(count));
      begin += count;
    }
    if (begin != n) reject("chunk token counts do not cover every token");
  }
  return out;
}

CrossAttentionExport cross_attention_map(const StayRecord& prepared, const ModelParams& params) {
  if (!params.config.uses_notes()) throw std::invalid_argument("cross attention needs a model that reads notes");
  const StayInput input = make_stay_input(prepared);
  const Prediction p = predict(params, input);
  CrossAttentionExport out;
  out.stay_id = prepared.stay_id;
  out.matrix = Tensor<float>::matrix(input.hours(), prepared.notes.size());
  if (p.attention.cross_attn) {
    const auto& a = *p.attention.cross_attn;
    for (std::size_t t = 0; t < a.rows(); ++t)
      for (std::size_t j = 0; j < a.cols(); ++j) out.matrix(t, input.note_source[j]) = a(t, j);
  }
  for (const auto& n : prepared.notes) {
    out.note_types.push_back(n.type);
    out.note_hours.push_back(n.charttime_h);
    out.note_visible.push_back(n.visible);
  }
  return out;
}

namespace {

std::string fmt(double v) {
  char buf[64];
  auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw std::runtime_error("cannot write " + path.string());
}

}  // namespace

CrossAttentionExport export_cross_attention(const StayRecord& prepared, const ModelParams& params,
                                            const std::filesystem::path& out) {
  CrossAttentionExport e = cross_attention_map(prepared, params);
  if (out.has_parent_path()) std::filesystem::create_directories(out.parent_path());
  save_tensor_map(out.string() + ".cmt", {{"cross_attention", e.matrix}});
  std::string heat = "hour,note,weight\n";
  for (std::size_t t = 0; t < e.matrix.rows(); ++t)
    for (std::size_t j = 0; j < e.matrix.cols(); ++j)
      heat += std::to_string(t) + "," + std::to_string(j) + "," + fmt(e.matrix(t, j)) + "\n";
  write_file(out.string() + "_heatmap.csv", heat);
  std::string notes = "note,type,charttime_h,visible\n";
  for (std::size_t j = 0; j < e.note_types.size(); ++j)
    notes += std::to_string(j) + "," + std::string(to_string(e.note_types[j])) + "," + fmt(e.note_hours[j]) + "," +
             (e.note_visible[j] ? "1" : "0") + "\n";
  write_file(out.string() + "_notes.csv", notes);
  return e;
}

void to_json(json& j, const DivergenceHour& h) {
  j = json{{"hour", h.hour},
           {"delta", h.delta},
           {"note", h.note ? json(*h.note) : json(nullptr)},
           {"max_attention", h.max_attention},
           {"entropy", h.entropy}};
}

void to_json(json& j, const DivergenceReport& r) {
  j = json{{"stay_id", r.stay_id}, {"threshold", r.threshold}, {"p_ehr", r.p_ehr},
           {"p_cross", r.p_cross}, {"divergence", r.hours}};
}

DivergenceReport divergence_report(const StayInput& input, const ModelParams& ehr_only, const ModelParams& cross,
                                   double threshold) {
  if (ehr_only.config.task != cross.config.task) throw std::invalid_argument("divergence: models differ in task");
  const Prediction pe = predict(ehr_only, input);
  const Prediction pc = predict(cross, input);
  DivergenceReport r;
  r.stay_id = input.stay_id;
  r.threshold = threshold;
  auto sigmoid = [](double z) { return 1.0 / (1.0 + std::exp(-z)); };
  for (std::size_t t = 0; t < input.hours(); ++t) {
    r.p_ehr.push_back(sigmoid(pe.logits(t, 0)));
    r.p_cross.push_back(sigmoid(pc.logits(t, 0)));
    const double delta = r.p_cross.back() - r.p_ehr.back();
    if (!(std::abs(delta) > threshold)) continue;
    DivergenceHour h;
    h.hour = t;
    h.delta = delta;
    if (pc.attention.cross_attn && pc.attention.cross_attn->cols() > 0) {
      const auto row = pc.attention.cross_attn->row(t);
      const auto it = std::max_element(row.begin(), row.end());
      if (*it > 0.0f) {
        h.note = input.note_source[static_cast<std::size_t>(it - row.begin())];
        h.max_attention = *it;
        for (float w : row)
          if (w > 0.0f) h.entropy -= static_cast<double>(w) * std::log(static_cast<double>(w));
      }
    }
    r.hours.push_back(h);
  }
  return r;
}

}  // namespace cmt
