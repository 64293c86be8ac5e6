#include "cmt/traineval/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include <boost/math/distributions/students_t.hpp>

namespace cmt {

namespace {

void check_lengths(std::span<const double> scores, std::span<const std::uint8_t> labels) {
  if (scores.size() != labels.size()) throw std::invalid_argument("metric: scores and labels differ in length");
  if (!std::all_of(scores.begin(), scores.end(), [](double s) { return std::isfinite(s); }))
    throw std::invalid_argument("metric: non-finite score");
}

std::vector<std::size_t> order_by_score(std::span<const double> scores, bool descending) {
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    return descending ? scores[a] > scores[b] : scores[a] < scores[b];
  });
  return idx;
}

}  // namespace

std::optional<double> auroc(std::span<const double> scores, std::span<const std::uint8_t> labels) {
  check_lengths(scores, labels);
  const auto idx = order_by_score(scores, false);
  double n_pos = 0, n_neg = 0, pos_rank_sum = 0;
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j < idx.size() && scores[idx[j]] == scores[idx[i]]) ++j;
    // Ranks i+1..j share their mean.
    const double midrank = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k) {
      if (labels[idx[k]]) {
        pos_rank_sum += midrank;
        ++n_pos;
      } else {
        ++n_neg;
      }
    }
    i = j;
  }
  if (n_pos == 0 || n_neg == 0) return std::nullopt;
  return (pos_rank_sum - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg);
}

std::optional<double> auprc(std::span<const double> scores, std::span<const std::uint8_t> labels) {
  check_lengths(scores, labels);
  const auto idx = order_by_score(scores, true);
  const auto total_pos = static_cast<double>(std::count_if(labels.begin(), labels.end(), [](auto l) { return l != 0; }));
  if (total_pos == 0) return std::nullopt;
  double tp = 0, fp = 0, ap = 0;
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    double group_pos = 0;
    while (j < idx.size() && scores[idx[j]] == scores[idx[i]]) {
      if (labels[idx[j]]) ++group_pos;
      else ++fp;
      ++j;
    }
    tp += group_pos;
    if (group_pos > 0) ap += group_pos * (tp / (tp + fp));
    i = j;
  }
  return ap / total_pos;
}

MacroMicro macro_micro_auc(const Tensor<double>& scores, const Tensor<double>& labels) {
  if (!scores.same_shape(labels) || scores.rank() != 2)
    throw std::invalid_argument("macro_micro_auc: scores and labels must be matrices of one shape");
  const std::size_t n = scores.rows(), k = scores.cols();
  MacroMicro out;
  std::vector<double> col_scores(n);
  std::vector<std::uint8_t> col_labels(n);
  double sum = 0;
  std::size_t used = 0;
  for (std::size_t c = 0; c < k; ++c) {
    for (std::size_t r = 0; r < n; ++r) {
      col_scores[r] = scores(r, c);
      col_labels[r] = labels(r, c) > 0.5 ? 1 : 0;
    }
    if (auto a = auroc(col_scores, col_labels)) {
      sum += *a;
      ++used;
    } else {
      ++out.excluded_columns;
    }
  }
  if (used > 0) out.macro = sum / static_cast<double>(used);
  std::vector<std::uint8_t> flat(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) flat[i] = labels[i] > 0.5 ? 1 : 0;
  out.micro = auroc(scores.values(), flat);
  return out;
}

ConfidenceInterval confidence_interval(std::span<const double> values) {
  if (values.empty()) throw std::invalid_argument("confidence_interval: no values");
  ConfidenceInterval ci;
  // Welford updates; identical values give exactly zero spread.
  double m2 = 0.0, k = 0.0;
  for (double v : values) {
    k += 1.0;
    const double delta = v - ci.mean;
    ci.mean += delta / k;
    m2 += delta * (v - ci.mean);
  }
  if (values.size() < 2) return ci;
  const double n = k;
  const double s = std::sqrt(m2 / (n - 1));
  const boost::math::students_t dist(n - 1);
  ci.halfwidth = boost::math::quantile(dist, 0.975) * s / std::sqrt(n);
  return ci;
}

namespace {

nlohmann::json opt(const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); }

std::optional<double> opt_from(const nlohmann::json& j, const char* key) {
  if (!j.contains(key) || j[key].is_null()) return std::nullopt;
  return j[key].get<double>();
}

}  // namespace

void to_json(nlohmann::json& j, const MetricReport& r) {
  j = nlohmann::json{{"auprc", opt(r.auprc)},         {"auroc", opt(r.auroc)}, {"macro_auc", opt(r.macro_auc)},
                     {"micro_auc", opt(r.micro_auc)}, {"n_pos", r.n_pos},      {"n_neg", r.n_neg}};
}

void from_json(const nlohmann::json& j, MetricReport& r) {
  r.auprc = opt_from(j, "auprc");
  r.auroc = opt_from(j, "auroc");
  r.macro_auc = opt_from(j, "macro_auc");
  r.micro_auc = opt_from(j, "micro_auc");
  r.n_pos = j.at("n_pos").get<std::size_t>();
  r.n_neg = j.at("n_neg").get<std::size_t>();
}

}  // namespace cmt
