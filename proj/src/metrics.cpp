#include "mtfc/metrics.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <map>

#include "mtfc/errors.hpp"
#include "mtfc/stemmer.hpp"

namespace mtfc::metrics {

using nlohmann::json;

RougeScore RougeScore::from(double precision, double recall) {
  RougeScore s{precision, recall, 0.0};
  if (precision + recall > 0.0) s.f_measure = 2.0 * precision * recall / (precision + recall);
  return s;
}

std::vector<std::string> rouge_tokens(std::string_view text, const RougeConfig& config) {
  std::vector<std::string> out;
  std::string cur;
  auto flush = [&] {
    if (cur.empty()) return;
    out.push_back(config.stem ? porter_stem(cur) : cur);
    cur.clear();
  };
  for (unsigned char c : text) {
    if (std::isalnum(c)) cur.push_back(static_cast<char>(std::tolower(c)));
    else flush();
  }
  flush();
  return out;
}

namespace {

std::map<std::vector<std::string>, std::size_t> ngram_counts(std::span<const std::string> tokens,
                                                             std::size_t n) {
  std::map<std::vector<std::string>, std::size_t> counts;
  if (tokens.size() < n) return counts;
  for (std::size_t i = 0; i + n <= tokens.size(); ++i)
    ++counts[std::vector<std::string>(tokens.begin() + static_cast<std::ptrdiff_t>(i),
                                      tokens.begin() + static_cast<std::ptrdiff_t>(i + n))];
  return counts;
}

}  // namespace

RougeScore rouge_n(std::span<const std::string> candidate, std::span<const std::string> reference,
                   std::size_t n) {
  if (n == 0) throw ContractError("rouge_n: n must be >= 1");
  if (candidate.size() < n || reference.size() < n) return {};
  const auto cand = ngram_counts(candidate, n);
  const auto ref = ngram_counts(reference, n);
  std::size_t overlap = 0;
  for (const auto& [gram, c] : cand)
    if (auto it = ref.find(gram); it != ref.end()) overlap += std::min(c, it->second);
  const double p = static_cast<double>(overlap) / static_cast<double>(candidate.size() - n + 1);
  const double r = static_cast<double>(overlap) / static_cast<double>(reference.size() - n + 1);
  return RougeScore::from(p, r);
}

RougeScore rouge_n(std::string_view candidate, std::string_view reference, std::size_t n,
                   const RougeConfig& config) {
  const auto c = rouge_tokens(candidate, config);
  const auto r = rouge_tokens(reference, config);
  return rouge_n(std::span<const std::string>(c), std::span<const std::string>(r), n);
}

std::size_t lcs_length(std::span<const std::string> a, std::span<const std::string> b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j)
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

RougeScore rouge_l(std::span<const std::string> candidate,
                   std::span<const std::string> reference) {
  if (candidate.empty() || reference.empty()) return {};
  const double lcs = static_cast<double>(lcs_length(candidate, reference));
  return RougeScore::from(lcs / static_cast<double>(candidate.size()),
                          lcs / static_cast<double>(reference.size()));
}

RougeScore rouge_l(std::string_view candidate, std::string_view reference,
                   const RougeConfig& config) {
  const auto c = rouge_tokens(candidate, config);
  const auto r = rouge_tokens(reference, config);
  return rouge_l(std::span<const std::string>(c), std::span<const std::string>(r));
}

RougeSummary corpus_rouge(std::span<const std::string> candidates,
                          std::span<const std::string> references, const RougeConfig& config,
                          kernels::Policy policy) {
  if (candidates.size() != references.size())
    throw ContractError("corpus_rouge: candidate/reference counts differ");
  const std::size_t n = candidates.size();
  struct PairScores {
    RougeScore r1, r2, rl;
  };
  std::vector<PairScores> scores(n);
  auto score_one = [&](std::size_t i) {
    const auto c = rouge_tokens(candidates[i], config);
    const auto r = rouge_tokens(references[i], config);
    scores[i] = {rouge_n(c, r, 1), rouge_n(c, r, 2), rouge_l(c, r)};
  };
  const auto ni = static_cast<std::ptrdiff_t>(n);
  if (policy == kernels::Policy::kParallel && n > 1) {
#pragma omp parallel for schedule(dynamic, 8)
    for (std::ptrdiff_t i = 0; i < ni; ++i) score_one(static_cast<std::size_t>(i));
  } else {
    for (std::size_t i = 0; i < n; ++i) score_one(i);
  }

  RougeSummary out;
  out.pairs = n;
  if (n == 0) return out;
  auto accumulate = [](RougeScore& acc, const RougeScore& s) {
    acc.precision += s.precision;
    acc.recall += s.recall;
    acc.f_measure += s.f_measure;
  };
  for (const auto& s : scores) {
    accumulate(out.rouge1, s.r1);
    accumulate(out.rouge2, s.r2);
    accumulate(out.rouge_l, s.rl);
  }
  const double inv = 1.0 / static_cast<double>(n);
  for (RougeScore* s : {&out.rouge1, &out.rouge2, &out.rouge_l}) {
    s->precision *= inv;
    s->recall *= inv;
    s->f_measure *= inv;
  }
  return out;
}

// ---------------------------------------------------------------------------

ConfusionMatrix::ConfusionMatrix(corpus::LabelSpace labels)
    : labels_(std::move(labels)), counts_(labels_.size() * labels_.size(), 0) {}

void ConfusionMatrix::add(int gold, int predicted) {
  if (!labels_.contains(gold) || !labels_.contains(predicted))
    throw ContractError("confusion_matrix: label index outside label space '" + labels_.name() +
                        "'");
  ++counts_[static_cast<std::size_t>(gold) * size() + static_cast<std::size_t>(predicted)];
}

std::size_t ConfusionMatrix::at(std::size_t gold, std::size_t predicted) const {
  return counts_.at(gold * size() + predicted);
}

std::size_t ConfusionMatrix::total() const {
  std::size_t t = 0;
  for (auto c : counts_) t += c;
  return t;
}

std::size_t ConfusionMatrix::row_sum(std::size_t gold) const {
  std::size_t s = 0;
  for (std::size_t p = 0; p < size(); ++p) s += at(gold, p);
  return s;
}

std::size_t ConfusionMatrix::column_sum(std::size_t predicted) const {
  std::size_t s = 0;
  for (std::size_t g = 0; g < size(); ++g) s += at(g, predicted);
  return s;
}

std::vector<std::vector<std::size_t>> ConfusionMatrix::rows() const {
  std::vector<std::vector<std::size_t>> out(size());
  for (std::size_t g = 0; g < size(); ++g)
    for (std::size_t p = 0; p < size(); ++p) out[g].push_back(at(g, p));
  return out;
}

ConfusionMatrix confusion_matrix(std::span<const int> predictions, std::span<const int> golds,
                                 const corpus::LabelSpace& labels) {
  if (predictions.size() != golds.size())
    throw ContractError("confusion_matrix: predictions and golds differ in length");
  ConfusionMatrix m(labels);
  for (std::size_t i = 0; i < golds.size(); ++i) m.add(golds[i], predictions[i]);
  return m;
}

ConfusionMatrix confusion_matrix(std::span<const std::string> predictions,
                                 std::span<const std::string> golds,
                                 const corpus::LabelSpace& labels) {
  if (predictions.size() != golds.size())
    throw ContractError("confusion_matrix: predictions and golds differ in length");
  std::vector<int> p, g;
  auto index = [&](const std::string& s) {
    auto idx = labels.index_of(s);
    if (!idx) throw ContractError("confusion_matrix: unknown label '" + s + "'");
    return *idx;
  };
  for (std::size_t i = 0; i < golds.size(); ++i) {
    p.push_back(index(predictions[i]));
    g.push_back(index(golds[i]));
  }
  return confusion_matrix(p, g, labels);
}

ClassificationReport classification_report(const ConfusionMatrix& matrix) {
  const std::size_t total = matrix.total();
  if (total == 0) throw DegenerateInputError("classification_report: confusion matrix is empty");
  ClassificationReport r;
  const double n = static_cast<double>(total);
  const double k = static_cast<double>(matrix.size());
  std::size_t correct = 0;
  for (std::size_t c = 0; c < matrix.size(); ++c) {
    ClassMetrics m;
    m.label = matrix.labels().label(static_cast<int>(c));
    const double tp = static_cast<double>(matrix.at(c, c));
    const std::size_t support = matrix.row_sum(c);
    const std::size_t predicted = matrix.column_sum(c);
    correct += matrix.at(c, c);
    m.support = support;
    m.precision = predicted > 0 ? 100.0 * tp / static_cast<double>(predicted) : 0.0;
    m.recall = support > 0 ? 100.0 * tp / static_cast<double>(support) : 0.0;
    m.accuracy = m.recall;
    m.f1 = m.precision + m.recall > 0.0 ? 2.0 * m.precision * m.recall / (m.precision + m.recall)
                                        : 0.0;
    if (support == 0)
      r.warnings.push_back("class '" + m.label + "' has zero support; counted as 0 in macro averages");
    const double w = static_cast<double>(support) / n;
    r.precision += w * m.precision;
    r.recall += w * m.recall;
    r.f1_weighted += w * m.f1;
    r.precision_macro += m.precision / k;
    r.recall_macro += m.recall / k;
    r.f1_macro += m.f1 / k;
    r.per_class.push_back(std::move(m));
  }
  r.accuracy = 100.0 * static_cast<double>(correct) / n;
  return r;
}

double binary_accuracy_excluding(std::span<const int> predictions, std::span<const int> golds,
                                 int excluded) {
  if (predictions.size() != golds.size())
    throw ContractError("binary_accuracy_excluding: predictions and golds differ in length");
  std::size_t kept = 0, correct = 0;
  for (std::size_t i = 0; i < golds.size(); ++i) {
    if (golds[i] == excluded) continue;
    ++kept;
    if (predictions[i] == golds[i]) ++correct;
  }
  if (kept == 0)
    throw DegenerateInputError("binary_accuracy_excluding: every gold label is the excluded one");
  return 100.0 * static_cast<double>(correct) / static_cast<double>(kept);
}

// ---------------------------------------------------------------------------

json to_json(const RougeScore& s) {
  return json{{"precision", s.precision}, {"recall", s.recall}, {"f_measure", s.f_measure}};
}

json to_json(const RougeSummary& s) {
  return json{{"rouge1", to_json(s.rouge1)},
              {"rouge2", to_json(s.rouge2)},
              {"rougeL", to_json(s.rouge_l)},
              {"pairs", s.pairs}};
}

json to_json(const ConfusionMatrix& m) {
  return json{{"labels", m.labels().labels()}, {"counts", m.rows()}};
}

json to_json(const ClassificationReport& r) {
  json per_class = json::array();
  for (const auto& c : r.per_class)
    per_class.push_back({{"label", c.label},
                         {"precision", c.precision},
                         {"recall", c.recall},
                         {"f1", c.f1},
                         {"accuracy", c.accuracy},
                         {"support", c.support}});
  return json{{"precision", r.precision},
              {"recall", r.recall},
              {"precision_macro", r.precision_macro},
              {"recall_macro", r.recall_macro},
              {"f1_macro", r.f1_macro},
              {"f1_weighted", r.f1_weighted},
              {"accuracy", r.accuracy},
              {"per_class", per_class},
              {"warnings", r.warnings}};
}

std::string format_fixed(double value, int decimals, bool decimal_comma) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", decimals, value);
  std::string s(buf);
  if (decimal_comma) std::replace(s.begin(), s.end(), '.', ',');
  return s;
}

namespace {

std::string csv_field(const std::string& f) {
  if (f.find_first_of(",\"\n\r") == std::string::npos) return f;
  std::string out = "\"";
  for (char c : f) {
    if (c == '"') out.push_back('"');
    out.push_back(c);
  }
  out.push_back('"');
  return out;
}

}  // namespace

std::string render_csv(const std::vector<std::string>& header,
                       const std::vector<std::vector<std::string>>& rows) {
  std::string out;
  auto line = [&](const std::vector<std::string>& fields) {
    for (std::size_t i = 0; i < fields.size(); ++i) {
      if (i) out.push_back(',');
      out += csv_field(fields[i]);
    }
    out.push_back('\n');
  };
  line(header);
  for (const auto& r : rows) line(r);
  return out;
}

std::string render_text_table(const std::vector<std::string>& header,
                              const std::vector<std::vector<std::string>>& rows) {
  std::vector<std::size_t> width(header.size(), 0);
  auto measure = [&](const std::vector<std::string>& fields) {
    for (std::size_t i = 0; i < fields.size() && i < width.size(); ++i)
      width[i] = std::max(width[i], fields[i].size());
  };
  measure(header);
  for (const auto& r : rows) measure(r);
  std::string out;
  auto line = [&](const std::vector<std::string>& fields) {
    for (std::size_t i = 0; i < width.size(); ++i) {
      const std::string f = i < fields.size() ? fields[i] : "";
      if (i) out += " | ";
      out += f;
      if (i + 1 < width.size()) out.append(width[i] - f.size(), ' ');
    }
    out.push_back('\n');
  };
  line(header);
  std::size_t rule = 0;
  for (auto w : width) rule += w;
  rule += 3 * (width.empty() ? 0 : width.size() - 1);
  out.append(rule, '-');
  out.push_back('\n');
  for (const auto& r : rows) line(r);
  return out;
}

}  // namespace mtfc::metrics
