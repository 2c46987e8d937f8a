#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "mtfc/corpus.hpp"
#include "mtfc/kernels.hpp"

namespace mtfc::metrics {

/// Precision, recall and F-measure on a 0-1 scale.
struct RougeScore {
  double precision = 0.0;
  double recall = 0.0;
  double f_measure = 0.0;

  /// f = 2pr / (p + r), or 0 when p + r == 0.
  static RougeScore from(double precision, double recall);
  bool operator==(const RougeScore&) const = default;
};

struct RougeConfig {
  bool stem = false;  // Porter-stem tokens before matching
};

/// Lowercase, split on non-alphanumerics, optionally stem.
std::vector<std::string> rouge_tokens(std::string_view text, const RougeConfig& config = {});

/// Clipped n-gram overlap on pre-tokenized sequences.
RougeScore rouge_n(std::span<const std::string> candidate, std::span<const std::string> reference,
                   std::size_t n);
RougeScore rouge_n(std::string_view candidate, std::string_view reference, std::size_t n,
                   const RougeConfig& config = {});

std::size_t lcs_length(std::span<const std::string> a, std::span<const std::string> b);

/// LCS-based precision/recall over tokens.
RougeScore rouge_l(std::span<const std::string> candidate, std::span<const std::string> reference);
RougeScore rouge_l(std::string_view candidate, std::string_view reference,
                   const RougeConfig& config = {});

struct RougeSummary {
  RougeScore rouge1, rouge2, rouge_l;
  std::size_t pairs = 0;
};

/// Per-pair ROUGE-1/2/L averaged over pairs. The parallel path scores pairs
/// concurrently and reduces in index order, so both policies agree exactly.
RougeSummary corpus_rouge(std::span<const std::string> candidates,
                          std::span<const std::string> references, const RougeConfig& config = {},
                          kernels::Policy policy = kernels::default_policy());

/// counts[gold][predicted] over a label space.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(corpus::LabelSpace labels);

  void add(int gold, int predicted);
  std::size_t at(std::size_t gold, std::size_t predicted) const;
  std::size_t size() const { return labels_.size(); }
  std::size_t total() const;
  std::size_t row_sum(std::size_t gold) const;
  std::size_t column_sum(std::size_t predicted) const;
  const corpus::LabelSpace& labels() const { return labels_; }
  std::vector<std::vector<std::size_t>> rows() const;

  bool operator==(const ConfusionMatrix&) const = default;

 private:
  corpus::LabelSpace labels_;
  std::vector<std::size_t> counts_;
};

ConfusionMatrix confusion_matrix(std::span<const int> predictions, std::span<const int> golds,
                                 const corpus::LabelSpace& labels);
ConfusionMatrix confusion_matrix(std::span<const std::string> predictions,
                                 std::span<const std::string> golds,
                                 const corpus::LabelSpace& labels);

struct ClassMetrics {
  std::string label;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  double accuracy = 0.0;  // diagonal / row sum
  std::size_t support = 0;
};

/// All values in percent (0-100).
///
/// `precision` and `recall` are support-weighted averages over classes
/// (weighted recall equals accuracy); the macro versions are reported
/// alongside.
struct ClassificationReport {
  double precision = 0.0;
  double recall = 0.0;
  double precision_macro = 0.0;
  double recall_macro = 0.0;
  double f1_macro = 0.0;
  double f1_weighted = 0.0;
  double accuracy = 0.0;
  std::vector<ClassMetrics> per_class;
  std::vector<std::string> warnings;
};

ClassificationReport classification_report(const ConfusionMatrix& matrix);

/// Accuracy (percent) over pairs whose gold label is not `excluded`.
double binary_accuracy_excluding(std::span<const int> predictions, std::span<const int> golds,
                                 int excluded);

nlohmann::json to_json(const RougeScore& s);
nlohmann::json to_json(const RougeSummary& s);
nlohmann::json to_json(const ConfusionMatrix& m);
nlohmann::json to_json(const ClassificationReport& r);

/// Fixed two-decimal formatting; `decimal_comma` swaps '.' for ','.
std::string format_fixed(double value, int decimals = 2, bool decimal_comma = false);

/// CSV with LF line ends: header then rows, fields quoted when needed.
std::string render_csv(const std::vector<std::string>& header,
                       const std::vector<std::vector<std::string>>& rows);
/// Space-padded columns separated by " | ".
std::string render_text_table(const std::vector<std::string>& header,
                              const std::vector<std::vector<std::string>>& rows);

}  // namespace mtfc::metrics
