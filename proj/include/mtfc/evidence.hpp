#pragma once

#include <cstddef>
#include <map>
#include <memory>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace mtfc::evidence {

using Vector = std::vector<double>;

struct SentenceList {
  std::vector<std::string> sentences;
  std::string source_record_id;

  std::size_t size() const { return sentences.size(); }
};

/// Lowercased abbreviations (with trailing period) that do not end a sentence.
const std::set<std::string>& default_abbreviations();

/// Splits on terminal punctuation (. ? !) followed by whitespace. A period
/// ending a token listed in `abbreviations` does not split. Sentences are
/// trimmed; text without terminal punctuation is one sentence.
SentenceList split_sentences(std::string_view text,
                             const std::set<std::string>& abbreviations = default_abbreviations(),
                             std::string source_record_id = {});

/// Sentence-embedding backend contract.
class EmbeddingProvider {
 public:
  virtual ~EmbeddingProvider() = default;
  virtual std::vector<Vector> embed(std::span<const std::string> texts) const = 0;
  virtual std::size_t dimension() const = 0;
  /// False when concurrent embed() calls on one instance are unsafe.
  virtual bool thread_safe() const { return true; }
};

struct RankEntry {
  int index = 0;
  double score = 0.0;
  bool operator==(const RankEntry&) const = default;
};

/// Sorted by score descending, ties by ascending sentence index.
struct SentenceRanking {
  std::vector<RankEntry> entries;
};

/// Cosine similarity; 0 when either vector is all zeros.
double cosine(std::span<const double> a, std::span<const double> b);

/// Scores every sentence by cosine similarity with the whole claim.
SentenceRanking rank_sentences(std::string_view claim, const SentenceList& sentences,
                               const EmbeddingProvider& provider);

struct Selection {
  std::string passage;
  std::vector<int> indices;  // ascending document order
};

/// Keeps the k best-ranked sentences, re-emitted in document order.
Selection select_top_k(const SentenceRanking& ranking, const SentenceList& sentences,
                       std::size_t k);

/// First min(k, count) sentences joined by single spaces.
std::string lead_k_summary(std::string_view text, std::size_t k = 3);

/// Lowercased alphanumeric tokens (ASCII case folding; non-ASCII bytes are
/// kept as token characters).
std::vector<std::string> word_tokens(std::string_view text);

/// How a bag-of-words provider fixes its vocabulary.
struct VocabularyPolicy {
  enum class Mode {
    kFitted,  // vocabulary = sorted distinct tokens of `corpus`; unknown tokens ignored
    kHashed,  // token -> FNV-1a(token) mod `hash_dimension`
  };
  Mode mode = Mode::kFitted;
  std::vector<std::string> corpus;
  std::size_t hash_dimension = 4096;
};

/// Token-count vectors over a fixed vocabulary. Immutable after
/// construction, so concurrent embed() calls are safe.
class BagOfWordsProvider final : public EmbeddingProvider {
 public:
  explicit BagOfWordsProvider(const VocabularyPolicy& policy);

  std::vector<Vector> embed(std::span<const std::string> texts) const override;
  std::size_t dimension() const override { return dimension_; }
  const std::map<std::string, std::size_t>& vocabulary() const { return vocab_; }

 private:
  VocabularyPolicy::Mode mode_;
  std::map<std::string, std::size_t> vocab_;
  std::size_t dimension_ = 0;
};

std::unique_ptr<EmbeddingProvider> bag_of_words_provider(const VocabularyPolicy& policy);

/// Substitutes {claim} and {evidence} in `templ`.
std::string build_model_input(std::string_view templ, std::string_view claim,
                              std::string_view evidence);

inline constexpr std::string_view kDefaultInputTemplate =
    "summarize: claim: {claim} evidence: {evidence}";

}  // namespace mtfc::evidence
