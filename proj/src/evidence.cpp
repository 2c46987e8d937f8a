#include "mtfc/evidence.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>

#include "mtfc/corpus.hpp"
#include "mtfc/errors.hpp"

namespace mtfc::evidence {

namespace {

bool is_terminal(char c) { return c == '.' || c == '?' || c == '!'; }

bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }

std::string lower(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

}  // namespace

const std::set<std::string>& default_abbreviations() {
  static const std::set<std::string> kAbbrev = {
      "dr.", "mr.", "mrs.", "ms.", "prof.", "sr.", "jr.", "st.", "vs.", "etc.", "e.g.",
      "i.e.", "u.s.", "u.k.", "inc.", "ltd.", "co.", "no.", "jan.", "feb.", "aug.",
      "sept.", "oct.", "nov.", "dec.", "gov.", "sen.", "rep.", "gen.", "lt.", "col."};
  return kAbbrev;
}

SentenceList split_sentences(std::string_view text, const std::set<std::string>& abbreviations,
                             std::string source_record_id) {
  SentenceList out;
  out.source_record_id = std::move(source_record_id);
  std::size_t start = 0;
  auto emit = [&](std::size_t end) {
    auto s = corpus::normalize_whitespace(text.substr(start, end - start));
    if (!s.empty()) out.sentences.push_back(std::move(s));
    start = end;
  };
  for (std::size_t i = 0; i < text.size(); ++i) {
    if (!is_terminal(text[i])) continue;
    // Absorb runs like "?!" or "..." and closing quotes/brackets.
    std::size_t j = i + 1;
    while (j < text.size() && (is_terminal(text[j]) || text[j] == '"' || text[j] == '\'' ||
                               text[j] == ')' || text[j] == ']'))
      ++j;
    if (j < text.size() && !is_space(text[j])) {
      i = j - 1;
      continue;
    }
    if (text[i] == '.' && j == i + 1) {
      std::size_t w = i;
      while (w > start && !is_space(text[w - 1])) --w;
      if (abbreviations.contains(lower(text.substr(w, i + 1 - w)))) continue;
    }
    emit(j);
    i = j - 1;
  }
  emit(text.size());
  return out;
}

double cosine(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ContractError("cosine: dimension mismatch");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) return 0.0;
  const double c = dot / (std::sqrt(na) * std::sqrt(nb));
  return std::clamp(c, -1.0, 1.0);
}

SentenceRanking rank_sentences(std::string_view claim, const SentenceList& sentences,
                               const EmbeddingProvider& provider) {
  if (sentences.sentences.empty()) throw ContractError("rank_sentences: no sentences");
  std::vector<std::string> texts;
  texts.reserve(sentences.size() + 1);
  texts.emplace_back(claim);
  texts.insert(texts.end(), sentences.sentences.begin(), sentences.sentences.end());
  const auto vectors = provider.embed(texts);
  if (vectors.size() != texts.size())
    throw ContractError("embedding provider returned the wrong number of vectors");
  for (const auto& v : vectors)
    if (v.size() != provider.dimension())
      throw ContractError("embedding provider returned dimension " + std::to_string(v.size()) +
                          ", declared " + std::to_string(provider.dimension()));

  SentenceRanking ranking;
  ranking.entries.reserve(sentences.size());
  for (std::size_t i = 0; i < sentences.size(); ++i)
    ranking.entries.push_back({static_cast<int>(i), cosine(vectors[0], vectors[i + 1])});
  std::stable_sort(ranking.entries.begin(), ranking.entries.end(),
                   [](const RankEntry& a, const RankEntry& b) { return a.score > b.score; });
  return ranking;
}

Selection select_top_k(const SentenceRanking& ranking, const SentenceList& sentences,
                       std::size_t k) {
  if (k == 0) throw ContractError("select_top_k: k must be >= 1");
  Selection sel;
  const std::size_t take = std::min(k, ranking.entries.size());
  for (std::size_t i = 0; i < take; ++i) sel.indices.push_back(ranking.entries[i].index);
  std::sort(sel.indices.begin(), sel.indices.end());
  for (int idx : sel.indices) {
    if (idx < 0 || static_cast<std::size_t>(idx) >= sentences.size())
      throw ContractError("select_top_k: ranking index out of range");
    if (!sel.passage.empty()) sel.passage.push_back(' ');
    sel.passage += sentences.sentences[static_cast<std::size_t>(idx)];
  }
  return sel;
}

std::string lead_k_summary(std::string_view text, std::size_t k) {
  const auto sentences = split_sentences(text);
  std::string out;
  for (std::size_t i = 0; i < std::min(k, sentences.size()); ++i) {
    if (!out.empty()) out.push_back(' ');
    out += sentences.sentences[i];
  }
  return out;
}

std::vector<std::string> word_tokens(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (unsigned char c : text) {
    if (std::isalnum(c) || c >= 0x80) {
      cur.push_back(static_cast<char>(std::tolower(c)));
    } else if (!cur.empty()) {
      out.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

BagOfWordsProvider::BagOfWordsProvider(const VocabularyPolicy& policy) : mode_(policy.mode) {
  if (mode_ == VocabularyPolicy::Mode::kHashed) {
    if (policy.hash_dimension == 0) throw ContractError("hash_dimension must be positive");
    dimension_ = policy.hash_dimension;
    return;
  }
  std::set<std::string> tokens;
  for (const auto& text : policy.corpus)
    for (auto& t : word_tokens(text)) tokens.insert(std::move(t));
  for (const auto& t : tokens) vocab_.emplace(t, vocab_.size());
  // A provider fitted on an empty corpus still has a valid (all-zero) space.
  dimension_ = std::max<std::size_t>(vocab_.size(), 1);
}

std::vector<Vector> BagOfWordsProvider::embed(std::span<const std::string> texts) const {
  std::vector<Vector> out;
  out.reserve(texts.size());
  for (const auto& text : texts) {
    Vector v(dimension_, 0.0);
    for (const auto& t : word_tokens(text)) {
      if (mode_ == VocabularyPolicy::Mode::kHashed) {
        v[fnv1a(t) % dimension_] += 1.0;
      } else if (auto it = vocab_.find(t); it != vocab_.end()) {
        v[it->second] += 1.0;
      }
    }
    out.push_back(std::move(v));
  }
  return out;
}

std::unique_ptr<EmbeddingProvider> bag_of_words_provider(const VocabularyPolicy& policy) {
  return std::make_unique<BagOfWordsProvider>(policy);
}

std::string build_model_input(std::string_view templ, std::string_view claim,
                              std::string_view evidence) {
  std::string out;
  for (std::size_t i = 0; i < templ.size();) {
    if (templ.substr(i, 7) == "{claim}") {
      out += claim;
      i += 7;
    } else if (templ.substr(i, 10) == "{evidence}") {
      out += evidence;
      i += 10;
    } else {
      out.push_back(templ[i++]);
    }
  }
  return out;
}

}  // namespace mtfc::evidence
