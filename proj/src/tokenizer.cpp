#include "mtfc/tokenizer.hpp"

#include <algorithm>
#include <cctype>
#include <map>

#include "mtfc/errors.hpp"

namespace mtfc {

namespace {

const std::vector<std::string>& specials() {
  static const std::vector<std::string> kSpecials = {"<pad>", "</s>", "<unk>", "<s>"};
  return kSpecials;
}

}  // namespace

Tokenizer::Tokenizer() : Tokenizer(specials()) {}

Tokenizer::Tokenizer(std::vector<std::string> tokens) : id_to_token_(std::move(tokens)) {
  for (std::size_t i = 0; i < id_to_token_.size(); ++i) {
    if (!token_to_id_.emplace(id_to_token_[i], static_cast<int>(i)).second)
      throw SchemaError("tokenizer vocabulary repeats '" + id_to_token_[i] + "'");
  }
}

std::vector<std::string> Tokenizer::split(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (unsigned char c : text) {
    if (std::isalnum(c) || c >= 0x80) {
      cur.push_back(static_cast<char>(std::tolower(c)));
      continue;
    }
    if (!cur.empty()) {
      out.push_back(std::move(cur));
      cur.clear();
    }
    if (!std::isspace(c)) out.emplace_back(1, static_cast<char>(c));
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

Tokenizer Tokenizer::build(std::span<const std::string> texts, std::size_t min_count,
                           std::size_t max_size) {
  std::map<std::string, std::size_t> counts;
  for (const auto& t : texts)
    for (auto& tok : split(t)) ++counts[tok];
  std::vector<std::pair<std::string, std::size_t>> ranked;
  for (auto& [tok, n] : counts)
    if (n >= min_count && std::find(specials().begin(), specials().end(), tok) == specials().end())
      ranked.emplace_back(tok, n);
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  std::vector<std::string> vocab = specials();
  for (auto& [tok, n] : ranked) {
    if (max_size != 0 && vocab.size() >= max_size) break;
    vocab.push_back(tok);
  }
  return Tokenizer(std::move(vocab));
}

std::vector<int> Tokenizer::encode(std::string_view text) const {
  std::vector<int> ids;
  for (const auto& tok : split(text)) ids.push_back(id(tok));
  return ids;
}

std::string Tokenizer::decode(std::span<const int> ids) const {
  std::string out;
  for (int id : ids) {
    if (id == kEos) break;
    if (id == kPad || id == kBos || id < 0 || static_cast<std::size_t>(id) >= size()) continue;
    if (!out.empty()) out.push_back(' ');
    out += id_to_token_[static_cast<std::size_t>(id)];
  }
  return out;
}

int Tokenizer::id(std::string_view token) const {
  auto it = token_to_id_.find(std::string(token));
  return it == token_to_id_.end() ? kUnk : it->second;
}

nlohmann::json Tokenizer::to_json() const {
  return nlohmann::json{{"kind", "word-lowercase"}, {"version", 1}, {"vocab", id_to_token_}};
}

Tokenizer Tokenizer::from_json(const nlohmann::json& j) {
  try {
    if (j.at("kind").get<std::string>() != "word-lowercase")
      throw SchemaError("unsupported tokenizer kind");
    auto vocab = j.at("vocab").get<std::vector<std::string>>();
    if (vocab.size() < specials().size() ||
        !std::equal(specials().begin(), specials().end(), vocab.begin()))
      throw SchemaError("tokenizer vocabulary lacks reserved tokens");
    return Tokenizer(std::move(vocab));
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("bad tokenizer spec: ") + e.what());
  }
}

}  // namespace mtfc
