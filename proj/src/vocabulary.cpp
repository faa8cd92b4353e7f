#include "dvc/vocabulary.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>

#include "json.hpp"

namespace dvc {

namespace {
const std::vector<std::string> kSpecialNames = {"<pad>", "<bos>", "<eos>", "<unk>"};
}

Vocabulary::Vocabulary() {
  for (const auto& s : kSpecialNames) {
    token_to_id_[s] = static_cast<TokenId>(id_to_token_.size());
    id_to_token_.push_back(s);
  }
}

Vocabulary Vocabulary::build(const std::vector<VideoRecord>& corpus, int min_count, int max_len) {
  if (corpus.empty()) throw ValidationError("build_vocabulary: empty corpus");
  std::map<std::string, int> counts;
  for (const auto& v : corpus)
    for (const auto& e : v.events)
      for (const auto& tok : e.sentence) ++counts[tok];
  std::vector<std::pair<std::string, int>> kept;
  for (const auto& [tok, n] : counts)
    if (n >= min_count && std::find(kSpecialNames.begin(), kSpecialNames.end(), tok) == kSpecialNames.end())
      kept.emplace_back(tok, n);
  std::stable_sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) {
    return a.second != b.second ? a.second > b.second : a.first < b.first;
  });
  Vocabulary v;
  v.min_count_ = min_count;
  v.max_len_ = max_len;
  for (const auto& [tok, n] : kept) {
    v.token_to_id_[tok] = static_cast<TokenId>(v.id_to_token_.size());
    v.id_to_token_.push_back(tok);
  }
  return v;
}

Vocabulary Vocabulary::from_tokens(const std::vector<std::string>& id_to_token, int min_count, int max_len) {
  if (id_to_token.size() < kNumSpecials ||
      !std::equal(kSpecialNames.begin(), kSpecialNames.end(), id_to_token.begin()))
    throw ValidationError("vocabulary must start with the four special tokens");
  Vocabulary v;
  v.min_count_ = min_count;
  v.max_len_ = max_len;
  for (std::size_t i = kNumSpecials; i < id_to_token.size(); ++i) {
    if (v.token_to_id_.count(id_to_token[i])) throw ValidationError("duplicate vocabulary token: " + id_to_token[i]);
    v.token_to_id_[id_to_token[i]] = static_cast<TokenId>(i);
    v.id_to_token_.push_back(id_to_token[i]);
  }
  return v;
}

TokenId Vocabulary::id(const std::string& token) const {
  auto it = token_to_id_.find(token);
  return it == token_to_id_.end() ? kUnk : it->second;
}

const std::string& Vocabulary::token(TokenId id) const {
  if (id < 0 || id >= size()) throw std::out_of_range("token id out of vocabulary range: " + std::to_string(id));
  return id_to_token_[id];
}

std::vector<TokenId> Vocabulary::encode_payload(const std::vector<std::string>& tokens) const {
  std::vector<TokenId> out;
  const std::size_t n = std::min<std::size_t>(tokens.size(), static_cast<std::size_t>(max_len_));
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(id(tokens[i]));
  return out;
}

std::vector<TokenId> Vocabulary::encode(const std::vector<std::string>& tokens) const {
  std::vector<TokenId> out{kBos};
  for (TokenId t : encode_payload(tokens)) out.push_back(t);
  out.push_back(kEos);
  return out;
}

std::vector<std::string> Vocabulary::decode(const std::vector<TokenId>& ids) const {
  std::vector<std::string> out;
  for (TokenId t : ids) {
    if (t < 0 || t >= size()) throw std::out_of_range("token id out of vocabulary range: " + std::to_string(t));
    if (t == kEos) break;
    if (t == kBos || t == kPad) continue;
    out.push_back(id_to_token_[t]);
  }
  return out;
}

std::string Vocabulary::to_json() const {
  nlohmann::json j = {{"min_count", min_count_}, {"max_len", max_len_}, {"tokens", id_to_token_}};
  return j.dump(1);
}

Vocabulary Vocabulary::from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ValidationError(std::string("malformed vocabulary JSON: ") + e.what());
  }
  if (!j.contains("tokens") || !j["tokens"].is_array()) throw ValidationError("vocabulary JSON needs a 'tokens' array");
  return from_tokens(j["tokens"].get<std::vector<std::string>>(), j.value("min_count", 5), j.value("max_len", 30));
}

void Vocabulary::save(const std::string& path) const {
  std::ofstream f(path);
  if (!f) throw ValidationError("cannot write " + path);
  f << to_json();
}

Vocabulary Vocabulary::load(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ValidationError("cannot read " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return from_json(ss.str());
}

std::string Vocabulary::hash() const {
  std::string joined = std::to_string(max_len_) + "\n";
  for (const auto& t : id_to_token_) joined += t + "\n";
  return hex64(fnv1a64(joined));
}

}  // namespace dvc
