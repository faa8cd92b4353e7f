#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "dvc/corpus.hpp"

namespace dvc {

using TokenId = int;

class Vocabulary {
 public:
  static constexpr TokenId kPad = 0;
  static constexpr TokenId kBos = 1;
  static constexpr TokenId kEos = 2;
  static constexpr TokenId kUnk = 3;
  static constexpr int kNumSpecials = 4;

  /// Specials only.
  Vocabulary();

  /// Tokens with count >= min_count, ordered by count desc then lexicographically.
  static Vocabulary build(const std::vector<VideoRecord>& corpus, int min_count = 5, int max_len = 30);
  static Vocabulary from_tokens(const std::vector<std::string>& id_to_token, int min_count, int max_len);

  int size() const { return static_cast<int>(id_to_token_.size()); }
  int min_count() const { return min_count_; }
  int max_len() const { return max_len_; }

  TokenId id(const std::string& token) const;
  const std::string& token(TokenId id) const;
  bool contains(const std::string& token) const { return token_to_id_.count(token) != 0; }
  const std::vector<std::string>& tokens() const { return id_to_token_; }

  /// [BOS] + payload (truncated to max_len, unknowns -> UNK) + [EOS].
  std::vector<TokenId> encode(const std::vector<std::string>& tokens) const;
  /// Payload ids without BOS/EOS, truncated to max_len.
  std::vector<TokenId> encode_payload(const std::vector<std::string>& tokens) const;
  /// Stops at the first EOS; skips BOS and PAD. Throws on out-of-range ids.
  std::vector<std::string> decode(const std::vector<TokenId>& ids) const;

  std::string to_json() const;
  static Vocabulary from_json(const std::string& text);
  void save(const std::string& path) const;
  static Vocabulary load(const std::string& path);
  /// Fingerprint of the id order.
  std::string hash() const;

 private:
  std::unordered_map<std::string, TokenId> token_to_id_;
  std::vector<std::string> id_to_token_;
  int min_count_ = 5;
  int max_len_ = 30;
};

}  // namespace dvc
