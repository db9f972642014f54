#pragma once

#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace im2markup {

// Bidirectional token <-> id map. Ids are dense: <pad>=0, <bos>=1, <eos>=2,
// then the real tokens. K (the softmax support) counts every entry except
// <pad>.
class Vocab {
 public:
  static constexpr int kPad = 0;
  static constexpr int kBos = 1;
  static constexpr int kEos = 2;

  static const std::string& pad_token();
  static const std::string& bos_token();
  static const std::string& eos_token();

  Vocab() = default;
  // tokens must not contain the specials; they are deduplicated and sorted.
  static Vocab from_tokens(std::vector<std::string> tokens);

  static Vocab load(const std::string& path);
  void save(const std::string& path) const;

  int total() const { return static_cast<int>(id_to_token_.size()); }
  int num_classes() const { return total() - 1; }  // everything but <pad>

  bool contains(const std::string& token) const;
  int id(const std::string& token) const;  // throws on unknown token
  const std::string& token(int id) const;

  // Encodes whitespace-split tokens, optionally appending <eos>.
  std::vector<int> encode(const std::vector<std::string>& words,
                          bool append_eos = true) const;
  // Drops <pad> and <bos>, stops after <eos> (excluded).
  std::vector<std::string> decode(std::span<const int> ids) const;

 private:
  std::vector<std::string> id_to_token_;
  std::unordered_map<std::string, int> token_to_id_;

  void index_tokens();
};

std::vector<std::string> split_tokens(const std::string& line);
std::string join_tokens(const std::vector<std::string>& tokens);

}  // namespace im2markup
