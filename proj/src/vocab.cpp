#include "im2markup/vocab.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "im2markup/error.hpp"

namespace im2markup {

const std::string& Vocab::pad_token() {
  static const std::string s = "<pad>";
  return s;
}
const std::string& Vocab::bos_token() {
  static const std::string s = "<bos>";
  return s;
}
const std::string& Vocab::eos_token() {
  static const std::string s = "<eos>";
  return s;
}

void Vocab::index_tokens() {
  token_to_id_.clear();
  for (size_t i = 0; i < id_to_token_.size(); ++i) {
    token_to_id_[id_to_token_[i]] = static_cast<int>(i);
  }
  if (token_to_id_.size() != id_to_token_.size()) {
    throw ContractError("vocab: duplicate tokens");
  }
}

Vocab Vocab::from_tokens(std::vector<std::string> tokens) {
  std::sort(tokens.begin(), tokens.end());
  tokens.erase(std::unique(tokens.begin(), tokens.end()), tokens.end());
  for (const auto& t : tokens) {
    if (t == pad_token() || t == bos_token() || t == eos_token()) {
      throw ContractError("vocab: token '" + t + "' collides with a special");
    }
    if (t.empty()) throw ContractError("vocab: empty token");
  }
  Vocab v;
  v.id_to_token_ = {pad_token(), bos_token(), eos_token()};
  v.id_to_token_.insert(v.id_to_token_.end(), tokens.begin(), tokens.end());
  v.index_tokens();
  return v;
}

Vocab Vocab::load(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("vocab: cannot open " + path);
  Vocab v;
  std::string line;
  while (std::getline(is, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    v.id_to_token_.push_back(line);
  }
  if (v.id_to_token_.size() < 3 || v.id_to_token_[0] != pad_token() ||
      v.id_to_token_[1] != bos_token() || v.id_to_token_[2] != eos_token()) {
    throw IoError("vocab: " + path + " does not start with the specials");
  }
  v.index_tokens();
  return v;
}

void Vocab::save(const std::string& path) const {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("vocab: cannot write " + path);
  for (const auto& t : id_to_token_) os << t << "\n";
  if (!os) throw IoError("vocab: write failed for " + path);
}

bool Vocab::contains(const std::string& token) const {
  return token_to_id_.count(token) > 0;
}

int Vocab::id(const std::string& token) const {
  auto it = token_to_id_.find(token);
  if (it == token_to_id_.end()) {
    throw ContractError("vocab: unknown token '" + token + "'");
  }
  return it->second;
}

const std::string& Vocab::token(int token_id) const {
  if (token_id < 0 || token_id >= total()) {
    throw ContractError("vocab: id " + std::to_string(token_id) +
                        " out of range [0, " + std::to_string(total()) + ")");
  }
  return id_to_token_[static_cast<size_t>(token_id)];
}

std::vector<int> Vocab::encode(const std::vector<std::string>& words,
                               bool append_eos) const {
  std::vector<int> out;
  out.reserve(words.size() + 1);
  for (const auto& w : words) out.push_back(id(w));
  if (append_eos) out.push_back(kEos);
  return out;
}

std::vector<std::string> Vocab::decode(std::span<const int> ids) const {
  std::vector<std::string> out;
  for (int v : ids) {
    if (v == kEos) break;
    if (v == kPad || v == kBos) continue;
    out.push_back(token(v));
  }
  return out;
}

std::vector<std::string> split_tokens(const std::string& line) {
  std::vector<std::string> out;
  std::istringstream is(line);
  std::string tok;
  while (is >> tok) out.push_back(tok);
  return out;
}

std::string join_tokens(const std::vector<std::string>& tokens) {
  std::string out;
  for (size_t i = 0; i < tokens.size(); ++i) {
    if (i) out += ' ';
    out += tokens[i];
  }
  return out;
}

}  // namespace im2markup
