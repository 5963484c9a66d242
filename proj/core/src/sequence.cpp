#include "preflab/sequence.hpp"

#include <set>
#include <sstream>

#include "preflab/error.hpp"

namespace preflab {

Vocab::Vocab(std::vector<std::string> tokens, int eos) : tokens_(std::move(tokens)), eos_(eos) {
  // A lone eos token is allowed: the only completion is [eos].
  if (tokens_.empty()) throw ConfigError("vocab must contain at least the eos token");
  if (eos_ < 0 || eos_ >= size()) throw ConfigError("eos index out of range");
  std::set<std::string> seen(tokens_.begin(), tokens_.end());
  if (seen.size() != tokens_.size()) throw ConfigError("vocab token names must be unique");
}

Vocab Vocab::motion(bool with_stay) {
  if (with_stay) return Vocab({"U", "D", "L", "R", "STAY", "EOS"}, 5);
  return Vocab({"U", "D", "L", "R", "EOS"}, 4);
}

const std::string& Vocab::name(int index) const {
  if (index < 0 || index >= size()) throw InvalidSequenceError("token index " + std::to_string(index) + " out of range");
  return tokens_[static_cast<std::size_t>(index)];
}

int Vocab::index_of(std::string_view name) const {
  for (std::size_t i = 0; i < tokens_.size(); ++i)
    if (tokens_[i] == name) return static_cast<int>(i);
  throw InvalidSequenceError("unknown token '" + std::string(name) + "'");
}

TokenSeq make_seq(const Vocab& vocab, std::vector<int> tokens) {
  TokenSeq s;
  s.terminated = !tokens.empty() && tokens.back() == vocab.eos();
  s.tokens = std::move(tokens);
  return s;
}

void validate(const Vocab& vocab, const TokenSeq& seq, int max_len) {
  if (static_cast<int>(seq.size()) > max_len)
    throw InvalidSequenceError("sequence length " + std::to_string(seq.size()) + " exceeds max length " +
                               std::to_string(max_len));
  for (std::size_t i = 0; i < seq.size(); ++i) {
    const int t = seq.tokens[i];
    if (t < 0 || t >= vocab.size())
      throw InvalidSequenceError("token index " + std::to_string(t) + " at position " + std::to_string(i) +
                                 " out of range for vocab of size " + std::to_string(vocab.size()));
    if (t == vocab.eos() && i + 1 != seq.size())
      throw InvalidSequenceError("eos before the end of the sequence at position " + std::to_string(i));
  }
  const bool ends_with_eos = !seq.tokens.empty() && seq.tokens.back() == vocab.eos();
  if (ends_with_eos != seq.terminated) throw InvalidSequenceError("terminated flag disagrees with final token");
}

bool is_complete(const TokenSeq& seq, int max_len) {
  return seq.terminated || static_cast<int>(seq.size()) == max_len;
}

std::string to_string(const Vocab& vocab, const TokenSeq& seq) {
  std::string out;
  for (std::size_t i = 0; i < seq.size(); ++i) {
    if (i) out += ' ';
    out += vocab.name(seq.tokens[i]);
  }
  return out;
}

TokenSeq parse_seq(const Vocab& vocab, std::string_view text) {
  std::istringstream in{std::string(text)};
  std::vector<int> tokens;
  std::string name;
  while (in >> name) tokens.push_back(vocab.index_of(name));
  return make_seq(vocab, std::move(tokens));
}

std::vector<std::string> token_names(const Vocab& vocab, const TokenSeq& seq) {
  std::vector<std::string> out;
  out.reserve(seq.size());
  for (int t : seq.tokens) out.push_back(vocab.name(t));
  return out;
}

TokenSeq from_names(const Vocab& vocab, const std::vector<std::string>& names) {
  std::vector<int> tokens;
  tokens.reserve(names.size());
  for (const auto& n : names) tokens.push_back(vocab.index_of(n));
  return make_seq(vocab, std::move(tokens));
}

}  // namespace preflab
