#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

namespace preflab {

/// Ordered token alphabet with a distinguished end-of-completion token.
class Vocab {
 public:
  Vocab(std::vector<std::string> tokens, int eos);

  /// U, D, L, R, STAY, EOS (or without STAY when `with_stay` is false).
  static Vocab motion(bool with_stay = true);

  int size() const noexcept { return static_cast<int>(tokens_.size()); }
  int eos() const noexcept { return eos_; }
  const std::string& name(int index) const;
  const std::vector<std::string>& tokens() const noexcept { return tokens_; }

  /// Throws InvalidSequenceError for unknown names.
  int index_of(std::string_view name) const;

  friend bool operator==(const Vocab&, const Vocab&) = default;

 private:
  std::vector<std::string> tokens_;
  int eos_;
};

/// A (possibly partial) completion. Complete sequences either end in eos
/// (terminated) or run to exactly the policy's max length.
struct TokenSeq {
  std::vector<int> tokens;
  bool terminated = false;

  std::size_t size() const noexcept { return tokens.size(); }
  friend bool operator==(const TokenSeq&, const TokenSeq&) = default;
  friend auto operator<=>(const TokenSeq& a, const TokenSeq& b) { return a.tokens <=> b.tokens; }
};

/// Builds a sequence, setting `terminated` from the last token.
TokenSeq make_seq(const Vocab& vocab, std::vector<int> tokens);

/// Throws InvalidSequenceError unless every index is in range, eos appears
/// only in last position, `terminated` agrees with the tokens and the length
/// is at most `max_len`.
void validate(const Vocab& vocab, const TokenSeq& seq, int max_len);

bool is_complete(const TokenSeq& seq, int max_len);

std::string to_string(const Vocab& vocab, const TokenSeq& seq);

/// Parses whitespace separated token names.
TokenSeq parse_seq(const Vocab& vocab, std::string_view text);

std::vector<std::string> token_names(const Vocab& vocab, const TokenSeq& seq);
TokenSeq from_names(const Vocab& vocab, const std::vector<std::string>& names);

}  // namespace preflab
