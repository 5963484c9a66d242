#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "preflab/sequence.hpp"

namespace preflab {

enum class Move : std::uint8_t { Up, Down, Left, Right, Stay };

struct Point {
  int x = 0;
  int y = 0;
  friend bool operator==(const Point&, const Point&) = default;
};

/// Grid trajectory starting at the origin; one point per decoded move.
struct Path2D {
  std::vector<Point> points{Point{}};
  friend bool operator==(const Path2D&, const Path2D&) = default;
};

enum class Template : std::uint8_t { Line, LShape, Square, Zigzag, BackAndForth };

inline constexpr std::array<Template, 5> kAllTemplates{Template::Line, Template::LShape, Template::Square,
                                                       Template::Zigzag, Template::BackAndForth};

/// Structured trajectory goal. `secondary` is the turn direction for
/// L-shape, square and zigzag; it is ignored by line and back-and-forth.
struct PromptSpec {
  Template tmpl = Template::Line;
  Move primary = Move::Right;
  Move secondary = Move::Up;
  int length = 3;
  friend bool operator==(const PromptSpec&, const PromptSpec&) = default;
};

struct Prompt {
  std::string id;
  PromptSpec spec;
  std::string text;
  friend bool operator==(const Prompt&, const Prompt&) = default;
};

const char* move_name(Move m);
std::optional<Move> move_from_name(const std::string& name);
Move opposite(Move m);
bool perpendicular(Move a, Move b);
Point step(Move m);

const char* template_name(Template t);
Template template_from_name(const std::string& name);

/// Throws ConfigError if the spec cannot produce an ideal path.
void validate(const PromptSpec& spec);

std::vector<Move> ideal_moves(const PromptSpec& spec);
std::string render_text(const PromptSpec& spec);
std::string prompt_id(const PromptSpec& spec);
Prompt make_prompt(const PromptSpec& spec);

/// Deterministic spec for a seed. Lengths never exceed `max_moves`.
PromptSpec gen_prompt(std::uint64_t seed, int max_moves = 7);

/// `count` prompts with pairwise distinct ideal move strings.
std::vector<Prompt> gen_unique_prompts(std::uint64_t seed, std::size_t count, int max_moves = 7);

/// Cumulative sum of unit moves; eos and anything after it are ignored.
Path2D decode(const Vocab& vocab, const TokenSeq& seq);

/// Move string that produced a path (zero step decodes to Stay).
std::vector<Move> moves_of(const Path2D& path);

std::size_t edit_distance(const std::vector<Move>& a, const std::vector<Move>& b);

/// 1 - edit_distance(path moves, ideal) / |ideal|, clamped to [0, 1].
double truth_score(const PromptSpec& spec, const Path2D& path);

/// Convenience: decode then score.
double truth_score(const Vocab& vocab, const Prompt& prompt, const TokenSeq& seq);

/// Token sequence spelling the ideal path, terminated when it fits in max_len.
TokenSeq ideal_sequence(const Vocab& vocab, const PromptSpec& spec, int max_len);

}  // namespace preflab
