#include "preflab/motion.hpp"

#include <algorithm>
#include <set>

#include "preflab/error.hpp"
#include "preflab/random.hpp"

namespace preflab {

namespace {

const char* direction_word(Move m) {
  switch (m) {
    case Move::Up: return "up";
    case Move::Down: return "down";
    case Move::Left: return "left";
    case Move::Right: return "right";
    case Move::Stay: return "in place";
  }
  return "?";
}

std::string steps(int n) { return std::to_string(n) + (n == 1 ? " step" : " steps"); }

constexpr std::array<Move, 4> kDirections{Move::Up, Move::Down, Move::Left, Move::Right};

}  // namespace

const char* move_name(Move m) {
  switch (m) {
    case Move::Up: return "U";
    case Move::Down: return "D";
    case Move::Left: return "L";
    case Move::Right: return "R";
    case Move::Stay: return "STAY";
  }
  return "?";
}

std::optional<Move> move_from_name(const std::string& name) {
  if (name == "U") return Move::Up;
  if (name == "D") return Move::Down;
  if (name == "L") return Move::Left;
  if (name == "R") return Move::Right;
  if (name == "STAY") return Move::Stay;
  return std::nullopt;
}

Move opposite(Move m) {
  switch (m) {
    case Move::Up: return Move::Down;
    case Move::Down: return Move::Up;
    case Move::Left: return Move::Right;
    case Move::Right: return Move::Left;
    case Move::Stay: return Move::Stay;
  }
  return m;
}

bool perpendicular(Move a, Move b) {
  const bool a_vertical = a == Move::Up || a == Move::Down;
  const bool b_vertical = b == Move::Up || b == Move::Down;
  return a != Move::Stay && b != Move::Stay && a_vertical != b_vertical;
}

Point step(Move m) {
  switch (m) {
    case Move::Up: return {0, 1};
    case Move::Down: return {0, -1};
    case Move::Left: return {-1, 0};
    case Move::Right: return {1, 0};
    case Move::Stay: return {0, 0};
  }
  return {};
}

const char* template_name(Template t) {
  switch (t) {
    case Template::Line: return "line";
    case Template::LShape: return "lshape";
    case Template::Square: return "square";
    case Template::Zigzag: return "zigzag";
    case Template::BackAndForth: return "backforth";
  }
  return "?";
}

Template template_from_name(const std::string& name) {
  for (Template t : kAllTemplates)
    if (name == template_name(t)) return t;
  throw ConfigError("unknown prompt template '" + name + "'");
}

void validate(const PromptSpec& spec) {
  if (spec.primary == Move::Stay) throw ConfigError("prompt primary direction cannot be STAY");
  if (spec.length < 1) throw ConfigError("prompt length must be positive");
  switch (spec.tmpl) {
    case Template::Line: break;
    case Template::LShape:
    case Template::Zigzag:
      if (!perpendicular(spec.primary, spec.secondary))
        throw ConfigError(std::string(template_name(spec.tmpl)) + " needs perpendicular directions");
      if (spec.length < 2) throw ConfigError("turning templates need length >= 2");
      break;
    case Template::Square:
      if (!perpendicular(spec.primary, spec.secondary)) throw ConfigError("square needs perpendicular directions");
      if (spec.length % 4 != 0) throw ConfigError("square length must be a multiple of 4");
      break;
    case Template::BackAndForth:
      if (spec.length % 2 != 0) throw ConfigError("back-and-forth length must be even");
      break;
  }
}

std::vector<Move> ideal_moves(const PromptSpec& spec) {
  validate(spec);
  std::vector<Move> out;
  const int n = spec.length;
  switch (spec.tmpl) {
    case Template::Line:
      out.assign(static_cast<std::size_t>(n), spec.primary);
      break;
    case Template::LShape: {
      const int a = (n + 1) / 2;
      out.assign(static_cast<std::size_t>(a), spec.primary);
      out.insert(out.end(), static_cast<std::size_t>(n - a), spec.secondary);
      break;
    }
    case Template::Square: {
      const auto side = static_cast<std::size_t>(n / 4);
      for (Move m : {spec.primary, spec.secondary, opposite(spec.primary), opposite(spec.secondary)})
        out.insert(out.end(), side, m);
      break;
    }
    case Template::Zigzag:
      for (int i = 0; i < n; ++i) out.push_back(i % 2 == 0 ? spec.primary : spec.secondary);
      break;
    case Template::BackAndForth: {
      const auto half = static_cast<std::size_t>(n / 2);
      out.assign(half, spec.primary);
      out.insert(out.end(), half, opposite(spec.primary));
      break;
    }
  }
  return out;
}

std::string render_text(const PromptSpec& spec) {
  validate(spec);
  const std::string p = direction_word(spec.primary);
  const std::string s = direction_word(spec.secondary);
  switch (spec.tmpl) {
    case Template::Line:
      return "walk " + p + " for " + steps(spec.length);
    case Template::LShape: {
      const int a = (spec.length + 1) / 2;
      return "walk " + p + " for " + steps(a) + ", then turn " + s + " for " + steps(spec.length - a);
    }
    case Template::Square:
      return "trace a square with side " + std::to_string(spec.length / 4) + ", starting " + p + " and turning " + s;
    case Template::Zigzag:
      return "zigzag " + p + " and " + s + " for " + steps(spec.length);
    case Template::BackAndForth:
      return "walk " + p + " for " + steps(spec.length / 2) + " and come back";
  }
  return {};
}

std::string prompt_id(const PromptSpec& spec) {
  validate(spec);
  std::string id = template_name(spec.tmpl);
  id += '-';
  id += move_name(spec.primary);
  if (spec.tmpl != Template::Line && spec.tmpl != Template::BackAndForth) {
    id += '-';
    id += move_name(spec.secondary);
  }
  id += '-' + std::to_string(spec.length);
  return id;
}

Prompt make_prompt(const PromptSpec& spec) { return Prompt{prompt_id(spec), spec, render_text(spec)}; }

PromptSpec gen_prompt(std::uint64_t seed, int max_moves) {
  if (max_moves < 2) throw ConfigError("gen_prompt needs max_moves >= 2");
  Rng rng(derive_seed(seed, 0x70726f6d7074ULL));
  auto pick = [&](int lo, int hi) { return lo + static_cast<int>(rng() % static_cast<std::uint64_t>(hi - lo + 1)); };

  std::vector<Template> feasible{Template::Line, Template::LShape, Template::Zigzag, Template::BackAndForth};
  if (max_moves >= 4) feasible.insert(feasible.begin() + 2, Template::Square);

  PromptSpec spec;
  spec.tmpl = feasible[rng() % feasible.size()];
  spec.primary = kDirections[rng() % 4];
  const bool vertical = spec.primary == Move::Up || spec.primary == Move::Down;
  const bool flip = (rng() & 1U) != 0;
  spec.secondary = vertical ? (flip ? Move::Left : Move::Right) : (flip ? Move::Down : Move::Up);
  switch (spec.tmpl) {
    case Template::Line:
    case Template::LShape:
    case Template::Zigzag:
      spec.length = pick(2, max_moves);
      break;
    case Template::Square:
      spec.length = 4;
      break;
    case Template::BackAndForth:
      spec.length = 2 * pick(1, max_moves / 2);
      break;
  }
  if (spec.tmpl == Template::Line || spec.tmpl == Template::BackAndForth) spec.secondary = opposite(spec.primary);
  return spec;
}

std::vector<Prompt> gen_unique_prompts(std::uint64_t seed, std::size_t count, int max_moves) {
  std::vector<Prompt> out;
  std::set<std::vector<Move>> seen;
  for (std::uint64_t i = 0; out.size() < count; ++i) {
    if (i > 1000 * count + 1000) throw ConfigError("cannot draw enough distinct prompts for max_moves");
    const PromptSpec spec = gen_prompt(derive_seed(seed, i), max_moves);
    if (seen.insert(ideal_moves(spec)).second) out.push_back(make_prompt(spec));
  }
  return out;
}

Path2D decode(const Vocab& vocab, const TokenSeq& seq) {
  Path2D path;
  path.points.reserve(seq.size() + 1);
  for (int t : seq.tokens) {
    if (t == vocab.eos()) break;
    const auto m = move_from_name(vocab.name(t));
    if (!m) throw InvalidSequenceError("token '" + vocab.name(t) + "' is not a move");
    const Point d = step(*m);
    const Point& last = path.points.back();
    path.points.push_back({last.x + d.x, last.y + d.y});
  }
  return path;
}

std::vector<Move> moves_of(const Path2D& path) {
  std::vector<Move> out;
  for (std::size_t i = 1; i < path.points.size(); ++i) {
    const int dx = path.points[i].x - path.points[i - 1].x;
    const int dy = path.points[i].y - path.points[i - 1].y;
    if (dx == 0 && dy == 0) out.push_back(Move::Stay);
    else if (dx == 1 && dy == 0) out.push_back(Move::Right);
    else if (dx == -1 && dy == 0) out.push_back(Move::Left);
    else if (dx == 0 && dy == 1) out.push_back(Move::Up);
    else if (dx == 0 && dy == -1) out.push_back(Move::Down);
    else throw InvalidSequenceError("path has a non-unit step at index " + std::to_string(i));
  }
  return out;
}

std::size_t edit_distance(const std::vector<Move>& a, const std::vector<Move>& b) {
  std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const std::size_t sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

double truth_score(const PromptSpec& spec, const Path2D& path) {
  const auto ideal = ideal_moves(spec);
  const double d = static_cast<double>(edit_distance(moves_of(path), ideal));
  return std::clamp(1.0 - d / static_cast<double>(ideal.size()), 0.0, 1.0);
}

double truth_score(const Vocab& vocab, const Prompt& prompt, const TokenSeq& seq) {
  return truth_score(prompt.spec, decode(vocab, seq));
}

TokenSeq ideal_sequence(const Vocab& vocab, const PromptSpec& spec, int max_len) {
  const auto moves = ideal_moves(spec);
  if (static_cast<int>(moves.size()) > max_len) throw ConfigError("ideal path longer than max length");
  std::vector<int> tokens;
  for (Move m : moves) tokens.push_back(vocab.index_of(move_name(m)));
  if (static_cast<int>(tokens.size()) < max_len) tokens.push_back(vocab.eos());
  return make_seq(vocab, std::move(tokens));
}

}  // namespace preflab
