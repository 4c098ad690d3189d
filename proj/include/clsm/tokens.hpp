#pragma once

// Melodico-rhythmic token alphabet and target spans.
//
// Data tokens: pitches 55..84 (indices 0..29), rest "R" (30), hold "__" (31).
// Model-only tokens: positional constraint "p" (32), start "s" (33).

#include <array>
#include <random>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "clsm/errors.hpp"

namespace clsm {

using Token = int;
using TokenSeq = std::vector<Token>;

namespace alphabet {

inline constexpr int kMinPitch = 55;
inline constexpr int kMaxPitch = 84;
inline constexpr int kPitchCount = kMaxPitch - kMinPitch + 1;  // 30
inline constexpr Token kRest = kPitchCount;                      // "R"
inline constexpr Token kHold = kPitchCount + 1;                  // "__"
inline constexpr int kDataSize = kPitchCount + 2;                // 32
inline constexpr Token kConstraint = kDataSize;                  // "p"
inline constexpr Token kStart = kDataSize + 1;                   // "s"
inline constexpr int kModelSize = kDataSize + 2;                 // 34

inline bool is_pitch(Token t) { return t >= 0 && t < kPitchCount; }
inline bool is_data(Token t) { return t >= 0 && t < kDataSize; }

inline Token pitch_token(int midi_pitch) {
  if (midi_pitch < kMinPitch || midi_pitch > kMaxPitch)
    throw OutOfRange("pitch " + std::to_string(midi_pitch) + " outside [55, 84]");
  return midi_pitch - kMinPitch;
}
inline int token_pitch(Token t) { return t + kMinPitch; }

inline std::string to_string(Token t) {
  if (is_pitch(t)) return std::to_string(token_pitch(t));
  switch (t) {
    case kRest: return "R";
    case kHold: return "__";
    case kConstraint: return "p";
    case kStart: return "s";
    default: throw InvalidToken("token index " + std::to_string(t) + " outside the alphabet");
  }
}

// Parses a data token ("55".."84", "R", "__").
inline Token from_string(std::string_view s) {
  if (s == "R") return kRest;
  if (s == "__") return kHold;
  if (!s.empty() && s.size() <= 3) {
    int v = 0;
    for (char c : s) {
      if (c < '0' || c > '9') throw InvalidToken("unknown token '" + std::string(s) + "'");
      v = v * 10 + (c - '0');
    }
    if (v >= kMinPitch && v <= kMaxPitch) return pitch_token(v);
  }
  throw InvalidToken("unknown token '" + std::string(s) + "'");
}

// Ordered symbol table of the data vocabulary; index i holds to_string(i).
inline std::vector<std::string> data_symbols() {
  std::vector<std::string> out;
  for (Token t = 0; t < kDataSize; ++t) out.push_back(to_string(t));
  return out;
}

}  // namespace alphabet

inline std::string to_text(const TokenSeq& seq) {
  std::string out;
  for (std::size_t i = 0; i < seq.size(); ++i) {
    if (i) out += ' ';
    out += alphabet::to_string(seq[i]);
  }
  return out;
}

inline TokenSeq from_text(std::string_view line) {
  TokenSeq out;
  std::istringstream in{std::string(line)};
  std::string tok;
  while (in >> tok) out.push_back(alphabet::from_string(tok));
  return out;
}

inline std::vector<std::string> to_strings(const TokenSeq& seq) {
  std::vector<std::string> out;
  out.reserve(seq.size());
  for (Token t : seq) out.push_back(alphabet::to_string(t));
  return out;
}

// Geometry of the target-span family: windows of `window` steps, bar of
// `bar` steps, targets of 1..max_bars bars starting on a bar line.
struct SpanGrid {
  int window = 128;
  int bar = 16;
  int max_bars = 4;

  std::vector<int> lengths() const {
    std::vector<int> v;
    for (int b = 1; b <= max_bars; ++b) v.push_back(b * bar);
    return v;
  }
};

struct TargetSpan {
  int start = 0;   // |x_CL|
  int length = 0;  // |x_T|

  int end() const { return start + length; }
  bool contains(int pos) const { return pos >= start && pos < end(); }
  friend bool operator==(const TargetSpan&, const TargetSpan&) = default;
};

inline void validate(const TargetSpan& s, const SpanGrid& g = {}) {
  const auto fail = [&](const std::string& why) {
    throw InvalidSpan("span " + std::to_string(s.start) + ":" + std::to_string(s.end()) + " " + why);
  };
  if (s.length <= 0 || s.length % g.bar != 0 || s.length / g.bar > g.max_bars)
    fail("length must be 1.." + std::to_string(g.max_bars) + " bars of " + std::to_string(g.bar) + " steps");
  if (s.start < 0 || s.start % g.bar != 0) fail("start must be a multiple of " + std::to_string(g.bar));
  if (s.end() > g.window) fail("exceeds window length " + std::to_string(g.window));
}

inline bool is_valid(const TargetSpan& s, const SpanGrid& g = {}) {
  try {
    validate(s, g);
    return true;
  } catch (const InvalidSpan&) {
    return false;
  }
}

// Length uniform over the grid's lengths, then start uniform over the bar
// lines that keep the span inside the window.
template <class Rng>
TargetSpan sample_target_span(Rng& rng, const SpanGrid& g = {}) {
  const auto lengths = g.lengths();
  std::uniform_int_distribution<std::size_t> pick_len(0, lengths.size() - 1);
  const int len = lengths[pick_len(rng)];
  std::uniform_int_distribution<int> pick_start(0, (g.window - len) / g.bar);
  return {pick_start(rng) * g.bar, len};
}

// Span that ends the window (left context only).
template <class Rng>
TargetSpan sample_left_contextual_span(Rng& rng, const SpanGrid& g = {}) {
  const auto lengths = g.lengths();
  std::uniform_int_distribution<std::size_t> pick_len(0, lengths.size() - 1);
  const int len = lengths[pick_len(rng)];
  return {g.window - len, len};
}

// Parses "a:b" as the half-open step range [a, b).
inline TargetSpan parse_span(std::string_view text, const SpanGrid& g = {}) {
  const auto colon = text.find(':');
  if (colon == std::string_view::npos) throw InvalidSpan("span must be written start:end");
  try {
    const int a = std::stoi(std::string(text.substr(0, colon)));
    const int b = std::stoi(std::string(text.substr(colon + 1)));
    TargetSpan s{a, b - a};
    validate(s, g);
    return s;
  } catch (const std::logic_error&) {
    throw InvalidSpan("span must be written start:end with integer steps");
  }
}

// Splits a window into (left context, right context) around the span.
inline std::pair<TokenSeq, TokenSeq> contexts_of(const TokenSeq& window, const TargetSpan& s) {
  return {TokenSeq(window.begin(), window.begin() + s.start), TokenSeq(window.begin() + s.end(), window.end())};
}

inline TokenSeq target_of(const TokenSeq& window, const TargetSpan& s) {
  return TokenSeq(window.begin() + s.start, window.begin() + s.end());
}

inline TokenSeq assemble(const TokenSeq& left, const TokenSeq& target, const TokenSeq& right) {
  TokenSeq out;
  out.reserve(left.size() + target.size() + right.size());
  out.insert(out.end(), left.begin(), left.end());
  out.insert(out.end(), target.begin(), target.end());
  out.insert(out.end(), right.begin(), right.end());
  return out;
}

}  // namespace clsm
