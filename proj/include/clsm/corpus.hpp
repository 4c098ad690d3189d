#pragma once

// Quantized monophonic tracks, their token encoding, windowing, transposition
// augmentation, the five-way identity split and the window manifest.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "clsm/errors.hpp"
#include "clsm/tokens.hpp"

namespace clsm::corpus {

inline constexpr int kStepsPerBar = 16;
inline constexpr int kWindowSteps = 128;
inline constexpr int kMaxRestRun = kStepsPerBar;

struct Note {
  int start = 0;     // step index
  int duration = 1;  // steps, >= 1
  int pitch = 60;    // MIDI pitch
  friend bool operator==(const Note&, const Note&) = default;
};

// Notes on a 16-steps-per-bar grid; sorted, non-overlapping.
struct QuantizedTrack {
  int length = 0;  // total steps
  std::vector<Note> notes;
  friend bool operator==(const QuantizedTrack&, const QuantizedTrack&) = default;

  bool monophonic() const {
    for (std::size_t i = 1; i < notes.size(); ++i)
      if (notes[i].start < notes[i - 1].start + notes[i - 1].duration) return false;
    return true;
  }
  int min_pitch() const {
    int m = 1000;
    for (const auto& n : notes) m = std::min(m, n.pitch);
    return m;
  }
  int max_pitch() const {
    int m = -1;
    for (const auto& n : notes) m = std::max(m, n.pitch);
    return m;
  }
};

inline TokenSeq encode_track(const QuantizedTrack& track) {
  if (!track.monophonic()) throw InvalidInput("encode_track: overlapping notes");
  TokenSeq out(static_cast<std::size_t>(track.length), alphabet::kRest);
  for (const auto& n : track.notes) {
    const Token p = alphabet::pitch_token(n.pitch);
    if (n.duration < 1 || n.start < 0 || n.start + n.duration > track.length)
      throw InvalidInput("encode_track: note outside track bounds");
    out[static_cast<std::size_t>(n.start)] = p;
    for (int k = 1; k < n.duration; ++k) out[static_cast<std::size_t>(n.start + k)] = alphabet::kHold;
  }
  return out;
}

// Inverse of encode_track. A hold with no sounding note before it cannot come
// from a track and is rejected.
inline QuantizedTrack decode_track(const TokenSeq& tokens) {
  QuantizedTrack t;
  t.length = static_cast<int>(tokens.size());
  for (int i = 0; i < t.length; ++i) {
    const Token tok = tokens[static_cast<std::size_t>(i)];
    if (alphabet::is_pitch(tok)) {
      t.notes.push_back({i, 1, alphabet::token_pitch(tok)});
    } else if (tok == alphabet::kHold) {
      if (t.notes.empty() || t.notes.back().start + t.notes.back().duration != i)
        throw InvalidToken("decode_track: hold at step " + std::to_string(i) + " follows no note");
      ++t.notes.back().duration;
    } else if (tok != alphabet::kRest) {
      throw InvalidToken("decode_track: non-data token");
    }
  }
  return t;
}

inline int longest_rest_run(const TokenSeq& tokens) {
  int best = 0, run = 0;
  for (Token t : tokens) {
    run = t == alphabet::kRest ? run + 1 : 0;
    best = std::max(best, run);
  }
  return best;
}

// Windows of `window` steps at a stride of one bar; windows with more than a
// bar of consecutive rests are dropped.
inline std::vector<TokenSeq> make_windows(const TokenSeq& track_tokens, int window = kWindowSteps,
                                          int stride = kStepsPerBar, int max_rest_run = kMaxRestRun) {
  std::vector<TokenSeq> out;
  const int n = static_cast<int>(track_tokens.size());
  for (int off = 0; off + window <= n; off += stride) {
    TokenSeq w(track_tokens.begin() + off, track_tokens.begin() + off + window);
    if (longest_rest_run(w) <= max_rest_run) out.push_back(std::move(w));
  }
  return out;
}

inline std::size_t candidate_window_count(std::size_t track_len, int window = kWindowSteps,
                                          int stride = kStepsPerBar) {
  if (track_len < static_cast<std::size_t>(window)) return 0;
  return (track_len - static_cast<std::size_t>(window)) / static_cast<std::size_t>(stride) + 1;
}

inline QuantizedTrack transpose(QuantizedTrack t, int shift) {
  for (auto& n : t.notes) n.pitch += shift;
  return t;
}

inline bool in_range(const QuantizedTrack& t) {
  return t.notes.empty() || (t.min_pitch() >= alphabet::kMinPitch && t.max_pitch() <= alphabet::kMaxPitch);
}

// One copy per shift in [-11, 11] that keeps every pitch in [55, 84], in
// ascending shift order. An empty track yields itself once.
inline std::vector<QuantizedTrack> augment_transpose(const QuantizedTrack& track) {
  if (track.notes.empty()) return {track};
  std::vector<QuantizedTrack> out;
  for (int s = -11; s <= 11; ++s) {
    auto t = transpose(track, s);
    if (in_range(t)) out.push_back(std::move(t));
  }
  return out;
}

// Token-level transposition for pre-tokenized corpora.
inline TokenSeq transpose_tokens(const TokenSeq& seq, int shift) {
  TokenSeq out = seq;
  for (auto& t : out)
    if (alphabet::is_pitch(t)) t = alphabet::pitch_token(alphabet::token_pitch(t) + shift);
  return out;
}

// ---------------------------------------------------------------------------
// identity split

enum class Split { Train1, Val1, Train2, Val2, Test };
inline constexpr std::array<Split, 5> kSplits = {Split::Train1, Split::Val1, Split::Train2, Split::Val2, Split::Test};

inline std::string split_name(Split s) {
  switch (s) {
    case Split::Train1: return "train1";
    case Split::Val1: return "val1";
    case Split::Train2: return "train2";
    case Split::Val2: return "val2";
    case Split::Test: return "test";
  }
  return "?";
}

inline Split parse_split(const std::string& name) {
  for (Split s : kSplits)
    if (split_name(s) == name) return s;
  throw InvalidInput("unknown split '" + name + "'");
}

struct CorpusSplit {
  std::array<std::vector<std::string>, 5> identities;

  std::vector<std::string>& operator[](Split s) { return identities[static_cast<std::size_t>(s)]; }
  const std::vector<std::string>& operator[](Split s) const { return identities[static_cast<std::size_t>(s)]; }
  std::array<std::size_t, 5> sizes() const {
    std::array<std::size_t, 5> out{};
    for (std::size_t i = 0; i < 5; ++i) out[i] = identities[i].size();
    return out;
  }
};

// 11:1:6:1:1 by identity count. Each minor split gets floor(n * r / 20), at
// least one; the remainder goes to train-1.
inline CorpusSplit split_corpus(std::vector<std::string> ids, std::uint64_t seed) {
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  if (ids.size() < kSplits.size())
    throw InsufficientData("split_corpus: need at least 5 identities, got " + std::to_string(ids.size()));
  std::mt19937_64 rng(seed);
  std::shuffle(ids.begin(), ids.end(), rng);
  const std::size_t n = ids.size();
  constexpr std::array<std::size_t, 5> ratio = {11, 1, 6, 1, 1};
  std::array<std::size_t, 5> size{};
  std::size_t minor = 0;
  for (std::size_t i = 1; i < 5; ++i) {
    size[i] = std::max<std::size_t>(1, n * ratio[i] / 20);
    minor += size[i];
  }
  size[0] = n - minor;
  CorpusSplit out;
  std::size_t pos = 0;
  for (std::size_t i = 0; i < 5; ++i) {
    out.identities[i].assign(ids.begin() + static_cast<std::ptrdiff_t>(pos),
                             ids.begin() + static_cast<std::ptrdiff_t>(pos + size[i]));
    pos += size[i];
  }
  return out;
}

// ---------------------------------------------------------------------------
// manifest: one JSON record per line {"split", "identity", "tokens"}

struct WindowRecord {
  Split split = Split::Train1;
  std::string identity;
  TokenSeq tokens;
};

struct Manifest {
  std::vector<WindowRecord> records;

  std::vector<TokenSeq> windows(Split s) const {
    std::vector<TokenSeq> out;
    for (const auto& r : records)
      if (r.split == s) out.push_back(r.tokens);
    return out;
  }
  std::size_t count(Split s) const {
    std::size_t n = 0;
    for (const auto& r : records) n += r.split == s;
    return n;
  }
};

inline void write_manifest(const Manifest& m, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw InvalidInput("cannot write manifest " + path.string());
  for (const auto& r : m.records) {
    nlohmann::json j;
    j["split"] = split_name(r.split);
    j["identity"] = r.identity;
    j["tokens"] = to_text(r.tokens);
    out << j.dump() << '\n';
  }
}

inline Manifest read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InvalidInput("cannot read manifest " + path.string());
  Manifest m;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      auto j = nlohmann::json::parse(line);
      WindowRecord r;
      r.split = parse_split(j.at("split").get<std::string>());
      r.identity = j.at("identity").get<std::string>();
      r.tokens = from_text(j.at("tokens").get<std::string>());
      m.records.push_back(std::move(r));
    } catch (const nlohmann::json::exception& e) {
      throw InvalidInput(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return m;
}

// Accepts either the manifest file or the directory holding manifest.jsonl.
inline Manifest load_corpus(const std::filesystem::path& where) {
  if (std::filesystem::is_directory(where)) return read_manifest(where / "manifest.jsonl");
  return read_manifest(where);
}

}  // namespace clsm::corpus
