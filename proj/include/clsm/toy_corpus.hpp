#pragma once

// Synthetic melodies built from scale runs, arpeggios and cadences in random
// keys. Each song is one identity; songs are windowed exactly like real
// tracks and written as token text (one window per line).

#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include "clsm/corpus.hpp"

namespace clsm::corpus {

struct ToyOptions {
  int songs = 220;
  int bars = 16;
  std::uint64_t seed = 7;
};

struct ToySong {
  std::string identity;
  QuantizedTrack track;
};

namespace toy_detail {

constexpr std::array<int, 7> kMajor = {0, 2, 4, 5, 7, 9, 11};
constexpr std::array<int, 7> kMinor = {0, 2, 3, 5, 7, 8, 10};

enum Pattern { kScaleUp, kScaleDown, kArpeggio, kLong, kCadence, kPatternCount };

struct Writer {
  QuantizedTrack& t;
  int root;
  const std::array<int, 7>& scale;
  int pos = 0;

  int pitch(int degree) const { return root + scale[static_cast<std::size_t>(degree % 7)] + 12 * (degree / 7); }
  void note(int degree, int steps) {
    t.notes.push_back({pos, steps, pitch(degree)});
    pos += steps;
  }
  void rest(int steps) { pos += steps; }
};

}  // namespace toy_detail

inline std::vector<ToySong> generate_toy_songs(const ToyOptions& opt) {
  using namespace toy_detail;
  std::mt19937_64 rng(opt.seed);
  std::uniform_int_distribution<int> pick_root(55, 67);
  std::uniform_int_distribution<int> pick_pattern(0, kPatternCount - 1);
  std::uniform_int_distribution<int> pick_degree(0, 2);
  std::bernoulli_distribution minor(0.4), follow(0.7);

  std::vector<ToySong> songs;
  for (int s = 0; s < opt.songs; ++s) {
    ToySong song;
    char name[32];
    std::snprintf(name, sizeof name, "toy_%04d", s);
    song.identity = name;
    song.track.length = opt.bars * kStepsPerBar;
    Writer w{song.track, pick_root(rng), minor(rng) ? kMinor : kMajor};
    int pattern = pick_pattern(rng);
    for (int bar = 0; bar < opt.bars; ++bar) {
      const int d = pick_degree(rng);
      switch (pattern) {
        case kScaleUp:
          for (int i = 0; i < 8; ++i) w.note(d + i, 2);
          break;
        case kScaleDown:
          for (int i = 7; i >= 0; --i) w.note(d + i, 2);
          break;
        case kArpeggio:
          for (int deg : {0, 2, 4, 7}) w.note(d + deg, 4);
          break;
        case kLong:
          w.note(d, 8);
          w.note(d + 4, 8);
          break;
        case kCadence:
          w.note(d + 4, 4);
          w.note(d + 2, 4);
          w.note(d, 4);
          w.rest(4);
          break;
      }
      pattern = follow(rng) ? (pattern + 1) % kPatternCount : pick_pattern(rng);
    }
    songs.push_back(std::move(song));
  }
  return songs;
}

// Writes <dir>/<identity>.txt per song; returns the number of windows.
inline std::size_t write_toy_corpus(const std::filesystem::path& dir, const ToyOptions& opt) {
  std::filesystem::create_directories(dir);
  std::size_t total = 0;
  for (const auto& song : generate_toy_songs(opt)) {
    std::ofstream out(dir / (song.identity + ".txt"));
    for (const auto& w : make_windows(encode_track(song.track))) {
      out << to_text(w) << '\n';
      ++total;
    }
  }
  return total;
}

}  // namespace clsm::corpus
