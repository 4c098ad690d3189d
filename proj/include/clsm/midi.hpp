#pragma once

// Standard MIDI File (format 0/1) reader and the monophonic track extractor
// that feeds the corpus builder.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <string>
#include <vector>

#include "clsm/corpus.hpp"
#include "clsm/errors.hpp"

namespace clsm::midi {

struct NoteEvent {
  std::uint32_t on_tick = 0;
  std::uint32_t off_tick = 0;
  int pitch = 0;
  int channel = 0;
};

struct TempoChange {
  std::uint32_t tick = 0;
  std::uint32_t usec_per_quarter = 500000;
};

struct TimeSignature {
  std::uint32_t tick = 0;
  int numerator = 4;
  int denominator = 4;
};

struct MidiTrack {
  std::vector<NoteEvent> notes;  // sorted by on_tick
};

struct MidiFile {
  int format = 0;
  int ppq = 480;          // ticks per quarter (when smpte_fps == 0)
  int smpte_fps = 0;      // > 0 for SMPTE time division
  int ticks_per_frame = 0;
  std::vector<MidiTrack> tracks;
  std::vector<TempoChange> tempo;
  std::vector<TimeSignature> time_signatures;
};

namespace detail {

class Reader {
 public:
  Reader(const std::uint8_t* p, std::size_t n) : p_(p), end_(p + n) {}
  bool done() const { return p_ >= end_; }
  std::uint8_t u8() {
    need(1);
    return *p_++;
  }
  std::uint8_t peek() {
    need(1);
    return *p_;
  }
  std::uint16_t u16() {
    std::uint16_t v = static_cast<std::uint16_t>(u8() << 8);
    return static_cast<std::uint16_t>(v | u8());
  }
  std::uint32_t u32() {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v = (v << 8) | u8();
    return v;
  }
  std::uint32_t vlq() {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) {
      const std::uint8_t b = u8();
      v = (v << 7) | (b & 0x7f);
      if (!(b & 0x80)) return v;
    }
    throw MidiError("variable-length quantity longer than 4 bytes");
  }
  std::string tag() {
    need(4);
    std::string s(reinterpret_cast<const char*>(p_), 4);
    p_ += 4;
    return s;
  }
  const std::uint8_t* skip(std::size_t n) {
    need(n);
    const auto* at = p_;
    p_ += n;
    return at;
  }
  std::size_t remaining() const { return static_cast<std::size_t>(end_ - p_); }

 private:
  void need(std::size_t n) const {
    if (static_cast<std::size_t>(end_ - p_) < n) throw MidiError("unexpected end of data");
  }
  const std::uint8_t* p_;
  const std::uint8_t* end_;
};

}  // namespace detail

inline MidiFile parse(const std::vector<std::uint8_t>& bytes) {
  detail::Reader r(bytes.data(), bytes.size());
  if (r.tag() != "MThd") throw MidiError("missing MThd header");
  const std::uint32_t hlen = r.u32();
  if (hlen < 6) throw MidiError("short MThd header");
  MidiFile f;
  f.format = r.u16();
  const int ntracks = r.u16();
  const std::uint16_t division = r.u16();
  r.skip(hlen - 6);
  if (f.format > 1) throw MidiError("unsupported SMF format " + std::to_string(f.format));
  if (division & 0x8000) {
    f.smpte_fps = -static_cast<int>(static_cast<std::int8_t>(division >> 8));
    f.ticks_per_frame = division & 0xff;
    if (f.smpte_fps <= 0 || f.ticks_per_frame <= 0) throw MidiError("invalid SMPTE division");
  } else {
    f.ppq = division;
    if (f.ppq <= 0) throw MidiError("invalid ticks per quarter");
  }

  for (int ti = 0; ti < ntracks && !r.done(); ++ti) {
    const std::string tag = r.tag();
    const std::uint32_t len = r.u32();
    const std::uint8_t* body = r.skip(len);
    if (tag != "MTrk") continue;
    detail::Reader tr(body, len);
    MidiTrack track;
    std::map<std::pair<int, int>, std::vector<std::uint32_t>> open;  // (channel, pitch) -> on ticks
    std::uint32_t tick = 0;
    std::uint8_t status = 0;
    while (!tr.done()) {
      tick += tr.vlq();
      std::uint8_t b = tr.peek();
      if (b & 0x80) {
        status = tr.u8();
      } else if (status == 0) {
        throw MidiError("running status without a prior status byte");
      }
      if (status == 0xff) {
        const std::uint8_t type = tr.u8();
        const std::uint32_t mlen = tr.vlq();
        const std::uint8_t* d = tr.skip(mlen);
        if (type == 0x51 && mlen == 3) {
          f.tempo.push_back({tick, (std::uint32_t(d[0]) << 16) | (std::uint32_t(d[1]) << 8) | d[2]});
        } else if (type == 0x58 && mlen >= 2) {
          f.time_signatures.push_back({tick, d[0], 1 << d[1]});
        } else if (type == 0x2f) {
          break;
        }
        status = 0;
        continue;
      }
      if (status == 0xf0 || status == 0xf7) {
        tr.skip(tr.vlq());
        status = 0;
        continue;
      }
      const int kind = status & 0xf0;
      const int channel = status & 0x0f;
      const int data_len = (kind == 0xc0 || kind == 0xd0) ? 1 : 2;
      const std::uint8_t d1 = tr.u8();
      const std::uint8_t d2 = data_len == 2 ? tr.u8() : 0;
      if (kind == 0x90 && d2 > 0) {
        open[{channel, d1}].push_back(tick);
      } else if (kind == 0x80 || (kind == 0x90 && d2 == 0)) {
        auto it = open.find({channel, d1});
        if (it != open.end() && !it->second.empty()) {
          track.notes.push_back({it->second.front(), tick, d1, channel});
          it->second.erase(it->second.begin());
        }
      }
    }
    std::stable_sort(track.notes.begin(), track.notes.end(),
                     [](const NoteEvent& a, const NoteEvent& b) { return a.on_tick < b.on_tick; });
    f.tracks.push_back(std::move(track));
  }
  std::stable_sort(f.tempo.begin(), f.tempo.end(), [](auto& a, auto& b) { return a.tick < b.tick; });
  return f;
}

inline MidiFile read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MidiError("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse(bytes);
}

// Beat (quarter-note) position of a tick. PPQ files map directly; SMPTE files
// go through wall-clock time and the tempo map.
class BeatClock {
 public:
  explicit BeatClock(const MidiFile& f) : f_(f) {}

  double beats(std::uint32_t tick) const {
    if (f_.smpte_fps == 0) return static_cast<double>(tick) / f_.ppq;
    const double ticks_per_second = static_cast<double>(f_.smpte_fps) * f_.ticks_per_frame;
    const double seconds = tick / ticks_per_second;
    double beat = 0.0, t_prev = 0.0;
    double spq = 0.5;  // seconds per quarter, default 120 bpm
    for (const auto& tc : f_.tempo) {
      const double t = tc.tick / ticks_per_second;
      if (t >= seconds) break;
      beat += (t - t_prev) / spq;
      t_prev = t;
      spq = tc.usec_per_quarter / 1e6;
    }
    return beat + (seconds - t_prev) / spq;
  }

 private:
  const MidiFile& f_;
};

inline bool is_four_four(const MidiFile& f) {
  return std::all_of(f.time_signatures.begin(), f.time_signatures.end(),
                     [](const TimeSignature& ts) { return ts.numerator == 4 && ts.denominator == 4; });
}

struct ExtractStats {
  int rejected_time_signature = 0;
  int rejected_drums = 0;
  int rejected_polyphonic = 0;
  int rejected_bass = 0;
  int rejected_range = 0;
  int empty = 0;
};

// Quantizes one (track, channel) voice to the 16th-note grid; onsets and
// offsets snap to the nearest step, notes snapped to zero length are dropped.
inline corpus::QuantizedTrack quantize(const std::vector<NoteEvent>& notes, const BeatClock& clock) {
  corpus::QuantizedTrack t;
  for (const auto& n : notes) {
    const int on = static_cast<int>(std::lround(clock.beats(n.on_tick) * 4.0));
    const int off = static_cast<int>(std::lround(clock.beats(n.off_tick) * 4.0));
    if (off <= on) continue;
    t.notes.push_back({on, off - on, n.pitch});
    t.length = std::max(t.length, off);
  }
  std::stable_sort(t.notes.begin(), t.notes.end(), [](auto& a, auto& b) { return a.start < b.start; });
  return t;
}

// Monophonic, non-drum, non-bass voices inside [55, 84]. Returns nothing for
// files that are not in 4/4.
inline std::vector<corpus::QuantizedTrack> extract_tracks(const MidiFile& f, ExtractStats* stats = nullptr) {
  ExtractStats local;
  ExtractStats& st = stats ? *stats : local;
  std::vector<corpus::QuantizedTrack> out;
  if (!is_four_four(f)) {
    ++st.rejected_time_signature;
    return out;
  }
  BeatClock clock(f);
  for (const auto& track : f.tracks) {
    std::map<int, std::vector<NoteEvent>> by_channel;
    for (const auto& n : track.notes) by_channel[n.channel].push_back(n);
    for (auto& [channel, notes] : by_channel) {
      if (channel == 9) {
        ++st.rejected_drums;
        continue;
      }
      auto q = quantize(notes, clock);
      if (q.notes.empty()) {
        ++st.empty;
        continue;
      }
      if (!q.monophonic()) {
        ++st.rejected_polyphonic;
        continue;
      }
      double mean = 0;
      for (const auto& n : q.notes) mean += n.pitch;
      mean /= static_cast<double>(q.notes.size());
      if (mean < alphabet::kMinPitch) {
        ++st.rejected_bass;
        continue;
      }
      if (!corpus::in_range(q)) {
        ++st.rejected_range;
        continue;
      }
      out.push_back(std::move(q));
    }
  }
  return out;
}

}  // namespace clsm::midi
