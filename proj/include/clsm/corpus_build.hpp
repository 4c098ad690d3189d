#pragma once

// Directory ingestion: MIDI files and token text files -> split manifest.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include "clsm/corpus.hpp"
#include "clsm/midi.hpp"

namespace clsm::corpus {

struct BuildOptions {
  std::uint64_t seed = 0;
  bool transpose_midi = true;     // augment MIDI-derived tracks to all keys
  bool transpose_tokens = false;  // same for token text inputs
};

struct BuildReport {
  std::size_t files = 0;
  std::size_t tracks = 0;
  std::size_t windows = 0;
  std::size_t skipped_lines = 0;
  midi::ExtractStats midi;
};

namespace detail {

// Files directly in the input directory are their own identity; files in a
// subdirectory share the identity named by the first path component.
inline std::string identity_of(const std::filesystem::path& root, const std::filesystem::path& file) {
  const auto rel = std::filesystem::relative(file, root);
  auto it = rel.begin();
  if (std::next(it) == rel.end()) return file.stem().string();
  return it->string();
}

inline bool has_ext(const std::filesystem::path& p, std::initializer_list<const char*> exts) {
  std::string e = p.extension().string();
  std::transform(e.begin(), e.end(), e.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return std::any_of(exts.begin(), exts.end(), [&](const char* x) { return e == x; });
}

inline void add_track_windows(const TokenSeq& tokens, std::vector<TokenSeq>& dst, std::size_t& count) {
  for (auto& w : make_windows(tokens)) {
    dst.push_back(std::move(w));
    ++count;
  }
}

}  // namespace detail

inline Manifest build_corpus(const std::filesystem::path& in_dir, const BuildOptions& opt,
                             BuildReport* report = nullptr) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(in_dir)) throw InvalidInput("not a directory: " + in_dir.string());
  BuildReport local;
  BuildReport& rep = report ? *report : local;

  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(in_dir))
    if (e.is_regular_file()) files.push_back(e.path());
  std::sort(files.begin(), files.end());

  std::map<std::string, std::vector<TokenSeq>> by_identity;
  for (const auto& path : files) {
    const bool is_midi = detail::has_ext(path, {".mid", ".midi"});
    const bool is_text = detail::has_ext(path, {".txt", ".tok"});
    if (!is_midi && !is_text) continue;
    ++rep.files;
    auto& dst = by_identity[detail::identity_of(in_dir, path)];
    if (is_midi) {
      std::vector<QuantizedTrack> tracks;
      try {
        tracks = midi::extract_tracks(midi::read_file(path), &rep.midi);
      } catch (const MidiError&) {
        continue;
      }
      for (const auto& t : tracks) {
        const auto copies = opt.transpose_midi ? augment_transpose(t) : std::vector<QuantizedTrack>{t};
        for (const auto& c : copies) {
          ++rep.tracks;
          detail::add_track_windows(encode_track(c), dst, rep.windows);
        }
      }
    } else {
      std::ifstream in(path);
      std::string line;
      while (std::getline(in, line)) {
        TokenSeq seq;
        try {
          seq = from_text(line);
        } catch (const InvalidToken&) {
          ++rep.skipped_lines;
          continue;
        }
        if (seq.empty()) continue;
        ++rep.tracks;
        std::vector<TokenSeq> variants{seq};
        if (opt.transpose_tokens) {
          int lo = 1000, hi = -1;
          for (Token t : seq)
            if (alphabet::is_pitch(t)) {
              lo = std::min(lo, alphabet::token_pitch(t));
              hi = std::max(hi, alphabet::token_pitch(t));
            }
          if (hi >= 0) {
            variants.clear();
            for (int s = -11; s <= 11; ++s)
              if (lo + s >= alphabet::kMinPitch && hi + s <= alphabet::kMaxPitch)
                variants.push_back(transpose_tokens(seq, s));
          }
        }
        for (const auto& v : variants) detail::add_track_windows(v, dst, rep.windows);
      }
    }
  }

  std::vector<std::string> ids;
  for (const auto& [id, windows] : by_identity)
    if (!windows.empty()) ids.push_back(id);
  const CorpusSplit split = split_corpus(ids, opt.seed);
  Manifest m;
  for (Split s : kSplits)
    for (const auto& id : split[s])
      for (const auto& w : by_identity[id]) m.records.push_back({s, id, w});
  return m;
}

inline void print_stats(const Manifest& m, std::ostream& os) {
  std::map<std::string, std::size_t> ids_per_split;
  std::map<std::string, std::map<std::string, int>> seen;
  std::array<std::size_t, alphabet::kDataSize> hist{};
  std::size_t total_tokens = 0;
  for (const auto& r : m.records) {
    seen[split_name(r.split)][r.identity] = 1;
    for (Token t : r.tokens) {
      ++hist[static_cast<std::size_t>(t)];
      ++total_tokens;
    }
  }
  os << "split     identities  windows\n";
  for (Split s : kSplits) {
    const auto name = split_name(s);
    os << name << std::string(10 - name.size(), ' ') << seen[name].size() << std::string(12 - std::to_string(seen[name].size()).size(), ' ')
       << m.count(s) << '\n';
  }
  os << "total windows: " << m.records.size() << '\n';
  if (total_tokens) {
    os << "token frequencies:\n";
    for (Token t = 0; t < alphabet::kDataSize; ++t)
      if (hist[static_cast<std::size_t>(t)])
        os << "  " << alphabet::to_string(t) << ' '
           << static_cast<double>(hist[static_cast<std::size_t>(t)]) / static_cast<double>(total_tokens) << '\n';
  }
}

}  // namespace clsm::corpus
