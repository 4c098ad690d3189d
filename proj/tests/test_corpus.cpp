#include <gtest/gtest.h>

#include <fstream>
#include <map>
#include <random>
#include <set>
#include <sstream>

#include "clsm/config.hpp"
#include "clsm/corpus.hpp"
#include "clsm/corpus_build.hpp"
#include "clsm/midi.hpp"
#include "clsm/tokens.hpp"
#include "clsm/toy_corpus.hpp"
#include "helpers.hpp"

using namespace clsm;
using namespace clsm::corpus;

namespace {

TokenSeq toks(const std::string& s) { return from_text(s); }

// Step-wise re-synthesis: which pitch sounds, and whether it starts, at each step.
std::vector<std::pair<int, bool>> resynth(const QuantizedTrack& t) {
  std::vector<std::pair<int, bool>> out(static_cast<std::size_t>(t.length), {-1, false});
  for (const auto& n : t.notes)
    for (int k = 0; k < n.duration; ++k) out[static_cast<std::size_t>(n.start + k)] = {n.pitch, k == 0};
  return out;
}

QuantizedTrack random_track(std::mt19937_64& rng, int length) {
  QuantizedTrack t;
  t.length = length;
  std::uniform_int_distribution<int> gap(0, 3), dur(1, 6), pitch(55, 84);
  int pos = gap(rng);
  while (true) {
    const int d = dur(rng);
    if (pos + d > length) break;
    t.notes.push_back({pos, d, pitch(rng)});
    pos += d + gap(rng);
  }
  return t;
}

// Minimal SMF writer for parser tests.
struct SmfWriter {
  std::vector<std::uint8_t> bytes;
  void u16(int v) {
    bytes.push_back(static_cast<std::uint8_t>(v >> 8));
    bytes.push_back(static_cast<std::uint8_t>(v));
  }
  void u32(std::uint32_t v) {
    for (int s = 24; s >= 0; s -= 8) bytes.push_back(static_cast<std::uint8_t>(v >> s));
  }
  static void vlq(std::vector<std::uint8_t>& out, std::uint32_t v) {
    std::vector<std::uint8_t> tmp{static_cast<std::uint8_t>(v & 0x7f)};
    while (v >>= 7) tmp.push_back(static_cast<std::uint8_t>(0x80 | (v & 0x7f)));
    out.insert(out.end(), tmp.rbegin(), tmp.rend());
  }
  void header(int format, int ntracks, int ppq) {
    for (char c : std::string("MThd")) bytes.push_back(static_cast<std::uint8_t>(c));
    u32(6);
    u16(format);
    u16(ntracks);
    u16(ppq);
  }
  void track(const std::vector<std::uint8_t>& body) {
    for (char c : std::string("MTrk")) bytes.push_back(static_cast<std::uint8_t>(c));
    u32(static_cast<std::uint32_t>(body.size()));
    bytes.insert(bytes.end(), body.begin(), body.end());
  }
};

struct Ev {
  std::uint32_t delta;
  std::vector<std::uint8_t> data;
};

std::vector<std::uint8_t> track_body(const std::vector<Ev>& evs) {
  std::vector<std::uint8_t> out;
  for (const auto& e : evs) {
    SmfWriter::vlq(out, e.delta);
    out.insert(out.end(), e.data.begin(), e.data.end());
  }
  SmfWriter::vlq(out, 0);
  out.insert(out.end(), {0xff, 0x2f, 0x00});
  return out;
}

}  // namespace

TEST(Alphabet, SizesAndStableIndices) {
  EXPECT_EQ(alphabet::kDataSize, 32);
  EXPECT_EQ(alphabet::kModelSize, 34);
  const auto sym = alphabet::data_symbols();
  ASSERT_EQ(sym.size(), 32u);
  EXPECT_EQ(sym.front(), "55");
  EXPECT_EQ(sym[29], "84");
  EXPECT_EQ(sym[30], "R");
  EXPECT_EQ(sym[31], "__");
  EXPECT_EQ(alphabet::to_string(alphabet::kConstraint), "p");
  EXPECT_EQ(alphabet::to_string(alphabet::kStart), "s");
  for (Token t = 0; t < alphabet::kDataSize; ++t) EXPECT_EQ(alphabet::from_string(sym[static_cast<std::size_t>(t)]), t);
}

TEST(Alphabet, RejectsUnknownTokens) {
  for (const char* bad : {"54", "85", "p", "s", "x", "", "600", "6a"})
    EXPECT_THROW(alphabet::from_string(bad), InvalidToken) << bad;
  EXPECT_THROW(alphabet::pitch_token(54), OutOfRange);
  EXPECT_THROW(alphabet::to_string(40), InvalidToken);
}

TEST(Tokens, TextRoundTrip) {
  const TokenSeq s = toks("60 __ R 84 55 __ __");
  EXPECT_EQ(to_text(s), "60 __ R 84 55 __ __");
  EXPECT_EQ(from_text(to_text(s)), s);
}

TEST(Encode, PaperExamples) {
  QuantizedTrack t{3, {{0, 2, 60}}};
  EXPECT_EQ(to_strings(encode_track(t)), (std::vector<std::string>{"60", "__", "R"}));
  EXPECT_TRUE(encode_track(QuantizedTrack{}).empty());
  QuantizedTrack rep{2, {{0, 1, 60}, {1, 1, 60}}};
  EXPECT_EQ(to_strings(encode_track(rep)), (std::vector<std::string>{"60", "60"}));
}

TEST(Encode, MatchesResynthesisOracleAndRoundTrips) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    const auto t = random_track(rng, 64);
    const auto tokens = encode_track(t);
    const auto oracle = resynth(t);
    ASSERT_EQ(tokens.size(), oracle.size());
    for (std::size_t i = 0; i < tokens.size(); ++i) {
      const auto [pitch, onset] = oracle[i];
      if (pitch < 0) EXPECT_EQ(tokens[i], alphabet::kRest);
      else if (onset) EXPECT_EQ(tokens[i], alphabet::pitch_token(pitch));
      else EXPECT_EQ(tokens[i], alphabet::kHold);
    }
    EXPECT_EQ(decode_track(tokens), t);
  }
}

TEST(Encode, Errors) {
  EXPECT_THROW(encode_track(QuantizedTrack{4, {{0, 2, 90}}}), OutOfRange);
  EXPECT_THROW(encode_track(QuantizedTrack{4, {{0, 3, 60}, {1, 1, 62}}}), InvalidInput);
  EXPECT_THROW(decode_track(toks("R __ 60")), InvalidToken);
  EXPECT_THROW(decode_track({alphabet::kConstraint}), InvalidToken);
}

TEST(Windows, CountsAndFilter) {
  TokenSeq busy;
  for (int i = 0; i < 144; ++i) busy.push_back(i % 2 ? alphabet::kHold : alphabet::pitch_token(60));
  const auto w = make_windows(busy);
  ASSERT_EQ(w.size(), 2u);
  EXPECT_EQ(w[1], TokenSeq(busy.begin() + 16, busy.begin() + 144));
  EXPECT_EQ(candidate_window_count(144), 2u);
  EXPECT_TRUE(make_windows(TokenSeq(127, alphabet::pitch_token(60))).empty());
  EXPECT_TRUE(make_windows(TokenSeq(128, alphabet::kRest)).empty());

  // 16 rests pass, 17 do not; holds never count as rests
  TokenSeq ok(128, alphabet::kHold);
  ok[0] = alphabet::pitch_token(60);
  for (int i = 40; i < 56; ++i) ok[static_cast<std::size_t>(i)] = alphabet::kRest;
  EXPECT_EQ(make_windows(ok).size(), 1u);
  ok[56] = alphabet::kRest;
  EXPECT_TRUE(make_windows(ok).empty());
}

TEST(Windows, RandomTracksRespectRestRun) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    auto t = random_track(rng, 400);
    for (const auto& w : make_windows(encode_track(t))) {
      EXPECT_EQ(w.size(), 128u);
      EXPECT_LE(longest_rest_run(w), 16);
    }
  }
}

TEST(Augment, ShiftCounts) {
  QuantizedTrack full{4, {{0, 1, 55}, {1, 1, 84}}};
  const auto a = augment_transpose(full);
  ASSERT_EQ(a.size(), 1u);
  EXPECT_EQ(a[0], full);

  QuantizedTrack mid{4, {{0, 1, 60}, {1, 1, 72}}};
  const auto b = augment_transpose(mid);
  ASSERT_EQ(b.size(), 17u);
  EXPECT_EQ(b.front().min_pitch(), 55);
  EXPECT_EQ(b.back().max_pitch(), 83);
  for (const auto& t : b) EXPECT_TRUE(in_range(t));
  EXPECT_NE(std::find(b.begin(), b.end(), mid), b.end());

  EXPECT_EQ(augment_transpose(QuantizedTrack{8, {}}).size(), 1u);
}

TEST(Split, RatiosDisjointAndDeterministic) {
  const auto ids = [](int n) {
    std::vector<std::string> v;
    for (int i = 0; i < n; ++i) v.push_back("id" + std::to_string(i));
    return v;
  };
  EXPECT_EQ(split_corpus(ids(20), 1).sizes(), (std::array<std::size_t, 5>{11, 1, 6, 1, 1}));
  EXPECT_EQ(split_corpus(ids(40), 1).sizes(), (std::array<std::size_t, 5>{22, 2, 12, 2, 2}));
  EXPECT_THROW(split_corpus(ids(4), 1), InsufficientData);

  const auto a = split_corpus(ids(97), 9), b = split_corpus(ids(97), 9);
  std::set<std::string> seen;
  std::size_t total = 0;
  for (Split s : kSplits) {
    EXPECT_EQ(a[s], b[s]);
    for (const auto& id : a[s]) seen.insert(id);
    total += a[s].size();
  }
  EXPECT_EQ(total, 97u);
  EXPECT_EQ(seen.size(), 97u);
  EXPECT_NE(split_corpus(ids(97), 10)[Split::Val1], a[Split::Val1]);
}

TEST(Span, Validation) {
  EXPECT_NO_THROW(validate(TargetSpan{0, 64}));
  EXPECT_NO_THROW(validate(TargetSpan{112, 16}));
  EXPECT_THROW(validate(TargetSpan{0, 0}), InvalidSpan);
  EXPECT_THROW(validate(TargetSpan{0, 80}), InvalidSpan);
  EXPECT_THROW(validate(TargetSpan{8, 16}), InvalidSpan);
  EXPECT_THROW(validate(TargetSpan{120, 16}), InvalidSpan);
  EXPECT_THROW(validate(TargetSpan{-16, 16}), InvalidSpan);

  EXPECT_EQ(parse_span("32:64"), (TargetSpan{32, 32}));
  for (const char* bad : {"32", "a:b", "64:32", "0:17", "120:136"}) EXPECT_THROW(parse_span(bad), InvalidSpan) << bad;
}

TEST(Span, SamplingMarginals) {
  std::mt19937_64 rng(11);
  constexpr int n = 100000;
  std::map<int, int> len_count;
  std::map<int, std::map<int, int>> start_count;
  for (int i = 0; i < n; ++i) {
    const auto s = sample_target_span(rng);
    ASSERT_TRUE(is_valid(s));
    ++len_count[s.length];
    ++start_count[s.length][s.start];
  }
  ASSERT_EQ(len_count.size(), 4u);
  for (auto [len, c] : len_count) EXPECT_NEAR(c / double(n), 0.25, 0.02);
  EXPECT_EQ(start_count[16].size(), 8u);
  EXPECT_EQ(start_count[64].size(), 5u);

  // Chi-square of start given length; critical values at p = 0.01.
  const std::map<int, double> critical = {{16, 18.475}, {32, 16.812}, {48, 15.086}, {64, 13.277}};
  for (auto& [len, starts] : start_count) {
    const double expect = len_count[len] / double(starts.size());
    double chi = 0;
    for (auto [st, c] : starts) chi += (c - expect) * (c - expect) / expect;
    EXPECT_LT(chi, critical.at(len)) << "length " << len;
  }
  double chi_len = 0;
  for (auto [len, c] : len_count) chi_len += (c - n / 4.0) * (c - n / 4.0) / (n / 4.0);
  EXPECT_LT(chi_len, 11.345);

  for (int i = 0; i < 100; ++i) EXPECT_EQ(sample_left_contextual_span(rng).end(), 128);
}

TEST(Span, ContextsAndAssemble) {
  std::mt19937_64 rng(1);
  const auto w = test::random_window(128, rng);
  const TargetSpan s{32, 48};
  const auto [l, r] = contexts_of(w, s);
  EXPECT_EQ(l.size(), 32u);
  EXPECT_EQ(r.size(), 48u);
  EXPECT_EQ(target_of(w, s).size(), 48u);
  EXPECT_EQ(assemble(l, target_of(w, s), r), w);
}

TEST(Manifest, RoundTrip) {
  test::TempDir dir;
  std::mt19937_64 rng(2);
  Manifest m;
  m.records.push_back({Split::Train1, "a", test::random_window(128, rng)});
  m.records.push_back({Split::Test, "b/c", test::random_window(128, rng)});
  write_manifest(m, dir / "m.jsonl");
  const auto back = read_manifest(dir / "m.jsonl");
  ASSERT_EQ(back.records.size(), 2u);
  for (std::size_t i = 0; i < 2; ++i) {
    EXPECT_EQ(back.records[i].split, m.records[i].split);
    EXPECT_EQ(back.records[i].identity, m.records[i].identity);
    EXPECT_EQ(back.records[i].tokens, m.records[i].tokens);
  }
  EXPECT_EQ(back.count(Split::Test), 1u);
  std::ofstream(dir / "bad.jsonl") << "{\"split\": \"nope\"}\n";
  EXPECT_THROW(read_manifest(dir / "bad.jsonl"), Error);
}

TEST(Midi, ParsesSynthesizedFile) {
  // ppq 4: one tick per 16th. Track 0 carries tempo and 4/4; track 1 a melody
  // on channel 0 using running status and a note-on with velocity 0 as off;
  // a drum voice on channel 9 is rejected.
  SmfWriter w;
  w.header(1, 2, 4);
  w.track(track_body({{0, {0xff, 0x51, 0x03, 0x07, 0xa1, 0x20}}, {0, {0xff, 0x58, 0x04, 4, 2, 24, 8}}}));
  w.track(track_body({
      {0, {0x90, 60, 100}},
      {8, {60, 0}},       // running status: off after 2 beats
      {0, {64, 90}},
      {4, {0x80, 64, 0}},
      {4, {0x99, 36, 100}},
      {2, {0x89, 36, 0}},
      {2, {0x90, 67, 80}},
      {3, {0x80, 67, 0}},
  }));
  const auto f = midi::parse(w.bytes);
  EXPECT_EQ(f.format, 1);
  EXPECT_EQ(f.ppq, 4);
  ASSERT_EQ(f.tracks.size(), 2u);
  ASSERT_EQ(f.tracks[1].notes.size(), 4u);
  ASSERT_EQ(f.tempo.size(), 1u);
  EXPECT_EQ(f.tempo[0].usec_per_quarter, 500000u);
  EXPECT_TRUE(midi::is_four_four(f));

  midi::ExtractStats st;
  const auto tracks = midi::extract_tracks(f, &st);
  EXPECT_EQ(st.rejected_drums, 1);
  ASSERT_EQ(tracks.size(), 1u);
  const QuantizedTrack expect{23, {{0, 8, 60}, {8, 4, 64}, {20, 3, 67}}};
  EXPECT_EQ(tracks[0], expect);
  EXPECT_EQ(to_text(encode_track(tracks[0])),
            "60 __ __ __ __ __ __ __ 64 __ __ __ R R R R R R R R 67 __ __");
}

TEST(Midi, RejectsNonFourFourPolyphonyAndGarbage) {
  SmfWriter w;
  w.header(0, 1, 4);
  w.track(track_body({{0, {0xff, 0x58, 0x04, 3, 2, 24, 8}}, {0, {0x90, 60, 100}}, {4, {0x80, 60, 0}}}));
  midi::ExtractStats st;
  EXPECT_TRUE(midi::extract_tracks(midi::parse(w.bytes), &st).empty());
  EXPECT_EQ(st.rejected_time_signature, 1);

  SmfWriter p;
  p.header(0, 1, 4);
  p.track(track_body({{0, {0x90, 60, 100}}, {0, {0x90, 64, 100}}, {4, {0x80, 60, 0}}, {0, {0x80, 64, 0}}}));
  midi::ExtractStats st2;
  EXPECT_TRUE(midi::extract_tracks(midi::parse(p.bytes), &st2).empty());
  EXPECT_EQ(st2.rejected_polyphonic, 1);

  SmfWriter b;
  b.header(0, 1, 4);
  b.track(track_body({{0, {0x90, 40, 100}}, {4, {0x80, 40, 0}}}));
  midi::ExtractStats st3;
  EXPECT_TRUE(midi::extract_tracks(midi::parse(b.bytes), &st3).empty());
  EXPECT_EQ(st3.rejected_bass, 1);

  EXPECT_THROW(midi::parse({'M', 'T', 'h', 'x'}), MidiError);
  auto truncated = w.bytes;
  truncated.resize(truncated.size() - 5);
  EXPECT_THROW(midi::parse(truncated), MidiError);
}

TEST(Build, TextAndMidiDirectory) {
  test::TempDir in;
  // 24 identities of token text; one is a subdirectory with two files.
  std::mt19937_64 rng(4);
  for (int i = 0; i < 24; ++i) {
    const auto dir = i == 0 ? in / "album" : in.path();
    std::filesystem::create_directories(dir);
    std::ofstream out(dir / ("song" + std::to_string(i) + ".txt"));
    out << to_text(encode_track(random_track(rng, 160))) << "\n";
    out << "not a token line\n";
  }
  std::ofstream(in / "album" / "extra.txt") << to_text(encode_track(random_track(rng, 160))) << "\n";

  BuildReport rep;
  const auto m = build_corpus(in.path(), {.seed = 3}, &rep);
  EXPECT_EQ(rep.files, 25u);
  EXPECT_EQ(rep.skipped_lines, 24u);
  std::map<std::string, std::set<Split>> where;
  for (const auto& r : m.records) {
    EXPECT_EQ(r.tokens.size(), 128u);
    where[r.identity].insert(r.split);
  }
  for (auto& [id, s] : where) EXPECT_EQ(s.size(), 1u) << id;
  EXPECT_TRUE(where.count("album"));

  const auto again = build_corpus(in.path(), {.seed = 3});
  ASSERT_EQ(again.records.size(), m.records.size());
  for (std::size_t i = 0; i < m.records.size(); ++i) EXPECT_EQ(again.records[i].tokens, m.records[i].tokens);
}

TEST(Toy, CorpusShape) {
  test::TempDir dir;
  const auto n = write_toy_corpus(dir.path(), {});
  EXPECT_GE(n, 1800u);
  EXPECT_LE(n, 2200u);
  const auto m = build_corpus(dir.path(), {.seed = 0});
  EXPECT_EQ(m.records.size(), n);
  for (Split s : kSplits) EXPECT_GT(m.count(s), 0u);
  for (const auto& r : m.records) EXPECT_LE(longest_rest_run(r.tokens), 16);
}

TEST(Config, ParseAndErrors) {
  std::istringstream ok("d_z = 16  # latent\nbeta_max=0.012\n\nepochs = 3\n");
  const auto c = parse_config(ok);
  EXPECT_EQ(c.model.d_z, 16);
  EXPECT_DOUBLE_EQ(c.train.beta_max, 0.012);
  EXPECT_EQ(c.train.epochs, 3);
  for (const char* beta : {"0", "0.002", "0.004", "0.006", "0.008", "0.01", "0.012"}) {
    std::istringstream in(std::string("beta_max = ") + beta);
    EXPECT_NO_THROW(parse_config(in)) << beta;
  }
  for (const char* bad : {"d_z = 7", "nope = 1", "d_z", "lr = fast", "heads = 3", "batch = 0"}) {
    std::istringstream in(bad);
    EXPECT_THROW(parse_config(in), InvalidConfig) << bad;
  }
  const auto j = to_json(ModelConfig::toy());
  const auto back = model_config_from_json(j);
  EXPECT_EQ(to_json(back), j);
}
