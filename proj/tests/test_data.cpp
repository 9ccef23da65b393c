#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "makgcn/data.hpp"
#include "makgcn/errors.hpp"

using namespace makgcn;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / "makgcn_data_test" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

FrameSequence counting_sequence(std::size_t frames, std::size_t points_per_frame, std::uint64_t id = 0) {
  FrameSequence seq;
  seq.id = id;
  seq.label = 2;
  seq.subject = 4;
  for (std::size_t f = 0; f < frames; ++f) {
    Frame fr;
    fr.count = points_per_frame;
    for (std::size_t p = 0; p < points_per_frame; ++p) {
      fr.points.push_back(static_cast<double>(f));
      fr.points.push_back(static_cast<double>(p));
      fr.points.push_back(0.1 * static_cast<double>(f) + 1.0 / 3.0);
    }
    seq.frames.push_back(std::move(fr));
  }
  return seq;
}

std::vector<Sample> labelled(std::size_t n) {
  std::vector<Sample> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i].sequence = i;
  return v;
}

}  // namespace

TEST(FrameFiles, HeaderParsing) {
  const auto h = parse_frame_header("C=4 rate=10.5 label=3 subject=12");
  EXPECT_EQ(h.channels, 4u);
  EXPECT_EQ(h.frame_rate, 10.5);
  EXPECT_EQ(h.label, 3);
  EXPECT_EQ(h.subject, 12);
  EXPECT_EQ(parse_frame_header(format_frame_header(h)).subject, 12);
  EXPECT_THROW(parse_frame_header("C=3 rate=30"), DataError);
  EXPECT_THROW(parse_frame_header("C=3 rate=30 label=x"), DataError);
  EXPECT_THROW(parse_frame_header("C=3 rate=30 label=1 colour=red"), DataError);
}

TEST(FrameFiles, LineParsing) {
  long long index = -1;
  const auto f = parse_frame_line("7 2 1 2 3 4 5 6", 3, &index);
  ASSERT_TRUE(f);
  EXPECT_EQ(index, 7);
  EXPECT_EQ(f->count, 2u);
  EXPECT_EQ(f->points[5], 6.0);
  EXPECT_TRUE(parse_frame_line("0 0", 3));
  EXPECT_FALSE(parse_frame_line("0 2 1 2 3", 3));
  EXPECT_FALSE(parse_frame_line("0 1 1 2 abc", 3));
}

TEST(FrameFiles, RoundTripIsExact) {
  const auto dir = scratch("roundtrip");
  auto seq = counting_sequence(5, 3);
  seq.frames[2].count = 0;
  seq.frames[2].points.clear();
  write_frame_file(dir / "a.txt", seq);
  const auto back = read_frame_file(dir / "a.txt", 9);
  EXPECT_EQ(back.id, 9u);
  EXPECT_EQ(back.label, 2);
  EXPECT_EQ(back.subject, 4);
  ASSERT_EQ(back.frames.size(), 5u);
  for (std::size_t f = 0; f < 5; ++f) EXPECT_EQ(back.frames[f].points, seq.frames[f].points);
}

TEST(FrameFiles, ManifestResolvesRelativePaths) {
  const auto dir = scratch("manifest");
  fs::create_directories(dir / "sub");
  write_frame_file(dir / "sub" / "a.txt", counting_sequence(3, 2));
  write_frame_file(dir / "b.txt", counting_sequence(4, 2));
  {
    std::ofstream m(dir / "list.txt");
    m << "# comment\nsub/a.txt\n\n" << (dir / "b.txt").string() << "\n";
  }
  const auto seqs = load_sequences(dir / "list.txt");
  ASSERT_EQ(seqs.size(), 2u);
  EXPECT_EQ(seqs[0].id, 0u);
  EXPECT_EQ(seqs[1].id, 1u);
  EXPECT_EQ(seqs[1].frames.size(), 4u);
  EXPECT_THROW(read_manifest(dir / "missing.txt"), DataError);
}

TEST(FrameFiles, MalformedFileNamesTheLine) {
  const auto dir = scratch("malformed");
  {
    std::ofstream f(dir / "bad.txt");
    f << "C=3 rate=30 label=0\n0 1 1 2 3\n1 1 1 2\n";
  }
  try {
    read_frame_file(dir / "bad.txt");
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find(":3"), std::string::npos);
  }
}

TEST(Normalize, PadsShortFramesWithZeros) {
  Frame f{2, {1, 2, 3, 4, 5, 6}};
  Rng rng(1);
  const auto out = normalize_frame(f, 3, 4, rng);
  EXPECT_EQ(out, (std::vector<double>{1, 2, 3, 4, 5, 6, 0, 0, 0, 0, 0, 0}));
  const auto empty = normalize_frame(Frame{}, 3, 2, rng);
  EXPECT_EQ(empty, std::vector<double>(6, 0.0));
}

TEST(Normalize, SubsamplesWithoutReplacementInOrder) {
  Frame f;
  f.count = 50;
  for (std::size_t p = 0; p < 50; ++p) f.points.insert(f.points.end(), {double(p), 0.0, 0.0});
  Rng rng(2);
  const auto out = normalize_frame(f, 3, 16, rng);
  std::set<double> seen;
  double prev = -1;
  for (std::size_t p = 0; p < 16; ++p) {
    EXPECT_GT(out[p * 3], prev);
    prev = out[p * 3];
    seen.insert(out[p * 3]);
  }
  EXPECT_EQ(seen.size(), 16u);
  const auto exact = normalize_frame(Frame{2, {1, 2, 3, 4, 5, 6}}, 3, 2, rng);
  EXPECT_EQ(exact, (std::vector<double>{1, 2, 3, 4, 5, 6}));
}

TEST(Windows, CountAndLayout) {
  EXPECT_EQ(window_count(130, 60, 10), 8u);
  EXPECT_EQ(window_count(59, 60, 10), 0u);
  EXPECT_EQ(window_count(60, 60, 10), 1u);

  const auto seq = counting_sequence(130, 2, 3);
  const auto w = make_windows(seq, 60, 10, 2, 7);
  ASSERT_EQ(w.size(), 8u);
  const Sample& s = w[3];
  EXPECT_EQ(s.first_frame, 30u);
  EXPECT_EQ(s.sequence, 3u);
  EXPECT_EQ(s.label, 2);
  EXPECT_EQ(s.n_points, 120u);
  // Point t * P + p holds frame first + t, slot p; values are (C, N) row-major.
  const std::size_t t = 5, p = 1, idx = t * 2 + p;
  EXPECT_EQ(s.values[0 * 120 + idx], 35.0);
  EXPECT_EQ(s.values[1 * 120 + idx], 1.0);
  EXPECT_TRUE(make_windows(counting_sequence(10, 2), 60, 10, 2, 7).empty());
}

TEST(Windows, SamplingDependsOnlyOnSeedSequenceAndFrame) {
  auto seq = counting_sequence(12, 40, 5);
  const auto a = make_windows(seq, 4, 2, 8, 11);
  const auto b = make_windows(seq, 4, 2, 8, 11);
  EXPECT_EQ(a[0].values, b[0].values);
  // Overlapping windows share the same draw for a shared frame.
  const auto c = make_windows(seq, 4, 1, 8, 11);
  for (std::size_t ch = 0; ch < 3; ++ch) {
    for (std::size_t k = 0; k < 8; ++k) {
      EXPECT_EQ(c[1].values[ch * 32 + 8 + k], a[0].values[ch * 32 + 16 + k]);  // frame 2
    }
  }
  seq.id = 6;
  EXPECT_NE(make_windows(seq, 4, 2, 8, 11)[0].values, a[0].values);
}

TEST(Splits, SizesFollowRatios) {
  const auto s = split_samples(labelled(100), {0.8, 0.1, 0.1}, 1);
  EXPECT_EQ(s.train.size(), 80u);
  EXPECT_EQ(s.val.size(), 10u);
  EXPECT_EQ(s.test.size(), 10u);
  const auto odd = split_samples(labelled(37), {0.72, 0.18, 0.1}, 1);
  EXPECT_EQ(odd.val.size(), 6u);
  EXPECT_EQ(odd.test.size(), 3u);
  EXPECT_EQ(odd.train.size(), 28u);
}

TEST(Splits, DisjointAndDeterministic) {
  const auto a = split_samples(labelled(50), {0.6, 0.2, 0.2}, 3);
  const auto b = split_samples(labelled(50), {0.6, 0.2, 0.2}, 3);
  std::set<std::uint64_t> ids;
  for (const auto* part : {&a.train, &a.val, &a.test}) {
    for (const auto& s : *part) ids.insert(s.sequence);
  }
  EXPECT_EQ(ids.size(), 50u);
  for (std::size_t i = 0; i < a.val.size(); ++i) EXPECT_EQ(a.val[i].sequence, b.val[i].sequence);
}

TEST(Splits, EmptySplitsRejected) {
  try {
    split_samples(labelled(10), {1.0, 0.0, 0.0}, 1);
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.field(), "split_ratios");
  }
  EXPECT_THROW(split_samples(labelled(5), {0.8, 0.1, 0.1}, 1), ConfigError);
  const auto [train, val] = split_holdout(labelled(10), 0.2, 1);
  EXPECT_EQ(train.size(), 8u);
  EXPECT_EQ(val.size(), 2u);
}

TEST(PipelineConfigTest, Validation) {
  PipelineConfig p;
  EXPECT_EQ(p.points_per_sample(), 960u);
  p.split_ratios = {0.5, 0.3, 0.1};
  EXPECT_THROW(p.validate(), ConfigError);
  p = {};
  p.window_stride = 0;
  EXPECT_THROW(p.validate(), ConfigError);
}

TEST(Synth, NoiselessKinematics) {
  SynthSpec spec;
  spec.classes = 4;
  spec.sequences_per_class = 2;
  spec.frames = 20;
  spec.points = 10;
  spec.noise = 0.0;
  const auto seqs = synth_generate(spec);
  ASSERT_EQ(seqs.size(), 8u);
  for (const auto& seq : seqs) {
    const auto g = static_cast<std::size_t>(seq.label);
    const auto drift = synth_drift(g, 4);
    const double omega = synth_rotation_rate(g, 4);
    EXPECT_NEAR(std::hypot(drift[0], drift[1]), kSynthSpeed, 1e-15);
    for (std::size_t t = 0; t < 20; ++t) {
      const auto& pts = seq.frames[t].points;
      double cx = 0, cy = 0, cz = 0;
      for (std::size_t p = 0; p < 10; ++p) {
        cx += pts[p * 3] / 10;
        cy += pts[p * 3 + 1] / 10;
        cz += pts[p * 3 + 2] / 10;
      }
      EXPECT_NEAR(cx, t * drift[0], 1e-12);
      EXPECT_NEAR(cy, t * drift[1], 1e-12);
      EXPECT_NEAR(cz, 0.0, 1e-12);
      if (t == 0) continue;
      // Point 0 relative to the centroid turns by omega per frame about z.
      const auto& prev = seq.frames[t - 1].points;
      const double a1 = std::atan2(pts[1] - cy, pts[0] - cx);
      const double a0 = std::atan2(prev[1] - (t - 1.0) * drift[1], prev[0] - (t - 1.0) * drift[0]);
      EXPECT_NEAR(std::remainder(a1 - a0 - omega, 2 * std::acos(-1.0)), 0.0, 1e-9);
    }
  }
  EXPECT_NEAR(synth_rotation_rate(0, 5), -0.2, 1e-15);
  EXPECT_NEAR(synth_rotation_rate(4, 5), 0.2, 1e-15);
}

TEST(Synth, SeededAndValidated) {
  SynthSpec spec;
  spec.sequences_per_class = 1;
  spec.frames = 3;
  EXPECT_EQ(synth_generate(spec)[2].frames[1].points, synth_generate(spec)[2].frames[1].points);
  spec.classes = 1;
  EXPECT_THROW(synth_generate(spec), ConfigError);
}

TEST(Stream, MatchesBatchWindowsWithStrideOne) {
  auto seq = counting_sequence(15, 9, 4);
  const auto batch = make_windows(seq, 5, 1, 6, 21);
  StreamAssembler stream(5, 6, 3, 21, 4);
  std::size_t emitted = 0;
  for (std::size_t f = 0; f < seq.frames.size(); ++f) {
    const auto s = stream.push(seq.frames[f]);
    if (f < 4) {
      EXPECT_FALSE(s);
      continue;
    }
    ASSERT_TRUE(s);
    EXPECT_EQ(s->values, batch[emitted].values);
    EXPECT_EQ(s->first_frame, batch[emitted].first_frame);
    ++emitted;
  }
  EXPECT_EQ(emitted, batch.size());
  EXPECT_EQ(emitted, 15u - 5u + 1u);
  EXPECT_EQ(stream.frames_seen(), 15u);
}

TEST(Stream, RejectsMisshapenFrame) {
  StreamAssembler stream(2, 2, 3, 1);
  EXPECT_THROW(stream.push(Frame{2, {1, 2, 3}}), DataError);
}
