#pragma once

// Frame sequences, window stacking, splits, the synthetic generator and the
// streaming assembler.
//
// Frame file layout (one sequence per file):
//   C=<int> rate=<float> label=<int> subject=<int>
//   <frame index> <m> <m*C floats, point-major>
//   ...

#include <array>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "makgcn/rng.hpp"

namespace makgcn {

struct Frame {
  std::size_t count = 0;      // m points
  std::vector<double> points; // m * C, point-major
};

struct FrameSequence {
  std::uint64_t id = 0;  // stream key for the per-frame sampling RNG
  std::size_t channels = 3;
  double frame_rate = 30.0;
  int label = 0;
  int subject = -1;
  std::vector<Frame> frames;
};

// One stacked window: values are (C, N) row-major with N = T * P, and the
// point index of frame t, slot p is t * P + p.
struct Sample {
  std::size_t channels = 0;
  std::size_t n_points = 0;
  std::vector<double> values;
  int label = 0;
  std::uint64_t sequence = 0;
  std::size_t first_frame = 0;
};

struct PipelineConfig {
  std::size_t window_frames = 60;
  std::size_t window_stride = 10;
  std::size_t points_per_frame = 16;
  std::array<double, 3> split_ratios = {0.8, 0.1, 0.1};
  std::uint64_t seed = 7;

  void validate() const;  // ConfigError naming the field
  std::size_t points_per_sample() const { return window_frames * points_per_frame; }
};

struct FrameHeader {
  std::size_t channels = 3;
  double frame_rate = 30.0;
  int label = 0;
  int subject = -1;
};

// Throws DataError on a malformed header.
FrameHeader parse_frame_header(std::string_view line);
std::string format_frame_header(const FrameHeader& header);
// nullopt on a malformed line; frame_index receives the leading index.
std::optional<Frame> parse_frame_line(std::string_view line, std::size_t channels,
                                      long long* frame_index = nullptr);

FrameSequence read_frame_file(const std::filesystem::path& path, std::uint64_t id = 0);
void write_frame_file(const std::filesystem::path& path, const FrameSequence& seq);

// One path per line; blank lines and '#' comments ignored; relative paths are
// taken relative to the manifest's directory.
std::vector<std::filesystem::path> read_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, const std::vector<std::filesystem::path>& files);
// Sequence ids are manifest positions.
std::vector<FrameSequence> load_sequences(const std::filesystem::path& manifest);

// Seed of the sampling stream for one frame of one sequence.
std::uint64_t frame_stream_seed(std::uint64_t seed, std::uint64_t sequence, std::uint64_t frame);

// (m x C) -> (P x C): random ordered subset when m > P, zero padding when m < P.
std::vector<double> normalize_frame(const Frame& frame, std::size_t channels, std::size_t points,
                                    Rng& rng);

std::size_t window_count(std::size_t frames, std::size_t window, std::size_t stride);
std::vector<Sample> make_windows(const FrameSequence& seq, std::size_t window, std::size_t stride,
                                 std::size_t points, std::uint64_t seed);
std::vector<Sample> make_windows(const std::vector<FrameSequence>& seqs, const PipelineConfig& config);

struct Split {
  std::vector<Sample> train;
  std::vector<Sample> val;
  std::vector<Sample> test;
};

// Seeded shuffle, then contiguous partition; val and test sizes are floored and
// the residue goes to train. Throws ConfigError if a split would be empty.
Split split_samples(std::vector<Sample> samples, const std::array<double, 3>& ratios,
                    std::uint64_t seed);

// Two-way variant for data that ships its own test set: holds out
// floor(fraction * n) samples for validation.
std::pair<std::vector<Sample>, std::vector<Sample>> split_holdout(std::vector<Sample> samples,
                                                                  double fraction, std::uint64_t seed);

struct SynthSpec {
  std::size_t classes = 5;
  std::size_t sequences_per_class = 80;
  std::size_t frames = 70;
  std::size_t points = 32;
  double noise = 0.05;
  std::uint64_t seed = 7;

  void validate() const;
};

// Per class g: drift along azimuth 2*pi*g/G (speed kSynthSpeed per frame) and
// rotation about z at a class-indexed rate. Each sequence has its own
// anisotropic blob; noise is isotropic per point and frame.
inline constexpr double kSynthSpeed = 0.03;
double synth_rotation_rate(std::size_t cls, std::size_t classes);
std::array<double, 3> synth_drift(std::size_t cls, std::size_t classes);
std::vector<FrameSequence> synth_generate(const SynthSpec& spec);

// Ring buffer of the last T normalised frames. Frames are keyed by arrival
// order, so a full stream reproduces make_windows(stride 1) bit for bit.
class StreamAssembler {
 public:
  StreamAssembler(std::size_t window, std::size_t points, std::size_t channels, std::uint64_t seed,
                  std::uint64_t sequence = 0);

  std::optional<Sample> push(const Frame& frame);
  std::size_t frames_seen() const { return seen_; }

 private:
  std::size_t window_, points_, channels_;
  std::uint64_t seed_, sequence_;
  std::size_t seen_ = 0;
  std::deque<std::vector<double>> ring_;
};

}  // namespace makgcn
