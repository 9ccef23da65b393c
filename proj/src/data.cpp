#include "makgcn/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "makgcn/errors.hpp"

namespace makgcn {

namespace {

std::vector<std::string_view> split_ws(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    const std::size_t start = i;
    while (i < line.size() && !std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    if (i > start) out.push_back(line.substr(start, i - start));
  }
  return out;
}

template <typename N>
bool parse_number(std::string_view text, N& value) {
  const char* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, value);
  return ec == std::errc() && ptr == end;
}

void append_number(std::string& out, double v) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  out.append(buf, ptr);
}

// Stacks T normalised (P x C) frames into (C, T * P).
std::vector<double> stack_frames(const std::vector<const std::vector<double>*>& frames,
                                 std::size_t channels, std::size_t points) {
  const std::size_t n = frames.size() * points;
  std::vector<double> values(channels * n);
  for (std::size_t t = 0; t < frames.size(); ++t) {
    const auto& f = *frames[t];
    for (std::size_t p = 0; p < points; ++p) {
      for (std::size_t c = 0; c < channels; ++c) values[c * n + t * points + p] = f[p * channels + c];
    }
  }
  return values;
}

}  // namespace

void PipelineConfig::validate() const {
  if (window_frames < 1) throw ConfigError("window_frames", "must be >= 1");
  if (window_stride < 1) throw ConfigError("window_stride", "must be >= 1");
  if (points_per_frame < 1) throw ConfigError("points_per_frame", "must be >= 1");
  double total = 0.0;
  for (double r : split_ratios) {
    if (!(r > 0.0)) throw ConfigError("split_ratios", "every ratio must be positive");
    total += r;
  }
  if (std::abs(total - 1.0) > 1e-9) throw ConfigError("split_ratios", "ratios must sum to 1");
}

FrameHeader parse_frame_header(std::string_view line) {
  FrameHeader h;
  bool have_c = false, have_rate = false, have_label = false;
  for (auto token : split_ws(line)) {
    const auto eq = token.find('=');
    if (eq == std::string_view::npos) throw DataError("frame header: bad token '" + std::string(token) + "'");
    const auto key = token.substr(0, eq);
    const auto value = token.substr(eq + 1);
    bool ok = false;
    if (key == "C") {
      ok = parse_number(value, h.channels) && h.channels >= 1;
      have_c = true;
    } else if (key == "rate") {
      ok = parse_number(value, h.frame_rate) && h.frame_rate > 0.0;
      have_rate = true;
    } else if (key == "label") {
      ok = parse_number(value, h.label) && h.label >= 0;
      have_label = true;
    } else if (key == "subject") {
      ok = parse_number(value, h.subject);
    } else {
      throw DataError("frame header: unknown key '" + std::string(key) + "'");
    }
    if (!ok) throw DataError("frame header: bad value for " + std::string(key));
  }
  if (!have_c || !have_rate || !have_label) throw DataError("frame header needs C, rate and label");
  return h;
}

std::string format_frame_header(const FrameHeader& h) {
  std::string out = "C=" + std::to_string(h.channels) + " rate=";
  append_number(out, h.frame_rate);
  out += " label=" + std::to_string(h.label) + " subject=" + std::to_string(h.subject);
  return out;
}

std::optional<Frame> parse_frame_line(std::string_view line, std::size_t channels,
                                      long long* frame_index) {
  const auto tokens = split_ws(line);
  if (tokens.size() < 2) return std::nullopt;
  long long index = 0;
  std::size_t m = 0;
  if (!parse_number(tokens[0], index) || !parse_number(tokens[1], m)) return std::nullopt;
  if (tokens.size() != 2 + m * channels) return std::nullopt;
  Frame f;
  f.count = m;
  f.points.resize(m * channels);
  for (std::size_t i = 0; i < f.points.size(); ++i) {
    if (!parse_number(tokens[2 + i], f.points[i]) || !std::isfinite(f.points[i])) return std::nullopt;
  }
  if (frame_index) *frame_index = index;
  return f;
}

FrameSequence read_frame_file(const std::filesystem::path& path, std::uint64_t id) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open frame file " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw DataError(path.string() + ": empty file");
  const FrameHeader h = parse_frame_header(line);
  FrameSequence seq{id, h.channels, h.frame_rate, h.label, h.subject, {}};
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (split_ws(line).empty()) continue;
    auto frame = parse_frame_line(line, h.channels);
    if (!frame) throw DataError(path.string() + ":" + std::to_string(lineno) + ": malformed frame line");
    seq.frames.push_back(std::move(*frame));
  }
  if (seq.frames.empty()) throw DataError(path.string() + ": no frames");
  return seq;
}

void write_frame_file(const std::filesystem::path& path, const FrameSequence& seq) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write frame file " + path.string());
  out << format_frame_header({seq.channels, seq.frame_rate, seq.label, seq.subject}) << '\n';
  std::string line;
  for (std::size_t i = 0; i < seq.frames.size(); ++i) {
    const auto& f = seq.frames[i];
    line = std::to_string(i) + ' ' + std::to_string(f.count);
    for (double v : f.points) {
      line += ' ';
      append_number(line, v);
    }
    out << line << '\n';
  }
  if (!out) throw DataError("write failed: " + path.string());
}

std::vector<std::filesystem::path> read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open manifest " + path.string());
  std::vector<std::filesystem::path> files;
  std::string line;
  while (std::getline(in, line)) {
    const auto tokens = split_ws(line);
    if (tokens.empty() || tokens[0].front() == '#') continue;
    const auto first = line.find_first_not_of(" \t\r");
    const auto last = line.find_last_not_of(" \t\r");
    const std::filesystem::path p(line.substr(first, last - first + 1));
    files.push_back(p.is_absolute() ? p : path.parent_path() / p);
  }
  if (files.empty()) throw DataError("manifest " + path.string() + " lists no files");
  return files;
}

void write_manifest(const std::filesystem::path& path, const std::vector<std::filesystem::path>& files) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write manifest " + path.string());
  for (const auto& f : files) out << f.generic_string() << '\n';
}

std::vector<FrameSequence> load_sequences(const std::filesystem::path& manifest) {
  const auto files = read_manifest(manifest);
  std::vector<FrameSequence> seqs;
  seqs.reserve(files.size());
  for (std::size_t i = 0; i < files.size(); ++i) {
    seqs.push_back(read_frame_file(files[i], i));
    if (seqs.back().channels != seqs.front().channels) {
      throw DataError(files[i].string() + ": channel count differs from " + files[0].string());
    }
  }
  return seqs;
}

std::uint64_t frame_stream_seed(std::uint64_t seed, std::uint64_t sequence, std::uint64_t frame) {
  return derive_seed(seed, {0xF7A3E, sequence, frame});
}

std::vector<double> normalize_frame(const Frame& frame, std::size_t channels, std::size_t points,
                                    Rng& rng) {
  std::vector<double> out(points * channels, 0.0);
  const std::size_t m = frame.count;
  if (m <= points) {
    std::copy(frame.points.begin(), frame.points.begin() + static_cast<std::ptrdiff_t>(m * channels),
              out.begin());
    return out;
  }
  std::vector<std::size_t> chosen(points);
  std::vector<std::size_t> all(m);
  std::iota(all.begin(), all.end(), std::size_t{0});
  std::sample(all.begin(), all.end(), chosen.begin(), points, rng.engine());  // keeps order
  for (std::size_t p = 0; p < points; ++p) {
    std::copy_n(frame.points.begin() + static_cast<std::ptrdiff_t>(chosen[p] * channels), channels,
                out.begin() + static_cast<std::ptrdiff_t>(p * channels));
  }
  return out;
}

std::size_t window_count(std::size_t frames, std::size_t window, std::size_t stride) {
  return frames < window ? 0 : (frames - window) / stride + 1;
}

std::vector<Sample> make_windows(const FrameSequence& seq, std::size_t window, std::size_t stride,
                                 std::size_t points, std::uint64_t seed) {
  if (window < 1) throw ConfigError("window_frames", "must be >= 1");
  if (stride < 1) throw ConfigError("window_stride", "must be >= 1");
  if (points < 1) throw ConfigError("points_per_frame", "must be >= 1");
  const std::size_t count = window_count(seq.frames.size(), window, stride);
  if (count == 0) return {};
  const std::size_t used = (count - 1) * stride + window;
  std::vector<std::vector<double>> normalized(used);
  for (std::size_t f = 0; f < used; ++f) {
    Rng rng(frame_stream_seed(seed, seq.id, f));
    normalized[f] = normalize_frame(seq.frames[f], seq.channels, points, rng);
  }
  std::vector<Sample> out;
  out.reserve(count);
  std::vector<const std::vector<double>*> span(window);
  for (std::size_t w = 0; w < count; ++w) {
    for (std::size_t t = 0; t < window; ++t) span[t] = &normalized[w * stride + t];
    out.push_back({seq.channels, window * points, stack_frames(span, seq.channels, points), seq.label,
                   seq.id, w * stride});
  }
  return out;
}

std::vector<Sample> make_windows(const std::vector<FrameSequence>& seqs, const PipelineConfig& config) {
  config.validate();
  std::vector<Sample> out;
  for (const auto& seq : seqs) {
    auto w = make_windows(seq, config.window_frames, config.window_stride, config.points_per_frame,
                          config.seed);
    std::move(w.begin(), w.end(), std::back_inserter(out));
  }
  return out;
}

Split split_samples(std::vector<Sample> samples, const std::array<double, 3>& ratios,
                    std::uint64_t seed) {
  for (double r : ratios) {
    if (!(r > 0.0)) throw ConfigError("split_ratios", "every ratio must be positive");
  }
  const std::size_t n = samples.size();
  const auto n_val = static_cast<std::size_t>(std::floor(ratios[1] * static_cast<double>(n) + 1e-9));
  const auto n_test = static_cast<std::size_t>(std::floor(ratios[2] * static_cast<double>(n) + 1e-9));
  if (n_val == 0 || n_test == 0 || n_val + n_test >= n) {
    throw ConfigError("split_ratios", std::to_string(n) + " samples leave an empty split");
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(derive_seed(seed, {0x5B117}));
  std::shuffle(order.begin(), order.end(), rng.engine());
  Split s;
  const std::size_t n_train = n - n_val - n_test;
  for (std::size_t i = 0; i < n; ++i) {
    auto& dst = i < n_train ? s.train : (i < n_train + n_val ? s.val : s.test);
    dst.push_back(std::move(samples[order[i]]));
  }
  return s;
}

std::pair<std::vector<Sample>, std::vector<Sample>> split_holdout(std::vector<Sample> samples,
                                                                  double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction < 1.0)) throw ConfigError("val_fraction", "must lie in (0, 1)");
  const std::size_t n = samples.size();
  const auto n_val = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(n) + 1e-9));
  if (n_val == 0 || n_val >= n) {
    throw ConfigError("val_fraction", std::to_string(n) + " samples leave an empty split");
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(derive_seed(seed, {0x5B117}));
  std::shuffle(order.begin(), order.end(), rng.engine());
  std::pair<std::vector<Sample>, std::vector<Sample>> out;
  for (std::size_t i = 0; i < n; ++i) {
    (i < n - n_val ? out.first : out.second).push_back(std::move(samples[order[i]]));
  }
  return out;
}

void SynthSpec::validate() const {
  if (classes < 2) throw ConfigError("classes", "must be >= 2");
  if (sequences_per_class < 1) throw ConfigError("sequences_per_class", "must be >= 1");
  if (frames < 1) throw ConfigError("frames", "must be >= 1");
  if (points < 1) throw ConfigError("points", "must be >= 1");
  if (!(noise >= 0.0)) throw ConfigError("noise", "must be >= 0");
}

double synth_rotation_rate(std::size_t cls, std::size_t classes) {
  return 0.1 * (static_cast<double>(cls) - 0.5 * static_cast<double>(classes - 1));
}

std::array<double, 3> synth_drift(std::size_t cls, std::size_t classes) {
  const double angle = 2.0 * std::acos(-1.0) * static_cast<double>(cls) / static_cast<double>(classes);
  return {kSynthSpeed * std::cos(angle), kSynthSpeed * std::sin(angle), 0.0};
}

std::vector<FrameSequence> synth_generate(const SynthSpec& spec) {
  spec.validate();
  std::vector<FrameSequence> out;
  out.reserve(spec.classes * spec.sequences_per_class);
  for (std::size_t g = 0; g < spec.classes; ++g) {
    const auto drift = synth_drift(g, spec.classes);
    const double omega = synth_rotation_rate(g, spec.classes);
    for (std::size_t s = 0; s < spec.sequences_per_class; ++s) {
      FrameSequence seq;
      seq.id = out.size();
      seq.channels = 3;
      seq.frame_rate = 30.0;
      seq.label = static_cast<int>(g);
      seq.subject = static_cast<int>(s);
      Rng rng(derive_seed(spec.seed, {0x5F17, g, s}));
      // Anisotropic blob, centred so the noiseless centroid sits on the drift path.
      const std::array<double, 3> sigma = {rng.uniform(0.15, 0.3), rng.uniform(0.05, 0.12),
                                           rng.uniform(0.1, 0.25)};
      std::vector<double> offsets(spec.points * 3);
      for (std::size_t p = 0; p < spec.points; ++p) {
        for (std::size_t c = 0; c < 3; ++c) offsets[p * 3 + c] = rng.normal(0.0, sigma[c]);
      }
      for (std::size_t c = 0; c < 3; ++c) {
        double mean = 0.0;
        for (std::size_t p = 0; p < spec.points; ++p) mean += offsets[p * 3 + c];
        mean /= static_cast<double>(spec.points);
        for (std::size_t p = 0; p < spec.points; ++p) offsets[p * 3 + c] -= mean;
      }
      for (std::size_t t = 0; t < spec.frames; ++t) {
        const double tt = static_cast<double>(t);
        const double ca = std::cos(omega * tt), sa = std::sin(omega * tt);
        Frame f;
        f.count = spec.points;
        f.points.resize(spec.points * 3);
        for (std::size_t p = 0; p < spec.points; ++p) {
          const double ox = offsets[p * 3], oy = offsets[p * 3 + 1], oz = offsets[p * 3 + 2];
          const double pos[3] = {tt * drift[0] + ca * ox - sa * oy, tt * drift[1] + sa * ox + ca * oy,
                                 tt * drift[2] + oz};
          for (std::size_t c = 0; c < 3; ++c) {
            f.points[p * 3 + c] = pos[c] + (spec.noise > 0.0 ? rng.normal(0.0, spec.noise) : 0.0);
          }
        }
        seq.frames.push_back(std::move(f));
      }
      out.push_back(std::move(seq));
    }
  }
  return out;
}

StreamAssembler::StreamAssembler(std::size_t window, std::size_t points, std::size_t channels,
                                 std::uint64_t seed, std::uint64_t sequence)
    : window_(window), points_(points), channels_(channels), seed_(seed), sequence_(sequence) {
  if (window_ < 1) throw ConfigError("window_frames", "must be >= 1");
  if (points_ < 1) throw ConfigError("points_per_frame", "must be >= 1");
  if (channels_ < 1) throw ConfigError("channels", "must be >= 1");
}

std::optional<Sample> StreamAssembler::push(const Frame& frame) {
  if (frame.points.size() != frame.count * channels_) {
    throw DataError("stream frame has " + std::to_string(frame.points.size()) + " values for " +
                    std::to_string(frame.count) + " points of " + std::to_string(channels_) + " channels");
  }
  Rng rng(frame_stream_seed(seed_, sequence_, seen_));
  ring_.push_back(normalize_frame(frame, channels_, points_, rng));
  ++seen_;
  if (ring_.size() > window_) ring_.pop_front();
  if (ring_.size() < window_) return std::nullopt;
  std::vector<const std::vector<double>*> span;
  for (const auto& f : ring_) span.push_back(&f);
  return Sample{channels_, window_ * points_, stack_frames(span, channels_, points_), -1, sequence_,
                seen_ - window_};
}

}  // namespace makgcn
