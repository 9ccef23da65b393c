#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "makgcn/graph_ops.hpp"
#include "makgcn/mak.hpp"
#include "makgcn/nn.hpp"

namespace makgcn {

// Layer ordering / fusion variants of the four feature-extraction stages.
enum class Variant {
  MakOnly,       // MAK x4, classifier fed from the last stage only
  MakFF,         // MAK x4 with feature fusion
  SandwichFF,    // MAK, conv, MAK, conv with feature fusion
  SequentialFF,  // MAK, MAK, conv, conv with feature fusion
};

inline constexpr std::array<Variant, 4> kAllVariants = {Variant::MakOnly, Variant::MakFF,
                                                        Variant::SandwichFF, Variant::SequentialFF};

std::string_view variant_name(Variant v);   // CLI spelling, e.g. "sequential"
std::string_view variant_label(Variant v);  // table label, e.g. "MAK+FF+GC (Sq)"
Variant parse_variant(std::string_view text);  // throws ConfigError("variant", ...)

// True for stages built from MAK layers under the variant (stage index 0..3).
bool stage_is_mak(Variant v, std::size_t stage);
bool variant_fuses(Variant v);

struct ModelConfig {
  std::size_t in_channels = 3;
  std::size_t k = 20;
  std::size_t num_heads = 1;
  std::array<std::size_t, 4> stage_widths = {64, 64, 128, 256};
  std::size_t emb_dims = 1024;
  std::vector<std::size_t> fc_widths = {512, 256};
  std::size_t num_classes = 5;
  Variant variant = Variant::SequentialFF;
  double dropout = 0.5;
  double leaky_slope = kDefaultLeakySlope;
  std::size_t mak_mid_channels = 8;

  // Throws ConfigError naming the offending field.
  void validate() const;

  // Width entering the embedding map: the fused concatenation or the last stage.
  std::size_t embedding_input_width() const;
  // Input channels of the features fed to stage s (graph features double them).
  std::size_t stage_feature_channels(std::size_t stage) const;
  MakConfig mak_config(std::size_t stage) const;
};

// Closed-form parameter total; independent of k and N.
std::uint64_t count_params(const ModelConfig& config);

// Multiply-accumulates for one sample of n points. Counts the Gram product of
// the neighbour search, every channel map, the generator and the per-head
// filtering; comparisons, normalisation, activations and additions are free.
std::uint64_t count_macs(const ModelConfig& config, std::size_t n_points);

template <typename T>
struct ForwardTrace {
  std::size_t knn_calls = 0;
  std::vector<Tensor<T>> kernel_generation_inputs;  // geo input of each MAK stage, in order
  std::vector<Tensor<T>> stage_outputs;             // x_1 .. x_4, each (B, w_s, N)
  Tensor<T> fused;                                  // input to the embedding map
};

template <typename T>
struct GraphConvBlock {
  Linear<T> conv;
  BatchNorm<T> bn;
  double slope = kDefaultLeakySlope;

  Tensor<T> operator()(const Tensor<T>& x, Mode mode) {
    return leaky_relu(bn(conv(x), mode), slope);
  }
  void collect(StateRefs<T>& refs) {
    conv.collect(refs);
    bn.collect(refs);
  }
};

template <typename T>
class Model {
 public:
  Model(const ModelConfig& config, std::uint64_t seed);
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;
  Model(Model&&) noexcept = default;
  Model& operator=(Model&&) noexcept = default;

  const ModelConfig& config() const { return config_; }

  // (B, C, N) -> (B, num_classes). rng drives dropout and is required in train
  // mode when dropout > 0.
  Tensor<T> forward(const Tensor<T>& points, Mode mode, Rng* rng = nullptr,
                    ForwardTrace<T>* trace = nullptr);

  StateRefs<T> state();
  std::vector<Parameter<T>*> parameters() { return state().params; }
  std::uint64_t parameter_count();
  void zero_grad();

  // Stage layer names in order, e.g. {"mak1", "mak2", "conv3", "conv4"}.
  std::vector<std::string> stage_names() const;
  MakLayer<T>* mak_stage(std::size_t stage);

 private:
  struct Stage {
    std::string name;
    std::optional<MakLayer<T>> mak;
    std::optional<GraphConvBlock<T>> conv;
  };

  ModelConfig config_;
  std::vector<Stage> stages_;
  GraphConvBlock<T> embedding_;
  std::vector<GraphConvBlock<T>> fc_;
  Linear<T> classifier_;
};

}  // namespace makgcn
