#include "makgcn/model.hpp"

#include <numeric>
#include <string>

#include "makgcn/errors.hpp"

namespace makgcn {

std::string_view variant_name(Variant v) {
  switch (v) {
    case Variant::MakOnly: return "mak";
    case Variant::MakFF: return "mak-ff";
    case Variant::SandwichFF: return "sandwich";
    case Variant::SequentialFF: return "sequential";
  }
  return "?";
}

std::string_view variant_label(Variant v) {
  switch (v) {
    case Variant::MakOnly: return "MAK";
    case Variant::MakFF: return "MAK+FF";
    case Variant::SandwichFF: return "MAK+FF+GC (Sw)";
    case Variant::SequentialFF: return "MAK+FF+GC (Sq)";
  }
  return "?";
}

Variant parse_variant(std::string_view text) {
  for (Variant v : kAllVariants) {
    if (text == variant_name(v)) return v;
  }
  throw ConfigError("variant", "unknown variant '" + std::string(text) +
                                   "' (expected mak, mak-ff, sandwich or sequential)");
}

bool stage_is_mak(Variant v, std::size_t stage) {
  switch (v) {
    case Variant::MakOnly:
    case Variant::MakFF: return true;
    case Variant::SandwichFF: return stage % 2 == 0;
    case Variant::SequentialFF: return stage < 2;
  }
  return false;
}

bool variant_fuses(Variant v) { return v != Variant::MakOnly; }

void ModelConfig::validate() const {
  if (in_channels < 1) throw ConfigError("in_channels", "must be >= 1");
  if (k < 1) throw ConfigError("k", "must be >= 1");
  if (num_heads < 1) throw ConfigError("heads", "must be >= 1");
  for (auto w : stage_widths) {
    if (w < 1) throw ConfigError("stage_widths", "every width must be >= 1");
  }
  if (emb_dims < 1) throw ConfigError("emb_dims", "must be >= 1");
  for (auto w : fc_widths) {
    if (w < 1) throw ConfigError("fc_widths", "every width must be >= 1");
  }
  if (num_classes < 2) throw ConfigError("num_classes", "must be >= 2");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout", "must lie in [0, 1)");
  if (!(leaky_slope >= 0.0 && leaky_slope < 1.0)) throw ConfigError("leaky_slope", "must lie in [0, 1)");
  if (mak_mid_channels < 1) throw ConfigError("mak_mid_channels", "must be >= 1");
}

std::size_t ModelConfig::embedding_input_width() const {
  return variant_fuses(variant)
             ? std::accumulate(stage_widths.begin(), stage_widths.end(), std::size_t{0})
             : stage_widths.back();
}

std::size_t ModelConfig::stage_feature_channels(std::size_t stage) const {
  return 2 * (stage == 0 ? in_channels : stage_widths[stage - 1]);
}

MakConfig ModelConfig::mak_config(std::size_t stage) const {
  MakConfig m;
  m.in_channels = stage_feature_channels(stage);
  m.out_channels = stage_widths[stage];
  m.gen_in_channels = 2 * in_channels;
  m.num_heads = num_heads;
  m.mid_channels = mak_mid_channels;
  m.residual = true;
  m.leaky_slope = leaky_slope;
  return m;
}

template <typename T>
Model<T>::Model(const ModelConfig& config, std::uint64_t seed) : config_(config) {
  config_.validate();
  Rng rng(derive_seed(seed, {0x1417}));
  for (std::size_t s = 0; s < 4; ++s) {
    Stage stage;
    if (stage_is_mak(config_.variant, s)) {
      stage.name = "mak" + std::to_string(s + 1);
      stage.mak.emplace(stage.name, config_.mak_config(s), rng);
    } else {
      stage.name = "conv" + std::to_string(s + 1);
      GraphConvBlock<T> block;
      block.conv = Linear<T>(stage.name + ".conv", config_.stage_feature_channels(s),
                             config_.stage_widths[s], false, rng);
      block.bn = BatchNorm<T>(stage.name + ".bn", config_.stage_widths[s]);
      block.slope = config_.leaky_slope;
      stage.conv = std::move(block);
    }
    stages_.push_back(std::move(stage));
  }
  embedding_.conv = Linear<T>("emb.conv", config_.embedding_input_width(), config_.emb_dims, false, rng);
  embedding_.bn = BatchNorm<T>("emb.bn", config_.emb_dims);
  embedding_.slope = config_.leaky_slope;
  std::size_t prev = 2 * config_.emb_dims;
  for (std::size_t i = 0; i < config_.fc_widths.size(); ++i) {
    const std::string name = "fc" + std::to_string(i + 1);
    GraphConvBlock<T> fc;
    fc.conv = Linear<T>(name + ".linear", prev, config_.fc_widths[i], false, rng);
    fc.bn = BatchNorm<T>(name + ".bn", config_.fc_widths[i]);
    fc.slope = config_.leaky_slope;
    fc_.push_back(std::move(fc));
    prev = config_.fc_widths[i];
  }
  classifier_ = Linear<T>("classifier", prev, config_.num_classes, true, rng);
}

template <typename T>
Tensor<T> Model<T>::forward(const Tensor<T>& points, Mode mode, Rng* rng, ForwardTrace<T>* trace) {
  if (!points.defined() || points.rank() != 3 || points.dim(1) != config_.in_channels) {
    throw DimensionError("model input must be (B, " + std::to_string(config_.in_channels) +
                         ", N), got " + (points.defined() ? shape_str(points.shape()) : "undefined"));
  }
  if (points.dim(2) < config_.k) {
    throw InvalidInputError("model input has N = " + std::to_string(points.dim(2)) +
                            " points, fewer than k = " + std::to_string(config_.k));
  }
  if (mode == Mode::train && config_.dropout > 0.0 && rng == nullptr) {
    throw UsageError("train-mode forward with dropout needs an Rng");
  }

  // One neighbourhood structure from the raw coordinates serves every stage.
  const NeighborIndex index = knn(points, config_.k);
  if (trace) ++trace->knn_calls;
  const Tensor<T> geo = graph_feature(points, index);

  std::vector<Tensor<T>> locals;
  for (std::size_t s = 0; s < stages_.size(); ++s) {
    Stage& stage = stages_[s];
    const Tensor<T> feat = s == 0 ? geo : graph_feature(locals.back(), index);
    Tensor<T> edge;
    if (stage.mak) {
      if (trace) trace->kernel_generation_inputs.push_back(geo);
      edge = stage.mak->forward(geo, feat, mode);
    } else {
      edge = (*stage.conv)(feat, mode);
    }
    locals.push_back(reduce(edge, 3, ReduceKind::max));
  }
  if (trace) trace->stage_outputs = locals;

  const Tensor<T> fused = variant_fuses(config_.variant) ? concat(locals, 1) : locals.back();
  if (trace) trace->fused = fused;
  const Tensor<T> emb = embedding_(fused, mode);
  Tensor<T> h = concat<T>({reduce(emb, 2, ReduceKind::max), reduce(emb, 2, ReduceKind::mean)}, 1);
  for (auto& fc : fc_) {
    h = fc(h, mode);
    if (mode == Mode::train && config_.dropout > 0.0) h = dropout(h, config_.dropout, mode, *rng);
  }
  return classifier_(h);
}

template <typename T>
StateRefs<T> Model<T>::state() {
  StateRefs<T> refs;
  for (auto& stage : stages_) {
    if (stage.mak) stage.mak->collect(refs);
    if (stage.conv) stage.conv->collect(refs);
  }
  embedding_.collect(refs);
  for (auto& fc : fc_) fc.collect(refs);
  classifier_.collect(refs);
  return refs;
}

template <typename T>
std::uint64_t Model<T>::parameter_count() {
  std::uint64_t total = 0;
  for (auto* p : parameters()) total += p->value.numel();
  return total;
}

template <typename T>
void Model<T>::zero_grad() {
  for (auto* p : parameters()) p->value.zero_grad();
}

template <typename T>
std::vector<std::string> Model<T>::stage_names() const {
  std::vector<std::string> names;
  for (const auto& s : stages_) names.push_back(s.name);
  return names;
}

template <typename T>
MakLayer<T>* Model<T>::mak_stage(std::size_t stage) {
  if (stage >= stages_.size() || !stages_[stage].mak) return nullptr;
  return &*stages_[stage].mak;
}

template class Model<float>;
template class Model<double>;

}  // namespace makgcn
