#include "makgcn/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>

#include "makgcn/errors.hpp"

namespace makgcn {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'M', 'A', 'K', 'C', 'K', 'P', 'T', '1'};

template <typename U>
void put(std::ostream& out, U v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(U));
}

template <typename U>
U get(std::istream& in, const std::string& what) {
  U v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof(U))) throw DataError("checkpoint truncated reading " + what);
  return v;
}

template <typename V>
V field(const Json& j, const char* key, V fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<V>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError(key, "has the wrong type");
  }
}

}  // namespace

DType parse_dtype(const std::string& text) {
  if (text == "f32") return DType::f32;
  if (text == "f64") return DType::f64;
  throw ConfigError("dtype", "expected f32 or f64, got '" + text + "'");
}

Json to_json(const ModelConfig& c) {
  return Json{{"in_channels", c.in_channels},   {"k", c.k},
              {"heads", c.num_heads},           {"stage_widths", c.stage_widths},
              {"emb_dims", c.emb_dims},         {"fc_widths", c.fc_widths},
              {"num_classes", c.num_classes},   {"variant", std::string(variant_name(c.variant))},
              {"dropout", c.dropout},           {"leaky_slope", c.leaky_slope},
              {"mak_mid_channels", c.mak_mid_channels}};
}

Json to_json(const TrainConfig& c) {
  return Json{{"lr_max", c.lr_max},
              {"lr_min", c.lr_min},
              {"momentum", c.momentum},
              {"weight_decay", c.weight_decay},
              {"batch", c.batch_size},
              {"epochs", c.max_epochs},
              {"patience", c.patience},
              {"seed", c.seed},
              {"dtype", dtype_name(c.dtype)}};
}

Json to_json(const PipelineConfig& c) {
  return Json{{"window_frames", c.window_frames},
              {"window_stride", c.window_stride},
              {"points_per_frame", c.points_per_frame},
              {"split_ratios", c.split_ratios},
              {"seed", c.seed}};
}

Json to_json(const Metrics& m) {
  return Json{{"accuracy", m.accuracy}, {"precision", m.precision}, {"recall", m.recall},
              {"f1", m.f1},             {"confusion", m.confusion}};
}

ModelConfig model_config_from_json(const Json& j) {
  ModelConfig c;
  c.in_channels = field(j, "in_channels", c.in_channels);
  c.k = field(j, "k", c.k);
  c.num_heads = field(j, "heads", c.num_heads);
  c.stage_widths = field(j, "stage_widths", c.stage_widths);
  c.emb_dims = field(j, "emb_dims", c.emb_dims);
  c.fc_widths = field(j, "fc_widths", c.fc_widths);
  c.num_classes = field(j, "num_classes", c.num_classes);
  c.variant = parse_variant(field(j, "variant", std::string(variant_name(c.variant))));
  c.dropout = field(j, "dropout", c.dropout);
  c.leaky_slope = field(j, "leaky_slope", c.leaky_slope);
  c.mak_mid_channels = field(j, "mak_mid_channels", c.mak_mid_channels);
  c.validate();
  return c;
}

TrainConfig train_config_from_json(const Json& j) {
  TrainConfig c;
  c.lr_max = field(j, "lr_max", c.lr_max);
  c.lr_min = field(j, "lr_min", c.lr_min);
  c.momentum = field(j, "momentum", c.momentum);
  c.weight_decay = field(j, "weight_decay", c.weight_decay);
  c.batch_size = field(j, "batch", c.batch_size);
  c.max_epochs = field(j, "epochs", c.max_epochs);
  c.patience = field(j, "patience", c.patience);
  c.seed = field(j, "seed", c.seed);
  c.dtype = parse_dtype(field(j, "dtype", std::string(dtype_name(c.dtype))));
  c.validate();
  return c;
}

PipelineConfig pipeline_config_from_json(const Json& j) {
  PipelineConfig c;
  c.window_frames = field(j, "window_frames", c.window_frames);
  c.window_stride = field(j, "window_stride", c.window_stride);
  c.points_per_frame = field(j, "points_per_frame", c.points_per_frame);
  c.split_ratios = field(j, "split_ratios", c.split_ratios);
  c.seed = field(j, "seed", c.seed);
  c.validate();
  return c;
}

template <typename T>
void save_checkpoint(const std::filesystem::path& path, Model<T>& model, Json manifest) {
  manifest["format_version"] = kCheckpointFormatVersion;
  manifest["dtype"] = dtype_name(dtype_of<T>());
  manifest["model"] = to_json(model.config());
  const std::string text = manifest.dump(2);

  const auto refs = model.state();
  std::vector<std::pair<const std::string*, const Tensor<T>*>> blobs;
  for (auto* p : refs.params) blobs.emplace_back(&p->name, &p->value);
  for (auto* b : refs.buffers) blobs.emplace_back(&b->name, &b->value);

  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write checkpoint " + tmp.string());
    out.write(kMagic, sizeof(kMagic));
    put<std::uint64_t>(out, text.size());
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    put<std::uint64_t>(out, blobs.size());
    for (const auto& [name, tensor] : blobs) {
      put<std::uint32_t>(out, static_cast<std::uint32_t>(name->size()));
      out.write(name->data(), static_cast<std::streamsize>(name->size()));
      put<std::uint8_t>(out, static_cast<std::uint8_t>(dtype_of<T>()));
      put<std::uint32_t>(out, static_cast<std::uint32_t>(tensor->rank()));
      for (auto e : tensor->shape()) put<std::uint64_t>(out, e);
      const auto data = tensor->data();
      put<std::uint64_t>(out, data.size_bytes());
      out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size_bytes()));
    }
    if (!out.flush()) throw DataError("write failed: " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw DataError("cannot move checkpoint into place at " + path.string() + ": " + ec.message());
}

CheckpointFile read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path.string());
  char magic[sizeof(kMagic)];
  if (!in.read(magic, sizeof(magic)) || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw DataError(path.string() + " is not a checkpoint");
  }
  CheckpointFile file;
  const auto text_len = get<std::uint64_t>(in, "manifest length");
  std::string text(text_len, '\0');
  if (!in.read(text.data(), static_cast<std::streamsize>(text_len))) throw DataError("checkpoint truncated in manifest");
  try {
    file.manifest = Json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("checkpoint manifest is not valid JSON: ") + e.what());
  }
  const auto count = get<std::uint64_t>(in, "blob count");
  for (std::uint64_t i = 0; i < count; ++i) {
    CheckpointBlob blob;
    blob.name.resize(get<std::uint32_t>(in, "name length"));
    if (!in.read(blob.name.data(), static_cast<std::streamsize>(blob.name.size()))) {
      throw DataError("checkpoint truncated in blob name");
    }
    const auto tag = get<std::uint8_t>(in, "dtype tag");
    if (tag > 1) throw DataError("blob " + blob.name + " has unknown dtype tag " + std::to_string(tag));
    blob.dtype = static_cast<DType>(tag);
    blob.shape.resize(get<std::uint32_t>(in, "rank"));
    for (auto& e : blob.shape) e = get<std::uint64_t>(in, "extent");
    const auto bytes = get<std::uint64_t>(in, "payload size");
    const std::size_t elem = blob.dtype == DType::f32 ? 4 : 8;
    if (bytes != shape_numel(blob.shape) * elem) throw DataError("blob " + blob.name + " payload size disagrees with shape");
    blob.payload.resize(bytes);
    if (!in.read(reinterpret_cast<char*>(blob.payload.data()), static_cast<std::streamsize>(bytes))) {
      throw DataError("checkpoint truncated in blob " + blob.name);
    }
    file.blobs.push_back(std::move(blob));
  }
  return file;
}

template <typename T>
void load_state(Model<T>& model, const CheckpointFile& file) {
  const auto refs = model.state();
  std::vector<std::pair<const std::string*, Tensor<T>*>> slots;
  for (auto* p : refs.params) slots.emplace_back(&p->name, &p->value);
  for (auto* b : refs.buffers) slots.emplace_back(&b->name, &b->value);

  std::map<std::string, const CheckpointBlob*> by_name;
  for (const auto& b : file.blobs) {
    if (!by_name.emplace(b.name, &b).second) throw CheckpointMismatch("duplicate blob " + b.name);
  }
  if (by_name.size() != slots.size()) {
    throw CheckpointMismatch("checkpoint holds " + std::to_string(by_name.size()) + " tensors, model expects " +
                             std::to_string(slots.size()));
  }
  for (const auto& [name, tensor] : slots) {
    const auto it = by_name.find(*name);
    if (it == by_name.end()) throw CheckpointMismatch("checkpoint lacks " + *name);
    const CheckpointBlob& blob = *it->second;
    if (blob.dtype != dtype_of<T>()) {
      throw CheckpointMismatch(*name + " stored as " + dtype_name(blob.dtype) + ", model uses " +
                               dtype_name(dtype_of<T>()));
    }
    if (blob.shape != tensor->shape()) {
      throw CheckpointMismatch(*name + " has shape " + shape_str(blob.shape) + ", model expects " +
                               shape_str(tensor->shape()));
    }
  }
  for (const auto& [name, tensor] : slots) {
    const CheckpointBlob& blob = *by_name.at(*name);
    std::memcpy(tensor->storage().data(), blob.payload.data(), blob.payload.size());
  }
}

template void save_checkpoint<float>(const std::filesystem::path&, Model<float>&, Json);
template void save_checkpoint<double>(const std::filesystem::path&, Model<double>&, Json);
template void load_state<float>(Model<float>&, const CheckpointFile&);
template void load_state<double>(Model<double>&, const CheckpointFile&);

}  // namespace makgcn
