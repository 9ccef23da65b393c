#include <cstdint>

#include "makgcn/errors.hpp"
#include "makgcn/model.hpp"

namespace makgcn {

namespace {

using u64 = std::uint64_t;

u64 batch_norm_params(u64 channels) { return 2 * channels; }

u64 mak_params(const MakConfig& m) {
  const u64 mid = m.mid_channels;
  const u64 kernels = m.kernel_channels();
  u64 total = m.gen_in_channels * mid + batch_norm_params(mid)  // conv0 + bn0
              + mid * mid + batch_norm_params(mid)              // conv_mid + bn_mid
              + mid * kernels + kernels;                        // conv1 weight + bias
  if (m.projects_residual()) {
    total += u64{m.in_channels} * m.out_channels + batch_norm_params(m.out_channels);
  }
  return total + batch_norm_params(m.out_channels);  // bn_out
}

// Per grid position.
u64 mak_macs(const MakConfig& m) {
  const u64 mid = m.mid_channels;
  u64 total = u64{m.gen_in_channels} * mid + mid * mid  // generator hidden stages
              + mid * m.kernel_channels()               // conv1
              + m.kernel_channels();                    // per-head filtering
  if (m.projects_residual()) total += u64{m.in_channels} * m.out_channels;
  return total;
}

}  // namespace

std::uint64_t count_params(const ModelConfig& config) {
  config.validate();
  u64 total = 0;
  for (std::size_t s = 0; s < 4; ++s) {
    if (stage_is_mak(config.variant, s)) {
      total += mak_params(config.mak_config(s));
    } else {
      total += u64{config.stage_feature_channels(s)} * config.stage_widths[s] +
               batch_norm_params(config.stage_widths[s]);
    }
  }
  total += u64{config.embedding_input_width()} * config.emb_dims + batch_norm_params(config.emb_dims);
  u64 prev = 2 * u64{config.emb_dims};
  for (auto w : config.fc_widths) {
    total += prev * w + batch_norm_params(w);
    prev = w;
  }
  return total + prev * config.num_classes + config.num_classes;
}

std::uint64_t count_macs(const ModelConfig& config, std::size_t n_points) {
  config.validate();
  if (n_points < config.k) {
    throw InvalidInputError("count_macs: N = " + std::to_string(n_points) + " < k = " +
                            std::to_string(config.k));
  }
  const u64 n = n_points;
  const u64 grid = n * config.k;
  u64 total = u64{config.in_channels} * n * n;  // Gram product of the neighbour search
  for (std::size_t s = 0; s < 4; ++s) {
    if (stage_is_mak(config.variant, s)) {
      total += grid * mak_macs(config.mak_config(s));
    } else {
      total += grid * config.stage_feature_channels(s) * config.stage_widths[s];
    }
  }
  total += n * config.embedding_input_width() * config.emb_dims;
  u64 prev = 2 * u64{config.emb_dims};
  for (auto w : config.fc_widths) {
    total += prev * w;
    prev = w;
  }
  return total + prev * config.num_classes;
}

}  // namespace makgcn
