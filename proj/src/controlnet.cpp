#include "omg/controlnet.hpp"

#include "omg/error.hpp"

namespace omg {

template <class S>
TensorList<S> ControlTrainable<S>::tensors() {
  TensorList<S> out;
  for (std::size_t l = 0; l < blocks.size(); ++l) blocks[l].collect("control.blocks." + std::to_string(l), out);
  for (std::size_t l = 0; l < moc.size(); ++l) {
    for (auto& t : moc[l].tensors()) {
      t.name = "control.moc." + std::to_string(l) + "." + t.name;
      out.push_back(t);
    }
  }
  return out;
}

template <class S>
ControlTrainable<S> ControlTrainable<S>::zeros_like() const {
  ControlTrainable<S> out = *this;
  zero_all(out.tensors());
  return out;
}

template <class S>
std::uint64_t frozen_checksum(const DenoiserParams<S>& base) {
  return checksum(base.tensors());
}

template <class S>
void ControlNetParams<S>::verify_integrity() const {
  require(base != nullptr, ErrorCode::kCheckpointMismatch, "controlnet has no frozen backbone");
  const std::uint64_t now = omg::frozen_checksum(*base);
  require(now == frozen_checksum, ErrorCode::kCheckpointMismatch,
          "frozen backbone checksum " + std::to_string(now) + " differs from recorded " +
              std::to_string(frozen_checksum));
}

template <class S>
ControlNetParams<S> build_controlnet(std::shared_ptr<const DenoiserParams<S>> pretrained, MoCConfig moc,
                                     std::uint64_t seed) {
  require(pretrained != nullptr, ErrorCode::kCheckpointMismatch, "no pretrained backbone supplied");
  pretrained->config.validate();
  moc.d_model = pretrained->config.d_model;
  moc.validate();
  ControlNetParams<S> p;
  p.base = std::move(pretrained);
  p.moc_config = moc;
  p.frozen_checksum = frozen_checksum(*p.base);
  p.trainable.blocks = p.base->blocks;
  Rng rng(seed);
  for (std::size_t l = 0; l < p.base->blocks.size(); ++l)
    p.trainable.moc.push_back(init_moc_params<S>(moc, rng.split(l).seed()));
  return p;
}

template <class S>
Mat<S> conditional_denoise_item(const ControlNetParams<S>& p, const Mat<S>& x, int t, std::span<const int> positions,
                                const TextConditioning& cond, ControlCache<S>* cache) {
  const DenoiserParams<S>& base = *p.base;
  const ModelConfig& config = base.config;
  require(x.cols() == config.input_dim, ErrorCode::kShapeMismatch,
          "input has " + std::to_string(x.cols()) + " features, model expects " + std::to_string(config.input_dim));
  require(x.rows() >= 1, ErrorCode::kShapeMismatch, "empty sequence");
  require(x.rows() <= config.max_len, ErrorCode::kLengthExceeded,
          "sequence length " + std::to_string(x.rows()) + " exceeds max_len " + std::to_string(config.max_len));
  ControlCache<S> local;
  ControlCache<S>& cc = cache ? *cache : local;
  const bool keep = cache != nullptr;
  const std::size_t n_layers = base.blocks.size();
  cc.frozen.x = x;
  cc.frozen.positions.assign(positions.begin(), positions.end());
  cc.frozen.blocks.resize(n_layers);
  cc.copies.resize(n_layers);
  cc.moc.resize(n_layers);

  const Mat<S> c = timestep_embedding(base, t, &cc.frozen);
  Mat<S> h = base.in_proj.forward(x);
  for (std::size_t l = 0; l < n_layers; ++l) {
    const Mat<S> frozen_out =
        block_forward(base.blocks[l], config, h, c, positions, keep ? &cc.frozen.blocks[l] : nullptr);
    const Mat<S> features =
        block_forward(p.trainable.blocks[l], config, h, c, positions, keep ? &cc.copies[l] : nullptr);
    h = frozen_out + moc_forward(p.trainable.moc[l], features, cond, keep ? &cc.moc[l] : nullptr);
  }
  Mat<S> out = final_forward(base, h, c, keep ? &cc.frozen : nullptr);
  if (!out.allFinite()) fail(ErrorCode::kNonFiniteActivation, "conditional denoiser produced a non-finite output");
  return out;
}

template <class S>
void conditional_denoise_item_backward(const ControlNetParams<S>& p, const ControlCache<S>& cache, const Mat<S>& dout,
                                       ControlTrainable<S>& grad) {
  const DenoiserParams<S>& base = *p.base;
  Mat<S> dh = final_backward<S>(base, cache.frozen, dout, nullptr, nullptr);
  for (std::size_t l = base.blocks.size(); l-- > 0;) {
    const Mat<S> dfeatures = moc_backward(p.trainable.moc[l], cache.moc[l], dh, &grad.moc[l]);
    Mat<S> dprev = block_backward<S>(p.trainable.blocks[l], base.config, cache.copies[l], dfeatures,
                                     &grad.blocks[l], nullptr);
    if (l == 0) break;  // nothing trainable below the first layer
    dprev += block_backward<S>(base.blocks[l], base.config, cache.frozen.blocks[l], dh, nullptr, nullptr);
    dh = std::move(dprev);
  }
}

template <class S>
MotionBatch<S> conditional_denoise(const ControlNetParams<S>& p, const MotionBatch<S>& x_t, const std::vector<int>& t,
                                   const std::vector<TextConditioning>& cond, bool serial) {
  require(static_cast<int>(t.size()) == x_t.batch() && static_cast<int>(cond.size()) == x_t.batch(),
          ErrorCode::kShapeMismatch, "one timestep and one conditioning per batch item");
  MotionBatch<S> out = MotionBatch<S>::zeros_like(x_t);
  out.dim = p.config().input_dim;
  parallel_for(
      static_cast<std::size_t>(x_t.batch()),
      [&](std::size_t b) {
        const auto pos = valid_positions(x_t.mask[b]);
        out.items[b] = Mat<S>::Zero(x_t.pad_len, out.dim);
        if (pos.empty()) return;
        const Mat<S> y = conditional_denoise_item<S>(p, gather_rows(x_t.items[b], pos), t[b], pos, cond[b], nullptr);
        scatter_rows(y, pos, out.items[b]);
      },
      serial);
  return out;
}

#define OMG_INSTANTIATE(S)                                                                                    \
  template struct ControlTrainable<S>;                                                                        \
  template struct ControlNetParams<S>;                                                                        \
  template std::uint64_t frozen_checksum<S>(const DenoiserParams<S>&);                                        \
  template ControlNetParams<S> build_controlnet<S>(std::shared_ptr<const DenoiserParams<S>>, MoCConfig,      \
                                                   std::uint64_t);                                            \
  template Mat<S> conditional_denoise_item<S>(const ControlNetParams<S>&, const Mat<S>&, int,                 \
                                              std::span<const int>, const TextConditioning&, ControlCache<S>*); \
  template void conditional_denoise_item_backward<S>(const ControlNetParams<S>&, const ControlCache<S>&,      \
                                                     const Mat<S>&, ControlTrainable<S>&);                    \
  template MotionBatch<S> conditional_denoise<S>(const ControlNetParams<S>&, const MotionBatch<S>&,           \
                                                 const std::vector<int>&, const std::vector<TextConditioning>&, \
                                                 bool);

OMG_INSTANTIATE(float)
OMG_INSTANTIATE(double)
#undef OMG_INSTANTIATE

}  // namespace omg
