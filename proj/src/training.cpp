#include "omg/training.hpp"

#include "json_config.hpp"
#include "omg/checkpoint.hpp"

#include <cmath>
#include <map>

namespace omg {

using detail::json;

void TrainConfig::validate() const {
  optim.validate();
  weights.validate();
  require(batch_size >= 1, ErrorCode::kConfig, "batch_size must be >= 1");
  require(window >= 1, ErrorCode::kConfig, "window length must be >= 1");
  require(eos_dropout >= 0.0 && eos_dropout <= 1.0, ErrorCode::kConfig, "eos_dropout must lie in [0, 1]");
}

TrainBatch draw_batch(const MotionDataset& data, const NoiseSchedule& schedule, int batch_size, int window,
                      bool full_clips, Rng& rng) {
  require(data.size() > 0, ErrorCode::kEmptyDataset, "dataset holds no clips");
  std::vector<WindowSpan> spans;
  int pad = 1;
  for (int b = 0; b < batch_size; ++b) {
    WindowSpan s;
    if (full_clips) {
      s.clip = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(data.size()) - 1));
      s.start = 0;
      s.len = std::min(window, static_cast<int>(data.clips[s.clip].frames.rows()));
    } else {
      s = sample_window_span(data.index, rng, window);
    }
    pad = std::max(pad, s.len);
    spans.push_back(s);
  }
  TrainBatch tb;
  const int dim = static_cast<int>(data.clips.front().frames.cols());
  tb.x.pad_len = tb.x_t.pad_len = pad;
  tb.x.dim = tb.x_t.dim = dim;
  for (const WindowSpan& s : spans) {
    const MatF clean = data.clips[s.clip].frames.middleRows(s.start, s.len);
    const int t = static_cast<int>(rng.uniform_int(1, schedule.steps));
    const MatF noise = normal_like<float>(s.len, dim, rng);
    MatF item = MatF::Zero(pad, dim), noised = MatF::Zero(pad, dim);
    item.topRows(s.len) = clean;
    noised.topRows(s.len) = forward_noise(clean, t, noise, schedule);
    std::vector<std::uint8_t> mask(static_cast<std::size_t>(pad), 0);
    std::fill(mask.begin(), mask.begin() + s.len, 1);
    tb.x.items.push_back(std::move(item));
    tb.x_t.items.push_back(std::move(noised));
    tb.x.mask.push_back(mask);
    tb.x_t.mask.push_back(std::move(mask));
    tb.t.push_back(t);
    if (data.paired()) tb.prompts.push_back(data.prompts[s.clip]);
  }
  return tb;
}

namespace {

void check_finite_loss(const LossReport& r, std::int64_t step) {
  if (!std::isfinite(r.total))
    fail(ErrorCode::kDiverged, "loss became non-finite at step " + std::to_string(step));
}

template <class Fn>
void run_guarded(std::int64_t step, Fn&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    if (e.code() == ErrorCode::kNonFiniteActivation)
      fail(ErrorCode::kDiverged, "non-finite activation at step " + std::to_string(step) + ": " + e.what());
    throw;
  }
}

std::vector<std::vector<int>> batch_positions(const MotionBatchF& x) {
  std::vector<std::vector<int>> pos;
  for (const auto& m : x.mask) pos.push_back(valid_positions(m));
  return pos;
}

std::map<std::string, TextConditioning> embed_prompts(const std::vector<std::string>& prompts,
                                                      const EmbeddingProvider& text) {
  std::map<std::string, TextConditioning> out;
  for (const auto& p : prompts)
    if (!out.count(p)) out.emplace(p, text.embed(p));
  return out;
}

}  // namespace

void pretrain(DenoiserParams<float>& params, AdamW& optimizer, const MotionDataset& data,
              const NoiseSchedule& schedule, const TrainConfig& config, std::int64_t until_step,
              const StepCallback& on_step, bool serial) {
  config.validate();
  const FeatureLayout& layout = layout_by_id(data.layout_id);
  const TensorList<float> ptensors = params.tensors();
  DenoiserParams<float> zero = params;
  zero_all(zero.tensors());
  const Rng root(config.seed);
  for (std::int64_t step = optimizer.steps_taken(); step < until_step; ++step) {
    Rng rng = root.split(static_cast<std::uint64_t>(step));
    const TrainBatch tb = draw_batch(data, schedule, config.batch_size, config.window, config.full_clips, rng);
    const std::size_t n = static_cast<std::size_t>(tb.x.batch());
    const auto pos = batch_positions(tb.x);
    std::vector<DenoiseCache<float>> caches(n);
    MotionBatchF x0 = MotionBatchF::zeros_like(tb.x);
    LossReport report;
    run_guarded(step, [&] {
      parallel_for(
          n,
          [&](std::size_t b) {
            const MatF y = denoise_item<float>(params, gather_rows(tb.x_t.items[b], pos[b]), tb.t[b], pos[b], &caches[b]);
            scatter_rows(y, pos[b], x0.items[b]);
          },
          serial);
      MotionBatchF grad = MotionBatchF::zeros_like(tb.x);
      report = total_loss(tb.x, x0, tb.t, schedule, config.weights, layout, &grad);
      check_finite_loss(report, step);
      std::vector<DenoiserParams<float>> grads(n, zero);
      parallel_for(
          n,
          [&](std::size_t b) {
            denoise_item_backward(params, caches[b], gather_rows(grad.items[b], pos[b]), grads[b]);
          },
          serial);
      const TensorList<float> total = grads[0].tensors();
      for (std::size_t b = 1; b < n; ++b) {
        const TensorList<float> g = grads[b].tensors();
        for (std::size_t i = 0; i < total.size(); ++i) *total[i].value += *g[i].value;
      }
      optimizer.step(ptensors, total);
    });
    if (on_step) on_step({step, learning_rate(optimizer.config(), step), report});
  }
}

void finetune(ControlNetParams<float>& params, AdamW& optimizer, const MotionDataset& data,
              const EmbeddingProvider& text, const NoiseSchedule& schedule, const TrainConfig& config,
              std::int64_t until_step, const StepCallback& on_step, bool serial) {
  config.validate();
  require(data.paired(), ErrorCode::kData, "finetuning needs a captioned dataset");
  params.verify_integrity();
  const FeatureLayout& layout = layout_by_id(data.layout_id);
  const TensorList<float> ptensors = params.trainable.tensors();
  const ControlTrainable<float> zero = params.trainable.zeros_like();
  const MatF empty_token = text.empty().eos();
  const auto table = embed_prompts(data.prompts, text);
  const Rng root(config.seed);
  for (std::int64_t step = optimizer.steps_taken(); step < until_step; ++step) {
    Rng rng = root.split(static_cast<std::uint64_t>(step));
    const TrainBatch tb = draw_batch(data, schedule, config.batch_size, config.window, config.full_clips, rng);
    const std::size_t n = static_cast<std::size_t>(tb.x.batch());
    std::vector<TextConditioning> cond;
    for (const auto& prompt : tb.prompts) cond.push_back(eos_dropout(table.at(prompt), empty_token, rng, config.eos_dropout));
    const auto pos = batch_positions(tb.x);
    std::vector<ControlCache<float>> caches(n);
    MotionBatchF x0 = MotionBatchF::zeros_like(tb.x);
    LossReport report;
    run_guarded(step, [&] {
      parallel_for(
          n,
          [&](std::size_t b) {
            const MatF y = conditional_denoise_item<float>(params, gather_rows(tb.x_t.items[b], pos[b]), tb.t[b],
                                                           pos[b], cond[b], &caches[b]);
            scatter_rows(y, pos[b], x0.items[b]);
          },
          serial);
      MotionBatchF grad = MotionBatchF::zeros_like(tb.x);
      report = total_loss(tb.x, x0, tb.t, schedule, config.weights, layout, &grad);
      check_finite_loss(report, step);
      std::vector<ControlTrainable<float>> grads(n, zero);
      parallel_for(
          n,
          [&](std::size_t b) {
            conditional_denoise_item_backward(params, caches[b], gather_rows(grad.items[b], pos[b]), grads[b]);
          },
          serial);
      const TensorList<float> total = grads[0].tensors();
      for (std::size_t b = 1; b < n; ++b) {
        const TensorList<float> g = grads[b].tensors();
        for (std::size_t i = 0; i < total.size(); ++i) *total[i].value += *g[i].value;
      }
      optimizer.step(ptensors, total);
    });
    if (on_step) on_step({step, learning_rate(optimizer.config(), step), report});
  }
  params.verify_integrity();
}

ProbeSet make_probe_set(const MotionDataset& data, const NoiseSchedule& schedule, int n, int window, bool full_clips,
                        std::uint64_t seed, const EmbeddingProvider* text) {
  Rng rng(seed);
  ProbeSet probe;
  probe.batch = draw_batch(data, schedule, n, window, full_clips, rng);
  if (text) {
    require(data.paired(), ErrorCode::kData, "conditional probes need a captioned dataset");
    for (const auto& p : probe.batch.prompts) probe.cond.push_back(text->embed(p));
  }
  return probe;
}

LossReport probe_loss(const DenoiserParams<float>& params, const ProbeSet& probe, const NoiseSchedule& schedule,
                      const LossWeights& weights, const FeatureLayout& layout, bool serial) {
  const MotionBatchF x0 = denoise(params, probe.batch.x_t, probe.batch.t, serial);
  return total_loss(probe.batch.x, x0, probe.batch.t, schedule, weights, layout);
}

LossReport probe_loss(const ControlNetParams<float>& params, const ProbeSet& probe, const NoiseSchedule& schedule,
                      const LossWeights& weights, const FeatureLayout& layout, bool serial) {
  require(probe.cond.size() == static_cast<std::size_t>(probe.batch.x.batch()), ErrorCode::kInvalidArgument,
          "probe set was built without text conditioning");
  const MotionBatchF x0 = conditional_denoise(params, probe.batch.x_t, probe.batch.t, probe.cond, serial);
  return total_loss(probe.batch.x, x0, probe.batch.t, schedule, weights, layout);
}

// ---- persistence -------------------------------------------------------------------

namespace {

json schedule_json(const NoiseSchedule& s) {
  return {{"kind", s.kind}, {"T", s.steps}, {"parameterization", parameterization_name(s.parameterization)}};
}

NoiseSchedule schedule_from(const json& meta, const std::string& origin) {
  try {
    const json& s = meta.at("schedule");
    require(s.at("kind").get<std::string>() == "cosine", ErrorCode::kCheckpointMismatch,
            origin + ": unsupported schedule kind");
    return build_cosine_schedule(s.at("T").get<int>(), parse_parameterization(s.at("parameterization").get<std::string>()));
  } catch (const json::exception& e) {
    fail(ErrorCode::kCheckpointMismatch, origin + ": malformed schedule metadata");
  }
}

json parse_meta(const CheckpointData& data, const std::string& origin, const std::string& kind) {
  json meta;
  try {
    meta = json::parse(data.metadata);
  } catch (const json::exception&) {
    fail(ErrorCode::kCheckpointMismatch, origin + ": metadata is not valid JSON");
  }
  require(meta.is_object() && meta.value("kind", "") == kind, ErrorCode::kCheckpointMismatch,
          origin + ": expected a " + kind + " checkpoint");
  return meta;
}

void restore_optimizer(const CheckpointData& data, const json& meta, const TensorList<float>& params,
                       AdamW* optimizer, const std::string& origin) {
  if (!optimizer) return;
  require(meta.value("optimizer_state", false), ErrorCode::kCheckpointMismatch,
          origin + ": checkpoint carries no optimizer state to resume from");
  assign_tensors(data, optimizer->state(params), origin);
  optimizer->set_steps_taken(meta.at("step").get<std::int64_t>());
}

TensorList<float> with_optimizer(TensorList<float> tensors, const TensorList<float>& trainable, AdamW* optimizer) {
  if (!optimizer) return tensors;
  for (const auto& t : optimizer->state(trainable)) tensors.push_back(t);
  return tensors;
}

}  // namespace

void save_backbone(const std::filesystem::path& path, const DenoiserParams<float>& params,
                   const NoiseSchedule& schedule, AdamW* optimizer) {
  const TensorList<float> tensors = params.tensors();
  const json meta = {{"kind", "backbone"},
                     {"model", detail::to_json(params.config)},
                     {"schedule", schedule_json(schedule)},
                     {"step", optimizer ? optimizer->steps_taken() : 0},
                     {"checksum", detail::hex64(checksum(tensors))},
                     {"optimizer_state", optimizer != nullptr}};
  write_checkpoint(path, meta.dump(), with_optimizer(tensors, tensors, optimizer));
}

BackboneCheckpoint load_backbone(const std::filesystem::path& path, AdamW* optimizer) {
  const std::string origin = path.string();
  const CheckpointData data = read_checkpoint(path);
  const json meta = parse_meta(data, origin, "backbone");
  BackboneCheckpoint out;
  ModelConfig config;
  try {
    config = detail::model_from_json(meta.at("model"), config, origin + ":model");
    out.step = meta.at("step").get<std::int64_t>();
  } catch (const json::exception&) {
    fail(ErrorCode::kCheckpointMismatch, origin + ": malformed model metadata");
  } catch (const Error& e) {
    fail(ErrorCode::kCheckpointMismatch, e.what());
  }
  config.validate();
  out.params = std::make_shared<DenoiserParams<float>>(config);
  assign_tensors(data, out.params->tensors(), origin);
  out.checksum = checksum(out.params->tensors());
  require(detail::hex64(out.checksum) == meta.value("checksum", ""), ErrorCode::kCheckpointMismatch,
          origin + ": tensor checksum differs from the recorded one");
  out.schedule = schedule_from(meta, origin);
  out.metadata = data.metadata;
  restore_optimizer(data, meta, out.params->tensors(), optimizer, origin);
  return out;
}

void save_controlnet(const std::filesystem::path& path, const ControlNetParams<float>& params,
                     const NoiseSchedule& schedule, AdamW* optimizer, const std::string& ablation) {
  params.verify_integrity();
  TensorList<float> tensors = params.base->tensors();
  const std::size_t n_frozen = tensors.size();
  const TensorList<float> trainable = params.trainable.tensors();
  tensors.insert(tensors.end(), trainable.begin(), trainable.end());
  const json meta = {{"kind", "controlnet"},
                     {"model", detail::to_json(params.config())},
                     {"moc", detail::to_json(params.moc_config)},
                     {"ablation", ablation},
                     {"schedule", schedule_json(schedule)},
                     {"step", optimizer ? optimizer->steps_taken() : 0},
                     {"frozen_checksum", detail::hex64(params.frozen_checksum)},
                     {"frozen_tensor_count", n_frozen},
                     {"trainable_prefix", "control."},
                     {"optimizer_state", optimizer != nullptr}};
  write_checkpoint(path, meta.dump(), with_optimizer(tensors, trainable, optimizer));
}

ControlNetCheckpoint load_controlnet(const std::filesystem::path& path, AdamW* optimizer) {
  const std::string origin = path.string();
  const CheckpointData data = read_checkpoint(path);
  const json meta = parse_meta(data, origin, "controlnet");
  ControlNetCheckpoint out;
  ModelConfig config;
  MoCConfig moc;
  std::uint64_t recorded = 0;
  try {
    config = detail::model_from_json(meta.at("model"), config, origin + ":model");
    moc = detail::moc_from_json(meta.at("moc"), moc, origin + ":moc");
    out.step = meta.at("step").get<std::int64_t>();
    out.ablation = meta.value("ablation", "none");
    recorded = detail::parse_hex64(meta.at("frozen_checksum").get<std::string>(), origin);
  } catch (const json::exception&) {
    fail(ErrorCode::kCheckpointMismatch, origin + ": malformed controlnet metadata");
  }
  config.validate();
  auto base = std::make_shared<DenoiserParams<float>>(config);
  assign_tensors(data, base->tensors(), origin);
  ControlNetParams<float>& p = out.params;
  p.base = base;
  p.moc_config = moc;
  p.frozen_checksum = recorded;
  p.verify_integrity();
  for (int l = 0; l < config.n_layers; ++l) {
    p.trainable.blocks.emplace_back(config);
    p.trainable.moc.emplace_back(moc);
  }
  assign_tensors(data, p.trainable.tensors(), origin);
  out.schedule = schedule_from(meta, origin);
  out.metadata = data.metadata;
  restore_optimizer(data, meta, p.trainable.tensors(), optimizer, origin);
  return out;
}

}  // namespace omg
