#include "omg/omg.h"

#include "json_config.hpp"
#include "omg/checkpoint.hpp"
#include "omg/commands.hpp"
#include "omg/sampler.hpp"
#include "omg/training.hpp"

#include <cstring>
#include <numeric>
#include <optional>

struct omg_model {
  std::shared_ptr<const omg::DenoiserParams<float>> base;
  std::optional<omg::ControlNetParams<float>> control;
  omg::NoiseSchedule schedule;
  nlohmann::json info;
};

struct omg_embedder {
  std::shared_ptr<const omg::EmbeddingProvider> provider;
};

namespace {

thread_local std::string g_error;
thread_local int g_error_code = 0;

omg_status status_for(omg::ErrorCode code) { return static_cast<omg_status>(omg::exit_code_for(code)); }

omg_status set_error(omg::ErrorCode code, const std::string& message) {
  g_error = message;
  g_error_code = static_cast<int>(code);
  return status_for(code);
}

template <class F>
omg_status guarded(F&& fn) {
  try {
    fn();
    g_error.clear();
    g_error_code = 0;
    return OMG_OK;
  } catch (const omg::Error& e) {
    return set_error(e.code(), e.what());
  } catch (const std::bad_alloc&) {
    return set_error(omg::ErrorCode::kInternal, "out of memory");
  } catch (const std::exception& e) {
    return set_error(omg::ErrorCode::kInternal, e.what());
  }
}

char* dup_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (!out) throw std::bad_alloc();
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

void need(const void* p, const char* what) {
  omg::require(p != nullptr, omg::ErrorCode::kInvalidArgument, std::string(what) + " must not be null");
}

}  // namespace

extern "C" {

const char* omg_version(void) { return "0.1.0"; }
const char* omg_last_error(void) { return g_error.c_str(); }
int omg_last_error_code(void) { return g_error_code; }
void omg_free_string(char* s) { std::free(s); }
void omg_set_serial(int serial) { omg::set_serial_mode(serial != 0); }

omg_status omg_run(const char* command, const char* config_json, char** report_json) {
  return guarded([&] {
    need(command, "command");
    const std::string report = omg::run_command(command, config_json ? config_json : "");
    if (report_json) *report_json = dup_string(report);
  });
}

omg_status omg_effective_config(const char* command, const char* config_json, char** out_json) {
  return guarded([&] {
    need(command, "command");
    need(out_json, "out_json");
    *out_json = dup_string(omg::effective_config(command, config_json ? config_json : ""));
  });
}

void omg_default_sample_params(omg_sample_params* params) {
  if (!params) return;
  const omg::SamplerConfig d;
  params->length = 60;
  params->steps = d.n_steps;
  params->s = d.guidance;
  params->eta = d.eta;
  params->seed = d.seed;
}

omg_status omg_model_load(const char* backbone_path, const char* controlnet_path, omg_model** out) {
  return guarded([&] {
    need(out, "out");
    *out = nullptr;
    omg::require(backbone_path || controlnet_path, omg::ErrorCode::kInvalidArgument,
                 "need a backbone or a controlnet path");
    auto model = std::make_unique<omg_model>();
    model->info = nlohmann::json::object();
    if (controlnet_path) {
      omg::ControlNetCheckpoint c = omg::load_controlnet(controlnet_path);
      model->base = c.params.base;
      model->schedule = c.schedule;
      model->info["controlnet"] = {{"path", controlnet_path}, {"step", c.step}, {"ablation", c.ablation},
                                   {"hash", omg::file_hash(controlnet_path)}};
      model->control = std::move(c.params);
    }
    if (backbone_path) {
      omg::BackboneCheckpoint b = omg::load_backbone(backbone_path);
      if (model->control)
        omg::require(b.checksum == model->control->frozen_checksum, omg::ErrorCode::kCheckpointMismatch,
                     std::string("controlnet was not built from ") + backbone_path);
      model->base = b.params;
      model->schedule = b.schedule;
      model->info["backbone"] = {{"path", backbone_path}, {"step", b.step}, {"hash", omg::file_hash(backbone_path)}};
    }
    model->info["model"] = omg::detail::to_json(model->base->config);
    model->info["schedule_steps"] = model->schedule.steps;
    *out = model.release();
  });
}

void omg_model_free(omg_model* model) { delete model; }

omg_status omg_model_info(const omg_model* model, char** out_json) {
  return guarded([&] {
    need(model, "model");
    need(out_json, "out_json");
    *out_json = dup_string(model->info.dump(2));
  });
}

int omg_model_input_dim(const omg_model* model) { return model ? model->base->config.input_dim : 0; }

omg_status omg_model_sample(const omg_model* model, const omg_embedder* embedder, const char* prompt,
                            const omg_sample_params* params, float* frames, size_t capacity) {
  return guarded([&] {
    need(model, "model");
    need(params, "params");
    need(frames, "frames");
    const omg::ModelConfig& cfg = model->base->config;
    omg::require(params->length >= 1 && params->length <= cfg.max_len, omg::ErrorCode::kConfig,
                 "length must lie in [1, " + std::to_string(cfg.max_len) + "]");
    omg::require(params->steps >= 1 && params->steps <= model->schedule.steps, omg::ErrorCode::kConfig,
                 "steps out of range");
    const std::size_t n = static_cast<std::size_t>(params->length) * static_cast<std::size_t>(cfg.input_dim);
    omg::require(capacity >= n, omg::ErrorCode::kInvalidArgument, "frame buffer too small");
    omg::SamplerConfig sc;
    sc.n_steps = params->steps;
    sc.guidance = params->s;
    sc.eta = params->eta;
    sc.seed = params->seed;
    auto positions = [](Eigen::Index len) {
      std::vector<int> p(static_cast<std::size_t>(len));
      std::iota(p.begin(), p.end(), 0);
      return p;
    };
    omg::DenoiseFn uncond = [&](const omg::MatF& x, int t) {
      return omg::denoise_item<float>(*model->base, x, t, positions(x.rows()), nullptr);
    };
    omg::TextConditioning cond;
    omg::DenoiseFn condfn;
    if (prompt) {
      need(embedder, "embedder");
      omg::require(model->control.has_value(), omg::ErrorCode::kConfig, "conditional sampling needs a controlnet");
      cond = embedder->provider->embed(prompt);
      condfn = [&](const omg::MatF& x, int t) {
        return omg::conditional_denoise_item<float>(*model->control, x, t, positions(x.rows()), cond, nullptr);
      };
    }
    omg::Rng rng = omg::Rng(sc.seed).split(0);
    omg::MatF out = omg::sample_sequence(uncond, prompt ? &condfn : nullptr, sc, model->schedule, params->length,
                                         cfg.input_dim, rng);
    omg::require(out.allFinite(), omg::ErrorCode::kNonFiniteActivation, "sample is not finite");
    const omg::FeatureLayout& layout =
        cfg.input_dim == omg::humanml_layout().dim ? omg::humanml_layout() : omg::desk_layout();
    omg::clamp_contacts(out, layout);
    Eigen::Map<omg::MatF>(frames, out.rows(), out.cols()) = out;
  });
}

omg_status omg_embedder_stub(omg_embedder** out) {
  return guarded([&] {
    need(out, "out");
    *out = new omg_embedder{std::make_shared<omg::StubEmbedder>()};
  });
}

omg_status omg_embedder_open(const char* path, int stub_fallback, omg_embedder** out) {
  return guarded([&] {
    need(path, "path");
    need(out, "out");
    std::shared_ptr<const omg::EmbeddingProvider> fallback;
    if (stub_fallback) fallback = std::make_shared<omg::StubEmbedder>();
    *out = new omg_embedder{
        std::make_shared<omg::FileEmbeddingProvider>(omg::load_embedding_file(path), path, fallback)};
  });
}

void omg_embedder_free(omg_embedder* embedder) { delete embedder; }

omg_status omg_embedder_eos(const omg_embedder* embedder, const char* prompt, float* eos, size_t capacity) {
  return guarded([&] {
    need(embedder, "embedder");
    need(prompt, "prompt");
    need(eos, "eos");
    const omg::MatF row = embedder->provider->embed(prompt).eos();
    omg::require(capacity >= static_cast<std::size_t>(row.size()), omg::ErrorCode::kInvalidArgument,
                 "eos buffer too small");
    std::memcpy(eos, row.data(), sizeof(float) * static_cast<std::size_t>(row.size()));
  });
}

}  // extern "C"
