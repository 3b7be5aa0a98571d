#include "omg/commands.hpp"

#include "json_config.hpp"
#include "omg/checkpoint.hpp"
#include "omg/metrics.hpp"
#include "omg/sampler.hpp"
#include "omg/training.hpp"

#include <cstdio>
#include <fstream>
#include <numeric>
#include <optional>
#include <sstream>

namespace omg {

namespace fs = std::filesystem;
using detail::json;

namespace {

// ---- configuration ------------------------------------------------------------------

const json kOptimizerKeys = {{"lr", 0.0},          {"warmup_steps", 0}, {"decay", "cosine"},
                             {"weight_decay", 0.0}, {"beta1", 0.9},      {"beta2", 0.999},
                             {"eps", 1e-8}};
const json kLossDefaults = {{"lambda_t", "constant"}, {"lambda_vel", 30.0}, {"lambda_foot", 30.0}};

json defaults_for(const std::string& command) {
  if (command == "pretrain") {
    json optim = kOptimizerKeys;
    optim["lr"] = 1e-4;
    optim["warmup_steps"] = 100;
    return {{"data_dir", nullptr},   {"output_dir", "runs/pretrain"}, {"seed", 0},
            {"serial", false},       {"preset", "tiny"},              {"model", nullptr},
            {"schedule", {{"T", 1000}, {"parameterization", "vp"}}},
            {"window", 300},         {"batch_size", 8},               {"steps", 2000},
            {"checkpoint_every", 500}, {"resume", false},             {"loss", kLossDefaults},
            {"optimizer", optim}};
  }
  if (command == "finetune") {
    json optim = kOptimizerKeys;
    optim["lr"] = 3e-5;
    optim["warmup_steps"] = 100;
    optim["weight_decay"] = 1e-5;
    return {{"pretrained", nullptr},   {"data_dir", nullptr},  {"output_dir", "runs/finetune"},
            {"seed", 0},               {"serial", false},      {"embeddings", nullptr},
            {"stub_embedder", false},  {"ablation", "none"},
            {"moc",
             {{"d_m", 256},
              {"pool_size", 12},
              {"gamma", 24.0},
              {"beta", 0.25},
              {"use_attention_mask", true},
              {"use_zero_conv", true},
              {"experts_as_plain_ffn", false}}},
            {"window", 300},           {"full_clips", true},   {"batch_size", 8},
            {"steps", 1000},           {"checkpoint_every", 500}, {"resume", false},
            {"eos_dropout", 0.5},      {"loss", kLossDefaults}, {"optimizer", optim}};
  }
  if (command == "sample") {
    return {{"checkpoint", nullptr}, {"controlnet", nullptr},   {"prompt", nullptr},  {"unconditional", false},
            {"embeddings", nullptr}, {"stub_embedder", false},  {"s", 4.5},           {"steps", 200},
            {"eta", 0.0},            {"length", 60},            {"count", 1},         {"seed", 0},
            {"serial", false},       {"output_dir", "runs/sample"}, {"dump_csv", false}};
  }
  if (command == "eval") {
    return {{"generated_dir", nullptr},
            {"reference_dir", nullptr},
            {"output_dir", "runs/eval"},
            {"seed", 0},
            {"serial", false},
            {"replicates", 20},
            {"extractor", "stats"},
            {"diversity_pairs", 100},
            {"pool_size", 32},
            {"top_k", 3},
            {"embeddings", nullptr},
            {"stub_embedder", false},
            {"encoder", {{"hidden", 128}, {"steps", 400}, {"batch_size", 32}, {"lr", 1e-3}, {"temperature", 0.1}}}};
  }
  if (command == "gen-data") {
    return {{"kind", "synthetic"}, {"count", 5},        {"seed", 0},          {"layout", "desk-59"},
            {"output_dir", "data/synthetic"}, {"min_frames", 60}, {"max_frames", 240}, {"n_frames", 60},
            {"randomize_phase", false}, {"serial", false}};
  }
  fail(ErrorCode::kConfig, "unknown command \"" + command + "\"");
}

bool compatible(const json& def, const json& user) {
  if (def.is_null() || user.is_null()) return true;
  if (def.is_number() && user.is_number()) return !(def.is_number_integer() && user.is_number_float());
  return def.type() == user.type();
}

// Overlays `user` onto `defaults`; every user key must already exist.
void merge_into(json& target, const json& user, const std::string& where) {
  require(user.is_object(), ErrorCode::kConfig, where + " must be a JSON object");
  for (const auto& [key, value] : user.items()) {
    const std::string path = where.empty() ? key : where + "." + key;
    require(target.contains(key), ErrorCode::kConfig, "unknown config key \"" + path + "\"");
    json& slot = target[key];
    if (key == "model" && where.empty()) {
      require(value.is_null() || value.is_object(), ErrorCode::kConfig, "model must be an object");
      slot = value;
    } else if (slot.is_object()) {
      merge_into(slot, value, path);
    } else {
      require(compatible(slot, value), ErrorCode::kConfig, "config key \"" + path + "\" has the wrong type");
      slot = value;
    }
  }
}

json resolve_config(const std::string& command, const std::string& text) {
  json user = json::object();
  if (!text.empty()) {
    try {
      user = json::parse(text);
    } catch (const json::exception& e) {
      fail(ErrorCode::kConfig, std::string("config is not valid JSON: ") + e.what());
    }
  }
  json cfg = defaults_for(command);
  merge_into(cfg, user, "");
  return cfg;
}

std::string str_or(const json& j, const char* key, const std::string& fallback = {}) {
  return j.at(key).is_null() ? fallback : j.at(key).get<std::string>();
}

fs::path require_dir(const json& cfg, const char* key, ErrorCode code) {
  const std::string value = str_or(cfg, key);
  require(!value.empty(), ErrorCode::kConfig, std::string("missing required path \"") + key + "\"");
  require(fs::is_directory(value), code, std::string(key) + " not found: " + value);
  return value;
}

fs::path require_file(const json& cfg, const char* key) {
  const std::string value = str_or(cfg, key);
  require(!value.empty(), ErrorCode::kConfig, std::string("missing required path \"") + key + "\"");
  require(fs::is_regular_file(value), ErrorCode::kConfig, std::string(key) + " not found: " + value);
  return value;
}

OptimizerConfig optimizer_from(const json& j, std::int64_t total_steps) {
  OptimizerConfig c = detail::optim_from_json(j, {}, "optimizer");
  c.total_steps = std::max<std::int64_t>(1, total_steps);
  c.validate();
  return c;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(out), ErrorCode::kIo, "cannot write " + path.string());
  out << text;
}

void dump_effective(const fs::path& dir, const json& cfg) {
  write_text(dir / "effective_config.json", cfg.dump(2) + "\n");
}

std::shared_ptr<const EmbeddingProvider> make_provider(const json& cfg) {
  const std::string file = str_or(cfg, "embeddings");
  const bool stub = cfg.at("stub_embedder").get<bool>();
  if (file.empty()) {
    require(stub, ErrorCode::kConfig, "no text provider: pass an embeddings file or enable the stub embedder");
    return std::make_shared<StubEmbedder>();
  }
  require(fs::is_regular_file(file), ErrorCode::kConfig, "embeddings not found: " + file);
  std::shared_ptr<const EmbeddingProvider> fallback;
  if (stub) fallback = std::make_shared<StubEmbedder>();
  return std::make_shared<FileEmbeddingProvider>(load_embedding_file(file), file, fallback);
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

// Loss log: keeps lines for steps before `keep_below` when resuming.
class LossLog {
 public:
  LossLog(fs::path path, std::int64_t keep_below) : path_(std::move(path)) {
    std::vector<std::string> kept;
    if (keep_below > 0 && fs::exists(path_)) {
      std::ifstream in(path_);
      std::string line;
      std::getline(in, line);
      while (std::getline(in, line)) {
        const std::int64_t step = std::stoll(line.substr(0, line.find(',')));
        if (step < keep_below) kept.push_back(line);
      }
    }
    out_.open(path_, std::ios::trunc);
    require(static_cast<bool>(out_), ErrorCode::kIo, "cannot write " + path_.string());
    out_ << "step,lr,total,simple,vel,foot\n";
    for (const auto& l : kept) out_ << l << "\n";
  }
  void add(const StepReport& r) {
    out_ << r.step << "," << fmt(r.lr) << "," << fmt(r.loss.total) << "," << fmt(r.loss.simple) << ","
         << fmt(r.loss.vel) << "," << fmt(r.loss.foot) << "\n";
  }

 private:
  fs::path path_;
  std::ofstream out_;
};

ModelConfig model_from(const json& cfg, int input_dim) {
  ModelConfig m = model_preset(cfg.at("preset").get<std::string>(), input_dim);
  if (!cfg.at("model").is_null()) m = detail::model_from_json(cfg.at("model"), m, "model");
  require(m.input_dim == input_dim, ErrorCode::kConfig,
          "model input_dim " + std::to_string(m.input_dim) + " differs from the data's " + std::to_string(input_dim));
  m.validate();
  return m;
}

bool same_model(const ModelConfig& a, const ModelConfig& b) {
  return detail::to_json(a) == detail::to_json(b);
}

// ---- pretrain ---------------------------------------------------------------------

json cmd_pretrain(const json& cfg) {
  const fs::path data_dir = require_dir(cfg, "data_dir", ErrorCode::kData);
  const fs::path out = str_or(cfg, "output_dir");
  const MotionDataset data = load_dataset(data_dir);
  const FeatureLayout& layout = layout_by_id(data.layout_id);
  const NoiseSchedule schedule = build_cosine_schedule(
      cfg.at("schedule").at("T").get<int>(),
      parse_parameterization(cfg.at("schedule").at("parameterization").get<std::string>()));
  const std::int64_t steps = cfg.at("steps").get<std::int64_t>();
  require(steps >= 0, ErrorCode::kConfig, "steps must be >= 0");
  TrainConfig tc;
  tc.optim = optimizer_from(cfg.at("optimizer"), steps);
  tc.weights = detail::weights_from_json(cfg.at("loss"), {}, "loss");
  tc.batch_size = cfg.at("batch_size").get<int>();
  tc.window = cfg.at("window").get<int>();
  tc.seed = cfg.at("seed").get<std::uint64_t>();
  tc.validate();
  ModelConfig model = model_from(cfg, layout.dim);
  require(tc.window <= model.max_len, ErrorCode::kConfig, "window exceeds the model's max_len");

  fs::create_directories(out);
  dump_effective(out, cfg);
  const fs::path ckpt = out / "checkpoint.omgc";
  AdamW optimizer(tc.optim);
  DenoiserParams<float> params;
  if (cfg.at("resume").get<bool>() && fs::exists(ckpt)) {
    BackboneCheckpoint loaded = load_backbone(ckpt, &optimizer);
    require(same_model(loaded.params->config, model), ErrorCode::kCheckpointMismatch,
            ckpt.string() + ": model differs from the configured one");
    params = *loaded.params;
  } else {
    params = init_params<float>(model, tc.seed);
  }
  LossLog log(out / "loss_log.csv", optimizer.steps_taken());
  const std::int64_t every = cfg.at("checkpoint_every").get<std::int64_t>();
  double last = NAN;
  pretrain(params, optimizer, data, schedule, tc, steps, [&](const StepReport& r) {
    log.add(r);
    last = r.loss.total;
    if (every > 0 && (r.step + 1) % every == 0 && r.step + 1 < steps)
      save_backbone(ckpt, params, schedule, &optimizer);
  });
  save_backbone(ckpt, params, schedule, &optimizer);
  const fs::path model_path = out / "model.omgc";
  save_backbone(model_path, params, schedule, nullptr);
  return {{"command", "pretrain"},
          {"steps", optimizer.steps_taken()},
          {"final_loss", last},
          {"checkpoint", model_path.string()},
          {"checkpoint_hash", file_hash(model_path)},
          {"parameters", count_elements(params.tensors())}};
}

// ---- finetune ---------------------------------------------------------------------

MoCConfig moc_from(const json& cfg) {
  const json& m = cfg.at("moc");
  MoCConfig c;
  c.d_m = m.at("d_m").get<int>();
  c.pool_size = m.at("pool_size").get<int>();
  c.gamma = m.at("gamma").get<double>();
  c.beta = m.at("beta").get<double>();
  c.use_attention_mask = m.at("use_attention_mask").get<bool>();
  c.use_zero_conv = m.at("use_zero_conv").get<bool>();
  c.experts_as_plain_ffn = m.at("experts_as_plain_ffn").get<bool>();
  const std::string ablation = cfg.at("ablation").get<std::string>();
  if (ablation == "none") {
  } else if (ablation == "no-zero-conv") {
    c.use_zero_conv = false;
  } else if (ablation == "no-attn-mask") {
    c.use_attention_mask = false;
  } else if (ablation == "cross-attn-ffn") {
    c.experts_as_plain_ffn = true;
  } else if (ablation.rfind("pool-size=", 0) == 0) {
    try {
      std::size_t used = 0;
      c.pool_size = std::stoi(ablation.substr(10), &used);
      require(used == ablation.size() - 10, ErrorCode::kConfig, "bad pool size");
    } catch (const std::logic_error&) {
      fail(ErrorCode::kConfig, "bad ablation \"" + ablation + "\"");
    }
  } else {
    fail(ErrorCode::kConfig,
         "unknown ablation \"" + ablation + "\" (none, no-zero-conv, no-attn-mask, cross-attn-ffn, pool-size=K)");
  }
  c.validate();
  return c;
}

json cmd_finetune(const json& cfg) {
  const fs::path pretrained = require_file(cfg, "pretrained");
  const fs::path data_dir = require_dir(cfg, "data_dir", ErrorCode::kData);
  const fs::path out = str_or(cfg, "output_dir");
  const auto text = make_provider(cfg);
  const MoCConfig moc = moc_from(cfg);
  const MotionDataset data = load_dataset(data_dir);
  require(data.paired(), ErrorCode::kData, data_dir.string() + ": clips carry no captions");
  BackboneCheckpoint backbone = load_backbone(pretrained);
  require(backbone.params->config.input_dim == layout_by_id(data.layout_id).dim, ErrorCode::kData,
          "data dimension differs from the pretrained model's input_dim");
  const std::int64_t steps = cfg.at("steps").get<std::int64_t>();
  require(steps >= 0, ErrorCode::kConfig, "steps must be >= 0");
  TrainConfig tc;
  tc.optim = optimizer_from(cfg.at("optimizer"), steps);
  tc.weights = detail::weights_from_json(cfg.at("loss"), {}, "loss");
  tc.batch_size = cfg.at("batch_size").get<int>();
  tc.window = cfg.at("window").get<int>();
  tc.full_clips = cfg.at("full_clips").get<bool>();
  tc.eos_dropout = cfg.at("eos_dropout").get<double>();
  tc.seed = cfg.at("seed").get<std::uint64_t>();
  tc.validate();

  fs::create_directories(out);
  dump_effective(out, cfg);
  const std::string ablation = cfg.at("ablation").get<std::string>();
  const fs::path ckpt = out / "checkpoint.omgc";
  AdamW optimizer(tc.optim);
  ControlNetParams<float> params;
  if (cfg.at("resume").get<bool>() && fs::exists(ckpt)) {
    ControlNetCheckpoint loaded = load_controlnet(ckpt, &optimizer);
    require(loaded.params.frozen_checksum == backbone.checksum, ErrorCode::kCheckpointMismatch,
            ckpt.string() + ": frozen backbone differs from " + pretrained.string());
    params = std::move(loaded.params);
  } else {
    params = build_controlnet<float>(backbone.params, moc, tc.seed);
  }
  LossLog log(out / "loss_log.csv", optimizer.steps_taken());
  const std::int64_t every = cfg.at("checkpoint_every").get<std::int64_t>();
  double last = NAN;
  finetune(params, optimizer, data, *text, backbone.schedule, tc, steps, [&](const StepReport& r) {
    log.add(r);
    last = r.loss.total;
    if (every > 0 && (r.step + 1) % every == 0 && r.step + 1 < steps)
      save_controlnet(ckpt, params, backbone.schedule, &optimizer, ablation);
  });
  save_controlnet(ckpt, params, backbone.schedule, &optimizer, ablation);
  const fs::path model_path = out / "controlnet.omgc";
  save_controlnet(model_path, params, backbone.schedule, nullptr, ablation);
  return {{"command", "finetune"},
          {"steps", optimizer.steps_taken()},
          {"final_loss", last},
          {"ablation", ablation},
          {"checkpoint", model_path.string()},
          {"checkpoint_hash", file_hash(model_path)},
          {"frozen_checksum", detail::hex64(params.frozen_checksum)},
          {"trainable_parameters", count_elements(params.trainable.tensors())},
          {"embedder", text->id()}};
}

// ---- sample -----------------------------------------------------------------------

std::vector<int> iota_positions(Eigen::Index n) {
  std::vector<int> pos(static_cast<std::size_t>(n));
  std::iota(pos.begin(), pos.end(), 0);
  return pos;
}

void write_joint_csv(const fs::path& path, const MotionSequence& seq) {
  const FeatureLayout& layout = seq.layout();
  std::ostringstream out;
  // Root height, then root-relative joint positions.
  const int root_y = layout.slice("root_height").offset;
  out << "frame,root_y";
  for (int j = 1; j < layout.joints; ++j) out << ",j" << j << "_x,j" << j << "_y,j" << j << "_z";
  out << "\n";
  for (Eigen::Index f = 0; f < seq.frames.rows(); ++f) {
    out << f << "," << fmt(seq.frames(f, root_y));
    for (int j = 1; j < layout.joints; ++j) {
      const int off = layout.joint_position_offset(j);
      for (int k = 0; k < 3; ++k) out << "," << fmt(seq.frames(f, off + k));
    }
    out << "\n";
  }
  write_text(path, out.str());
}

json cmd_sample(const json& cfg) {
  const bool unconditional = cfg.at("unconditional").get<bool>();
  const std::string ckpt_path = str_or(cfg, "checkpoint");
  const std::string cn_path = str_or(cfg, "controlnet");
  require(!ckpt_path.empty() || !cn_path.empty(), ErrorCode::kConfig, "sampling needs a checkpoint or a controlnet");
  if (!ckpt_path.empty()) require_file(cfg, "checkpoint");
  if (!cn_path.empty()) require_file(cfg, "controlnet");
  require(unconditional || !cn_path.empty(), ErrorCode::kConfig, "conditional sampling needs a controlnet checkpoint");
  std::string prompt = str_or(cfg, "prompt");
  require(unconditional || cfg.at("prompt").is_string(), ErrorCode::kConfig,
          "conditional sampling needs a prompt (or pass unconditional)");
  std::shared_ptr<const EmbeddingProvider> text;
  if (!unconditional) text = make_provider(cfg);

  SamplerConfig sc;
  sc.n_steps = cfg.at("steps").get<int>();
  sc.guidance = cfg.at("s").get<double>();
  sc.eta = cfg.at("eta").get<double>();
  sc.seed = cfg.at("seed").get<std::uint64_t>();
  const int length = cfg.at("length").get<int>();
  const int count = cfg.at("count").get<int>();
  require(sc.guidance >= 0.0, ErrorCode::kConfig, "guidance strength s must be >= 0");
  require(count >= 1, ErrorCode::kConfig, "count must be >= 1");

  std::shared_ptr<const DenoiserParams<float>> base;
  NoiseSchedule schedule;
  json hashes = json::object();
  std::optional<ControlNetCheckpoint> control;
  if (!cn_path.empty() && !unconditional) {
    control = load_controlnet(cn_path);
    hashes["controlnet"] = file_hash(cn_path);
  }
  if (!ckpt_path.empty()) {
    BackboneCheckpoint b = load_backbone(ckpt_path);
    if (control)
      require(b.checksum == control->params.frozen_checksum, ErrorCode::kCheckpointMismatch,
              "controlnet was not built from " + ckpt_path);
    base = b.params;
    schedule = b.schedule;
    hashes["backbone"] = file_hash(ckpt_path);
  } else {
    ControlNetCheckpoint c = control ? *control : load_controlnet(cn_path);
    base = c.params.base;
    schedule = c.schedule;
    hashes["backbone_from"] = file_hash(cn_path);
  }
  const ModelConfig& model = base->config;
  require(length >= 1 && length <= model.max_len, ErrorCode::kConfig,
          "length must lie in [1, " + std::to_string(model.max_len) + "]");
  require(sc.n_steps >= 1 && sc.n_steps <= schedule.steps, ErrorCode::kConfig,
          "steps must lie in [1, " + std::to_string(schedule.steps) + "]");

  DenoiseFn uncond = [&](const MatF& x, int t) {
    const auto pos = iota_positions(x.rows());
    return denoise_item<float>(*base, x, t, pos, nullptr);
  };
  TextConditioning cond;
  DenoiseFn condfn;
  if (!unconditional) {
    cond = text->embed(prompt);
    condfn = [&](const MatF& x, int t) {
      const auto pos = iota_positions(x.rows());
      return conditional_denoise_item<float>(control->params, x, t, pos, cond, nullptr);
    };
  }
  const std::vector<MatF> samples =
      sample_many(uncond, unconditional ? nullptr : &condfn, sc, schedule, length, model.input_dim, count);

  const fs::path out = str_or(cfg, "output_dir");
  fs::create_directories(out);
  dump_effective(out, cfg);
  const std::uint32_t layout_id = model.input_dim == humanml_layout().dim ? kLayoutHumanMl263 : kLayoutDesk59;
  json files = json::array();
  for (int i = 0; i < count; ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "sample_%03d", i);
    MotionSequence seq;
    seq.frames = samples[static_cast<std::size_t>(i)];
    seq.layout_id = layout_id;
    require(seq.frames.allFinite(), ErrorCode::kNonFiniteActivation, "sample " + std::to_string(i) + " is not finite");
    clamp_contacts(seq.frames, seq.layout());
    write_motion_file(seq, out / (std::string(name) + ".omgm"));
    if (cfg.at("dump_csv").get<bool>()) write_joint_csv(out / (std::string(name) + ".csv"), seq);
    files.push_back(std::string(name) + ".omgm");
  }
  json manifest = {{"prompt", unconditional ? json(nullptr) : json(prompt)},
                   {"unconditional", unconditional},
                   {"seed", sc.seed},
                   {"s", sc.guidance},
                   {"steps", sc.n_steps},
                   {"eta", sc.eta},
                   {"length", length},
                   {"count", count},
                   {"embedder", text ? json(text->id()) : json(nullptr)},
                   {"checkpoints", hashes},
                   {"files", files}};
  write_text(out / "manifest.json", manifest.dump(2) + "\n");
  manifest["command"] = "sample";
  manifest["output_dir"] = out.string();
  return manifest;
}

// ---- eval -------------------------------------------------------------------------

struct Labeled {
  std::vector<MatF> clips;
  std::vector<std::string> prompts;  // empty when unknown
};

Labeled load_labeled(const fs::path& dir) {
  const MotionDataset d = load_dataset(dir);
  require(d.size() > 0, ErrorCode::kData, dir.string() + " holds no motion files");
  Labeled out;
  for (const auto& c : d.clips) out.clips.push_back(c.frames);
  if (d.paired()) {
    out.prompts = d.prompts;
  } else if (fs::exists(dir / "manifest.json")) {
    std::ifstream in(dir / "manifest.json");
    json m;
    try {
      m = json::parse(in);
    } catch (const json::exception&) {
      fail(ErrorCode::kData, (dir / "manifest.json").string() + " is not valid JSON");
    }
    if (m.contains("prompt") && m.at("prompt").is_string())
      out.prompts.assign(out.clips.size(), m.at("prompt").get<std::string>());
  }
  return out;
}

struct Summary {
  double mean = 0.0, ci95 = 0.0;
};

Summary summarize(const std::vector<double>& v) {
  Summary s;
  s.mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  if (v.size() > 1) {
    double ss = 0.0;
    for (double x : v) ss += (x - s.mean) * (x - s.mean);
    s.ci95 = 1.96 * std::sqrt(ss / static_cast<double>(v.size() - 1)) / std::sqrt(static_cast<double>(v.size()));
  }
  return s;
}

std::vector<Feature> extract_all(const FeatureExtractor& fx, const std::vector<MatF>& clips) {
  std::vector<Feature> out(clips.size());
  parallel_for(clips.size(), [&](std::size_t i) { out[i] = fx.extract(clips[i]); }, serial_mode());
  return out;
}

std::vector<Feature> resample(const std::vector<Feature>& v, Rng& rng) {
  std::vector<Feature> out;
  for (std::size_t i = 0; i < v.size(); ++i)
    out.push_back(v[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(v.size()) - 1))]);
  return out;
}

json cmd_eval(const json& cfg) {
  const fs::path gen_dir = require_dir(cfg, "generated_dir", ErrorCode::kData);
  const fs::path ref_dir = require_dir(cfg, "reference_dir", ErrorCode::kData);
  const int replicates = cfg.at("replicates").get<int>();
  const std::uint64_t seed = cfg.at("seed").get<std::uint64_t>();
  const std::string extractor = cfg.at("extractor").get<std::string>();
  require(replicates >= 1, ErrorCode::kConfig, "replicates must be >= 1");
  require(extractor == "stats" || extractor == "contrastive", ErrorCode::kConfig,
          "extractor must be \"stats\" or \"contrastive\"");
  const bool wants_text = extractor == "contrastive" || cfg.at("stub_embedder").get<bool>() ||
                          !cfg.at("embeddings").is_null();
  std::shared_ptr<const EmbeddingProvider> text;
  if (wants_text) text = make_provider(cfg);

  Labeled gen = load_labeled(gen_dir);
  Labeled ref = load_labeled(ref_dir);
  if (fs::equivalent(gen_dir, ref_dir)) {
    // Self-comparison: split into disjoint halves.
    Labeled a, b;
    for (std::size_t i = 0; i < ref.clips.size(); ++i) {
      Labeled& dst = i % 2 == 0 ? a : b;
      dst.clips.push_back(ref.clips[i]);
      if (!ref.prompts.empty()) dst.prompts.push_back(ref.prompts[i]);
    }
    gen = std::move(a);
    ref = std::move(b);
  }
  require(gen.clips.size() >= 2 && ref.clips.size() >= 2, ErrorCode::kData,
          "evaluation needs at least two clips on each side");
  const int dim = static_cast<int>(ref.clips.front().cols());
  for (const auto& c : gen.clips)
    require(c.cols() == dim, ErrorCode::kData, "generated and reference clips differ in feature dimension");

  std::unique_ptr<ContrastiveEncoder> encoder;
  if (text && !ref.prompts.empty()) {
    MotionDataset paired;
    paired.layout_id = dim == humanml_layout().dim ? kLayoutHumanMl263 : kLayoutDesk59;
    for (std::size_t i = 0; i < ref.clips.size(); ++i) {
      MotionSequence s;
      s.frames = ref.clips[i];
      s.layout_id = paired.layout_id;
      paired.add("ref" + std::to_string(i), s, ref.prompts[i]);
    }
    ContrastiveConfig cc;
    const json& e = cfg.at("encoder");
    cc.hidden = e.at("hidden").get<int>();
    cc.steps = e.at("steps").get<int>();
    cc.batch_size = e.at("batch_size").get<int>();
    cc.lr = e.at("lr").get<double>();
    cc.temperature = e.at("temperature").get<double>();
    cc.seed = seed;
    encoder = train_contrastive_encoder(paired, *text, cc);
  }
  require(extractor == "stats" || encoder, ErrorCode::kData,
          "the contrastive extractor needs captioned reference clips");
  StatsExtractor stats(dim);
  const FeatureExtractor& fx = extractor == "stats" ? static_cast<const FeatureExtractor&>(stats) : *encoder;
  const std::vector<Feature> fg = extract_all(fx, gen.clips);
  const std::vector<Feature> fr = extract_all(fx, ref.clips);

  std::vector<Feature> motion_text, text_feats;
  if (encoder && !gen.prompts.empty()) {
    motion_text = extract_all(*encoder, gen.clips);
    for (const auto& p : gen.prompts) text_feats.push_back(text_feature(text->embed(p)));
  }
  const int pool = cfg.at("pool_size").get<int>();
  const int top_k = cfg.at("top_k").get<int>();
  const int pairs = std::min<int>(cfg.at("diversity_pairs").get<int>(), static_cast<int>(fg.size() / 2));

  std::vector<double> fid, div, clip, rprec;
  const Rng root(seed);
  for (int r = 0; r < replicates; ++r) {
    Rng rng = root.split(static_cast<std::uint64_t>(r));
    fid.push_back(frechet_distance(feature_stats(resample(fg, rng)), feature_stats(resample(fr, rng))));
    div.push_back(diversity(fg, pairs, rng));
    if (!motion_text.empty()) {
      std::vector<Feature> m, t;
      for (std::size_t i = 0; i < motion_text.size(); ++i) {
        const auto k = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(motion_text.size()) - 1));
        m.push_back(motion_text[k]);
        t.push_back(text_feats[k]);
      }
      clip.push_back(clip_score(m, t));
      if (motion_text.size() >= static_cast<std::size_t>(pool))
        rprec.push_back(r_precision(motion_text, text_feats, rng, pool, top_k));
    }
  }
  json metrics = json::array();
  auto record = [&](const char* name, const std::vector<double>& v, std::size_t n, const std::string& fx_id) {
    if (v.empty()) {
      metrics.push_back({{"metric", name}, {"value", nullptr}, {"n", n}, {"seed", seed}, {"extractor_id", fx_id},
                         {"skipped", "needs captioned clips, a text provider, and enough samples"}});
      return;
    }
    const Summary s = summarize(v);
    metrics.push_back({{"metric", name},
                       {"value", s.mean},
                       {"mean", s.mean},
                       {"ci95", s.ci95},
                       {"ci_low", s.mean - s.ci95},
                       {"ci_high", s.mean + s.ci95},
                       {"replicates", v.size()},
                       {"n", n},
                       {"seed", seed},
                       {"extractor_id", fx_id}});
  };
  const std::string enc_id = encoder ? encoder->id() : "contrastive-v1";
  record("fid", fid, fg.size(), fx.id());
  record("diversity", div, fg.size(), fx.id());
  record("clip_score", clip, motion_text.size(), enc_id);
  record("r_precision", rprec, motion_text.size(), enc_id);

  const fs::path out = str_or(cfg, "output_dir");
  fs::create_directories(out);
  dump_effective(out, cfg);
  json report = {{"metrics", metrics},
                 {"generated", fg.size()},
                 {"reference", fr.size()},
                 {"replicates", replicates},
                 {"seed", seed}};
  write_text(out / "metrics.json", report.dump(2) + "\n");
  report["command"] = "eval";
  return report;
}

// ---- gen-data ---------------------------------------------------------------------

json cmd_gen_data(const json& cfg) {
  const std::string kind = cfg.at("kind").get<std::string>();
  const std::string layout_name = cfg.at("layout").get<std::string>();
  const int count = cfg.at("count").get<int>();
  const std::uint64_t seed = cfg.at("seed").get<std::uint64_t>();
  require(count >= 1, ErrorCode::kConfig, "count must be >= 1");
  const FeatureLayout* layout = nullptr;
  if (layout_name == humanml_layout().name) layout = &humanml_layout();
  if (layout_name == desk_layout().name) layout = &desk_layout();
  require(layout != nullptr, ErrorCode::kConfig, "unknown layout \"" + layout_name + "\"");
  MotionDataset data;
  if (kind == "synthetic") {
    SyntheticConfig sc;
    sc.min_frames = cfg.at("min_frames").get<int>();
    sc.max_frames = cfg.at("max_frames").get<int>();
    require(sc.min_frames >= 1 && sc.max_frames >= sc.min_frames, ErrorCode::kConfig, "bad frame range");
    data = generate_synthetic_dataset(count, seed, *layout, sc);
  } else if (kind == "paired") {
    PairedConfig pc;
    pc.n_frames = cfg.at("n_frames").get<int>();
    pc.randomize_phase = cfg.at("randomize_phase").get<bool>();
    require(pc.n_frames >= 2, ErrorCode::kConfig, "n_frames must be >= 2");
    data = generate_paired_dataset(count, seed, *layout, pc);
  } else {
    fail(ErrorCode::kConfig, "kind must be \"synthetic\" or \"paired\"");
  }
  const fs::path out = str_or(cfg, "output_dir");
  save_dataset(data, out);
  dump_effective(out, cfg);
  return {{"command", "gen-data"}, {"clips", data.size()}, {"frames", data.index.total_frames},
          {"output_dir", out.string()}};
}

}  // namespace

std::string effective_config(const std::string& command, const std::string& config_json) {
  return resolve_config(command, config_json).dump(2);
}

std::string run_command(const std::string& command, const std::string& config_json) {
  const json cfg = resolve_config(command, config_json);
  const bool previous = serial_mode();
  set_serial_mode(cfg.at("serial").get<bool>() || previous);
  try {
    json report;
    if (command == "pretrain") report = cmd_pretrain(cfg);
    else if (command == "finetune") report = cmd_finetune(cfg);
    else if (command == "sample") report = cmd_sample(cfg);
    else if (command == "eval") report = cmd_eval(cfg);
    else report = cmd_gen_data(cfg);
    set_serial_mode(previous);
    return report.dump(2);
  } catch (const json::exception& e) {
    set_serial_mode(previous);
    fail(ErrorCode::kConfig, std::string("config value has the wrong type: ") + e.what());
  } catch (...) {
    set_serial_mode(previous);
    throw;
  }
}

int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::kOk:
      return 0;
    case ErrorCode::kConfig:
    case ErrorCode::kInvalidArgument:
    case ErrorCode::kLengthExceeded:
    case ErrorCode::kScheduleOutOfRange:
    case ErrorCode::kOddHeadDim:
    case ErrorCode::kEmptyPrompt:
      return 2;
    case ErrorCode::kData:
    case ErrorCode::kIo:
    case ErrorCode::kBadMagic:
    case ErrorCode::kDimensionMismatch:
    case ErrorCode::kNonFiniteValue:
    case ErrorCode::kEmptyDataset:
    case ErrorCode::kLayoutMismatch:
    case ErrorCode::kLayoutMissingFeet:
    case ErrorCode::kTokenOverflow:
    case ErrorCode::kTooFewSamples:
      return 3;
    case ErrorCode::kDiverged:
    case ErrorCode::kNonFiniteActivation:
      return 4;
    case ErrorCode::kCheckpointMismatch:
      return 5;
    case ErrorCode::kUnknownPrompt:
      return 6;
    default:
      return 1;
  }
}

}  // namespace omg
