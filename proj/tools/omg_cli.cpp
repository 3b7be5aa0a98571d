// omg: command-line front end over the C API.

#include "omg/omg.h"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

using nlohmann::json;

namespace {

struct Overrides {
  std::string config_file;
  std::optional<std::uint64_t> seed;
  bool serial = false;
  bool print_config = false;
  json values = json::object();
};

// Registers an option whose value, when given, lands at `key` in the config.
template <class T>
void bind(CLI::App* app, Overrides& o, const std::string& flag, const std::string& key, const std::string& help) {
  app->add_option_function<T>(flag, [&o, key](const T& v) { o.values[key] = v; }, help);
}

void bind_flag(CLI::App* app, Overrides& o, const std::string& flag, const std::string& key, const std::string& help) {
  app->add_flag_function(flag, [&o, key](std::int64_t n) { o.values[key] = n > 0; }, help);
}

void common(CLI::App* app, Overrides& o) {
  app->add_option("-c,--config", o.config_file, "JSON config file (flags override it)")->check(CLI::ExistingFile);
  app->add_option("--seed", o.seed, "Random seed");
  app->add_flag("--serial", o.serial, "Run single-threaded");
  app->add_flag("--print-config", o.print_config, "Print the effective config and exit");
}

json merged_config(const Overrides& o) {
  json cfg = json::object();
  if (!o.config_file.empty()) {
    std::ifstream in(o.config_file);
    try {
      cfg = json::parse(in);
    } catch (const json::exception& e) {
      throw CLI::ValidationError("--config", std::string("not valid JSON: ") + e.what());
    }
    if (!cfg.is_object()) throw CLI::ValidationError("--config", "top level must be an object");
  }
  for (const auto& [k, v] : o.values.items()) {
    if (k == "lr") cfg["optimizer"]["lr"] = v;
    else cfg[k] = v;
  }
  if (o.seed) cfg["seed"] = *o.seed;
  if (o.serial) cfg["serial"] = true;
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"omg: text-to-motion diffusion with a mixture-of-controllers ControlNet"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(omg_version()));

  Overrides o;

  auto* pretrain = app.add_subcommand("pretrain", "Train the unconditional denoiser");
  common(pretrain, o);
  bind<std::string>(pretrain, o, "--data", "data_dir", "Directory of .omgm clips");
  bind<std::string>(pretrain, o, "-o,--output", "output_dir", "Run directory");
  bind<std::string>(pretrain, o, "--preset", "preset", "Model preset: tiny, base, large, huge, giant");
  bind<std::int64_t>(pretrain, o, "--steps", "steps", "Total optimizer steps");
  bind<int>(pretrain, o, "--batch-size", "batch_size", "Windows per step");
  bind<int>(pretrain, o, "--window", "window", "Maximum window length");
  bind<double>(pretrain, o, "--lr", "lr", "Peak learning rate");
  bind_flag(pretrain, o, "--resume", "resume", "Continue from the run directory's checkpoint");

  auto* finetune = app.add_subcommand("finetune", "Train the text-conditioned control branch");
  common(finetune, o);
  bind<std::string>(finetune, o, "--pretrained", "pretrained", "Backbone checkpoint");
  bind<std::string>(finetune, o, "--data", "data_dir", "Directory of captioned clips");
  bind<std::string>(finetune, o, "-o,--output", "output_dir", "Run directory");
  bind<std::string>(finetune, o, "--embeddings", "embeddings", ".omge text embeddings");
  bind_flag(finetune, o, "--stub-embedder", "stub_embedder", "Use the deterministic stub text encoder");
  bind<std::string>(finetune, o, "--ablation", "ablation",
                    "none, no-zero-conv, no-attn-mask, cross-attn-ffn or pool-size=K");
  bind<std::int64_t>(finetune, o, "--steps", "steps", "Total optimizer steps");
  bind<int>(finetune, o, "--batch-size", "batch_size", "Clips per step");
  bind<double>(finetune, o, "--lr", "lr", "Peak learning rate");
  bind_flag(finetune, o, "--resume", "resume", "Continue from the run directory's checkpoint");

  auto* sample = app.add_subcommand("sample", "Generate motion");
  common(sample, o);
  bind<std::string>(sample, o, "--checkpoint", "checkpoint", "Backbone checkpoint");
  bind<std::string>(sample, o, "--controlnet", "controlnet", "Control-branch checkpoint");
  bind<std::string>(sample, o, "-p,--prompt", "prompt", "Text prompt");
  bind_flag(sample, o, "--unconditional", "unconditional", "Ignore text and sample the backbone alone");
  bind<std::string>(sample, o, "--embeddings", "embeddings", ".omge text embeddings");
  bind_flag(sample, o, "--stub-embedder", "stub_embedder", "Use the deterministic stub text encoder");
  bind<double>(sample, o, "-s,--s", "s", "Guidance strength");
  bind<int>(sample, o, "--steps", "steps", "DDIM steps");
  bind<double>(sample, o, "--eta", "eta", "DDIM stochasticity");
  bind<int>(sample, o, "--length", "length", "Frames per sample");
  bind<int>(sample, o, "--count", "count", "Number of samples");
  bind<std::string>(sample, o, "-o,--output", "output_dir", "Output directory");
  bind_flag(sample, o, "--dump-csv", "dump_csv", "Also write joint positions as CSV");

  auto* eval = app.add_subcommand("eval", "Score generated motion against references");
  common(eval, o);
  bind<std::string>(eval, o, "--generated", "generated_dir", "Directory of generated clips");
  bind<std::string>(eval, o, "--reference", "reference_dir", "Directory of reference clips");
  bind<std::string>(eval, o, "-o,--output", "output_dir", "Output directory");
  bind<std::string>(eval, o, "--extractor", "extractor", "stats or contrastive");
  bind<int>(eval, o, "--replicates", "replicates", "Bootstrap replicates");
  bind<std::string>(eval, o, "--embeddings", "embeddings", ".omge text embeddings");
  bind_flag(eval, o, "--stub-embedder", "stub_embedder", "Use the deterministic stub text encoder");

  auto* gen = app.add_subcommand("gen-data", "Write a synthetic dataset");
  common(gen, o);
  bind<std::string>(gen, o, "--kind", "kind", "synthetic or paired");
  bind<int>(gen, o, "--count", "count", "Number of clips");
  bind<std::string>(gen, o, "--layout", "layout", "desk-59 or humanml-263");
  bind<std::string>(gen, o, "-o,--output", "output_dir", "Output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : OMG_ERR_CONFIG;
  }

  const std::string command = app.get_subcommands().front()->get_name();
  std::string config_text;
  try {
    config_text = merged_config(o).dump();
  } catch (const CLI::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return OMG_ERR_CONFIG;
  }

  char* out = nullptr;
  const omg_status st = o.print_config ? omg_effective_config(command.c_str(), config_text.c_str(), &out)
                                       : omg_run(command.c_str(), config_text.c_str(), &out);
  if (st != OMG_OK) {
    std::cerr << "error: " << omg_last_error() << "\n";
    return st;
  }
  std::cout << out << "\n";
  omg_free_string(out);
  return 0;
}
