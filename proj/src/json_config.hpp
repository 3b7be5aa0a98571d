#pragma once

// JSON mapping for configuration structs. Unknown keys are rejected.

#include "json.hpp"
#include "omg/backbone.hpp"
#include "omg/error.hpp"
#include "omg/losses.hpp"
#include "omg/moc.hpp"
#include "omg/optim.hpp"

#include <initializer_list>
#include <string>

namespace omg::detail {

using nlohmann::json;

inline void reject_unknown(const json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  require(j.is_object(), ErrorCode::kConfig, where + " must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || key == a;
    require(ok, ErrorCode::kConfig, "unknown key \"" + key + "\" in " + where);
  }
}

template <class T>
void read_key(const json& j, const char* key, T& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception&) {
    fail(ErrorCode::kConfig, where + "." + key + " has the wrong type");
  }
}

inline json to_json(const ModelConfig& c) {
  return {{"preset", c.preset},   {"n_layers", c.n_layers}, {"d_model", c.d_model},
          {"n_heads", c.n_heads}, {"d_head", c.d_head},     {"d_ff", c.d_ff},
          {"max_len", c.max_len}, {"input_dim", c.input_dim}, {"freq_dim", c.freq_dim}};
}

inline ModelConfig model_from_json(const json& j, ModelConfig c, const std::string& where) {
  reject_unknown(j, {"preset", "n_layers", "d_model", "n_heads", "d_head", "d_ff", "max_len", "input_dim", "freq_dim"},
                 where);
  read_key(j, "preset", c.preset, where);
  read_key(j, "n_layers", c.n_layers, where);
  read_key(j, "d_model", c.d_model, where);
  read_key(j, "n_heads", c.n_heads, where);
  read_key(j, "d_head", c.d_head, where);
  read_key(j, "d_ff", c.d_ff, where);
  read_key(j, "max_len", c.max_len, where);
  read_key(j, "input_dim", c.input_dim, where);
  read_key(j, "freq_dim", c.freq_dim, where);
  return c;
}

inline json to_json(const MoCConfig& c) {
  return {{"d_model", c.d_model},
          {"d_text", c.d_text},
          {"d_m", c.d_m},
          {"pool_size", c.pool_size},
          {"gamma", c.gamma},
          {"beta", c.beta},
          {"use_attention_mask", c.use_attention_mask},
          {"use_zero_conv", c.use_zero_conv},
          {"experts_as_plain_ffn", c.experts_as_plain_ffn}};
}

inline MoCConfig moc_from_json(const json& j, MoCConfig c, const std::string& where) {
  reject_unknown(j,
                 {"d_model", "d_text", "d_m", "pool_size", "gamma", "beta", "use_attention_mask", "use_zero_conv",
                  "experts_as_plain_ffn"},
                 where);
  read_key(j, "d_model", c.d_model, where);
  read_key(j, "d_text", c.d_text, where);
  read_key(j, "d_m", c.d_m, where);
  read_key(j, "pool_size", c.pool_size, where);
  read_key(j, "gamma", c.gamma, where);
  read_key(j, "beta", c.beta, where);
  read_key(j, "use_attention_mask", c.use_attention_mask, where);
  read_key(j, "use_zero_conv", c.use_zero_conv, where);
  read_key(j, "experts_as_plain_ffn", c.experts_as_plain_ffn, where);
  return c;
}

inline json to_json(const OptimizerConfig& c) {
  return {{"lr", c.lr},       {"warmup_steps", c.warmup_steps}, {"total_steps", c.total_steps},
          {"decay", c.decay}, {"weight_decay", c.weight_decay}, {"beta1", c.beta1},
          {"beta2", c.beta2}, {"eps", c.eps}};
}

inline OptimizerConfig optim_from_json(const json& j, OptimizerConfig c, const std::string& where) {
  reject_unknown(j, {"lr", "warmup_steps", "total_steps", "decay", "weight_decay", "beta1", "beta2", "eps"}, where);
  read_key(j, "lr", c.lr, where);
  read_key(j, "warmup_steps", c.warmup_steps, where);
  read_key(j, "total_steps", c.total_steps, where);
  read_key(j, "decay", c.decay, where);
  read_key(j, "weight_decay", c.weight_decay, where);
  read_key(j, "beta1", c.beta1, where);
  read_key(j, "beta2", c.beta2, where);
  read_key(j, "eps", c.eps, where);
  return c;
}

inline json to_json(const LossWeights& w) {
  return {{"lambda_t", w.lambda_t_rule}, {"lambda_vel", w.lambda_vel}, {"lambda_foot", w.lambda_foot}};
}

inline LossWeights weights_from_json(const json& j, LossWeights w, const std::string& where) {
  reject_unknown(j, {"lambda_t", "lambda_vel", "lambda_foot"}, where);
  read_key(j, "lambda_t", w.lambda_t_rule, where);
  read_key(j, "lambda_vel", w.lambda_vel, where);
  read_key(j, "lambda_foot", w.lambda_foot, where);
  return w;
}

inline std::string hex64(std::uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i, v >>= 4) s[static_cast<std::size_t>(i)] = digits[v & 0xf];
  return s;
}

inline std::uint64_t parse_hex64(const std::string& s, const std::string& where) {
  require(s.size() == 16 && s.find_first_not_of("0123456789abcdef") == std::string::npos, ErrorCode::kCheckpointMismatch,
          where + ": malformed checksum \"" + s + "\"");
  return std::stoull(s, nullptr, 16);
}

}  // namespace omg::detail
