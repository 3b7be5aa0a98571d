#pragma once

#include "omg/rng.hpp"
#include "omg/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

namespace omg {

inline constexpr int kTextDim = 768;
inline constexpr int kMaxTokens = 77;

struct TextConditioning {
  MatF embeddings;                      // n x d_c
  int eos_index = 0;
  std::vector<std::uint8_t> token_mask;  // n validity bits
  std::string source;                    // "file" or "stub"

  int n_tokens() const { return static_cast<int>(embeddings.rows()); }
  int dim() const { return static_cast<int>(embeddings.cols()); }
  MatF eos() const { return embeddings.row(eos_index); }

  /// 1 <= n <= 77, eos_index < n, finite values, mask sized n.
  void validate() const;
};

/// FNV-1a over the prompt's utf-8 bytes; the key used by `.omge` files.
std::uint64_t prompt_hash(std::string_view prompt);

class EmbeddingProvider {
 public:
  virtual ~EmbeddingProvider() = default;
  virtual TextConditioning embed(const std::string& prompt) const = 0;
  /// The empty prompt's conditioning; its eos row is the "empty token".
  virtual TextConditioning empty() const = 0;
  virtual std::string id() const = 0;
};

/// Deterministic CLIP stand-in. Lower-cased whitespace tokens each map to a
/// unit 768-vector drawn from a PRNG seeded with the token's FNV-1a hash; the
/// synthetic eos is the normalized sum of the token vectors plus the
/// empty-string vector, so the empty prompt's eos is the empty-string vector.
class StubEmbedder final : public EmbeddingProvider {
 public:
  TextConditioning embed(const std::string& prompt) const override;
  TextConditioning empty() const override;
  std::string id() const override { return "stub"; }

  static MatF token_vector(std::string_view token);
  static std::vector<std::string> tokenize(const std::string& prompt);
};

using EmbeddingTable = std::map<std::uint64_t, TextConditioning>;

/// `.omge`: "OMGE", version u32=1, count u32; per record: hash u64, n u16,
/// d_c u16, eos_index u16, then n*d_c float32 (all little-endian).
EmbeddingTable load_embedding_file(const std::filesystem::path& path);
void write_embedding_file(const std::filesystem::path& path,
                          const std::vector<std::pair<std::uint64_t, TextConditioning>>& records);

/// Looks prompts up in an embedding table, optionally falling back to a
/// second provider for prompts the table lacks.
class FileEmbeddingProvider final : public EmbeddingProvider {
 public:
  FileEmbeddingProvider(EmbeddingTable table, std::string origin,
                        std::shared_ptr<const EmbeddingProvider> fallback = nullptr);

  TextConditioning embed(const std::string& prompt) const override;
  TextConditioning empty() const override;
  std::string id() const override { return "file:" + origin_; }
  bool contains(const std::string& prompt) const;

 private:
  EmbeddingTable table_;
  std::string origin_;
  std::shared_ptr<const EmbeddingProvider> fallback_;
};

/// With probability p, replaces the eos row with `empty_token` (1 x d_c).
TextConditioning eos_dropout(const TextConditioning& cond, const MatF& empty_token, Rng& rng, double p = 0.5);

}  // namespace omg
