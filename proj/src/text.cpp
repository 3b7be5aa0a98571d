#include "omg/text.hpp"

#include "binio.hpp"
#include "omg/error.hpp"
#include "omg/hash.hpp"

#include <cctype>
#include <cmath>
#include <sstream>

namespace omg {

void TextConditioning::validate() const {
  const int n = n_tokens();
  require(n >= 1, ErrorCode::kData, "conditioning has no tokens");
  require(n <= kMaxTokens, ErrorCode::kTokenOverflow,
          "conditioning has " + std::to_string(n) + " tokens, limit is " + std::to_string(kMaxTokens));
  require(eos_index >= 0 && eos_index < n, ErrorCode::kData, "eos index outside the token range");
  require(static_cast<int>(token_mask.size()) == n, ErrorCode::kShapeMismatch, "token mask size differs from n");
  require(token_mask[static_cast<std::size_t>(eos_index)] != 0, ErrorCode::kData, "eos token is masked out");
  require(embeddings.allFinite(), ErrorCode::kNonFiniteValue, "non-finite text embedding");
}

std::uint64_t prompt_hash(std::string_view prompt) { return fnv1a64(prompt); }

std::vector<std::string> StubEmbedder::tokenize(const std::string& prompt) {
  std::istringstream in(prompt);
  std::vector<std::string> tokens;
  for (std::string w; in >> w;) {
    for (auto& ch : w) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
    tokens.push_back(std::move(w));
  }
  return tokens;
}

namespace {

Eigen::RowVectorXd raw_token_vector(std::string_view token) {
  Rng rng(fnv1a64(token));
  Eigen::RowVectorXd v(kTextDim);
  for (int i = 0; i < kTextDim; ++i) v(i) = rng.normal();
  return v / v.norm();
}

TextConditioning stub_conditioning(const std::vector<std::string>& tokens) {
  TextConditioning cond;
  const int n = static_cast<int>(tokens.size()) + 1;
  cond.embeddings.resize(n, kTextDim);
  Eigen::RowVectorXd eos = raw_token_vector("");
  for (int i = 0; i + 1 < n; ++i) {
    const Eigen::RowVectorXd v = raw_token_vector(tokens[static_cast<std::size_t>(i)]);
    cond.embeddings.row(i) = v.cast<float>();
    eos += v;
  }
  cond.embeddings.row(n - 1) = (eos / eos.norm()).cast<float>();
  cond.eos_index = n - 1;
  cond.token_mask.assign(static_cast<std::size_t>(n), 1);
  cond.source = "stub";
  return cond;
}

}  // namespace

MatF StubEmbedder::token_vector(std::string_view token) { return raw_token_vector(token).cast<float>(); }

TextConditioning StubEmbedder::embed(const std::string& prompt) const {
  auto tokens = tokenize(prompt);
  require(!tokens.empty(), ErrorCode::kEmptyPrompt, "cannot embed an empty prompt");
  if (static_cast<int>(tokens.size()) > kMaxTokens - 1) tokens.resize(kMaxTokens - 1);
  return stub_conditioning(tokens);
}

TextConditioning StubEmbedder::empty() const { return stub_conditioning({}); }

EmbeddingTable load_embedding_file(const std::filesystem::path& path) {
  const auto bytes = detail::read_file_bytes(path);
  detail::ByteReader r(bytes, path.string());
  if (!r.has_magic("OMGE")) fail(ErrorCode::kBadMagic, path.string() + ": not an OMGE embedding file");
  const std::uint32_t version = r.u32();
  require(version == 1, ErrorCode::kBadMagic, path.string() + ": unsupported version " + std::to_string(version));
  const std::uint32_t count = r.u32();
  EmbeddingTable table;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint64_t hash = r.u64();
    const int n = r.u16();
    const int dc = r.u16();
    const int eos = r.u16();
    if (n > kMaxTokens)
      fail(ErrorCode::kTokenOverflow, path.string() + ": record " + std::to_string(i) + " has " + std::to_string(n) +
                                          " tokens (limit " + std::to_string(kMaxTokens) + ")");
    TextConditioning cond;
    cond.embeddings.resize(n, dc);
    for (int k = 0; k < n; ++k) {
      for (int c = 0; c < dc; ++c) {
        const float v = r.f32();
        if (!std::isfinite(v))
          fail(ErrorCode::kNonFiniteValue, path.string() + ": non-finite value in record " + std::to_string(i));
        cond.embeddings(k, c) = v;
      }
    }
    cond.eos_index = eos;
    cond.token_mask.assign(static_cast<std::size_t>(n), 1);
    cond.source = "file";
    cond.validate();
    table[hash] = std::move(cond);
  }
  require(r.remaining() == 0, ErrorCode::kIo, path.string() + ": trailing bytes after last record");
  return table;
}

void write_embedding_file(const std::filesystem::path& path,
                          const std::vector<std::pair<std::uint64_t, TextConditioning>>& records) {
  detail::ByteWriter w;
  w.magic("OMGE");
  w.u32(1);
  w.u32(static_cast<std::uint32_t>(records.size()));
  for (const auto& [hash, cond] : records) {
    cond.validate();
    w.u64(hash);
    w.u16(static_cast<std::uint16_t>(cond.n_tokens()));
    w.u16(static_cast<std::uint16_t>(cond.dim()));
    w.u16(static_cast<std::uint16_t>(cond.eos_index));
    for (Eigen::Index i = 0; i < cond.embeddings.size(); ++i) w.f32(cond.embeddings.data()[i]);
  }
  detail::write_file_bytes(path, w.buffer());
}

FileEmbeddingProvider::FileEmbeddingProvider(EmbeddingTable table, std::string origin,
                                             std::shared_ptr<const EmbeddingProvider> fallback)
    : table_(std::move(table)), origin_(std::move(origin)), fallback_(std::move(fallback)) {}

bool FileEmbeddingProvider::contains(const std::string& prompt) const {
  return table_.count(prompt_hash(prompt)) > 0;
}

TextConditioning FileEmbeddingProvider::embed(const std::string& prompt) const {
  const auto it = table_.find(prompt_hash(prompt));
  if (it != table_.end()) return it->second;
  if (fallback_) return fallback_->embed(prompt);
  fail(ErrorCode::kUnknownPrompt, "prompt '" + prompt + "' not found in " + origin_);
}

TextConditioning FileEmbeddingProvider::empty() const {
  const auto it = table_.find(prompt_hash(""));
  if (it != table_.end()) return it->second;
  if (fallback_) return fallback_->empty();
  fail(ErrorCode::kUnknownPrompt, origin_ + " has no empty-prompt record");
}

TextConditioning eos_dropout(const TextConditioning& cond, const MatF& empty_token, Rng& rng, double p) {
  require(empty_token.rows() == 1 && empty_token.cols() == cond.dim(), ErrorCode::kShapeMismatch,
          "empty token must be 1 x d_c");
  TextConditioning out = cond;
  if (rng.bernoulli(p)) out.embeddings.row(out.eos_index) = empty_token.row(0);
  return out;
}

}  // namespace omg
