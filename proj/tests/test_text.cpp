#include "omg/error.hpp"
#include "omg/text.hpp"

#include <doctest.h>

#include <filesystem>

using namespace omg;

#ifndef OMG_FIXTURE_DIR
#define OMG_FIXTURE_DIR "tests/fixtures"
#endif

namespace {
const std::filesystem::path kFixture = std::filesystem::path(OMG_FIXTURE_DIR) / "prompts.omge";
}

TEST_CASE("stub embedder is deterministic and case-insensitive") {
  StubEmbedder stub;
  const TextConditioning a = stub.embed("A person walks");
  const TextConditioning b = stub.embed("a person   walks");
  a.validate();
  CHECK(a.embeddings == b.embeddings);
  CHECK(a.dim() == kTextDim);
  CHECK(a.eos().norm() == doctest::Approx(1.0).epsilon(1e-5));
  CHECK(stub.embed("a person jumps").eos() != a.eos());
}

TEST_CASE("empty prompts are refused but the empty token exists") {
  StubEmbedder stub;
  bool refused = false;
  try {
    stub.embed("   ");
  } catch (const Error& e) {
    refused = e.code() == ErrorCode::kEmptyPrompt;
  }
  CHECK(refused);
  CHECK(stub.empty().n_tokens() >= 1);
  CHECK(stub.empty().eos().norm() == doctest::Approx(1.0).epsilon(1e-5));
  CHECK(stub.empty().eos() != stub.embed("a").eos());
}

TEST_CASE("long prompts are truncated to the token limit") {
  StubEmbedder stub;
  std::string prompt;
  for (int i = 0; i < 100; ++i) prompt += "word" + std::to_string(i) + " ";
  const TextConditioning c = stub.embed(prompt);
  CHECK(c.n_tokens() == kMaxTokens);
  CHECK(c.eos_index < c.n_tokens());
}

TEST_CASE("the checked-in fixture loads and looks prompts up") {
  const EmbeddingTable table = load_embedding_file(kFixture);
  CHECK(table.size() == 3);
  FileEmbeddingProvider file(table, kFixture.string());
  CHECK(file.contains(""));
  CHECK(file.contains("a person walks"));
  const TextConditioning c = file.embed("a person walks");
  c.validate();
  CHECK(c.dim() == kTextDim);
  CHECK(c.n_tokens() == 5);
  CHECK(c.source == "file");
  CHECK(file.empty().eos() == table.at(prompt_hash("")).eos());
}

TEST_CASE("unknown prompts fail unless a fallback is configured") {
  FileEmbeddingProvider strict(load_embedding_file(kFixture), "fixture");
  bool threw = false;
  try {
    strict.embed("a person cartwheels");
  } catch (const Error& e) {
    threw = e.code() == ErrorCode::kUnknownPrompt;
  }
  CHECK(threw);
  FileEmbeddingProvider lenient(load_embedding_file(kFixture), "fixture", std::make_shared<StubEmbedder>());
  CHECK(lenient.embed("a person cartwheels").source == "stub");
}

TEST_CASE("omge round trip") {
  StubEmbedder stub;
  const auto path = std::filesystem::temp_directory_path() / "omg_test_roundtrip.omge";
  write_embedding_file(path, {{prompt_hash("a"), stub.embed("a")}, {prompt_hash(""), stub.empty()}});
  const EmbeddingTable t = load_embedding_file(path);
  REQUIRE(t.count(prompt_hash("a")) == 1);
  CHECK(t.at(prompt_hash("a")).embeddings == stub.embed("a").embeddings);
}

TEST_CASE("eos dropout swaps only the eos row") {
  StubEmbedder stub;
  const TextConditioning c = stub.embed("a person runs");
  const MatF empty = stub.empty().eos();
  Rng rng(5);
  int dropped = 0;
  for (int i = 0; i < 2000; ++i) {
    const TextConditioning d = eos_dropout(c, empty, rng, 0.5);
    for (int r = 0; r < c.n_tokens(); ++r)
      if (r != c.eos_index) REQUIRE(d.embeddings.row(r) == c.embeddings.row(r));
    if (d.eos() == empty) ++dropped;
  }
  CHECK(dropped > 900);
  CHECK(dropped < 1100);
}
