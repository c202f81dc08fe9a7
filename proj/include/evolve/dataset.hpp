#pragma once

#include <filesystem>
#include <optional>
#include <vector>

#include "evolve/sequence.hpp"
#include "evolve/vocab.hpp"

namespace evolve {

// (prompt, chosen, rejected) with strict preference. Identical
// chosen/rejected pairs are rejected at construction.
struct PreferenceTriple {
  TokenSequence prompt;
  TokenSequence chosen;
  TokenSequence rejected;

  PreferenceTriple(TokenSequence prompt, TokenSequence chosen,
                   TokenSequence rejected);

  bool operator==(const PreferenceTriple& other) const = default;
};

// A prompt with the ordered responses one generation strategy produced
// for it, plus optional oracle scores and (for the self-evaluation
// strategy) the model-generated evaluations.
struct ResponseChain {
  TokenSequence prompt;
  std::vector<TokenSequence> responses;
  std::optional<std::vector<double>> scores;
  std::optional<std::vector<TokenSequence>> evaluations;

  ResponseChain(TokenSequence prompt, std::vector<TokenSequence> responses,
                std::optional<std::vector<double>> scores = std::nullopt,
                std::optional<std::vector<TokenSequence>> evaluations =
                    std::nullopt);

  bool operator==(const ResponseChain& other) const = default;
};

// JSONL dataset files. The first line is a header object naming the
// record type; every following line is one record:
//   {"prompt": [ints], "chosen": [ints], "rejected": [ints]}
//   {"prompt": [ints], "responses": [[ints]...], "scores": [floats]|null}
//   {"prompt": [ints]}
// Integer token ids round-trip bit-exactly; files are append-friendly.
void serialize_dataset(const std::vector<PreferenceTriple>& records,
                       const std::filesystem::path& path);
void serialize_dataset(const std::vector<ResponseChain>& records,
                       const std::filesystem::path& path);
void serialize_prompts(const std::vector<TokenSequence>& prompts,
                       const std::filesystem::path& path);

std::vector<PreferenceTriple> deserialize_triples(
    const std::filesystem::path& path, const Vocabulary& vocab);
std::vector<ResponseChain> deserialize_chains(
    const std::filesystem::path& path, const Vocabulary& vocab);
std::vector<TokenSequence> deserialize_prompts(
    const std::filesystem::path& path, const Vocabulary& vocab);

}  // namespace evolve
