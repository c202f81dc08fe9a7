#include "evolve/dataset.hpp"

#include <fstream>

#include "evolve/errors.hpp"
#include "json.hpp"

namespace evolve {

namespace {

using nlohmann::json;

constexpr const char* kTripleType = "preference";
constexpr const char* kChainType = "chains";
constexpr const char* kPromptType = "prompts";
constexpr int kFormatVersion = 1;

json header(const char* type) {
  return json{{"format", "evolve-lab-dataset"},
              {"type", type},
              {"version", kFormatVersion}};
}

json tokens_to_json(const TokenSequence& seq) {
  return json(seq.tokens);
}

std::vector<Token> tokens_from_json(const json& j, const char* field,
                                    std::size_t line) {
  if (!j.is_array()) {
    throw ParseError(std::string(field) + " must be an array of token ids",
                     line);
  }
  std::vector<Token> out;
  out.reserve(j.size());
  for (const auto& v : j) {
    if (!v.is_number_integer()) {
      throw ParseError(std::string(field) + " holds a non-integer token",
                       line);
    }
    out.push_back(v.get<Token>());
  }
  return out;
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) {
    throw ValidationError("cannot open dataset file for writing: " +
                          path.string());
  }
  return out;
}

// Reads the header line and returns the line-by-line payload begin.
std::ifstream open_in(const std::filesystem::path& path, const char* type) {
  std::ifstream in(path);
  if (!in) {
    throw ValidationError("cannot open dataset file: " + path.string());
  }
  std::string first;
  if (!std::getline(in, first)) {
    throw ParseError("missing dataset header line", 1);
  }
  json h;
  try {
    h = json::parse(first);
  } catch (const json::exception& e) {
    throw ParseError(std::string("bad dataset header: ") + e.what(), 1);
  }
  if (!h.contains("type") || h["type"] != type) {
    throw ParseError(std::string("dataset header type is not \"") + type +
                         "\"",
                     1);
  }
  return in;
}

json parse_line(const std::string& text, std::size_t line) {
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    throw ParseError(std::string("malformed record: ") + e.what(), line);
  }
}

void validate_record_sequence(const TokenSequence& seq,
                              const Vocabulary& vocab, std::size_t line) {
  try {
    validate_sequence(seq, vocab);
  } catch (const InvalidToken&) {
    throw;
  } catch (const Error& e) {
    throw ValidationError(std::string(e.what()) + " (line " +
                          std::to_string(line) + ")");
  }
}

}  // namespace

PreferenceTriple::PreferenceTriple(TokenSequence prompt_in,
                                   TokenSequence chosen_in,
                                   TokenSequence rejected_in)
    : prompt(std::move(prompt_in)),
      chosen(std::move(chosen_in)),
      rejected(std::move(rejected_in)) {
  if (chosen.tokens == rejected.tokens) {
    throw ValidationError(
        "preference triple with identical chosen and rejected responses");
  }
}

ResponseChain::ResponseChain(
    TokenSequence prompt_in, std::vector<TokenSequence> responses_in,
    std::optional<std::vector<double>> scores_in,
    std::optional<std::vector<TokenSequence>> evaluations_in)
    : prompt(std::move(prompt_in)),
      responses(std::move(responses_in)),
      scores(std::move(scores_in)),
      evaluations(std::move(evaluations_in)) {
  if (responses.empty()) {
    throw ValidationError("response chain with no responses");
  }
  if (scores && scores->size() != responses.size()) {
    throw ValidationError("response chain scores do not align with responses");
  }
}

void serialize_dataset(const std::vector<PreferenceTriple>& records,
                       const std::filesystem::path& path) {
  auto out = open_out(path);
  out << header(kTripleType).dump() << "\n";
  for (const auto& r : records) {
    json j{{"prompt", tokens_to_json(r.prompt)},
           {"chosen", tokens_to_json(r.chosen)},
           {"rejected", tokens_to_json(r.rejected)}};
    out << j.dump() << "\n";
  }
}

void serialize_dataset(const std::vector<ResponseChain>& records,
                       const std::filesystem::path& path) {
  auto out = open_out(path);
  out << header(kChainType).dump() << "\n";
  for (const auto& r : records) {
    json responses = json::array();
    for (const auto& y : r.responses) responses.push_back(tokens_to_json(y));
    json j{{"prompt", tokens_to_json(r.prompt)}, {"responses", responses}};
    if (r.scores) {
      j["scores"] = *r.scores;
    } else {
      j["scores"] = nullptr;
    }
    if (r.evaluations) {
      json evals = json::array();
      for (const auto& e : *r.evaluations) evals.push_back(tokens_to_json(e));
      j["evaluations"] = evals;
    }
    out << j.dump() << "\n";
  }
}

void serialize_prompts(const std::vector<TokenSequence>& prompts,
                       const std::filesystem::path& path) {
  auto out = open_out(path);
  out << header(kPromptType).dump() << "\n";
  for (const auto& p : prompts) {
    out << json{{"prompt", tokens_to_json(p)}}.dump() << "\n";
  }
}

std::vector<PreferenceTriple> deserialize_triples(
    const std::filesystem::path& path, const Vocabulary& vocab) {
  auto in = open_in(path, kTripleType);
  std::vector<PreferenceTriple> out;
  std::string text;
  std::size_t line = 1;
  while (std::getline(in, text)) {
    ++line;
    if (text.empty()) continue;
    json j = parse_line(text, line);
    if (!j.contains("prompt") || !j.contains("chosen") ||
        !j.contains("rejected")) {
      throw ParseError("preference record missing prompt/chosen/rejected",
                       line);
    }
    auto prompt = make_prompt(tokens_from_json(j["prompt"], "prompt", line));
    auto chosen = make_response(tokens_from_json(j["chosen"], "chosen", line));
    auto rejected =
        make_response(tokens_from_json(j["rejected"], "rejected", line));
    validate_record_sequence(prompt, vocab, line);
    validate_record_sequence(chosen, vocab, line);
    validate_record_sequence(rejected, vocab, line);
    if (chosen.tokens == rejected.tokens) {
      throw ValidationError(
          "preference record with identical chosen and rejected responses "
          "(line " +
          std::to_string(line) + ")");
    }
    out.emplace_back(std::move(prompt), std::move(chosen),
                     std::move(rejected));
  }
  return out;
}

std::vector<ResponseChain> deserialize_chains(
    const std::filesystem::path& path, const Vocabulary& vocab) {
  auto in = open_in(path, kChainType);
  std::vector<ResponseChain> out;
  std::string text;
  std::size_t line = 1;
  while (std::getline(in, text)) {
    ++line;
    if (text.empty()) continue;
    json j = parse_line(text, line);
    if (!j.contains("prompt") || !j.contains("responses")) {
      throw ParseError("chain record missing prompt/responses", line);
    }
    auto prompt = make_prompt(tokens_from_json(j["prompt"], "prompt", line));
    validate_record_sequence(prompt, vocab, line);
    if (!j["responses"].is_array() || j["responses"].empty()) {
      throw ValidationError("chain record with no responses (line " +
                            std::to_string(line) + ")");
    }
    std::vector<TokenSequence> responses;
    for (const auto& r : j["responses"]) {
      auto y = make_response(tokens_from_json(r, "responses", line));
      validate_record_sequence(y, vocab, line);
      responses.push_back(std::move(y));
    }
    std::optional<std::vector<double>> scores;
    if (j.contains("scores") && !j["scores"].is_null()) {
      if (!j["scores"].is_array()) {
        throw ParseError("scores must be an array or null", line);
      }
      scores = std::vector<double>();
      for (const auto& s : j["scores"]) {
        if (!s.is_number()) throw ParseError("non-numeric score", line);
        scores->push_back(s.get<double>());
      }
      if (scores->size() != responses.size()) {
        throw ValidationError(
            "chain record scores do not align with responses (line " +
            std::to_string(line) + ")");
      }
    }
    std::optional<std::vector<TokenSequence>> evaluations;
    if (j.contains("evaluations") && !j["evaluations"].is_null()) {
      evaluations = std::vector<TokenSequence>();
      for (const auto& e : j["evaluations"]) {
        auto ev = make_evaluation(tokens_from_json(e, "evaluations", line));
        validate_record_sequence(ev, vocab, line);
        evaluations->push_back(std::move(ev));
      }
    }
    out.emplace_back(std::move(prompt), std::move(responses),
                     std::move(scores), std::move(evaluations));
  }
  return out;
}

std::vector<TokenSequence> deserialize_prompts(
    const std::filesystem::path& path, const Vocabulary& vocab) {
  auto in = open_in(path, kPromptType);
  std::vector<TokenSequence> out;
  std::string text;
  std::size_t line = 1;
  while (std::getline(in, text)) {
    ++line;
    if (text.empty()) continue;
    json j = parse_line(text, line);
    if (!j.contains("prompt")) {
      throw ParseError("prompt record missing prompt", line);
    }
    auto prompt = make_prompt(tokens_from_json(j["prompt"], "prompt", line));
    validate_record_sequence(prompt, vocab, line);
    out.push_back(std::move(prompt));
  }
  return out;
}

}  // namespace evolve
