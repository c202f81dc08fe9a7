#include "evolve/vocab.hpp"

#include <fstream>

#include "evolve/errors.hpp"
#include "json.hpp"

namespace evolve {

Vocabulary::Vocabulary(int content_size) : content_size_(content_size) {
  if (content_size < 2) {
    throw ValidationError("vocabulary content size must be >= 2, got " +
                          std::to_string(content_size));
  }
}

int Vocabulary::generation_index(Token t) const {
  if (is_content(t)) return t;
  if (t == eos()) return content_size_;
  throw InvalidToken("token " + std::to_string(t) +
                     " is not generatable (content or EOS)");
}

Token Vocabulary::generation_token(int index) const {
  if (index >= 0 && index < content_size_) return index;
  if (index == content_size_) return eos();
  throw InvalidToken("generation index " + std::to_string(index) +
                     " out of range");
}

std::string Vocabulary::token_name(Token t) const {
  if (is_content(t)) return std::to_string(t);
  if (t == bos()) return "BOS";
  if (t == eos()) return "EOS";
  if (t == sep()) return "SEP";
  if (t == ref()) return "REF";
  if (t == eval()) return "EVAL";
  return "<invalid:" + std::to_string(t) + ">";
}

std::uint64_t Vocabulary::manifest_hash() const {
  // FNV-1a over the canonical manifest string.
  const std::string canon = "evolve-vocab/v1/" + std::to_string(content_size_);
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : canon) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

void Vocabulary::save_manifest(const std::filesystem::path& path) const {
  nlohmann::json j;
  j["content_size"] = content_size_;
  j["control_tokens"] = {{"BOS", bos()},
                         {"EOS", eos()},
                         {"SEP", sep()},
                         {"REF", ref()},
                         {"EVAL", eval()}};
  std::ofstream out(path);
  if (!out) {
    throw ValidationError("cannot open vocabulary manifest for writing: " +
                          path.string());
  }
  out << j.dump(2) << "\n";
}

Vocabulary Vocabulary::load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw ValidationError("cannot open vocabulary manifest: " + path.string());
  }
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("bad vocabulary manifest: ") + e.what(), 1);
  }
  if (!j.contains("content_size") || !j["content_size"].is_number_integer()) {
    throw ValidationError("vocabulary manifest missing content_size");
  }
  Vocabulary vocab(j["content_size"].get<int>());
  if (j.contains("control_tokens")) {
    const auto& ct = j["control_tokens"];
    auto check = [&](const char* name, Token expected) {
      if (ct.contains(name) && ct[name].get<Token>() != expected) {
        throw ValidationError(std::string("vocabulary manifest control token ") +
                              name + " does not match the dense layout");
      }
    };
    check("BOS", vocab.bos());
    check("EOS", vocab.eos());
    check("SEP", vocab.sep());
    check("REF", vocab.ref());
    check("EVAL", vocab.eval());
  }
  return vocab;
}

}  // namespace evolve
