#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

namespace evolve {

using Token = int;

// Token space: content tokens 0..V-1 followed by the five control tokens.
// Ids are dense and stable; control tokens never collide with content.
class Vocabulary {
 public:
  explicit Vocabulary(int content_size);

  int content_size() const { return content_size_; }
  int size() const { return content_size_ + 5; }

  Token bos() const { return content_size_; }
  Token eos() const { return content_size_ + 1; }
  Token sep() const { return content_size_ + 2; }
  Token ref() const { return content_size_ + 3; }
  Token eval() const { return content_size_ + 4; }

  bool is_content(Token t) const { return t >= 0 && t < content_size_; }
  bool is_control(Token t) const {
    return t >= content_size_ && t < size();
  }
  bool contains(Token t) const { return t >= 0 && t < size(); }

  // Tokens a policy may emit when generating a response: content + EOS.
  int generation_size() const { return content_size_ + 1; }
  // Maps a generatable token to its index in a logit row and back.
  // Content tokens map to themselves; EOS maps to content_size.
  int generation_index(Token t) const;
  Token generation_token(int index) const;

  std::string token_name(Token t) const;

  // Stable hash over the manifest content; checkpoints embed it.
  std::uint64_t manifest_hash() const;

  void save_manifest(const std::filesystem::path& path) const;
  static Vocabulary load_manifest(const std::filesystem::path& path);

  bool operator==(const Vocabulary& other) const {
    return content_size_ == other.content_size_;
  }

 private:
  int content_size_;
};

}  // namespace evolve
