#include <bit>
#include <cstring>
#include <fstream>

#include "evolve/errors.hpp"
#include "evolve/policy.hpp"

namespace evolve {

namespace {

constexpr char kMagic[4] = {'E', 'V', 'L', 'B'};
constexpr std::uint32_t kVersion = 1;

enum class ArchTag : std::uint32_t {
  kUniform = 0,
  kTabular = 1,
  kTinyNeural = 2,
};

// Explicit little-endian encoding, independent of host order.
void put_u32(std::ostream& out, std::uint32_t v) {
  char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  out.write(b, 4);
}

void put_u64(std::ostream& out, std::uint64_t v) {
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  out.write(b, 8);
}

void put_i32(std::ostream& out, std::int32_t v) {
  put_u32(out, static_cast<std::uint32_t>(v));
}

void put_f64(std::ostream& out, double v) {
  put_u64(out, std::bit_cast<std::uint64_t>(v));
}

std::uint32_t get_u32(std::istream& in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (!in) throw CheckpointError("truncated checkpoint file");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= std::uint32_t{b[i]} << (8 * i);
  return v;
}

std::uint64_t get_u64(std::istream& in) {
  unsigned char b[8];
  in.read(reinterpret_cast<char*>(b), 8);
  if (!in) throw CheckpointError("truncated checkpoint file");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= std::uint64_t{b[i]} << (8 * i);
  return v;
}

std::int32_t get_i32(std::istream& in) {
  return static_cast<std::int32_t>(get_u32(in));
}

double get_f64(std::istream& in) {
  return std::bit_cast<double>(get_u64(in));
}

void put_params(std::ostream& out, std::span<const double> params) {
  put_u64(out, params.size());
  for (double v : params) put_f64(out, v);
}

void get_params(std::istream& in, std::span<double> params) {
  const std::uint64_t count = get_u64(in);
  if (count != params.size()) {
    throw CheckpointError("checkpoint parameter count " +
                          std::to_string(count) + " does not match model (" +
                          std::to_string(params.size()) + ")");
  }
  for (double& v : params) v = get_f64(in);
}

void put_sequence(std::ostream& out, const TokenSequence& seq) {
  put_u32(out, static_cast<std::uint32_t>(seq.tokens.size()));
  for (Token t : seq.tokens) put_i32(out, t);
}

TokenSequence get_prompt(std::istream& in) {
  const std::uint32_t n = get_u32(in);
  std::vector<Token> tokens(n);
  for (auto& t : tokens) t = get_i32(in);
  return make_prompt(std::move(tokens));
}

}  // namespace

void save_checkpoint(const PolicyModel& model,
                     const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw CheckpointError("cannot open checkpoint for writing: " +
                          path.string());
  }
  out.write(kMagic, 4);
  put_u32(out, kVersion);
  ArchTag tag;
  const std::string arch = model.architecture();
  if (arch == "uniform") {
    tag = ArchTag::kUniform;
  } else if (arch == "tabular") {
    tag = ArchTag::kTabular;
  } else if (arch == "tiny-neural") {
    tag = ArchTag::kTinyNeural;
  } else {
    throw CheckpointError("unknown architecture: " + arch);
  }
  put_u32(out, static_cast<std::uint32_t>(tag));
  put_u64(out, model.vocab().manifest_hash());
  put_i32(out, model.max_response_length());
  switch (tag) {
    case ArchTag::kUniform:
      break;
    case ArchTag::kTabular: {
      const auto& tab = static_cast<const TabularPolicy&>(model);
      const auto& scope = tab.scope();
      put_u32(out, (scope.direct ? 1u : 0u) | (scope.refinement ? 2u : 0u) |
                       (scope.evaluation ? 4u : 0u));
      put_u32(out, static_cast<std::uint32_t>(tab.prompts().size()));
      for (const auto& p : tab.prompts()) put_sequence(out, p);
      break;
    }
    case ArchTag::kTinyNeural: {
      const auto& net = static_cast<const TinyNeuralPolicy&>(model);
      put_i32(out, net.dims().embedding);
      put_i32(out, net.dims().hidden);
      put_i32(out, net.dims().window);
      break;
    }
  }
  put_params(out, model.parameters());
  if (!out) {
    throw CheckpointError("failed writing checkpoint: " + path.string());
  }
}

std::unique_ptr<PolicyModel> load_checkpoint(const std::filesystem::path& path,
                                             const Vocabulary& vocab) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw CheckpointError("cannot open checkpoint: " + path.string());
  }
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kMagic, 4) != 0) {
    throw CheckpointError("bad checkpoint magic: " + path.string());
  }
  const std::uint32_t version = get_u32(in);
  if (version != kVersion) {
    throw CheckpointError("unsupported checkpoint version " +
                          std::to_string(version));
  }
  const auto tag = static_cast<ArchTag>(get_u32(in));
  const std::uint64_t hash = get_u64(in);
  if (hash != vocab.manifest_hash()) {
    throw CheckpointError(
        "checkpoint vocabulary hash does not match the loaded vocabulary");
  }
  const int max_len = get_i32(in);
  std::unique_ptr<PolicyModel> model;
  switch (tag) {
    case ArchTag::kUniform:
      model = std::make_unique<UniformPolicy>(vocab, max_len);
      break;
    case ArchTag::kTabular: {
      const std::uint32_t flags = get_u32(in);
      TabularScope scope;
      scope.direct = (flags & 1u) != 0;
      scope.refinement = (flags & 2u) != 0;
      scope.evaluation = (flags & 4u) != 0;
      const std::uint32_t n = get_u32(in);
      std::vector<TokenSequence> prompts;
      prompts.reserve(n);
      for (std::uint32_t i = 0; i < n; ++i) prompts.push_back(get_prompt(in));
      model = std::make_unique<TabularPolicy>(vocab, max_len,
                                              std::move(prompts), scope);
      break;
    }
    case ArchTag::kTinyNeural: {
      TinyNeuralPolicy::Dims dims;
      dims.embedding = get_i32(in);
      dims.hidden = get_i32(in);
      dims.window = get_i32(in);
      model = std::make_unique<TinyNeuralPolicy>(vocab, max_len, dims,
                                                 /*init_seed=*/0);
      break;
    }
    default:
      throw CheckpointError("unknown architecture tag in checkpoint");
  }
  get_params(in, model->mutable_parameters());
  return model;
}

}  // namespace evolve
