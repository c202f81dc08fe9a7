#include <cmath>
#include <map>

#include "doctest.h"
#include "evolve/context.hpp"
#include "evolve/errors.hpp"
#include "evolve/policy.hpp"
#include "evolve/rng.hpp"
#include "test_support.hpp"

using namespace evolve;
using namespace evolve::testing;

namespace {

// V=4, k=2, L=2 micro-instance with the direct+refinement closure.
TabularPolicy micro_tabular(int prompt_count = 0) {
  Vocabulary vocab(4);
  auto prompts = enumerate_prompts(vocab, 2);
  if (prompt_count > 0) {
    prompts.resize(static_cast<std::size_t>(prompt_count));
  }
  return TabularPolicy(vocab, 2, std::move(prompts));
}

TinyNeuralPolicy small_neural(std::uint64_t seed) {
  Vocabulary vocab(4);
  TinyNeuralPolicy::Dims dims;
  dims.embedding = 4;
  dims.hidden = 8;
  dims.window = 8;
  return TinyNeuralPolicy(vocab, 2, dims, seed);
}

}  // namespace

TEST_CASE("log_prob of uniform policy is -n log 5") {
  Vocabulary vocab(4);
  UniformPolicy model(vocab, 2);
  const auto ctx = build_direct_context(make_prompt({2, 0}), vocab);

  // two free steps: content then EOS
  const double lp2 =
      log_prob(model, make_response({1, vocab.eos()}), ctx);
  CHECK(lp2 == doctest::Approx(-2.0 * std::log(5.0)).epsilon(1e-12));
  CHECK(lp2 == doctest::Approx(-3.218876).epsilon(1e-6));

  const double lp1 = log_prob(model, make_response({vocab.eos()}), ctx);
  CHECK(lp1 == doctest::Approx(-std::log(5.0)).epsilon(1e-12));

  // length-L response: EOS is forced, contributing log 1
  const double lpL =
      log_prob(model, make_response({0, 1, vocab.eos()}), ctx);
  CHECK(lpL == doctest::Approx(-2.0 * std::log(5.0)).epsilon(1e-12));
}

TEST_CASE("log_prob validates its target") {
  Vocabulary vocab(4);
  UniformPolicy model(vocab, 2);
  const auto ctx = build_direct_context(make_prompt({2, 0}), vocab);
  CHECK_THROWS_AS(log_prob(model, make_response({99, vocab.eos()}), ctx),
                  InvalidToken);
  CHECK_THROWS_AS(log_prob(model, make_prompt({1}), ctx),
                  InvalidSequenceKind);
  CHECK_THROWS_AS(log_prob(model, make_response({1}), ctx), ValidationError);
}

TEST_CASE("point-mass tabular policy") {
  auto model = micro_tabular();
  const auto& vocab = model.vocab();
  const auto x = make_prompt({2, 0});
  const auto ctx = build_direct_context(x, vocab);
  const auto target = make_response({0, 2, vocab.eos()});

  // +/-60 logits put all mass on the target path
  auto row0 = model.logits_for(ctx.tokens);
  for (auto& v : row0) v = -60.0;
  row0[vocab.generation_index(0)] = 60.0;
  std::vector<Token> ctx1 = ctx.tokens;
  ctx1.push_back(0);
  auto row1 = model.logits_for(ctx1);
  for (auto& v : row1) v = -60.0;
  row1[vocab.generation_index(2)] = 60.0;

  CHECK(log_prob(model, target, ctx) == doctest::Approx(0.0).epsilon(1e-9));
  const double other =
      log_prob(model, make_response({1, vocab.eos()}), ctx);
  CHECK(other <= std::log(kProbFloor) + 1e-9);

  SUBCASE("degenerate policy samples its target at any temperature") {
    for (double temp : {0.1, 0.7, 1.0, 2.0}) {
      CHECK(sample(model, ctx, temp, 7) == target);
    }
    CHECK(greedy_decode(model, ctx) == target);
  }
  SUBCASE("enumeration concentrates on the target") {
    const auto dist = enumerate_distribution(model, ctx);
    double best = 0.0;
    for (const auto& [resp, p] : dist) {
      if (resp == target.tokens) best = p;
    }
    CHECK(best == doctest::Approx(1.0).epsilon(1e-9));
  }
}

TEST_CASE("unreached tabular context raises") {
  Vocabulary vocab(4);
  TabularPolicy model(vocab, 2, {make_prompt({2, 0})});
  const auto other = build_direct_context(make_prompt({0, 1}), vocab);
  CHECK_THROWS_AS(log_prob(model, make_response({vocab.eos()}), other),
                  ValidationError);
}

TEST_CASE("tabular single-step gradient is one-hot minus softmax") {
  auto model = micro_tabular(1);
  const auto& vocab = model.vocab();
  randomize_parameters(model, 11);
  const auto ctx = build_direct_context(model.prompts()[0], vocab);
  const auto y = make_response({vocab.eos()});
  const auto grad = log_prob_grad(model, y, ctx);
  const auto probs = next_token_probabilities(model, ctx.tokens);

  // locate the row for ctx: recompute via logits_for
  const auto row = model.logits_for(ctx.tokens);
  const std::size_t offset =
      static_cast<std::size_t>(row.data() - model.parameters().data());
  for (std::size_t j = 0; j < probs.size(); ++j) {
    const double expect =
        (j == static_cast<std::size_t>(vocab.generation_index(vocab.eos()))
             ? 1.0
             : 0.0) -
        probs[j];
    CHECK(grad[offset + j] == doctest::Approx(expect).epsilon(1e-12));
  }
  // all other rows untouched
  double off_row = 0.0;
  for (std::size_t i = 0; i < grad.size(); ++i) {
    if (i < offset || i >= offset + probs.size()) {
      off_row += std::fabs(grad[i]);
    }
  }
  CHECK(off_row == 0.0);
}

TEST_CASE("log_prob_grad matches central finite differences") {
  const double kTol = 1e-5;
  const auto tmpl = refine_template();

  SUBCASE("tabular") {
    auto model = micro_tabular(2);
    const auto& vocab = model.vocab();
    const auto responses = enumerate_responses(vocab, 2);
    Rng rng(31);
    for (int rep = 0; rep < 100; ++rep) {
      randomize_parameters(model, 1000 + rep);
      const auto& x = model.prompts()[rng.next_below(2)];
      const auto& y = responses[rng.next_below(responses.size())];
      const auto ctx =
          rep % 2 == 0
              ? build_direct_context(x, vocab)
              : build_refinement_context(
                    x, responses[rng.next_below(responses.size())], tmpl,
                    vocab);
      const auto analytic = log_prob_grad(model, y, ctx);
      const auto fd = finite_difference_grad(
          model, [&] { return log_prob(model, y, ctx); });
      CHECK(max_relative_error(analytic, fd) < kTol);
    }
  }

  SUBCASE("tiny-neural") {
    auto model = small_neural(5);
    const auto& vocab = model.vocab();
    const auto responses = enumerate_responses(vocab, 2);
    const auto prompts = enumerate_prompts(vocab, 2);
    Rng rng(32);
    for (int rep = 0; rep < 100; ++rep) {
      randomize_parameters(model, 2000 + rep, 0.7);
      const auto& x = prompts[rng.next_below(prompts.size())];
      const auto& y = responses[rng.next_below(responses.size())];
      const auto ctx =
          rep % 2 == 0
              ? build_direct_context(x, vocab)
              : build_refinement_context(
                    x, responses[rng.next_below(responses.size())], tmpl,
                    vocab);
      const auto analytic = log_prob_grad(model, y, ctx);
      const auto fd = finite_difference_grad(
          model, [&] { return log_prob(model, y, ctx); });
      CHECK(max_relative_error(analytic, fd) < kTol);
    }
  }

  SUBCASE("zero-parameter model yields an empty vector") {
    Vocabulary vocab(4);
    UniformPolicy model(vocab, 2);
    const auto ctx = build_direct_context(make_prompt({2, 0}), vocab);
    const auto grad =
        log_prob_grad(model, make_response({vocab.eos()}), ctx);
    CHECK(grad.empty());
  }
}

TEST_CASE("sampling is deterministic in the seed") {
  auto model = small_neural(9);
  randomize_parameters(model, 42, 0.5);
  const auto ctx =
      build_direct_context(make_prompt({2, 0}), model.vocab());
  const auto a = sample(model, ctx, 0.7, 123);
  const auto b = sample(model, ctx, 0.7, 123);
  const auto c = sample(model, ctx, 0.7, 124);
  CHECK(a == b);
  CHECK((a == c || a != c));  // c merely has to be valid
  CHECK_THROWS_AS(sample(model, ctx, 0.0, 1), InvalidTemperature);
  CHECK_THROWS_AS(sample(model, ctx, -1.0, 1), InvalidTemperature);
}

TEST_CASE("normalization of next-token distributions") {
  auto model = micro_tabular();
  Rng rng(55);
  for (int rep = 0; rep < 20; ++rep) {
    randomize_parameters(model, 300 + rep, 4.0);
    const auto x = model.prompts()[rng.next_below(model.prompts().size())];
    const auto ctx = build_direct_context(x, model.vocab());
    const auto probs = next_token_probabilities(model, ctx.tokens);
    double sum = 0.0;
    for (double p : probs) {
      CHECK(p > 0.0);
      sum += p;
    }
    CHECK(std::fabs(sum - 1.0) < 1e-12);
  }
}

TEST_CASE("enumeration over the uniform micro policy") {
  Vocabulary vocab(2);
  UniformPolicy model(vocab, 1);
  const auto ctx = build_direct_context(make_prompt({0}), vocab);
  const auto dist = enumerate_distribution(model, ctx);
  REQUIRE(dist.size() == 3);
  for (const auto& [resp, p] : dist) {
    CHECK(p == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
  }
}

TEST_CASE("enumeration sums to one and matches log_prob") {
  auto model = micro_tabular();
  const auto& vocab = model.vocab();
  Rng rng(77);
  for (int rep = 0; rep < 10; ++rep) {
    randomize_parameters(model, 500 + rep, 3.0);
    const auto x = model.prompts()[rng.next_below(model.prompts().size())];
    const auto ctx = build_direct_context(x, vocab);
    const auto dist = enumerate_distribution(model, ctx);
    double sum = 0.0;
    for (const auto& [resp, p] : dist) {
      sum += p;
      const double lp = log_prob(model, TokenSequence{resp, SequenceKind::kResponse}, ctx);
      CHECK(std::fabs(std::exp(lp) - p) < 1e-9);
    }
    CHECK(std::fabs(sum - 1.0) < 1e-9);
  }
}

TEST_CASE("enumeration refuses oversized spaces") {
  Vocabulary vocab(10);
  UniformPolicy model(vocab, 4);
  const auto ctx = build_direct_context(make_prompt({0, 1, 2}), vocab);
  CHECK_THROWS_AS(enumerate_distribution(model, ctx), EnumerationTooLarge);
}

TEST_CASE("sampling frequencies match the enumerated distribution") {
  auto model = micro_tabular(1);
  const auto& vocab = model.vocab();
  randomize_parameters(model, 808, 1.5);
  const auto ctx = build_direct_context(model.prompts()[0], vocab);
  const auto dist = enumerate_distribution(model, ctx);

  const int n = 100000;
  std::map<std::vector<Token>, int> counts;
  for (int i = 0; i < n; ++i) {
    counts[sample(model, ctx, 1.0, derive_seed(99, 0, i)).tokens]++;
  }
  for (const auto& [resp, p] : dist) {
    const double expect = p * n;
    const double sigma = std::sqrt(n * p * (1.0 - p));
    const double got = counts.count(resp) ? counts.at(resp) : 0;
    CHECK(std::fabs(got - expect) <= 3.0 * sigma + 1.0);
  }
}

TEST_CASE("snapshots are frozen and idempotent") {
  auto model = small_neural(3);
  randomize_parameters(model, 21, 0.5);
  const auto ctx =
      build_direct_context(make_prompt({1, 3}), model.vocab());
  const auto y = make_response({1, model.vocab().eos()});

  const auto ref = snapshot_reference(model);
  const double before = log_prob(*ref, y, ctx);

  // "train" the source: perturb every parameter
  for (double& p : model.mutable_parameters()) p += 0.25;
  const double after = log_prob(*ref, y, ctx);
  CHECK(before == after);
  CHECK(log_prob(model, y, ctx) != before);

  const auto ref2 = snapshot_reference(*ref);
  CHECK(log_prob(*ref2, y, ctx) == before);

  auto tab = micro_tabular(1);
  const auto tabref = snapshot_reference(tab);
  CHECK(tabref->architecture() == "tabular");
}

TEST_CASE("checkpoint round-trip") {
  TempDir tmp;
  const auto path = tmp.path / "model.ckpt";

  SUBCASE("tiny-neural") {
    auto model = small_neural(17);
    randomize_parameters(model, 71, 0.4);
    save_checkpoint(model, path);
    const auto loaded = load_checkpoint(path, model.vocab());
    CHECK(loaded->architecture() == "tiny-neural");
    const auto ctx =
        build_direct_context(make_prompt({0, 2}), model.vocab());
    const auto y = make_response({2, model.vocab().eos()});
    CHECK(log_prob(*loaded, y, ctx) == log_prob(model, y, ctx));
  }

  SUBCASE("tabular") {
    auto model = micro_tabular(3);
    randomize_parameters(model, 72, 1.0);
    save_checkpoint(model, path);
    const auto loaded = load_checkpoint(path, model.vocab());
    const auto ctx =
        build_direct_context(model.prompts()[1], model.vocab());
    const auto y = make_response({1, model.vocab().eos()});
    CHECK(log_prob(*loaded, y, ctx) == log_prob(model, y, ctx));
  }

  SUBCASE("vocabulary hash mismatch fails") {
    auto model = small_neural(18);
    save_checkpoint(model, path);
    CHECK_THROWS_AS(load_checkpoint(path, Vocabulary(5)), CheckpointError);
  }
}
