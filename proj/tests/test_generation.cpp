#include <cmath>
#include <map>

#include "doctest.h"
#include "evolve/errors.hpp"
#include "evolve/generation.hpp"
#include "evolve/reward.hpp"
#include "test_support.hpp"

using namespace evolve;
using namespace evolve::testing;

namespace {

// Tabular micro policy covering direct + refinement + evaluation
// contexts so every strategy except deep few-shot runs on it.
TabularPolicy micro_policy(int prompt_count = 2) {
  Vocabulary vocab(4);
  auto prompts = enumerate_prompts(vocab, 2);
  prompts.resize(static_cast<std::size_t>(prompt_count));
  TabularScope scope;
  scope.evaluation = true;
  return TabularPolicy(vocab, 2, std::move(prompts), scope);
}

TinyNeuralPolicy small_neural(std::uint64_t seed) {
  Vocabulary vocab(4);
  TinyNeuralPolicy::Dims dims{4, 12, 10};
  return TinyNeuralPolicy(vocab, 2, dims, seed);
}

}  // namespace

TEST_CASE("parallel sampling is n independent seeded draws") {
  auto model = small_neural(1);
  randomize_parameters(model, 2, 0.5);
  const auto x = make_prompt({2, 0});

  const auto chain = parallel_sampling(model, x, 4, 0.7, 99);
  CHECK(chain.responses.size() == 4);
  CHECK(chain.prompt == x);

  // n = 1 is exactly one direct sample
  const auto single = parallel_sampling(model, x, 1, 0.7, 99);
  const auto direct =
      sample(model, build_direct_context(x, model.vocab()), 0.7,
             derive_seed(99, 1, 1));
  CHECK(single.responses[0] == direct);

  // determinism
  CHECK(parallel_sampling(model, x, 4, 0.7, 99) == chain);
  CHECK_THROWS_AS(parallel_sampling(model, x, 0, 0.7, 99), ValidationError);
}

TEST_CASE("parallel draws match the enumerated distribution") {
  auto model = micro_policy(1);
  randomize_parameters(model, 47, 1.2);
  const auto x = model.prompts()[0];
  const auto dist = enumerate_distribution(
      model, build_direct_context(x, model.vocab()));

  std::map<std::vector<Token>, int> counts;
  const int chains = 25000;  // 4 responses each -> 1e5 draws
  for (int i = 0; i < chains; ++i) {
    const auto chain = parallel_sampling(model, x, 4, 1.0, 1000 + i);
    for (const auto& y : chain.responses) counts[y.tokens]++;
  }
  const double n = 4.0 * chains;
  for (const auto& [resp, p] : dist) {
    const double expect = p * n;
    const double sigma = std::sqrt(n * p * (1.0 - p));
    const double got = counts.count(resp) ? counts.at(resp) : 0;
    CHECK(std::fabs(got - expect) <= 3.0 * sigma + 1.0);
  }
}

TEST_CASE("chain of self-refinement conditions on the previous turn") {
  auto model = small_neural(5);
  randomize_parameters(model, 6, 0.5);
  const auto x = make_prompt({1, 3});
  const auto tmpl = refine_template();

  const auto chain = chain_of_self_refinement(model, x, 4, tmpl, 0.7, 31);
  CHECK(chain.responses.size() == 4);

  // replay: each turn is reproducible from (params, x, seed, y_{t-1})
  const auto y1 = sample(model, build_direct_context(x, model.vocab()), 0.7,
                         derive_seed(31, 1, 1));
  CHECK(chain.responses[0] == y1);
  for (int t = 2; t <= 4; ++t) {
    const auto ctx = build_refinement_context(x, chain.responses[t - 2], tmpl,
                                              model.vocab());
    CHECK(chain.responses[t - 1] ==
          sample(model, ctx, 0.7, derive_seed(31, 1, t)));
  }

  // n = 1 never builds a refinement context
  const auto direct_only = chain_of_self_refinement(model, x, 1, tmpl, 0.7, 31);
  CHECK(direct_only.responses.size() == 1);
  CHECK(direct_only.responses[0] == y1);
}

TEST_CASE("greedy fixed point keeps the chain constant") {
  auto model = micro_policy(1);
  const auto& vocab = model.vocab();
  const auto x = model.prompts()[0];
  const auto tmpl = refine_template();

  // Spike the direct rows so greedy(x) = y*, and the refinement rows of
  // y* so greedy(x, y*) = y* as well.
  const auto y_star = make_response({0, 2, vocab.eos()});
  auto spike_path = [&](std::vector<Token> base) {
    for (std::size_t i = 0; i + 1 < y_star.tokens.size(); ++i) {
      auto row = model.logits_for(base);
      for (auto& v : row) v = -80.0;
      row[vocab.generation_index(y_star.tokens[i])] = 80.0;
      base.push_back(y_star.tokens[i]);
    }
  };
  spike_path(build_direct_context(x, vocab).tokens);
  spike_path(build_refinement_context(x, y_star, tmpl, vocab).tokens);

  CHECK(greedy_decode(model, build_direct_context(x, vocab)) == y_star);
  const auto chain = chain_of_self_refinement(model, x, 4, tmpl, 0.05, 7);
  for (const auto& y : chain.responses) CHECK(y == y_star);
}

TEST_CASE("few-shot coincides with the chain for the first two turns") {
  auto model = small_neural(8);
  randomize_parameters(model, 9, 0.5);
  const auto x = make_prompt({0, 2});
  const auto tmpl = refine_template();

  const auto chain = chain_of_self_refinement(model, x, 2, tmpl, 0.7, 55);
  const auto fewshot = few_shot_self_refinement(model, x, 2, tmpl, 0.7, 55);
  CHECK_FALSE(fewshot.truncated);
  CHECK(fewshot.chain.responses == chain.responses);

  // the turn-2 contexts literally coincide
  const std::vector<TokenSequence> history = {chain.responses[0]};
  CHECK(build_fewshot_context(x, history, tmpl, model.vocab()) ==
        build_refinement_context(x, chain.responses[0], tmpl, model.vocab()));
}

TEST_CASE("few-shot truncates when the budget runs out") {
  auto model = small_neural(10);
  randomize_parameters(model, 11, 0.5);
  const auto x = make_prompt({0, 2});
  // Budget fits BOS.x.SEP.y1.REF but not two prior responses.
  const auto tmpl = refine_template(/*max_context_len=*/8);

  const auto result = few_shot_self_refinement(model, x, 6, tmpl, 0.7, 70);
  CHECK(result.truncated);
  CHECK(result.chain.responses.size() >= 1);
  CHECK(result.chain.responses.size() < 6);
}

TEST_CASE("few-shot context depends on the whole history") {
  Vocabulary vocab(4);
  const auto tmpl = refine_template();
  const auto x = make_prompt({2, 0});
  const auto a = make_response({0, vocab.eos()});
  const auto b = make_response({1, vocab.eos()});
  const auto c = make_response({2, vocab.eos()});

  const std::vector<TokenSequence> h1 = {a, c};
  const std::vector<TokenSequence> h2 = {b, c};
  // same final response, different history -> different contexts
  CHECK(build_fewshot_context(x, h1, tmpl, vocab) !=
        build_fewshot_context(x, h2, tmpl, vocab));
  // chain context ignores everything but the last response
  CHECK(build_refinement_context(x, c, tmpl, vocab) ==
        build_refinement_context(x, c, tmpl, vocab));
}

TEST_CASE("self-evaluation strategy wiring") {
  auto model = micro_policy(1);
  randomize_parameters(model, 13, 1.0);
  const auto x = model.prompts()[0];
  const auto ref_tmpl = refine_template();
  const auto eval_tmpl = evaluate_template();

  SUBCASE("n = 1 generates no evaluation") {
    const auto chain = self_refinement_with_self_evaluation(
        model, x, 1, ref_tmpl, eval_tmpl, 0.7, 17);
    CHECK(chain.responses.size() == 1);
    CHECK_FALSE(chain.evaluations.has_value());
  }

  SUBCASE("n turns carry n-1 evaluations, reproducibly") {
    // The micro tabular policy lacks (x, y, e)-refinement rows, so use
    // the neural model for multi-turn self-eval.
    auto net = small_neural(14);
    randomize_parameters(net, 15, 0.5);
    const auto px = make_prompt({1, 2});
    const auto chain = self_refinement_with_self_evaluation(
        net, px, 4, ref_tmpl, eval_tmpl, 0.7, 18);
    CHECK(chain.responses.size() == 4);
    REQUIRE(chain.evaluations.has_value());
    CHECK(chain.evaluations->size() == 3);
    for (const auto& e : *chain.evaluations) {
      CHECK(e.kind == SequenceKind::kEvaluation);
    }
    const auto again = self_refinement_with_self_evaluation(
        net, px, 4, ref_tmpl, eval_tmpl, 0.7, 18);
    CHECK(again == chain);

    // replay the information flow: e_t from (x, y_t), y_{t+1} from
    // (x, y_t, e_t)
    const auto e1 = sample(net,
                           build_evaluation_context(px, chain.responses[0],
                                                    eval_tmpl, net.vocab()),
                           0.7, derive_seed(18, 2, 1));
    CHECK(e1.tokens == (*chain.evaluations)[0].tokens);
    const auto y2 = sample(
        net,
        build_refine_with_eval_context(px, chain.responses[0],
                                       (*chain.evaluations)[0], ref_tmpl,
                                       net.vocab()),
        0.7, derive_seed(18, 1, 2));
    CHECK(y2 == chain.responses[1]);
  }
}

TEST_CASE("strategies are pure functions of (params, x, config, seed)") {
  auto model = small_neural(20);
  randomize_parameters(model, 21, 0.5);
  const auto x = make_prompt({3, 1});
  const auto ref_tmpl = refine_template();
  const auto eval_tmpl = evaluate_template();

  for (auto kind : {StrategyKind::kParallel, StrategyKind::kChain,
                    StrategyKind::kFewShot, StrategyKind::kSelfEval}) {
    GenerationStrategy strategy;
    strategy.kind = kind;
    strategy.turns = 3;
    strategy.temperature = 0.7;
    strategy.seed = 404;
    const auto a = run_strategy(model, x, strategy, ref_tmpl, eval_tmpl);
    const auto b = run_strategy(model, x, strategy, ref_tmpl, eval_tmpl);
    CHECK(a.chain == b.chain);
    CHECK(a.truncated == b.truncated);
  }
}

TEST_CASE("parallel per-turn scores are stationary on the micro task") {
  auto model = micro_policy(2);
  randomize_parameters(model, 23, 1.0);
  RewardOracle oracle(model.vocab());
  const int turns = 4;
  const int reps = 2000;

  std::vector<double> turn_mean(turns, 0.0);
  for (int i = 0; i < reps; ++i) {
    for (const auto& x : model.prompts()) {
      const auto chain = parallel_sampling(model, x, turns, 1.0,
                                           derive_seed(5, 3, i));
      for (int t = 0; t < turns; ++t) {
        turn_mean[t] += oracle.score(x, chain.responses[t]);
      }
    }
  }
  for (auto& m : turn_mean) m /= 2.0 * reps;
  for (int t = 1; t < turns; ++t) {
    CHECK(std::fabs(turn_mean[t] - turn_mean[0]) < 0.02);
  }
}
