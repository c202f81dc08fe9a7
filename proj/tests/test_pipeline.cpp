#include <cmath>
#include <set>

#include "doctest.h"
#include "evolve/errors.hpp"
#include "evolve/pipeline.hpp"
#include "test_support.hpp"

using namespace evolve;
using namespace evolve::testing;

namespace {

TabularPolicy micro_policy(int prompt_count = 2) {
  Vocabulary vocab(4);
  auto prompts = enumerate_prompts(vocab, 2);
  prompts.resize(static_cast<std::size_t>(prompt_count));
  return TabularPolicy(vocab, 2, std::move(prompts));
}

// Point-mass tabular expert that always emits sorted(x), both directly
// and under any refinement context.
TabularPolicy expert_policy(int prompt_count, int content = 4, int k = 2,
                            int max_len = 2) {
  Vocabulary vocab(content);
  auto prompts = enumerate_prompts(vocab, k);
  prompts.resize(static_cast<std::size_t>(prompt_count));
  TabularPolicy model(vocab, max_len, prompts);
  RewardOracle oracle(vocab);
  const auto tmpl = refine_template();
  const auto responses = enumerate_responses(vocab, max_len);
  auto spike_path = [&](std::vector<Token> base, const TokenSequence& y) {
    for (std::size_t i = 0; i < y.tokens.size(); ++i) {
      if (static_cast<int>(i) >= max_len) break;  // EOS forced at the cap
      auto row = model.logits_for(base);
      for (auto& v : row) v = -80.0;
      row[vocab.generation_index(y.tokens[i])] = 80.0;
      if (y.tokens[i] == vocab.eos()) break;
      base.push_back(y.tokens[i]);
    }
  };
  for (const auto& x : prompts) {
    const auto target = oracle.target(x);
    spike_path(build_direct_context(x, vocab).tokens, target);
    for (const auto& y : responses) {
      spike_path(build_refinement_context(x, y, tmpl, vocab).tokens, target);
    }
  }
  return model;
}

}  // namespace

TEST_CASE("reward oracle scores the sorting task") {
  Vocabulary vocab(4);
  RewardOracle oracle(vocab);
  const auto x = make_prompt({2, 0});

  CHECK(oracle.score(x, make_response({0, 2, vocab.eos()})) == 1.0);
  CHECK(oracle.score(x, make_response({2, 0, vocab.eos()})) == 0.0);
  CHECK(oracle.score(x, make_response({0, 2, 1, vocab.eos()})) ==
        doctest::Approx(0.75).epsilon(1e-12));
  CHECK(oracle.score(x, make_response({0, vocab.eos()})) ==
        doctest::Approx(0.5).epsilon(1e-12));
  CHECK(oracle.score(x, make_response({vocab.eos()})) == 0.0);
  CHECK(oracle.target(x) == make_response({0, 2, vocab.eos()}));
  CHECK_THROWS_AS(oracle.target(make_prompt({1, 1})), ValidationError);
}

TEST_CASE("score_chain aligns scores and is idempotent") {
  Vocabulary vocab(4);
  RewardOracle oracle(vocab);
  ResponseChain chain(make_prompt({2, 0}),
                      {make_response({0, 2, vocab.eos()}),
                       make_response({2, 0, vocab.eos()})});
  const auto scored = score_chain(oracle, chain);
  REQUIRE(scored.scores.has_value());
  CHECK(*scored.scores == std::vector<double>{1.0, 0.0});
  CHECK(score_chain(oracle, scored) == scored);
}

TEST_CASE("score filter yields extremes with earliest-index ties") {
  Vocabulary vocab(4);
  const auto mk = [&](Token t) { return make_response({t, vocab.eos()}); };
  ResponseChain chain(make_prompt({2, 0}), {mk(0), mk(1), mk(2), mk(3)},
                      std::vector<double>{0.2, 0.9, 0.5, 0.9});
  const auto triple = filter_by_score(chain);
  REQUIRE(triple.has_value());
  CHECK(triple->chosen == mk(1));    // earliest max
  CHECK(triple->rejected == mk(0));  // earliest min

  SUBCASE("all ties drop the chain") {
    ResponseChain tied(make_prompt({2, 0}), {mk(0), mk(1)},
                       std::vector<double>{0.5, 0.5});
    CHECK_FALSE(filter_by_score(tied).has_value());
  }
  SUBCASE("two responses") {
    ResponseChain two(make_prompt({2, 0}), {mk(0), mk(1)},
                      std::vector<double>{0.0, 1.0});
    const auto t = filter_by_score(two);
    REQUIRE(t.has_value());
    CHECK(t->chosen == mk(1));
    CHECK(t->rejected == mk(0));
  }
  SUBCASE("fewer than two responses") {
    ResponseChain one(make_prompt({2, 0}), {mk(0)},
                      std::vector<double>{1.0});
    CHECK_THROWS_AS(filter_by_score(one), InsufficientResponses);
  }
  SUBCASE("unscored chain is rejected") {
    ResponseChain raw(make_prompt({2, 0}), {mk(0), mk(1)});
    CHECK_THROWS_AS(filter_by_score(raw), ValidationError);
  }
}

TEST_CASE("rule filter pairs last against first without scoring") {
  Vocabulary vocab(4);
  const auto mk = [&](std::vector<Token> t) {
    t.push_back(vocab.eos());
    return make_response(std::move(t));
  };
  ResponseChain chain(make_prompt({2, 0}),
                      {mk({2}), mk({0}), mk({1}), mk({0, 2})});
  const auto triple = filter_by_rule(chain);
  REQUIRE(triple.has_value());
  CHECK(triple->chosen == mk({0, 2}));
  CHECK(triple->rejected == mk({2}));

  SUBCASE("identical endpoints drop the chain") {
    ResponseChain same(make_prompt({2, 0}),
                       {mk({0}), mk({1}), mk({2}), mk({0})});
    CHECK_FALSE(filter_by_rule(same).has_value());
  }
  SUBCASE("wrong chain length") {
    ResponseChain three(make_prompt({2, 0}), {mk({0}), mk({1}), mk({2})});
    CHECK_THROWS_AS(filter_by_rule(three), ChainLengthMismatch);
  }
}

TEST_CASE("training is deterministic and inert at zero learning rate") {
  const auto tmpl = refine_template();
  auto model = micro_policy();
  randomize_parameters(model, 51, 0.5);
  const auto ref = snapshot_reference(model);
  const auto& vocab = model.vocab();

  std::vector<PreferenceTriple> data;
  data.emplace_back(model.prompts()[0], make_response({0, 2, vocab.eos()}),
                    make_response({2, vocab.eos()}));
  data.emplace_back(model.prompts()[1], make_response({0, 1, vocab.eos()}),
                    make_response({1, 0, vocab.eos()}));

  LossConfig loss_cfg;
  loss_cfg.beta = 0.2;

  SUBCASE("zero learning rate leaves parameters unchanged") {
    TrainConfig cfg;
    cfg.learning_rate = 0.0;
    cfg.steps = 25;
    cfg.batch_size = 2;
    cfg.optimizer = Optimizer::kSgd;
    cfg.loss = LossKind::kEvolvePt;
    const std::vector<double> before(model.parameters().begin(),
                                     model.parameters().end());
    const auto result = train(model, ref.get(), data, tmpl, loss_cfg, cfg);
    const std::vector<double> after(model.parameters().begin(),
                                    model.parameters().end());
    CHECK(before == after);
    for (double v : result.trajectory) {
      CHECK(v == result.trajectory.front());
    }
  }

  SUBCASE("identical seeds give bit-identical trajectories") {
    TrainConfig cfg;
    cfg.learning_rate = 0.05;
    cfg.steps = 60;
    cfg.batch_size = 1;
    cfg.optimizer = Optimizer::kAdam;
    cfg.seed = 1234;
    cfg.loss = LossKind::kEvolvePt;
    auto m1 = micro_policy();
    auto m2 = micro_policy();
    randomize_parameters(m1, 52, 0.5);
    randomize_parameters(m2, 52, 0.5);
    const auto r1 = train(m1, ref.get(), data, tmpl, loss_cfg, cfg);
    const auto r2 = train(m2, ref.get(), data, tmpl, loss_cfg, cfg);
    CHECK(r1.trajectory == r2.trajectory);
    CHECK(std::vector<double>(m1.parameters().begin(),
                              m1.parameters().end()) ==
          std::vector<double>(m2.parameters().begin(),
                              m2.parameters().end()));
  }

  SUBCASE("empty dataset is rejected") {
    TrainConfig cfg;
    CHECK_THROWS_AS(train(model, ref.get(), {}, tmpl, loss_cfg, cfg),
                    EmptyBatch);
  }

  SUBCASE("non-finite loss raises a divergence error") {
    TrainConfig cfg;
    cfg.learning_rate = 1e12;
    cfg.steps = 500;
    cfg.batch_size = 2;
    cfg.optimizer = Optimizer::kSgd;
    cfg.loss = LossKind::kSr;
    CHECK_THROWS_AS(train(model, ref.get(), data, tmpl, loss_cfg, cfg),
                    DivergenceError);
  }
}

TEST_CASE("prompt splits are disjoint and seeded") {
  Vocabulary vocab(10);
  SplitSizes sizes;
  sizes.sft = 100;
  sizes.offline = 150;
  sizes.iterations = {50, 100};
  sizes.eval = 256;
  const auto splits = make_prompt_splits(vocab, 3, sizes, 7);

  std::set<std::vector<Token>> seen;
  std::size_t total = 0;
  auto absorb = [&](const std::vector<TokenSequence>& part) {
    for (const auto& p : part) {
      seen.insert(p.tokens);
      ++total;
    }
  };
  absorb(splits.sft);
  absorb(splits.offline);
  for (const auto& it : splits.iterations) absorb(it);
  absorb(splits.eval);
  CHECK(seen.size() == total);  // pairwise disjoint
  CHECK(splits.eval.size() == 256);

  const auto again = make_prompt_splits(vocab, 3, sizes, 7);
  CHECK(again.sft == splits.sft);
  CHECK(again.eval == splits.eval);

  SplitSizes too_big;
  too_big.eval = 100000;
  CHECK_THROWS_AS(make_prompt_splits(vocab, 3, too_big, 7), ValidationError);
}

TEST_CASE("curated triples come from scored parallel samples") {
  auto model = micro_policy(4);
  randomize_parameters(model, 53, 1.0);
  RewardOracle oracle(model.vocab());
  const auto triples = synthesize_curated_triples(
      model, oracle, model.prompts(), /*chains_per_prompt=*/2, /*turns=*/4,
      /*temperature=*/1.0, /*seed=*/11);
  CHECK(!triples.empty());
  for (const auto& t : triples) {
    CHECK(oracle.score(t.prompt, t.chosen) >
          oracle.score(t.prompt, t.rejected));
  }
}

TEST_CASE("run_iteration generates, filters, trains") {
  const auto ref_tmpl = refine_template();
  const auto eval_tmpl = evaluate_template();
  auto model = micro_policy(3);
  randomize_parameters(model, 54, 0.8);
  RewardOracle oracle(model.vocab());

  GenerationStrategy strategy;
  strategy.kind = StrategyKind::kChain;
  strategy.turns = 4;
  strategy.temperature = 1.0;
  strategy.seed = 21;

  LossConfig loss_cfg;
  loss_cfg.beta = 0.2;
  TrainConfig train_cfg;
  train_cfg.learning_rate = 0.05;
  train_cfg.steps = 40;
  train_cfg.batch_size = 4;
  train_cfg.optimizer = Optimizer::kAdam;
  train_cfg.seed = 3;

  const std::vector<TokenSequence> prompts(model.prompts().begin(),
                                           model.prompts().end());

  SUBCASE("score mode consults the oracle, rule mode does not") {
    oracle.reset_call_count();
    auto m1 = model.clone();
    const auto outcome1 =
        run_iteration(*m1, oracle, prompts, {}, strategy, FilterMode::kScore,
                      ref_tmpl, eval_tmpl, loss_cfg, train_cfg);
    CHECK(oracle.call_count() > 0);
    CHECK(!outcome1.triples.empty());
    for (const auto& chain : outcome1.chains) {
      CHECK(chain.scores.has_value());
    }

    oracle.reset_call_count();
    auto m2 = model.clone();
    const auto outcome2 =
        run_iteration(*m2, oracle, prompts, {}, strategy, FilterMode::kRule,
                      ref_tmpl, eval_tmpl, loss_cfg, train_cfg);
    CHECK(oracle.call_count() == 0);  // rule filtering never scores
    CHECK(!outcome2.triples.empty());
    for (const auto& t : outcome2.triples) {
      // chosen is the final turn, rejected the first
      bool found = false;
      for (const auto& chain : outcome2.chains) {
        if (chain.prompt == t.prompt &&
            chain.responses.back() == t.chosen &&
            chain.responses.front() == t.rejected) {
          found = true;
        }
      }
      CHECK(found);
    }
  }

  SUBCASE("disjointness against used prompts is enforced") {
    std::set<std::vector<Token>> used;
    used.insert(prompts[0].tokens);
    auto m = model.clone();
    CHECK_THROWS_AS(
        run_iteration(*m, oracle, prompts, used, strategy, FilterMode::kScore,
                      ref_tmpl, eval_tmpl, loss_cfg, train_cfg),
        ValidationError);
  }

  SUBCASE("a point-mass policy yields no informative pairs") {
    auto expert = expert_policy(3);
    GenerationStrategy greedy_ish = strategy;
    greedy_ish.temperature = 0.05;
    CHECK_THROWS_AS(
        run_iteration(expert, oracle, prompts, {}, greedy_ish,
                      FilterMode::kScore, ref_tmpl, eval_tmpl, loss_cfg,
                      train_cfg),
        EmptyFilteredDataset);
  }

  SUBCASE("provenance: chains regenerate from (params, seed, prompt)") {
    auto m = model.clone();
    const auto before = snapshot_reference(*m);
    const auto outcome =
        run_iteration(*m, oracle, prompts, {}, strategy, FilterMode::kScore,
                      ref_tmpl, eval_tmpl, loss_cfg, train_cfg);
    for (std::size_t i = 0; i < prompts.size(); ++i) {
      GenerationStrategy per_prompt = strategy;
      per_prompt.seed = derive_seed(strategy.seed, 0x9e37, i);
      const auto replay = chain_of_self_refinement(
          *before, prompts[i], strategy.turns, ref_tmpl,
          per_prompt.temperature, per_prompt.seed);
      CHECK(replay.responses == outcome.chains[i].responses);
    }
  }
}

TEST_CASE("evaluation metrics") {
  const auto ref_tmpl = refine_template();
  RewardOracle oracle(Vocabulary(4));
  const std::uint64_t seeds[] = {1, 2, 3};

  SUBCASE("perfect policy scores 1.0 at every turn") {
    auto expert = expert_policy(4);
    const std::vector<TokenSequence> prompts(expert.prompts().begin(),
                                             expert.prompts().end());
    const auto metrics = evaluate_model(expert, prompts, oracle, 4, 0.7,
                                        seeds, ref_tmpl);
    for (double m : metrics.per_turn_mean) {
      CHECK(m == doctest::Approx(1.0).epsilon(1e-12));
    }
    CHECK(metrics.direct_score == 1.0);
    CHECK(metrics.sr_score == 1.0);
    CHECK(metrics.sr_gain == 0.0);
  }

  SUBCASE("evaluation is deterministic") {
    auto model = micro_policy(3);
    randomize_parameters(model, 55, 1.0);
    const std::vector<TokenSequence> prompts(model.prompts().begin(),
                                             model.prompts().end());
    const auto a = evaluate_model(model, prompts, oracle, 4, 0.7, seeds,
                                  ref_tmpl);
    const auto b = evaluate_model(model, prompts, oracle, 4, 0.7, seeds,
                                  ref_tmpl);
    CHECK(a.per_turn_mean == b.per_turn_mean);
    CHECK(a.per_turn_std == b.per_turn_std);
  }

  SUBCASE("a model against itself has win rate exactly one half") {
    auto model = micro_policy(3);
    randomize_parameters(model, 56, 1.0);
    const std::vector<TokenSequence> prompts(model.prompts().begin(),
                                             model.prompts().end());
    CHECK(pairwise_win_rate(model, model, prompts, oracle, 0.7, 9) == 0.5);
  }

  SUBCASE("the expert beats a uniform policy") {
    auto expert = expert_policy(4);
    UniformPolicy uniform(expert.vocab(), 2);
    const std::vector<TokenSequence> prompts(expert.prompts().begin(),
                                             expert.prompts().end());
    CHECK(pairwise_win_rate(expert, uniform, prompts, oracle, 0.7, 9) > 0.5);
  }
}
