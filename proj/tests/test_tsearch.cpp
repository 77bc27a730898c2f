#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "checks.hpp"
#include "fixtures.hpp"
#include "oracles.hpp"
#include "sage/tsearch.hpp"

using namespace sage;

namespace {

constexpr TokenId A = 3, B = 4, E = oracle::kThinkClose;

// vocab {<think>, E, delim, a, b}; same distribution everywhere
SyntheticPolicySpec stationary(double pa, double pb, double pe) {
  return fx::spec(5, {0.0, pe, 0.0, pa, pb});
}

SearchConfig cfg(std::size_t m, std::size_t r, std::size_t h, std::size_t t_max = 10) {
  SearchConfig c;
  c.m = m;
  c.r = r;
  c.h = h;
  c.t_max = t_max;
  c.answer_budget = 3;
  return c;
}

}  // namespace

TEST(ToleranceRank, FromRatio) {
  EXPECT_EQ(tolerance_rank(1.0, 4), 8u);
  EXPECT_EQ(tolerance_rank(0.75, 4), 6u);
  EXPECT_EQ(tolerance_rank(0.5, 4), 4u);
  EXPECT_EQ(tolerance_rank(0.5, 1), 1u);
  EXPECT_THROW(tolerance_rank(0.3, 4), Error);
  EXPECT_THROW(tolerance_rank(0.0, 4), Error);
  EXPECT_THROW(tolerance_rank(1.5, 4), Error);
}

TEST(SearchConfig, Invariants) {
  SyntheticPolicy p(stationary(0.3, 0.1, 0.6));
  EXPECT_THROW(tsearch(p, fx::query(), cfg(2, 3, 2)), Error);
  EXPECT_THROW(tsearch(p, fx::query(), cfg(2, 1, 5)), Error);
  EXPECT_THROW(tsearch(p, fx::query(), cfg(2, 0, 2)), Error);
  EXPECT_NO_THROW(tsearch(p, fx::query(), cfg(0, 1, 0)));
}

TEST(TSearch, EndThinkOnTopAcceptedAtStepOne) {
  SyntheticPolicy p(stationary(0.3, 0.1, 0.6));
  const auto res = tsearch(p, fx::query(), cfg(1, 1, 2));
  ASSERT_EQ(res.completions.size(), 1u);
  EXPECT_EQ(res.completions[0].chain.tokens(), std::vector<TokenId>{E});
  EXPECT_FALSE(res.completions[0].forced);
  ASSERT_EQ(res.trace.events.size(), 1u);
  EXPECT_EQ(res.trace.events[0].kind, EventKind::Accepted);
  EXPECT_EQ(res.trace.events[0].step, 1u);
  EXPECT_EQ(res.trace.events[0].rank, 1u);
}

TEST(TSearch, LowRankedEndThinkForcedAtTmax) {
  // E ranked 3rd of 3: never inside the 2-token window, so never accepted
  SyntheticPolicy p(stationary(0.6, 0.35, 0.05));
  const auto res = tsearch(p, fx::query(), cfg(1, 1, 1, 5));
  ASSERT_EQ(res.completions.size(), 1u);
  const auto& c = res.completions[0];
  EXPECT_TRUE(c.forced);
  EXPECT_EQ(c.chain.tokens(), (std::vector<TokenId>{A, A, A, A, A, E}));
  EXPECT_DOUBLE_EQ(c.chain.logprobs().back(), std::log(0.05));
  EXPECT_EQ(res.trace.eot.size(), 0u);
  const auto ref = oracle::tsearch(stationary(0.6, 0.35, 0.05), 1, 1, 1, 5, true, 3);
  EXPECT_EQ(ref.completions[0].chain.tokens, c.chain.tokens());
  EXPECT_EQ(res.trace.events.back().kind, EventKind::Forced);
}

TEST(TSearch, RejectedEndThinkKeepsSiblings) {
  // E is rank 2 in the window, h = 1: discarded, a and b still compete
  SyntheticPolicy p(stationary(0.5, 0.1, 0.4));
  const auto res = tsearch(p, fx::query(), cfg(1, 1, 1, 2));
  ASSERT_EQ(res.trace.steps.size(), 2u);
  EXPECT_EQ(res.trace.steps[0].pool_size, 1u);
  EXPECT_EQ(res.trace.steps[0].beam[0].tokens, std::vector<TokenId>{A});
  std::size_t rejected = 0;
  for (const auto& e : res.trace.events) rejected += e.kind == EventKind::Rejected;
  EXPECT_EQ(rejected, 2u);
  EXPECT_TRUE(res.completions[0].forced);
}

TEST(TSearch, ForcedCloseWithoutEndThinkSupportUsesZero) {
  // E has zero probability anywhere
  SyntheticPolicy p(fx::spec(5, {0.0, 0.0, 0.0, 0.5, 0.5}));
  const auto res = tsearch(p, fx::query(), cfg(2, 2, 4, 3));
  ASSERT_EQ(res.completions.size(), 2u);
  for (const auto& c : res.completions) {
    EXPECT_TRUE(c.forced);
    EXPECT_EQ(c.chain.logprobs().back(), 0.0);
    EXPECT_EQ(c.chain.size(), 4u);
  }
}

TEST(TSearch, SurplusAcceptancesDropped) {
  // every beam sees E at rank 1 on step 2; only r = 1 is kept, best phi first
  auto s = fx::spec(5, {0.0, 0.0, 0.0, 0.6, 0.4},
                    {{{A}, {0.0, 0.9, 0.0, 0.05, 0.05}}, {{B}, {0.0, 0.9, 0.0, 0.05, 0.05}}});
  SyntheticPolicy p(s);
  const auto res = tsearch(p, fx::query(), cfg(2, 1, 4));
  ASSERT_EQ(res.completions.size(), 1u);
  EXPECT_EQ(res.completions[0].chain.tokens(), (std::vector<TokenId>{A, E}));
  std::size_t acc = 0, surplus = 0;
  for (const auto& e : res.trace.events) {
    acc += e.kind == EventKind::Accepted;
    surplus += e.kind == EventKind::Surplus;
  }
  EXPECT_EQ(acc, 1u);
  EXPECT_EQ(surplus, 1u);
}

TEST(TSearch, AcceptedLeavesBeam) {
  // step 1: a, b, E in the window of width 4 (m = 2); E accepted (r = 2),
  // the beam keeps the non-terminated children only
  auto s = fx::spec(5, {0.0, 0.5, 0.0, 0.3, 0.2});
  SyntheticPolicy p(s);
  const auto res = tsearch(p, fx::query(), cfg(2, 2, 4, 3));
  EXPECT_EQ(res.trace.steps[0].beam.size(), 2u);
  ASSERT_EQ(res.completions.size(), 2u);
  EXPECT_EQ(res.completions[0].chain.tokens(), std::vector<TokenId>{E});
  EXPECT_EQ(res.completions[1].chain.tokens(), (std::vector<TokenId>{A, E}));
}

TEST(TSearch, OracleEquivalence) {
  std::mt19937_64 g(1234);
  for (int i = 0; i < 60; ++i) {
    const auto spec = oracle::random_policy(g, 2 + g() % 2);
    const std::size_t m = 1 + g() % 3;
    const std::size_t h = 1 + g() % (2 * m);
    const std::size_t r = 1 + g() % m;
    const std::size_t t_max = 1 + g() % 6;
    for (bool by_phi : {true, false}) {
      const auto diff = checks::compare_tsearch(spec, m, r, h, t_max, by_phi);
      EXPECT_EQ(diff, "") << "policy " << i << " m=" << m << " r=" << r << " h=" << h << " phi=" << by_phi;
    }
  }
}

TEST(TSearch, ZeroWidthIsGreedy) {
  std::mt19937_64 g(77);
  for (int i = 0; i < 50; ++i) {
    const auto spec = oracle::random_policy(g, 2);
    SyntheticPolicy p(spec);
    const std::size_t t_max = 1 + g() % 8;
    const auto ts = tsearch(p, checks::query_for(spec), cfg(0, 1, 0, t_max));
    const auto gd = greedy_decode(p, checks::query_for(spec), t_max, 3);
    ASSERT_EQ(ts.completions.size(), 1u);
    EXPECT_EQ(ts.completions[0].chain.tokens(), gd.chain.tokens());
    EXPECT_EQ(ts.completions[0].answer, gd.answer);
    EXPECT_EQ(ts.completions[0].forced, gd.forced);
    EXPECT_EQ(ts.trace.strategy, "greedy");
  }
}

TEST(TSearch, TrMonotone) {
  std::mt19937_64 g(78);
  for (int i = 0; i < 30; ++i) {
    const auto spec = oracle::random_policy(g, 2);
    SyntheticPolicy p(spec);
    const std::size_t m = 1 + g() % 3;
    std::size_t prev = SIZE_MAX;
    for (std::size_t h = 1; h <= 2 * m; ++h) {
      const auto res = tsearch(p, checks::query_for(spec), cfg(m, 1, h, 6));
      const std::size_t stop = res.completions[0].forced ? 7 : res.trace.steps.size();
      EXPECT_LE(stop, prev) << "policy " << i << " h=" << h;
      prev = stop;
    }
  }
}

TEST(TSearch, PhiAndLastTokenDiverge) {
  // Phi keeps [a, a] (steady), the last-token key keeps [b, a] (strong finish)
  auto s = fx::spec(5, {0.0, 0.0, 0.0, 0.8, 0.2},
                    {{{A}, {0.0, 0.0, 0.0, 0.55, 0.45}}, {{B}, {0.0, 0.0, 0.0, 0.95, 0.05}}});
  SyntheticPolicy p(s);
  auto c = cfg(2, 1, 1, 2);
  const auto phi = tsearch(p, fx::query(), c);
  c.score_key = ScoreKey::LastTokenLogprob;
  const auto tok = tsearch(p, fx::query(), c);
  EXPECT_EQ(phi.trace.steps[0].beam.size(), tok.trace.steps[0].beam.size());
  EXPECT_EQ(phi.trace.steps[1].beam[0].tokens, (std::vector<TokenId>{A, A}));
  EXPECT_EQ(phi.trace.steps[1].beam[1].tokens, (std::vector<TokenId>{A, B}));
  EXPECT_EQ(tok.trace.steps[1].beam[0].tokens, (std::vector<TokenId>{B, A}));
  EXPECT_EQ(tok.trace.steps[1].beam[1].tokens, (std::vector<TokenId>{A, A}));
}

TEST(TSearch, WindowBeyondCapability) {
  // a remote-like limit is checked before any query
  class Limited final : public Policy {
   public:
    explicit Limited(SyntheticPolicy inner) : inner_(std::move(inner)) {}
    const Vocabulary& vocab() const override { return inner_.vocab(); }
    const SpecialTokens& special() const override { return inner_.special(); }
    std::size_t top_logprobs_limit() const override { return 3; }
    TokenDistribution next_token_dist(std::span<const TokenId> c, std::size_t k) const override {
      return inner_.next_token_dist(c, k);
    }
    std::vector<StepProposal> sample_steps(std::span<const TokenId> c, const StepRequest& r) const override {
      return inner_.sample_steps(c, r);
    }

   private:
    SyntheticPolicy inner_;
  };
  Limited p(SyntheticPolicy(stationary(0.3, 0.1, 0.6)));
  try {
    tsearch(p, fx::query(), cfg(2, 1, 2));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::RemoteCapabilityExceeded);
  }
}

TEST(Greedy, DeterministicPath) {
  // a -> b -> E with mass 1, then answer "a" and eos (id 5)
  auto s = fx::spec(6, fx::onehot(6, A),
                    {{{A}, fx::onehot(6, B)}, {{A, B}, fx::onehot(6, E)}, {{A, B, E}, fx::onehot(6, A)}, {{A, B, E, A}, fx::onehot(6, 5)}});
  s.special.eos = 5;
  SyntheticPolicy p(s);
  const auto c = greedy_decode(p, fx::query(), 100, 10);
  EXPECT_EQ(c.chain.tokens(), (std::vector<TokenId>{A, B, E}));
  EXPECT_FALSE(c.forced);
  EXPECT_EQ(c.answer, std::vector<TokenId>{A});
}

TEST(Greedy, NeverArgmaxEndThinkForced) {
  SyntheticPolicy p(stationary(0.5, 0.3, 0.2));
  const auto c = greedy_decode(p, fx::query(), 7, 0);
  EXPECT_EQ(c.chain.size(), 8u);
  EXPECT_TRUE(c.forced);
  EXPECT_TRUE(c.chain.terminated());
  EXPECT_TRUE(c.answer.empty());
}

TEST(GreedyAnswer, BudgetAndPreconditions) {
  SyntheticPolicy p(stationary(0.5, 0.3, 0.2));
  const auto prompt = fx::query().prompt(p.special());
  const auto closed = CandidateSequence::empty(E).extend(E, -1.0);
  EXPECT_TRUE(greedy_answer(p, prompt, closed, 0).empty());
  EXPECT_EQ(greedy_answer(p, prompt, closed, 4), (std::vector<TokenId>{A, A, A, A}));
  EXPECT_THROW(greedy_answer(p, prompt, CandidateSequence::empty(E).extend(A, -1.0), 4), Error);
  EXPECT_EQ(SearchConfig{}.answer_budget, 100u);
}

TEST(BeamSearch, WidthOneIsGreedy) {
  std::mt19937_64 g(79);
  for (int i = 0; i < 50; ++i) {
    const auto spec = oracle::random_policy(g, 2);
    SyntheticPolicy p(spec);
    const std::size_t t_max = 1 + g() % 8;
    const auto bs = vanilla_beam_search(p, checks::query_for(spec), 1, t_max, 3);
    const auto gd = greedy_decode(p, checks::query_for(spec), t_max, 3);
    ASSERT_EQ(bs.completions.size(), 1u);
    EXPECT_EQ(bs.completions[0].chain.tokens(), gd.chain.tokens()) << "policy " << i;
  }
}

TEST(BeamSearch, TerminatedBranchPrunedLater) {
  // step 1: a .45, E .35, b .20 -> beam {a, E}
  // step 2: [a,a] .9 keeps E alive over [a,b]
  // step 3: [a,a,a] and [a,a,E] both beat the carried [E]
  auto s = fx::spec(5, {0.0, 0.35, 0.0, 0.45, 0.20},
                    {{{A}, {0.0, 0.0, 0.0, 0.9, 0.1}}, {{A, A}, {0.0, 0.5, 0.0, 0.5, 0.0}}});
  SyntheticPolicy p(s);
  const auto beam = vanilla_beam_search(p, fx::query(), 2, 3, 2);
  bool pruned_e = false;
  for (const auto& e : beam.trace.events)
    if (e.kind == EventKind::PrunedTerminated && e.tokens == std::vector<TokenId>{E}) {
      pruned_e = true;
      EXPECT_EQ(e.step, 3u);
    }
  EXPECT_TRUE(pruned_e);
  for (const auto& c : beam.completions) EXPECT_NE(c.chain.tokens(), std::vector<TokenId>{E});

  const auto ts = tsearch(p, fx::query(), cfg(2, 1, 4, 3));
  ASSERT_EQ(ts.completions.size(), 1u);
  EXPECT_EQ(ts.completions[0].chain.tokens(), std::vector<TokenId>{E});
  EXPECT_EQ(ts.trace.events[0].kind, EventKind::Accepted);
}

TEST(BeamSearch, ReturnsFinalBeamBestFirst) {
  std::mt19937_64 g(80);
  for (int i = 0; i < 30; ++i) {
    const auto spec = oracle::random_policy(g, 2);
    SyntheticPolicy p(spec);
    const std::size_t m = 1 + g() % 3;
    const auto res = vanilla_beam_search(p, checks::query_for(spec), m, 5, 2);
    EXPECT_LE(res.completions.size(), m);
    EXPECT_GE(res.completions.size(), 1u);
    for (std::size_t k = 1; k < res.completions.size(); ++k)
      EXPECT_GE(res.completions[k - 1].phi, res.completions[k].phi);
    for (const auto& c : res.completions) EXPECT_TRUE(c.chain.terminated());
    for (const auto& st : res.trace.steps) EXPECT_LE(st.beam.size(), m);
  }
}

TEST(BeamSearch, DeterministicPolicySharesPath) {
  // single mass-1 path: all surviving beams are that path
  auto s = fx::spec(5, fx::onehot(5, A), {{{A, A}, fx::onehot(5, E)}});
  SyntheticPolicy p(s);
  const auto res = vanilla_beam_search(p, fx::query(), 3, 10, 0);
  ASSERT_EQ(res.completions.size(), 1u);
  EXPECT_EQ(res.completions[0].chain.tokens(), (std::vector<TokenId>{A, A, E}));
}

TEST(Trace, JsonCarriesEvents) {
  SyntheticPolicy p(stationary(0.5, 0.1, 0.4));
  const auto res = tsearch(p, fx::query(), cfg(1, 1, 2, 3));
  const auto j = to_json(res.trace);
  EXPECT_EQ(j["strategy"], "tsearch_phi");
  EXPECT_EQ(j["pool_mode"], "per_parent_window");
  EXPECT_EQ(eot_from_json(j), res.trace.eot);
}
