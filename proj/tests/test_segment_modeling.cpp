#include <gtest/gtest.h>

#include "test_support.hpp"

using namespace asmloc;
using namespace asmloc::testing;

namespace {

IntraSegmentParams intra_params(std::mt19937_64& rng, std::size_t E) {
  return {random_tensor(rng, {E, E}, true, 0.5), random_tensor(rng, {E, E}, true, 0.5),
          random_tensor(rng, {E, E}, true, 0.5), random_tensor(rng, {E, E}, true, 0.5),
          Tensor::full({E}, 1.0, true),          Tensor::zeros({E}, true)};
}

InterSegmentParams inter_params(std::mt19937_64& rng, std::size_t E) {
  return {random_tensor(rng, {E, E}, true, 0.5), random_tensor(rng, {E, E}, true, 0.5),
          random_tensor(rng, {E, E}, true, 0.5), random_tensor(rng, {E, E}, true, 0.5)};
}

}  // namespace

TEST(SamplingPlan, NoProposalsIsIdentity) {
  const auto plan = build_sampling_plan({}, 7, 6.0);
  for (std::size_t i = 0; i < 7; ++i) {
    EXPECT_EQ(plan.weights[i], 1.0);
    EXPECT_NEAR(plan.positions[i], static_cast<double>(i), 1e-12);
  }
}

TEST(SamplingPlan, HandTracedSixSnippetExample) {
  const auto plan = build_sampling_plan({{2, 5, 1}}, 6, 6.0);
  EXPECT_EQ(plan.weights, (std::vector<double>{1, 1, 2, 2, 2, 1}));
  EXPECT_EQ(plan.cumulative, (std::vector<double>{1, 2, 4, 6, 8, 9}));
  // Quantile masses 0.75, 2.25, ..., 8.25 inverted through the piecewise-linear CDF.
  const std::vector<double> expected{0.25, 1.625, 2.375, 3.125, 3.875, 4.75};
  for (std::size_t i = 0; i < 6; ++i) EXPECT_NEAR(plan.positions[i], expected[i], 1e-12);
  int inside = 0;
  for (double x : plan.positions) inside += x >= 1.5 && x < 4.5;
  EXPECT_EQ(inside, 4);
  EXPECT_EQ(plan.remapped[0], (ActionProposal{1, 5, 1}));
}

TEST(SamplingPlan, LongProposalLeavesWeightsUntouched) {
  const auto plan = build_sampling_plan({{2, 12, 1}}, 20, 6.0);
  for (double w : plan.weights) EXPECT_EQ(w, 1.0);
}

TEST(SamplingPlan, OverlappingShortProposalsTakeTheMaximum) {
  const auto plan = build_sampling_plan({{2, 5, 1}, {4, 6, 2}}, 8, 6.0);
  EXPECT_EQ(plan.weights, (std::vector<double>{1, 1, 2, 2, 3, 3, 1, 1}));
}

TEST(SamplingPlan, ShorterProposalsScaleUpMore) {
  for (int d1 = 1; d1 <= 6; ++d1)
    for (int d2 = d1 + 1; d2 <= 6; ++d2) {
      const auto a = build_sampling_plan({{0, d1, 1}}, 10, 6.0);
      const auto b = build_sampling_plan({{0, d2, 1}}, 10, 6.0);
      EXPECT_GT(a.weights[0], b.weights[0]);
    }
}

TEST(SamplingPlan, InvariantsOnRandomProposals) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    const int T = std::uniform_int_distribution<int>(5, 60)(rng);
    std::vector<ActionProposal> props;
    const int n = std::uniform_int_distribution<int>(0, 5)(rng);
    for (int i = 0; i < n; ++i) {
      const int s = std::uniform_int_distribution<int>(0, T - 1)(rng);
      const int e = std::uniform_int_distribution<int>(s + 1, std::min(T, s + 12))(rng);
      props.push_back({s, e, 1});
    }
    const auto plan = build_sampling_plan(props, T, 6.0);
    ASSERT_EQ(plan.positions.size(), static_cast<std::size_t>(T));
    for (std::size_t i = 1; i < plan.positions.size(); ++i) EXPECT_LE(plan.positions[i - 1], plan.positions[i]);
    for (double w : plan.weights) EXPECT_GE(w, 1.0);
    for (std::size_t k = 0; k < props.size(); ++k) {
      const auto& r = plan.remapped[k];
      EXPECT_GE(r.start, 0);
      EXPECT_LT(r.start, r.end);
      EXPECT_LE(r.end, T);
    }
  }
}

TEST(SamplingPlan, InverseCdfMatchesDenseNumericInversion) {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 100; ++trial) {
    const int T = std::uniform_int_distribution<int>(3, 40)(rng);
    std::vector<ActionProposal> props;
    for (int i = 0; i < 3; ++i) {
      const int s = std::uniform_int_distribution<int>(0, T - 1)(rng);
      props.push_back({s, std::min(T, s + std::uniform_int_distribution<int>(1, 6)(rng)), 1});
    }
    const auto plan = build_sampling_plan(props, T, 6.0);
    for (int i = 0; i < T; ++i) {
      // Bisection on the cdf to 1e-13.
      const double y = (i + 0.5) * plan.total() / T;
      double lo = -0.5, hi = T - 0.5;
      for (int it = 0; it < 200; ++it) {
        const double mid = 0.5 * (lo + hi);
        (plan.cdf(mid) < y ? lo : hi) = mid;
      }
      EXPECT_NEAR(plan.positions[i], 0.5 * (lo + hi), 1e-9);
    }
  }
}

TEST(SamplingPlan, ShortProposalResampledDurationNearGamma) {
  for (int d = 1; d <= 5; ++d) {
    const auto plan = build_sampling_plan({{20, 20 + d, 1}}, 60, 6.0);
    const int r = plan.remapped[0].duration();
    EXPECT_GE(r, 6 - 1) << "d=" << d;
    EXPECT_LE(r, 6 + 1) << "d=" << d;
  }
}

TEST(SamplingPlan, EmptyVideoIsAContractError) { EXPECT_THROW(build_sampling_plan({}, 0, 6.0), ContractError); }

TEST(Resample, IdentityPlanReturnsInput) {
  std::mt19937_64 rng(5);
  const auto x = random_tensor(rng, {8, 3}, false);
  const auto y = resample_features(x, build_sampling_plan({}, 8, 6.0));
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(y.data()[i], x.data()[i], 1e-12);
}

TEST(Resample, ConstantVideoStaysConstant) {
  const auto x = Tensor::full({9, 2}, 3.5);
  const auto y = resample_features(x, build_sampling_plan({{1, 3, 1}, {6, 7, 2}}, 9, 6.0));
  for (double v : y.data()) EXPECT_NEAR(v, 3.5, 1e-12);
}

TEST(Resample, PreservesRowCountAndGradients) {
  std::mt19937_64 rng(6);
  auto x = random_tensor(rng, {10, 4});
  const auto plan = build_sampling_plan({{2, 4, 1}, {7, 8, 1}}, 10, 6.0);
  EXPECT_EQ(resample_features(x, plan).rows(), 10u);
  EXPECT_LT(max_grad_error({x}, [&] { return probe(resample_features(x, plan)); }), 1e-6);
}

TEST(MapToOriginal, IdentityPlanRoundTrip) {
  std::mt19937_64 rng(7);
  const auto m = random_matrix(rng, 6, 2);
  const auto back = map_to_original(m, build_sampling_plan({}, 6, 6.0));
  for (std::size_t i = 0; i < m.values.size(); ++i) EXPECT_NEAR(back.values[i], m.values[i], 1e-12);
}

TEST(Mask, BlockStructureAndSymmetry) {
  const auto m = build_attention_mask({{0, 2, 1}, {3, 6, 2}}, 8);
  for (std::size_t i = 0; i < 8; ++i)
    for (std::size_t j = 0; j < 8; ++j) {
      const bool same = (i < 2 && j < 2) || (i >= 3 && i < 6 && j >= 3 && j < 6);
      EXPECT_EQ(m(i, j), same ? 1.0 : 0.0);
      EXPECT_EQ(m(i, j), m(j, i));
    }
}

TEST(IntraAttention, NoProposalsIsIdentity) {
  std::mt19937_64 rng(8);
  const auto x = random_tensor(rng, {6, 4}, false);
  const auto r = intra_segment_attention(x, Matrix(6, 6, 0.0), intra_params(rng, 4), 2);
  EXPECT_EQ(r.output.to_matrix(), x.to_matrix());
}

TEST(IntraAttention, SingletonProposalAttendsToItself) {
  std::mt19937_64 rng(9);
  const auto x = random_tensor(rng, {5, 4}, false);
  const auto r = intra_segment_attention(x, build_attention_mask({{2, 3, 1}}, 5), intra_params(rng, 4), 2);
  for (const auto& a : r.weights) EXPECT_DOUBLE_EQ(a.at(2, 2), 1.0);
}

TEST(IntraAttention, DisjointProposalsGiveTwoDiagonalBlocks) {
  std::mt19937_64 rng(10);
  const auto x = random_tensor(rng, {8, 4}, false);
  const auto p = intra_params(rng, 4);
  const auto mask = build_attention_mask({{0, 3, 1}, {4, 7, 2}}, 8);
  const auto r = intra_segment_attention(x, mask, p, 1);
  // Direct recomputation of the masked softmax over QK^T / sqrt(d).
  const auto q = matmul(x, p.wq).to_matrix(), k = matmul(x, p.wk).to_matrix();
  for (std::size_t i = 0; i < 8; ++i) {
    double z = 0;
    std::vector<double> e(8, 0.0);
    for (std::size_t j = 0; j < 8; ++j) {
      if (mask(i, j) == 0) continue;
      double s = 0;
      for (std::size_t c = 0; c < 4; ++c) s += q(i, c) * k(j, c);
      e[j] = std::exp(s / 2.0);
      z += e[j];
    }
    for (std::size_t j = 0; j < 8; ++j) {
      const double want = z > 0 ? e[j] / z : 0.0;
      EXPECT_NEAR(r.weights[0].at(i, j), want, 1e-12);
    }
  }
}

TEST(IntraAttention, MaskedRowsSumToOne) {
  std::mt19937_64 rng(11);
  const auto x = random_tensor(rng, {9, 4}, false);
  const auto r = intra_segment_attention(x, build_attention_mask({{1, 4, 1}, {3, 8, 2}}, 9), intra_params(rng, 4), 2);
  for (const auto& a : r.weights)
    for (std::size_t i = 1; i < 8; ++i) {
      double s = 0;
      for (std::size_t j = 0; j < 9; ++j) s += a.at(i, j);
      EXPECT_NEAR(s, 1.0, 1e-9);
    }
}

TEST(IntraAttention, FullMaskEqualsUnmaskedAttention) {
  std::mt19937_64 rng(12);
  const auto x = random_tensor(rng, {6, 4}, false);
  const auto p = intra_params(rng, 4);
  const auto masked = multi_head_attention(x, p.wq, p.wk, p.wv, p.wo, 2, nullptr);
  const Matrix ones(6, 6, 1.0);
  const auto full = multi_head_attention(x, p.wq, p.wk, p.wv, p.wo, 2, &ones);
  for (std::size_t i = 0; i < masked.output.size(); ++i)
    EXPECT_NEAR(masked.output.data()[i], full.output.data()[i], 1e-12);
}

TEST(IntraAttention, HeadsMustDivideWidth) {
  std::mt19937_64 rng(13);
  const auto x = random_tensor(rng, {4, 4}, false);
  EXPECT_THROW(intra_segment_attention(x, Matrix(4, 4, 1.0), intra_params(rng, 4), 3), ConfigError);
}

TEST(IntraAttention, GradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(14);
  auto x = random_tensor(rng, {10, 4});
  auto p = intra_params(rng, 4);
  p.bn_shift = random_tensor(rng, {4}, true, 0.3);
  const auto mask = build_attention_mask({{1, 4, 1}, {5, 9, 2}}, 10);
  EXPECT_LT(max_grad_error({x, p.wq, p.wk, p.wv, p.wo, p.bn_scale, p.bn_shift},
                           [&] { return probe(intra_segment_attention(x, mask, p, 2).output); }),
            1e-4);
}

TEST(InterAttention, NoProposalsIsIdentity) {
  std::mt19937_64 rng(15);
  const auto x = random_tensor(rng, {6, 4}, false);
  EXPECT_EQ(inter_segment_attention(x, {}, inter_params(rng, 4), 2).output.to_matrix(), x.to_matrix());
}

TEST(InterAttention, SingleTokenAttendsToItself) {
  std::mt19937_64 rng(16);
  const auto x = random_tensor(rng, {6, 4}, false);
  const auto r = inter_segment_attention(x, {{1, 4, 1}}, inter_params(rng, 4), 2);
  for (const auto& a : r.weights) EXPECT_DOUBLE_EQ(a.at(0, 0), 1.0);
  // Snippets outside the proposal are unchanged.
  for (std::size_t t : {0u, 4u, 5u})
    for (std::size_t c = 0; c < 4; ++c) EXPECT_EQ(r.output.at(t, c), x.at(t, c));
}

TEST(InterAttention, IdenticalTokensAttendSymmetrically) {
  std::mt19937_64 rng(17);
  Matrix m(6, 4, 0.0);
  const auto row = random_matrix(rng, 1, 4);
  for (std::size_t t = 0; t < 6; ++t)
    for (std::size_t c = 0; c < 4; ++c) m(t, c) = row(0, c);
  const auto r = inter_segment_attention(Tensor::constant(m), {{0, 2, 1}, {3, 6, 2}}, inter_params(rng, 4), 2);
  for (const auto& a : r.weights)
    for (std::size_t i = 0; i < 2; ++i)
      for (std::size_t j = 0; j < 2; ++j) EXPECT_NEAR(a.at(i, j), 0.5, 1e-12);
}

TEST(InterAttention, OverlappingBroadcastsSum) {
  std::mt19937_64 rng(18);
  const auto x = random_tensor(rng, {6, 4}, false);
  const auto p = inter_params(rng, 4);
  const std::vector<ActionProposal> props{{0, 4, 1}, {2, 6, 2}};
  const auto r = inter_segment_attention(x, props, p, 2);
  // Rebuild: tokens -> attention -> per-token outputs summed where proposals overlap.
  Matrix pool(2, 6, 0.0);
  for (int t = 0; t < 4; ++t) pool(0, t) = 0.25;
  for (int t = 2; t < 6; ++t) pool(1, t) = 0.25;
  const auto tok = multi_head_attention(matmul(Tensor::constant(pool), x), p.wq, p.wk, p.wv, p.wo, 2, nullptr).output;
  for (std::size_t c = 0; c < 4; ++c) {
    EXPECT_NEAR(r.output.at(3, c), x.at(3, c) + tok.at(0, c) + tok.at(1, c), 1e-12);
    EXPECT_NEAR(r.output.at(0, c), x.at(0, c) + tok.at(0, c), 1e-12);
  }
}

TEST(InterAttention, GradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(19);
  auto x = random_tensor(rng, {10, 4});
  auto p = inter_params(rng, 4);
  const std::vector<ActionProposal> props{{0, 3, 1}, {2, 7, 2}, {8, 10, 1}};
  EXPECT_LT(max_grad_error({x, p.wq, p.wk, p.wv, p.wo},
                           [&] { return probe(inter_segment_attention(x, props, p, 2).output); }),
            1e-4);
}

TEST(Forward, FullPathGradientCheckOnTenSnippets) {
  auto cfg = tiny_model(3, 4, 4, 2);
  auto inst = make_gradcheck_instance(cfg, 10, 1, 4);
  auto p = init_parameters(cfg, 4);
  const auto r = gradcheck(p, [&] { return instance_loss(inst, p, cfg, true); });
  EXPECT_LT(r.max_rel_error, 1e-4);
}

TEST(Forward, DssRemapsProposalsIntoResampledCoordinates) {
  auto cfg = tiny_model();
  const auto p = init_parameters(cfg, 5);
  std::mt19937_64 rng(20);
  const auto f = Tensor::constant(random_matrix(rng, 12, 4));
  const auto pass = forward(f, p, cfg, {{3, 5, 1}}, configured_switches(cfg));
  ASSERT_TRUE(pass.plan);
  EXPECT_EQ(pass.proposals, pass.plan->remapped);
  EXPECT_EQ(pass.outputs.cas.rows(), 12u);
}
