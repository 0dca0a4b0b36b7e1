#include <cmath>
#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "ccl/losses.hpp"
#include "ccl/rng.hpp"
#include "scalar_oracle.hpp"

using namespace ccl;
using Td = Tensor<double>;

namespace {

Td to_tensor(const oracle::Mat& m) {
  std::vector<double> v;
  for (const auto& r : m) v.insert(v.end(), r.begin(), r.end());
  return Td::matrix(m.size(), m.empty() ? 0 : m[0].size(), std::move(v));
}

oracle::Mat random_mat(std::size_t r, std::size_t c, Rng& rng, double sd = 1.0) {
  std::normal_distribution<double> n(0, sd);
  oracle::Mat m(r, oracle::Row(c));
  for (auto& row : m)
    for (auto& x : row) x = n(rng);
  return m;
}

oracle::Mat random_probs(std::size_t r, std::size_t c, Rng& rng, double sd = 1.5) {
  auto m = random_mat(r, c, rng, sd);
  for (auto& row : m) row = oracle::softmax(row);
  return m;
}

const double kLn1pInvE = std::log(1 + std::exp(-1.0));  // 0.313262

}  // namespace

// --- sharpen --------------------------------------------------------------

TEST(Sharpen, UniformIsFixed) {
  for (double T : {0.1, 0.5, 2.0}) {
    auto s = sharpen(Td::from_rows({{0.5, 0.5}}), T);
    EXPECT_NEAR(s.at(0, 0), 0.5, 1e-12);
  }
}

TEST(Sharpen, UnitTemperatureIsIdentity) {
  auto p = Td::from_rows({{0.7, 0.2, 0.1}});
  EXPECT_EQ(sharpen(p, 1.0).values(), p.values());
}

TEST(Sharpen, HandValue) {
  auto s = sharpen(Td::from_rows({{0.8, 0.2}}), 0.5);
  EXPECT_NEAR(s.at(0, 0), 0.941176, 1e-6);
  EXPECT_NEAR(s.at(0, 1), 0.058824, 1e-6);
  EXPECT_NEAR(s.at(0, 0), 16.0 / 17.0, 1e-12);
}

TEST(Sharpen, NonPositiveTemperatureIsConfigError) {
  auto p = Td::from_rows({{0.8, 0.2}});
  EXPECT_THROW(sharpen(p, 0.0), ConfigError);
  EXPECT_THROW(sharpen(p, -1.0), ConfigError);
}

// --- cross-entropy --------------------------------------------------------

TEST(CrossEntropy, UniformAgainstHardLabel) {
  std::vector<int> y{0};
  EXPECT_NEAR(cross_entropy(Td::from_rows({{0.5, 0.5}}), std::span<const int>(y)).item(), std::log(2.0), 1e-12);
}

TEST(CrossEntropy, SelfTargetIsEntropy) {
  auto p = Td::from_rows({{0.6, 0.3, 0.1}});
  const double h = -(0.6 * std::log(0.6) + 0.3 * std::log(0.3) + 0.1 * std::log(0.1));
  EXPECT_NEAR(cross_entropy(p, p).item(), h, 1e-12);
}

TEST(CrossEntropy, HandValue) {
  EXPECT_NEAR(cross_entropy(Td::from_rows({{0.7, 0.3}}), Td::from_rows({{0.98, 0.02}})).item(), 0.373620, 1e-6);
}

TEST(CrossEntropy, NonSimplexTargetIsContractError) {
  auto p = Td::from_rows({{0.7, 0.3}});
  EXPECT_THROW(cross_entropy(p, Td::from_rows({{0.9, 0.2}})), ContractError);
  EXPECT_THROW(cross_entropy(p, Td::from_rows({{1.2, -0.2}})), ContractError);
}

TEST(CrossEntropy, FloatSimplexTolerance) {
  auto p = Tensor<float>::from_rows({{0.7f, 0.3f}});
  EXPECT_NO_THROW(cross_entropy(p, Tensor<float>::from_rows({{0.98f, 0.02f}})));
}

// --- RoLR -----------------------------------------------------------------

TEST(Rolr, EndpointsAndMidpoint) {
  auto p_s = Td::from_rows({{0.7, 0.3}, {0.2, 0.8}});
  auto pseudo = Td::from_rows({{0.1, 0.9}, {0.6, 0.4}});
  std::vector<int> y{0, 0};
  const double ce_y = (-std::log(0.7) - std::log(0.2)) / 2;
  const double ce_p = (oracle::ce({0.7, 0.3}, {0.1, 0.9}) + oracle::ce({0.2, 0.8}, {0.6, 0.4})) / 2;
  std::vector<double> one{1, 1}, zero{0, 0}, half{0.5, 0.5};
  EXPECT_NEAR(rolr_loss(p_s, std::span<const int>(y), std::span<const double>(one), pseudo).item(), ce_y, 1e-12);
  EXPECT_NEAR(rolr_loss(p_s, std::span<const int>(y), std::span<const double>(zero), pseudo).item(), ce_p, 1e-12);
  EXPECT_NEAR(rolr_loss(p_s, std::span<const int>(y), std::span<const double>(half), pseudo).item(),
              0.5 * (ce_y + ce_p), 1e-12);
}

TEST(Rolr, OmegaOutsideUnitIntervalIsContractError) {
  auto p_s = Td::from_rows({{0.7, 0.3}});
  std::vector<int> y{0};
  std::vector<double> w{1.5};
  EXPECT_THROW(rolr_loss(p_s, std::span<const int>(y), std::span<const double>(w), p_s), ContractError);
}

// --- contrastive distribution --------------------------------------------

TEST(Contrastive, SingleCandidate) {
  auto q = contrastive_distribution(Td::from_rows({{0.3, -2.0}}), Td::from_rows({{1.0, 1.0}}), 0.1).q;
  EXPECT_EQ(q.shape(), (Shape{1, 1}));
  EXPECT_DOUBLE_EQ(q.item(), 1.0);
}

TEST(Contrastive, OrthonormalDiagonal) {
  auto e = Td::identity(2);
  auto q = contrastive_distribution(e, e, 1.0).q;
  EXPECT_NEAR(q.at(0, 0), 0.731059, 1e-6);
  EXPECT_NEAR(q.at(1, 1), std::exp(1.0) / (std::exp(1.0) + 1), 1e-12);
}

TEST(Contrastive, LargeTemperatureIsUniform) {
  Rng rng(1);
  auto a = to_tensor(random_mat(5, 3, rng)), c = to_tensor(random_mat(5, 3, rng));
  auto q = contrastive_distribution(a, c, 1e6).q;
  for (double v : q.values()) EXPECT_NEAR(v, 0.2, 1e-6);
}

TEST(Contrastive, ZeroNormRowIsDomainError) {
  auto a = Td::from_rows({{0.0, 0.0}, {1.0, 0.0}});
  EXPECT_THROW(contrastive_distribution(a, Td::identity(2), 1.0), DomainError);
  EXPECT_THROW(acl_loss(a, Td::identity(2), 1.0), DomainError);
  EXPECT_THROW(cclrl_loss(Td::identity(2), a, std::span<const int>(std::vector<int>{0, 1}), 1.0), DomainError);
}

TEST(Contrastive, MatchesOracle) {
  Rng rng(2);
  auto a = random_mat(4, 3, rng), c = random_mat(4, 3, rng);
  auto q = contrastive_distribution(to_tensor(a), to_tensor(c), 0.3).q;
  auto o = oracle::contrast(a, c, 0.3);
  for (std::size_t j = 0; j < 4; ++j)
    for (std::size_t k = 0; k < 4; ++k) EXPECT_NEAR(q.at(j, k), o[j][k], 1e-12);
}

// --- ACL ------------------------------------------------------------------

TEST(Acl, SingleSampleIsZero) {
  EXPECT_NEAR(acl_loss(Td::from_rows({{1.0, 2.0}}), Td::from_rows({{-3.0, 0.5}}), 0.1).item(), 0.0, 1e-12);
}

TEST(Acl, OneHotIdenticalViews) {
  auto e = Td::identity(2);
  EXPECT_NEAR(acl_loss(e, e, 1.0).item(), 0.313262, 1e-6);
  EXPECT_NEAR(acl_loss(e, e, 1.0).item(), kLn1pInvE, 1e-12);
}

TEST(Acl, MisalignmentIsPenalized) {
  auto s = Td::from_rows({{0.0, 1.0}, {1.0, 0.0}});
  auto w = Td::identity(2);
  EXPECT_GT(acl_loss(s, w, 1.0).item(), std::log(2.0) * 0.5);
  EXPECT_GT(acl_loss(s, w, 1.0).item(), acl_loss(w, w, 1.0).item());
}

// --- view mimicry ---------------------------------------------------------

TEST(Vm, IdenticalViewsGiveZero) {
  Rng rng(3);
  auto e = to_tensor(random_mat(5, 4, rng));
  EXPECT_NEAR(vm_loss(e, e, 0.5).item(), 0.0, 1e-12);
}

TEST(Vm, SingleSampleIsZero) {
  EXPECT_NEAR(vm_loss(Td::from_rows({{1.0, 2.0}}), Td::from_rows({{-3.0, 0.5}}), 0.1).item(), 0.0, 1e-12);
}

TEST(Vm, HandTwoByTwoMatchesOracle) {
  oracle::Mat s{{1, 0}, {0, 1}}, w{{1, 1}, {0, 1}};
  const double expect = (oracle::mimicry(s, w, 1.0, 0) + oracle::mimicry(s, w, 1.0, 1)) / 2;
  EXPECT_GT(expect, 0.0);
  EXPECT_NEAR(vm_loss(to_tensor(s), to_tensor(w), 1.0).item(), expect, 1e-12);
}

// --- prediction guidance -------------------------------------------------

TEST(Pg, BelowThresholdContributesNothing) {
  EXPECT_EQ(pg_loss(Td::from_rows({{0.9, 0.1}}), Td::from_rows({{0.2, 0.8}}), 0.95).item(), 0.0);
}

TEST(Pg, HandValue) {
  EXPECT_NEAR(pg_loss(Td::from_rows({{0.98, 0.02}}), Td::from_rows({{0.7, 0.3}}), 0.95).item(), 0.373620, 1e-6);
}

TEST(Pg, SelfTargetIsEntropy) {
  auto p = Td::from_rows({{0.97, 0.02, 0.01}});
  const double h = -(0.97 * std::log(0.97) + 0.02 * std::log(0.02) + 0.01 * std::log(0.01));
  EXPECT_NEAR(pg_loss(p, p, 0.95).item(), h, 1e-12);
}

TEST(Pg, HardTargetUsesArgmax) {
  EXPECT_NEAR(pg_loss(Td::from_rows({{0.98, 0.02}}), Td::from_rows({{0.7, 0.3}}), 0.95, true).item(),
              -std::log(0.7), 1e-12);
}

TEST(Pg, TargetCarriesNoGradient) {
  Td p_w = Td::from_rows({{0.98, 0.02}}, true);
  Td p_s = Td::from_rows({{0.7, 0.3}}, true);
  backward(pg_loss(p_w, p_s, 0.95));
  EXPECT_FALSE(p_w.has_grad());
  EXPECT_TRUE(p_s.has_grad());
}

// --- CCLRL ----------------------------------------------------------------

TEST(Cclrl, SingleClassIsZero) {
  Rng rng(4);
  std::vector<int> y{2, 2, 2, 2};
  auto a = to_tensor(random_mat(4, 3, rng)), b = to_tensor(random_mat(4, 3, rng));
  EXPECT_NEAR(cclrl_loss(a, b, std::span<const int>(y), 0.2).item(), 0.0, 1e-12);
}

TEST(Cclrl, DistinctClassesOneHot) {
  std::vector<int> y{0, 1};
  auto e = Td::identity(2);
  EXPECT_NEAR(cclrl_loss(e, e, std::span<const int>(y), 1.0).item(), 0.313262, 1e-6);
}

TEST(Cclrl, MatchesOracle) {
  Rng rng(5);
  std::vector<int> y{0, 1, 0, 2, 1};
  auto a = random_mat(5, 3, rng), b = random_mat(5, 3, rng);
  double expect = 0;
  for (std::size_t j = 0; j < 5; ++j) expect += oracle::cclrl(a, b, y, 0.5, j) / 5;
  EXPECT_NEAR(cclrl_loss(to_tensor(a), to_tensor(b), std::span<const int>(y), 0.5).item(), expect, 1e-12);
}

// --- model mimicry --------------------------------------------------------

TEST(Mm, PeerEqualToOwnIsZero) {
  Rng rng(6);
  auto e = to_tensor(random_mat(4, 6, rng));
  EXPECT_NEAR(mm_loss(e, e, 0.1).item(), 0.0, 1e-12);
  EXPECT_NEAR(mm_loss(Td::from_rows({{1.0, 2.0}}), Td::from_rows({{-3.0, 0.5}}), 0.1).item(), 0.0, 1e-12);
}

TEST(Mm, AsymmetricCaseMatchesOracle) {
  oracle::Mat s{{1, 0.2}, {0.1, 1}, {-1, 0.5}}, peer{{0.5, 1}, {1, -0.3}, {0.2, 0.2}};
  double expect = 0;
  for (std::size_t j = 0; j < 3; ++j) expect += oracle::mimicry(s, peer, 0.5, j) / 3;
  EXPECT_GT(expect, 0.0);
  EXPECT_NEAR(mm_loss(to_tensor(s), to_tensor(peer), 0.5).item(), expect, 1e-12);
}

// --- diversity ------------------------------------------------------------

TEST(Div, UniformBatchMeanIsZero) {
  EXPECT_NEAR(div_loss(Td::from_rows({{0.9, 0.1}, {0.1, 0.9}})).item(), 0.0, 1e-12);
}

TEST(Div, HandValue) {
  EXPECT_NEAR(div_loss(Td::from_rows({{0.75, 0.25}})).item(), 0.143841, 1e-6);
}

TEST(Div, CollapsedPredictionIsLargeButFinite) {
  const double v = div_loss(Td::from_rows({{1.0, 0.0}})).item();
  EXPECT_TRUE(std::isfinite(v));
  EXPECT_GT(v, 10.0);
}

// --- overall objective ----------------------------------------------------

namespace {

oracle::Batch random_batch(std::size_t n, std::size_t C, std::size_t D, Rng& rng) {
  oracle::Batch b;
  b.p_s = random_probs(n, C, rng);
  b.p_w = random_probs(n, C, rng, 4.0);
  b.p_w_peer = random_probs(n, C, rng);
  b.emb_s = random_mat(n, D, rng);
  b.emb_w = random_mat(n, D, rng);
  b.emb_w_peer = random_mat(n, D, rng);
  std::uniform_int_distribution<int> lab(0, static_cast<int>(C) - 1);
  std::uniform_real_distribution<double> u(0, 1);
  for (std::size_t j = 0; j < n; ++j) {
    b.noisy.push_back(lab(rng));
    b.collab_hard.push_back(lab(rng));
    b.omega.push_back(u(rng));
  }
  return b;
}

CclBatch<double> to_batch(const oracle::Batch& o) {
  CclBatch<double> b;
  b.p_s = to_tensor(o.p_s);
  b.p_w = to_tensor(o.p_w);
  b.p_w_peer = to_tensor(o.p_w_peer);
  b.emb_s = to_tensor(o.emb_s);
  b.emb_w = to_tensor(o.emb_w);
  b.emb_w_peer = to_tensor(o.emb_w_peer);
  b.noisy = o.noisy;
  b.collab_hard = o.collab_hard;
  b.omega = o.omega;
  return b;
}

void expect_parts(const LossBreakdown& got, const oracle::Parts& want, double tol) {
  EXPECT_NEAR(got.ce, want.ce, tol);
  EXPECT_NEAR(got.pg, want.pg, tol);
  EXPECT_NEAR(got.acl, want.acl, tol);
  EXPECT_NEAR(got.vm, want.vm, tol);
  EXPECT_NEAR(got.xce, want.xce, tol);
  EXPECT_NEAR(got.cclrl, want.cclrl, tol);
  EXPECT_NEAR(got.mm, want.mm, tol);
  EXPECT_NEAR(got.div, want.div, tol);
  EXPECT_NEAR(got.total, want.total, tol);
}

}  // namespace

TEST(TotalLoss, HandTwoSampleBatch) {
  oracle::Batch o;
  o.p_s = {{0.7, 0.3}, {0.4, 0.6}};
  o.p_w = {{0.98, 0.02}, {0.5, 0.5}};
  o.p_w_peer = {{0.6, 0.4}, {0.2, 0.8}};
  o.emb_s = {{1, 0}, {0.5, 1}};
  o.emb_w = {{1, 0.1}, {0, 1}};
  o.emb_w_peer = {{0.8, -0.2}, {0.3, 0.9}};
  o.noisy = {0, 1};
  o.collab_hard = {0, 1};
  o.omega = {0.25, 0.6};
  LossSettings s;
  s.tau = 0.5;
  auto r = total_loss(to_batch(o), s);
  expect_parts(r.parts, oracle::total(o, s.c, s.sharpen_T, s.tau), 1e-6);
  EXPECT_NEAR(r.parts.composed(), r.parts.total, 1e-12);
}

TEST(TotalLoss, RandomBatchesMatchOracle) {
  Rng rng(7);
  for (int t = 0; t < 20; ++t) {
    auto o = random_batch(6, 4, 5, rng);
    LossSettings s;
    s.c = 0.7;
    s.tau = 0.3;
    s.sharpen_cross_target = t % 2 == 0;
    auto r = total_loss(to_batch(o), s);
    expect_parts(r.parts, oracle::total(o, s.c, s.sharpen_T, s.tau, s.sharpen_cross_target), 1e-9);
    EXPECT_NEAR(r.loss.item(), r.parts.total, 1e-12);
    EXPECT_NEAR(r.parts.composed(), r.parts.total, 1e-9);
  }
}

TEST(TotalLoss, OmegaOneIsSupervisedCePlusDiv) {
  Rng rng(8);
  auto o = random_batch(5, 3, 4, rng);
  o.omega.assign(5, 1.0);
  auto r = total_loss(to_batch(o), LossSettings{});
  auto ce = cross_entropy(to_tensor(o.p_s), std::span<const int>(o.noisy)).item();
  EXPECT_NEAR(r.parts.total, ce + div_loss(to_tensor(o.p_s)).item(), 1e-12);
  EXPECT_EQ(r.parts.cvl, 0.0);
  EXPECT_EQ(r.parts.cml, 0.0);
}

TEST(TotalLoss, OmegaZeroIsHalfCvlCmlPlusDiv) {
  Rng rng(9);
  auto o = random_batch(5, 3, 4, rng);
  o.omega.assign(5, 0.0);
  LossSettings s;
  auto b = to_batch(o);
  auto r = total_loss(b, s);
  const double tau = s.tau;
  const double cvl = pg_loss(b.p_w, b.p_s, s.c).item() + acl_loss(b.emb_s, b.emb_w, tau).item() +
                     vm_loss(b.emb_s, b.emb_w, tau).item();
  const double cml = cross_entropy(b.p_s, sharpen(b.p_w_peer, s.sharpen_T)).item() +
                     cclrl_loss(b.emb_s, b.emb_w_peer, std::span<const int>(o.collab_hard), tau).item() +
                     mm_loss(b.emb_s, b.emb_w_peer, tau).item();
  EXPECT_EQ(r.parts.ce, 0.0);
  EXPECT_NEAR(r.parts.total, 0.5 * (cvl + cml) + div_loss(b.p_s).item(), 1e-12);
}

TEST(TotalLoss, WeakAndPeerPredictionsAreTargetsOnly) {
  Rng rng(10);
  auto b = to_batch(random_batch(4, 3, 4, rng));
  b.p_w.set_requires_grad(true);
  b.p_w_peer.set_requires_grad(true);
  b.p_s.set_requires_grad(true);
  backward(total_loss(b, LossSettings{}).loss);
  EXPECT_FALSE(b.p_w.has_grad());
  EXPECT_FALSE(b.p_w_peer.has_grad());
  EXPECT_TRUE(b.p_s.has_grad());
}

TEST(TotalLoss, LabelCountMismatch) {
  Rng rng(11);
  auto b = to_batch(random_batch(4, 3, 4, rng));
  b.noisy.pop_back();
  EXPECT_THROW(total_loss(b, LossSettings{}), DimensionError);
}

TEST(LossBreakdown, AccumulateAndScale) {
  LossBreakdown a;
  a.ce = 1, a.cvl = 2, a.cml = 4, a.div = 0.5, a.total = 4.5;
  LossBreakdown sum;
  sum += a;
  sum += a;
  auto m = sum.scaled(0.5);
  EXPECT_DOUBLE_EQ(m.total, 4.5);
  EXPECT_DOUBLE_EQ(m.composed(), 4.5);
}
