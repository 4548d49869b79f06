#include <algorithm>
#include <cmath>
#include <numeric>

#include "doctest.h"
#include "oracles.hpp"
#include "pemr/error.hpp"
#include "pemr/maskgen.hpp"

using namespace pemr;
using namespace pemr::maskgen;
using oracle::random_tensor;

namespace {

FrameScores scores_of(std::vector<double> s) { return FrameScores{std::move(s), 1}; }

std::vector<std::size_t> dropped_indices(const MaskMatrix& m) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < m.length(); ++i)
    if (!m.keep[i]) out.push_back(i);
  return out;
}

}  // namespace

TEST_CASE("frame scores") {
  Rng rng(1);
  SUBCASE("matches the loop oracle, H=3 L=6 D=8") {
    for (int trial = 0; trial < 20; ++trial) {
      std::vector<Tensor> q1, q2, k;
      oracle::Matrix mq1, mq2;
      std::vector<oracle::Matrix> mk;
      for (int h = 0; h < 3; ++h) {
        q1.push_back(random_tensor({8}, rng, -2, 2));
        q2.push_back(random_tensor({8}, rng, -2, 2));
        k.push_back(random_tensor({6, 8}, rng, -2, 2));
        mq1.push_back(q1.back().values());
        mq2.push_back(q2.back().values());
        mk.push_back(oracle::to_matrix(k.back()));
      }
      const auto s = frame_scores(q1, q2, k);
      const auto ref = oracle::frame_scores(mq1, mq2, mk);
      CHECK(s.heads == 3);
      for (std::size_t l = 0; l < 6; ++l) REQUIRE(std::abs(s.s[l] - ref[l]) < 1e-12);
      CHECK(std::abs(std::accumulate(s.s.begin(), s.s.end(), 0.0) - 3.0) < 1e-9);
    }
  }
  SUBCASE("identical queries with one head give one softmax") {
    const Tensor q = random_tensor({4}, rng), k = random_tensor({5, 4}, rng);
    const auto s = frame_scores(std::vector{q}, std::vector{q}, std::vector{k});
    std::vector<double> z(5);
    for (std::size_t l = 0; l < 5; ++l) {
      for (std::size_t d = 0; d < 4; ++d) z[l] += q[d] * k.at(l, d);
      z[l] /= 2.0;
    }
    const auto p = oracle::softmax(z);
    for (std::size_t l = 0; l < 5; ++l) CHECK(s.s[l] == doctest::Approx(p[l]).epsilon(1e-14));
  }
  SUBCASE("identical keys give uniform H/L scores") {
    Tensor k({7, 4});
    for (std::size_t l = 0; l < 7; ++l)
      for (std::size_t d = 0; d < 4; ++d) k.at(l, d) = static_cast<double>(d);
    std::vector<Tensor> q(2, random_tensor({4}, rng)), keys(2, k);
    const auto s = frame_scores(q, q, keys);
    for (double v : s.s) CHECK(v == doctest::Approx(2.0 / 7.0).epsilon(1e-14));
  }
  SUBCASE("shifting every key by a constant keeps the ordering") {
    const Tensor q = random_tensor({4}, rng);
    Tensor k = random_tensor({9, 4}, rng);
    const auto a = frame_scores(std::vector{q}, std::vector{q}, std::vector{k});
    for (std::size_t l = 0; l < 9; ++l)
      for (std::size_t d = 0; d < 4; ++d) k.at(l, d) += 0.7;
    const auto b = frame_scores(std::vector{q}, std::vector{q}, std::vector{k});
    auto argsort = [](const std::vector<double>& v) {
      std::vector<std::size_t> i(v.size());
      std::iota(i.begin(), i.end(), 0);
      std::stable_sort(i.begin(), i.end(), [&](auto x, auto y) { return v[x] < v[y]; });
      return i;
    };
    CHECK(argsort(a.s) == argsort(b.s));
  }
  SUBCASE("mismatched heads or widths raise") {
    const Tensor q = random_tensor({4}, rng), k = random_tensor({5, 4}, rng);
    CHECK_THROWS_AS(frame_scores(std::vector{q, q}, std::vector{q}, std::vector{k, k}), ShapeError);
    CHECK_THROWS_AS(frame_scores(std::vector{q}, std::vector{q}, std::vector{random_tensor({5, 3}, rng)}), ShapeError);
  }
}

TEST_CASE("positive and negative masks") {
  SUBCASE("drops the lowest score") {
    const auto m = positive_mask(scores_of({0.9, 0.1, 0.5, 0.7}), 0.25);
    CHECK(dropped_indices(m) == std::vector<std::size_t>{1});
    CHECK(m.threshold == 0.5);
    const auto n = negative_mask(m);
    CHECK(n.keep == std::vector<bool>{false, true, false, false});
  }
  SUBCASE("ties drop the lowest index") {
    const auto m = positive_mask(scores_of(std::vector<double>(10, 0.3)), 0.1);
    CHECK(dropped_indices(m) == std::vector<std::size_t>{0});
  }
  SUBCASE("L = 511, r = 0.1 drops 51") {
    Rng rng(2);
    std::vector<double> s(511);
    for (auto& v : s) v = rng.uniform();
    const auto m = positive_mask(scores_of(s), 0.1);
    CHECK(m.dropped() == 51);
    auto sorted = s;
    std::sort(sorted.begin(), sorted.end());
    for (std::size_t i : dropped_indices(m)) CHECK(s[i] <= sorted[50]);
  }
  SUBCASE("complement properties") {
    const auto m = positive_mask(scores_of({0.2, 0.4, 0.1, 0.8, 0.6}), 0.4);
    const auto n = negative_mask(m);
    CHECK(negative_mask(n).keep == m.keep);
    CHECK(m.dropped() + n.dropped() == 5);
  }
  SUBCASE("errors") {
    CHECK_THROWS_AS(positive_mask(scores_of({1.0}), 0.1), DegenerateError);
    CHECK_THROWS_AS(positive_mask(scores_of({1.0, 2.0}), 0.0), ConfigError);
    CHECK_THROWS_AS(positive_mask(scores_of({1.0, 2.0}), 1.0), ConfigError);
  }
}

TEST_CASE("apply_mask") {
  Rng rng(3);
  const dsp::FrameMatrix f(random_tensor({6, 3}, rng));
  const auto m = positive_mask(scores_of({0.5, 0.1, 0.9, 0.2, 0.7, 0.3}), 0.5);
  const auto pos = apply_mask(f, m), neg = apply_mask(f, negative_mask(m));
  for (std::size_t l = 0; l < 6; ++l) {
    for (std::size_t d = 0; d < 3; ++d) {
      REQUIRE(pos.frames().at(l, d) + neg.frames().at(l, d) == f.frames().at(l, d));
      if (!m.keep[l]) REQUIRE(pos.frames().at(l, d) == 0.0);
    }
  }
  CHECK(apply_mask(pos, m).frames().values() == pos.frames().values());
  MaskMatrix all{std::vector<bool>(6, true), 0.0, 0.0};
  CHECK(apply_mask(f, all).frames().values() == f.frames().values());
  MaskMatrix wrong{std::vector<bool>(5, true), 0.0, 0.0};
  CHECK_THROWS_AS(apply_mask(f, wrong), ShapeError);
}

TEST_CASE("drop count sweep") {
  Rng rng(4);
  for (std::size_t L = 2; L <= 600; L += 1) {
    for (double r : {0.01, 0.1, 0.3, 0.5}) {
      const auto k = static_cast<std::size_t>(
          std::clamp<long long>(std::llround(r * static_cast<double>(L)), 1, static_cast<long long>(L) - 1));
      std::vector<double> s(L);
      for (auto& v : s) v = std::floor(rng.uniform(0, 5));  // many ties
      const auto m = positive_mask(scores_of(s), r);
      REQUIRE(m.dropped() == k);
      REQUIRE(negative_mask(m).dropped() == L - k);
    }
  }
}
