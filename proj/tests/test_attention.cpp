#include <algorithm>
#include <cmath>

#include "doctest.h"
#include "oracles.hpp"
#include "pemr/attention.hpp"
#include "pemr/objectives.hpp"

using namespace pemr;
using namespace pemr::attention;
using oracle::random_tensor;

namespace {

LayerWeights random_layer(std::size_t D, std::size_t H, std::size_t F, Rng& rng) {
  LayerWeights w;
  for (std::size_t h = 0; h < H; ++h) {
    w.wq.push_back(Var::constant(random_tensor({D, D}, rng, -0.5, 0.5)));
    w.wk.push_back(Var::constant(random_tensor({D, D}, rng, -0.5, 0.5)));
    w.wv.push_back(Var::constant(random_tensor({D, D}, rng, -0.5, 0.5)));
  }
  w.wo = Var::constant(random_tensor({H * D, D}, rng, -0.5, 0.5));
  w.w1 = Var::constant(random_tensor({D, F}, rng));
  w.b1 = Var::constant(random_tensor({F}, rng));
  w.w2 = Var::constant(random_tensor({F, D}, rng));
  w.b2 = Var::constant(random_tensor({D}, rng));
  w.ln1_gain = Var::constant(Tensor({D}, 1.0));
  w.ln1_bias = Var::constant(Tensor({D}, 0.0));
  w.ln2_gain = Var::constant(Tensor({D}, 1.0));
  w.ln2_bias = Var::constant(Tensor({D}, 0.0));
  return w;
}

std::vector<oracle::Matrix> mats(const std::vector<Var>& vs) {
  std::vector<oracle::Matrix> out;
  for (const auto& v : vs) out.push_back(oracle::to_matrix(v.value()));
  return out;
}

}  // namespace

TEST_CASE("sinusoidal positions") {
  const std::size_t D = 128, N = 4097;
  const Tensor p = sinusoidal_positions(N, D);
  CHECK(p.shape() == Shape{N, D});
  for (std::size_t d = 0; d < D; ++d) CHECK(p.at(0, d) == (d % 2 == 0 ? 0.0 : 1.0));
  for (double v : p.values()) REQUIRE(std::abs(v) <= 1.0);
  // Every pair of positions differs somewhere by at least 1e-6.
  for (std::size_t i = 0; i < N; ++i) {
    for (std::size_t j = i + 1; j < N; ++j) {
      bool differs = false;
      for (std::size_t d = 0; d < D && !differs; ++d) differs = std::abs(p.at(i, d) - p.at(j, d)) >= 1e-6;
      REQUIRE(differs);
    }
  }
}

TEST_CASE("multi-head attention") {
  Rng rng(1);
  SUBCASE("matches a loop oracle on a 5x8 input with 2 heads") {
    const auto w = random_layer(8, 2, 8, rng);
    const Tensor x = random_tensor({5, 8}, rng);
    const auto out = multi_head_attention(Var::constant(x), w);
    const auto ref = oracle::attention(oracle::to_matrix(x), mats(w.wq), mats(w.wk), mats(w.wv),
                                       oracle::to_matrix(w.wo.value()));
    for (std::size_t i = 0; i < 5; ++i)
      for (std::size_t j = 0; j < 8; ++j) REQUIRE(std::abs(out.output.value().at(i, j) - ref[i][j]) < 1e-10);
    for (const auto& a : out.weights) {
      for (std::size_t r = 0; r < a.rows(); ++r) {
        double s = 0;
        for (double v : a.row(r)) {
          REQUIRE(v >= 0.0);
          s += v;
        }
        REQUIRE(std::abs(s - 1.0) < 1e-12);
      }
    }
  }
  SUBCASE("a single token attends only to itself") {
    const auto w = random_layer(4, 3, 4, rng);
    const Tensor x = random_tensor({1, 4}, rng);
    const auto out = multi_head_attention(Var::constant(x), w);
    for (const auto& a : out.weights) CHECK(a[0] == 1.0);
    // Output is concat(V rows) times the output projection.
    const auto ref = oracle::attention(oracle::to_matrix(x), mats(w.wq), mats(w.wk), mats(w.wv),
                                       oracle::to_matrix(w.wo.value()));
    for (std::size_t j = 0; j < 4; ++j) CHECK(out.output.value().at(0, j) == doctest::Approx(ref[0][j]).epsilon(1e-12));
  }
}

TEST_CASE("position-wise feed-forward") {
  Rng rng(2);
  auto w = random_layer(6, 1, 6, rng);
  SUBCASE("zero input gives relu(b1) W2 + b2") {
    const auto y = ffn(Var::constant(Tensor({2, 6}, 0.0)), w).value();
    for (std::size_t j = 0; j < 6; ++j) {
      double ref = w.b2.value()[j];
      for (std::size_t k = 0; k < 6; ++k) ref += std::max(0.0, w.b1.value()[k]) * w.w2.value().at(k, j);
      CHECK(y.at(1, j) == doctest::Approx(ref).epsilon(1e-12));
    }
  }
  SUBCASE("identity weights and zero bias pass non-negative input through") {
    Tensor eye = Tensor::matrix(6, 6);
    for (std::size_t i = 0; i < 6; ++i) eye.at(i, i) = 1.0;
    w.w1 = w.w2 = Var::constant(eye);
    w.b1 = w.b2 = Var::constant(Tensor({6}, 0.0));
    const Tensor x = random_tensor({3, 6}, rng, 0.0, 2.0);
    CHECK(ffn(Var::constant(x), w).value().values() == x.values());
  }
  SUBCASE("random input matches the direct formula") {
    const Tensor x = random_tensor({4, 6}, rng);
    const auto y = ffn(Var::constant(x), w).value();
    for (std::size_t i = 0; i < 4; ++i)
      for (std::size_t j = 0; j < 6; ++j) {
        double ref = w.b2.value()[j];
        for (std::size_t k = 0; k < 6; ++k) {
          double h = w.b1.value()[k];
          for (std::size_t m = 0; m < 6; ++m) h += x.at(i, m) * w.w1.value().at(m, k);
          ref += std::max(0.0, h) * w.w2.value().at(k, j);
        }
        REQUIRE(std::abs(y.at(i, j) - ref) < 1e-12);
      }
  }
}

TEST_CASE("encoder stack") {
  Rng rng(3);
  TransformerConfig cfg;
  cfg.model_dim = 8;
  PredictingModule m(cfg, rng);
  SUBCASE("output shape and determinism") {
    for (std::size_t L : {1u, 4u, 9u}) {
      const Tensor x = random_tensor({L + 1, 8}, rng);
      const auto a = m.encode(Var::constant(x)), b = m.encode(Var::constant(x));
      CHECK(a.output.shape() == Shape{L + 1, 8});
      CHECK(a.output.value().values() == b.output.value().values());
      CHECK(a.last.cls_query.size() == 3);
      CHECK(a.last.frame_keys[0].shape() == Shape{L, 8});
    }
  }
  SUBCASE("permuting frames permutes outputs") {
    const Tensor x = random_tensor({5, 8}, rng);
    const std::vector<std::size_t> perm{0, 3, 1, 4, 2};  // CLS stays first
    Tensor xp = x;
    for (std::size_t i = 0; i < 5; ++i) std::copy_n(x.data() + perm[i] * 8, 8, xp.data() + i * 8);
    const auto a = m.encode(Var::constant(x)).output.value();
    const auto b = m.encode(Var::constant(xp)).output.value();
    for (std::size_t i = 0; i < 5; ++i)
      for (std::size_t j = 0; j < 8; ++j) REQUIRE(std::abs(b.at(i, j) - a.at(perm[i], j)) < 1e-12);
  }
  SUBCASE("sequences do not leak into each other") {
    const Tensor x1 = random_tensor({4, 8}, rng), x2 = random_tensor({6, 8}, rng);
    const auto alone = m.encode(Var::constant(x2)).output.value();
    (void)m.encode(Var::constant(x1));
    CHECK(m.encode(Var::constant(x2)).output.value().values() == alone.values());
  }
  SUBCASE("embedding prepends CLS and adds positions") {
    const dsp::FrameMatrix f(random_tensor({3, 8}, rng));
    const auto tokens = m.embed(f).value();
    const auto pos = sinusoidal_positions(4, 8);
    const auto& cls = m.parameters().find("transformer.cls")->var.value();
    for (std::size_t j = 0; j < 8; ++j) {
      CHECK(tokens.at(0, j) == doctest::Approx(cls[j] + pos.at(0, j)));
      CHECK(tokens.at(2, j) == doctest::Approx(f.frames().at(1, j) + pos.at(2, j)));
    }
  }
}

TEST_CASE("random masking") {
  TransformerConfig cfg;
  cfg.model_dim = 4;
  Rng rng(4);
  SUBCASE("a single frame is always selected") {
    const dsp::FrameMatrix f(random_tensor({1, 4}, rng));
    for (int i = 0; i < 50; ++i) {
      const auto m = random_mask(f, cfg, rng);
      REQUIRE(m.record.positions == std::vector<std::size_t>{0});
    }
  }
  SUBCASE("selection rate and action proportions") {
    const std::size_t L = 100;
    const dsp::FrameMatrix f(random_tensor({L, 4}, rng));
    double selected = 0, draws = 0;
    std::size_t counts[3] = {0, 0, 0};
    std::size_t total = 0;
    while (total < 10000) {
      const auto m = random_mask(f, cfg, rng);
      selected += static_cast<double>(m.record.positions.size());
      draws += 1;
      for (std::size_t r = 0; r < m.record.positions.size(); ++r) {
        REQUIRE(m.record.positions[r] < L);
        ++counts[static_cast<int>(m.record.actions[r])];
        ++total;
        const auto row = m.disturbed.frame(m.record.positions[r]);
        const auto orig = f.frame(m.record.positions[r]);
        switch (m.record.actions[r]) {
          case MaskAction::kMaskToken:
            REQUIRE(std::all_of(row.begin(), row.end(), [](double v) { return v == 0.0; }));
            break;
          case MaskAction::kRandomFrame:
            REQUIRE(m.record.sources[r] != m.record.positions[r]);
            REQUIRE(std::equal(row.begin(), row.end(), f.frame(m.record.sources[r]).begin()));
            break;
          case MaskAction::kKeep:
            REQUIRE(std::equal(row.begin(), row.end(), orig.begin()));
            break;
        }
        REQUIRE(std::equal(orig.begin(), orig.end(), m.record.originals.row(r).begin()));
      }
    }
    // Binomial(100, 0.15): mean 15, sd of the mean over `draws` runs is tiny.
    CHECK(std::abs(selected / draws - 15.0) < 4 * std::sqrt(100 * 0.15 * 0.85 / draws) + 0.05);
    const double t = static_cast<double>(total);
    CHECK(std::abs(static_cast<double>(counts[0]) / t - 0.8) < 0.02);
    CHECK(std::abs(static_cast<double>(counts[1]) / t - 0.1) < 0.02);
    CHECK(std::abs(static_cast<double>(counts[2]) / t - 0.1) < 0.02);
  }
}

TEST_CASE("reconstruction head") {
  Rng rng(5);
  TransformerConfig cfg;
  cfg.model_dim = 8;
  cfg.n_layers = 2;
  cfg.n_heads = 2;
  PredictingModule m(cfg, rng);
  const dsp::FrameMatrix f(random_tensor({4, 8}, rng, -2, 2));
  SUBCASE("output is L x D") {
    CHECK(m.predict_masked(m.encode(m.embed(f)).output).shape() == Shape{4, 8});
  }
  SUBCASE("zero weights predict the output bias") {
    for (auto& p : m.parameters().params()) {
      if (p.name.rfind("predict.", 0) == 0) p.var.mutable_value().fill(0.0);
    }
    m.parameters().find("predict.b2")->var.node()->value.fill(0.25);
    const auto y = m.predict_masked(m.encode(m.embed(f)).output).value();
    for (double v : y.values()) CHECK(v == 0.25);
  }
  SUBCASE("end-to-end prediction loss gradients") {
    Rng mrng(6);
    const auto masked = random_mask(f, cfg, mrng);
    auto loss = [&] {
      return objectives::pred_loss(f.frames(), m.predict_masked(m.encode(m.embed(masked)).output),
                                   masked.record.positions);
    };
    CHECK(oracle::parameter_gradient_check(m.parameters().params(), loss) < 1e-4);
  }
}
