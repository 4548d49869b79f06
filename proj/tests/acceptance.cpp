// Acceptance run: one PASS/FAIL line per criterion, exit status 0 only when
// every criterion passes. Each check carries its own wall-clock budget.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <sstream>
#include <string>

#include "oracles.hpp"
#include "pemr/error.hpp"
#include "pemr/eval.hpp"
#include "pemr/maskgen.hpp"
#include "pemr/objectives.hpp"
#include "pemr/synth.hpp"
#include "pemr/trainer.hpp"

using namespace pemr;
using oracle::random_tensor;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;

  void require(bool ok, const std::string& what) {
    if (!ok && pass) {
      pass = false;
      detail = what;
    }
  }
};

std::string fmt(const char* f, double a, double b = 0, double c = 0, double d = 0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c, d);
  return buf;
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("pemr_acceptance_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

double abs_err(double a, double b) { return std::abs(a - b); }

// ---------------------------------------------------------------------------

Outcome formula_oracles() {
  Outcome o;
  Rng rng(101);
  double worst = 0.0;
  const int trials = 100;
  for (int t = 0; t < trials; ++t) {
    // attention-derived frame scores
    const auto H = static_cast<std::size_t>(rng.uniform_int(1, 4));
    const auto L = static_cast<std::size_t>(rng.uniform_int(2, 40));
    const auto D = static_cast<std::size_t>(rng.uniform_int(2, 16));
    std::vector<Tensor> q1, q2, k;
    oracle::Matrix mq1, mq2;
    std::vector<oracle::Matrix> mk;
    for (std::size_t h = 0; h < H; ++h) {
      q1.push_back(random_tensor({D}, rng, -2, 2));
      q2.push_back(random_tensor({D}, rng, -2, 2));
      k.push_back(random_tensor({L, D}, rng, -2, 2));
      mq1.push_back(q1.back().values());
      mq2.push_back(q2.back().values());
      mk.push_back(oracle::to_matrix(k.back()));
    }
    const auto s = maskgen::frame_scores(q1, q2, k);
    const auto ref = oracle::frame_scores(mq1, mq2, mk);
    for (std::size_t l = 0; l < L; ++l) worst = std::max(worst, abs_err(s.s[l], ref[l]));

    // smooth L1 and the masked prediction loss
    for (int i = 0; i < 10; ++i) {
      const double x = rng.uniform(-3, 3);
      worst = std::max(worst, abs_err(objectives::smooth_l1(x), oracle::smooth_l1(x)));
    }
    const Tensor x = random_tensor({L, D}, rng, -3, 3), p = random_tensor({L, D}, rng, -3, 3);
    std::vector<std::size_t> idx;
    for (std::size_t l = 0; l < L; ++l)
      if (rng.bernoulli(0.3)) idx.push_back(l);
    if (idx.empty()) idx.push_back(0);
    worst = std::max(worst, abs_err(objectives::pred_loss(x, ad::Var::constant(p), idx).item(),
                                    oracle::pred_loss(oracle::to_matrix(x), oracle::to_matrix(p), idx)));

    // cross-correlation into the positive and negative losses
    const auto B = static_cast<std::size_t>(rng.uniform_int(2, 16));
    const auto Dp = static_cast<std::size_t>(rng.uniform_int(2, 24));
    const Tensor a = random_tensor({B, Dp}, rng), b = random_tensor({B, Dp}, rng);
    const double lambda = rng.uniform(0.001, 0.1);
    const Tensor u = objectives::cross_correlation(a, b);
    const auto mu = oracle::cross_correlation(oracle::to_matrix(a), oracle::to_matrix(b));
    for (std::size_t i = 0; i < Dp; ++i)
      for (std::size_t j = 0; j < Dp; ++j) worst = std::max(worst, abs_err(u.at(i, j), mu[i][j]));
    worst = std::max(worst, abs_err(objectives::l_pos(u, lambda), oracle::l_pos(mu, lambda)));
    worst = std::max(worst, abs_err(objectives::l_neg(u, lambda), oracle::l_neg(mu, lambda)));
  }
  o.detail = fmt("%.0f instances per formula, worst abs error %.2e", trials, worst);
  o.require(worst <= 1e-12, o.detail);
  return o;
}

// Central differences over model parameters for the full training loss.
// Coordinates where the perturbation flips a discrete mask are kinks and are
// skipped; the count is reported.
Outcome gradient_suite() {
  Outcome o;
  Rng rng(202);
  const double tol = 1e-4;
  double worst_op = 0.0;
  auto op = [&](const std::function<ad::Var(const std::vector<ad::Var>&)>& f, std::vector<Tensor> in) {
    worst_op = std::max(worst_op, oracle::gradient_check(f, std::move(in)));
  };
  using namespace pemr::ad;
  auto w = [&](Shape s) { return Var::constant(random_tensor(std::move(s), rng)); };
  const Var w34 = w({3, 4}), w43 = w({4, 3}), w37 = w({3, 7}), w54 = w({5, 4}), w32 = w({3, 2}), w2320 = w({2, 3, 20}),
            w2345 = w({2, 3, 4, 5}), w1223 = w({1, 2, 2, 3}), w2322 = w({2, 3, 2, 2}), w23 = w({2, 3}), w64 = w({6, 4});
  auto r = [&](Shape s, double lo = -1, double hi = 1) { return random_tensor(std::move(s), rng, lo, hi); };
  op([&](auto& v) { return sum(add(v[0], v[1]) * w34); }, {r({3, 4}), r({3, 4})});
  op([&](auto& v) { return sum(sub(v[0], v[1]) * w34); }, {r({3, 4}), r({3, 4})});
  op([&](auto& v) { return sum(mul(v[0], v[1])); }, {r({3, 4}), r({3, 4})});
  op([&](auto& v) { return sum(scale(add_scalar(v[0], 0.3), -1.7) * w34); }, {r({3, 4})});
  op([&](auto& v) { return sum(relu(v[0]) * w34); }, {r({3, 4})});
  op([&](auto& v) { return sum(square(v[0]) * w34); }, {r({3, 4})});
  op([&](auto& v) { return sum(smooth_l1(v[0]) * w34); }, {r({3, 4}, -3, 3)});
  op([&](auto& v) { return sum(matmul(v[0], v[1]) * w34); }, {r({3, 5}), r({5, 4})});
  op([&](auto& v) { return sum(transpose(v[0]) * w43); }, {r({3, 4})});
  op([&](auto& v) { return sum(add_row_bias(v[0], v[1]) * w34); }, {r({3, 4}), r({4})});
  for (std::size_t axis : {0u, 1u, 2u}) op([&](auto& v) { return sum(softmax(v[0], axis) * w2320); }, {r({2, 3, 20})});
  op([&](auto& v) { return mean(v[0] * w34); }, {r({3, 4})});
  op([&](auto& v) { return sum(reshape(v[0], {4, 3}) * w43); }, {r({3, 4})});
  op([&](auto& v) { return sum(concat({v[0], v[1]}, 1) * w37); }, {r({3, 4}), r({3, 3})});
  op([&](auto& v) { return sum(concat({v[0], v[1]}, 0) * w54); }, {r({3, 4}), r({2, 4})});
  op([&](auto& v) { return sum(slice(v[0], 1, 1, 3) * w32); }, {r({3, 4})});
  const std::vector<std::size_t> rows{2, 0, 2};
  op([&](auto& v) { return sum(select_rows(v[0], rows) * w34); }, {r({3, 4})});
  op([&](auto& v) { return sum(conv2d(v[0], v[1], v[2], 1, 1) * w2345); }, {r({2, 2, 4, 5}), r({3, 2, 3, 3}), r({3})});
  op([&](auto& v) { return sum(conv2d(v[0], v[1], v[2], 2, 0) * w1223); }, {r({1, 1, 5, 7}), r({2, 1, 3, 3}), r({2})});
  op([&](auto& v) { return sum(maxpool2d(v[0], 2, 2) * w2322); }, {r({2, 3, 4, 5})});
  op([&](auto& v) { return sum(global_max_pool(v[0]) * w23); }, {r({2, 3, 4, 5})});
  op([&](auto& v) { return sum(layer_norm(v[0], v[1], v[2]) * w34); }, {r({3, 4}), r({4}), r({4})});
  BatchNormState st{Tensor({3}, 0.0), Tensor({3}, 1.0)};
  op([&](auto& v) { return sum(batch_norm(v[0], v[1], v[2], st, true, false) * w2345); },
     {r({2, 3, 4, 5}), r({3}), r({3})});
  op([&](auto& v) { return sum(standardize_columns(v[0]) * w64); }, {r({6, 4})});
  op([&](auto& v) { return sum(square(softmax(matmul(v[0], v[1]), 1))); }, {r({4, 6}), r({6, 5})});

  // End to end: D=16 bins, L=32 frames, H=2, 2 layers, B=4.
  trainer::TrainConfig cfg;
  cfg.batch_size = 4;
  cfg.seg_len = 256 + 128 * 31;
  cfg.spectrogram.n_mels = 16;
  cfg.transformer.model_dim = 16;
  cfg.transformer.n_heads = 2;
  cfg.transformer.n_layers = 2;
  cfg.encoder.channels = {4, 8, 8, 4};
  synth::ToneConfig tc;
  tc.clip_len = 6000;
  const auto data = synth::genre_dataset(4, tc, 7).clips;
  trainer::Trainer t(cfg);
  const auto base = t.forward(data);
  if (base.branch1.front().length() != 32) throw Error("end-to-end check expected 32 frames");
  t.model().zero_grad();
  backward(base.total);
  auto& params = t.model().parameters();
  double biggest = 0.0;
  std::vector<Tensor> analytic;
  for (auto& p : params) {
    analytic.push_back(p.var.grad());
    for (double g : p.var.grad().values()) biggest = std::max(biggest, std::abs(g));
  }
  const double floor = std::max(1e-4 * biggest, 1e-8);
  const double h = 1e-6;
  auto same_masks = [&](const trainer::ForwardPass& fp) {
    for (std::size_t b = 0; b < fp.masks.size(); ++b)
      if (fp.masks[b].keep != base.masks[b].keep) return false;
    return true;
  };
  double worst_e2e = 0.0;
  std::size_t probed = 0, kinks = 0;
  for (std::size_t a = 0; a < params.size(); ++a) {
    Tensor& value = params[a].var.mutable_value();
    const std::size_t stride = std::max<std::size_t>(1, value.size() / 4);
    for (std::size_t i = 0; i < value.size(); i += stride) {
      const double orig = value[i];
      value[i] = orig + h;
      const auto up = t.forward(data);
      value[i] = orig - h;
      const auto down = t.forward(data);
      value[i] = orig;
      if (!same_masks(up) || !same_masks(down)) {
        ++kinks;
        continue;
      }
      const double numeric = (up.total.item() - down.total.item()) / (2 * h);
      const double an = analytic[a][i];
      worst_e2e = std::max(worst_e2e, std::abs(an - numeric) / std::max({std::abs(an), std::abs(numeric), floor}));
      ++probed;
    }
  }
  o.detail = fmt("ops worst rel %.2e; end-to-end worst rel %.2e over %.0f coordinates (%.0f mask kinks skipped)",
                 worst_op, worst_e2e, static_cast<double>(probed), static_cast<double>(kinks));
  o.require(worst_op < tol && worst_e2e < tol && probed > 100, o.detail);
  return o;
}

Outcome mask_invariants() {
  Outcome o;
  Rng rng(303);
  std::vector<std::size_t> lengths;
  for (std::size_t L = 2; L <= 64; ++L) lengths.push_back(L);
  for (int i = 0; i < 150; ++i) lengths.push_back(static_cast<std::size_t>(rng.uniform_int(65, 600)));
  lengths.push_back(600);
  const double ratios[] = {0.01, 0.1, 0.3, 0.5};
  std::size_t cases = 0;
  double worst_sum = 0.0;
  for (std::size_t L : lengths) {
    for (double r : ratios) {
      const auto H = static_cast<std::size_t>(rng.uniform_int(1, 4));
      std::vector<Tensor> q1, q2, k;
      for (std::size_t h = 0; h < H; ++h) {
        q1.push_back(random_tensor({8}, rng, -3, 3));
        q2.push_back(random_tensor({8}, rng, -3, 3));
        k.push_back(random_tensor({L, 8}, rng, -3, 3));
      }
      const auto scores = maskgen::frame_scores(q1, q2, k);
      worst_sum = std::max(worst_sum, std::abs(std::accumulate(scores.s.begin(), scores.s.end(), 0.0) -
                                               static_cast<double>(H)));
      const auto m = maskgen::positive_mask(scores, r);
      const auto n = maskgen::negative_mask(m);
      const auto expected =
          std::clamp<std::size_t>(static_cast<std::size_t>(std::llround(r * static_cast<double>(L))), 1, L - 1);
      o.require(m.dropped() == expected, fmt("L=%.0f r=%.2f dropped %.0f", static_cast<double>(L), r,
                                             static_cast<double>(m.dropped())));
      double kept_min = INFINITY, dropped_max = -INFINITY;
      for (std::size_t l = 0; l < L; ++l) {
        o.require(n.keep[l] == !m.keep[l], "negative mask is not the complement");
        if (m.keep[l]) {
          kept_min = std::min(kept_min, scores.s[l]);
        } else {
          dropped_max = std::max(dropped_max, scores.s[l]);
        }
      }
      o.require(dropped_max <= kept_min, "a dropped frame outscored a kept one");
      const dsp::FrameMatrix f(random_tensor({L, 5}, rng, -14, 2));
      const auto pos = maskgen::apply_mask(f, m), neg = maskgen::apply_mask(f, n);
      for (std::size_t i = 0; i < f.frames().size(); ++i)
        o.require(pos.frames()[i] + neg.frames()[i] == f.frames()[i], "masked views do not sum to the input");
      ++cases;
    }
  }
  o.require(worst_sum <= 1e-9, fmt("score sum off by %.2e", worst_sum));
  if (o.pass) {
    o.detail = fmt("%.0f (L, r) cases, L in 2..600; worst |sum s - H| %.2e", static_cast<double>(cases), worst_sum);
  }
  return o;
}

Outcome closed_form_losses() {
  Outcome o;
  const std::size_t Dp = repr::kProjectionDim;
  const double lambda = 0.005;
  Tensor eye = Tensor::matrix(Dp, Dp), zero = Tensor::matrix(Dp, Dp);
  for (std::size_t i = 0; i < Dp; ++i) eye.at(i, i) = 1.0;
  o.require(objectives::l_pos(eye, lambda) == 0.0, "l_pos(I) != 0");
  o.require(objectives::l_pos(zero, lambda) == static_cast<double>(Dp), "l_pos(0) != D_p");
  o.require(objectives::l_neg(zero, lambda) == 0.0, "l_neg(0) != 0");
  o.require(objectives::l_neg(eye, lambda) == lambda * static_cast<double>(Dp), "l_neg(I) != lambda D_p");
  const double below = std::nextafter(1.0, 0.0), above = std::nextafter(1.0, 2.0);
  o.require(objectives::smooth_l1(1.0) == 0.5 && objectives::smooth_l1(-1.0) == 0.5, "smooth_l1(+-1) != 0.5");
  o.require(std::abs(objectives::smooth_l1(below) - 0.5) < 1e-15 && std::abs(objectives::smooth_l1(above) - 0.5) < 1e-15,
            "smooth_l1 jumps at |x| = 1");
  Rng rng(404);
  const Tensor x = random_tensor({20, 16}, rng, -14, 2);
  o.require(objectives::pred_loss(x, ad::Var::constant(x), std::vector<std::size_t>{0, 3, 7, 19}).item() == 0.0,
            "prediction loss of a perfect reconstruction != 0");
  if (o.pass) o.detail = "l_pos(I)=0, l_pos(0)=256, l_neg(0)=0, l_neg(I)=1.28, smooth_l1 continuous, L_pred=0";
  return o;
}

Outcome dsp_correctness() {
  Outcome o;
  Rng rng(505);
  double worst_dft = 0.0, worst_parseval = 0.0, worst_peak_db = INFINITY;
  const auto win = dsp::make_window(dsp::Window::kHann, 256);
  for (int t = 0; t < 20; ++t) {
    const auto len = static_cast<std::size_t>(rng.uniform_int(256, 4000));
    dsp::Waveform w(std::vector<double>(len), 16000);
    for (double& v : w.samples) v = rng.uniform(-1, 1);
    const auto spec = dsp::stft(w, 256, 128, dsp::Window::kHann);
    for (std::size_t l = 0; l < spec.frames; ++l) {
      std::vector<double> frame(256);
      for (std::size_t i = 0; i < 256; ++i) frame[i] = w.samples[l * 128 + i] * win[i];
      const auto ref = oracle::dft(frame);
      double num = 0, den = 0, energy = 0, spectral = 0;
      for (std::size_t k = 0; k < 129; ++k) {
        num += std::norm(spec.at(l, k) - ref[k]);
        den += std::norm(ref[k]);
        spectral += (k == 0 || k == 128 ? 1.0 : 2.0) * std::norm(spec.at(l, k));
      }
      for (double v : frame) energy += v * v;
      worst_dft = std::max(worst_dft, std::sqrt(num / den));
      worst_parseval = std::max(worst_parseval, std::abs(energy - spectral / 256.0) / energy);
    }
  }
  for (std::size_t k0 : {3u, 10u, 64u, 127u}) {
    std::vector<double> x(256 * 4);
    for (std::size_t i = 0; i < x.size(); ++i)
      x[i] = std::sin(2 * std::numbers::pi * static_cast<double>(k0 * i) / 256.0);
    const auto spec = dsp::stft(dsp::Waveform(x, 16000), 256, 128, dsp::Window::kRectangular);
    for (std::size_t l = 0; l < spec.frames; ++l) {
      const double peak = std::abs(spec.at(l, k0));
      for (std::size_t k = 0; k < spec.bins; ++k) {
        if (k == k0) continue;
        worst_peak_db = std::min(worst_peak_db, 20 * std::log10(peak / std::max(std::abs(spec.at(l, k)), 1e-300)));
      }
    }
  }
  dsp::Waveform w(std::vector<double>(16000), 16000);
  for (double& v : w.samples) v = rng.uniform(-0.5, 0.5);
  const auto mel = dsp::log_mel(w, dsp::SpectrogramConfig{});
  o.require(mel.bins() == 128, "default log-mel does not have 128 bands");

  bool aug_ok = dsp::augment(w, dsp::AugmentationConfig::none(), rng).samples == w.samples;
  auto only = dsp::AugmentationConfig::none();
  only.p_polarity = 1.0;
  const auto flipped = dsp::augment(w, only, rng);
  for (std::size_t i = 0; i < w.size(); ++i) aug_ok = aug_ok && flipped.samples[i] == -w.samples[i];
  only = dsp::AugmentationConfig::none();
  only.p_gain = 1.0;
  only.gain_min_db = only.gain_max_db = -6.0;
  const auto quieter = dsp::augment(w, only, rng);
  const double g = std::pow(10.0, -6.0 / 20.0);
  for (std::size_t i = 0; i < w.size(); ++i) aug_ok = aug_ok && quieter.samples[i] == w.samples[i] * g;

  o.require(worst_dft < 1e-9, fmt("STFT vs DFT rel error %.2e", worst_dft));
  o.require(worst_parseval < 1e-9, fmt("Parseval rel error %.2e", worst_parseval));
  o.require(worst_peak_db >= 20.0, fmt("bin-centred sine leaks within %.1f dB", worst_peak_db));
  o.require(aug_ok, "augmentation identity/polarity/gain closed forms failed");
  if (o.pass) {
    o.detail = fmt("STFT vs DFT %.2e, Parseval %.2e, sine peak >= %.0f dB above other bins, 128 bands, augment exact",
                   worst_dft, worst_parseval, worst_peak_db);
  }
  return o;
}

Outcome training_sanity() {
  Outcome o;
  synth::ToneConfig tc;
  auto cfg = trainer::TrainConfig::toy();
  cfg.batch_size = 8;
  const auto batch = synth::genre_dataset(8, tc, 606).clips;
  trainer::Trainer t(cfg);
  double first = 0, last = 0;
  for (int s = 1; s <= 200; ++s) {
    const auto st = t.train_step(batch);
    if (s == 1) first = st.loss.total;
    if (s == 200) last = st.loss.total;
  }
  o.require(last < first, fmt("total loss rose from %.4f to %.4f", first, last));

  // Determinism and resume: 16 clips, B=8, 2 epochs, checkpoint every 2 steps.
  const auto data = synth::genre_dataset(16, tc, 607).clips;
  cfg.epochs = 2;
  cfg.checkpoint_every = 2;
  auto run = [&](const std::string& name, std::optional<std::uint64_t> stop) {
    trainer::PretrainOptions opts;
    opts.out_dir = scratch(name);
    opts.max_steps = stop;
    trainer::pretrain(cfg, data, opts);
    return opts.out_dir;
  };
  const fs::path a = run("run_a", std::nullopt), b = run("run_b", std::nullopt);
  const bool identical = slurp(a / "loss.csv") == slurp(b / "loss.csv") && !slurp(a / "loss.csv").empty();
  o.require(identical, "two fixed-seed runs wrote different loss CSVs");
  const fs::path c = run("run_c", 2);
  trainer::PretrainOptions resume;
  resume.out_dir = c;
  resume.resume_from = c / "checkpoint-2.bin";
  trainer::pretrain(cfg, data, resume);
  const bool resumed = slurp(a / "loss.csv") == slurp(c / "loss.csv") &&
                       slurp(a / "checkpoint-4.bin") == slurp(c / "checkpoint-4.bin") &&
                       !slurp(c / "checkpoint-4.bin").empty();
  o.require(resumed, "resuming from step 2 did not reproduce the uninterrupted run");
  if (o.pass) {
    o.detail = fmt("fixed batch B=8: total %.3f at step 1 -> %.3f at step 200; loss CSV bit-identical; "
                   "resume from step 2 bit-identical at step 4",
                   first, last);
  }
  return o;
}

Outcome gradient_routing() {
  Outcome o;
  auto cfg = trainer::TrainConfig::toy();
  cfg.batch_size = 4;
  synth::ToneConfig tc;
  const auto data = synth::genre_dataset(4, tc, 707).clips;
  auto grads_with = [&](bool pred) {
    trainer::Trainer t(cfg);
    const auto fp = t.forward(data);
    t.model().zero_grad();
    const auto zero = ad::Var::constant(Tensor(Shape{}, 0.0));
    ad::backward(objectives::total_loss(pred ? fp.l_pred : zero, pred ? zero : fp.l_pos, pred ? zero : fp.l_neg));
    std::vector<std::pair<std::string, Tensor>> g;
    for (const auto& p : t.model().parameters()) g.emplace_back(p.name, p.var.grad());
    return g;
  };
  const auto from_pred = grads_with(true), from_contrastive = grads_with(false);
  bool transformer_live = false, encoder_live = false, projection_live = false;
  std::size_t checked = 0;
  for (std::size_t i = 0; i < from_pred.size(); ++i) {
    const std::string& name = from_pred[i].first;
    const bool transformer = name.starts_with("transformer.") || name.starts_with("predict.");
    const auto& silent = transformer ? from_contrastive[i].second : from_pred[i].second;
    const auto& live = transformer ? from_pred[i].second : from_contrastive[i].second;
    for (double v : silent.values()) o.require(v == 0.0, name + " received gradient from the wrong loss");
    const bool any = std::any_of(live.values().begin(), live.values().end(), [](double v) { return v != 0.0; });
    if (transformer) transformer_live |= any;
    if (name.starts_with("encoder.")) encoder_live |= any;
    if (name.starts_with("projection.")) projection_live |= any;
    ++checked;
  }
  o.require(transformer_live && encoder_live && projection_live, "a module received no gradient from its own loss");
  if (o.pass) {
    o.detail = fmt("%.0f parameters: transformer gets gradient only from L_pred, encoder and projection only "
                   "from L_pos + L_neg",
                   static_cast<double>(checked));
  }
  return o;
}

Outcome toy_experiment() {
  Outcome o;
  const synth::ToneConfig tc;
  const auto test = synth::genre_dataset(200, tc, 999);
  const auto y_test = eval::ProbeTargets::from_classes(test.labels, 2);
  double random_sum = 0, none_sum = 0, full_sum = 0;
  std::string per_seed;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const auto train = synth::genre_dataset(200, tc, 100 + seed);
    const auto y_train = eval::ProbeTargets::from_classes(train.labels, 2);
    auto cfg = trainer::TrainConfig::toy();
    cfg.seed = seed;
    auto probe_auc = [&](trainer::Trainer& t) {
      const auto x_train = eval::embed_clips(t.model().encoder, cfg.spectrogram, train.clips);
      const auto x_test = eval::embed_clips(t.model().encoder, cfg.spectrogram, test.clips);
      eval::ProbeConfig pc;
      pc.seed = seed;
      return eval::evaluate_probe(eval::train_probe(x_train, y_train, pc), x_test, y_test).roc_auc;
    };
    trainer::Trainer random_init(cfg);
    const double r = probe_auc(random_init);
    cfg.mask_mode = trainer::MaskMode::kNone;
    auto none = trainer::pretrain(cfg, train.clips, {});
    const double n = probe_auc(none);
    cfg.mask_mode = trainer::MaskMode::kPositiveNegative;
    auto full = trainer::pretrain(cfg, train.clips, {});
    const double f = probe_auc(full);
    random_sum += r;
    none_sum += n;
    full_sum += f;
    per_seed += fmt(" [seed %.0f: %.4f/%.4f/%.4f]", static_cast<double>(seed), r, n, f);
  }
  const double r = random_sum / 3, n = none_sum / 3, f = full_sum / 3;
  o.detail = fmt("mean probe ROC-AUC random-init %.4f, no-mask %.4f, pos+neg %.4f", r, n, f) + per_seed;
  o.require(f >= n - 0.01 && n >= r + 0.05 && f >= r + 0.05, o.detail);
  return o;
}

Outcome metric_oracles() {
  Outcome o;
  Rng rng(909);
  double worst = 0.0;
  bool ranks_exact = true;
  for (int t = 0; t < 100; ++t) {
    const auto n = static_cast<std::size_t>(rng.uniform_int(4, 40));
    std::vector<double> s(n);
    std::vector<int> y(n);
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = std::round(rng.uniform(0, 8)) / 2;
      y[i] = rng.bernoulli(0.4);
    }
    y[0] = 1;
    y[1] = 0;
    worst = std::max(worst, abs_err(eval::roc_auc(s, y), oracle::roc_pairs(s, y)));
    worst = std::max(worst, abs_err(eval::pr_auc(s, y), oracle::ap_threshold_sweep(s, y)));

    const auto Q = static_cast<std::size_t>(rng.uniform_int(1, 6));
    const auto R = static_cast<std::size_t>(rng.uniform_int(3, 25));
    eval::RetrievalSet rs;
    rs.queries = random_tensor({Q, 3}, rng);
    rs.references = random_tensor({R, 3}, rng);
    for (auto& v : rs.references.values()) v = std::round(v * 4) / 4;
    for (std::size_t i = 0; i < R; ++i) rs.reference_clique.push_back(static_cast<int>(rng.uniform_int(0, 3)));
    for (std::size_t q = 0; q < Q; ++q) rs.query_clique.push_back(rs.reference_clique[rng.uniform_int(0, R - 1)]);
    const auto m = eval::retrieval_eval(rs);
    const auto ref = oracle::retrieval(oracle::to_matrix(rs.queries), oracle::to_matrix(rs.references), rs.query_clique,
                                       rs.reference_clique);
    worst = std::max({worst, abs_err(m.map, ref.map), abs_err(m.precision_at_10, ref.p10)});
    ranks_exact = ranks_exact && m.mr1 == ref.mr1;
  }
  // hand cases
  bool hand = eval::roc_auc(std::vector{1.0, 2.0, 3.0, 4.0}, std::vector{0, 0, 1, 1}) == 1.0 &&
              eval::roc_auc(std::vector{4.0, 3.0, 2.0, 1.0}, std::vector{1, 0, 1, 0}) == 0.75 &&
              eval::pr_auc(std::vector{4.0, 3.0, 2.0, 1.0}, std::vector{0, 1, 0, 0}) == 0.5;
  eval::RetrievalSet rs;
  rs.queries = Tensor({1, 1}, 1.0);
  rs.references = Tensor({4, 1}, std::vector<double>{4, 3, 2, 1});
  rs.query_clique = {7};
  rs.reference_clique = {7, 1, 7, 2};
  const auto m = eval::retrieval_eval(rs);
  const double expected_ap = (1.0 + 2.0 / 3.0) / 2.0;
  hand = hand && std::abs(m.map - expected_ap) < 1e-15 && m.mr1 == 1.0 && m.precision_at_10 == 0.2;
  o.require(worst <= 1e-9, fmt("metric vs brute force %.2e", worst));
  o.require(ranks_exact, "MR1 differs from the brute-force rank");
  o.require(hand, "hand cases not reproduced");
  if (o.pass) {
    o.detail = fmt("100 random instances, worst error %.2e, MR1 exact; hand cases incl. AP=(1+2/3)/2 = %.6f", worst,
                   expected_ap);
  }
  return o;
}

Outcome ratio_sweep_rows() {
  Outcome o;
  auto base = trainer::TrainConfig::toy();
  base.batch_size = 8;
  base.epochs = 1;
  synth::ToneConfig tc;
  const auto train = synth::genre_dataset(16, tc, 1001);
  const auto y = eval::ProbeTargets::from_classes(train.labels, 2);
  const std::vector<double> ratios{0.01, 0.1, 0.3, 0.5};
  const auto rows = eval::ratio_sweep(
      base, ratios,
      [&](const trainer::TrainConfig& c, const trainer::PretrainOptions& opts) {
        return trainer::pretrain(c, train.clips, opts);
      },
      [&](trainer::Trainer& t) {
        const auto x = eval::embed_clips(t.model().encoder, base.spectrogram, train.clips);
        eval::ProbeConfig pc;
        pc.epochs = 20;
        return eval::evaluate_probe(eval::train_probe(x, y, pc), x, y).roc_auc;
      });
  const fs::path dir = scratch("sweep");
  {
    std::ofstream out(dir / "sweep.csv");
    eval::write_sweep_csv(out, rows);
  }
  std::ifstream in(dir / "sweep.csv");
  std::size_t lines = 0;
  for (std::string line; std::getline(in, line);) ++lines;
  o.require(rows.size() == ratios.size() && lines == ratios.size() + 1, "sweep did not emit one row per ratio");
  std::string counts;
  for (std::size_t i = 0; i < rows.size() && o.pass; ++i) {
    const auto& row = rows[i];
    o.require(row.ratio == ratios[i], "row order differs from the ratio list");
    o.require(row.verified && row.expected_dropped == maskgen::drop_count(row.frames, row.ratio),
              fmt("r=%.2f masked-count verification failed", row.ratio));
    counts += fmt(" r=%.2f:%.0f", row.ratio, static_cast<double>(row.expected_dropped));
  }
  if (o.pass) o.detail = "4 rows, every step's positive views verified; frames dropped of 31 per ratio" + counts;
  return o;
}

}  // namespace

int main() {
  struct Criterion {
    int id;
    const char* title;
    double budget_s;  // 0: no limit
    Outcome (*run)();
  };
  const Criterion criteria[] = {
      {1, "formula oracles", 10, formula_oracles},
      {2, "gradient suite", 120, gradient_suite},
      {3, "mask invariants", 30, mask_invariants},
      {4, "closed-form loss cases", 0, closed_form_losses},
      {5, "DSP correctness", 0, dsp_correctness},
      {6, "training sanity", 300, training_sanity},
      {7, "gradient routing", 0, gradient_routing},
      {8, "directional toy experiment", 1800, toy_experiment},
      {9, "metric oracles", 0, metric_oracles},
      {10, "ratio sweep harness", 0, ratio_sweep_rows},
  };
  int failures = 0;
  for (const auto& c : criteria) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome out;
    try {
      out = c.run();
    } catch (const std::exception& e) {
      out.pass = false;
      out.detail = std::string("exception: ") + e.what();
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (c.budget_s > 0 && secs > c.budget_s) {
      out.pass = false;
      out.detail += fmt(" (over the %.0f s budget)", c.budget_s);
    }
    failures += out.pass ? 0 : 1;
    std::printf("%s criterion %d %s: %s [%.1f s]\n", out.pass ? "PASS" : "FAIL", c.id, c.title, out.detail.c_str(),
                secs);
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
