#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numeric>

#include "pemr/error.hpp"
#include "pemr/eval.hpp"
#include "pemr/optim.hpp"
#include "pemr/rng.hpp"

namespace pemr::eval {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMatrix>;
using MutMap = Eigen::Map<RowMatrix>;

ProbeTargets ProbeTargets::from_classes(std::span<const int> classes, std::size_t n_classes) {
  ProbeTargets t;
  t.task = ProbeTask::kMultiClass;
  t.y = Tensor::matrix(classes.size(), n_classes);
  for (std::size_t i = 0; i < classes.size(); ++i) {
    if (classes[i] < 0 || static_cast<std::size_t>(classes[i]) >= n_classes) {
      throw ConfigError("class id " + std::to_string(classes[i]) + " outside [0, " + std::to_string(n_classes) + ")");
    }
    t.y.at(i, static_cast<std::size_t>(classes[i])) = 1.0;
  }
  return t;
}

ProbeTargets ProbeTargets::from_tags(Tensor multi_hot) {
  if (multi_hot.rank() != 2) throw ShapeError("tag targets must be [N, T]");
  ProbeTargets t;
  t.task = ProbeTask::kMultiLabel;
  t.y = std::move(multi_hot);
  return t;
}

namespace {

void check_labels(const ProbeTargets& t) {
  const std::size_t n = t.size(), c = t.outputs();
  if (t.task == ProbeTask::kMultiClass) {
    std::size_t present = 0;
    for (std::size_t k = 0; k < c; ++k) {
      double col = 0;
      for (std::size_t i = 0; i < n; ++i) col += t.y.at(i, k);
      present += col > 0 ? 1 : 0;
    }
    if (present < 2) throw DegenerateLabelsError("probe training needs at least two classes present");
  } else {
    for (std::size_t k = 0; k < c; ++k) {
      double col = 0;
      for (std::size_t i = 0; i < n; ++i) col += t.y.at(i, k);
      if (col > 0 && col < static_cast<double>(n)) return;
    }
    throw DegenerateLabelsError("probe training needs a tag with both positive and negative examples");
  }
}

RowMatrix standardized(const Probe& p, const Tensor& x) {
  RowMatrix z = ConstMap(x.data(), static_cast<Eigen::Index>(x.rows()), static_cast<Eigen::Index>(x.cols()));
  for (Eigen::Index j = 0; j < z.cols(); ++j) {
    z.col(j) = (z.col(j).array() - p.mean[j]) / p.scale[j];
  }
  return z;
}

ConstMap as_matrix(const Tensor& t) {
  const auto cols = t.rank() == 1 ? 1 : t.cols();
  const auto rows = t.rank() == 1 ? t.dim(0) : t.rows();
  return ConstMap(t.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

RowMatrix activate(RowMatrix z, ProbeTask task) {
  if (task == ProbeTask::kMultiClass) {
    for (Eigen::Index i = 0; i < z.rows(); ++i) {
      const double m = z.row(i).maxCoeff();
      z.row(i) = (z.row(i).array() - m).exp();
      z.row(i) /= z.row(i).sum();
    }
  } else {
    z = (1.0 / (1.0 + (-z.array()).exp())).matrix();
  }
  return z;
}

// Forward through the probe on standardised inputs; hidden activations are
// returned through `hidden` when the probe has one.
RowMatrix logits(const std::vector<Tensor>& w, const RowMatrix& x, RowMatrix* hidden) {
  if (w.size() == 2) {
    RowMatrix z = x * as_matrix(w[0]);
    z.rowwise() += as_matrix(w[1]).transpose().row(0);
    return z;
  }
  RowMatrix h = x * as_matrix(w[0]);
  h.rowwise() += as_matrix(w[1]).transpose().row(0);
  h = h.cwiseMax(0.0);
  RowMatrix z = h * as_matrix(w[2]);
  z.rowwise() += as_matrix(w[3]).transpose().row(0);
  if (hidden) *hidden = std::move(h);
  return z;
}

void store(Tensor& dst, const RowMatrix& src) {
  MutMap(dst.data(), src.rows(), src.cols()) = src;
}

}  // namespace

Tensor Probe::predict(const Tensor& features) const {
  if (features.rank() != 2 || features.cols() != mean.size()) {
    throw ShapeError("probe expects [N, " + std::to_string(mean.size()) + "] features, got " +
                     shape_string(features.shape()));
  }
  const RowMatrix p = activate(logits(weights, standardized(*this, features), nullptr), task);
  Tensor out = Tensor::matrix(static_cast<std::size_t>(p.rows()), static_cast<std::size_t>(p.cols()));
  store(out, p);
  return out;
}

Probe train_probe(const Tensor& features, const ProbeTargets& targets, const ProbeConfig& cfg) {
  if (features.rank() != 2 || features.rows() != targets.size()) {
    throw ShapeError("probe features " + shape_string(features.shape()) + " do not match " +
                     std::to_string(targets.size()) + " targets");
  }
  if (cfg.epochs == 0 || cfg.batch_size == 0 || !(cfg.lr > 0)) throw ConfigError("invalid probe configuration");
  check_labels(targets);

  const std::size_t n = features.rows(), e = features.cols(), c = targets.outputs();
  Probe probe;
  probe.task = targets.task;
  probe.mean.assign(e, 0.0);
  probe.scale.assign(e, 1.0);
  for (std::size_t j = 0; j < e; ++j) {
    double m = 0, v = 0;
    for (std::size_t i = 0; i < n; ++i) m += features.at(i, j);
    m /= static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) v += (features.at(i, j) - m) * (features.at(i, j) - m);
    const double sd = std::sqrt(v / static_cast<double>(n));
    probe.mean[j] = m;
    probe.scale[j] = sd > 1e-12 ? sd : 1.0;
  }

  Rng rng = Rng::derive(cfg.seed, {0x70726f6265ULL});
  ad::ParameterStore store_;
  if (cfg.mlp) {
    store_.add_glorot("probe.w1", {e, cfg.hidden}, e, cfg.hidden, rng);
    store_.add_constant("probe.b1", {cfg.hidden}, 0.0);
    store_.add_glorot("probe.w2", {cfg.hidden, c}, cfg.hidden, c, rng);
    store_.add_constant("probe.b2", {c}, 0.0);
  } else {
    store_.add_glorot("probe.w", {e, c}, e, c, rng);
    store_.add_constant("probe.b", {c}, 0.0);
  }
  auto& params = store_.params();
  ad::Adam adam(ad::AdamConfig{cfg.lr, 0.9, 0.999, 1e-8, 0.0});

  const RowMatrix x = standardized(probe, features);
  const ConstMap y = as_matrix(targets.y);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::vector<Tensor> w(params.size());

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng.engine());
    for (std::size_t start = 0; start < n; start += cfg.batch_size) {
      const std::size_t stop = std::min(n, start + cfg.batch_size);
      const auto b = static_cast<Eigen::Index>(stop - start);
      RowMatrix xb(b, static_cast<Eigen::Index>(e)), yb(b, static_cast<Eigen::Index>(c));
      for (Eigen::Index i = 0; i < b; ++i) {
        xb.row(i) = x.row(static_cast<Eigen::Index>(order[start + static_cast<std::size_t>(i)]));
        yb.row(i) = y.row(static_cast<Eigen::Index>(order[start + static_cast<std::size_t>(i)]));
      }
      for (std::size_t k = 0; k < params.size(); ++k) w[k] = params[k].var.value();
      RowMatrix hidden;
      // Softmax cross-entropy and per-tag logistic loss share this gradient.
      const RowMatrix g = (activate(logits(w, xb, &hidden), probe.task) - yb) / static_cast<double>(b);
      auto put = [&](std::size_t k, const RowMatrix& grad) {
        Tensor& dst = params[k].var.mutable_grad();
        Eigen::Map<RowMatrix>(dst.data(), grad.rows(), grad.cols()) = grad;
      };
      if (cfg.mlp) {
        const RowMatrix dh = ((g * as_matrix(w[2]).transpose()).array() * (hidden.array() > 0).cast<double>()).matrix();
        put(0, xb.transpose() * dh);
        put(1, dh.colwise().sum());
        put(2, hidden.transpose() * g);
        put(3, g.colwise().sum());
      } else {
        put(0, xb.transpose() * g);
        put(1, g.colwise().sum());
      }
      adam.step(params);
    }
  }
  for (const auto& p : params) probe.weights.push_back(p.var.value());
  return probe;
}

double accuracy(const Probe& probe, const Tensor& features, const ProbeTargets& targets) {
  const Tensor p = probe.predict(features);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < p.rows(); ++i) {
    const auto row = p.row(i);
    const auto yrow = targets.y.row(i);
    const auto a = std::max_element(row.begin(), row.end()) - row.begin();
    const auto b = std::max_element(yrow.begin(), yrow.end()) - yrow.begin();
    correct += a == b ? 1 : 0;
  }
  return static_cast<double>(correct) / static_cast<double>(p.rows());
}

TagMetrics evaluate_probe(const Probe& probe, const Tensor& features, const ProbeTargets& targets) {
  return macro_metrics(probe.predict(features), targets.y);
}

std::vector<std::size_t> label_fraction_subsample(std::size_t n, double fraction, std::uint64_t seed) {
  if (n == 0) throw ConfigError("cannot subsample an empty dataset");
  if (!(fraction > 0.0 && fraction <= 1.0)) throw ConfigError("label fraction must lie in (0, 1]");
  const auto k = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n))));
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng = Rng::derive(seed, {0x6672616374ULL});
  std::shuffle(idx.begin(), idx.end(), rng.engine());
  idx.resize(k);
  std::sort(idx.begin(), idx.end());
  return idx;
}

Tensor embed_clips(repr::FcnEncoder& encoder, const dsp::SpectrogramConfig& spec,
                   std::span<const dsp::Waveform> clips) {
  Tensor out = Tensor::matrix(clips.size(), repr::kRepresentationDim);
  for (std::size_t i = 0; i < clips.size(); ++i) {
    const dsp::FrameMatrix f = dsp::log_mel(clips[i], spec);
    const Tensor z = encoder.encode_eval(std::span<const dsp::FrameMatrix>(&f, 1));
    std::copy(z.values().begin(), z.values().end(), out.row(i).begin());
  }
  return out;
}

Tensor take_rows(const Tensor& m, std::span<const std::size_t> rows) {
  Tensor out = Tensor::matrix(rows.size(), m.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= m.rows()) throw ShapeError("row index " + std::to_string(rows[i]) + " out of range");
    std::copy(m.row(rows[i]).begin(), m.row(rows[i]).end(), out.row(i).begin());
  }
  return out;
}

}  // namespace pemr::eval
