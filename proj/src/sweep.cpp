#include <algorithm>
#include <limits>
#include <ostream>

#include "pemr/eval.hpp"
#include "pemr/maskgen.hpp"

namespace pemr::eval {

std::vector<SweepRow> ratio_sweep(const trainer::TrainConfig& base, std::span<const double> ratios,
                                  const PretrainFn& pretrain, const ProbeFn& probe) {
  std::vector<SweepRow> rows;
  for (double r : ratios) {
    trainer::TrainConfig cfg = base;
    cfg.mask_ratio = r;
    cfg.validate();

    SweepRow row;
    row.ratio = r;
    row.frames = cfg.frames_per_segment();
    row.expected_dropped = maskgen::drop_count(row.frames, r);
    row.min_dropped = std::numeric_limits<std::size_t>::max();
    bool all_match = true;

    trainer::PretrainOptions opts;
    opts.on_step = [&](const trainer::StepStats& st) {
      ++row.steps;
      if (st.dropped.empty()) all_match = false;
      for (std::size_t d : st.dropped) {
        row.min_dropped = std::min(row.min_dropped, d);
        row.max_dropped = std::max(row.max_dropped, d);
        all_match = all_match && d == row.expected_dropped;
      }
    };
    trainer::Trainer t = pretrain(cfg, opts);
    if (row.steps == 0) row.min_dropped = 0;
    row.verified = all_match && row.steps > 0;
    row.metric = probe(t);
    rows.push_back(row);
  }
  return rows;
}

void write_sweep_csv(std::ostream& out, std::span<const SweepRow> rows) {
  out << kSweepCsvHeader << "\n";
  for (const auto& r : rows) {
    out << r.ratio << "," << r.metric << "," << r.frames << "," << r.expected_dropped << "," << r.min_dropped << ","
        << r.max_dropped << "," << r.steps << "," << (r.verified ? "true" : "false") << "\n";
  }
}

}  // namespace pemr::eval
