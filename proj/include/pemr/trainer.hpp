#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "pemr/attention.hpp"
#include "pemr/dsp.hpp"
#include "pemr/maskgen.hpp"
#include "pemr/optim.hpp"
#include "pemr/repr.hpp"

namespace pemr::trainer {

/// Which frame views feed the contrastive objective.
enum class MaskMode {
  kPositiveNegative,  // Z'' from attention-masked positive view, plus the negative term
  kPositiveOnly,      // positive view only, no negative term
  kNone,              // unmasked F'' against F', no transformer
};

std::string_view to_string(MaskMode m);
MaskMode parse_mask_mode(std::string_view s);

struct TrainConfig {
  std::size_t batch_size = 8;
  std::size_t epochs = 20;
  double lr = 3e-4;
  double weight_decay = 1e-6;
  double mask_ratio = 0.1;
  double lambda = 0.005;
  std::size_t seg_len = 65536;
  std::uint64_t seed = 0;
  std::size_t checkpoint_every = 0;  // steps; 0 writes one per epoch
  MaskMode mask_mode = MaskMode::kPositiveNegative;

  dsp::SpectrogramConfig spectrogram;
  dsp::AugmentationConfig augmentation;
  attention::TransformerConfig transformer;
  repr::EncoderConfig encoder;

  void validate() const;
  std::size_t frames_per_segment() const;

  /// Desk-scale defaults (full-size model, B = 8, 20 epochs).
  static TrainConfig desk() { return {}; }
  /// Small model for fast experiments and tests: 32 mel bands, 4096-sample
  /// segments (31 frames), narrow encoder, 20 epochs at lr 1e-3.
  static TrainConfig toy();
};

/// Flat key=value text, one entry per line, every field present.
std::string to_text(const TrainConfig& cfg);
/// Parses key=value text on top of the defaults; unknown keys are rejected.
TrainConfig parse_config(std::string_view text, TrainConfig base = {});
TrainConfig load_config(const std::filesystem::path& path);
/// Applies one key=value assignment.
void set_config_value(TrainConfig& cfg, const std::string& key, const std::string& value);

/// Predicting module, encoder f and projection head g. Branches share all
/// parameters.
class Model {
 public:
  explicit Model(const TrainConfig& cfg);
  Model(Model&&) = default;
  Model& operator=(Model&&) = default;
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;

  attention::PredictingModule transformer;
  repr::FcnEncoder encoder;
  repr::ProjectionHead projection;

  /// Every parameter, in the order transformer, encoder, projection.
  std::vector<ad::Parameter>& parameters() { return all_.params(); }
  const std::vector<ad::Parameter>& parameters() const { return all_.params(); }
  void zero_grad() { all_.zero_grad(); }

  /// Evaluation-mode 512-d representations for a batch of equal-length frames.
  Tensor represent(std::span<const dsp::FrameMatrix> frames);

 private:
  ad::ParameterStore all_;
};

struct LossComponents {
  double l_pred = 0, l_pos = 0, l_neg = 0, total = 0;
};

/// Graph for one batch, before the optimiser runs.
struct ForwardPass {
  ad::Var l_pred, l_pos, l_neg, total;
  std::vector<dsp::FrameMatrix> branch1;       // F'
  std::vector<dsp::FrameMatrix> branch2;       // F''
  std::vector<dsp::FrameMatrix> positive;      // F''_pos
  std::vector<dsp::FrameMatrix> negative;      // F''_neg (empty unless pos+neg mode)
  std::vector<maskgen::MaskMatrix> masks;      // positive masks (empty in kNone)
  std::vector<maskgen::FrameScores> scores;    // frame scores behind each mask
  std::size_t zero_variance_features = 0;
};

struct StepStats {
  std::uint64_t step = 0;  // 1-based index of the step just taken
  LossComponents loss;
  std::vector<std::size_t> dropped;  // zero rows per F''_pos
  std::size_t frames = 0;            // L
  std::vector<maskgen::FrameScores> scores;
  std::vector<maskgen::MaskMatrix> masks;
};

class Trainer {
 public:
  explicit Trainer(TrainConfig cfg);

  const TrainConfig& config() const { return cfg_; }
  Model& model() { return model_; }
  const Model& model() const { return model_; }
  ad::Adam& optimizer() { return adam_; }
  const ad::Adam& optimizer() const { return adam_; }
  /// Steps taken so far.
  std::uint64_t step() const { return step_; }

  /// Builds the loss graph for the next step without updating anything
  /// except batch-norm running statistics.
  ForwardPass forward(std::span<const dsp::Waveform> batch);

  /// Adds the gradient of the next step's total loss to every parameter,
  /// matching backward(forward(batch).total) up to summation order. Each
  /// example's transformer graph and each encoder pass is differentiated
  /// and released in turn, so peak memory is one encoder pass.
  StepStats accumulate_gradients(std::span<const dsp::Waveform> batch);

  /// One forward, backward and Adam update.
  StepStats train_step(std::span<const dsp::Waveform> batch);

  void restore(std::uint64_t step, const ad::Adam& state);
  void set_step(std::uint64_t step) { step_ = step; }

 private:
  void build_views(std::span<const dsp::Waveform> batch, ForwardPass& fp,
                   const std::function<void(const ad::Var&)>& on_pred);

  TrainConfig cfg_;
  Model model_;
  ad::Adam adam_;
  std::uint64_t step_ = 0;
};

// ---------------------------------------------------------------------------
// Checkpoints

inline constexpr char kCheckpointMagic[8] = {'P', 'E', 'M', 'R', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedTensor {
  std::string name;
  Tensor value;
};

struct Checkpoint {
  std::string config_text;
  std::uint64_t step = 0;
  std::vector<NamedTensor> params;
  std::vector<NamedTensor> buffers;  // batch-norm running statistics
  std::uint64_t adam_steps = 0;
  std::vector<Tensor> adam_m, adam_v;
};

Checkpoint capture(const Trainer& trainer);
void save_checkpoint(const std::filesystem::path& path, const Trainer& trainer);
void write_checkpoint(std::ostream& out, const Checkpoint& ckpt);
Checkpoint read_checkpoint(std::istream& in);
Checkpoint load_checkpoint(const std::filesystem::path& path);
/// Copies checkpoint values into a trainer built from a compatible config.
void apply_checkpoint(Trainer& trainer, const Checkpoint& ckpt);
/// Builds a trainer from the checkpoint's own config and loads it.
Trainer trainer_from_checkpoint(const Checkpoint& ckpt);

// ---------------------------------------------------------------------------
// Pre-training loop

struct PretrainOptions {
  std::filesystem::path out_dir;                      // empty: no files written
  std::optional<std::filesystem::path> resume_from;
  std::optional<std::uint64_t> max_steps;             // stop after this global step
  std::function<void(const StepStats&)> on_step;
  std::ostream* log = nullptr;
};

std::size_t steps_per_epoch(std::size_t dataset_size, std::size_t batch_size);

/// Loads every *.wav in a directory, sorted by file name.
std::vector<dsp::Waveform> load_dataset(const std::filesystem::path& dir);

/// Runs epochs x steps over a shuffled dataset (last partial batch dropped),
/// writing loss.csv and checkpoint-<step>.bin into out_dir when set.
Trainer pretrain(const TrainConfig& cfg, std::span<const dsp::Waveform> dataset, const PretrainOptions& opts);
Trainer pretrain(const TrainConfig& cfg, const std::filesystem::path& data_dir, const PretrainOptions& opts);

inline constexpr std::string_view kLossCsvHeader = "step,l_pred,l_pos,l_neg,total";
std::string loss_csv_row(const StepStats& s);

}  // namespace pemr::trainer
