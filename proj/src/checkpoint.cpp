#include <cstring>
#include <fstream>
#include <sstream>

#include "pemr/error.hpp"
#include "pemr/matrix_io.hpp"
#include "pemr/trainer.hpp"

namespace pemr::trainer {

namespace {

void put_tensor(std::ostream& out, const Tensor& t) {
  binio::put_u32(out, static_cast<std::uint32_t>(t.rank()));
  for (auto d : t.shape()) binio::put_u64(out, d);
  for (double v : t.values()) binio::put_f64(out, v);
}

Tensor get_tensor(std::istream& in) {
  const auto rank = binio::get_u32(in);
  if (rank > 8) throw FormatError("checkpoint tensor rank " + std::to_string(rank) + " is implausible");
  Shape shape(rank);
  std::size_t n = 1;
  for (auto& d : shape) {
    d = binio::get_u64(in);
    if (d > (std::size_t{1} << 32)) throw FormatError("checkpoint tensor dimension is implausible");
    n *= d;
  }
  if (n > (std::size_t{1} << 31)) throw FormatError("checkpoint tensor is implausibly large");
  std::vector<double> values(n);
  for (auto& v : values) v = binio::get_f64(in);
  return Tensor(std::move(shape), std::move(values));
}

void put_named(std::ostream& out, const std::vector<NamedTensor>& list) {
  binio::put_u64(out, list.size());
  for (const auto& nt : list) {
    binio::put_string(out, nt.name);
    put_tensor(out, nt.value);
  }
}

std::vector<NamedTensor> get_named(std::istream& in) {
  const auto n = binio::get_u64(in);
  if (n > 1'000'000) throw FormatError("checkpoint entry count is implausible");
  std::vector<NamedTensor> out;
  for (std::uint64_t i = 0; i < n; ++i) {
    NamedTensor nt;
    nt.name = binio::get_string(in);
    nt.value = get_tensor(in);
    out.push_back(std::move(nt));
  }
  return out;
}

std::string bn_name(std::size_t block, const char* which) {
  return "encoder.block" + std::to_string(block) + ".bn." + which;
}

void copy_checked(Tensor& dst, const NamedTensor& src) {
  if (!dst.same_shape(src.value)) {
    throw ShapeError("checkpoint entry '" + src.name + "' has shape " + shape_string(src.value.shape()) +
                     ", model expects " + shape_string(dst.shape()));
  }
  dst = src.value;
}

}  // namespace

Checkpoint capture(const Trainer& trainer) {
  Checkpoint c;
  c.config_text = to_text(trainer.config());
  c.step = trainer.step();
  for (const auto& p : trainer.model().parameters()) c.params.push_back({p.name, p.var.value()});
  const auto& bn = trainer.model().encoder.bn_states();
  for (std::size_t i = 0; i < bn.size(); ++i) {
    c.buffers.push_back({bn_name(i, "running_mean"), bn[i].running_mean});
    c.buffers.push_back({bn_name(i, "running_var"), bn[i].running_var});
  }
  auto& adam = const_cast<ad::Adam&>(trainer.optimizer());
  c.adam_steps = adam.steps();
  c.adam_m = adam.first_moments();
  c.adam_v = adam.second_moments();
  return c;
}

void write_checkpoint(std::ostream& out, const Checkpoint& c) {
  out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  binio::put_u32(out, kCheckpointVersion);
  binio::put_string(out, c.config_text);
  binio::put_u64(out, c.step);
  put_named(out, c.params);
  put_named(out, c.buffers);
  binio::put_u64(out, c.adam_steps);
  binio::put_u64(out, c.adam_m.size());
  for (std::size_t i = 0; i < c.adam_m.size(); ++i) {
    put_tensor(out, c.adam_m[i]);
    put_tensor(out, c.adam_v[i]);
  }
  if (!out) throw IoError("failed writing checkpoint");
}

Checkpoint read_checkpoint(std::istream& in) {
  char magic[sizeof(kCheckpointMagic)];
  if (!in.read(magic, sizeof(magic)) || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0) {
    throw FormatError("not a checkpoint file (bad magic)");
  }
  const auto version = binio::get_u32(in);
  if (version != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version));
  }
  Checkpoint c;
  c.config_text = binio::get_string(in);
  c.step = binio::get_u64(in);
  c.params = get_named(in);
  c.buffers = get_named(in);
  c.adam_steps = binio::get_u64(in);
  const auto n = binio::get_u64(in);
  if (n > 1'000'000) throw FormatError("checkpoint moment count is implausible");
  for (std::uint64_t i = 0; i < n; ++i) {
    c.adam_m.push_back(get_tensor(in));
    c.adam_v.push_back(get_tensor(in));
  }
  return c;
}

void save_checkpoint(const std::filesystem::path& path, const Trainer& trainer) {
  // Write to a sibling file first so a crash never leaves a torn checkpoint.
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    write_checkpoint(out, capture(trainer));
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  return read_checkpoint(in);
}

void apply_checkpoint(Trainer& trainer, const Checkpoint& c) {
  auto& params = trainer.model().parameters();
  if (c.params.size() != params.size()) {
    throw ShapeError("checkpoint holds " + std::to_string(c.params.size()) + " parameters, model has " +
                     std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (c.params[i].name != params[i].name) {
      throw ShapeError("checkpoint parameter '" + c.params[i].name + "' where model expects '" + params[i].name +
                       "'");
    }
    copy_checked(params[i].var.mutable_value(), c.params[i]);
  }
  auto& bn = trainer.model().encoder.bn_states();
  if (c.buffers.size() != 2 * bn.size()) throw ShapeError("checkpoint batch-norm buffer count mismatch");
  for (std::size_t i = 0; i < bn.size(); ++i) {
    copy_checked(bn[i].running_mean, c.buffers[2 * i]);
    copy_checked(bn[i].running_var, c.buffers[2 * i + 1]);
  }
  if (c.adam_m.size() != c.adam_v.size() || (!c.adam_m.empty() && c.adam_m.size() != params.size())) {
    throw ShapeError("checkpoint optimiser state does not match the parameter list");
  }
  for (std::size_t i = 0; i < c.adam_m.size(); ++i) {
    if (!c.adam_m[i].same_shape(params[i].var.value()) || !c.adam_v[i].same_shape(params[i].var.value())) {
      throw ShapeError("checkpoint optimiser moments for '" + params[i].name + "' have the wrong shape");
    }
  }
  ad::Adam adam(trainer.optimizer().config());
  adam.restore(c.adam_steps, c.adam_m, c.adam_v);
  trainer.restore(c.step, adam);
}

Trainer trainer_from_checkpoint(const Checkpoint& c) {
  Trainer t(parse_config(c.config_text));
  apply_checkpoint(t, c);
  return t;
}

}  // namespace pemr::trainer
