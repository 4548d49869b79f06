#include "pemr/wav.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>

#include "pemr/error.hpp"

namespace pemr::dsp {

namespace {

std::uint32_t le32(const char* p) {
  std::uint32_t v;
  std::memcpy(&v, p, 4);
  return v;
}
std::uint16_t le16(const char* p) {
  std::uint16_t v;
  std::memcpy(&v, p, 2);
  return v;
}

void put(std::ofstream& out, const void* p, std::size_t n) { out.write(static_cast<const char*>(p), static_cast<std::streamsize>(n)); }

}  // namespace

Waveform read_wav(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const std::string name = path.string();
  if (bytes.size() < 12 || bytes.compare(0, 4, "RIFF") != 0 || bytes.compare(8, 4, "WAVE") != 0) {
    throw FormatError(name + ": not a RIFF/WAVE file");
  }
  bool have_fmt = false;
  int sample_rate = 0;
  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const std::string id = bytes.substr(pos, 4);
    const std::uint32_t len = le32(bytes.data() + pos + 4);
    const std::size_t body = pos + 8;
    if (body + len > bytes.size()) throw FormatError(name + ": truncated '" + id + "' chunk");
    if (id == "fmt ") {
      if (len < 16) throw FormatError(name + ": fmt chunk too short");
      const auto format = le16(bytes.data() + body);
      const auto channels = le16(bytes.data() + body + 2);
      sample_rate = static_cast<int>(le32(bytes.data() + body + 4));
      const auto bits = le16(bytes.data() + body + 14);
      if (format != 1) throw FormatError(name + ": only PCM encoding is supported (format tag " + std::to_string(format) + ")");
      if (channels != 1) throw FormatError(name + ": expected mono audio, found " + std::to_string(channels) + " channels");
      if (bits != 16) throw FormatError(name + ": expected 16-bit samples, found " + std::to_string(bits) + "-bit");
      if (sample_rate <= 0) throw FormatError(name + ": invalid sample rate");
      have_fmt = true;
    } else if (id == "data") {
      if (!have_fmt) throw FormatError(name + ": data chunk precedes fmt chunk");
      const std::size_t n = len / 2;
      std::vector<double> samples(n);
      for (std::size_t i = 0; i < n; ++i) {
        std::int16_t s;
        std::memcpy(&s, bytes.data() + body + 2 * i, 2);
        samples[i] = static_cast<double>(s) / 32768.0;
      }
      if (samples.empty()) throw InsufficientAudioError(name + ": no samples");
      return Waveform(std::move(samples), sample_rate);
    }
    pos = body + len + (len & 1u);
  }
  throw FormatError(name + ": missing data chunk");
}

void write_wav(const std::filesystem::path& path, const Waveform& w) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  const std::uint32_t data_len = static_cast<std::uint32_t>(w.samples.size() * 2);
  const std::uint32_t riff_len = 36 + data_len;
  const std::uint32_t fmt_len = 16;
  const std::uint16_t pcm = 1, channels = 1, block = 2, bits = 16;
  const std::uint32_t rate = static_cast<std::uint32_t>(w.sample_rate);
  const std::uint32_t byte_rate = rate * 2;
  put(out, "RIFF", 4);
  put(out, &riff_len, 4);
  put(out, "WAVEfmt ", 8);
  put(out, &fmt_len, 4);
  put(out, &pcm, 2);
  put(out, &channels, 2);
  put(out, &rate, 4);
  put(out, &byte_rate, 4);
  put(out, &block, 2);
  put(out, &bits, 2);
  put(out, "data", 4);
  put(out, &data_len, 4);
  for (double v : w.samples) {
    const double c = std::clamp(v, -1.0, 32767.0 / 32768.0);
    const auto s = static_cast<std::int16_t>(std::lround(c * 32768.0));
    put(out, &s, 2);
  }
  if (!out) throw IoError("write failed: " + path.string());
}

}  // namespace pemr::dsp
