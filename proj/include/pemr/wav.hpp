#pragma once

#include <filesystem>

#include "pemr/dsp.hpp"

namespace pemr::dsp {

/// Reads a mono 16-bit little-endian PCM WAV file. Anything else is rejected.
Waveform read_wav(const std::filesystem::path& path);

/// Writes mono 16-bit PCM; samples are clipped to [-1, 1].
void write_wav(const std::filesystem::path& path, const Waveform& w);

}  // namespace pemr::dsp
