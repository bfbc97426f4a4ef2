#pragma once

#include <string>

#include "rsvc/dsp.hpp"

namespace rsvc {

/// Reads a PCM 16-bit WAV. Multi-channel input is averaged to mono and
/// anything not at 16 kHz is resampled on load.
AudioBuffer load_wav(const std::string& path);

/// Writes mono PCM 16-bit little-endian, clipping samples to [-1, 1].
void save_wav(const std::string& path, const AudioBuffer& audio);

}  // namespace rsvc
