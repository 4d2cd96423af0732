#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "audio_frontend.hpp"

namespace avp::audio {

enum class WavEncoding { pcm16, float32 };

/// Decodes RIFF/WAVE PCM16 or IEEE float32 data; multi-channel input is averaged to mono.
/// PCM16 samples are scaled by 1/32768.
Waveform decode_wav(const std::vector<std::uint8_t>& bytes);
Waveform read_wav(const std::string& path);

/// Mono encoder. PCM16 output uses round(x * 32768) clamped to the int16 range, which
/// round-trips decoded PCM16 data exactly.
std::vector<std::uint8_t> encode_wav(const Waveform& w, WavEncoding enc);
void write_wav(const std::string& path, const Waveform& w, WavEncoding enc);

}  // namespace avp::audio
