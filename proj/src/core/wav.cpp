#include "wav.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "binary_io.hpp"

namespace avp::audio {

namespace {

constexpr std::uint16_t kFormatPcm = 1;
constexpr std::uint16_t kFormatFloat = 3;
constexpr std::uint16_t kFormatExtensible = 0xFFFE;

std::uint16_t rd16(const std::uint8_t* p) { return static_cast<std::uint16_t>(p[0] | (p[1] << 8)); }
std::uint32_t rd32(const std::uint8_t* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

}  // namespace

Waveform decode_wav(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 || std::memcmp(bytes.data() + 8, "WAVE", 4) != 0)
    throw Error(Errc::format, "not a RIFF/WAVE file");

  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  const std::uint8_t* data = nullptr;
  std::size_t data_len = 0;

  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const std::uint8_t* chunk = bytes.data() + pos;
    const std::uint32_t len = rd32(chunk + 4);
    const std::size_t body = pos + 8;
    const std::size_t avail = bytes.size() - body;
    if (std::memcmp(chunk, "fmt ", 4) == 0) {
      if (len < 16 || avail < 16) throw Error(Errc::format, "truncated fmt chunk");
      format = rd16(chunk + 8);
      channels = rd16(chunk + 10);
      rate = rd32(chunk + 12);
      bits = rd16(chunk + 22);
      if (format == kFormatExtensible) {
        if (len < 40 || avail < 40) throw Error(Errc::format, "truncated extensible fmt chunk");
        format = rd16(chunk + 8 + 24);  // first two bytes of the subformat GUID
      }
    } else if (std::memcmp(chunk, "data", 4) == 0) {
      data = chunk + 8;
      data_len = std::min<std::size_t>(len, avail);
    }
    pos = body + len + (len & 1u);
  }

  if (channels == 0 || rate == 0) throw Error(Errc::format, "missing or invalid fmt chunk");
  if (data == nullptr) throw Error(Errc::format, "missing data chunk");

  const bool pcm16 = format == kFormatPcm && bits == 16;
  const bool f32 = format == kFormatFloat && bits == 32;
  if (!pcm16 && !f32)
    throw Error(Errc::format, "unsupported WAV encoding (format " + std::to_string(format) + ", " +
                                  std::to_string(bits) + " bits); expected PCM16 or float32");

  const std::size_t frame_bytes = static_cast<std::size_t>(channels) * (bits / 8);
  const std::size_t frames = data_len / frame_bytes;
  Waveform w;
  w.sample_rate = static_cast<int>(rate);
  w.samples.resize(frames);
  for (std::size_t i = 0; i < frames; ++i) {
    const std::uint8_t* f = data + i * frame_bytes;
    double acc = 0.0;
    for (std::size_t c = 0; c < channels; ++c) {
      if (pcm16) {
        acc += static_cast<std::int16_t>(rd16(f + 2 * c)) / 32768.0;
      } else {
        float v;
        std::uint32_t raw = rd32(f + 4 * c);
        std::memcpy(&v, &raw, sizeof v);
        acc += v;
      }
    }
    w.samples[i] = static_cast<float>(acc / channels);
  }
  return w;
}

Waveform read_wav(const std::string& path) { return decode_wav(read_file(path)); }

std::vector<std::uint8_t> encode_wav(const Waveform& w, WavEncoding enc) {
  if (w.sample_rate <= 0) throw Error(Errc::invalid_argument, "sample_rate must be positive");
  const std::uint16_t bits = enc == WavEncoding::pcm16 ? 16 : 32;
  const std::uint32_t data_len = static_cast<std::uint32_t>(w.samples.size() * (bits / 8));

  ByteWriter out;
  out.raw("RIFF", 4);
  out.u32(36 + data_len);
  out.raw("WAVE", 4);
  out.raw("fmt ", 4);
  out.u32(16);
  out.u16(enc == WavEncoding::pcm16 ? kFormatPcm : kFormatFloat);
  out.u16(1);
  out.u32(static_cast<std::uint32_t>(w.sample_rate));
  out.u32(static_cast<std::uint32_t>(w.sample_rate) * (bits / 8));
  out.u16(bits / 8);
  out.u16(bits);
  out.raw("data", 4);
  out.u32(data_len);
  for (float s : w.samples) {
    if (enc == WavEncoding::pcm16) {
      const double scaled = std::round(static_cast<double>(s) * 32768.0);
      out.u16(static_cast<std::uint16_t>(static_cast<std::int16_t>(std::clamp(scaled, -32768.0, 32767.0))));
    } else {
      out.f32(s);
    }
  }
  return out.take();
}

void write_wav(const std::string& path, const Waveform& w, WavEncoding enc) { write_file(path, encode_wav(w, enc)); }

}  // namespace avp::audio
