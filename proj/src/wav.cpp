#include "rsvc/wav.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <vector>

namespace rsvc {

namespace {

std::uint32_t read_u32(const unsigned char* p) {
  return std::uint32_t(p[0]) | std::uint32_t(p[1]) << 8 | std::uint32_t(p[2]) << 16 |
         std::uint32_t(p[3]) << 24;
}
std::uint16_t read_u16(const unsigned char* p) {
  return std::uint16_t(p[0] | (p[1] << 8));
}

void write_u32(std::ofstream& f, std::uint32_t v) {
  unsigned char b[4] = {(unsigned char)(v & 0xff), (unsigned char)((v >> 8) & 0xff),
                        (unsigned char)((v >> 16) & 0xff), (unsigned char)((v >> 24) & 0xff)};
  f.write(reinterpret_cast<const char*>(b), 4);
}
void write_u16(std::ofstream& f, std::uint16_t v) {
  unsigned char b[2] = {(unsigned char)(v & 0xff), (unsigned char)((v >> 8) & 0xff)};
  f.write(reinterpret_cast<const char*>(b), 2);
}

}  // namespace

AudioBuffer load_wav(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("load_wav: cannot open " + path);
  std::vector<unsigned char> data((std::istreambuf_iterator<char>(f)),
                                  std::istreambuf_iterator<char>());
  if (data.size() < 44 || std::memcmp(data.data(), "RIFF", 4) != 0 ||
      std::memcmp(data.data() + 8, "WAVE", 4) != 0)
    throw std::runtime_error("load_wav: not a RIFF/WAVE file: " + path);

  int channels = 0, rate = 0, bits = 0;
  std::size_t pos = 12;
  const unsigned char* pcm = nullptr;
  std::size_t pcm_bytes = 0;
  while (pos + 8 <= data.size()) {
    const char* id = reinterpret_cast<const char*>(data.data() + pos);
    const std::uint32_t sz = read_u32(data.data() + pos + 4);
    const unsigned char* body = data.data() + pos + 8;
    if (pos + 8 + sz > data.size()) throw std::runtime_error("load_wav: truncated chunk in " + path);
    if (std::memcmp(id, "fmt ", 4) == 0 && sz >= 16) {
      const std::uint16_t format = read_u16(body);
      if (format != 1) throw std::runtime_error("load_wav: only PCM supported: " + path);
      channels = read_u16(body + 2);
      rate = int(read_u32(body + 4));
      bits = read_u16(body + 14);
    } else if (std::memcmp(id, "data", 4) == 0) {
      pcm = body;
      pcm_bytes = sz;
    }
    pos += 8 + sz + (sz & 1);  // chunks are word-aligned
  }
  if (!pcm || channels <= 0 || rate <= 0)
    throw std::runtime_error("load_wav: missing fmt/data chunk in " + path);
  if (bits != 16) throw std::runtime_error("load_wav: only 16-bit PCM supported: " + path);

  const std::size_t total = pcm_bytes / 2;
  const std::size_t frames = total / std::size_t(channels);
  AudioBuffer out;
  out.sample_rate = rate;
  out.samples.resize(frames);
  for (std::size_t i = 0; i < frames; ++i) {
    double acc = 0.0;
    for (int ch = 0; ch < channels; ++ch) {
      const std::size_t k = 2 * (i * std::size_t(channels) + std::size_t(ch));
      const std::int16_t s = std::int16_t(pcm[k] | (pcm[k + 1] << 8));
      acc += double(s) / 32768.0;
    }
    out.samples[i] = float(acc / channels);
  }
  if (out.sample_rate != kSampleRate) out = resample(out, kSampleRate);
  return out;
}

void save_wav(const std::string& path, const AudioBuffer& audio) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("save_wav: cannot open " + path);
  const std::uint32_t n = std::uint32_t(audio.samples.size());
  f.write("RIFF", 4);
  write_u32(f, 36 + 2 * n);
  f.write("WAVE", 4);
  f.write("fmt ", 4);
  write_u32(f, 16);
  write_u16(f, 1);  // PCM
  write_u16(f, 1);  // mono
  write_u32(f, std::uint32_t(audio.sample_rate));
  write_u32(f, std::uint32_t(audio.sample_rate) * 2);
  write_u16(f, 2);
  write_u16(f, 16);
  f.write("data", 4);
  write_u32(f, 2 * n);
  for (float s : audio.samples) {
    const float c = std::max(-1.0f, std::min(1.0f, s));
    const auto v = std::int16_t(std::lround(c * 32767.0f));
    unsigned char b[2] = {(unsigned char)(v & 0xff), (unsigned char)((v >> 8) & 0xff)};
    f.write(reinterpret_cast<const char*>(b), 2);
  }
  if (!f) throw std::runtime_error("save_wav: write failed: " + path);
}

}  // namespace rsvc
