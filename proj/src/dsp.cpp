#include "rsvc/dsp.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

namespace rsvc {

namespace {

constexpr double kPi = std::numbers::pi;
constexpr int kPad = kFrameLen / 2;

// Reflect an out-of-range index back into [0, n): ... 2 1 | 0 1 2 ... n-1 | n-2 ...
long fold_index(long i, long n) {
  if (n == 1) return 0;
  const long period = 2 * (n - 1);
  i = ((i % period) + period) % period;
  return i < n ? i : period - i;
}

void require_16k(const AudioBuffer& a, const char* op) {
  if (a.sample_rate != kSampleRate)
    throw std::invalid_argument(std::string(op) + ": expected " + std::to_string(kSampleRate) +
                                " Hz audio, got " + std::to_string(a.sample_rate));
}

using MatF = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatD = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

}  // namespace

void fft_radix2(std::vector<std::complex<double>>& a, bool inverse) {
  const std::size_t n = a.size();
  if (n == 0 || (n & (n - 1)) != 0) throw std::invalid_argument("fft: size must be a power of two");
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const double ang = 2.0 * kPi / double(len) * (inverse ? 1.0 : -1.0);
    const std::complex<double> wlen(std::cos(ang), std::sin(ang));
    for (std::size_t i = 0; i < n; i += len) {
      std::complex<double> w(1.0, 0.0);
      for (std::size_t j = 0; j < len / 2; ++j) {
        const std::complex<double> u = a[i + j];
        const std::complex<double> v = a[i + j + len / 2] * w;
        a[i + j] = u + v;
        a[i + j + len / 2] = u - v;
        w *= wlen;
      }
    }
  }
  if (inverse)
    for (auto& x : a) x /= double(n);
}

std::vector<float> hann_window(int n) {
  std::vector<float> w(std::size_t(n), 0.0f);
  for (int i = 0; i < n; ++i) w[std::size_t(i)] = float(0.5 - 0.5 * std::cos(2.0 * kPi * i / n));
  return w;
}

Eigen::Index stft_num_frames(std::size_t num_samples) {
  return 1 + Eigen::Index(num_samples) / kHop;
}

Spectrogram stft(const AudioBuffer& audio) {
  if (audio.samples.empty()) throw std::invalid_argument("stft: empty audio");
  require_16k(audio, "stft");
  static const std::vector<float> window = hann_window(kFrameLen);
  const long n = long(audio.samples.size());
  const Eigen::Index T = stft_num_frames(audio.samples.size());
  Spectrogram out(T, kNumBins);
  std::vector<std::complex<double>> buf(kNfft);
  for (Eigen::Index t = 0; t < T; ++t) {
    const long start = long(t) * kHop - kPad;
    for (int j = 0; j < kFrameLen; ++j)
      buf[std::size_t(j)] = double(audio.samples[std::size_t(fold_index(start + j, n))]) *
                            double(window[std::size_t(j)]);
    std::fill(buf.begin() + kFrameLen, buf.end(), std::complex<double>(0.0, 0.0));
    fft_radix2(buf, false);
    for (int k = 0; k < kNumBins; ++k)
      out(t, k) = std::complex<float>(float(buf[std::size_t(k)].real()),
                                      float(buf[std::size_t(k)].imag()));
  }
  return out;
}

namespace {

double hz_to_mel(double f) { return 2595.0 * std::log10(1.0 + f / 700.0); }
double mel_to_hz(double m) { return 700.0 * (std::pow(10.0, m / 2595.0) - 1.0); }

}  // namespace

const MatF& mel_filterbank() {
  static const MatF fb = [] {
    MatF m = MatF::Zero(kNumMels, kNumBins);
    const double mel_lo = hz_to_mel(kMelFmin), mel_hi = hz_to_mel(kMelFmax);
    std::vector<double> centers(kNumMels + 2);
    for (int i = 0; i < kNumMels + 2; ++i)
      centers[std::size_t(i)] = mel_to_hz(mel_lo + (mel_hi - mel_lo) * i / (kNumMels + 1));
    for (int k = 0; k < kNumBins; ++k) {
      const double f = double(k) * kSampleRate / kNfft;
      for (int b = 0; b < kNumMels; ++b) {
        const double lo = centers[std::size_t(b)], mid = centers[std::size_t(b + 1)],
                     hi = centers[std::size_t(b + 2)];
        if (f <= lo || f >= hi) continue;
        const double v = f <= mid ? (f - lo) / (mid - lo) : (hi - f) / (hi - mid);
        m(b, k) = float(v);
      }
    }
    return m;
  }();
  return fb;
}

MelSpectrogram mel_spectrogram(const Spectrogram& spec) {
  const Eigen::Index T = spec.rows();
  MatF mags(T, kNumBins);
  for (Eigen::Index t = 0; t < T; ++t)
    for (int k = 0; k < kNumBins; ++k) mags(t, k) = std::abs(spec(t, k));
  MelSpectrogram mel;
  mel.frames = mags * mel_filterbank().transpose();  // T x 80
  mel.frames = mel.frames.cwiseMax(kLogFloor).array().log().matrix();
  return mel;
}

MelSpectrogram mel_spectrogram_of(const AudioBuffer& audio) { return mel_spectrogram(stft(audio)); }

std::vector<float> frame_rms(const AudioBuffer& audio) {
  if (audio.samples.empty()) throw std::invalid_argument("frame_rms: empty audio");
  require_16k(audio, "frame_rms");
  static const std::vector<float> window = hann_window(kFrameLen);
  const long n = long(audio.samples.size());
  const Eigen::Index T = stft_num_frames(audio.samples.size());
  std::vector<float> rms(std::size_t(T), 0.0f);
  for (Eigen::Index t = 0; t < T; ++t) {
    const long start = long(t) * kHop - kPad;
    double acc = 0.0;
    for (int j = 0; j < kFrameLen; ++j) {
      const double wx = double(audio.samples[std::size_t(fold_index(start + j, n))]) *
                        double(window[std::size_t(j)]);
      acc += wx * wx;
    }
    rms[std::size_t(t)] = float(std::sqrt(acc / kFrameLen));
  }
  return rms;
}

MelodyContour extract_melody_ground_truth(const AudioBuffer& audio) {
  if (audio.samples.empty()) throw std::invalid_argument("melody: empty audio");
  require_16k(audio, "melody");
  static const std::vector<float> window = hann_window(kFrameLen);
  const long n = long(audio.samples.size());
  const Eigen::Index T = stft_num_frames(audio.samples.size());
  const int tau_min = int(std::floor(kSampleRate / kF0MaxHz));  // 16
  const int tau_max = kFrameLen / 2;                            // 400; search tops out at 320
  const int tau_hi = int(std::ceil(kSampleRate / kF0MinHz));    // 320
  const int integ = kFrameLen / 2;                              // YIN integration window
  MelodyContour c;
  c.f0_hz.resize(std::size_t(T), 0.0f);
  c.energy = frame_rms(audio);
  c.vuv.resize(std::size_t(T), 0);
  std::vector<double> frame(kFrameLen), d(std::size_t(tau_max) + 1, 0.0),
      dn(std::size_t(tau_max) + 1, 1.0);
  for (Eigen::Index t = 0; t < T; ++t) {
    const long start = long(t) * kHop - kPad;
    for (int j = 0; j < kFrameLen; ++j)
      frame[std::size_t(j)] = double(audio.samples[std::size_t(fold_index(start + j, n))]);

    // cumulative-mean-normalized difference
    double cum = 0.0;
    for (int tau = 1; tau <= tau_max; ++tau) {
      double acc = 0.0;
      for (int j = 0; j < integ; ++j) {
        const double diff = frame[std::size_t(j)] - frame[std::size_t(j + tau)];
        acc += diff * diff;
      }
      d[std::size_t(tau)] = acc;
      cum += acc;
      dn[std::size_t(tau)] = cum > 0.0 ? acc * tau / cum : 1.0;
    }

    // first dip under threshold, descended to its local minimum
    int best = -1;
    for (int tau = tau_min; tau <= tau_hi; ++tau) {
      if (dn[std::size_t(tau)] < kYinThreshold) {
        while (tau + 1 <= tau_hi && dn[std::size_t(tau + 1)] < dn[std::size_t(tau)]) ++tau;
        best = tau;
        break;
      }
    }
    if (best < 0 || c.energy[std::size_t(t)] < 1e-6f) continue;  // unvoiced

    double tau_ref = best;
    if (best > tau_min && best < tau_max) {
      const double a = dn[std::size_t(best - 1)], b = dn[std::size_t(best)],
                   cc = dn[std::size_t(best + 1)];
      const double denom = a - 2.0 * b + cc;
      if (std::abs(denom) > 1e-12) tau_ref += 0.5 * (a - cc) / denom;
    }
    const double f0 = std::clamp(double(kSampleRate) / tau_ref, kF0MinHz, kF0MaxHz);
    c.f0_hz[std::size_t(t)] = float(f0);
    c.vuv[std::size_t(t)] = 1;
  }
  return c;
}

std::vector<float> minmax_normalize(const std::vector<float>& x) {
  if (x.empty()) throw std::invalid_argument("minmax_normalize: empty sequence");
  const auto [lo_it, hi_it] = std::minmax_element(x.begin(), x.end());
  const float lo = *lo_it, hi = *hi_it;
  std::vector<float> out(x.size(), 0.0f);
  if (hi > lo)
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = (x[i] - lo) / (hi - lo);
  return out;
}

MixResult mix_at_snr(const AudioBuffer& vocal, const AudioBuffer& noise, double snr_db) {
  if (vocal.sample_rate != noise.sample_rate)
    throw std::invalid_argument("mix_at_snr: sample rates differ");
  if (std::isinf(snr_db) && snr_db > 0) return {vocal, 1.0f};  // clean sentinel
  if (noise.samples.empty()) throw std::invalid_argument("mix_at_snr: empty noise");
  const std::size_t n = vocal.samples.size();
  double p_vocal = 0.0;
  for (float s : vocal.samples) p_vocal += double(s) * s;
  p_vocal /= double(n);
  if (p_vocal <= 0.0) throw std::invalid_argument("mix_at_snr: vocal has zero power");
  double p_noise = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double s = noise.samples[i % noise.samples.size()];
    p_noise += s * s;
  }
  p_noise /= double(n);
  if (p_noise <= 0.0) throw std::invalid_argument("mix_at_snr: noise has zero power");
  const double gain = std::sqrt(p_vocal / (p_noise * std::pow(10.0, snr_db / 10.0)));
  MixResult r;
  r.mixture.sample_rate = vocal.sample_rate;
  r.mixture.samples.resize(n);
  float peak = 0.0f;
  for (std::size_t i = 0; i < n; ++i) {
    const float v =
        vocal.samples[i] + float(gain * double(noise.samples[i % noise.samples.size()]));
    r.mixture.samples[i] = v;
    peak = std::max(peak, std::abs(v));
  }
  if (peak > 0.99f) {
    r.anti_clip_gain = 0.99f / peak;
    for (float& s : r.mixture.samples) s *= r.anti_clip_gain;
  }
  return r;
}

namespace {

std::vector<float> sinc_resample(const std::vector<float>& x, double step, std::size_t out_len) {
  // y[i] = sum_j x[j] * c * sinc(c (j - i*step)) * hann((j - i*step)/K)
  constexpr int K = 32;
  const double cutoff = std::min(1.0, 1.0 / step);
  const long n = long(x.size());
  std::vector<float> y(out_len, 0.0f);
  for (std::size_t i = 0; i < out_len; ++i) {
    const double p = double(i) * step;
    const long j0 = std::max<long>(0, long(std::ceil(p)) - K);
    const long j1 = std::min<long>(n - 1, long(std::floor(p)) + K);
    double acc = 0.0;
    for (long j = j0; j <= j1; ++j) {
      const double t = double(j) - p;
      const double ct = cutoff * t;
      const double sinc = ct == 0.0 ? 1.0 : std::sin(kPi * ct) / (kPi * ct);
      const double win = 0.5 + 0.5 * std::cos(kPi * t / K);
      acc += double(x[std::size_t(j)]) * cutoff * sinc * win;
    }
    y[i] = float(acc);
  }
  return y;
}

}  // namespace

AudioBuffer speed_perturb(const AudioBuffer& audio, double rate) {
  if (rate < 0.9 - 1e-9 || rate > 1.5 + 1e-9)
    throw std::invalid_argument("speed_perturb: rate " + std::to_string(rate) +
                                " outside [0.9, 1.5]");
  if (rate == 1.0) return audio;
  AudioBuffer out;
  out.sample_rate = audio.sample_rate;
  const auto out_len = std::size_t(std::llround(double(audio.samples.size()) / rate));
  out.samples = sinc_resample(audio.samples, rate, out_len);
  return out;
}

AudioBuffer resample(const AudioBuffer& audio, int out_rate) {
  if (out_rate <= 0) throw std::invalid_argument("resample: bad target rate");
  if (audio.sample_rate == out_rate) return audio;
  AudioBuffer out;
  out.sample_rate = out_rate;
  const double step = double(audio.sample_rate) / double(out_rate);
  const auto out_len =
      std::size_t(std::llround(double(audio.samples.size()) * out_rate / audio.sample_rate));
  out.samples = sinc_resample(audio.samples, step, out_len);
  return out;
}

namespace {

AudioBuffer istft(const Spectrogram& spec, std::size_t out_len) {
  static const std::vector<float> window = hann_window(kFrameLen);
  const Eigen::Index T = spec.rows();
  const std::size_t padded = out_len + 2 * kPad;
  std::vector<double> acc(padded, 0.0), wsum(padded, 0.0);
  std::vector<std::complex<double>> buf(kNfft);
  for (Eigen::Index t = 0; t < T; ++t) {
    for (int k = 0; k < kNumBins; ++k)
      buf[std::size_t(k)] = std::complex<double>(spec(t, k).real(), spec(t, k).imag());
    for (int k = kNumBins; k < kNfft; ++k) buf[std::size_t(k)] = std::conj(buf[std::size_t(kNfft - k)]);
    fft_radix2(buf, true);
    const std::size_t off = std::size_t(t) * kHop;
    for (int j = 0; j < kFrameLen; ++j) {
      const std::size_t idx = off + std::size_t(j);
      if (idx >= padded) break;
      const double w = double(window[std::size_t(j)]);
      acc[idx] += buf[std::size_t(j)].real() * w;
      wsum[idx] += w * w;
    }
  }
  AudioBuffer out;
  out.sample_rate = kSampleRate;
  out.samples.resize(out_len);
  for (std::size_t i = 0; i < out_len; ++i) {
    const std::size_t idx = i + kPad;
    out.samples[i] = float(acc[idx] / std::max(wsum[idx], 1e-8));
  }
  return out;
}

// Non-negative linear-magnitude spectra matching the mel frames: clipped
// pseudo-inverse warm start refined by multiplicative NNLS updates.
MatD mel_to_linear(const MelSpectrogram& mel) {
  MatD target = mel.frames.cast<double>().array().exp().matrix();  // T x 80
  MatD fb = mel_filterbank().cast<double>();                       // 80 x 513
  const MatD gram = fb * fb.transpose();                           // 80 x 80
  MatD s = (gram.ldlt().solve(target.transpose()).transpose() * fb).cwiseMax(0.0).array() + 1e-8;
  const MatD numer = target * fb;  // Aᵀm per frame
  for (int it = 0; it < 12; ++it) {
    MatD denom = (s * fb.transpose()) * fb;  // Aᵀ(A s), factored to stay O(T·mels·bins)
    s = s.cwiseProduct(numer.cwiseQuotient(denom.array().max(1e-12).matrix()));
  }
  return s;
}

}  // namespace

AudioBuffer griffin_lim(const MelSpectrogram& mel, int iterations) {
  const Eigen::Index T = mel.frames.rows();
  if (T == 0) throw std::invalid_argument("griffin_lim: empty mel");
  const MatD mags = mel_to_linear(mel);
  const std::size_t out_len = std::size_t(T - 1) * kHop;
  if (out_len == 0) {
    AudioBuffer silent;
    silent.samples.assign(kHop, 0.0f);
    return silent;
  }
  Spectrogram spec(T, kNumBins);
  for (Eigen::Index t = 0; t < T; ++t)
    for (int k = 0; k < kNumBins; ++k) spec(t, k) = std::complex<float>(float(mags(t, k)), 0.0f);
  AudioBuffer audio = istft(spec, out_len);
  for (int it = 0; it < iterations; ++it) {
    Spectrogram re = stft(audio);
    for (Eigen::Index t = 0; t < T; ++t) {
      for (int k = 0; k < kNumBins; ++k) {
        const std::complex<float> z = re(t, k);
        const float mag = std::abs(z);
        const std::complex<float> phase = mag > 0.0f ? z / mag : std::complex<float>(1.0f, 0.0f);
        spec(t, k) = float(mags(t, k)) * phase;
      }
    }
    audio = istft(spec, out_len);
  }
  return audio;
}

double mel_distance(const MelSpectrogram& ref, const AudioBuffer& audio) {
  const MelSpectrogram re = mel_spectrogram_of(audio);
  const Eigen::Index T = std::min(ref.frames.rows(), re.frames.rows());
  double acc = 0.0;
  for (Eigen::Index t = 0; t < T; ++t)
    acc += (ref.frames.row(t) - re.frames.row(t)).cwiseAbs().mean();
  return acc / double(T);
}

}  // namespace rsvc
