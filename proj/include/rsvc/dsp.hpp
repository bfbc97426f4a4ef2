#pragma once

#include <complex>
#include <vector>

#include <Eigen/Dense>

namespace rsvc {

// Canonical analysis setup: 16 kHz audio, 50 ms frames, 10 ms hop, Hann
// window, 1024-point FFT (next power of two above the frame), 80 mel bands
// spanning 0-8000 Hz on natural-log magnitudes floored at 1e-5.
inline constexpr int kSampleRate = 16000;
inline constexpr int kFrameLen = 800;
inline constexpr int kHop = 160;
inline constexpr int kNfft = 1024;
inline constexpr int kNumBins = kNfft / 2 + 1;
inline constexpr int kNumMels = 80;
inline constexpr double kMelFmin = 0.0;
inline constexpr double kMelFmax = 8000.0;
inline constexpr float kLogFloor = 1e-5f;
inline constexpr double kYinThreshold = 0.3;
inline constexpr double kF0MinHz = 50.0;
inline constexpr double kF0MaxHz = 1000.0;

struct AudioBuffer {
  std::vector<float> samples;
  int sample_rate = kSampleRate;
};

struct MelSpectrogram {
  Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> frames;  // T x n_mels
  int n_mels = kNumMels;
  double frame_hop_s = 0.010;
  double frame_size_s = 0.050;

  Eigen::Index num_frames() const { return frames.rows(); }
};

/// Per-frame (F0, energy, VUV). f0_hz > 0 exactly where vuv == 1.
struct MelodyContour {
  std::vector<float> f0_hz;
  std::vector<float> energy;
  std::vector<int> vuv;

  std::size_t size() const { return f0_hz.size(); }
};

using Spectrogram =
    Eigen::Matrix<std::complex<float>, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// In-place radix-2 FFT (inverse divides by n). n must be a power of two.
void fft_radix2(std::vector<std::complex<double>>& a, bool inverse);

std::vector<float> hann_window(int n);

/// Frame count under center padding: 1 + floor(len / hop).
Eigen::Index stft_num_frames(std::size_t num_samples);

/// Complex STFT, T x 513, reflect-padded so frame t is centered at t*hop.
Spectrogram stft(const AudioBuffer& audio);

/// 80 triangular filters (HTK mel scale) over FFT bin frequencies, row-major
/// [n_mels x kNumBins].
const Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>& mel_filterbank();

MelSpectrogram mel_spectrogram(const Spectrogram& spec);
MelSpectrogram mel_spectrogram_of(const AudioBuffer& audio);

/// YIN-style pitch plus windowed-frame RMS energy, frame-aligned with the
/// mel spectrogram.
MelodyContour extract_melody_ground_truth(const AudioBuffer& audio);

/// (x - min) / (max - min); a constant sequence maps to all zeros.
std::vector<float> minmax_normalize(const std::vector<float>& x);

/// Hann-windowed per-frame RMS with the same centering as stft/melody frames.
std::vector<float> frame_rms(const AudioBuffer& audio);

struct MixResult {
  AudioBuffer mixture;
  float anti_clip_gain = 1.0f;  // 1.0 when no clipping protection was needed
};

/// Scales noise so the vocal-to-noise power ratio hits snr_db, then mixes.
/// snr_db = +infinity is the clean sentinel: returns the vocal untouched.
MixResult mix_at_snr(const AudioBuffer& vocal, const AudioBuffer& noise, double snr_db);

/// Plain windowed-sinc resampling: duration scales by 1/rate, pitch by rate.
AudioBuffer speed_perturb(const AudioBuffer& audio, double rate);

/// Generic sample-rate conversion with the same kernel (no band limits).
AudioBuffer resample(const AudioBuffer& audio, int out_rate);

/// Mel -> linear magnitudes (non-negative least squares against the
/// filterbank) -> iterative phase reconstruction -> audio.
AudioBuffer griffin_lim(const MelSpectrogram& mel, int iterations = 32);

/// Mean absolute log-mel error between a reference mel and the re-analyzed
/// mel of an audio buffer (used to track Griffin-Lim convergence).
double mel_distance(const MelSpectrogram& ref, const AudioBuffer& audio);

}  // namespace rsvc
