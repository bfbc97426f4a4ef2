#include "rsvc/melody.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <limits>
#include <random>
#include <stdexcept>

#include "rsvc/adam.hpp"
#include "rsvc/threading.hpp"
#include "rsvc/wav.hpp"

namespace fs = std::filesystem;

namespace rsvc {

MelodyTargets melody_targets_from_contour(const MelodyContour& contour) {
  const std::size_t n = contour.size();
  if (contour.energy.size() != n || contour.vuv.size() != n)
    throw std::invalid_argument("melody targets: contour field lengths disagree");
  MelodyTargets t;
  t.pitch.assign(n, 0.0f);
  t.energy = minmax_normalize(contour.energy);
  t.vuv.assign(n, 0.0f);

  float lo = 0.0f, hi = 0.0f;
  bool any_voiced = false;
  for (std::size_t i = 0; i < n; ++i) {
    if (!contour.vuv[i]) continue;
    const float f = contour.f0_hz[i];
    if (!any_voiced) {
      lo = hi = f;
      any_voiced = true;
    } else {
      lo = std::min(lo, f);
      hi = std::max(hi, f);
    }
  }
  const float span = hi - lo;
  for (std::size_t i = 0; i < n; ++i) {
    t.vuv[i] = contour.vuv[i] ? 1.0f : 0.0f;
    if (contour.vuv[i] && span > 0.0f) t.pitch[i] = (contour.f0_hz[i] - lo) / span;
  }
  return t;
}

Tensor<float> targets_to_tensor(const MelodyTargets& t) {
  const Eigen::Index n = Eigen::Index(t.size());
  Tensor<float> out = Tensor<float>::zeros({n, 3});
  for (Eigen::Index i = 0; i < n; ++i) {
    out.mat()(i, 0) = t.pitch[std::size_t(i)];
    out.mat()(i, 1) = t.energy[std::size_t(i)];
    out.mat()(i, 2) = t.vuv[std::size_t(i)];
  }
  return out;
}

namespace {

struct MelodyUtterance {
  AudioBuffer audio;
  MelodyTargets targets;
  std::string split;
};

std::vector<MelodyUtterance> load_vocal_utterances(const std::vector<ManifestEntry>& manifest,
                                                   const std::string& base_dir) {
  std::vector<const ManifestEntry*> vocals;
  for (const ManifestEntry& e : manifest)
    if (e.role != "noise") vocals.push_back(&e);
  std::vector<MelodyUtterance> cache(vocals.size());
  parallel_for(vocals.size(), [&](std::size_t i) {
    const ManifestEntry& e = *vocals[i];
    const std::string wav = (fs::path(base_dir) / e.wav_path).string();
    cache[i].audio = load_wav(wav);
    cache[i].targets = melody_targets_from_contour(load_contour(contour_path_for(wav)));
    cache[i].split = e.split;
  });
  return cache;
}

// A silent utterance has no SNR to speak of; it trains as-is.
bool has_signal(const AudioBuffer& audio) {
  for (float s : audio.samples)
    if (s != 0.0f) return true;
  return false;
}

AudioBuffer rotate_noise(const AudioBuffer& noise, std::size_t offset) {
  AudioBuffer out;
  out.sample_rate = noise.sample_rate;
  const std::size_t n = noise.samples.size();
  out.samples.resize(n);
  for (std::size_t i = 0; i < n; ++i) out.samples[i] = noise.samples[(offset + i) % n];
  return out;
}

Tensor<float> mel_rows_to_tensor(const MelSpectrogram& mel, Eigen::Index r0, Eigen::Index r1) {
  Tensor<float> t = Tensor<float>::zeros({r1 - r0, mel.frames.cols()});
  t.mat() = mel.frames.middleRows(r0, r1 - r0);
  return t;
}

Tensor<float> targets_rows_to_tensor(const MelodyTargets& targets, Eigen::Index r0,
                                     Eigen::Index r1) {
  Tensor<float> out = Tensor<float>::zeros({r1 - r0, 3});
  for (Eigen::Index i = r0; i < r1; ++i) {
    out.mat()(i - r0, 0) = targets.pitch[std::size_t(i)];
    out.mat()(i - r0, 1) = targets.energy[std::size_t(i)];
    out.mat()(i - r0, 2) = targets.vuv[std::size_t(i)];
  }
  return out;
}

MelodyEvalMetrics accumulate_metrics(const MelodyExtractor<float>& model,
                                     const std::vector<MelodyUtterance>& cache,
                                     const std::vector<std::size_t>& ids,
                                     const std::vector<AudioBuffer>& noise_tracks, double snr_db) {
  MelodyEvalMetrics m;
  for (std::size_t k = 0; k < ids.size(); ++k) {
    const MelodyUtterance& u = cache[ids[k]];
    AudioBuffer input = u.audio;
    if (std::isfinite(snr_db) && has_signal(u.audio))
      input = mix_at_snr(u.audio, noise_tracks[k % noise_tracks.size()], snr_db).mixture;
    const auto out = model.forward(mel_to_tensor(mel_spectrogram_of(input)));
    const MelodyEvalMetrics one = melody_prediction_metrics(out.predictions.mat(), u.targets);
    m.pitch_l1 += one.pitch_l1;
    m.energy_l1 += one.energy_l1;
    m.vuv_l1 += one.vuv_l1;
  }
  if (!ids.empty()) {
    m.pitch_l1 /= double(ids.size());
    m.energy_l1 /= double(ids.size());
    m.vuv_l1 /= double(ids.size());
  }
  return m;
}

}  // namespace

MelodyEvalMetrics melody_prediction_metrics(const Eigen::Ref<const MatX<float>>& pred,
                                            const MelodyTargets& target) {
  if (pred.rows() != Eigen::Index(target.size()) || pred.cols() != 3)
    throw std::invalid_argument("melody metrics: prediction/target shape mismatch");
  MelodyEvalMetrics m;
  for (Eigen::Index i = 0; i < pred.rows(); ++i) {
    m.pitch_l1 += std::abs(double(pred(i, 0)) - double(target.pitch[std::size_t(i)]));
    m.energy_l1 += std::abs(double(pred(i, 1)) - double(target.energy[std::size_t(i)]));
    m.vuv_l1 += std::abs(double(pred(i, 2)) - double(target.vuv[std::size_t(i)]));
  }
  if (pred.rows() > 0) {
    m.pitch_l1 /= double(pred.rows());
    m.energy_l1 /= double(pred.rows());
    m.vuv_l1 /= double(pred.rows());
  }
  return m;
}

std::vector<AudioBuffer> load_noise_tracks(const std::string& manifest_path,
                                           const std::string& base_dir) {
  std::vector<AudioBuffer> tracks;
  for (const ManifestEntry& e : load_manifest(manifest_path))
    if (e.role == "noise") tracks.push_back(load_wav((fs::path(base_dir) / e.wav_path).string()));
  return tracks;
}

MelodyTrainResult train_melody_extractor(const std::vector<ManifestEntry>& manifest,
                                         const std::string& base_dir,
                                         const std::vector<AudioBuffer>& noise_tracks,
                                         const MelodyTrainConfig& config) {
  if (noise_tracks.empty())
    throw std::invalid_argument("train_melody: no noise tracks (clean-only training still needs "
                                "them for the SNR-0 dev metrics)");
  if (config.total_steps < 0) throw std::invalid_argument("train_melody: negative total_steps");
  if (config.backbone_freeze_step < 0 || config.backbone_freeze_step > config.total_steps)
    throw std::invalid_argument("train_melody: backbone_freeze_step must lie in [0, total_steps]");
  if (config.crop_frames < 1) throw std::invalid_argument("train_melody: crop_frames must be >= 1");
  const bool clean_only = !std::isfinite(config.snr_min_db) && !std::isfinite(config.snr_max_db);
  if (!clean_only && !(config.snr_min_db <= config.snr_max_db))
    throw std::invalid_argument("train_melody: snr_min_db must not exceed snr_max_db");

  std::vector<MelodyUtterance> cache = load_vocal_utterances(manifest, base_dir);
  if (cache.empty()) throw std::invalid_argument("train_melody: no vocal utterances in manifest");

  std::vector<std::size_t> train_ids, dev_ids;
  for (std::size_t i = 0; i < cache.size(); ++i) {
    if (cache[i].split == "dev")
      dev_ids.push_back(i);
    else if (cache[i].split == "train")
      train_ids.push_back(i);
  }
  if (train_ids.empty())
    for (std::size_t i = 0; i < cache.size(); ++i) train_ids.push_back(i);

  std::mt19937 rng(config.seed);
  MelodyTrainResult r;
  r.model = MelodyExtractor<float>(config.model, rng);
  NamedTensors<float> all_params = r.model.parameters();
  NamedTensors<float> head_params = r.model.head_parameters();
  Adam<float> opt({config.lr});

  std::uniform_int_distribution<std::size_t> pick(0, train_ids.size() - 1);
  std::uniform_int_distribution<std::size_t> pick_noise(0, noise_tracks.size() - 1);
  r.loss_curve.reserve(std::size_t(config.total_steps));
  for (int step = 0; step < config.total_steps; ++step) {
    if (step == config.backbone_freeze_step)
      r.backbone_hash_at_freeze = param_hash(r.model.backbone_parameters());

    const MelodyUtterance& u = cache[train_ids[pick(rng)]];
    AudioBuffer input = u.audio;
    if (!clean_only && has_signal(u.audio)) {
      const AudioBuffer& noise = noise_tracks[pick_noise(rng)];
      std::uniform_int_distribution<std::size_t> pick_offset(0, noise.samples.size() - 1);
      const std::size_t offset = pick_offset(rng);
      double snr = config.snr_min_db;
      if (config.snr_max_db > config.snr_min_db)
        snr = std::uniform_real_distribution<double>(config.snr_min_db, config.snr_max_db)(rng);
      input = mix_at_snr(u.audio, rotate_noise(noise, offset), snr).mixture;
    }
    const MelSpectrogram mel = mel_spectrogram_of(input);
    const Eigen::Index total = std::min(mel.num_frames(), Eigen::Index(u.targets.size()));
    const Eigen::Index crop = std::min(Eigen::Index(config.crop_frames), total);
    Eigen::Index t0 = 0;
    if (total > crop)
      t0 = Eigen::Index(std::uniform_int_distribution<std::size_t>(
          0, std::size_t(total - crop))(rng));

    Tape<float> tape;
    TapeScope<float> scope(tape);
    const auto out = r.model.forward(mel_rows_to_tensor(mel, t0, t0 + crop));
    const Tensor<float> loss =
        melody_loss(out.predictions, targets_rows_to_tensor(u.targets, t0, t0 + crop));
    r.loss_curve.push_back(loss.item());
    tape.backward(loss);
    opt.step(step < config.backbone_freeze_step ? all_params : head_params, tape);
  }
  if (config.backbone_freeze_step == config.total_steps)
    r.backbone_hash_at_freeze = param_hash(r.model.backbone_parameters());
  r.backbone_hash_final = param_hash(r.model.backbone_parameters());

  const std::vector<std::size_t>& eval_ids = dev_ids.empty() ? train_ids : dev_ids;
  r.dev_clean = accumulate_metrics(r.model, cache, eval_ids, noise_tracks,
                                   std::numeric_limits<double>::infinity());
  r.dev_snr0 = accumulate_metrics(r.model, cache, eval_ids, noise_tracks, 0.0);
  return r;
}

FeatureSequence extract_melody_features(const MelodyExtractor<float>& model,
                                        const AudioBuffer& audio) {
  const auto out = model.forward(mel_to_tensor(mel_spectrogram_of(audio)));
  FeatureSequence f;
  f.frames = out.features.mat();
  return f;
}

FeatureSequence extract_backbone_features(const MelodyExtractor<float>& model,
                                          const AudioBuffer& audio) {
  FeatureSequence f;
  f.frames = model.backbone_forward(mel_to_tensor(mel_spectrogram_of(audio))).mat();
  return f;
}

}  // namespace rsvc
