#pragma once

#include <string>
#include <vector>

#include "rsvc/content.hpp"
#include "rsvc/corpus.hpp"
#include "rsvc/dsp.hpp"
#include "rsvc/nn.hpp"

namespace rsvc {

// ---------------------------------------------------------------------------
// Targets
// ---------------------------------------------------------------------------

/// Per-frame training targets: pitch min-max normalized over the utterance's
/// voiced frames (0 where unvoiced), energy min-max normalized over all
/// frames, and the voiced flag.
struct MelodyTargets {
  std::vector<float> pitch, energy, vuv;

  std::size_t size() const { return pitch.size(); }
};

MelodyTargets melody_targets_from_contour(const MelodyContour& contour);

/// [T, 3] tensor with columns (P, E, V).
Tensor<float> targets_to_tensor(const MelodyTargets& t);

// ---------------------------------------------------------------------------
// Model
// ---------------------------------------------------------------------------

struct MelodyConfig {
  int n_mels = kNumMels;
  int d_model = 128;  // backbone width == melody feature width
  int backbone_blocks = 4;
  int head_blocks = 3;
  int n_heads = 4;
  int d_ff = 256;
};

/// Backbone transformer over mel frames (the trainable stand-in for a
/// pretrained waveform model) plus a 3-block head; the head's output is the
/// melody feature, and a final linear maps it to (pitch, energy, vuv-logit).
template <typename S = float>
struct MelodyExtractor {
  MelodyConfig cfg;
  Linear<S> in_proj;
  FFTStack<S> backbone;
  FFTStack<S> head;
  Linear<S> out_proj;

  MelodyExtractor() = default;
  MelodyExtractor(const MelodyConfig& c, std::mt19937& rng)
      : cfg(c),
        in_proj(c.n_mels, c.d_model, rng),
        backbone(c.backbone_blocks, c.d_model, c.n_heads, c.d_ff, rng),
        head(c.head_blocks, c.d_model, c.n_heads, c.d_ff, rng),
        out_proj(c.d_model, 3, rng) {}

  struct Out {
    Tensor<S> features;     // [T, d_model], strictly before the final projection
    Tensor<S> predictions;  // [T, 3]: pitch, energy, sigmoid(vuv-logit)
  };

  Tensor<S> backbone_forward(const Tensor<S>& mel) const {
    if (mel.rank() != 2 || mel.shape[1] != cfg.n_mels)
      throw std::invalid_argument("melody: expected mel [T," + std::to_string(cfg.n_mels) +
                                  "], got " + shape_str(mel.shape));
    return backbone(in_proj(mel));
  }

  Out forward(const Tensor<S>& mel) const {
    Out o;
    o.features = head(backbone_forward(mel));
    Tensor<S> raw = out_proj(o.features);
    o.predictions = concat_cols(slice_cols(raw, 0, 2), sigmoid(slice_cols(raw, 2, 3)));
    return o;
  }

  NamedTensors<S> backbone_parameters() const {
    NamedTensors<S> p;
    in_proj.collect("melody.in_proj", p);
    backbone.collect("melody.backbone", p);
    return p;
  }

  NamedTensors<S> head_parameters() const {
    NamedTensors<S> p;
    head.collect("melody.head", p);
    out_proj.collect("melody.out_proj", p);
    return p;
  }

  NamedTensors<S> parameters() const {
    NamedTensors<S> p = backbone_parameters();
    NamedTensors<S> h = head_parameters();
    p.insert(p.end(), h.begin(), h.end());
    return p;
  }
};

/// Sum of the three per-channel mean-L1 terms between [T,3] predictions and
/// targets.
template <typename S>
Tensor<S> melody_loss(const Tensor<S>& pred, const Tensor<S>& target) {
  if (pred.shape != target.shape)
    throw std::invalid_argument("melody_loss: shape mismatch " + shape_str(pred.shape) + " vs " +
                                shape_str(target.shape));
  if (pred.rank() != 2 || pred.shape[1] != 3)
    throw std::invalid_argument("melody_loss: expected [T,3], got " + shape_str(pred.shape));
  Tensor<S> loss = l1_distance(slice_cols(pred, 0, 1), slice_cols(target, 0, 1));
  loss = add(loss, l1_distance(slice_cols(pred, 1, 2), slice_cols(target, 1, 2)));
  return add(loss, l1_distance(slice_cols(pred, 2, 3), slice_cols(target, 2, 3)));
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct MelodyTrainConfig {
  MelodyConfig model;
  int total_steps = 3000;
  int backbone_freeze_step = 500;
  double snr_min_db = 0.0;  // +inf on both ends trains on clean audio
  double snr_max_db = 20.0;
  int crop_frames = 64;
  float lr = 2e-4f;
  unsigned seed = 1;
};

struct MelodyEvalMetrics {
  double pitch_l1 = 0.0;
  double energy_l1 = 0.0;
  double vuv_l1 = 0.0;
};

struct MelodyTrainResult {
  MelodyExtractor<float> model;
  std::vector<float> loss_curve;
  MelodyEvalMetrics dev_clean, dev_snr0;
  std::uint64_t backbone_hash_at_freeze = 0;
  std::uint64_t backbone_hash_final = 0;
};

/// Reads every role=="noise" entry of a manifest and loads its audio.
std::vector<AudioBuffer> load_noise_tracks(const std::string& manifest_path,
                                           const std::string& base_dir);

/// Trains on noisy mixtures (random track, random SNR in range) against the
/// clean analytic contour targets; backbone updates stop at the freeze step.
MelodyTrainResult train_melody_extractor(const std::vector<ManifestEntry>& manifest,
                                         const std::string& base_dir,
                                         const std::vector<AudioBuffer>& noise_tracks,
                                         const MelodyTrainConfig& config);

FeatureSequence extract_melody_features(const MelodyExtractor<float>& model,
                                        const AudioBuffer& audio);

/// The backbone's activations without the head — the "untuned features"
/// comparison point.
FeatureSequence extract_backbone_features(const MelodyExtractor<float>& model,
                                          const AudioBuffer& audio);

/// Mean per-term L1 between a [T,3] prediction matrix and targets.
MelodyEvalMetrics melody_prediction_metrics(const Eigen::Ref<const MatX<float>>& pred,
                                            const MelodyTargets& target);

}  // namespace rsvc
