#pragma once

#include <functional>
#include <string>
#include <vector>

#include "rsvc/content.hpp"
#include "rsvc/melody.hpp"

namespace rsvc {

// ---------------------------------------------------------------------------
// Model
// ---------------------------------------------------------------------------

struct ConversionConfig {
  int d_content_in = 64;   // BNF width
  int d_melody_in = 128;   // melody feature width; 3 for contour inputs, 0 disables the branch
  int d_model = 128;
  int n_heads = 4;
  int d_ff = 256;
  int n_mels = kNumMels;
  bool use_cin = true;  // ablation switch: false feeds raw melody encodings to the fuser
  // Feature-source contract for learned melody inputs: false takes the
  // extractor's tuned head output, true its raw backbone activations.
  bool melody_from_backbone = false;
};

/// Frame-aligned content and melody encodings, fused after conditional
/// instance normalization of the melody branch, decoded back to a mel
/// spectrogram. Block counts are part of the architecture, not the config.
template <typename S = float>
struct ConversionModel {
  static constexpr int kContentBlocks = 2;
  static constexpr int kMelodyBlocks = 3;
  static constexpr int kDecoderBlocks = 6;

  ConversionConfig cfg;
  Linear<S> content_proj;
  FFTStack<S> content_enc;
  Linear<S> melody_proj;
  FFTStack<S> melody_enc;
  Tensor<S> cin_gamma, cin_beta;
  Linear<S> fuse_proj;
  FFTStack<S> decoder;
  Linear<S> out_proj;

  ConversionModel() = default;
  ConversionModel(const ConversionConfig& c, std::mt19937& rng)
      : cfg(c),
        content_proj(c.d_content_in, c.d_model, rng),
        content_enc(kContentBlocks, c.d_model, c.n_heads, c.d_ff, rng) {
    if (c.d_melody_in > 0) {
      melody_proj = Linear<S>(c.d_melody_in, c.d_model, rng);
      melody_enc = FFTStack<S>(kMelodyBlocks, c.d_model, c.n_heads, c.d_ff, rng);
      if (c.use_cin) {
        cin_gamma = Tensor<S>::ones({c.d_model}, true);
        cin_beta = Tensor<S>::zeros({c.d_model}, true);
      }
    }
    fuse_proj = Linear<S>(c.d_melody_in > 0 ? 2 * c.d_model : c.d_model, c.d_model, rng);
    decoder = FFTStack<S>(kDecoderBlocks, c.d_model, c.n_heads, c.d_ff, rng);
    out_proj = Linear<S>(c.d_model, c.n_mels, rng);
  }

  bool has_melody_branch() const { return cfg.d_melody_in > 0; }

  NamedTensors<S> parameters() const {
    NamedTensors<S> p;
    content_proj.collect("conv.content_proj", p);
    content_enc.collect("conv.content_enc", p);
    if (has_melody_branch()) {
      melody_proj.collect("conv.melody_proj", p);
      melody_enc.collect("conv.melody_enc", p);
      if (cfg.use_cin) {
        p.emplace_back("conv.cin.gamma", cin_gamma);
        p.emplace_back("conv.cin.beta", cin_beta);
      }
    }
    fuse_proj.collect("conv.fuse_proj", p);
    decoder.collect("conv.decoder", p);
    out_proj.collect("conv.out_proj", p);
    return p;
  }
};

/// Instance normalization over time per channel with one learned affine.
template <typename S>
Tensor<S> conditional_instance_norm(const Tensor<S>& x, const Tensor<S>& gamma,
                                    const Tensor<S>& beta) {
  return add(mul(instance_norm(x), gamma), beta);
}

template <typename S>
struct ConversionOutput {
  Tensor<S> mel;             // [T, n_mels]
  Tensor<S> melody_pre_cin;  // [T, d_model]; empty when the branch is disabled
  Tensor<S> melody_post_cin;
};

template <typename S>
ConversionOutput<S> forward_convert(const ConversionModel<S>& model, const Tensor<S>& content,
                                    const Tensor<S>& melody) {
  if (content.rank() != 2 || content.shape[1] != model.cfg.d_content_in)
    throw std::invalid_argument("forward_convert: content features must be [T," +
                                std::to_string(model.cfg.d_content_in) + "], got " +
                                shape_str(content.shape));
  ConversionOutput<S> out;
  Tensor<S> c = model.content_enc(model.content_proj(content));
  Tensor<S> fused = c;
  if (model.has_melody_branch()) {
    if (melody.rank() != 2 || melody.shape[1] != model.cfg.d_melody_in)
      throw std::invalid_argument("forward_convert: melody features must be [T," +
                                  std::to_string(model.cfg.d_melody_in) + "], got " +
                                  shape_str(melody.shape));
    if (melody.shape[0] != content.shape[0])
      throw std::invalid_argument("forward_convert: frame count mismatch: content has " +
                                  std::to_string(content.shape[0]) + " frames, melody has " +
                                  std::to_string(melody.shape[0]));
    out.melody_pre_cin = model.melody_enc(model.melody_proj(melody));
    out.melody_post_cin =
        model.cfg.use_cin
            ? conditional_instance_norm(out.melody_pre_cin, model.cin_gamma, model.cin_beta)
            : out.melody_pre_cin;
    fused = concat_cols(c, out.melody_post_cin);
  }
  out.mel = model.out_proj(model.decoder(model.fuse_proj(fused)));
  return out;
}

/// Mean absolute error between predicted and reference mel spectrograms.
template <typename S>
Tensor<S> reconstruction_loss(const Tensor<S>& predicted, const Tensor<S>& reference) {
  return l1_distance(predicted, reference);
}

// ---------------------------------------------------------------------------
// Inference
// ---------------------------------------------------------------------------

using PitchExtractorFn = std::function<MelodyContour(const AudioBuffer&)>;

/// Seam for conversion-time pitch extraction. Only the contour-input baseline
/// reads it; the robust path has no access to source pitch at all, which the
/// tests pin down by swapping in an extractor that throws.
PitchExtractorFn& conversion_pitch_extractor();

struct ConvertResult {
  AudioBuffer audio;
  MelSpectrogram mel;  // the predicted spectrogram the audio was rendered from
};

/// Any-to-one conversion: content + learned melody features in, target-voice
/// audio out. Source pitch and energy are never extracted.
ConvertResult convert(const ContentModel<float>& content_model,
                      const MelodyExtractor<float>& melody_model,
                      const ConversionModel<float>& conversion_model, const AudioBuffer& audio);

/// Contour-input baseline: feeds the normalized (pitch, energy, vuv) track of
/// the source through the melody branch instead of learned features.
ConvertResult convert_with_pitch_energy(const ContentModel<float>& content_model,
                                        const ConversionModel<float>& conversion_model,
                                        const AudioBuffer& audio);

// ---------------------------------------------------------------------------
// Ground-truth-aligned cache
// ---------------------------------------------------------------------------

/// Combined hash of every weight that influences conversion output.
std::uint64_t conversion_weights_hash(const ContentModel<float>& content_model,
                                      const MelodyExtractor<float>& melody_model,
                                      const ConversionModel<float>& conversion_model);

struct GtaConfig {
  bool weights_trained = true;  // false stamps a warning into every cache item
};

struct GtaItem {
  std::string utterance_id;
  std::string gta_path;  // checkpoint container holding tensor "mel"
  std::string wav_path;  // the paired ground-truth audio, relative to the corpus dir
};

struct GtaResult {
  std::vector<GtaItem> items;
  std::uint64_t weights_hash_before = 0;
  std::uint64_t weights_hash_after = 0;
};

/// Runs the frozen models over every target-role utterance and caches the
/// predicted mel next to a JSON-lines index (gta.jsonl). Generation must not
/// move any weight; the before/after hashes prove it.
GtaResult generate_gta_dataset(const ContentModel<float>& content_model,
                               const MelodyExtractor<float>& melody_model,
                               const ConversionModel<float>& conversion_model,
                               const std::vector<ManifestEntry>& manifest,
                               const std::string& base_dir, const std::string& out_dir,
                               const GtaConfig& config = {});

std::vector<GtaItem> load_gta_index(const std::string& path);

}  // namespace rsvc
