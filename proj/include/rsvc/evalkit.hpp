#pragma once

#include <string>
#include <vector>

#include "rsvc/adversarial.hpp"

namespace rsvc {

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

/// Timbre stand-in: per-mel-channel mean and standard deviation over the
/// voiced frames (all frames when nothing is voiced), concatenated into a
/// 2*n_mels vector and L2-normalized.
Eigen::VectorXf speaker_embedding(const AudioBuffer& audio);

/// Centroid of the target-role utterance embeddings, L2-normalized.
Eigen::VectorXf target_reference_embedding(const std::vector<ManifestEntry>& manifest,
                                           const std::string& base_dir);

float cosine_similarity(const Eigen::VectorXf& a, const Eigen::VectorXf& b);

/// RMSE between two key-normalized pitch tracks: each keeps only its voiced
/// frames and is min-max normalized, then the shorter is linearly resampled
/// onto the longer one's grid. Lives in [0,1]; transposing a melody costs
/// nothing. Throws when either track has no voiced frame at all.
double f0_rmse_tracks(const MelodyContour& a, const MelodyContour& b);
double f0_rmse(const AudioBuffer& converted, const AudioBuffer& source);

std::uint64_t hash_text(const std::string& text);

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

struct EvalRow {
  std::string condition;
  std::string variant;
  double f0_rmse = 0.0;
  double cos_sim = 0.0;
  bool has_cos_sim = false;
};

struct EvalReport {
  std::string title;
  std::uint64_t config_hash = 0;
  unsigned seed = 0;
  std::vector<EvalRow> rows;
};

std::string report_to_text(const EvalReport& report);
std::string report_to_jsonl(const EvalReport& report);
void save_report(const EvalReport& report, const std::string& text_path,
                 const std::string& jsonl_path);

// ---------------------------------------------------------------------------
// Harnesses
// ---------------------------------------------------------------------------

/// External-role evaluation utterances: the test split when it has any,
/// otherwise every external utterance, capped at max_utterances.
std::vector<const ManifestEntry*> evaluation_utterances(
    const std::vector<ManifestEntry>& manifest, int max_utterances);

struct SnrSweepConfig {
  std::vector<double> snrs_db = {0.0, 5.0, 10.0, 15.0};
  int max_utterances = 8;
  unsigned seed = 1;
};

/// Converts noisy mixtures of the evaluation utterances at each SNR (plus a
/// clean row) through both pipelines and reports the mean F0 RMSE against the
/// clean source. "robust" uses learned melody features of the mixture;
/// "origin-pitch-energy" feeds the contour extracted from the mixture.
/// A conversion whose output has no voiced frame at all scores the ceiling
/// 1.0 rather than aborting the sweep; the same policy applies to the other
/// harnesses.
EvalReport snr_sweep(const ContentModel<float>& content_model,
                     const MelodyExtractor<float>& melody_model,
                     const ConversionModel<float>& robust_model,
                     const ConversionModel<float>& baseline_model,
                     const std::vector<ManifestEntry>& manifest, const std::string& base_dir,
                     const std::vector<AudioBuffer>& noise_tracks, const SnrSweepConfig& config);

struct MelodyFeatureComparisonConfig {
  SvcTrainConfig train;  // width/source fields are overridden per variant
  int max_utterances = 6;
  unsigned seed = 1;
};

struct MelodyFeatureComparisonResult {
  EvalReport report;
  // the per-variant trained models, for reuse in further sweeps
  ConversionModel<float> none, backbone_raw, proposed, pitch_energy;
};

/// Trains one conversion model per melody-feature source and scores each on
/// clean evaluation utterances: no melody input at all, the untuned backbone
/// of a fresh extractor, the trained extractor, and the source contour.
MelodyFeatureComparisonResult melody_feature_comparison(
    const ContentModel<float>& content_model, const MelodyExtractor<float>& trained_melody,
    const MelodyExtractor<float>& untrained_melody, const std::vector<ManifestEntry>& manifest,
    const std::string& base_dir, const MelodyFeatureComparisonConfig& config);

struct AblationConfig {
  SvcTrainConfig train;
  int max_utterances = 6;
  unsigned seed = 1;
};

/// Trains the full objective and three ablations (no reconstruction
/// adversary, no conditional instance norm, no similarity losses) and scores
/// timbre similarity plus melody fidelity on clean evaluation utterances.
EvalReport ablation_run(const ContentModel<float>& content_model,
                        const MelodyExtractor<float>& melody_model,
                        const std::vector<ManifestEntry>& manifest, const std::string& base_dir,
                        const AblationConfig& config);

}  // namespace rsvc
