#pragma once

#include <array>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "rsvc/dsp.hpp"
#include "rsvc/tensor.hpp"

namespace rsvc {

// ---------------------------------------------------------------------------
// Synthetic singing corpus
// ---------------------------------------------------------------------------

struct SingerSpec {
  std::string singer_id;
  double f0_base_hz = 220.0;                           // register center, 80-600 Hz
  std::array<double, 3> formant_freqs = {700, 1200, 2600};  // strictly increasing, < 8000
  double vibrato_rate_hz = 5.5;
  double vibrato_depth_cents = 30.0;
  double breathiness = 0.1;  // [0, 1]

  void validate() const;
};

struct Note {
  int midi_pitch = 69;
  double duration_s = 0.25;
  int phoneme_token = 0;
};

struct SongScore {
  std::vector<Note> notes;
  double tempo_scale = 1.0;
  int vocab_size = 16;

  void validate() const;
};

/// Tokens at the top of the vocabulary render as breath-only (unvoiced) notes.
int num_unvoiced_tokens(int vocab_size);
bool token_is_voiced(int token, int vocab_size);

struct RenderedUtterance {
  AudioBuffer audio;
  MelodyContour contour;       // analytic ground truth at mel frame rate
  std::vector<int> token_labels;
};

/// Source-filter synthesis: harmonic excitation at the note pitch (with
/// vibrato), parallel formant resonators tuned per phoneme token, breath
/// noise mixed in by singer breathiness. Deterministic in (singer, score, seed).
RenderedUtterance render_utterance(const SingerSpec& singer, const SongScore& score,
                                   unsigned seed);

// ---------------------------------------------------------------------------
// Manifests
// ---------------------------------------------------------------------------

struct ManifestEntry {
  std::string utterance_id;
  std::string wav_path;  // relative to the manifest's directory
  std::string singer_id;
  std::vector<int> token_labels;
  std::string split;  // train | dev | test
  std::string role;   // target_corpus | external_corpus | noise
};

void save_manifest(const std::vector<ManifestEntry>& entries, const std::string& path);
std::vector<ManifestEntry> load_manifest(const std::string& path);

/// Checks every wav path resolves (relative to base_dir) and fields are sane.
void validate_manifest(const std::vector<ManifestEntry>& entries, const std::string& base_dir);

struct CorpusConfig {
  int num_utterances = 200;
  int num_external_singers = 2;
  int num_noise_tracks = 4;
  int vocab_size = 16;
  double target_fraction = 0.5;  // share of utterances sung by the target singer
  double dev_fraction = 0.1;
  double test_fraction = 0.1;
  unsigned seed = 1;
};

/// Renders the corpus into out_dir (wav/ + noise/ subdirs), writes analytic
/// contour sidecars next to each vocal wav, and writes corpus.jsonl.
std::vector<ManifestEntry> generate_corpus(const CorpusConfig& config,
                                           const std::string& out_dir);

std::string contour_path_for(const std::string& wav_path);

void save_contour(const MelodyContour& contour, const std::string& path);
MelodyContour load_contour(const std::string& path);

// ---------------------------------------------------------------------------
// Checkpoint container
// ---------------------------------------------------------------------------

struct CheckpointError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct CheckpointBadMagic : CheckpointError {
  using CheckpointError::CheckpointError;
};
struct CheckpointVersionMismatch : CheckpointError {
  using CheckpointError::CheckpointError;
};
struct CheckpointTruncated : CheckpointError {
  using CheckpointError::CheckpointError;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  NamedTensors<float> tensors;
  std::map<std::string, std::string> meta;
};

void save_checkpoint(const NamedTensors<float>& tensors,
                     const std::map<std::string, std::string>& meta, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace rsvc
