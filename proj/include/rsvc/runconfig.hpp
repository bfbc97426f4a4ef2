#pragma once

#include <string>
#include <vector>

#include "rsvc/adversarial.hpp"
#include "rsvc/evalkit.hpp"

namespace rsvc {

struct EvaluationConfig {
  std::vector<double> snrs_db = {0.0, 5.0, 10.0, 15.0};
  int max_utterances = 8;
  int comparison_max_utterances = 6;
  unsigned seed = 1;
};

/// Everything one run needs, parsed from a sectioned key = value text file.
/// Derived widths are wired here once instead of being repeated per file:
/// the conversion model consumes content.d_bnf-wide BNFs, and its melody
/// width follows melody_source (extractor/backbone -> melody.d_model,
/// contour -> 3, none -> 0).
struct RunConfig {
  CorpusConfig corpus;
  ContentTrainConfig content;
  MelodyTrainConfig melody;
  SvcTrainConfig svc;
  EvaluationConfig evaluation;
  std::string melody_source = "extractor";  // extractor | backbone | contour | none

  /// Re-applies the cross-section derivations after direct field edits.
  void wire();
};

RunConfig parse_run_config(const std::string& text);
RunConfig load_run_config(const std::string& path);

/// Canonical form: fixed section and key order, every key present. Parsing
/// the canonical text reproduces the config exactly.
std::string run_config_to_text(const RunConfig& config);

/// Digest of the canonical form, so semantically equal files hash equally no
/// matter their comments or spacing.
std::uint64_t run_config_hash(const RunConfig& config);

}  // namespace rsvc
