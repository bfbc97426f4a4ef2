#pragma once

#include <map>
#include <string>

#include "rsvc/adversarial.hpp"

namespace rsvc {

/// Model files are plain checkpoints whose meta block records the model kind
/// plus every config field needed to rebuild the module before its tensors
/// are loaded. Callers may pass extra meta (training step counts and the
/// like); reserved keys are overwritten by the saver.

void save_content_model(const ContentModel<float>& model,
                        const std::map<std::string, std::string>& extra_meta,
                        const std::string& path);
void save_melody_model(const MelodyExtractor<float>& model,
                       const std::map<std::string, std::string>& extra_meta,
                       const std::string& path);
void save_conversion_model(const ConversionModel<float>& model,
                           const std::map<std::string, std::string>& extra_meta,
                           const std::string& path);
void save_discriminators(const Discriminators<float>& model,
                         const std::map<std::string, std::string>& extra_meta,
                         const std::string& path);

struct LoadedContentModel {
  ContentModel<float> model;
  std::map<std::string, std::string> meta;
};
struct LoadedMelodyModel {
  MelodyExtractor<float> model;
  std::map<std::string, std::string> meta;
};
struct LoadedConversionModel {
  ConversionModel<float> model;
  std::map<std::string, std::string> meta;
};
struct LoadedDiscriminators {
  Discriminators<float> model;
  std::map<std::string, std::string> meta;
};

// Loading a file whose kind does not match throws CheckpointError naming
// both kinds; a missing config key throws naming the key.
LoadedContentModel load_content_model(const std::string& path);
LoadedMelodyModel load_melody_model(const std::string& path);
LoadedConversionModel load_conversion_model(const std::string& path);
LoadedDiscriminators load_discriminators(const std::string& path);

}  // namespace rsvc
