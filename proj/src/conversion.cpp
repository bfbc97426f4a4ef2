#include "rsvc/conversion.hpp"

#include <filesystem>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

#include "rsvc/threading.hpp"
#include "rsvc/wav.hpp"

namespace fs = std::filesystem;

namespace rsvc {

PitchExtractorFn& conversion_pitch_extractor() {
  static PitchExtractorFn fn = [](const AudioBuffer& audio) {
    return extract_melody_ground_truth(audio);
  };
  return fn;
}

namespace {

MelSpectrogram tensor_to_mel(const Tensor<float>& t) {
  MelSpectrogram mel;
  mel.frames = t.mat();
  mel.n_mels = int(t.shape[1]);
  return mel;
}

/// Melody-branch input for the learned-feature pipeline. A 3-wide branch means
/// the model was trained on contour inputs and belongs to the baseline entry
/// point instead.
Tensor<float> robust_melody_features(const MelodyExtractor<float>& melody_model,
                                     const ConversionModel<float>& conversion_model,
                                     const AudioBuffer& audio) {
  const int want = conversion_model.cfg.d_melody_in;
  if (want == 3)
    throw std::invalid_argument(
        "convert: this conversion model takes contour inputs; use the pitch-energy entry point");
  if (want != melody_model.cfg.d_model)
    throw std::invalid_argument("convert: conversion model expects " + std::to_string(want) +
                                "-dim melody features but the extractor emits " +
                                std::to_string(melody_model.cfg.d_model));
  return features_to_tensor(conversion_model.cfg.melody_from_backbone
                                ? extract_backbone_features(melody_model, audio)
                                : extract_melody_features(melody_model, audio));
}

ConvertResult render(const ConversionModel<float>& conversion_model, const Tensor<float>& content,
                     const Tensor<float>& melody) {
  const auto out = forward_convert(conversion_model, content, melody);
  ConvertResult r;
  r.mel = tensor_to_mel(out.mel);
  r.audio = griffin_lim(r.mel);
  return r;
}

}  // namespace

ConvertResult convert(const ContentModel<float>& content_model,
                      const MelodyExtractor<float>& melody_model,
                      const ConversionModel<float>& conversion_model, const AudioBuffer& audio) {
  const MelSpectrogram mel = mel_spectrogram_of(audio);
  const Tensor<float> content = features_to_tensor(extract_bnf(content_model, mel));
  Tensor<float> melody;
  if (conversion_model.has_melody_branch())
    melody = robust_melody_features(melody_model, conversion_model, audio);
  return render(conversion_model, content, melody);
}

ConvertResult convert_with_pitch_energy(const ContentModel<float>& content_model,
                                        const ConversionModel<float>& conversion_model,
                                        const AudioBuffer& audio) {
  if (conversion_model.cfg.d_melody_in != 3)
    throw std::invalid_argument("convert_with_pitch_energy: conversion model must take 3-dim "
                                "contour inputs, has d_melody_in=" +
                                std::to_string(conversion_model.cfg.d_melody_in));
  const MelSpectrogram mel = mel_spectrogram_of(audio);
  const Tensor<float> content = features_to_tensor(extract_bnf(content_model, mel));
  const MelodyContour contour = conversion_pitch_extractor()(audio);
  const Tensor<float> melody = targets_to_tensor(melody_targets_from_contour(contour));
  return render(conversion_model, content, melody);
}

std::uint64_t conversion_weights_hash(const ContentModel<float>& content_model,
                                      const MelodyExtractor<float>& melody_model,
                                      const ConversionModel<float>& conversion_model) {
  NamedTensors<float> all = content_model.parameters();
  NamedTensors<float> m = melody_model.parameters();
  NamedTensors<float> c = conversion_model.parameters();
  all.insert(all.end(), m.begin(), m.end());
  all.insert(all.end(), c.begin(), c.end());
  return param_hash(all);
}

GtaResult generate_gta_dataset(const ContentModel<float>& content_model,
                               const MelodyExtractor<float>& melody_model,
                               const ConversionModel<float>& conversion_model,
                               const std::vector<ManifestEntry>& manifest,
                               const std::string& base_dir, const std::string& out_dir,
                               const GtaConfig& config) {
  GtaResult result;
  result.weights_hash_before =
      conversion_weights_hash(content_model, melody_model, conversion_model);

  std::vector<const ManifestEntry*> targets;
  for (const ManifestEntry& e : manifest)
    if (e.role == "target_corpus") targets.push_back(&e);
  if (targets.empty())
    throw std::invalid_argument("gta: manifest has no target-role utterances");

  fs::create_directories(out_dir);
  result.items.resize(targets.size());
  parallel_for(targets.size(), [&](std::size_t i) {
    const ManifestEntry& e = *targets[i];
    const AudioBuffer audio = load_wav((fs::path(base_dir) / e.wav_path).string());
    const MelSpectrogram mel = mel_spectrogram_of(audio);
    const Tensor<float> content = features_to_tensor(extract_bnf(content_model, mel));
    Tensor<float> melody;
    if (conversion_model.has_melody_branch())
      melody = robust_melody_features(melody_model, conversion_model, audio);
    const auto out = forward_convert(conversion_model, content, melody);

    NamedTensors<float> tensors;
    tensors.emplace_back("mel", out.mel.detach());
    std::map<std::string, std::string> meta;
    meta["utterance_id"] = e.utterance_id;
    meta["wav_path"] = e.wav_path;
    if (!config.weights_trained)
      meta["warning"] = "generated from untrained conversion weights";
    const std::string name = e.utterance_id + ".gta";
    save_checkpoint(tensors, meta, (fs::path(out_dir) / name).string());

    result.items[i] = GtaItem{e.utterance_id, name, e.wav_path};
  });

  std::ofstream index(fs::path(out_dir) / "gta.jsonl", std::ios::trunc);
  if (!index) throw std::runtime_error("gta: cannot write index in " + out_dir);
  for (const GtaItem& item : result.items) {
    nlohmann::json j;
    j["utterance_id"] = item.utterance_id;
    j["gta_path"] = item.gta_path;
    j["wav_path"] = item.wav_path;
    index << j.dump() << "\n";
  }
  index.close();

  result.weights_hash_after =
      conversion_weights_hash(content_model, melody_model, conversion_model);
  if (result.weights_hash_before != result.weights_hash_after)
    throw std::runtime_error("gta: model weights moved during generation");
  return result;
}

std::vector<GtaItem> load_gta_index(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("gta: cannot open index " + path);
  std::vector<GtaItem> items;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const nlohmann::json j = nlohmann::json::parse(line);
    items.push_back(GtaItem{j.at("utterance_id").get<std::string>(),
                            j.at("gta_path").get<std::string>(),
                            j.at("wav_path").get<std::string>()});
  }
  return items;
}

}  // namespace rsvc
