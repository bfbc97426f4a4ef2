#include "rsvc/model_io.hpp"

#include <random>

namespace rsvc {

namespace {

using Meta = std::map<std::string, std::string>;

const std::string& require(const Meta& meta, const std::string& key) {
  const auto it = meta.find(key);
  if (it == meta.end()) throw CheckpointError("checkpoint meta is missing '" + key + "'");
  return it->second;
}

int meta_int(const Meta& meta, const std::string& key) {
  const std::string& v = require(meta, key);
  std::size_t used = 0;
  int out = 0;
  try {
    out = std::stoi(v, &used);
  } catch (const std::exception&) {
    used = std::string::npos;
  }
  if (used != v.size())
    throw CheckpointError("checkpoint meta key '" + key + "' is not an integer: '" + v + "'");
  return out;
}

bool meta_bool(const Meta& meta, const std::string& key) {
  const std::string& v = require(meta, key);
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw CheckpointError("checkpoint meta key '" + key + "' is not a boolean: '" + v + "'");
}

void check_kind(const Meta& meta, const std::string& wanted) {
  const std::string& kind = require(meta, "kind");
  if (kind != wanted)
    throw CheckpointError("checkpoint holds a '" + kind + "' model, wanted '" + wanted + "'");
}

template <class Model>
void fill_from_checkpoint(Model& model, const Checkpoint& cp) {
  NamedTensors<float> params = model.parameters();
  load_parameters(params, cp.tensors);
}

}  // namespace

void save_content_model(const ContentModel<float>& model, const Meta& extra_meta,
                        const std::string& path) {
  Meta meta = extra_meta;
  meta["kind"] = "content";
  meta["n_mels"] = std::to_string(model.cfg.n_mels);
  meta["d_model"] = std::to_string(model.cfg.d_model);
  meta["n_blocks"] = std::to_string(model.cfg.n_blocks);
  meta["n_heads"] = std::to_string(model.cfg.n_heads);
  meta["d_ff"] = std::to_string(model.cfg.d_ff);
  meta["d_bnf"] = std::to_string(model.cfg.d_bnf);
  meta["vocab_size"] = std::to_string(model.cfg.vocab_size);
  save_checkpoint(model.parameters(), meta, path);
}

void save_melody_model(const MelodyExtractor<float>& model, const Meta& extra_meta,
                       const std::string& path) {
  Meta meta = extra_meta;
  meta["kind"] = "melody";
  meta["n_mels"] = std::to_string(model.cfg.n_mels);
  meta["d_model"] = std::to_string(model.cfg.d_model);
  meta["backbone_blocks"] = std::to_string(model.cfg.backbone_blocks);
  meta["head_blocks"] = std::to_string(model.cfg.head_blocks);
  meta["n_heads"] = std::to_string(model.cfg.n_heads);
  meta["d_ff"] = std::to_string(model.cfg.d_ff);
  save_checkpoint(model.parameters(), meta, path);
}

void save_conversion_model(const ConversionModel<float>& model, const Meta& extra_meta,
                           const std::string& path) {
  Meta meta = extra_meta;
  meta["kind"] = "conversion";
  meta["d_content_in"] = std::to_string(model.cfg.d_content_in);
  meta["d_melody_in"] = std::to_string(model.cfg.d_melody_in);
  meta["d_model"] = std::to_string(model.cfg.d_model);
  meta["n_heads"] = std::to_string(model.cfg.n_heads);
  meta["d_ff"] = std::to_string(model.cfg.d_ff);
  meta["n_mels"] = std::to_string(model.cfg.n_mels);
  meta["use_cin"] = model.cfg.use_cin ? "true" : "false";
  meta["melody_from_backbone"] = model.cfg.melody_from_backbone ? "true" : "false";
  save_checkpoint(model.parameters(), meta, path);
}

void save_discriminators(const Discriminators<float>& model, const Meta& extra_meta,
                         const std::string& path) {
  Meta meta = extra_meta;
  meta["kind"] = "discriminators";
  meta["n_mels"] = std::to_string(model.cfg.n_mels);
  meta["d_emb_in"] = std::to_string(model.cfg.d_emb_in);
  meta["channels"] = std::to_string(model.cfg.channels);
  meta["d_hidden"] = std::to_string(model.cfg.d_hidden);
  save_checkpoint(model.parameters(), meta, path);
}

LoadedContentModel load_content_model(const std::string& path) {
  Checkpoint cp = load_checkpoint(path);
  check_kind(cp.meta, "content");
  ContentConfig cfg;
  cfg.n_mels = meta_int(cp.meta, "n_mels");
  cfg.d_model = meta_int(cp.meta, "d_model");
  cfg.n_blocks = meta_int(cp.meta, "n_blocks");
  cfg.n_heads = meta_int(cp.meta, "n_heads");
  cfg.d_ff = meta_int(cp.meta, "d_ff");
  cfg.d_bnf = meta_int(cp.meta, "d_bnf");
  cfg.vocab_size = meta_int(cp.meta, "vocab_size");
  std::mt19937 rng(0);
  ContentModel<float> model(cfg, rng);
  fill_from_checkpoint(model, cp);
  return {std::move(model), std::move(cp.meta)};
}

LoadedMelodyModel load_melody_model(const std::string& path) {
  Checkpoint cp = load_checkpoint(path);
  check_kind(cp.meta, "melody");
  MelodyConfig cfg;
  cfg.n_mels = meta_int(cp.meta, "n_mels");
  cfg.d_model = meta_int(cp.meta, "d_model");
  cfg.backbone_blocks = meta_int(cp.meta, "backbone_blocks");
  cfg.head_blocks = meta_int(cp.meta, "head_blocks");
  cfg.n_heads = meta_int(cp.meta, "n_heads");
  cfg.d_ff = meta_int(cp.meta, "d_ff");
  std::mt19937 rng(0);
  MelodyExtractor<float> model(cfg, rng);
  fill_from_checkpoint(model, cp);
  return {std::move(model), std::move(cp.meta)};
}

LoadedConversionModel load_conversion_model(const std::string& path) {
  Checkpoint cp = load_checkpoint(path);
  check_kind(cp.meta, "conversion");
  ConversionConfig cfg;
  cfg.d_content_in = meta_int(cp.meta, "d_content_in");
  cfg.d_melody_in = meta_int(cp.meta, "d_melody_in");
  cfg.d_model = meta_int(cp.meta, "d_model");
  cfg.n_heads = meta_int(cp.meta, "n_heads");
  cfg.d_ff = meta_int(cp.meta, "d_ff");
  cfg.n_mels = meta_int(cp.meta, "n_mels");
  cfg.use_cin = meta_bool(cp.meta, "use_cin");
  cfg.melody_from_backbone = meta_bool(cp.meta, "melody_from_backbone");
  std::mt19937 rng(0);
  ConversionModel<float> model(cfg, rng);
  fill_from_checkpoint(model, cp);
  return {std::move(model), std::move(cp.meta)};
}

LoadedDiscriminators load_discriminators(const std::string& path) {
  Checkpoint cp = load_checkpoint(path);
  check_kind(cp.meta, "discriminators");
  AdversarialConfig cfg;
  cfg.n_mels = meta_int(cp.meta, "n_mels");
  cfg.d_emb_in = meta_int(cp.meta, "d_emb_in");
  cfg.channels = meta_int(cp.meta, "channels");
  cfg.d_hidden = meta_int(cp.meta, "d_hidden");
  std::mt19937 rng(0);
  Discriminators<float> model(cfg, rng);
  fill_from_checkpoint(model, cp);
  return {std::move(model), std::move(cp.meta)};
}

}  // namespace rsvc
