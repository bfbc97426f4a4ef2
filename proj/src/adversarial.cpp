#include "rsvc/adversarial.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>
#include <sstream>
#include <stdexcept>

#include "rsvc/adam.hpp"
#include "rsvc/threading.hpp"
#include "rsvc/wav.hpp"

namespace fs = std::filesystem;

namespace rsvc {

namespace {

struct SvcItem {
  Tensor<float> mel, content, melody;  // melody stays empty when the branch is off
  Eigen::Index frames = 0;
};

struct SvcCrop {
  Tensor<float> mel, content, melody;
};

Tensor<float> crop_rows(const Tensor<float>& t, Eigen::Index t0, Eigen::Index n) {
  Tensor<float> out = Tensor<float>::zeros({n, t.shape[1]});
  out.mat() = t.mat().middleRows(t0, n);
  return out;
}

// Full-utterance features computed once up front; steps only crop rows.
// Content and melody features stay frame-aligned with the mel because all
// three come from the same frame grid.
std::vector<SvcItem> load_items(const std::vector<const ManifestEntry*>& entries,
                                const std::string& base_dir,
                                const ContentModel<float>& content_model,
                                const MelodyExtractor<float>& melody_model,
                                const ConversionConfig& cfg) {
  std::vector<SvcItem> items(entries.size());
  parallel_for(entries.size(), [&](std::size_t i) {
    const std::string wav = (fs::path(base_dir) / entries[i]->wav_path).string();
    const AudioBuffer audio = load_wav(wav);
    const MelSpectrogram mel = mel_spectrogram_of(audio);
    SvcItem& it = items[i];
    it.mel = mel_to_tensor(mel);
    it.content = features_to_tensor(extract_bnf(content_model, mel));
    it.frames = std::min(it.mel.shape[0], it.content.shape[0]);
    if (cfg.d_melody_in == 3) {
      it.melody =
          targets_to_tensor(melody_targets_from_contour(load_contour(contour_path_for(wav))));
      it.frames = std::min(it.frames, it.melody.shape[0]);
    } else if (cfg.d_melody_in > 0) {
      it.melody = features_to_tensor(cfg.melody_from_backbone
                                         ? extract_backbone_features(melody_model, audio)
                                         : extract_melody_features(melody_model, audio));
      it.frames = std::min(it.frames, it.melody.shape[0]);
    }
  });
  return items;
}

}  // namespace

SvcTrainResult train_svc(const std::vector<ManifestEntry>& manifest, const std::string& base_dir,
                         const ContentModel<float>& content_model,
                         const MelodyExtractor<float>& melody_model,
                         const SvcTrainConfig& config) {
  if (config.total_steps < 1)
    throw std::invalid_argument("train_svc: total_steps must be positive");
  if (config.crop_frames < 2)
    throw std::invalid_argument("train_svc: crop_frames must be at least 2");
  if (config.batch_target < 1)
    throw std::invalid_argument("train_svc: batch_target must be positive");
  if (config.batch_external < 1)
    throw std::invalid_argument("train_svc: batch_external must be positive");
  if (config.lr_g <= 0.0f || config.lr_d <= 0.0f)
    throw std::invalid_argument("train_svc: learning rates must be positive");
  if (config.discriminators.n_mels != config.conversion.n_mels)
    throw std::invalid_argument("train_svc: discriminator n_mels " +
                                std::to_string(config.discriminators.n_mels) +
                                " does not match conversion n_mels " +
                                std::to_string(config.conversion.n_mels));
  if (config.conversion.d_melody_in > 0 &&
      config.discriminators.d_emb_in != config.conversion.d_model)
    throw std::invalid_argument("train_svc: embedding discriminator width " +
                                std::to_string(config.discriminators.d_emb_in) +
                                " does not match conversion d_model " +
                                std::to_string(config.conversion.d_model));

  std::vector<const ManifestEntry*> target_entries, external_entries;
  for (const ManifestEntry& e : manifest) {
    if (e.split != "train") continue;
    if (e.role == "target_corpus")
      target_entries.push_back(&e);
    else if (e.role == "external_corpus")
      external_entries.push_back(&e);
  }
  if (target_entries.empty())
    throw std::invalid_argument("train_svc: manifest has no target-role training utterances");

  SvcTrainResult result;
  std::set<std::string> seen_warnings;
  auto warn = [&](const std::string& w) {
    if (seen_warnings.insert(w).second) result.warnings.push_back(w);
  };

  result.content_hash_before = param_hash(content_model.parameters());
  result.melody_hash_before = param_hash(melody_model.parameters());

  std::vector<SvcItem> targets =
      load_items(target_entries, base_dir, content_model, melody_model, config.conversion);
  std::vector<SvcItem> externals =
      load_items(external_entries, base_dir, content_model, melody_model, config.conversion);

  auto drop_short = [&](std::vector<SvcItem>& pool, const char* label) {
    auto it = std::remove_if(pool.begin(), pool.end(), [&](const SvcItem& s) {
      return s.frames < config.crop_frames;
    });
    if (it != pool.end()) {
      pool.erase(it, pool.end());
      warn(std::string("train_svc: dropped ") + label + " utterances shorter than the crop");
    }
  };
  drop_short(targets, "target");
  drop_short(externals, "external");
  if (targets.empty())
    throw std::invalid_argument("train_svc: every target utterance is shorter than crop_frames");
  if (externals.empty())
    warn("train_svc: no external-corpus utterances; similarity losses disabled");

  std::mt19937 rng(config.seed);
  result.model = ConversionModel<float>(config.conversion, rng);
  result.discriminators = Discriminators<float>(config.discriminators, rng);
  const bool melody_branch = result.model.has_melody_branch();

  NamedTensors<float> g_params = result.model.parameters();
  NamedTensors<float> d_params = result.discriminators.parameters();
  Adam<float> opt_g({config.lr_g});
  Adam<float> opt_d({config.lr_d});

  auto draw = [&](const std::vector<SvcItem>& pool, int count) {
    std::vector<SvcCrop> crops;
    crops.reserve(std::size_t(count));
    std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
    for (int i = 0; i < count; ++i) {
      const SvcItem& it = pool[pick(rng)];
      std::uniform_int_distribution<Eigen::Index> start(0, it.frames - config.crop_frames);
      const Eigen::Index t0 = start(rng);
      SvcCrop c;
      c.mel = crop_rows(it.mel, t0, config.crop_frames);
      c.content = crop_rows(it.content, t0, config.crop_frames);
      if (melody_branch) c.melody = crop_rows(it.melody, t0, config.crop_frames);
      crops.push_back(std::move(c));
    }
    return crops;
  };

  for (int step = 0; step < config.total_steps; ++step) {
    SvcLossRow row;
    row.step = step;
    const bool adversarial_on = step >= config.schedule.warmup_steps;

    const std::vector<SvcCrop> tgt = draw(targets, config.batch_target);
    std::vector<SvcCrop> ext;
    if (adversarial_on && !externals.empty()) ext = draw(externals, config.batch_external);

    if (adversarial_on) {
      // Discriminator step. The generator runs off-tape here, so only the
      // discriminators can accumulate gradients.
      std::vector<Tensor<float>> real, recon, converted, t_embs, e_embs;
      for (const SvcCrop& c : tgt) {
        ConversionOutput<float> out = forward_convert(result.model, c.content, c.melody);
        real.push_back(c.mel);
        recon.push_back(out.mel);
        if (melody_branch) t_embs.push_back(out.melody_post_cin);
      }
      for (const SvcCrop& c : ext) {
        ConversionOutput<float> out = forward_convert(result.model, c.content, c.melody);
        converted.push_back(out.mel);
        if (melody_branch) e_embs.push_back(out.melody_post_cin);
      }
      Tape<float> tape;
      TapeScope<float> scope(tape);
      DiscriminatorLossResult<float> dl =
          discriminator_loss(result.discriminators, real, recon, converted, t_embs, e_embs);
      for (const std::string& w : dl.warnings) warn("train_svc: " + w);
      tape.backward(dl.total);
      opt_d.step(d_params, tape);
      row.l_rf_d = dl.rf.item();
      row.l_sim_d = dl.sim_conv.item() + dl.sim_emb.item();
    }

    {
      // Generator step. Discriminator weights sit on this tape too, but the
      // optimizer only walks the conversion parameters.
      Tape<float> tape;
      TapeScope<float> scope(tape);
      std::vector<Tensor<float>> recon, converted, e_embs;
      Tensor<float> rec_sum = Tensor<float>::zeros({1});
      for (const SvcCrop& c : tgt) {
        ConversionOutput<float> out = forward_convert(result.model, c.content, c.melody);
        recon.push_back(out.mel);
        rec_sum = add(rec_sum, reconstruction_loss(out.mel, c.mel));
      }
      Tensor<float> l_rec = scale(rec_sum, 1.0f / float(tgt.size()));
      for (const SvcCrop& c : ext) {
        ConversionOutput<float> out = forward_convert(result.model, c.content, c.melody);
        converted.push_back(out.mel);
        if (melody_branch) e_embs.push_back(out.melody_post_cin);
      }
      GeneratorLossResult<float> gl = generator_loss(result.discriminators, l_rec, recon,
                                                     converted, e_embs, config.schedule, step);
      tape.backward(gl.total);
      opt_g.step(g_params, tape);
      row.l_rec = gl.l_rec.item();
      row.l_rf_g = gl.l_rf.item();
      row.l_sim_g = gl.l_sim.item();
    }

    result.curve.push_back(row);
  }

  result.content_hash_after = param_hash(content_model.parameters());
  result.melody_hash_after = param_hash(melody_model.parameters());
  return result;
}

std::string svc_curve_to_text(const std::vector<SvcLossRow>& curve) {
  std::ostringstream out;
  out << "step l_rec l_rf_d l_rf_g l_sim_d l_sim_g\n";
  for (const SvcLossRow& r : curve)
    out << r.step << ' ' << r.l_rec << ' ' << r.l_rf_d << ' ' << r.l_rf_g << ' ' << r.l_sim_d
        << ' ' << r.l_sim_g << '\n';
  return out.str();
}

void save_svc_curve(const std::vector<SvcLossRow>& curve, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write loss curve: " + path);
  out << svc_curve_to_text(curve);
}

}  // namespace rsvc
