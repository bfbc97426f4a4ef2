#pragma once

#include <string>
#include <vector>

#include "rsvc/conversion.hpp"

namespace rsvc {

// ---------------------------------------------------------------------------
// Discriminators
// ---------------------------------------------------------------------------

/// Two-layer 1-d convolutional stack over a mel spectrogram, pooled over time
/// into a single unbounded score (least-squares GAN, so no sigmoid).
template <typename S = float>
struct MelDiscriminator {
  Conv1dLayer<S> c1, c2;
  Linear<S> out;

  MelDiscriminator() = default;
  MelDiscriminator(int n_mels, int channels, std::mt19937& rng)
      : c1(n_mels, channels, 3, rng), c2(channels, channels, 3, rng), out(channels, 1, rng) {}

  Tensor<S> operator()(const Tensor<S>& mel) const {
    Tensor<S> h = relu(c2(relu(c1(mel))));
    Tensor<S> pooled = reshape(mean_rows(h), {1, c2.c_out});
    return reshape(out(pooled), {1});
  }

  void collect(const std::string& prefix, NamedTensors<S>& p) const {
    c1.collect(prefix + ".c1", p);
    c2.collect(prefix + ".c2", p);
    out.collect(prefix + ".out", p);
  }
};

/// Two-layer MLP over the time-pooled melody embedding.
template <typename S = float>
struct EmbDiscriminator {
  Linear<S> fc1, fc2;

  EmbDiscriminator() = default;
  EmbDiscriminator(int d_in, int d_hidden, std::mt19937& rng)
      : fc1(d_in, d_hidden, rng), fc2(d_hidden, 1, rng) {}

  Tensor<S> operator()(const Tensor<S>& emb) const {
    Tensor<S> pooled = reshape(mean_rows(emb), {1, fc1.w.shape[0]});
    return reshape(fc2(relu(fc1(pooled))), {1});
  }

  void collect(const std::string& prefix, NamedTensors<S>& p) const {
    fc1.collect(prefix + ".fc1", p);
    fc2.collect(prefix + ".fc2", p);
  }
};

struct AdversarialConfig {
  int n_mels = kNumMels;
  int d_emb_in = 128;  // must match the conversion model's d_model
  int channels = 32;
  int d_hidden = 64;
};

/// rf judges target reconstructions, conv judges external-to-target
/// conversions, emb judges normalized melody embeddings.
template <typename S = float>
struct Discriminators {
  AdversarialConfig cfg;
  MelDiscriminator<S> rf, conv;
  EmbDiscriminator<S> emb;

  Discriminators() = default;
  Discriminators(const AdversarialConfig& c, std::mt19937& rng)
      : cfg(c),
        rf(c.n_mels, c.channels, rng),
        conv(c.n_mels, c.channels, rng),
        emb(c.d_emb_in, c.d_hidden, rng) {}

  NamedTensors<S> parameters() const {
    NamedTensors<S> p;
    rf.collect("disc.rf", p);
    conv.collect("disc.conv", p);
    emb.collect("disc.emb", p);
    return p;
  }
};

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

/// Batch mean of (D(x) - target)^2.
template <typename S, typename D>
Tensor<S> lsgan_term(const D& disc, const std::vector<Tensor<S>>& batch, S target) {
  Tensor<S> acc = Tensor<S>::zeros({1});
  for (const Tensor<S>& x : batch) {
    Tensor<S> diff = sub(disc(x), Tensor<S>::scalar(target));
    acc = add(acc, mul(diff, diff));
  }
  return scale(acc, S(1) / S(batch.size()));
}

template <typename S>
struct DiscriminatorLossResult {
  Tensor<S> total;                    // sum of the branches that had data
  Tensor<S> rf, sim_conv, sim_emb;    // zero scalars when skipped
  std::vector<std::string> warnings;  // one entry per skipped branch
};

/// Least-squares discriminator objective, one bracket per discriminator:
/// (D(real)-1)^2 + D(fake)^2, batch means. Generator outputs are detached
/// here, so a discriminator update can never reach generator weights. A
/// branch with an empty side is skipped and recorded, not an error.
template <typename S>
DiscriminatorLossResult<S> discriminator_loss(const Discriminators<S>& d,
                                              const std::vector<Tensor<S>>& real_mels,
                                              const std::vector<Tensor<S>>& recon_mels,
                                              const std::vector<Tensor<S>>& converted_mels,
                                              const std::vector<Tensor<S>>& target_embs,
                                              const std::vector<Tensor<S>>& external_embs) {
  auto detached = [](const std::vector<Tensor<S>>& xs) {
    std::vector<Tensor<S>> out;
    out.reserve(xs.size());
    for (const Tensor<S>& x : xs) out.push_back(x.detach());
    return out;
  };
  const std::vector<Tensor<S>> reals = detached(real_mels);

  DiscriminatorLossResult<S> r;
  r.rf = Tensor<S>::zeros({1});
  r.sim_conv = Tensor<S>::zeros({1});
  r.sim_emb = Tensor<S>::zeros({1});
  r.total = Tensor<S>::zeros({1});
  if (!reals.empty() && !recon_mels.empty()) {
    r.rf = add(lsgan_term(d.rf, reals, S(1)), lsgan_term(d.rf, detached(recon_mels), S(0)));
    r.total = add(r.total, r.rf);
  } else {
    r.warnings.push_back("reconstruction discriminator skipped: empty batch");
  }
  if (!reals.empty() && !converted_mels.empty()) {
    r.sim_conv =
        add(lsgan_term(d.conv, reals, S(1)), lsgan_term(d.conv, detached(converted_mels), S(0)));
    r.total = add(r.total, r.sim_conv);
  } else {
    r.warnings.push_back("conversion discriminator skipped: empty batch");
  }
  if (!target_embs.empty() && !external_embs.empty()) {
    r.sim_emb = add(lsgan_term(d.emb, detached(target_embs), S(1)),
                    lsgan_term(d.emb, detached(external_embs), S(0)));
    r.total = add(r.total, r.sim_emb);
  } else {
    r.warnings.push_back("embedding discriminator skipped: empty batch");
  }
  return r;
}

struct AdversarialSchedule {
  int warmup_steps = 500;
  float weight_rf = 1.0f;
  float weight_sim = 1.0f;
};

struct ScheduleWeights {
  float rf = 0.0f;
  float sim = 0.0f;
};

/// Both adversarial weights are exactly zero before the warmup step.
inline ScheduleWeights schedule_weights_at(const AdversarialSchedule& schedule, int step) {
  if (step < 0)
    throw std::invalid_argument("schedule: negative step " + std::to_string(step));
  if (step < schedule.warmup_steps) return {0.0f, 0.0f};
  return {schedule.weight_rf, schedule.weight_sim};
}

template <typename S>
struct GeneratorLossResult {
  Tensor<S> total, l_rec, l_rf, l_sim;
  ScheduleWeights weights;
};

/// total = L_rec + w_rf * (D_rf(recon)-1)^2 + w_sim * ((D_conv(converted)-1)^2
///         + (D_emb(external emb)-1)^2). Before warmup no discriminator is
/// even evaluated: the returned total IS the reconstruction loss, so the
/// generator update matches a plain-reconstruction run bit for bit.
template <typename S>
GeneratorLossResult<S> generator_loss(const Discriminators<S>& d, const Tensor<S>& l_rec,
                                      const std::vector<Tensor<S>>& recon_mels,
                                      const std::vector<Tensor<S>>& converted_mels,
                                      const std::vector<Tensor<S>>& external_embs,
                                      const AdversarialSchedule& schedule, int step) {
  GeneratorLossResult<S> r;
  r.weights = schedule_weights_at(schedule, step);
  r.l_rec = l_rec;
  r.l_rf = Tensor<S>::zeros({1});
  r.l_sim = Tensor<S>::zeros({1});
  if (step < schedule.warmup_steps) {
    r.total = l_rec;
    return r;
  }
  r.total = l_rec;
  if (!recon_mels.empty()) {
    r.l_rf = lsgan_term(d.rf, recon_mels, S(1));
    r.total = add(r.total, scale(r.l_rf, S(r.weights.rf)));
  }
  if (!converted_mels.empty() || !external_embs.empty()) {
    Tensor<S> sim = Tensor<S>::zeros({1});
    if (!converted_mels.empty()) sim = add(sim, lsgan_term(d.conv, converted_mels, S(1)));
    if (!external_embs.empty()) sim = add(sim, lsgan_term(d.emb, external_embs, S(1)));
    r.l_sim = sim;
    r.total = add(r.total, scale(r.l_sim, S(r.weights.sim)));
  }
  return r;
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct SvcTrainConfig {
  ConversionConfig conversion;
  AdversarialConfig discriminators;
  AdversarialSchedule schedule;
  int total_steps = 1000;
  int crop_frames = 32;
  int batch_target = 2;
  int batch_external = 2;
  float lr_g = 2e-4f;
  float lr_d = 2e-4f;
  unsigned seed = 1;
};

struct SvcLossRow {
  int step = 0;
  float l_rec = 0.0f;
  float l_rf_d = 0.0f;
  float l_rf_g = 0.0f;
  float l_sim_d = 0.0f;
  float l_sim_g = 0.0f;
};

struct SvcTrainResult {
  ConversionModel<float> model;
  Discriminators<float> discriminators;
  std::vector<SvcLossRow> curve;
  std::vector<std::string> warnings;  // deduplicated
  std::uint64_t content_hash_before = 0, content_hash_after = 0;
  std::uint64_t melody_hash_before = 0, melody_hash_after = 0;
};

/// Alternating one discriminator step and one generator step per iteration.
/// Content and melody models only supply features and must come out untouched;
/// the result carries their before/after hashes.
SvcTrainResult train_svc(const std::vector<ManifestEntry>& manifest, const std::string& base_dir,
                         const ContentModel<float>& content_model,
                         const MelodyExtractor<float>& melody_model,
                         const SvcTrainConfig& config);

/// One line per step: "step l_rec l_rf_d l_rf_g l_sim_d l_sim_g" after a
/// matching header.
std::string svc_curve_to_text(const std::vector<SvcLossRow>& curve);
void save_svc_curve(const std::vector<SvcLossRow>& curve, const std::string& path);

}  // namespace rsvc
