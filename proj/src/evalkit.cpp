#include "rsvc/evalkit.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "rsvc/wav.hpp"

namespace fs = std::filesystem;

namespace rsvc {

namespace {

Eigen::VectorXf l2_normalized(Eigen::VectorXf v) {
  const float n = v.norm();
  if (n > 0.0f) v /= n;
  return v;
}

std::vector<float> resample_linear(const std::vector<float>& x, std::size_t m) {
  if (x.size() == m) return x;
  std::vector<float> out(m);
  if (x.size() == 1 || m == 1) {
    std::fill(out.begin(), out.end(), x[0]);
    return out;
  }
  const double step = double(x.size() - 1) / double(m - 1);
  for (std::size_t j = 0; j < m; ++j) {
    const double pos = double(j) * step;
    const std::size_t i0 = std::min(std::size_t(pos), x.size() - 2);
    const double frac = pos - double(i0);
    out[j] = float((1.0 - frac) * x[i0] + frac * x[i0 + 1]);
  }
  return out;
}

std::vector<float> voiced_track(const MelodyContour& c) {
  std::vector<float> f0;
  for (std::size_t i = 0; i < c.size(); ++i)
    if (c.vuv[i]) f0.push_back(c.f0_hz[i]);
  return f0;
}

std::string snr_label(double snr_db) {
  if (std::isinf(snr_db)) return "clean";
  char buf[32];
  std::snprintf(buf, sizeof buf, "snr %g dB", snr_db);
  return buf;
}

bool any_voiced(const MelodyContour& c) {
  for (int v : c.vuv)
    if (v) return true;
  return false;
}

// A conversion whose output carries no voiced frame preserved no melody at
// all; it scores the ceiling instead of aborting a whole sweep. An unvoiced
// source is still a data error.
double score_f0(const AudioBuffer& converted, const AudioBuffer& source) {
  const MelodyContour src = extract_melody_ground_truth(source);
  if (!any_voiced(src))
    throw std::invalid_argument("f0 rmse: the source has no voiced frames");
  const MelodyContour conv = extract_melody_ground_truth(converted);
  if (!any_voiced(conv)) return 1.0;
  return f0_rmse_tracks(conv, src);
}

std::string hex64(std::uint64_t h) {
  char buf[20];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

double mean_of(const std::vector<double>& xs) {
  double acc = 0.0;
  for (double x : xs) acc += x;
  return acc / double(xs.size());
}

}  // namespace

Eigen::VectorXf speaker_embedding(const AudioBuffer& audio) {
  const MelSpectrogram mel = mel_spectrogram_of(audio);
  const MelodyContour contour = extract_melody_ground_truth(audio);
  const Eigen::Index frames = mel.num_frames();

  std::vector<Eigen::Index> rows;
  for (Eigen::Index t = 0; t < frames; ++t)
    if (std::size_t(t) < contour.size() && contour.vuv[std::size_t(t)]) rows.push_back(t);
  if (rows.empty())
    for (Eigen::Index t = 0; t < frames; ++t) rows.push_back(t);

  const Eigen::Index d = mel.frames.cols();
  Eigen::VectorXf emb(2 * d);
  for (Eigen::Index c = 0; c < d; ++c) {
    double mean = 0.0;
    for (Eigen::Index t : rows) mean += mel.frames(t, c);
    mean /= double(rows.size());
    double var = 0.0;
    for (Eigen::Index t : rows) {
      const double dv = mel.frames(t, c) - mean;
      var += dv * dv;
    }
    emb(c) = float(mean);
    emb(d + c) = float(std::sqrt(var / double(rows.size())));
  }
  return l2_normalized(std::move(emb));
}

Eigen::VectorXf target_reference_embedding(const std::vector<ManifestEntry>& manifest,
                                           const std::string& base_dir) {
  Eigen::VectorXf acc;
  int count = 0;
  for (const ManifestEntry& e : manifest) {
    if (e.role != "target_corpus") continue;
    const Eigen::VectorXf emb = speaker_embedding(load_wav((fs::path(base_dir) / e.wav_path).string()));
    if (count == 0)
      acc = emb;
    else
      acc += emb;
    ++count;
  }
  if (count == 0)
    throw std::invalid_argument("reference embedding: manifest has no target-role utterances");
  return l2_normalized(std::move(acc));
}

float cosine_similarity(const Eigen::VectorXf& a, const Eigen::VectorXf& b) {
  if (a.size() != b.size())
    throw std::invalid_argument("cosine similarity: dimension mismatch, " +
                                std::to_string(a.size()) + " vs " + std::to_string(b.size()));
  const float na = a.norm(), nb = b.norm();
  if (na == 0.0f || nb == 0.0f) return 0.0f;
  return a.dot(b) / (na * nb);
}

double f0_rmse_tracks(const MelodyContour& a, const MelodyContour& b) {
  std::vector<float> fa = voiced_track(a);
  std::vector<float> fb = voiced_track(b);
  if (fa.empty() || fb.empty())
    throw std::invalid_argument("f0 rmse: a track has no voiced frames");
  fa = minmax_normalize(fa);
  fb = minmax_normalize(fb);
  const std::size_t m = std::max(fa.size(), fb.size());
  fa = resample_linear(fa, m);
  fb = resample_linear(fb, m);
  double acc = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    const double d = double(fa[i]) - double(fb[i]);
    acc += d * d;
  }
  return std::sqrt(acc / double(m));
}

double f0_rmse(const AudioBuffer& converted, const AudioBuffer& source) {
  return f0_rmse_tracks(extract_melody_ground_truth(converted),
                        extract_melody_ground_truth(source));
}

std::uint64_t hash_text(const std::string& text) {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

std::string report_to_text(const EvalReport& report) {
  std::size_t w_cond = std::string("condition").size();
  std::size_t w_var = std::string("variant").size();
  bool any_cos = false;
  for (const EvalRow& r : report.rows) {
    w_cond = std::max(w_cond, r.condition.size());
    w_var = std::max(w_var, r.variant.size());
    any_cos = any_cos || r.has_cos_sim;
  }

  std::ostringstream out;
  out << report.title << "\n";
  out << "config " << hex64(report.config_hash) << "  seed " << report.seed << "\n";
  out << std::left << std::setw(int(w_cond) + 2) << "condition" << std::setw(int(w_var) + 2)
      << "variant" << std::setw(10) << "f0_rmse";
  if (any_cos) out << std::setw(10) << "cos_sim";
  out << "\n";
  out << std::string(w_cond + w_var + 4 + 10 + (any_cos ? 10 : 0), '-') << "\n";
  for (const EvalRow& r : report.rows) {
    out << std::left << std::setw(int(w_cond) + 2) << r.condition << std::setw(int(w_var) + 2)
        << r.variant << std::setw(10) << std::fixed << std::setprecision(4) << r.f0_rmse;
    if (r.has_cos_sim)
      out << std::setw(10) << std::fixed << std::setprecision(4) << r.cos_sim;
    else if (any_cos)
      out << std::setw(10) << "-";
    out << "\n";
  }
  return out.str();
}

std::string report_to_jsonl(const EvalReport& report) {
  std::ostringstream out;
  for (const EvalRow& r : report.rows) {
    nlohmann::ordered_json j;
    j["title"] = report.title;
    j["config_hash"] = hex64(report.config_hash);
    j["seed"] = report.seed;
    j["condition"] = r.condition;
    j["variant"] = r.variant;
    j["f0_rmse"] = r.f0_rmse;
    if (r.has_cos_sim) j["cos_sim"] = r.cos_sim;
    out << j.dump() << "\n";
  }
  return out.str();
}

void save_report(const EvalReport& report, const std::string& text_path,
                 const std::string& jsonl_path) {
  std::ofstream t(text_path);
  if (!t) throw std::runtime_error("cannot write report: " + text_path);
  t << report_to_text(report);
  std::ofstream j(jsonl_path);
  if (!j) throw std::runtime_error("cannot write report: " + jsonl_path);
  j << report_to_jsonl(report);
}

std::vector<const ManifestEntry*> evaluation_utterances(
    const std::vector<ManifestEntry>& manifest, int max_utterances) {
  std::vector<const ManifestEntry*> test, all;
  for (const ManifestEntry& e : manifest) {
    if (e.role != "external_corpus") continue;
    all.push_back(&e);
    if (e.split == "test") test.push_back(&e);
  }
  std::vector<const ManifestEntry*>& pool = test.empty() ? all : test;
  if (pool.empty())
    throw std::invalid_argument("evaluation: manifest has no external-corpus utterances");
  if (int(pool.size()) > max_utterances) pool.resize(std::size_t(max_utterances));
  return pool;
}

EvalReport snr_sweep(const ContentModel<float>& content_model,
                     const MelodyExtractor<float>& melody_model,
                     const ConversionModel<float>& robust_model,
                     const ConversionModel<float>& baseline_model,
                     const std::vector<ManifestEntry>& manifest, const std::string& base_dir,
                     const std::vector<AudioBuffer>& noise_tracks, const SnrSweepConfig& config) {
  if (robust_model.cfg.d_melody_in == 3)
    throw std::invalid_argument("snr sweep: the robust model must take learned melody features");
  if (baseline_model.cfg.d_melody_in != 3)
    throw std::invalid_argument("snr sweep: the baseline model must take 3-dim contour inputs");

  const std::vector<const ManifestEntry*> items =
      evaluation_utterances(manifest, config.max_utterances);
  if (noise_tracks.empty() && !config.snrs_db.empty())
    throw std::invalid_argument("snr sweep: no noise tracks for the finite-snr conditions");

  std::vector<AudioBuffer> sources;
  for (const ManifestEntry* e : items)
    sources.push_back(load_wav((fs::path(base_dir) / e->wav_path).string()));

  std::ostringstream canon;
  canon << "snr_sweep;max=" << config.max_utterances << ";seed=" << config.seed << ";snrs=";
  for (double s : config.snrs_db) canon << s << ",";
  canon << ";models=" << hex64(param_hash(content_model.parameters()))
        << hex64(param_hash(melody_model.parameters()))
        << hex64(param_hash(robust_model.parameters()))
        << hex64(param_hash(baseline_model.parameters()));

  EvalReport report;
  report.title = "snr sweep: f0 rmse of converted vs clean source";
  report.seed = config.seed;
  report.config_hash = hash_text(canon.str());

  std::vector<double> conditions = {std::numeric_limits<double>::infinity()};
  conditions.insert(conditions.end(), config.snrs_db.begin(), config.snrs_db.end());

  for (double snr : conditions) {
    std::vector<double> robust_scores, baseline_scores;
    for (std::size_t i = 0; i < sources.size(); ++i) {
      AudioBuffer input = sources[i];
      if (!std::isinf(snr))
        input = mix_at_snr(sources[i], noise_tracks[i % noise_tracks.size()], snr).mixture;
      const ConvertResult r = convert(content_model, melody_model, robust_model, input);
      robust_scores.push_back(score_f0(r.audio, sources[i]));
      const ConvertResult b = convert_with_pitch_energy(content_model, baseline_model, input);
      baseline_scores.push_back(score_f0(b.audio, sources[i]));
    }
    EvalRow robust_row;
    robust_row.condition = snr_label(snr);
    robust_row.variant = "robust";
    robust_row.f0_rmse = mean_of(robust_scores);
    report.rows.push_back(robust_row);
    EvalRow baseline_row;
    baseline_row.condition = snr_label(snr);
    baseline_row.variant = "origin-pitch-energy";
    baseline_row.f0_rmse = mean_of(baseline_scores);
    report.rows.push_back(baseline_row);
  }
  return report;
}

MelodyFeatureComparisonResult melody_feature_comparison(
    const ContentModel<float>& content_model, const MelodyExtractor<float>& trained_melody,
    const MelodyExtractor<float>& untrained_melody, const std::vector<ManifestEntry>& manifest,
    const std::string& base_dir, const MelodyFeatureComparisonConfig& config) {
  const std::vector<const ManifestEntry*> items =
      evaluation_utterances(manifest, config.max_utterances);
  std::vector<AudioBuffer> sources;
  for (const ManifestEntry* e : items)
    sources.push_back(load_wav((fs::path(base_dir) / e->wav_path).string()));

  auto trained_variant = [&](int d_melody_in, bool from_backbone,
                             const MelodyExtractor<float>& extractor) {
    SvcTrainConfig tc = config.train;
    tc.conversion.d_melody_in = d_melody_in;
    tc.conversion.melody_from_backbone = from_backbone;
    return train_svc(manifest, base_dir, content_model, extractor, tc).model;
  };

  MelodyFeatureComparisonResult result;
  result.none = trained_variant(0, false, trained_melody);
  result.backbone_raw = trained_variant(untrained_melody.cfg.d_model, true, untrained_melody);
  result.proposed = trained_variant(trained_melody.cfg.d_model, false, trained_melody);
  result.pitch_energy = trained_variant(3, false, trained_melody);

  std::ostringstream canon;
  canon << "melody_feature_comparison;max=" << config.max_utterances << ";seed=" << config.seed
        << ";steps=" << config.train.total_steps
        << ";models=" << hex64(param_hash(content_model.parameters()))
        << hex64(param_hash(trained_melody.parameters()))
        << hex64(param_hash(untrained_melody.parameters()));

  EvalReport& report = result.report;
  report.title = "melody features: f0 rmse of clean conversion vs source";
  report.seed = config.seed;
  report.config_hash = hash_text(canon.str());

  auto score = [&](const std::string& variant, auto&& convert_fn) {
    std::vector<double> scores;
    for (std::size_t i = 0; i < sources.size(); ++i)
      scores.push_back(score_f0(convert_fn(sources[i]).audio, sources[i]));
    EvalRow row;
    row.condition = "clean";
    row.variant = variant;
    row.f0_rmse = mean_of(scores);
    report.rows.push_back(row);
  };

  score("none", [&](const AudioBuffer& a) {
    return convert(content_model, trained_melody, result.none, a);
  });
  score("backbone-raw", [&](const AudioBuffer& a) {
    return convert(content_model, untrained_melody, result.backbone_raw, a);
  });
  score("proposed", [&](const AudioBuffer& a) {
    return convert(content_model, trained_melody, result.proposed, a);
  });
  score("pitch-energy", [&](const AudioBuffer& a) {
    return convert_with_pitch_energy(content_model, result.pitch_energy, a);
  });
  return result;
}

EvalReport ablation_run(const ContentModel<float>& content_model,
                        const MelodyExtractor<float>& melody_model,
                        const std::vector<ManifestEntry>& manifest, const std::string& base_dir,
                        const AblationConfig& config) {
  const std::vector<const ManifestEntry*> items =
      evaluation_utterances(manifest, config.max_utterances);
  std::vector<AudioBuffer> sources;
  for (const ManifestEntry* e : items)
    sources.push_back(load_wav((fs::path(base_dir) / e->wav_path).string()));
  const Eigen::VectorXf reference = target_reference_embedding(manifest, base_dir);

  std::ostringstream canon;
  canon << "ablation;max=" << config.max_utterances << ";seed=" << config.seed
        << ";steps=" << config.train.total_steps
        << ";models=" << hex64(param_hash(content_model.parameters()))
        << hex64(param_hash(melody_model.parameters()));

  EvalReport report;
  report.title = "ablations: timbre similarity and melody fidelity, clean input";
  report.seed = config.seed;
  report.config_hash = hash_text(canon.str());

  struct Variant {
    std::string name;
    SvcTrainConfig tc;
  };
  std::vector<Variant> variants;
  variants.push_back({"full", config.train});
  {
    SvcTrainConfig tc = config.train;
    tc.schedule.weight_rf = 0.0f;
    variants.push_back({"wo-rf", tc});
  }
  {
    SvcTrainConfig tc = config.train;
    tc.conversion.use_cin = false;
    variants.push_back({"wo-cin", tc});
  }
  {
    SvcTrainConfig tc = config.train;
    tc.schedule.weight_sim = 0.0f;
    variants.push_back({"wo-sim", tc});
  }

  for (const Variant& v : variants) {
    const ConversionModel<float> model =
        train_svc(manifest, base_dir, content_model, melody_model, v.tc).model;
    std::vector<double> f0s, sims;
    for (std::size_t i = 0; i < sources.size(); ++i) {
      const ConvertResult r = convert(content_model, melody_model, model, sources[i]);
      f0s.push_back(score_f0(r.audio, sources[i]));
      sims.push_back(double(cosine_similarity(speaker_embedding(r.audio), reference)));
    }
    EvalRow row;
    row.condition = "clean";
    row.variant = v.name;
    row.f0_rmse = mean_of(f0s);
    row.cos_sim = mean_of(sims);
    row.has_cos_sim = true;
    report.rows.push_back(row);
  }
  return report;
}

}  // namespace rsvc
