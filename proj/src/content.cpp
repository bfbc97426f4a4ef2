#include "rsvc/content.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <random>

#include "rsvc/adam.hpp"
#include "rsvc/threading.hpp"
#include "rsvc/wav.hpp"

namespace rsvc {

namespace fs = std::filesystem;

Tensor<float> mel_to_tensor(const MelSpectrogram& mel) {
  const Eigen::Index T = mel.frames.rows(), d = mel.frames.cols();
  Tensor<float> t = Tensor<float>::zeros({T, d});
  for (Eigen::Index r = 0; r < T; ++r)
    for (Eigen::Index c = 0; c < d; ++c) (*t.values)[r * d + c] = mel.frames(r, c);
  return t;
}

Tensor<float> features_to_tensor(const FeatureSequence& features) {
  Tensor<float> t = Tensor<float>::zeros({features.num_frames(), features.dim()});
  t.mat() = features.frames;
  return t;
}

double ctc_loss_brute_force(const Eigen::MatrixXd& logits, const std::vector<int>& labels,
                            int vocab) {
  const Eigen::Index T = logits.rows();
  const int symbols = vocab + 1;
  if (logits.cols() != symbols) throw std::invalid_argument("ctc oracle: bad logits width");
  if (T > 8) throw std::invalid_argument("ctc oracle: path enumeration capped at T=8");

  Eigen::MatrixXd probs(T, symbols);
  for (Eigen::Index t = 0; t < T; ++t) {
    const double mx = logits.row(t).maxCoeff();
    const Eigen::ArrayXd e = (logits.row(t).array() - mx).exp();
    probs.row(t) = e / e.sum();
  }

  const int blank = vocab;
  double total = 0.0;
  std::vector<int> path(std::size_t(T), 0);
  std::vector<int> collapsed;
  while (true) {
    collapsed.clear();
    int prev = -1;
    for (int s : path) {
      if (s != prev && s != blank) collapsed.push_back(s);
      prev = s;
    }
    if (collapsed == labels) {
      double p = 1.0;
      for (Eigen::Index t = 0; t < T; ++t) p *= probs(t, path[std::size_t(t)]);
      total += p;
    }
    // next path in odometer order
    Eigen::Index pos = T - 1;
    while (pos >= 0 && path[std::size_t(pos)] == symbols - 1) path[std::size_t(pos--)] = 0;
    if (pos < 0) break;
    ++path[std::size_t(pos)];
  }
  if (total <= 0.0) throw std::runtime_error("ctc oracle: no matching path");
  return -std::log(total);
}

std::vector<int> greedy_decode(const Tensor<float>& logits, int vocab) {
  if (logits.rank() != 2 || logits.shape[1] != vocab + 1)
    throw std::invalid_argument("greedy_decode: logits must be [T," + std::to_string(vocab + 1) +
                                "], got " + shape_str(logits.shape));
  const int blank = vocab;
  std::vector<int> out;
  int prev = -1;
  auto m = logits.mat();
  for (Eigen::Index t = 0; t < m.rows(); ++t) {
    Eigen::Index arg = 0;
    m.row(t).maxCoeff(&arg);
    const int s = int(arg);
    if (s != prev && s != blank) out.push_back(s);
    prev = s;
  }
  return out;
}

double token_error_rate(const std::vector<int>& predicted, const std::vector<int>& reference) {
  if (reference.empty()) throw std::invalid_argument("token_error_rate: empty reference");
  const std::size_t n = predicted.size(), m = reference.size();
  std::vector<std::size_t> prev(m + 1), cur(m + 1);
  for (std::size_t j = 0; j <= m; ++j) prev[j] = j;
  for (std::size_t i = 1; i <= n; ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= m; ++j) {
      const std::size_t sub = prev[j - 1] + (predicted[i - 1] == reference[j - 1] ? 0 : 1);
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
    }
    std::swap(prev, cur);
  }
  return double(prev[m]) / double(m);
}

namespace {

struct CachedUtterance {
  Tensor<float> mel;
  std::vector<int> labels;
  std::string split;
};

std::vector<CachedUtterance> load_vocal_mels(const std::vector<ManifestEntry>& manifest,
                                             const std::string& base_dir) {
  std::vector<const ManifestEntry*> vocals;
  for (const ManifestEntry& e : manifest)
    if (e.role != "noise") vocals.push_back(&e);
  std::vector<CachedUtterance> cache(vocals.size());
  parallel_for(vocals.size(), [&](std::size_t i) {
    const ManifestEntry& e = *vocals[i];
    const AudioBuffer audio = load_wav((fs::path(base_dir) / e.wav_path).string());
    cache[i].mel = mel_to_tensor(mel_spectrogram_of(audio));
    cache[i].labels = e.token_labels;
    cache[i].split = e.split;
  });
  return cache;
}

}  // namespace

ContentTrainResult train_content_model(const std::vector<ManifestEntry>& manifest,
                                       const std::string& base_dir,
                                       const ContentTrainConfig& config) {
  std::vector<CachedUtterance> cache = load_vocal_mels(manifest, base_dir);
  if (cache.empty()) throw std::invalid_argument("train_content: no vocal utterances in manifest");

  std::vector<std::size_t> train_ids, dev_ids;
  for (std::size_t i = 0; i < cache.size(); ++i) {
    if (cache[i].split == "dev")
      dev_ids.push_back(i);
    else if (cache[i].split == "train")
      train_ids.push_back(i);
  }
  if (train_ids.empty())
    for (std::size_t i = 0; i < cache.size(); ++i) train_ids.push_back(i);

  std::mt19937 rng(config.seed);
  ContentTrainResult r;
  r.model = ContentModel<float>(config.model, rng);
  NamedTensors<float> params = r.model.parameters();
  Adam<float> opt({config.lr});

  std::uniform_int_distribution<std::size_t> pick(0, train_ids.size() - 1);
  r.loss_curve.reserve(std::size_t(config.steps));
  for (int step = 0; step < config.steps; ++step) {
    const CachedUtterance& u = cache[train_ids[pick(rng)]];
    Tape<float> tape;
    TapeScope<float> scope(tape);
    const auto out = r.model.forward(u.mel);
    const Tensor<float> loss = ctc_loss(out.logits, u.labels, config.model.vocab_size);
    r.loss_curve.push_back(loss.item());
    tape.backward(loss);
    opt.step(params, tape);
  }

  const std::vector<std::size_t>& eval_ids = dev_ids.empty() ? train_ids : dev_ids;
  double ter = 0.0;
  for (std::size_t i : eval_ids) {
    const auto out = r.model.forward(cache[i].mel);
    ter += token_error_rate(greedy_decode(out.logits, config.model.vocab_size), cache[i].labels);
  }
  r.dev_token_error_rate = ter / double(eval_ids.size());
  return r;
}

FeatureSequence extract_bnf(const ContentModel<float>& model, const MelSpectrogram& mel) {
  const auto out = model.forward(mel_to_tensor(mel));
  FeatureSequence f;
  f.frames.resize(out.bnf.shape[0], out.bnf.shape[1]);
  for (Eigen::Index r = 0; r < out.bnf.shape[0]; ++r)
    for (Eigen::Index c = 0; c < out.bnf.shape[1]; ++c)
      f.frames(r, c) = (*out.bnf.values)[r * out.bnf.shape[1] + c];
  return f;
}

}  // namespace rsvc
