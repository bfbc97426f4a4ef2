#pragma once

#include <string>
#include <vector>

#include "rsvc/corpus.hpp"
#include "rsvc/dsp.hpp"
#include "rsvc/nn.hpp"

namespace rsvc {

/// Per-frame embedding sequence (BNFs, melody features, ...).
struct FeatureSequence {
  Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> frames;  // T x d
  double frame_hop_s = 0.010;

  Eigen::Index num_frames() const { return frames.rows(); }
  Eigen::Index dim() const { return frames.cols(); }
};

Tensor<float> mel_to_tensor(const MelSpectrogram& mel);
Tensor<float> features_to_tensor(const FeatureSequence& features);

// ---------------------------------------------------------------------------
// CTC loss
// ---------------------------------------------------------------------------

/// Frames needed to emit the labels: one per label plus a separating blank
/// between adjacent repeats.
inline Eigen::Index ctc_min_frames(const std::vector<int>& labels) {
  Eigen::Index need = Eigen::Index(labels.size());
  for (std::size_t i = 1; i < labels.size(); ++i)
    if (labels[i] == labels[i - 1]) ++need;
  return need;
}

/// Reference CTC negative log-likelihood by exhaustive path enumeration over
/// all (vocab+1)^T frame alignments. Exponential — guarded to tiny inputs;
/// exists purely to pin down the dynamic-programming implementation.
double ctc_loss_brute_force(const Eigen::MatrixXd& logits, const std::vector<int>& labels,
                            int vocab);

/// CTC negative log-likelihood of `labels` given per-frame logits
/// [T, vocab+1] (blank = last index), via the forward algorithm in log space.
/// Differentiable.
template <typename S>
Tensor<S> ctc_loss(const Tensor<S>& logits, const std::vector<int>& labels, int vocab) {
  if (vocab < 1) throw std::invalid_argument("ctc: vocabulary must be non-empty");
  if (logits.rank() != 2 || logits.shape[1] != vocab + 1)
    throw std::invalid_argument("ctc: logits must be [T," + std::to_string(vocab + 1) +
                                "], got " + shape_str(logits.shape));
  for (int l : labels)
    if (l < 0 || l >= vocab)
      throw std::invalid_argument("ctc: label " + std::to_string(l) +
                                  " outside vocabulary of " + std::to_string(vocab));
  const Eigen::Index T = logits.shape[0];
  const Eigen::Index need = ctc_min_frames(labels);
  if (T < need)
    throw std::invalid_argument("ctc: " + std::to_string(labels.size()) +
                                " labels need at least " + std::to_string(need) +
                                " frames, got " + std::to_string(T));

  const int blank = vocab;
  const Eigen::Index L = Eigen::Index(labels.size());
  const Eigen::Index n_states = 2 * L + 1;  // blank-interleaved label sequence
  std::vector<int> ext(std::size_t(n_states), blank);
  for (Eigen::Index i = 0; i < L; ++i) ext[std::size_t(2 * i + 1)] = labels[std::size_t(i)];

  const S kDead = S(-1e30);
  Tensor<S> lp = log_softmax(logits);

  Tensor<S> sel = Tensor<S>::zeros({n_states, vocab + 1});
  for (Eigen::Index s = 0; s < n_states; ++s)
    (*sel.values)[s * (vocab + 1) + ext[std::size_t(s)]] = S(1);

  Tensor<S> init_mask = Tensor<S>::full({n_states, 1}, kDead);
  (*init_mask.values)[0] = S(0);
  if (L > 0) (*init_mask.values)[1] = S(0);

  Tensor<S> skip_mask = Tensor<S>::zeros({n_states, 1});
  for (Eigen::Index s = 0; s < n_states; ++s) {
    const bool can_skip =
        s >= 2 && ext[std::size_t(s)] != blank && ext[std::size_t(s)] != ext[std::size_t(s - 2)];
    if (!can_skip) (*skip_mask.values)[s] = kDead;
  }

  const Tensor<S> pad1 = Tensor<S>::full({1, 1}, kDead);
  const Tensor<S> pad2 = Tensor<S>::full({2, 1}, kDead);

  Tensor<S> alpha;
  for (Eigen::Index t = 0; t < T; ++t) {
    Tensor<S> sym = matmul(sel, transpose(slice_rows(lp, t, t + 1)));  // {n_states, 1}
    if (t == 0) {
      alpha = add(sym, init_mask);
      continue;
    }
    Tensor<S> reach = alpha;
    if (n_states >= 2)
      reach = logaddexp(reach, concat_rows(pad1, slice_rows(alpha, 0, n_states - 1)));
    if (n_states >= 3)
      reach = logaddexp(
          reach, add(concat_rows(pad2, slice_rows(alpha, 0, n_states - 2)), skip_mask));
    alpha = add(sym, reach);
  }

  Tensor<S> tail = element(alpha, n_states - 1, 0);
  if (n_states >= 2) tail = logaddexp(tail, element(alpha, n_states - 2, 0));
  return scale(tail, S(-1));
}

// ---------------------------------------------------------------------------
// Content encoder
// ---------------------------------------------------------------------------

struct ContentConfig {
  int n_mels = kNumMels;
  int d_model = 128;
  int n_blocks = 4;
  int n_heads = 4;
  int d_ff = 256;
  int d_bnf = 64;
  int vocab_size = 16;
};

/// Mel frames -> transformer encoder -> linear bottleneck (the BNFs) ->
/// token classifier trained with CTC. BNFs are read straight off the
/// bottleneck, before the classifier.
template <typename S = float>
struct ContentModel {
  ContentConfig cfg;
  Linear<S> in_proj;
  FFTStack<S> encoder;
  Linear<S> bottleneck;
  Linear<S> classifier;

  ContentModel() = default;
  ContentModel(const ContentConfig& c, std::mt19937& rng)
      : cfg(c),
        in_proj(c.n_mels, c.d_model, rng),
        encoder(c.n_blocks, c.d_model, c.n_heads, c.d_ff, rng),
        bottleneck(c.d_model, c.d_bnf, rng),
        classifier(c.d_bnf, c.vocab_size + 1, rng) {}

  struct Out {
    Tensor<S> bnf;     // [T, d_bnf]
    Tensor<S> logits;  // [T, vocab+1]
  };

  Out forward(const Tensor<S>& mel) const {
    if (mel.rank() != 2 || mel.shape[1] != cfg.n_mels)
      throw std::invalid_argument("content: expected mel [T," + std::to_string(cfg.n_mels) +
                                  "], got " + shape_str(mel.shape));
    Tensor<S> h = encoder(in_proj(mel));
    Out o;
    o.bnf = bottleneck(h);
    o.logits = classifier(o.bnf);
    return o;
  }

  NamedTensors<S> parameters() const {
    NamedTensors<S> p;
    in_proj.collect("content.in_proj", p);
    encoder.collect("content.encoder", p);
    bottleneck.collect("content.bottleneck", p);
    classifier.collect("content.classifier", p);
    return p;
  }
};

/// Per-frame argmax, collapse repeats, drop blanks.
std::vector<int> greedy_decode(const Tensor<float>& logits, int vocab);

/// Levenshtein distance / reference length.
double token_error_rate(const std::vector<int>& predicted, const std::vector<int>& reference);

struct ContentTrainConfig {
  ContentConfig model;
  int steps = 2000;
  float lr = 2e-4f;
  unsigned seed = 1;
};

struct ContentTrainResult {
  ContentModel<float> model;
  std::vector<float> loss_curve;
  double dev_token_error_rate = 0.0;
};

/// Adam-trains ctc_loss over the manifest's vocal utterances (mel in, token
/// labels out). Mels are cached up front; one utterance per step.
ContentTrainResult train_content_model(const std::vector<ManifestEntry>& manifest,
                                       const std::string& base_dir,
                                       const ContentTrainConfig& config);

FeatureSequence extract_bnf(const ContentModel<float>& model, const MelSpectrogram& mel);

}  // namespace rsvc
