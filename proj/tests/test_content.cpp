#include <doctest.h>

#include <chrono>
#include <cmath>
#include <filesystem>
#include <random>

#include "rsvc/adam.hpp"
#include "rsvc/content.hpp"
#include "rsvc/grad_check.hpp"

using namespace rsvc;
namespace fs = std::filesystem;

namespace {

template <typename S>
Tensor<S> uniform_logits(Eigen::Index T, int vocab) {
  return Tensor<S>::zeros({T, vocab + 1});
}

Eigen::MatrixXd to_eigen(const Tensor<double>& t) {
  Eigen::MatrixXd m(t.shape[0], t.shape[1]);
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = (*t.values)[r * m.cols() + c];
  return m;
}

}  // namespace

TEST_CASE("single-frame ctc over a 3-symbol alphabet costs ln 3") {
  const Tensor<double> logits = uniform_logits<double>(1, 2);
  const Tensor<double> loss = ctc_loss(logits, {0}, 2);
  CHECK(loss.item() == doctest::Approx(std::log(3.0)).epsilon(1e-9));
}

TEST_CASE("two uniform frames, one label: exactly 3 of 9 paths match") {
  const Tensor<double> logits = uniform_logits<double>(2, 2);
  const Tensor<double> loss = ctc_loss(logits, {0}, 2);
  CHECK(loss.item() == doctest::Approx(std::log(3.0)).epsilon(1e-9));
}

TEST_CASE("ctc forward equals exhaustive path enumeration across 100 draws") {
  const auto start = std::chrono::steady_clock::now();
  std::mt19937 rng(301);
  std::uniform_int_distribution<int> t_dist(1, 6), v_dist(2, 4), l_dist(1, 3);
  int checked = 0;
  while (checked < 100) {
    const Eigen::Index T = t_dist(rng);
    const int vocab = v_dist(rng);
    std::vector<int> labels(std::size_t(l_dist(rng)));
    std::uniform_int_distribution<int> lab(0, vocab - 1);
    for (int& l : labels) l = lab(rng);
    if (T < ctc_min_frames(labels)) continue;
    const Tensor<double> logits = Tensor<double>::normal({T, vocab + 1}, rng);
    const double got = ctc_loss(logits, labels, vocab).item();
    const double want = ctc_loss_brute_force(to_eigen(logits), labels, vocab);
    CHECK(std::abs(got - want) < 1e-6);
    CHECK(got >= 0.0);
    ++checked;
  }
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  CHECK(secs < 10.0);
}

TEST_CASE("ctc gradient passes the 32-bit finite-difference check") {
  std::mt19937 rng(42);
  Tensor<float> logits = Tensor<float>::normal({3, 3}, rng);
  const std::vector<int> labels = {0, 1};
  // the wider step keeps float32 difference-quotient cancellation noise well
  // below the tolerance for a loss of this magnitude
  const auto res = grad_check<float>(
      [&labels](const std::vector<Tensor<float>>& in) { return ctc_loss(in[0], labels, 2); },
      {logits}, 1e-2f);
  CHECK(res.max_rel_err < 1e-3f);
}

TEST_CASE("ctc input validation") {
  const Tensor<float> logits = uniform_logits<float>(2, 2);
  // "aa" needs a separating blank: 3 frames minimum
  CHECK_THROWS_WITH_AS(ctc_loss(logits, {0, 0}, 2),
                       doctest::Contains("at least 3 frames"), std::invalid_argument);
  CHECK_THROWS_AS(ctc_loss(logits, {0, 1, 0}, 2), std::invalid_argument);
  CHECK_THROWS_AS(ctc_loss(logits, {2}, 2), std::invalid_argument);   // label == vocab
  CHECK_THROWS_AS(ctc_loss(logits, {-1}, 2), std::invalid_argument);  // negative label
  const Tensor<float> bad = uniform_logits<float>(2, 3);
  CHECK_THROWS_AS(ctc_loss(bad, {0}, 2), std::invalid_argument);  // width mismatch
}

TEST_CASE("ctc handles an empty label sequence as all-blanks") {
  std::mt19937 rng(5);
  const Tensor<double> logits = Tensor<double>::normal({3, 3}, rng);
  const double got = ctc_loss(logits, {}, 2).item();
  const double want = ctc_loss_brute_force(to_eigen(logits), {}, 2);
  CHECK(got == doctest::Approx(want).epsilon(1e-9));
}

TEST_CASE("greedy decode collapses repeats and strips blanks") {
  // argmax sequence: a a blank b blank blank a -> "a b a"
  std::vector<float> rows = {
      5, 0, 0,  //
      5, 0, 0,  //
      0, 0, 5,  //
      0, 5, 0,  //
      0, 0, 5,  //
      0, 0, 5,  //
      5, 0, 0,  //
  };
  const Tensor<float> logits = Tensor<float>::from({7, 3}, rows);
  CHECK(greedy_decode(logits, 2) == std::vector<int>{0, 1, 0});
}

TEST_CASE("token error rate is plain edit distance over reference length") {
  CHECK(token_error_rate({1, 2, 3}, {1, 2, 3}) == 0.0);
  CHECK(token_error_rate({1, 2}, {1, 2, 3}) == doctest::Approx(1.0 / 3));
  CHECK(token_error_rate({4, 5, 6}, {1, 2, 3}) == doctest::Approx(1.0));
  CHECK(token_error_rate({}, {1, 2}) == doctest::Approx(1.0));
}

namespace {

struct CorpusFixture {
  fs::path dir;
  std::vector<ManifestEntry> entries;

  explicit CorpusFixture(int utterances, unsigned seed) {
    dir = fs::temp_directory_path() / ("rsvc_content_corpus_" + std::to_string(utterances) + "_" +
                                       std::to_string(seed));
    fs::remove_all(dir);
    CorpusConfig cfg;
    cfg.num_utterances = utterances;
    cfg.num_noise_tracks = 0;
    cfg.seed = seed;
    entries = generate_corpus(cfg, dir.string());
  }
  ~CorpusFixture() { fs::remove_all(dir); }
};

SingerSpec draw_test_singer(const std::string& id, double f0) {
  SingerSpec s;
  s.singer_id = id;
  s.f0_base_hz = f0;
  s.formant_freqs = f0 < 250 ? std::array<double, 3>{650, 1150, 2500}
                             : std::array<double, 3>{820, 1380, 2850};
  s.vibrato_rate_hz = 5.0;
  s.vibrato_depth_cents = 20.0;
  s.breathiness = 0.1;
  return s;
}

ContentTrainConfig small_train_config(int steps) {
  ContentTrainConfig tc;
  tc.model.d_model = 48;
  tc.model.n_blocks = 2;
  tc.model.n_heads = 4;
  tc.model.d_ff = 96;
  tc.model.d_bnf = 32;
  tc.steps = steps;
  return tc;
}

}  // namespace

TEST_CASE("a single utterance is memorized: ctc loss < 0.1 by 1000 steps") {
  CorpusFixture corpus(1, 21);
  ContentTrainConfig tc = small_train_config(1000);
  tc.seed = 3;
  const ContentTrainResult r = train_content_model(corpus.entries, corpus.dir.string(), tc);
  REQUIRE(r.loss_curve.size() == 1000);
  CHECK(r.loss_curve.back() < 0.1f);
  CHECK(r.loss_curve.back() < 0.5f * r.loss_curve.front());
}

TEST_CASE("zero learning rate leaves the loss curve flat") {
  CorpusFixture corpus(1, 22);
  ContentTrainConfig tc = small_train_config(5);
  tc.lr = 0.0f;
  const ContentTrainResult r = train_content_model(corpus.entries, corpus.dir.string(), tc);
  for (float v : r.loss_curve) CHECK(v == r.loss_curve.front());
}

TEST_CASE("training rejects an empty manifest") {
  CHECK_THROWS_AS(train_content_model({}, "/tmp", small_train_config(1)),
                  std::invalid_argument);
}

TEST_CASE("bnf extraction: shape, determinism, and config guard") {
  std::mt19937 rng(9);
  ContentConfig cfg;
  cfg.d_model = 32;
  cfg.n_blocks = 1;
  cfg.n_heads = 2;
  cfg.d_ff = 64;
  cfg.d_bnf = 24;
  const ContentModel<float> model(cfg, rng);

  AudioBuffer a;
  a.samples.resize(8000);
  for (std::size_t i = 0; i < a.samples.size(); ++i)
    a.samples[i] = 0.3f * std::sin(2.0f * 3.14159265f * 220.0f * float(i) / 16000.0f);
  const MelSpectrogram mel = mel_spectrogram_of(a);

  const FeatureSequence f1 = extract_bnf(model, mel);
  CHECK(f1.num_frames() == mel.num_frames());
  CHECK(f1.dim() == 24);
  CHECK(f1.frame_hop_s == 0.010);
  const FeatureSequence f2 = extract_bnf(model, mel);
  CHECK(f1.frames == f2.frames);

  MelSpectrogram wrong;
  wrong.frames.setZero(10, 40);
  wrong.n_mels = 40;
  CHECK_THROWS_AS(extract_bnf(model, wrong), std::invalid_argument);
}

TEST_CASE("bnfs track phonemes more than singers after training") {
  CorpusFixture corpus(24, 23);
  ContentTrainConfig tc = small_train_config(900);
  tc.seed = 7;
  const ContentTrainResult r = train_content_model(corpus.entries, corpus.dir.string(), tc);

  // same scores sung by two different singers vs different scores
  std::mt19937 rng(40);
  SingerSpec a = draw_test_singer("a", 200.0), b = draw_test_singer("b", 300.0);
  std::uniform_int_distribution<int> tok(0, 12);
  std::uniform_int_distribution<int> midi_off(-4, 4);

  auto bnf_of = [&](const SingerSpec& s, const SongScore& sc) {
    const RenderedUtterance u = render_utterance(s, sc, 99);
    return extract_bnf(r.model, mel_spectrogram_of(u.audio));
  };
  auto mean_cos = [](const FeatureSequence& x, const FeatureSequence& y) {
    const Eigen::Index T = std::min(x.num_frames(), y.num_frames());
    double acc = 0.0;
    for (Eigen::Index t = 0; t < T; ++t) {
      const double nx = x.frames.row(t).norm(), ny = y.frames.row(t).norm();
      acc += nx > 0 && ny > 0 ? double(x.frames.row(t).dot(y.frames.row(t))) / (nx * ny) : 0.0;
    }
    return acc / double(T);
  };

  double same_phoneme = 0.0, diff_phoneme = 0.0;
  const int pairs = 6;
  for (int p = 0; p < pairs; ++p) {
    SongScore sc1, sc2;
    sc1.vocab_size = sc2.vocab_size = 16;
    for (int i = 0; i < 5; ++i) {
      const int t1 = tok(rng);
      int t2 = tok(rng);
      while (t2 == t1) t2 = tok(rng);
      sc1.notes.push_back({64 + midi_off(rng), 0.25, t1});
      sc2.notes.push_back({64 + midi_off(rng), 0.25, t2});
    }
    same_phoneme += mean_cos(bnf_of(a, sc1), bnf_of(b, sc1));
    diff_phoneme += mean_cos(bnf_of(a, sc1), bnf_of(b, sc2));
  }
  CHECK(same_phoneme / pairs > diff_phoneme / pairs);
}
