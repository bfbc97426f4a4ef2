#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>

#include "rsvc/corpus.hpp"
#include "rsvc/wav.hpp"

using namespace rsvc;
namespace fs = std::filesystem;

namespace {

SingerSpec plain_singer() {
  SingerSpec s;
  s.singer_id = "s";
  s.f0_base_hz = 220.0;
  s.formant_freqs = {700, 1200, 2600};
  s.vibrato_rate_hz = 5.5;
  s.vibrato_depth_cents = 0.0;
  s.breathiness = 0.05;
  return s;
}

SongScore one_note(int midi, double dur, int token = 0) {
  SongScore sc;
  sc.notes.push_back({midi, dur, token});
  return sc;
}

std::string read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  REQUIRE(bool(f));
  std::string s((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return s;
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

}  // namespace

TEST_CASE("a plain A4 note carries exactly 440 Hz on every voiced frame") {
  const RenderedUtterance r = render_utterance(plain_singer(), one_note(69, 1.0), 7);
  REQUIRE(r.contour.size() > 100);
  int voiced = 0;
  for (std::size_t t = 0; t < r.contour.size(); ++t) {
    if (r.contour.vuv[t]) {
      CHECK(r.contour.f0_hz[t] == 440.0f);
      ++voiced;
    } else {
      CHECK(r.contour.f0_hz[t] == 0.0f);
    }
  }
  CHECK(voiced > 90);
  CHECK(r.token_labels == std::vector<int>{0});
  CHECK(Eigen::Index(r.contour.size()) == mel_spectrogram_of(r.audio).num_frames());
}

TEST_CASE("vibrato stays inside its cent bounds and actually swings") {
  SingerSpec s = plain_singer();
  s.vibrato_depth_cents = 100.0;
  const RenderedUtterance r = render_utterance(s, one_note(69, 1.0), 7);
  const float lo = float(440.0 * std::pow(2.0, -100.0 / 1200.0));
  const float hi = float(440.0 * std::pow(2.0, 100.0 / 1200.0));
  float seen_lo = 1e9f, seen_hi = 0.0f;
  for (std::size_t t = 0; t < r.contour.size(); ++t) {
    if (!r.contour.vuv[t]) continue;
    CHECK(r.contour.f0_hz[t] >= lo - 1e-3f);
    CHECK(r.contour.f0_hz[t] <= hi + 1e-3f);
    seen_lo = std::min(seen_lo, r.contour.f0_hz[t]);
    seen_hi = std::max(seen_hi, r.contour.f0_hz[t]);
  }
  CHECK(seen_hi > float(440.0 * std::pow(2.0, 80.0 / 1200.0)));
  CHECK(seen_lo < float(440.0 * std::pow(2.0, -80.0 / 1200.0)));
}

TEST_CASE("rendering is bit-deterministic in (singer, score, seed)") {
  SingerSpec s = plain_singer();
  s.vibrato_depth_cents = 30.0;
  SongScore sc;
  sc.vocab_size = 16;
  sc.notes = {{67, 0.3, 2}, {69, 0.25, 5}, {71, 0.2, 14}, {64, 0.3, 1}};
  const RenderedUtterance a = render_utterance(s, sc, 123);
  const RenderedUtterance b = render_utterance(s, sc, 123);
  REQUIRE(a.audio.samples.size() == b.audio.samples.size());
  CHECK(std::memcmp(a.audio.samples.data(), b.audio.samples.data(),
                    a.audio.samples.size() * sizeof(float)) == 0);
  CHECK(a.contour.f0_hz == b.contour.f0_hz);
  CHECK(a.contour.energy == b.contour.energy);
  const RenderedUtterance c = render_utterance(s, sc, 124);
  CHECK(std::memcmp(a.audio.samples.data(), c.audio.samples.data(),
                    a.audio.samples.size() * sizeof(float)) != 0);
}

TEST_CASE("unvoiced tokens render as breath: no pitch, audible energy") {
  SongScore sc = one_note(69, 0.5, 15);  // top-of-vocabulary token is unvoiced
  const RenderedUtterance r = render_utterance(plain_singer(), sc, 3);
  bool any_energy = false;
  for (std::size_t t = 0; t < r.contour.size(); ++t) {
    CHECK(r.contour.vuv[t] == 0);
    CHECK(r.contour.f0_hz[t] == 0.0f);
    if (r.contour.energy[t] > 0.01f) any_energy = true;
  }
  CHECK(any_energy);
}

TEST_CASE("token voicing split") {
  CHECK(num_unvoiced_tokens(16) == 3);
  CHECK(num_unvoiced_tokens(4) == 1);
  CHECK(token_is_voiced(12, 16));
  CHECK(!token_is_voiced(13, 16));
  CHECK(!token_is_voiced(15, 16));
  CHECK(token_is_voiced(2, 4));
  CHECK(!token_is_voiced(3, 4));
}

TEST_CASE("pitch estimator agrees with the analytic contour within 2%") {
  SingerSpec s = plain_singer();
  s.vibrato_depth_cents = 30.0;
  s.breathiness = 0.15;
  std::mt19937 rng(42);
  std::vector<float> rel_errors;
  for (unsigned seed : {1u, 2u, 3u}) {
    SongScore sc;
    sc.vocab_size = 16;
    std::uniform_int_distribution<int> midi{60, 72};
    std::uniform_int_distribution<int> tok{0, 12};
    for (int i = 0; i < 5; ++i) sc.notes.push_back({midi(rng), 0.3, tok(rng)});
    const RenderedUtterance r = render_utterance(s, sc, seed);
    const MelodyContour est = extract_melody_ground_truth(r.audio);
    REQUIRE(est.size() == r.contour.size());
    for (std::size_t t = 0; t < est.size(); ++t)
      if (est.vuv[t] && r.contour.vuv[t])
        rel_errors.push_back(std::abs(est.f0_hz[t] - r.contour.f0_hz[t]) / r.contour.f0_hz[t]);
  }
  REQUIRE(rel_errors.size() > 100);
  std::sort(rel_errors.begin(), rel_errors.end());
  CHECK(rel_errors[rel_errors.size() / 2] < 0.02f);
}

TEST_CASE("spec validation rejects malformed singers and scores") {
  SingerSpec s = plain_singer();
  s.formant_freqs = {1200, 700, 2600};
  CHECK_THROWS_AS(s.validate(), std::invalid_argument);
  s = plain_singer();
  s.f0_base_hz = 50.0;
  CHECK_THROWS_AS(s.validate(), std::invalid_argument);
  s = plain_singer();
  s.formant_freqs[2] = 9000.0;
  CHECK_THROWS_AS(s.validate(), std::invalid_argument);

  SongScore sc = one_note(69, 0.0);
  CHECK_THROWS_AS(sc.validate(), std::invalid_argument);
  sc = one_note(69, 0.5, 16);  // outside vocabulary
  CHECK_THROWS_AS(sc.validate(), std::invalid_argument);
  sc.notes.clear();
  CHECK_THROWS_AS(sc.validate(), std::invalid_argument);
}

TEST_CASE("generate_corpus writes a consistent small corpus") {
  TempDir dir("rsvc_corpus_small");
  CorpusConfig cfg;
  cfg.num_utterances = 20;
  cfg.num_noise_tracks = 2;
  cfg.seed = 5;
  const std::vector<ManifestEntry> entries = generate_corpus(cfg, dir.path.string());
  REQUIRE(entries.size() == 20);

  std::string target_id;
  int target_count = 0, external_count = 0;
  for (const ManifestEntry& e : entries) {
    CHECK(fs::exists(dir.path / e.wav_path));
    CHECK(fs::exists(dir.path / contour_path_for(e.wav_path)));
    CHECK(!e.token_labels.empty());
    if (e.role == "target_corpus") {
      ++target_count;
      if (target_id.empty()) target_id = e.singer_id;
      CHECK(e.singer_id == target_id);
    } else {
      REQUIRE(e.role == "external_corpus");
      ++external_count;
      CHECK(e.singer_id != target_id);
    }
  }
  CHECK(target_count == 10);
  CHECK(external_count == 10);

  CHECK_NOTHROW(validate_manifest(entries, dir.path.string()));
  const auto loaded = load_manifest((dir.path / "corpus.jsonl").string());
  REQUIRE(loaded.size() == entries.size());
  for (std::size_t i = 0; i < loaded.size(); ++i) {
    CHECK(loaded[i].utterance_id == entries[i].utterance_id);
    CHECK(loaded[i].token_labels == entries[i].token_labels);
    CHECK(loaded[i].split == entries[i].split);
  }

  const auto noise = load_manifest((dir.path / "noise.jsonl").string());
  REQUIRE(noise.size() == 2);
  for (const ManifestEntry& e : noise) {
    CHECK(e.role == "noise");
    const AudioBuffer track = load_wav((dir.path / e.wav_path).string());
    CHECK(track.samples.size() == 64000);
  }

  // splits cover train/dev/test
  int dev = 0, test = 0;
  for (const ManifestEntry& e : entries) {
    if (e.split == "dev") ++dev;
    if (e.split == "test") ++test;
  }
  CHECK(dev == 2);
  CHECK(test == 2);
}

TEST_CASE("zero utterances produce an empty manifest without error") {
  TempDir dir("rsvc_corpus_empty");
  CorpusConfig cfg;
  cfg.num_utterances = 0;
  cfg.num_noise_tracks = 0;
  const auto entries = generate_corpus(cfg, dir.path.string());
  CHECK(entries.empty());
  CHECK(load_manifest((dir.path / "corpus.jsonl").string()).empty());
}

TEST_CASE("same seed reproduces manifests and audio bit-for-bit") {
  TempDir a("rsvc_corpus_rep_a"), b("rsvc_corpus_rep_b");
  CorpusConfig cfg;
  cfg.num_utterances = 8;
  cfg.num_noise_tracks = 1;
  cfg.seed = 77;
  generate_corpus(cfg, a.path.string());
  generate_corpus(cfg, b.path.string());
  CHECK(read_file((a.path / "corpus.jsonl").string()) ==
        read_file((b.path / "corpus.jsonl").string()));
  CHECK(read_file((a.path / "noise.jsonl").string()) ==
        read_file((b.path / "noise.jsonl").string()));
  for (const ManifestEntry& e : load_manifest((a.path / "corpus.jsonl").string())) {
    CHECK(read_file((a.path / e.wav_path).string()) == read_file((b.path / e.wav_path).string()));
    CHECK(read_file((a.path / contour_path_for(e.wav_path)).string()) ==
          read_file((b.path / contour_path_for(e.wav_path)).string()));
  }
  CHECK(read_file((a.path / "noise/bgm_00.wav").string()) ==
        read_file((b.path / "noise/bgm_00.wav").string()));
}

TEST_CASE("manifest validation catches broken references") {
  TempDir dir("rsvc_corpus_validate");
  CorpusConfig cfg;
  cfg.num_utterances = 4;
  cfg.num_noise_tracks = 0;
  std::vector<ManifestEntry> entries = generate_corpus(cfg, dir.path.string());

  std::vector<ManifestEntry> missing = entries;
  missing[1].wav_path = "wav/nope.wav";
  CHECK_THROWS_AS(validate_manifest(missing, dir.path.string()), std::runtime_error);

  std::vector<ManifestEntry> two_targets = entries;
  for (ManifestEntry& e : two_targets) e.role = "target_corpus";
  CHECK_THROWS_AS(validate_manifest(two_targets, dir.path.string()), std::runtime_error);

  std::vector<ManifestEntry> bad_split = entries;
  bad_split[0].split = "validation";
  CHECK_THROWS_AS(validate_manifest(bad_split, dir.path.string()), std::runtime_error);
}

TEST_CASE("contour sidecars round-trip exactly") {
  const RenderedUtterance r = render_utterance(plain_singer(), one_note(69, 0.4), 9);
  const std::string path = (fs::temp_directory_path() / "rsvc_contour_rt.contour").string();
  save_contour(r.contour, path);
  const MelodyContour c = load_contour(path);
  CHECK(c.f0_hz == r.contour.f0_hz);
  CHECK(c.energy == r.contour.energy);
  CHECK(c.vuv == r.contour.vuv);
  fs::remove(path);
}

TEST_CASE("checkpoints round-trip bit-exactly") {
  std::mt19937 rng(11);
  NamedTensors<float> tensors;
  tensors.emplace_back("alpha", Tensor<float>::uniform({4}, rng));
  tensors.emplace_back("beta.w", Tensor<float>::normal({2, 3}, rng));
  tensors.emplace_back("beta.b", Tensor<float>::uniform({3}, rng, -2.0f, 2.0f));
  const std::map<std::string, std::string> meta = {{"step", "123"}, {"config_hash", "abc123"}};
  const std::string path = (fs::temp_directory_path() / "rsvc_ck_rt.bin").string();
  save_checkpoint(tensors, meta, path);
  const Checkpoint ck = load_checkpoint(path);
  CHECK(ck.meta == meta);
  REQUIRE(ck.tensors.size() == tensors.size());
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    CHECK(ck.tensors[i].first == tensors[i].first);
    CHECK(ck.tensors[i].second.shape == tensors[i].second.shape);
    CHECK(std::memcmp(ck.tensors[i].second.values->data(), tensors[i].second.values->data(),
                      sizeof(float) * std::size_t(tensors[i].second.values->size())) == 0);
  }
  fs::remove(path);
}

TEST_CASE("checkpoint save rejects bad inputs") {
  NamedTensors<float> dupes;
  dupes.emplace_back("w", Tensor<float>::ones({2}));
  dupes.emplace_back("w", Tensor<float>::ones({2}));
  CHECK_THROWS_AS(save_checkpoint(dupes, {}, "/tmp/rsvc_ck_dupe.bin"), std::invalid_argument);

  NamedTensors<float> bad;
  Tensor<float> t = Tensor<float>::ones({2});
  (*t.values)[0] = std::numeric_limits<float>::quiet_NaN();
  bad.emplace_back("w", t);
  CHECK_THROWS_AS(save_checkpoint(bad, {}, "/tmp/rsvc_ck_nan.bin"), std::invalid_argument);
}

TEST_CASE("checkpoint loader distinguishes corruption kinds") {
  std::mt19937 rng(13);
  NamedTensors<float> tensors;
  tensors.emplace_back("alpha", Tensor<float>::uniform({4}, rng));
  tensors.emplace_back("beta.w", Tensor<float>::uniform({2, 3}, rng));
  const fs::path base = fs::temp_directory_path();
  const std::string good = (base / "rsvc_ck_good.bin").string();
  save_checkpoint(tensors, {{"step", "1"}}, good);
  const std::string bytes = read_file(good);

  SUBCASE("bad magic") {
    std::string corrupt = bytes;
    corrupt[0] = 'X';
    const std::string path = (base / "rsvc_ck_magic.bin").string();
    std::ofstream(path, std::ios::binary) << corrupt;
    CHECK_THROWS_AS(load_checkpoint(path), CheckpointBadMagic);
  }
  SUBCASE("version mismatch") {
    std::string corrupt = bytes;
    corrupt[4] = char(9);
    const std::string path = (base / "rsvc_ck_ver.bin").string();
    std::ofstream(path, std::ios::binary) << corrupt;
    CHECK_THROWS_AS(load_checkpoint(path), CheckpointVersionMismatch);
  }
  SUBCASE("truncated mid-tensor names the tensor") {
    const std::string path = (base / "rsvc_ck_trunc.bin").string();
    std::ofstream(path, std::ios::binary) << bytes.substr(0, bytes.size() - 3);
    try {
      load_checkpoint(path);
      FAIL("expected CheckpointTruncated");
    } catch (const CheckpointTruncated& e) {
      CHECK(std::string(e.what()).find("beta.w") != std::string::npos);
    }
  }
  SUBCASE("truncated header") {
    const std::string path = (base / "rsvc_ck_header.bin").string();
    std::ofstream(path, std::ios::binary) << bytes.substr(0, 2);
    CHECK_THROWS_AS(load_checkpoint(path), CheckpointTruncated);
  }
  SUBCASE("all corruption kinds share one base") {
    std::string corrupt = bytes;
    corrupt[0] = 'X';
    const std::string path = (base / "rsvc_ck_base.bin").string();
    std::ofstream(path, std::ios::binary) << corrupt;
    CHECK_THROWS_AS(load_checkpoint(path), CheckpointError);
  }
  fs::remove(good);
}
