#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "rsvc/adversarial.hpp"

using namespace rsvc;
namespace fs = std::filesystem;

namespace {

struct CorpusFixture {
  fs::path dir;
  std::vector<ManifestEntry> entries;

  CorpusFixture(int utterances, unsigned seed) {
    dir = fs::temp_directory_path() / ("rsvc_adv_corpus_" + std::to_string(utterances) + "_" +
                                       std::to_string(seed));
    fs::remove_all(dir);
    CorpusConfig cfg;
    cfg.num_utterances = utterances;
    cfg.num_noise_tracks = 1;
    cfg.seed = seed;
    entries = generate_corpus(cfg, dir.string());
  }
  ~CorpusFixture() { fs::remove_all(dir); }
};

AdversarialConfig tiny_disc_config() {
  AdversarialConfig c;
  c.n_mels = 6;
  c.d_emb_in = 5;
  c.channels = 4;
  c.d_hidden = 4;
  return c;
}

Tensor<float>& find_param(NamedTensors<float>& params, const std::string& name) {
  for (auto& [n, t] : params)
    if (n == name) return t;
  throw std::runtime_error("missing parameter " + name);
}

/// Every branch outputs the same constant regardless of input.
Discriminators<float> constant_discriminators(float value) {
  std::mt19937 rng(11);
  Discriminators<float> d(tiny_disc_config(), rng);
  NamedTensors<float> params = d.parameters();
  for (auto& [name, t] : params) t.vec().setZero();
  find_param(params, "disc.rf.out.b").vec()(0) = value;
  find_param(params, "disc.conv.out.b").vec()(0) = value;
  find_param(params, "disc.emb.fc2.b").vec()(0) = value;
  return d;
}

std::vector<Tensor<float>> random_mels(int count, int n_mels, unsigned seed) {
  std::mt19937 rng(seed);
  std::vector<Tensor<float>> out;
  for (int i = 0; i < count; ++i)
    out.push_back(Tensor<float>::uniform({5, Eigen::Index(n_mels)}, rng, -1.0f, 1.0f));
  return out;
}

std::vector<Tensor<float>> random_embs(int count, int d, unsigned seed) {
  std::mt19937 rng(seed);
  std::vector<Tensor<float>> out;
  for (int i = 0; i < count; ++i)
    out.push_back(Tensor<float>::uniform({5, Eigen::Index(d)}, rng, -1.0f, 1.0f));
  return out;
}

}  // namespace

TEST_CASE("warmup schedule gates the adversarial weights") {
  AdversarialSchedule s;
  s.warmup_steps = 500;
  s.weight_rf = 0.75f;
  s.weight_sim = 1.25f;

  CHECK(schedule_weights_at(s, 0).rf == 0.0f);
  CHECK(schedule_weights_at(s, 0).sim == 0.0f);
  CHECK(schedule_weights_at(s, 499).rf == 0.0f);
  CHECK(schedule_weights_at(s, 499).sim == 0.0f);
  CHECK(schedule_weights_at(s, 500).rf == 0.75f);
  CHECK(schedule_weights_at(s, 500).sim == 1.25f);
  CHECK(schedule_weights_at(s, 100000).rf == 0.75f);
  CHECK_THROWS_WITH_AS(schedule_weights_at(s, -1), doctest::Contains("negative step"),
                       std::invalid_argument);
}

TEST_CASE("discriminators map a sequence to one deterministic score") {
  std::mt19937 rng(5);
  const AdversarialConfig cfg = tiny_disc_config();
  Discriminators<float> d(cfg, rng);

  Tensor<float> mel = Tensor<float>::uniform({9, 6}, rng, -1.0f, 1.0f);
  Tensor<float> emb = Tensor<float>::uniform({9, 5}, rng, -1.0f, 1.0f);

  const Tensor<float> s_rf = d.rf(mel);
  const Tensor<float> s_emb = d.emb(emb);
  CHECK(s_rf.shape == Shape{1});
  CHECK(s_emb.shape == Shape{1});
  CHECK(d.rf(mel).item() == s_rf.item());
  CHECK(d.emb(emb).item() == s_emb.item());
  // rf and conv are distinct networks even at identical input
  CHECK(d.rf(mel).item() != d.conv(mel).item());

  NamedTensors<float> params = d.parameters();
  CHECK(params.size() == 3 * 2 + 3 * 2 + 2 * 2);  // two conv layers + out, twice; two fc layers
  const std::uint64_t h1 = param_hash(params);
  CHECK(h1 == param_hash(d.parameters()));
}

TEST_CASE("least-squares brackets hit hand-computed values") {
  Discriminators<float> d = constant_discriminators(0.5f);
  const auto real = random_mels(3, 6, 1);
  const auto recon = random_mels(2, 6, 2);
  const auto conv = random_mels(2, 6, 3);
  const auto t_embs = random_embs(2, 5, 4);
  const auto e_embs = random_embs(3, 5, 5);

  SUBCASE("constant-half discriminators score 0.5 per branch") {
    const DiscriminatorLossResult<float> r =
        discriminator_loss(d, real, recon, conv, t_embs, e_embs);
    CHECK(r.rf.item() == doctest::Approx(0.5).epsilon(1e-6));
    CHECK(r.sim_conv.item() == doctest::Approx(0.5).epsilon(1e-6));
    CHECK(r.sim_emb.item() == doctest::Approx(0.5).epsilon(1e-6));
    CHECK(r.total.item() == doctest::Approx(1.5).epsilon(1e-6));
    CHECK(r.warnings.empty());
  }

  SUBCASE("constant-zero discriminators score 1 per branch") {
    Discriminators<float> z = constant_discriminators(0.0f);
    const DiscriminatorLossResult<float> r =
        discriminator_loss(z, real, recon, conv, t_embs, e_embs);
    CHECK(r.rf.item() == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(r.total.item() == doctest::Approx(3.0).epsilon(1e-6));
  }

  SUBCASE("generator side of a constant-half discriminator") {
    const Tensor<float> l_rec = Tensor<float>::scalar(0.8f);
    AdversarialSchedule s;
    s.warmup_steps = 10;
    const GeneratorLossResult<float> g =
        generator_loss(d, l_rec, recon, conv, e_embs, s, 10);
    CHECK(g.l_rf.item() == doctest::Approx(0.25).epsilon(1e-6));
    CHECK(g.l_sim.item() == doctest::Approx(0.5).epsilon(1e-6));
    CHECK(g.total.item() == doctest::Approx(0.8 + 0.25 + 0.5).epsilon(1e-6));
  }

  SUBCASE("adversarial weights scale the generator terms") {
    const Tensor<float> l_rec = Tensor<float>::scalar(1.0f);
    AdversarialSchedule s;
    s.warmup_steps = 0;
    s.weight_rf = 2.0f;
    s.weight_sim = 0.5f;
    const GeneratorLossResult<float> g =
        generator_loss(d, l_rec, recon, conv, e_embs, s, 0);
    CHECK(g.total.item() == doctest::Approx(1.0 + 2.0 * 0.25 + 0.5 * 0.5).epsilon(1e-6));
  }
}

TEST_CASE("a perfect embedding discriminator reaches exactly zero") {
  std::mt19937 rng(7);
  Discriminators<float> d(tiny_disc_config(), rng);
  NamedTensors<float> params = d.parameters();
  // Pass coordinate 0 straight through both layers: D(x) = mean of column 0.
  find_param(params, "disc.emb.fc1.w").vec().setZero();
  find_param(params, "disc.emb.fc1.b").vec().setZero();
  find_param(params, "disc.emb.fc2.w").vec().setZero();
  find_param(params, "disc.emb.fc2.b").vec().setZero();
  find_param(params, "disc.emb.fc1.w").mat()(0, 0) = 1.0f;
  find_param(params, "disc.emb.fc2.w").mat()(0, 0) = 1.0f;

  const std::vector<Tensor<float>> real = {Tensor<float>::ones({4, 5})};
  const std::vector<Tensor<float>> fake = {Tensor<float>::zeros({4, 5})};
  const DiscriminatorLossResult<float> r = discriminator_loss(d, {}, {}, {}, real, fake);
  CHECK(r.sim_emb.item() == 0.0f);
}

TEST_CASE("empty batches skip branches and say so") {
  std::mt19937 rng(9);
  Discriminators<float> d(tiny_disc_config(), rng);

  SUBCASE("everything empty") {
    const DiscriminatorLossResult<float> r = discriminator_loss(d, {}, {}, {}, {}, {});
    CHECK(r.total.item() == 0.0f);
    REQUIRE(r.warnings.size() == 3);
    CHECK(r.warnings[0].find("reconstruction") != std::string::npos);
    CHECK(r.warnings[1].find("conversion") != std::string::npos);
    CHECK(r.warnings[2].find("embedding") != std::string::npos);
  }

  SUBCASE("reconstruction branch alone") {
    const auto real = random_mels(2, 6, 1);
    const auto recon = random_mels(2, 6, 2);
    const DiscriminatorLossResult<float> r = discriminator_loss(d, real, recon, {}, {}, {});
    CHECK(r.rf.item() > 0.0f);
    CHECK(r.total.item() == r.rf.item());
    CHECK(r.warnings.size() == 2);
  }
}

TEST_CASE("before warmup the generator objective is reconstruction, bit for bit") {
  std::mt19937 rng(13);
  Discriminators<float> d(tiny_disc_config(), rng);
  const auto recon = random_mels(2, 6, 21);
  const auto conv = random_mels(2, 6, 22);
  const auto embs = random_embs(2, 5, 23);
  const Tensor<float> l_rec = l1_distance(recon[0], recon[1]);

  AdversarialSchedule s;
  s.warmup_steps = 500;
  const GeneratorLossResult<float> g = generator_loss(d, l_rec, recon, conv, embs, s, 499);
  CHECK(&g.total.vec()(0) == &l_rec.vec()(0));  // the same tensor, not a copy
  CHECK(g.l_rf.item() == 0.0f);
  CHECK(g.l_sim.item() == 0.0f);
  CHECK(g.weights.rf == 0.0f);

  const GeneratorLossResult<float> after = generator_loss(d, l_rec, recon, conv, embs, s, 500);
  CHECK(after.total.item() ==
        doctest::Approx(l_rec.item() + after.l_rf.item() + after.l_sim.item()).epsilon(1e-6));
  CHECK(after.total.item() > l_rec.item());
}

TEST_CASE("a discriminator update cannot reach the generator") {
  std::mt19937 rng(17);
  ConversionConfig cc;
  cc.d_content_in = 6;
  cc.d_melody_in = 5;
  cc.d_model = 8;
  cc.n_heads = 2;
  cc.d_ff = 16;
  cc.n_mels = 6;
  ConversionModel<float> model(cc, rng);
  AdversarialConfig ac = tiny_disc_config();
  ac.d_emb_in = 8;
  Discriminators<float> d(ac, rng);

  Tensor<float> content = Tensor<float>::uniform({4, 6}, rng, -1.0f, 1.0f);
  Tensor<float> melody = Tensor<float>::uniform({4, 5}, rng, -1.0f, 1.0f);
  Tensor<float> real = Tensor<float>::uniform({4, 6}, rng, -1.0f, 1.0f);

  Tape<float> tape;
  TapeScope<float> scope(tape);
  const ConversionOutput<float> out = forward_convert(model, content, melody);
  const DiscriminatorLossResult<float> dl =
      discriminator_loss(d, {real}, {out.mel}, {}, {out.melody_post_cin}, {out.melody_post_cin});
  tape.backward(dl.total);

  for (const auto& [name, p] : model.parameters()) {
    INFO("generator parameter ", name);
    CHECK(tape.gradient(p).isZero());
  }
  NamedTensors<float> dp = d.parameters();
  CHECK_FALSE(tape.gradient(find_param(dp, "disc.rf.out.b")).isZero());
  CHECK_FALSE(tape.gradient(find_param(dp, "disc.emb.fc2.b")).isZero());
}

TEST_CASE("generator updates flow through the discriminators to the generator") {
  std::mt19937 rng(19);
  ConversionConfig cc;
  cc.d_content_in = 6;
  cc.d_melody_in = 5;
  cc.d_model = 8;
  cc.n_heads = 2;
  cc.d_ff = 16;
  cc.n_mels = 6;
  ConversionModel<float> model(cc, rng);
  AdversarialConfig ac = tiny_disc_config();
  ac.d_emb_in = 8;
  Discriminators<float> d(ac, rng);

  Tensor<float> content = Tensor<float>::uniform({4, 6}, rng, -1.0f, 1.0f);
  Tensor<float> melody = Tensor<float>::uniform({4, 5}, rng, -1.0f, 1.0f);
  Tensor<float> real = Tensor<float>::uniform({4, 6}, rng, -1.0f, 1.0f);

  AdversarialSchedule s;
  s.warmup_steps = 0;

  Tape<float> tape;
  TapeScope<float> scope(tape);
  const ConversionOutput<float> out = forward_convert(model, content, melody);
  const Tensor<float> l_rec = reconstruction_loss(out.mel, real);
  const GeneratorLossResult<float> gl =
      generator_loss(d, l_rec, {out.mel}, {}, {out.melody_post_cin}, s, 0);
  tape.backward(gl.total);

  CHECK_FALSE(tape.gradient(model.out_proj.w).isZero());
  CHECK_FALSE(tape.gradient(model.cin_gamma).isZero());
}

TEST_CASE("train_svc learns reconstruction and leaves upstream models untouched") {
  CorpusFixture corpus(12, 31);
  std::mt19937 rng(41);
  ContentConfig cc;
  cc.d_model = 24;
  cc.n_blocks = 1;
  cc.n_heads = 2;
  cc.d_ff = 32;
  cc.d_bnf = 12;
  ContentModel<float> content(cc, rng);
  MelodyConfig mc;
  mc.d_model = 16;
  mc.backbone_blocks = 1;
  mc.head_blocks = 1;
  mc.n_heads = 2;
  mc.d_ff = 24;
  MelodyExtractor<float> melody(mc, rng);

  SvcTrainConfig tc;
  tc.conversion.d_content_in = 12;
  tc.conversion.d_melody_in = 16;
  tc.conversion.d_model = 16;
  tc.conversion.n_heads = 2;
  tc.conversion.d_ff = 32;
  tc.conversion.n_mels = kNumMels;
  tc.discriminators.n_mels = kNumMels;
  tc.discriminators.d_emb_in = 16;
  tc.discriminators.channels = 6;
  tc.discriminators.d_hidden = 8;
  tc.schedule.warmup_steps = 60;
  tc.total_steps = 120;
  tc.crop_frames = 16;
  tc.batch_target = 1;
  tc.batch_external = 1;
  tc.lr_g = 2e-3f;
  tc.lr_d = 1e-3f;
  tc.seed = 7;

  const std::uint64_t content_hash = param_hash(content.parameters());
  const std::uint64_t melody_hash = param_hash(melody.parameters());

  const SvcTrainResult r = train_svc(corpus.entries, corpus.dir.string(), content, melody, tc);

  REQUIRE(r.curve.size() == 120);
  for (int i = 0; i < 60; ++i) {
    CHECK(r.curve[std::size_t(i)].l_rf_d == 0.0f);
    CHECK(r.curve[std::size_t(i)].l_sim_d == 0.0f);
    CHECK(r.curve[std::size_t(i)].l_rf_g == 0.0f);
    CHECK(r.curve[std::size_t(i)].l_sim_g == 0.0f);
    CHECK(r.curve[std::size_t(i)].l_rec > 0.0f);
  }
  bool any_adversarial = false;
  for (std::size_t i = 60; i < 120; ++i)
    if (r.curve[i].l_rf_d != 0.0f && r.curve[i].l_sim_d != 0.0f) any_adversarial = true;
  CHECK(any_adversarial);

  // the feature models never move
  CHECK(r.content_hash_before == content_hash);
  CHECK(r.content_hash_after == content_hash);
  CHECK(r.melody_hash_before == melody_hash);
  CHECK(r.melody_hash_after == melody_hash);

  float first = 0.0f, last = 0.0f;
  for (int i = 0; i < 15; ++i) {
    first += r.curve[std::size_t(i)].l_rec;
    last += r.curve[std::size_t(120 - 15 + i)].l_rec;
  }
  CHECK(last < first);

  for (const std::string& w : r.warnings)
    CHECK(w.find("similarity losses disabled") == std::string::npos);

  SUBCASE("a rerun with the same seed reproduces the run bit for bit") {
    const SvcTrainResult r2 = train_svc(corpus.entries, corpus.dir.string(), content, melody, tc);
    CHECK(param_hash(r2.model.parameters()) == param_hash(r.model.parameters()));
    CHECK(param_hash(r2.discriminators.parameters()) ==
          param_hash(r.discriminators.parameters()));
    REQUIRE(r2.curve.size() == r.curve.size());
    for (std::size_t i = 0; i < r.curve.size(); ++i) {
      CHECK(r2.curve[i].l_rec == r.curve[i].l_rec);
      CHECK(r2.curve[i].l_rf_d == r.curve[i].l_rf_d);
    }
  }
}

TEST_CASE("train_svc without externals disables the similarity objective") {
  CorpusFixture corpus(10, 37);
  std::vector<ManifestEntry> no_externals;
  for (const ManifestEntry& e : corpus.entries)
    if (e.role != "external_corpus") no_externals.push_back(e);

  std::mt19937 rng(43);
  ContentConfig cc;
  cc.d_model = 24;
  cc.n_blocks = 1;
  cc.n_heads = 2;
  cc.d_ff = 32;
  cc.d_bnf = 12;
  ContentModel<float> content(cc, rng);
  MelodyConfig mc;
  mc.d_model = 16;
  mc.backbone_blocks = 1;
  mc.head_blocks = 1;
  mc.n_heads = 2;
  mc.d_ff = 24;
  MelodyExtractor<float> melody(mc, rng);

  SvcTrainConfig tc;
  tc.conversion.d_content_in = 12;
  tc.conversion.d_melody_in = 16;
  tc.conversion.d_model = 16;
  tc.conversion.n_heads = 2;
  tc.conversion.d_ff = 32;
  tc.conversion.n_mels = kNumMels;
  tc.discriminators.n_mels = kNumMels;
  tc.discriminators.d_emb_in = 16;
  tc.discriminators.channels = 6;
  tc.discriminators.d_hidden = 8;
  tc.schedule.warmup_steps = 4;
  tc.total_steps = 12;
  tc.crop_frames = 16;
  tc.batch_target = 1;
  tc.seed = 3;

  const SvcTrainResult r = train_svc(no_externals, corpus.dir.string(), content, melody, tc);
  bool warned = false;
  for (const std::string& w : r.warnings)
    if (w.find("similarity losses disabled") != std::string::npos) warned = true;
  CHECK(warned);
  for (const SvcLossRow& row : r.curve) {
    CHECK(row.l_sim_d == 0.0f);
    CHECK(row.l_sim_g == 0.0f);
  }
  // reconstruction adversary still runs after warmup
  CHECK(r.curve.back().l_rf_d != 0.0f);
}

TEST_CASE("train_svc validates its configuration") {
  CorpusFixture corpus(6, 47);
  std::mt19937 rng(51);
  ContentConfig cc;
  cc.d_model = 16;
  cc.n_blocks = 1;
  cc.n_heads = 2;
  cc.d_ff = 24;
  cc.d_bnf = 12;
  ContentModel<float> content(cc, rng);
  MelodyConfig mc;
  mc.d_model = 16;
  mc.backbone_blocks = 1;
  mc.head_blocks = 1;
  mc.n_heads = 2;
  mc.d_ff = 24;
  MelodyExtractor<float> melody(mc, rng);

  SvcTrainConfig tc;
  tc.conversion.d_content_in = 12;
  tc.conversion.d_melody_in = 16;
  tc.conversion.d_model = 16;
  tc.conversion.n_heads = 2;
  tc.conversion.d_ff = 32;
  tc.conversion.n_mels = kNumMels;
  tc.discriminators.n_mels = kNumMels;
  tc.discriminators.d_emb_in = 16;
  tc.total_steps = 2;
  tc.crop_frames = 8;

  auto run = [&](const SvcTrainConfig& cfg, const std::vector<ManifestEntry>& m) {
    return train_svc(m, corpus.dir.string(), content, melody, cfg);
  };

  SUBCASE("crop too small") {
    tc.crop_frames = 1;
    CHECK_THROWS_WITH_AS(run(tc, corpus.entries), doctest::Contains("crop_frames"),
                         std::invalid_argument);
  }
  SUBCASE("no steps") {
    tc.total_steps = 0;
    CHECK_THROWS_WITH_AS(run(tc, corpus.entries), doctest::Contains("total_steps"),
                         std::invalid_argument);
  }
  SUBCASE("mel width mismatch") {
    tc.discriminators.n_mels = kNumMels + 1;
    CHECK_THROWS_WITH_AS(run(tc, corpus.entries), doctest::Contains("n_mels"),
                         std::invalid_argument);
  }
  SUBCASE("embedding width mismatch") {
    tc.discriminators.d_emb_in = 24;
    CHECK_THROWS_WITH_AS(run(tc, corpus.entries), doctest::Contains("d_model"),
                         std::invalid_argument);
  }
  SUBCASE("negative learning rate") {
    tc.lr_d = -1.0f;
    CHECK_THROWS_WITH_AS(run(tc, corpus.entries), doctest::Contains("learning rate"),
                         std::invalid_argument);
  }
  SUBCASE("manifest without target singers") {
    std::vector<ManifestEntry> no_targets;
    for (const ManifestEntry& e : corpus.entries)
      if (e.role != "target_corpus") no_targets.push_back(e);
    CHECK_THROWS_WITH_AS(run(tc, no_targets), doctest::Contains("no target"),
                         std::invalid_argument);
  }
}

TEST_CASE("loss curves serialize one row per step") {
  std::vector<SvcLossRow> curve(2);
  curve[0] = {0, 1.5f, 0.0f, 0.0f, 0.0f, 0.0f};
  curve[1] = {1, 1.25f, 0.5f, 0.25f, 1.0f, 0.75f};

  const std::string text = svc_curve_to_text(curve);
  std::istringstream in(text);
  std::string header;
  std::getline(in, header);
  CHECK(header == "step l_rec l_rf_d l_rf_g l_sim_d l_sim_g");
  int step = -1;
  float l_rec = 0, a = 0, b = 0, c = 0, d = 0;
  in >> step >> l_rec >> a >> b >> c >> d;
  CHECK(step == 0);
  CHECK(l_rec == 1.5f);
  in >> step >> l_rec >> a >> b >> c >> d;
  CHECK(step == 1);
  CHECK(d == 0.75f);

  const fs::path path = fs::temp_directory_path() / "rsvc_adv_curve.txt";
  save_svc_curve(curve, path.string());
  std::ifstream file(path);
  std::stringstream buf;
  buf << file.rdbuf();
  CHECK(buf.str() == text);
  fs::remove(path);
}
