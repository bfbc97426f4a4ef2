#include <doctest.h>

#include <filesystem>
#include <random>
#include <string>

#include "rsvc/model_io.hpp"

using namespace rsvc;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path dir;
  TempDir() : dir(fs::temp_directory_path() / "rsvc_model_io_test") { fs::create_directories(dir); }
  ~TempDir() { fs::remove_all(dir); }
  std::string path(const std::string& name) const { return (dir / name).string(); }
};

}  // namespace

TEST_CASE("content model round trip keeps every weight bit") {
  TempDir tmp;
  ContentConfig cfg;
  cfg.n_mels = 12;
  cfg.d_model = 16;
  cfg.n_blocks = 1;
  cfg.n_heads = 2;
  cfg.d_ff = 24;
  cfg.d_bnf = 8;
  cfg.vocab_size = 9;
  std::mt19937 rng(7);
  ContentModel<float> model(cfg, rng);

  save_content_model(model, {{"trained_steps", "123"}}, tmp.path("content.rsvc"));
  LoadedContentModel loaded = load_content_model(tmp.path("content.rsvc"));

  CHECK(param_hash(loaded.model.parameters()) == param_hash(model.parameters()));
  CHECK(loaded.model.cfg.d_model == 16);
  CHECK(loaded.model.cfg.d_bnf == 8);
  CHECK(loaded.model.cfg.vocab_size == 9);
  CHECK(loaded.meta.at("kind") == "content");
  CHECK(loaded.meta.at("trained_steps") == "123");
}

TEST_CASE("melody model round trip") {
  TempDir tmp;
  MelodyConfig cfg;
  cfg.n_mels = 12;
  cfg.d_model = 16;
  cfg.backbone_blocks = 1;
  cfg.head_blocks = 1;
  cfg.n_heads = 2;
  cfg.d_ff = 24;
  std::mt19937 rng(8);
  MelodyExtractor<float> model(cfg, rng);

  save_melody_model(model, {}, tmp.path("melody.rsvc"));
  LoadedMelodyModel loaded = load_melody_model(tmp.path("melody.rsvc"));

  CHECK(param_hash(loaded.model.parameters()) == param_hash(model.parameters()));
  CHECK(loaded.model.cfg.backbone_blocks == 1);
  CHECK(loaded.model.cfg.head_blocks == 1);
}

TEST_CASE("conversion model round trip keeps the feature contract") {
  TempDir tmp;
  ConversionConfig cfg;
  cfg.d_content_in = 8;
  cfg.d_melody_in = 16;
  cfg.d_model = 16;
  cfg.n_heads = 2;
  cfg.d_ff = 24;
  cfg.n_mels = 12;
  cfg.use_cin = false;
  cfg.melody_from_backbone = true;
  std::mt19937 rng(9);
  ConversionModel<float> model(cfg, rng);

  save_conversion_model(model, {}, tmp.path("conv.rsvc"));
  LoadedConversionModel loaded = load_conversion_model(tmp.path("conv.rsvc"));

  CHECK(param_hash(loaded.model.parameters()) == param_hash(model.parameters()));
  CHECK(loaded.model.cfg.use_cin == false);
  CHECK(loaded.model.cfg.melody_from_backbone == true);
  CHECK(loaded.model.cfg.d_melody_in == 16);
  for (const auto& [name, t] : loaded.model.parameters()) CHECK(name.find("cin") == std::string::npos);
}

TEST_CASE("discriminator stack round trip") {
  TempDir tmp;
  AdversarialConfig cfg;
  cfg.n_mels = 12;
  cfg.d_emb_in = 16;
  cfg.channels = 4;
  cfg.d_hidden = 6;
  std::mt19937 rng(10);
  Discriminators<float> model(cfg, rng);

  save_discriminators(model, {{"svc_steps", "50"}}, tmp.path("disc.rsvc"));
  LoadedDiscriminators loaded = load_discriminators(tmp.path("disc.rsvc"));

  CHECK(param_hash(loaded.model.parameters()) == param_hash(model.parameters()));
  CHECK(loaded.model.cfg.channels == 4);
  CHECK(loaded.meta.at("svc_steps") == "50");
}

TEST_CASE("loading the wrong kind names both kinds") {
  TempDir tmp;
  ContentConfig cfg;
  cfg.n_mels = 12;
  cfg.d_model = 16;
  cfg.n_blocks = 1;
  cfg.n_heads = 2;
  cfg.d_ff = 24;
  cfg.d_bnf = 8;
  cfg.vocab_size = 9;
  std::mt19937 rng(11);
  ContentModel<float> model(cfg, rng);
  save_content_model(model, {}, tmp.path("content.rsvc"));

  CHECK_THROWS_WITH_AS(load_melody_model(tmp.path("content.rsvc")),
                       doctest::Contains("holds a 'content' model, wanted 'melody'"),
                       CheckpointError);
  CHECK_THROWS_WITH_AS(load_conversion_model(tmp.path("content.rsvc")),
                       doctest::Contains("wanted 'conversion'"), CheckpointError);
}

TEST_CASE("missing or mangled meta keys are named") {
  TempDir tmp;
  SUBCASE("missing config key") {
    save_checkpoint({}, {{"kind", "content"}}, tmp.path("bare.rsvc"));
    CHECK_THROWS_WITH_AS(load_content_model(tmp.path("bare.rsvc")),
                         doctest::Contains("checkpoint meta is missing 'n_mels'"), CheckpointError);
  }
  SUBCASE("missing kind") {
    save_checkpoint({}, {}, tmp.path("nokind.rsvc"));
    CHECK_THROWS_WITH_AS(load_content_model(tmp.path("nokind.rsvc")),
                         doctest::Contains("missing 'kind'"), CheckpointError);
  }
  SUBCASE("non-numeric width") {
    save_checkpoint({}, {{"kind", "discriminators"},
                         {"n_mels", "twelve"},
                         {"d_emb_in", "16"},
                         {"channels", "4"},
                         {"d_hidden", "6"}},
                    tmp.path("bad.rsvc"));
    CHECK_THROWS_WITH_AS(load_discriminators(tmp.path("bad.rsvc")),
                         doctest::Contains("'n_mels' is not an integer"), CheckpointError);
  }
}
