#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <avpretrain/avpretrain.h>
#include <doctest.h>

#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;

namespace {

struct Config {
  avp_config* p = nullptr;
  Config() { REQUIRE(avp_config_create(&p) == AVP_OK); }
  ~Config() { avp_config_destroy(p); }
  void set(const char* k, const char* v) { REQUIRE(avp_config_set(p, k, v) == AVP_OK); }
};

std::string take(char* s) {
  std::string out = s ? s : "";
  avp_free(s);
  return out;
}

void tiny(Config& c) {
  c.set("synth.classes", "2");
  c.set("synth.train_per_class", "4");
  c.set("synth.test_per_class", "2");
  c.set("synth.image_size", "48");
  c.set("synth.duration", "1");
  c.set("encoder.image.stem_kernel", "8");
  c.set("encoder.image.stem_stride", "8");
  c.set("encoder.audio.stem_kernel", "8");
  c.set("encoder.audio.stem_stride", "8");
  c.set("encoder.image.stage_channels", "4");
  c.set("encoder.audio.stage_channels", "4");
  c.set("encoder.embedding_dim", "6");
  c.set("augment.crop_min", "32");
  c.set("augment.crop_max", "48");
  c.set("augment.out_size", "32");
  c.set("frontend.num_bands", "32");
  c.set("frontend.crop_frames", "16");
  c.set("train.batch_size", "4");
  c.set("train.steps", "3");
  c.set("eval.baseline_seeds", "2");
  c.set("threads", "1");
}

void collect(const char* line, void* user) { static_cast<std::vector<std::string>*>(user)->push_back(line); }

}  // namespace

TEST_CASE("status names and version") {
  CHECK(std::strlen(avp_version()) > 0);
  CHECK(std::string(avp_status_name(AVP_OK)) == "ok");
  CHECK(std::string(avp_status_name(AVP_ERR_CHECKSUM)) != std::string(avp_status_name(AVP_ERR_VERSION)));
}

TEST_CASE("config keys, values and errors") {
  Config c;
  REQUIRE(avp_config_key_count() > 40);
  CHECK(avp_config_key_name(avp_config_key_count()) == nullptr);
  for (std::size_t i = 0; i < avp_config_key_count(); ++i) {
    char* v = nullptr;
    REQUIRE(avp_config_get(c.p, avp_config_key_name(i), &v) == AVP_OK);
    CHECK(take(v) == avp_config_key_default(i));
    CHECK(std::strlen(avp_config_key_help(i)) > 0);
  }
  CHECK(avp_config_apply(c.p, "train.steps=7") == AVP_OK);
  char* v = nullptr;
  CHECK(avp_config_get(c.p, "train.steps", &v) == AVP_OK);
  CHECK(take(v) == "7");

  CHECK(avp_config_set(c.p, "train.nope", "1") == AVP_ERR_INVALID_ARGUMENT);
  CHECK(std::string(avp_last_error()).find("train.nope") != std::string::npos);
  CHECK(avp_config_set(nullptr, "seed", "1") == AVP_ERR_INVALID_ARGUMENT);
  CHECK(avp_config_create(nullptr) == AVP_ERR_INVALID_ARGUMENT);

  const auto file = fs::temp_directory_path() / "avp_capi_config.txt";
  {
    std::ofstream(file) << "train.lr = 0.02\n";
  }
  CHECK(avp_config_load(c.p, file.c_str()) == AVP_OK);
  CHECK(avp_config_get(c.p, "train.lr", &v) == AVP_OK);
  CHECK(take(v) == "0.02");
  CHECK(avp_config_get(c.p, "train.steps", &v) == AVP_OK);
  CHECK(take(v) == "7");
  CHECK(avp_config_load(c.p, "/nonexistent/x.txt") == AVP_ERR_IO);
  fs::remove(file);

  char* text = nullptr;
  CHECK(avp_config_to_text(c.p, &text) == AVP_OK);
  CHECK(take(text).find("train.lr = 0.02") != std::string::npos);
}

TEST_CASE("pipeline through the C interface") {
  const auto dir = fs::temp_directory_path() / "avp_capi_pipeline";
  fs::remove_all(dir);
  Config c;
  tiny(c);

  std::size_t n = 0;
  REQUIRE(avp_synth(c.p, (dir / "data").c_str(), &n) == AVP_OK);
  CHECK(n == 12);
  const auto manifest = (dir / "data" / "manifest.csv").string();

  std::vector<std::string> log;
  REQUIRE(avp_train(c.p, manifest.c_str(), (dir / "run").c_str(), nullptr, collect, &log) == AVP_OK);
  CHECK(log.size() == 3);
  CHECK(log[0].front() == '{');
  const auto ckpt = (dir / "run" / "final.ckpt").string();
  CHECK(fs::exists(ckpt));
  CHECK(fs::exists(dir / "run" / "config.txt"));

  avp_report* r = nullptr;
  REQUIRE(avp_eval(c.p, ckpt.c_str(), manifest.c_str(), &r) == AVP_OK);
  CHECK(avp_report_size(r) == 4);
  double recall = 0.0;
  CHECK(avp_report_recall(r, 100, &recall) == AVP_OK);
  CHECK(recall == 1.0);
  CHECK(avp_report_recall(r, 3, &recall) == AVP_ERR_INVALID_ARGUMENT);
  std::size_t rank = 0;
  CHECK(avp_report_rank(r, 0, &rank) == AVP_OK);
  CHECK((rank >= 1 && rank <= 4));
  CHECK(avp_report_rank(r, 4, &rank) == AVP_ERR_INVALID_ARGUMENT);
  CHECK(avp_report_median_rank(r) >= 1.0);
  CHECK(avp_report_baseline_median_rank(r) > 0.0);
  char* json = nullptr;
  CHECK(avp_report_json(r, &json) == AVP_OK);
  CHECK(take(json).find("\"per_query\"") != std::string::npos);
  avp_report_destroy(r);

  char* listing = nullptr;
  REQUIRE(avp_retrieve(c.p, ckpt.c_str(), manifest.c_str(), "class00_p0004", &listing) == AVP_OK);
  const auto lines = take(listing);
  CHECK(lines.find(" *") != std::string::npos);
  CHECK(avp_retrieve(c.p, ckpt.c_str(), manifest.c_str(), "nobody", &listing) == AVP_ERR_INVALID_ARGUMENT);

  std::size_t count = 0;
  REQUIRE(avp_embed(c.p, ckpt.c_str(), manifest.c_str(), (dir / "emb").c_str(), &count, nullptr, nullptr) == AVP_OK);
  CHECK(count == 4);
  CHECK(fs::exists(dir / "emb" / "visual.emb"));
  CHECK(fs::exists(dir / "emb" / "audio.emb"));

  // resuming a finished run with more steps continues it
  c.set("train.steps", "5");
  log.clear();
  REQUIRE(avp_train(c.p, manifest.c_str(), (dir / "run").c_str(), ckpt.c_str(), collect, &log) == AVP_OK);
  CHECK(log.size() == 2);
  c.set("train.lr", "0.5");
  CHECK(avp_train(c.p, manifest.c_str(), (dir / "run2").c_str(), ckpt.c_str(), nullptr, nullptr) ==
        AVP_ERR_INVALID_ARGUMENT);

  {
    std::ofstream f(dir / "broken.ckpt", std::ios::binary);
    f << "AVPCKPT";
  }
  CHECK(avp_eval(c.p, (dir / "broken.ckpt").c_str(), manifest.c_str(), &r) == AVP_ERR_CHECKSUM);
  CHECK(avp_eval(c.p, (dir / "missing.ckpt").c_str(), manifest.c_str(), &r) == AVP_ERR_IO);

  c.set("ablate.steps", "2");
  log.clear();
  char* table = nullptr;
  REQUIRE(avp_ablate(c.p, manifest.c_str(), (dir / "abl").c_str(), &table, collect, &log) == AVP_OK);
  const auto t = take(table);
  CHECK(t.find("naive-triplet") != std::string::npos);
  CHECK(t.find("contrastive") != std::string::npos);
  CHECK(log.size() == 3 * (1 + 2));
  CHECK(fs::exists(dir / "abl" / "ablation.json"));
  CHECK(fs::exists(dir / "abl" / "batch-triplet" / "final.ckpt"));
  fs::remove_all(dir);
}

TEST_CASE("gradient check entry point") {
  Config c;
  char* table = nullptr;
  int passed = 0;
  REQUIRE(avp_grad_check(c.p, 1, &table, &passed) == AVP_OK);
  CHECK(passed == 1);
  CHECK(take(table).find("image-encoder") != std::string::npos);
  CHECK(avp_grad_check(c.p, 0, &table, &passed) == AVP_ERR_INVALID_ARGUMENT);
}
