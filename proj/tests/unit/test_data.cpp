#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <set>

#include "binary_io.hpp"
#include "data.hpp"
#include "wav.hpp"

using namespace avp;
using namespace avp::data;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

const std::string kHeader = std::string(kManifestHeader) + "\n";

std::size_t argmax_band(const Tensor<float>& spec, std::size_t i) {
  const std::size_t bands = spec.dim(2), frames = spec.dim(3);
  const float* s = spec.data.data() + i * bands * frames;
  std::size_t best = 0;
  double best_v = -1e300;
  for (std::size_t b = 0; b < bands; ++b) {
    double acc = 0.0;
    for (std::size_t t = 0; t < frames; ++t) acc += s[b * frames + t];
    if (acc > best_v) best_v = acc, best = b;
  }
  return best;
}

double mean_red(const Tensor<float>& images, std::size_t i) {
  const std::size_t plane = images.dim(2) * images.dim(3);
  const float* r = images.data.data() + i * 3 * plane;
  double acc = 0.0;
  for (std::size_t k = 0; k < plane; ++k) acc += r[k];
  return acc / double(plane);
}

}  // namespace

TEST_CASE("manifest parsing") {
  SUBCASE("quoted fields, BOM and hash-assigned split") {
    const std::string text = "\xEF\xBB\xBF" + kHeader +
                             "a,audio/a.wav,img/a.png,1.5,-2.25,test,\"Jane, \"\"Field\"\" Doe\"\n"
                             "b,audio/b.wav,img/b.png,0,0,,\"two\nlines\"\n";
    const auto m = parse_manifest(text, "/data");
    REQUIRE(m.entries.size() == 2);
    CHECK(m.entries[0].attribution == "Jane, \"Field\" Doe");
    CHECK(m.entries[0].longitude == 1.5);
    CHECK(m.entries[0].latitude == -2.25);
    CHECK(m.entries[0].split == Split::test);
    CHECK(m.entries[1].split == hash_split("b"));
    CHECK(m.entries[1].attribution == "two\nlines");
    CHECK(m.resolve("audio/a.wav") == (fs::path("/data") / "audio/a.wav").string());
    CHECK(m.resolve("/abs/x.wav") == "/abs/x.wav");
  }
  SUBCASE("round trip") {
    Manifest m;
    m.entries.push_back({"x_1", "a.wav", "b.png", 12.25, 45.5, Split::val, "c, \"d\""});
    m.entries.push_back({"x_2", "c.wav", "d.ppm", -179.9999, -89.5, Split::train, ""});
    const auto back = parse_manifest(format_manifest(m));
    REQUIRE(back.entries.size() == 2);
    CHECK(back.entries[0].attribution == m.entries[0].attribution);
    CHECK(back.entries[1].longitude == m.entries[1].longitude);
    CHECK(format_manifest(back) == format_manifest(m));
  }
  SUBCASE("errors name the line") {
    CHECK_THROWS_WITH(parse_manifest("id,audio\n"), doctest::Contains("line 1"));
    CHECK_THROWS_WITH(parse_manifest(kHeader + "a,x.wav,y.png,0,0,train,\na,x.wav,y.png,0,0,train,\n"),
                      doctest::Contains("line 3: duplicate id 'a'"));
    CHECK_THROWS_WITH(parse_manifest(kHeader + "a,x.wav,y.png,east,0,train,\n"), doctest::Contains("line 2"));
    CHECK_THROWS_WITH(parse_manifest(kHeader + "a,x.wav,y.png,0,91,train,\n"), doctest::Contains("line 2"));
    CHECK_THROWS_WITH(parse_manifest(kHeader + "a,x.wav,y.png,0,0\n"), doctest::Contains("expected 7 fields"));
    CHECK_THROWS_WITH(parse_manifest(kHeader + "a,x.wav,y.png,0,0,holdout,\n"), doctest::Contains("holdout"));
    CHECK_THROWS_WITH(parse_manifest(kHeader + "a,\"x.wav,y.png,0,0,train,\n"), doctest::Contains("unterminated"));
  }
  SUBCASE("split hashing is roughly 90/5/5") {
    std::size_t counts[3] = {0, 0, 0};
    for (int i = 0; i < 4000; ++i) ++counts[int(hash_split("id" + std::to_string(i)))];
    CHECK(counts[0] > 3450);
    CHECK(counts[1] > 120);
    CHECK(counts[2] > 120);
  }
  CHECK(class_of("class03_p0001") == "class03");
  CHECK(class_of("plain") == "plain");
}

TEST_CASE("load_pair decodes, resamples and names the entry on failure") {
  TempDir dir("avp_data_pair");
  audio::Waveform w;
  w.sample_rate = 44100;
  for (int i = 0; i < 44100; ++i) w.samples.push_back(float(0.3 * std::sin(2 * 3.14159265358979 * 440.0 * i / 44100)));
  audio::write_wav((dir.path / "a.wav").string(), w, audio::WavEncoding::float32);
  image::write_png((dir.path / "a.png").string(), image::ImageTensor(6, 8, 0.2f));
  const auto m = parse_manifest(kHeader + "a,a.wav,a.png,0,0,train,\nb,missing.wav,a.png,0,0,train,\n",
                                dir.path.string());
  const auto p = load_pair(m, m.entries[0], 22050);
  CHECK(p.audio.sample_rate == 22050);
  CHECK(std::llabs(static_cast<long long>(p.audio.samples.size()) - 22050) <= 1);
  CHECK(p.image.width == 8);
  CHECK_THROWS_WITH(load_pair(m, m.entries[1], 22050), doctest::Contains("entry 'b'"));
}

TEST_CASE("epoch batches") {
  const auto a = epoch_batches(10, 3, 7, 0);
  REQUIRE(a.size() == 3);
  std::set<std::size_t> seen;
  for (const auto& b : a) {
    CHECK(b.size() == 3);
    seen.insert(b.begin(), b.end());
  }
  CHECK(seen.size() == 9);
  CHECK(epoch_batches(10, 3, 7, 0) == a);
  CHECK(epoch_batches(10, 3, 7, 1) != a);
  CHECK(epoch_batches(10, 3, 8, 0) != a);
  CHECK_THROWS_AS(epoch_batches(2, 3, 0, 0), Error);
  CHECK_THROWS_AS(epoch_batches(5, 0, 0, 0), Error);
}

TEST_CASE("synthetic generation is deterministic and complete") {
  TempDir a("avp_synth_a"), b("avp_synth_b");
  SynthSpec spec;
  spec.num_classes = 2;
  spec.train_per_class = 2;
  spec.test_per_class = 1;
  spec.image_size = 32;
  spec.duration = 0.5;
  spec.image_format = ImageFormat::ppm;
  const auto ma = generate_synthetic(spec, a.path.string());
  generate_synthetic(spec, b.path.string());
  REQUIRE(ma.entries.size() == 6);
  CHECK(ma.entries[2].split == Split::test);
  CHECK(ma.entries[3].id == "class01_p0000");
  const auto loaded = load_manifest((a.path / "manifest.csv").string());
  CHECK(format_manifest(loaded) == format_manifest(ma));
  for (const auto& e : ma.entries) {
    CHECK(read_file((a.path / e.image_path).string()) == read_file((b.path / e.image_path).string()));
    CHECK(read_file((a.path / e.audio_path).string()) == read_file((b.path / e.audio_path).string()));
  }
}

TEST_CASE("batches keep image and audio of the same entry together") {
  TempDir dir("avp_fingerprint");
  SynthSpec spec;
  spec.num_classes = 4;
  spec.train_per_class = 8;
  spec.test_per_class = 2;
  spec.image_size = 64;
  spec.duration = 3.5;
  spec.fingerprint = true;
  const auto m = generate_synthetic(spec, dir.path.string());
  const audio::FrontendConfig fe;
  const DataSource src(m, Split::train, fe, 2);
  REQUIRE(src.size() == 32);

  image::AugmentConfig still;
  still.hue_shift = 0.0f;
  still.sat_min = still.sat_max = still.val_min = still.val_max = 1.0f;
  still.blur_prob = 0.0f;

  std::size_t checked = 0;
  for (std::uint64_t epoch = 0; epoch < 2; ++epoch)
    for (const auto& idx : epoch_batches(src.size(), 8, 3, epoch)) {
      for (const auto& batch : {src.train_batch(idx, still, 3, epoch, 2), src.eval_batch(idx, still, 2)}) {
        for (std::size_t i = 0; i < idx.size(); ++i) {
          const std::size_t ord = std::size_t(std::lround(mean_red(batch.images, i) * 96.0)) - 1;
          CHECK(fingerprint_band(ord) == argmax_band(batch.spectrograms, i));
          std::size_t expect_ord = 0;
          for (; expect_ord < m.entries.size(); ++expect_ord)
            if (m.entries[expect_ord].id == batch.ids[i]) break;
          CHECK(ord == expect_ord);
          ++checked;
        }
      }
    }
  CHECK(checked == 2 * 4 * 2 * 8);
}

TEST_CASE("train batches are reproducible and independent of thread count") {
  TempDir dir("avp_batch_det");
  SynthSpec spec;
  spec.num_classes = 2;
  spec.train_per_class = 3;
  spec.test_per_class = 0;
  spec.image_size = 96;
  spec.duration = 1.0;
  const auto m = generate_synthetic(spec, dir.path.string());
  const DataSource src(m, Split::train, audio::FrontendConfig{}, 1);
  const auto a = src.train_batch({0, 3, 5}, image::AugmentConfig{}, 9, 4, 1);
  const auto b = src.train_batch({0, 3, 5}, image::AugmentConfig{}, 9, 4, 3);
  CHECK(a.images.data == b.images.data);
  CHECK(a.spectrograms.data == b.spectrograms.data);
  CHECK(a.images.shape == std::vector<std::size_t>{3, 3, 192, 192});
  CHECK(a.spectrograms.shape == std::vector<std::size_t>{3, 1, 128, 128});
  const auto c = src.train_batch({0, 3, 5}, image::AugmentConfig{}, 9, 5, 1);
  CHECK(c.images.data != a.images.data);
}

TEST_CASE("undecodable entries are skipped with a reason when requested") {
  TempDir dir("avp_skip");
  SynthSpec spec;
  spec.num_classes = 2;
  spec.train_per_class = 2;
  spec.test_per_class = 0;
  spec.image_size = 32;
  spec.duration = 0.5;
  auto m = generate_synthetic(spec, dir.path.string());
  write_text_file((dir.path / m.entries[1].audio_path).string(), "not a wav");
  CHECK_THROWS_WITH(DataSource(m, Split::train, audio::FrontendConfig{}, 1), doctest::Contains(m.entries[1].id.c_str()));
  const DataSource src(m, Split::train, audio::FrontendConfig{}, 1, true);
  CHECK(src.size() == 3);
  REQUIRE(src.skipped().size() == 1);
  CHECK(src.skipped()[0].find(m.entries[1].id) == 0);
}

TEST_CASE("each modality alone separates the synthetic classes") {
  SynthSpec spec;
  spec.image_size = 96;
  spec.duration = 2.0;
  const std::size_t train_n = 16, test_n = 8;
  const audio::FrontendConfig fe;

  auto features = [&](std::size_t k, std::size_t j) {
    Rng rng(derive_seed(spec.seed, k, j, 0));
    const double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
    const auto img = synth_image(spec, k, u, derive_seed(spec.seed, k, j, 1));
    const auto lm = audio::compute_log_mel(synth_audio(spec, k, u, derive_seed(spec.seed, k, j, 2)), fe);
    std::vector<double> vis(3, 0.0), aud(lm.bands, 0.0);
    const std::size_t plane = img.height * img.width;
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t p = 0; p < plane; ++p) vis[c] += img.values[c * plane + p] / double(plane);
    for (std::size_t b = 0; b < lm.bands; ++b)
      for (std::size_t t = 0; t < lm.frames; ++t) aud[b] += lm.at(b, t) / double(lm.frames);
    return std::pair{vis, aud};
  };

  const std::size_t K = spec.num_classes;
  std::vector<std::vector<double>> cv(K), ca(K);
  std::vector<std::pair<std::size_t, std::pair<std::vector<double>, std::vector<double>>>> test;
  for (std::size_t k = 0; k < K; ++k) {
    for (std::size_t j = 0; j < train_n; ++j) {
      auto [v, a] = features(k, j);
      if (cv[k].empty()) cv[k].assign(v.size(), 0.0), ca[k].assign(a.size(), 0.0);
      for (std::size_t i = 0; i < v.size(); ++i) cv[k][i] += v[i] / train_n;
      for (std::size_t i = 0; i < a.size(); ++i) ca[k][i] += a[i] / train_n;
    }
    for (std::size_t j = train_n; j < train_n + test_n; ++j) test.push_back({k, features(k, j)});
  }
  auto classify = [&](const std::vector<std::vector<double>>& centroids, const std::vector<double>& x) {
    std::size_t best = 0;
    double best_d = 1e300;
    for (std::size_t k = 0; k < centroids.size(); ++k) {
      double d = 0.0;
      for (std::size_t i = 0; i < x.size(); ++i) d += (x[i] - centroids[k][i]) * (x[i] - centroids[k][i]);
      if (d < best_d) best_d = d, best = k;
    }
    return best;
  };
  std::size_t ok_v = 0, ok_a = 0;
  for (const auto& [k, f] : test) {
    ok_v += classify(cv, f.first) == k;
    ok_a += classify(ca, f.second) == k;
  }
  CHECK(double(ok_v) / test.size() >= 0.95);
  CHECK(double(ok_a) / test.size() >= 0.95);
}
