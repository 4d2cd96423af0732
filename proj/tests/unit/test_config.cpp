#include <doctest.h>

#include "config.hpp"

using namespace avp;
using namespace avp::config;

TEST_CASE("every key round trips through text") {
  RunConfig c;
  const auto text = to_text(c);
  const auto back = parse_text(text);
  CHECK(to_text(back) == text);
  for (const auto& k : keys()) {
    CHECK(has_key(k.key));
    CHECK(get(c, k.key) == k.default_value);
    CHECK_FALSE(k.description.empty());
  }
}

TEST_CASE("seed fans out to every consumer") {
  RunConfig c;
  set(c, "seed", "42");
  CHECK(c.train.seed == 42);
  CHECK(c.synth.seed == 42);
  CHECK(c.eval.seed == 42);
}

TEST_CASE("encoder keys reach the right encoder") {
  RunConfig c;
  apply_override(c, " encoder.audio.stage_channels = 4,8 ");
  apply_override(c, "encoder.embedding_dim=32");
  CHECK(c.train.audio_encoder.stage_channels == std::vector<std::size_t>{4, 8});
  CHECK(c.train.image_encoder.stage_channels != c.train.audio_encoder.stage_channels);
  CHECK(c.train.image_encoder.embedding_dim == 32);
  CHECK(c.train.audio_encoder.embedding_dim == 32);
}

TEST_CASE("text overlays keep unrelated values") {
  RunConfig c;
  set(c, "train.lr", "0.01");
  apply_text(c, "# comment\n\ntrain.batch_size = 16\n");
  CHECK(c.train.lr == 0.01);
  CHECK(c.train.batch_size == 16);
}

TEST_CASE("bad input names the key or line") {
  RunConfig c;
  CHECK_THROWS_WITH(set(c, "train.nope", "1"), doctest::Contains("train.nope"));
  CHECK_THROWS_WITH(set(c, "train.steps", "-3"), doctest::Contains("train.steps"));
  CHECK_THROWS_WITH(set(c, "train.loss", "hinge"), doctest::Contains("hinge"));
  CHECK_THROWS_WITH(apply_override(c, "train.steps"), doctest::Contains("key=value"));
  CHECK_THROWS_WITH(parse_text("train.lr = 0.1\nbogus\n"), doctest::Contains("line 2"));
  CHECK_THROWS_AS(load("/nonexistent/config.txt"), Error);
}
