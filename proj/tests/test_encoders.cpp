#include <cmath>

#include "doctest.h"
#include "mjave/encoders.hpp"
#include "mjave/gradcheck.hpp"

using namespace mjave;

namespace {

TextEncoderConfig tiny_config(std::size_t layers) {
  TextEncoderConfig c;
  c.vocab_size = 7;
  c.hidden = 4;
  c.max_positions = 6;
  c.layers = layers;
  c.ff_hidden = 8;
  return c;
}

}  // namespace

TEST_CASE("zero-layer encoder is embedding plus position") {
  Rng rng(3);
  auto params = TextEncoderParams<double>::init(tiny_config(0), rng);
  const std::vector<int> ids = {2, 5, 3};
  const std::vector<unsigned char> attend = {1, 1, 1};
  const auto h = text_encode(ids, attend, params);
  REQUIRE(h.rows() == 3);
  REQUIRE(h.cols() == 4);
  for (std::size_t i = 0; i < ids.size(); ++i)
    for (std::size_t j = 0; j < 4; ++j) {
      const double expect =
          params.token_embedding(static_cast<std::size_t>(ids[i]), j) +
          params.position_embedding(i, j);
      CHECK(h(i, j) == doctest::Approx(expect).epsilon(1e-15));
    }
}

TEST_CASE("the encoder is position sensitive") {
  Rng rng(4);
  auto params = TextEncoderParams<double>::init(tiny_config(1), rng);
  const std::vector<unsigned char> attend = {1, 1, 1};
  const auto ab = text_encode({2, 4, 5}, attend, params);
  const auto ba = text_encode({2, 5, 4}, attend, params);
  // The [CLS] row must differ when token order changes.
  double diff = 0.0;
  for (std::size_t j = 0; j < 4; ++j) diff += std::abs(ab(0, j) - ba(0, j));
  CHECK(diff > 1e-6);
}

TEST_CASE("encoding is deterministic and shape checked") {
  Rng r1(9), r2(9);
  auto p1 = TextEncoderParams<double>::init(tiny_config(2), r1);
  auto p2 = TextEncoderParams<double>::init(tiny_config(2), r2);
  const std::vector<int> ids = {2, 6, 6, 3, 0};
  const std::vector<unsigned char> attend = {1, 1, 1, 1, 0};
  const auto h1 = text_encode(ids, attend, p1);
  const auto h2 = text_encode(ids, attend, p2);
  CHECK(h1.value() == h2.value());

  CHECK_THROWS_AS(text_encode({2, 3}, {1, 1, 1}, p1), ShapeError);
  CHECK_THROWS_AS(
      text_encode({2, 3, 0, 0, 0, 0, 0}, std::vector<unsigned char>(7, 1), p1),
      ShapeError);
  auto bad = tiny_config(0);
  bad.vocab_size = 0;
  Rng r3(1);
  CHECK_THROWS_AS(TextEncoderParams<double>::init(bad, r3), ConfigError);
}

TEST_CASE("gradients reach the used embedding rows only") {
  Rng rng(5);
  auto params = TextEncoderParams<double>::init(tiny_config(1), rng);
  const std::vector<int> ids = {2, 4, 3};
  const auto h = text_encode(ids, {1, 1, 1}, params);
  backward(sum(h));
  const auto& g = params.token_embedding.grad();
  auto row_norm = [&](int row) {
    double s = 0.0;
    for (std::size_t j = 0; j < 4; ++j)
      s += std::abs(g[static_cast<std::size_t>(row) * 4 + j]);
    return s;
  };
  CHECK(row_norm(2) > 0.0);
  CHECK(row_norm(3) > 0.0);
  CHECK(row_norm(4) > 0.0);
  CHECK(row_norm(1) == 0.0);
  CHECK(row_norm(5) == 0.0);
  CHECK(row_norm(6) == 0.0);
}

TEST_CASE("one encoder layer passes a finite-difference check") {
  Rng rng(6);
  auto params = TextEncoderParams<double>::init(tiny_config(1), rng);
  // Freshly initialized embeddings are nearly constant rows, which makes the
  // row normalization stiff (third derivatives ~1/std^3) and inflates the
  // central-difference truncation error. Scale to O(1) rows as after warmup.
  for (auto* emb : {&params.token_embedding, &params.position_embedding})
    for (auto& v : emb->mutable_value()) v *= 25.0;
  const std::vector<int> ids = {2, 5, 3};
  const std::vector<unsigned char> attend = {1, 1, 1};
  auto loss_fn = [&] { return sum(sigmoid(text_encode(ids, attend, params))); };
  std::vector<GradCheckTarget> targets;
  params.visit([&](const std::string& name, Tensor<double>& t) {
    targets.push_back({name, t, {}});
  });
  const auto res = grad_check(loss_fn, targets, 1e-5);
  INFO(res.worst.name << "[" << res.worst.flat_index << "]");
  CHECK(res.max_rel_error <= 1e-5);
}

TEST_CASE("image pass-through keeps features verbatim") {
  ImageEncoderConfig cfg;
  cfg.d_v = 3;
  cfg.regions = 2;
  Rng rng(1);
  auto params = ImageEncoderParams<double>::init(cfg, rng);

  ImageFeatures f;
  f.global = {0.5, -1.0, 2.0};
  f.regions = {{1, 2, 3}, {4, 5, 6}};
  const auto enc = image_encode(f, params);
  CHECK(enc.global.value() == std::vector<double>({0.5, -1.0, 2.0}));
  CHECK(enc.regions.value() == std::vector<double>({1, 2, 3, 4, 5, 6}));

  SUBCASE("dimension mismatches are data errors") {
    ImageFeatures wrong = f;
    wrong.global = {1.0, 2.0};
    CHECK_THROWS_AS(image_encode(wrong, params), DataError);
    wrong = f;
    wrong.regions.push_back({0, 0, 0});
    CHECK_THROWS_AS(image_encode(wrong, params), DataError);
    wrong = f;
    wrong.regions[1] = {1.0};
    CHECK_THROWS_AS(image_encode(wrong, params), DataError);
  }
  SUBCASE("optional projection changes the width") {
    ImageEncoderConfig proj = cfg;
    proj.project_to = 5;
    Rng r2(2);
    auto pp = ImageEncoderParams<double>::init(proj, r2);
    const auto out = image_encode(f, pp);
    CHECK(out.global.cols() == 5);
    CHECK(out.regions.rows() == 2);
    CHECK(out.regions.cols() == 5);
  }
}
