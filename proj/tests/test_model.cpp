#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <limits>

#include "geoclr/errors.hpp"
#include "geoclr/model.hpp"
#include "support.hpp"

using namespace geoclr;

namespace {

EncoderConfig tiny_mlp() {
  EncoderConfig cfg;
  cfg.geometry = {3, 3, 2};
  cfg.hidden = {12, 10};
  cfg.embed_dim = 4;
  return cfg;
}

EncoderConfig tiny_conv(std::vector<int> hidden) {
  EncoderConfig cfg;
  cfg.geometry = {5, 6, 2};
  cfg.conv_channels = {4, 6};
  cfg.hidden = std::move(hidden);
  cfg.embed_dim = 4;
  return cfg;
}

double sum_product(const Matrix& a, const Matrix& b) { return a.cwiseProduct(b).sum(); }

// Checks encoder_backward against central differences of
// f = <z, G> + <features, H> over every parameter.
void check_encoder_gradients(const EncoderConfig& cfg, std::uint64_t seed, bool use_z, bool use_features) {
  Rng rng(seed);
  EncoderParams params = init_encoder(cfg, rng);
  const Matrix x = testing::random_pixels(rng, 4, cfg.input_dim());
  const Matrix gz = testing::random_matrix(rng, 4, cfg.embed_dim);
  const Matrix gf = testing::random_matrix(rng, 4, cfg.feature_dim());
  auto f = [&] {
    const EncoderTrace t = encoder_forward(params, x, true);
    return (use_z ? sum_product(t.z, gz) : 0.0) + (use_features ? sum_product(t.features, gf) : 0.0);
  };
  const EncoderTrace trace = encoder_forward(params, x, true);
  const EncoderParams grads = encoder_backward(params, trace, use_z ? &gz : nullptr, use_features ? &gf : nullptr);
  auto p = named_arrays(params, "");
  const auto g = named_arrays(grads, "");
  REQUIRE(p.size() == g.size());
  for (std::size_t i = 0; i < p.size(); ++i) {
    CAPTURE(p[i].first);
    CHECK(testing::max_fd_error(*p[i].second, *g[i].second, f) < 1e-5);
  }
}

}  // namespace

TEST_CASE("embeddings have unit norm") {
  Rng rng(1);
  const EncoderConfig cfg = testing::small_encoder();
  const EncoderParams p = init_encoder(cfg, rng);
  const Matrix z = encode(p, testing::random_pixels(rng, 32, cfg.input_dim()));
  for (Eigen::Index r = 0; r < z.rows(); ++r) CHECK(z.row(r).norm() == doctest::Approx(1.0).epsilon(1e-12));

  const EncoderParams pc = init_encoder(tiny_conv({}), rng);
  const Matrix zc = encode(pc, testing::random_pixels(rng, 8, tiny_conv({}).input_dim()));
  for (Eigen::Index r = 0; r < zc.rows(); ++r) CHECK(zc.row(r).norm() == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("identical inputs give identical embeddings and rows are independent") {
  Rng rng(2);
  for (const EncoderConfig& cfg : {testing::small_encoder(), tiny_conv({6})}) {
    const EncoderParams p = init_encoder(cfg, rng);
    Matrix x = testing::random_pixels(rng, 6, cfg.input_dim());
    x.row(3) = x.row(1);
    const Matrix z = encode(p, x);
    CHECK(z.row(3) == z.row(1));
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
      const Matrix single = encode(p, x.row(r));
      CHECK((single - z.row(r)).cwiseAbs().maxCoeff() < 1e-12);
    }
  }
}

TEST_CASE("feature widths follow the configuration") {
  CHECK(testing::small_encoder().feature_dim() == 12);
  CHECK(tiny_conv({}).feature_dim() == 6);
  CHECK(tiny_conv({9}).feature_dim() == 9);
  Rng rng(3);
  const EncoderConfig cfg = tiny_conv({});
  const EncoderParams p = init_encoder(cfg, rng);
  const Matrix x = testing::random_pixels(rng, 2, cfg.input_dim());
  CHECK(backbone_features(p, x).cols() == 6);
  CHECK(encode(p, x).cols() == 4);
}

TEST_CASE("geo logits are an affine map") {
  Rng rng(4);
  const Linear head = init_linear(5, 3, rng);
  Linear h = head;
  h.bias = testing::random_matrix(rng, 1, 3);
  const Matrix z = testing::random_unit_rows(rng, 7, 5);
  const Matrix out = geo_logits(h, z);
  for (int r = 0; r < 7; ++r)
    for (int c = 0; c < 3; ++c) {
      double expected = h.bias(0, c);
      for (int i = 0; i < 5; ++i) expected += z(r, i) * h.weight(i, c);
      CHECK(out(r, c) == doctest::Approx(expected).epsilon(1e-12));
    }
  CHECK_THROWS_AS(geo_logits(h, testing::random_matrix(rng, 2, 4)), ShapeError);
}

TEST_CASE("momentum update") {
  Rng rng(5);
  const EncoderConfig cfg = tiny_mlp();
  const EncoderParams query = init_encoder(cfg, rng);
  const EncoderParams key0 = init_encoder(cfg, rng);

  SUBCASE("m = 1 leaves the key unchanged") {
    EncoderParams key = key0;
    momentum_update(key, query, 1.0);
    CHECK(key == key0);
  }
  SUBCASE("m = 0 copies the query") {
    EncoderParams key = key0;
    momentum_update(key, query, 0.0);
    CHECK(key == query);
  }
  SUBCASE("scalar example") {
    EncoderParams key = zeros_like(query);
    EncoderParams q = zeros_like(query);
    for (auto& [name, m] : named_arrays(key, "")) m->setConstant(2.0);
    for (auto& [name, m] : named_arrays(q, "")) m->setConstant(4.0);
    momentum_update(key, q, 0.5);
    for (const auto& [name, m] : named_arrays(std::as_const(key), "")) CHECK(m->isConstant(3.0));
  }
  SUBCASE("fixed query: distance shrinks geometrically") {
    EncoderParams key = key0;
    const double m = 0.9;
    auto dist = [&] {
      double d = 0;
      const auto k = named_arrays(std::as_const(key), "");
      const auto q = named_arrays(query, "");
      for (std::size_t i = 0; i < k.size(); ++i) d += (*k[i].second - *q[i].second).squaredNorm();
      return std::sqrt(d);
    };
    const double d0 = dist();
    for (int step = 1; step <= 30; ++step) {
      momentum_update(key, query, m);
      CHECK(dist() == doctest::Approx(d0 * std::pow(m, step)).epsilon(1e-9));
    }
  }
  SUBCASE("errors") {
    EncoderParams key = key0;
    CHECK_THROWS_AS(momentum_update(key, query, 1.5), ConfigError);
    EncoderParams other = init_encoder(testing::small_encoder(), rng);
    CHECK_THROWS_AS(momentum_update(other, query, 0.5), ShapeError);
  }
}

TEST_CASE("encoder gradients match finite differences") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    CAPTURE(seed);
    check_encoder_gradients(tiny_mlp(), seed, true, false);
    check_encoder_gradients(tiny_mlp(), seed, false, true);
    check_encoder_gradients(tiny_mlp(), seed, true, true);
    EncoderConfig one = tiny_mlp();
    one.projection_depth = 1;
    check_encoder_gradients(one, seed, true, true);
  }
}

TEST_CASE("convolutional encoder gradients match finite differences") {
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    CAPTURE(seed);
    check_encoder_gradients(tiny_conv({6}), seed, true, true);
    check_encoder_gradients(tiny_conv({}), seed, true, false);
    check_encoder_gradients(tiny_conv({}), seed, false, true);
  }
}

TEST_CASE("parameter naming is stable and ordered") {
  Rng rng(6);
  EncoderParams p = init_encoder(tiny_conv({6}), rng);
  std::vector<std::string> names;
  for (const auto& [name, m] : named_arrays(p, "q.")) names.push_back(name);
  CHECK(names.front() == "q.conv.0.weight");
  CHECK(names.size() == 2 * (2 + 1 + 2));
}

TEST_CASE("shape and numeric errors") {
  Rng rng(7);
  const EncoderConfig cfg = tiny_mlp();
  EncoderParams p = init_encoder(cfg, rng);
  CHECK_THROWS_AS(encode(p, Matrix::Zero(2, cfg.input_dim() + 1)), ShapeError);
  CHECK_THROWS_AS(encode(p, Matrix::Zero(0, cfg.input_dim())), ShapeError);
  Matrix bad = testing::random_pixels(rng, 2, cfg.input_dim());
  bad(1, 0) = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(encode(p, bad), NumericError);
  p.backbone[0].weight(0, 0) = std::numeric_limits<double>::infinity();
  try {
    encode(p, testing::random_pixels(rng, 2, cfg.input_dim()));
    FAIL("expected a numeric error");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("backbone.0") != std::string::npos);
  }
}

TEST_CASE("configuration validation") {
  EncoderConfig cfg = tiny_mlp();
  cfg.hidden.clear();
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = tiny_mlp();
  cfg.embed_dim = 1;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = tiny_mlp();
  cfg.projection_depth = 3;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  CHECK(feature_source_from_string("backbone") == FeatureSource::Backbone);
  CHECK_THROWS_AS(feature_source_from_string("pixels"), ConfigError);
}
