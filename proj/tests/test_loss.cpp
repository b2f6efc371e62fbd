#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <numeric>

#include "geoclr/errors.hpp"
#include "geoclr/loss.hpp"
#include "support.hpp"

using namespace geoclr;

namespace {

// Direct, unstabilized evaluation for moderate inputs.
double naive_info_nce(const Matrix& z, const Matrix& z_pos, const Matrix& neg, double t) {
  double total = 0;
  for (Eigen::Index r = 0; r < z.rows(); ++r) {
    const double pos = std::exp(z.row(r).dot(z_pos.row(r)) / t);
    double denom = pos;
    for (Eigen::Index j = 0; j < neg.rows(); ++j) denom += std::exp(z.row(r).dot(neg.row(j)) / t);
    total += -std::log(pos / denom);
  }
  return total / static_cast<double>(z.rows());
}

EncoderConfig tiny_encoder() {
  EncoderConfig cfg;
  cfg.geometry = {2, 2, 2};
  cfg.hidden = {10, 8};
  cfg.embed_dim = 4;
  return cfg;
}

struct Fixture {
  MoCoState state;
  PretrainBatch batch;
};

Fixture make_fixture(std::uint64_t seed, int queue_fill, int k, int batch = 5) {
  Rng rng(seed);
  const EncoderConfig cfg = tiny_encoder();
  Fixture f;
  f.state.query = init_encoder(cfg, rng);
  f.state.key = init_encoder(cfg, rng);
  f.state.head = init_linear(cfg.embed_dim, k, rng);
  f.state.head->bias = testing::random_matrix(rng, 1, k, 0.1);
  f.state.queue = NegativeQueue(16, cfg.embed_dim);
  if (queue_fill > 0) f.state.queue.enqueue_batch(testing::random_unit_rows(rng, queue_fill, cfg.embed_dim));
  f.batch.query = testing::random_pixels(rng, batch, cfg.input_dim());
  f.batch.key = testing::random_pixels(rng, batch, cfg.input_dim());
  for (int i = 0; i < batch; ++i) f.batch.labels.push_back(static_cast<int>(rng.uniform_int(k)));
  return f;
}

Objective objective_for(bool contrastive, bool head, FeatureSource source, double alpha, double beta, int k) {
  Objective o;
  o.contrastive = contrastive;
  o.head = head;
  o.head_input = source;
  o.loss.alpha = alpha;
  o.loss.beta = beta;
  o.loss.k = k;
  o.loss.temperature = 0.5;
  return o;
}

Linear head_for_width(int width, int k, std::uint64_t seed) {
  Rng rng(seed);
  Linear h = init_linear(width, k, rng);
  h.bias = testing::random_matrix(rng, 1, k, 0.1);
  return h;
}

}  // namespace

TEST_SUITE("info_nce") {
  TEST_CASE("all similarities equal: loss is ln(1 + J)") {
    Rng rng(1);
    for (int j : {1, 3, 10, 64}) {
      const Matrix z = testing::random_unit_rows(rng, 1, 8);
      Matrix neg(j, 8);
      neg.rowwise() = z.row(0);
      const SampleLosses l = info_nce(z, z, neg, 0.2);
      CHECK(l.mean == doctest::Approx(std::log(1.0 + j)).epsilon(1e-12));
    }
  }

  TEST_CASE("orthogonal negatives, unit positive") {
    const Matrix z = Matrix::Identity(1, 4);
    Matrix neg = Matrix::Zero(1, 4);
    neg(0, 1) = 1.0;
    const SampleLosses l = info_nce(z, z, neg, 0.2);
    CHECK(l.mean == doctest::Approx(std::log1p(std::exp(-5.0))).epsilon(1e-12));
    CHECK(l.mean == doctest::Approx(0.0067153).epsilon(1e-4));
  }

  TEST_CASE("tiny temperature stays finite") {
    Rng rng(2);
    const Matrix z = testing::random_unit_rows(rng, 6, 5);
    const Matrix pos = testing::random_unit_rows(rng, 6, 5);
    const Matrix neg = testing::random_unit_rows(rng, 7, 5);
    const SampleLosses l = info_nce(z, pos, neg, 1e-4);
    CHECK(std::isfinite(l.mean));
    CHECK(l.grad.allFinite());
    // With equal similarities the loss is ln 8 at any temperature.
    Matrix same(7, 5);
    same.rowwise() = z.row(0);
    CHECK(info_nce(z.topRows(1), z.topRows(1), same, 1e-4).mean == doctest::Approx(std::log(8.0)));
  }

  TEST_CASE("matches the direct formula") {
    Rng rng(3);
    for (int trial = 0; trial < 20; ++trial) {
      const Matrix z = testing::random_unit_rows(rng, 4, 6);
      const Matrix pos = testing::random_unit_rows(rng, 4, 6);
      const Matrix neg = testing::random_unit_rows(rng, 9, 6);
      CHECK(info_nce(z, pos, neg, 0.3).mean == doctest::Approx(naive_info_nce(z, pos, neg, 0.3)).epsilon(1e-12));
    }
  }

  TEST_CASE("invariant to negative order, grows with an added negative") {
    Rng rng(4);
    for (int trial = 0; trial < 20; ++trial) {
      const Matrix z = testing::random_unit_rows(rng, 3, 5);
      const Matrix pos = testing::random_unit_rows(rng, 3, 5);
      const Matrix neg = testing::random_unit_rows(rng, 6, 5);
      const double base = info_nce(z, pos, neg, 0.2).mean;
      const Matrix reversed = neg.colwise().reverse();
      CHECK(info_nce(z, pos, reversed, 0.2).mean == doctest::Approx(base).epsilon(1e-12));
      Matrix more(7, 5);
      more << neg, testing::random_unit_rows(rng, 1, 5);
      CHECK(info_nce(z, pos, more, 0.2).mean > base);
    }
  }

  TEST_CASE("decreases as the positive moves closer") {
    const Matrix z = Matrix::Identity(1, 3);
    Matrix neg = Matrix::Zero(2, 3);
    neg(0, 1) = 1.0;
    neg(1, 2) = 1.0;
    double prev = std::numeric_limits<double>::infinity();
    for (double angle = 3.0; angle >= 0.0; angle -= 0.25) {
      Matrix pos(1, 3);
      pos << std::cos(angle), std::sin(angle) * 0.6, std::sin(angle) * 0.8;
      const double l = info_nce(z, pos, neg, 0.2).mean;
      CHECK(l < prev);
      prev = l;
    }
  }

  TEST_CASE("gradient w.r.t. the query matches finite differences") {
    Rng rng(5);
    for (int trial = 0; trial < 20; ++trial) {
      Matrix z = testing::random_matrix(rng, 3, 4);
      const Matrix pos = testing::random_unit_rows(rng, 3, 4);
      const Matrix neg = testing::random_unit_rows(rng, 5, 4);
      const SampleLosses l = info_nce(z, pos, neg, 0.3);
      CHECK(testing::max_fd_error(z, l.grad, [&] { return info_nce(z, pos, neg, 0.3).mean; }) < 1e-6);
    }
  }

  TEST_CASE("input errors") {
    Rng rng(6);
    const Matrix z = testing::random_unit_rows(rng, 2, 3);
    CHECK_THROWS_AS(info_nce(z, z, Matrix(0, 3), 0.2), ShapeError);
    CHECK_THROWS_AS(info_nce(z, z, testing::random_unit_rows(rng, 2, 4), 0.2), ShapeError);
    CHECK_THROWS_AS(info_nce(z, z, z, 0.0), ConfigError);
  }
}

TEST_SUITE("geo cross-entropy") {
  TEST_CASE("uniform logits give ln K") {
    CHECK(geo_cross_entropy(Matrix::Zero(3, 100), {0, 50, 99}).mean == doctest::Approx(4.60517).epsilon(1e-6));
    CHECK(geo_cross_entropy(Matrix::Constant(1, 8, 1e4), {5}).mean == doctest::Approx(std::log(8.0)));
  }

  TEST_CASE("worked example") {
    Matrix logits(1, 3);
    logits << 2.0, 1.0, 0.1;
    const double expected = std::log(std::exp(2.0) + std::exp(1.0) + std::exp(0.1)) - 2.0;
    CHECK(geo_cross_entropy(logits, {0}).mean == doctest::Approx(expected).epsilon(1e-12));
    CHECK(expected == doctest::Approx(0.41703).epsilon(1e-4));
  }

  TEST_CASE("adding a constant to a row changes nothing") {
    Rng rng(7);
    const Matrix logits = testing::random_matrix(rng, 4, 6, 3.0);
    Matrix shifted = logits;
    shifted.array() += 123.0;
    const std::vector<int> labels{0, 5, 2, 2};
    CHECK(geo_cross_entropy(shifted, labels).mean == doctest::Approx(geo_cross_entropy(logits, labels).mean));
  }

  TEST_CASE("gradient matches finite differences") {
    Rng rng(8);
    for (int trial = 0; trial < 20; ++trial) {
      Matrix logits = testing::random_matrix(rng, 5, 7, 2.0);
      std::vector<int> labels;
      for (int i = 0; i < 5; ++i) labels.push_back(static_cast<int>(rng.uniform_int(7)));
      const SampleLosses l = geo_cross_entropy(logits, labels);
      CHECK(testing::max_fd_error(logits, l.grad, [&] { return geo_cross_entropy(logits, labels).mean; }) < 1e-6);
    }
  }

  TEST_CASE("labels outside the range are rejected") {
    CHECK_THROWS_AS(geo_cross_entropy(Matrix::Zero(1, 4), {4}), ValidationError);
    CHECK_THROWS_AS(geo_cross_entropy(Matrix::Zero(1, 4), {-1}), ValidationError);
    CHECK_THROWS_AS(geo_cross_entropy(Matrix::Zero(2, 4), {1}), ShapeError);
  }
}

TEST_SUITE("combined objective") {
  TEST_CASE("linear in the weights") {
    CHECK(combined_loss(2.0, 3.0, 1.0, 1.0) == 5.0);
    CHECK(combined_loss(2.0, 3.0, 0.5, 2.0) == 7.0);
    CHECK(combined_loss(2.0, 3.0, 1.0, 0.0) == 2.0);
    CHECK_THROWS_AS(combined_loss(NAN, 1.0, 1.0, 1.0), NumericError);
  }

  TEST_CASE("total equals the weighted sum of the parts") {
    Fixture f = make_fixture(1, 8, 3);
    const LossGradients g = loss_gradients(f.state, f.batch, objective_for(true, true, FeatureSource::Projection, 0.7, 1.9, 3));
    CHECK(g.total == doctest::Approx(0.7 * g.contrastive + 1.9 * g.geo).epsilon(1e-12));
    CHECK(g.negatives == 8);
    CHECK(g.contrastive > 0.0);
    CHECK(g.geo > 0.0);
  }

  TEST_CASE("beta = 0 gives a zero head gradient") {
    Fixture f = make_fixture(2, 8, 3);
    const LossGradients g = loss_gradients(f.state, f.batch, objective_for(true, true, FeatureSource::Projection, 1.0, 0.0, 3));
    REQUIRE(g.grad_head);
    CHECK(g.grad_head->weight.isZero(0.0));
    CHECK(g.grad_head->bias.isZero(0.0));
  }

  TEST_CASE("a duplicated batch gives the same mean gradient") {
    Fixture f = make_fixture(3, 8, 3, 4);
    const Objective o = objective_for(true, true, FeatureSource::Projection, 1.0, 1.0, 3);
    const LossGradients single = loss_gradients(f.state, f.batch, o);
    PretrainBatch doubled;
    doubled.query.resize(8, f.batch.query.cols());
    doubled.query << f.batch.query, f.batch.query;
    doubled.key.resize(8, f.batch.key.cols());
    doubled.key << f.batch.key, f.batch.key;
    doubled.labels = f.batch.labels;
    doubled.labels.insert(doubled.labels.end(), f.batch.labels.begin(), f.batch.labels.end());
    const LossGradients twice = loss_gradients(f.state, doubled, o);
    CHECK(twice.total == doctest::Approx(single.total).epsilon(1e-12));
    const auto a = named_arrays(single.grad_query, "");
    const auto b = named_arrays(twice.grad_query, "");
    for (std::size_t i = 0; i < a.size(); ++i) CHECK((*a[i].second - *b[i].second).cwiseAbs().maxCoeff() < 1e-12);
  }

  TEST_CASE("empty queue skips the contrastive term") {
    Fixture f = make_fixture(4, 0, 3);
    const LossGradients only = loss_gradients(f.state, f.batch, objective_for(true, false, FeatureSource::Projection, 1.0, 1.0, 3));
    CHECK(only.contrastive == 0.0);
    CHECK(only.negatives == 0);
    CHECK(only.total == 0.0);
    CHECK(only.keys.rows() == f.batch.key.rows());
    for (const auto& [name, m] : named_arrays(std::as_const(only.grad_query), "")) CHECK(m->isZero(0.0));
  }

  TEST_CASE("keys come from the key encoder and are unit norm") {
    Fixture f = make_fixture(5, 4, 3);
    const LossGradients g = loss_gradients(f.state, f.batch, objective_for(true, false, FeatureSource::Projection, 1.0, 1.0, 3));
    CHECK((g.keys - encode(f.state.key, f.batch.key)).cwiseAbs().maxCoeff() == 0.0);
  }

  TEST_CASE("exact gradients for every objective") {
    struct Case {
      bool contrastive, head;
      FeatureSource source;
      double alpha, beta;
    };
    const std::vector<Case> cases{
        {true, false, FeatureSource::Projection, 1.0, 1.0},  // contrastive only
        {true, true, FeatureSource::Projection, 0.8, 1.3},   // contrastive + head on z
        {true, true, FeatureSource::Backbone, 1.0, 0.6},     // contrastive + head on features
        {false, true, FeatureSource::Projection, 1.0, 1.0},  // head only on z
        {false, true, FeatureSource::Backbone, 1.0, 1.0},    // head only on features
    };
    const int k = 3;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      for (std::size_t ci = 0; ci < cases.size(); ++ci) {
        const Case& c = cases[ci];
        CAPTURE(seed);
        CAPTURE(ci);
        Fixture f = make_fixture(100 + seed, 6, k);
        const int width = tiny_encoder().width(c.source);
        f.state.head = head_for_width(width, k, seed);
        const Objective o = objective_for(c.contrastive, c.head, c.source, c.alpha, c.beta, k);
        const LossGradients g = loss_gradients(f.state, f.batch, o);
        auto total = [&] { return loss_gradients(f.state, f.batch, o).total; };
        auto params = named_arrays(f.state.query, "");
        const auto grads = named_arrays(g.grad_query, "");
        for (std::size_t i = 0; i < params.size(); ++i) {
          CAPTURE(params[i].first);
          CHECK(testing::max_fd_error(*params[i].second, *grads[i].second, total) < 1e-5);
        }
        if (c.head) {
          REQUIRE(g.grad_head);
          CHECK(testing::max_fd_error(f.state.head->weight, g.grad_head->weight, total) < 1e-6);
          CHECK(testing::max_fd_error(f.state.head->bias, g.grad_head->bias, total) < 1e-6);
        }
      }
    }
  }

  TEST_CASE("config validation") {
    LossConfig cfg;
    cfg.temperature = 0.0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = LossConfig{};
    cfg.alpha = cfg.beta = 0.0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = LossConfig{};
    cfg.alpha = -1.0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
  }
}
