#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "geoclr/errors.hpp"
#include "geoclr/eval.hpp"
#include "support.hpp"

using namespace geoclr;

namespace {

// Regularized softmax objective on standardized features, the quantity the
// probe minimizes.
struct Standardized {
  Matrix x;
  Eigen::RowVectorXd mean, scale;
};

Standardized standardize(const Matrix& f) {
  Standardized s;
  s.mean = f.colwise().mean();
  s.scale = ((f.rowwise() - s.mean).colwise().squaredNorm() / static_cast<double>(f.rows())).cwiseSqrt();
  s.x = (f.rowwise() - s.mean).array().rowwise() / s.scale.array();
  return s;
}

double objective(const Matrix& x, const std::vector<int>& y, const Matrix& w, const Matrix& b, double l2) {
  double loss = 0;
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const Eigen::RowVectorXd logits = x.row(r) * w + b.row(0);
    double denom = 0;
    for (Eigen::Index c = 0; c < logits.size(); ++c) denom += std::exp(logits[c]);
    loss += std::log(denom) - logits[y[static_cast<std::size_t>(r)]];
  }
  return loss / static_cast<double>(x.rows()) + 0.5 * l2 * w.squaredNorm();
}

// Plain gradient descent to a tight optimum.
double reference_minimum(const Matrix& x, const std::vector<int>& y, int k, double l2) {
  Matrix w = Matrix::Zero(x.cols(), k), b = Matrix::Zero(1, k);
  const double n = static_cast<double>(x.rows());
  for (int it = 0; it < 20000; ++it) {
    Matrix p = x * w;
    p.rowwise() += b.row(0);
    for (Eigen::Index r = 0; r < p.rows(); ++r) {
      p.row(r) = p.row(r).array().exp();
      p.row(r) /= p.row(r).sum();
      p(r, y[static_cast<std::size_t>(r)]) -= 1.0;
    }
    w -= 0.2 * (x.transpose() * p / n + l2 * w);
    b -= 0.2 * (p.colwise().sum() / n);
  }
  return objective(x, y, w, b, l2);
}

Matrix random_probs(Rng& rng, int rows, int k) {
  Matrix p(rows, k);
  for (Eigen::Index i = 0; i < p.size(); ++i) p.data()[i] = rng.uniform() + 1e-3;
  for (int r = 0; r < rows; ++r) p.row(r) /= p.row(r).sum();
  return p;
}

}  // namespace

TEST_SUITE("linear probe") {
  TEST_CASE("separable features are classified perfectly") {
    Rng rng(1);
    Matrix f(60, 3);
    std::vector<int> y;
    for (int i = 0; i < 60; ++i) {
      const int c = i % 3;
      y.push_back(c);
      for (int j = 0; j < 3; ++j) f(i, j) = (j == c ? 5.0 : 0.0) + 0.3 * rng.normal();
    }
    const ProbeResult r = train_linear_probe(f, y, 3);
    CHECK(r.train_accuracy == 1.0);
  }

  TEST_CASE("uninformative features predict the majority class") {
    const Matrix f = Matrix::Constant(10, 4, 0.7);
    const std::vector<int> y{0, 1, 1, 1, 2, 1, 1, 0, 1, 2};
    const ProbeResult r = train_linear_probe(f, y, 3);
    CHECK(r.train_accuracy == doctest::Approx(0.6));
    for (int c : argmax_rows(predict_proba(r.classifier, f))) CHECK(c == 1);
  }

  TEST_CASE("reaches the minimum of the regularized objective") {
    Rng rng(2);
    for (int trial = 0; trial < 3; ++trial) {
      const Matrix f = testing::random_matrix(rng, 40, 3, 2.0);
      std::vector<int> y;
      for (int i = 0; i < 40; ++i) y.push_back(static_cast<int>(rng.uniform_int(3)));
      const double l2 = 0.05;
      ProbeConfig cfg;
      cfg.l2 = l2;
      cfg.max_iter = 5000;
      cfg.tol = 1e-10;
      const ProbeResult r = train_linear_probe(f, y, 3, cfg);
      const Standardized s = standardize(f);
      // Undo the folding to recover the standardized-space weights.
      const Matrix w = s.scale.asDiagonal() * r.classifier.weight;
      const Matrix b = r.classifier.bias + s.mean * r.classifier.weight;
      CHECK(objective(s.x, y, w, b, l2) == doctest::Approx(reference_minimum(s.x, y, 3, l2)).epsilon(1e-7));
      CHECK(r.loss_trace.back() <= r.loss_trace.front());
    }
  }

  TEST_CASE("folded classifier equals standardize-then-classify") {
    Rng rng(3);
    const Matrix f = testing::random_matrix(rng, 30, 5, 3.0);
    std::vector<int> y;
    for (int i = 0; i < 30; ++i) y.push_back(i % 4);
    const ProbeResult r = train_linear_probe(f, y, 4);
    const Standardized s = standardize(f);
    const Matrix w = s.scale.asDiagonal() * r.classifier.weight;
    const Matrix b = r.classifier.bias + s.mean * r.classifier.weight;
    Matrix direct = s.x * w;
    direct.rowwise() += b.row(0);
    Matrix folded = f * r.classifier.weight;
    folded.rowwise() += r.classifier.bias.row(0);
    CHECK((direct - folded).cwiseAbs().maxCoeff() < 1e-9);
  }

  TEST_CASE("input errors") {
    CHECK_THROWS_AS(train_linear_probe(Matrix::Zero(3, 2), {0, 0, 0}, 2), ValidationError);
    CHECK_THROWS_AS(train_linear_probe(Matrix::Zero(3, 2), {0, 1}, 2), ShapeError);
    CHECK_THROWS_AS(train_linear_probe(Matrix::Zero(2, 2), {0, 2}, 2), ValidationError);
  }
}

TEST_SUITE("temporal aggregation") {
  TEST_CASE("two views of one area") {
    Matrix p(2, 2);
    p << 0.6, 0.4, 0.2, 0.8;
    const TemporalPrediction t = classify_temporal(p, {0, 0}, 1);
    CHECK(t.predicted == std::vector<int>{1});
    CHECK(t.mean_probs(0, 0) == doctest::Approx(0.4));
    CHECK(t.mean_probs(0, 1) == doctest::Approx(0.6));
  }

  TEST_CASE("the two rules can disagree") {
    Matrix p(3, 2);
    p << 0.6, 0.4, 0.6, 0.4, 0.35, 0.65;
    CHECK(classify_temporal(p, {0, 0, 0}, 1, TemporalRule::MeanArgmax).predicted == std::vector<int>{0});
    CHECK(classify_temporal(p, {0, 0, 0}, 1, TemporalRule::MaxConfidence).predicted == std::vector<int>{1});
  }

  TEST_CASE("single-view areas keep their own prediction") {
    Rng rng(4);
    const Matrix p = random_probs(rng, 5, 4);
    const TemporalPrediction t = classify_temporal(p, {0, 1, 2, 3, 4}, 5);
    CHECK(t.predicted == argmax_rows(p));
  }

  TEST_CASE("matches a direct grouping") {
    Rng rng(5);
    for (int trial = 0; trial < 50; ++trial) {
      const int areas = 1 + static_cast<int>(rng.uniform_int(6));
      const int k = 2 + static_cast<int>(rng.uniform_int(5));
      std::vector<int> idx;
      for (int a = 0; a < areas; ++a)
        for (std::size_t v = 0; v <= rng.uniform_int(4); ++v) idx.push_back(a);
      const Matrix p = random_probs(rng, static_cast<int>(idx.size()), k);
      const TemporalPrediction mean = classify_temporal(p, idx, areas, TemporalRule::MeanArgmax);
      const TemporalPrediction conf = classify_temporal(p, idx, areas, TemporalRule::MaxConfidence);
      for (int a = 0; a < areas; ++a) {
        std::vector<double> sum(k, 0.0);
        double best = -1;
        int best_class = -1;
        for (std::size_t r = 0; r < idx.size(); ++r) {
          if (idx[r] != a) continue;
          for (int c = 0; c < k; ++c) {
            sum[c] += p(static_cast<Eigen::Index>(r), c);
            if (p(static_cast<Eigen::Index>(r), c) > best) {
              best = p(static_cast<Eigen::Index>(r), c);
              best_class = c;
            }
          }
        }
        CHECK(mean.predicted[a] == std::max_element(sum.begin(), sum.end()) - sum.begin());
        CHECK(conf.predicted[a] == best_class);
      }
    }
  }

  TEST_CASE("invalid distributions and indices are rejected") {
    Matrix p(1, 2);
    p << 0.7, 0.7;
    CHECK_THROWS_AS(classify_temporal(p, {0}, 1), ValidationError);
    p << -0.1, 1.1;
    CHECK_THROWS_AS(classify_temporal(p, {0}, 1), ValidationError);
    p << 0.5, 0.5;
    CHECK_THROWS_AS(classify_temporal(p, {1}, 1), ValidationError);
    CHECK_THROWS_AS(classify_temporal(p, {0}, 2), ValidationError);  // area 1 has no views
  }
}

TEST_SUITE("metrics") {
  TEST_CASE("worked macro-F1") {
    Matrix p(4, 2);
    p << 0.9, 0.1, 0.8, 0.2, 0.7, 0.3, 0.6, 0.4;
    const EvalReport r = metrics(p, {0, 0, 1, 1}, 2);
    CHECK(r.top1 == doctest::Approx(0.5));
    CHECK(r.macro_f1 == doctest::Approx(1.0 / 3.0));
    CHECK(r.per_class.at(0).accuracy == 1.0);
    CHECK(r.per_class.at(1).accuracy == 0.0);
  }

  TEST_CASE("top-5 is at least top-1 and reaches 1 with five classes or fewer") {
    Rng rng(6);
    for (int k : {3, 5, 8, 12}) {
      const Matrix p = random_probs(rng, 50, k);
      std::vector<int> y;
      for (int i = 0; i < 50; ++i) y.push_back(static_cast<int>(rng.uniform_int(static_cast<std::size_t>(k))));
      const EvalReport r = metrics(p, y, k);
      CHECK(r.top5 >= r.top1);
      if (k <= 5) CHECK(r.top5 == 1.0);
      CHECK(r.macro_f1 >= 0.0);
      CHECK(r.macro_f1 <= 1.0);
    }
  }

  TEST_CASE("serialization includes top-5 only with more than five classes") {
    Rng rng(7);
    const EvalReport four = metrics(random_probs(rng, 4, 4), {0, 1, 2, 3}, 4);
    const EvalReport eight = metrics(random_probs(rng, 4, 8), {0, 1, 2, 3}, 8);
    CHECK_FALSE(to_json(four).contains("top5"));
    CHECK(to_json(eight).contains("top5"));
    const std::string csv = per_class_csv(four, four);
    CHECK(csv.rfind("class,single_accuracy,temporal_accuracy\n", 0) == 0);
  }
}

TEST_SUITE("features and finetuning") {
  const DatasetManifest& data() {
    static const DatasetManifest m = generate_synthetic(testing::small_spec(40), 3);
    return m;
  }

  EncoderParams encoder(std::uint64_t seed = 1) {
    Rng rng(seed);
    return init_encoder(testing::small_encoder(), rng);
  }

  TEST_CASE("feature extraction is deterministic and grouped by area") {
    const EncoderParams e = encoder();
    const FeatureSet a = extract_features(e, data());
    const FeatureSet b = extract_features(e, data(), FeatureSource::Backbone, 7);
    CHECK((a.features - b.features).cwiseAbs().maxCoeff() < 1e-12);
    CHECK(a.features.rows() == static_cast<Eigen::Index>(data().sample_count()));
    CHECK(a.features.cols() == 12);
    CHECK(extract_features(e, data(), FeatureSource::Projection).features.cols() == 8);
    std::size_t row = 0;
    for (std::size_t i = 0; i < data().areas.size(); ++i) {
      CHECK(a.area_labels[i] == *data().areas[i].label);
      for (std::size_t v = 0; v < data().areas[i].num_views(); ++v, ++row) {
        CHECK(a.area_index[row] == static_cast<int>(i));
        CHECK(a.labels[row] == *data().areas[i].label);
      }
    }
  }

  TEST_CASE("duplicate images give duplicate feature rows") {
    DatasetManifest m = data();
    m.areas[0].views[1].image = m.areas[0].views[0].image;
    const FeatureSet f = extract_features(encoder(), m);
    CHECK(f.features.row(1) == f.features.row(0));
  }

  TEST_CASE("zero finetune epochs reproduce the probe") {
    FinetuneConfig cfg;
    cfg.epochs = 0;
    const FinetuneResult r = finetune(encoder(), data(), 4, cfg);
    const FeatureSet f = extract_features(encoder(), data());
    const ProbeResult probe = train_linear_probe(f.features, f.labels, 4, cfg.probe);
    CHECK(r.classifier == probe.classifier);
    CHECK(r.encoder == encoder());
    CHECK(r.epoch_losses.empty());
  }

  TEST_CASE("finetuning lowers the training loss") {
    FinetuneConfig cfg;
    cfg.epochs = 8;
    cfg.batch_size = 16;
    const FinetuneResult r = finetune(encoder(), data(), 4, cfg);
    REQUIRE(r.epoch_losses.size() == 8);
    CHECK(r.epoch_losses.back() < r.epoch_losses.front());
    CHECK(r.initial_classifier == finetune(encoder(), data(), 4, FinetuneConfig{0}).classifier);
  }

  TEST_CASE("evaluation reports both granularities") {
    const FeatureSet f = extract_features(encoder(), data());
    const ProbeResult probe = train_linear_probe(f.features, f.labels, 4);
    const Evaluation e = evaluate(encoder(), probe.classifier, data(), FeatureSource::Backbone, true, "frozen-probe");
    REQUIRE(e.temporal);
    CHECK(e.single.n == static_cast<int>(data().sample_count()));
    CHECK(e.temporal->n == 40);
    CHECK(e.single.top1 == doctest::Approx(probe.train_accuracy));
    const auto doc = to_json(e);
    CHECK(doc["single"]["granularity"] == "single");
    CHECK(doc["temporal"]["granularity"] == "temporal");
  }
}
