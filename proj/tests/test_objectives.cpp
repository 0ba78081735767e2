#include <doctest.h>

#include <cmath>
#include <random>

#include "platediff/errors.hpp"
#include "platediff/objectives.hpp"

using namespace platediff;

namespace {

// Direct transcription of the symmetric InfoNCE definition, independent of
// the library implementation: unit rows, cosine logits over temperature,
// cross-entropy against the diagonal in both retrieval directions.
double info_nce_by_hand(const Mat& za, const Mat& zb, double tau) {
  const Index b = za.rows();
  Mat ua = za, ub = zb;
  for (Index i = 0; i < b; ++i) {
    ua.row(i) /= ua.row(i).norm();
    ub.row(i) /= ub.row(i).norm();
  }
  double loss = 0.0;
  for (Index i = 0; i < b; ++i) {
    double den_ab = 0.0, den_ba = 0.0;
    for (Index j = 0; j < b; ++j) {
      den_ab += std::exp(ua.row(i).dot(ub.row(j)) / tau);
      den_ba += std::exp(ub.row(i).dot(ua.row(j)) / tau);
    }
    const double match = std::exp(ua.row(i).dot(ub.row(i)) / tau);
    loss += -std::log(match / den_ab) - std::log(match / den_ba);
  }
  return loss / (2.0 * static_cast<double>(b));
}

Mat random_mat(Index r, Index c, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist(0.0, 1.0);
  Mat m(r, c);
  for (Index i = 0; i < r; ++i)
    for (Index j = 0; j < c; ++j) m(i, j) = dist(rng);
  return m;
}

}  // namespace

TEST_CASE("l1 loss averages absolute residuals") {
  Vec pred(2), target(2);
  pred << 5.0, 0.0;
  target << 3.0, 4.0;  // residuals +2 and -4
  CHECK(l1_loss(pred, target) == doctest::Approx(3.0));

  const Vec g = l1_loss_grad(pred, target);
  CHECK(g[0] == doctest::Approx(0.5));
  CHECK(g[1] == doctest::Approx(-0.5));
}

TEST_CASE("l1 subgradient at the kink is zero") {
  Vec pred(3), target(3);
  pred << 1.0, 2.0, 3.0;
  target << 1.0, 5.0, 3.0;
  const Vec g = l1_loss_grad(pred, target);
  CHECK(g[0] == 0.0);
  CHECK(g[1] == doctest::Approx(-1.0 / 3.0));
  CHECK(g[2] == 0.0);
}

TEST_CASE("l1 loss rejects empty and mismatched batches") {
  CHECK_THROWS_AS(l1_loss(Vec(), Vec()), EmptyBatch);
  CHECK_THROWS_AS(l1_loss(Vec::Ones(2), Vec::Ones(3)), ShapeMismatch);
}

TEST_CASE("InfoNCE with indistinguishable pairs gives ln B") {
  // Identical embeddings make every logit equal, so each softmax row is
  // uniform and the loss is exactly ln(B).
  Mat z(2, 3);
  z << 1.0, 0.0, 0.0, 1.0, 0.0, 0.0;
  CHECK(info_nce(z, z, 0.07) == doctest::Approx(std::log(2.0)));

  Mat z4(4, 2);
  z4 << 2.0, 2.0, 2.0, 2.0, 2.0, 2.0, 2.0, 2.0;
  CHECK(info_nce(z4, z4, 0.5) == doctest::Approx(std::log(4.0)));
}

TEST_CASE("InfoNCE with a single pair is zero") {
  Mat za(1, 4), zb(1, 4);
  za << 1.0, 2.0, 3.0, 4.0;
  zb << -1.0, 0.5, 0.0, 2.0;
  CHECK(info_nce(za, zb, 0.07) == doctest::Approx(0.0));
}

TEST_CASE("InfoNCE on well-separated orthogonal pairs is near zero") {
  // Analytically ln(1 + 2 exp(-1/tau)) ~ 1.25e-6 at tau = 0.07.
  const Mat eye = Mat::Identity(3, 3);
  CHECK(info_nce(eye, eye, 0.07) < 1e-5);
  CHECK(info_nce(eye, eye, 0.07) > 0.0);  // cross terms keep it positive
  CHECK(info_nce(eye, eye, 0.07) ==
        doctest::Approx(std::log(1.0 + 2.0 * std::exp(-1.0 / 0.07))).epsilon(1e-9));
}

TEST_CASE("InfoNCE matches a direct transcription on random batches") {
  for (std::uint64_t seed : {11u, 12u, 13u}) {
    const Mat za = random_mat(5, 7, seed);
    const Mat zb = random_mat(5, 7, seed + 100);
    for (double tau : {0.07, 0.5, 2.0}) {
      CHECK(info_nce(za, zb, tau) ==
            doctest::Approx(info_nce_by_hand(za, zb, tau)).epsilon(1e-10));
    }
  }
}

TEST_CASE("InfoNCE is symmetric in its arguments") {
  const Mat za = random_mat(4, 6, 21);
  const Mat zb = random_mat(4, 6, 22);
  CHECK(info_nce(za, zb, 0.07) == doctest::Approx(info_nce(zb, za, 0.07)).epsilon(1e-12));
}

TEST_CASE("InfoNCE is invariant to per-row scaling") {
  const Mat za = random_mat(4, 6, 31);
  const Mat zb = random_mat(4, 6, 32);
  Mat za_scaled = za;
  for (Index i = 0; i < za_scaled.rows(); ++i) za_scaled.row(i) *= 0.5 + i;
  CHECK(info_nce(za_scaled, zb, 0.1) == doctest::Approx(info_nce(za, zb, 0.1)).epsilon(1e-12));
}

TEST_CASE("InfoNCE gradients match central finite differences") {
  const double tau = 0.2;
  Mat za = random_mat(3, 4, 41);
  Mat zb = random_mat(3, 4, 42);
  const InfoNceResult res = info_nce_with_grad(za, zb, tau);
  const double eps = 1e-6;

  auto check_grad = [&](Mat& z, const Mat& analytic) {
    for (Index i = 0; i < z.rows(); ++i) {
      for (Index j = 0; j < z.cols(); ++j) {
        const double keep = z(i, j);
        z(i, j) = keep + eps;
        const double up = info_nce(za, zb, tau);
        z(i, j) = keep - eps;
        const double down = info_nce(za, zb, tau);
        z(i, j) = keep;
        const double fd = (up - down) / (2.0 * eps);
        CHECK(analytic(i, j) == doctest::Approx(fd).epsilon(1e-5));
      }
    }
  };
  check_grad(za, res.dza);
  check_grad(zb, res.dzb);
}

TEST_CASE("InfoNCE rejects degenerate input") {
  Mat za = Mat::Ones(2, 3);
  Mat zb = Mat::Ones(2, 3);
  zb.row(1).setZero();
  CHECK_THROWS_AS(info_nce(za, zb, 0.07), DegenerateInput);
  CHECK_THROWS_AS(info_nce(Mat::Ones(2, 3), Mat::Ones(3, 3), 0.07), ShapeMismatch);
  CHECK_THROWS_AS(info_nce(Mat(), Mat(), 0.07), EmptyBatch);
  CHECK_THROWS_AS(info_nce(za, za, 0.0), ValidationError);
}

TEST_CASE("total loss combines the terms with the configured weights") {
  LossWeights w;  // defaults: reg 1.0, contrastive 0.2
  const LossBreakdown b = total_loss(3.0, 5.0, w);
  CHECK(b.reg == doctest::Approx(3.0));
  CHECK(b.contrastive == doctest::Approx(5.0));
  CHECK(b.total == doctest::Approx(1.0 * 3.0 + 0.2 * 5.0));
}

TEST_CASE("loss weight validation") {
  LossWeights w;
  CHECK_NOTHROW(validate(w));
  w.lambda_reg = -1.0;
  CHECK_THROWS_AS(validate(w), ValidationError);
  w.lambda_reg = 0.0;
  w.lambda_cont = 0.0;
  CHECK_THROWS_AS(validate(w), ValidationError);
  w.lambda_cont = 0.2;
  w.temperature = 0.0;
  CHECK_THROWS_AS(validate(w), ValidationError);
}
