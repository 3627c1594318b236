#include <doctest.h>

#include <cmath>
#include <random>

#include "cardood/error.hpp"
#include "cardood/losses.hpp"
#include "cardood/model.hpp"
#include "support.hpp"

using namespace cardood;
using namespace cardood::testing;

TEST_CASE("mse examples") {
  Matrix<double> a(1, 3), b(1, 3);
  a << 1, 2, 3;
  b << 1, 2, 3;
  CHECK(loss_mse(a, b) == 0.0);
  Matrix<double> p(1, 1), l(1, 1);
  p << std::log(10.0);
  l << std::log(100.0);
  CHECK(loss_mse(p, l) == doctest::Approx(std::log(10.0) * std::log(10.0)).epsilon(1e-12));
  CHECK(loss_mse(p, l) == doctest::Approx(5.3019).epsilon(1e-4));
  b << 4, -1, 0.5;
  CHECK(loss_mse(a, b) == loss_mse(b, a));
  CHECK_THROWS_AS(loss_mse(Matrix<double>(1, 0), Matrix<double>(1, 0)), UsageError);
}

TEST_CASE("coral examples") {
  // Columns are samples; covariances I and diag(2, 1) by construction.
  const double s = std::sqrt(2.0);
  Matrix<double> a(2, 4), b(2, 4);
  a << 1, -1, 0, 0,  //
      0, 0, 1, -1;
  a *= std::sqrt(1.5);
  b << s, -s, 0, 0,  //
      0, 0, 1, -1;
  b.row(0) *= std::sqrt(1.5);
  b.row(1) *= std::sqrt(1.5);
  REQUIRE(covariance(a).isApprox(Matrix<double>::Identity(2, 2), 1e-12));
  Matrix<double> cb(2, 2);
  cb << 2, 0, 0, 1;
  REQUIRE(covariance(b).isApprox(cb, 1e-12));
  CHECK(loss_coral(a, b) == doctest::Approx(0.0625).epsilon(1e-12));
  CHECK(loss_coral(a, b) == loss_coral(b, a));
  CHECK(loss_coral(a, a) == 0.0);
  CHECK_THROWS_AS(loss_coral(a.leftCols(1), b), UsageError);
}

TEST_CASE("cross-entropy examples") {
  Matrix<double> uniform = Matrix<double>::Constant(4, 1, 0.25);
  const std::vector<int> one{2};
  CHECK(loss_ce(uniform, one) == doctest::Approx(std::log(4.0)).epsilon(1e-12));
  CHECK(loss_ce(uniform, one) == doctest::Approx(1.3863).epsilon(1e-4));
  Matrix<double> twice(4, 2);
  twice << uniform, uniform;
  const std::vector<int> two{2, 2};
  CHECK(loss_ce(twice, two) == 2 * loss_ce(uniform, one));
  Matrix<double> onehot = Matrix<double>::Zero(3, 1);
  onehot(1, 0) = 1.0;
  const std::vector<int> hit{1}, miss{0};
  CHECK(loss_ce(onehot, hit) == 0.0);
  CHECK(std::isfinite(loss_ce(onehot, miss)));
  CHECK(loss_ce(onehot, miss) == doctest::Approx(-std::log(kCrossEntropyFloor)));
  const std::vector<int> bad{3};
  CHECK_THROWS_AS(loss_ce(onehot, bad), UsageError);
}

TEST_CASE("order examples") {
  Vector<double> q(2);
  q << 0, 0;
  Matrix<double> sub(2, 1);
  sub << 1, -3;
  CHECK(loss_order(q, sub) == 1.0);
  sub << -1, -3;
  CHECK(loss_order(q, sub) == 0.0);
  sub << 0, 0;
  CHECK(loss_order(q, sub) == 0.0);
  double prev = std::numeric_limits<double>::infinity();
  for (double v = 2.0; v > 0.0; v -= 0.25) {
    sub << v, -1;
    const double l = loss_order(q, sub);
    CHECK(l < prev);
    prev = l;
  }
}

TEST_CASE("order loss is zero exactly when every sub is dominated") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    const Matrix<double> anchor = random_matrix(4, 1, rng);
    Matrix<double> subs = random_matrix(4, 3, rng, -2, 0);
    subs.colwise() += anchor.col(0);
    CHECK(loss_order(anchor.col(0), subs) == 0.0);
    subs(trial % 4, trial % 3) = anchor(trial % 4, 0) + 0.01;
    CHECK(loss_order(anchor.col(0), subs) > 0.0);
  }
}

TEST_CASE("loss gradients match central differences") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    Matrix<double> p = random_matrix(1, 6, rng, -3, 3);
    const Matrix<double> y = random_matrix(1, 6, rng, 0, 5);
    CHECK(tensor_rel_error(loss_mse_grad(p, y), numeric_gradient([&] { return loss_mse(p, y); }, p)) <= 1e-4);

    Matrix<double> a = random_matrix(4, 5, rng);
    Matrix<double> b = random_matrix(4, 7, rng);
    const auto g = loss_coral_grad(a, b);
    CHECK(tensor_rel_error(g.a, numeric_gradient([&] { return loss_coral(a, b); }, a)) <= 1e-4);
    CHECK(tensor_rel_error(g.b, numeric_gradient([&] { return loss_coral(a, b); }, b)) <= 1e-4);

    Matrix<double> probs = random_matrix(3, 5, rng, 0.05, 1);
    const std::vector<int> labels{0, 2, 1, 1, 0};
    CHECK(tensor_rel_error(loss_ce_grad(probs, labels), numeric_gradient([&] { return loss_ce(probs, labels); }, probs)) <=
          1e-4);
    Matrix<double> logits = random_matrix(3, 5, rng, -2, 2);
    const auto ce_of_logits = [&] { return loss_ce(softmax<double>(logits), labels); };
    CHECK(tensor_rel_error(loss_ce_logit_grad(softmax<double>(logits), labels), numeric_gradient(ce_of_logits, logits)) <=
          1e-4);

    Matrix<double> anchor = random_matrix(4, 1, rng);
    Matrix<double> subs = random_matrix(4, 3, rng);
    const auto og = loss_order_grad(anchor.col(0), subs);
    const auto order = [&] { return loss_order(anchor.col(0), subs); };
    CHECK(tensor_rel_error(og.subs, numeric_gradient(order, subs)) <= 1e-4);
    CHECK(tensor_rel_error(Matrix<double>(og.anchor), numeric_gradient(order, anchor)) <= 1e-4);
  }
}
