#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "airway/autodiff.hpp"
#include "helpers.hpp"

using namespace airway;
using ad::Tape;
using ad::Var;
using testutil::GradMap;

namespace {

MatrixXd away_from_zero(MatrixXd m, double margin = 0.07) {
  return m.unaryExpr(
      [=](double x) { return x >= 0.0 ? x + margin : x - margin; });
}

}  // namespace

TEST_CASE("matmul gradients, all supported transpose modes") {
  Rng rng(21, 0, "matmul");
  MatrixXd A = testutil::random_matrix(4, 3, rng);
  MatrixXd B = testutil::random_matrix(3, 5, rng);
  const MatrixXd C = testutil::random_matrix(4, 5, rng);
  auto run = [&](GradMap* g) {
    Tape<double> t;
    Var<double> out = t.matmul(t.param(A, "a"), t.param(B, "b"));
    Var<double> s = t.weighted_sum_all(out, C);
    if (g) {
      t.backward(s);
      testutil::collect_grads(t, g);
    }
    return t.val(s)(0, 0);
  };
  CHECK(testutil::max_grad_rel_err({{"a", &A}, {"b", &B}}, run) < 1e-6);

  MatrixXd At = testutil::random_matrix(3, 4, rng);
  auto run_t = [&](GradMap* g) {
    Tape<double> t;
    Var<double> out = t.matmul(t.param(At, "a"), t.param(B, "b"), true, false);
    Var<double> s = t.weighted_sum_all(out, C);
    if (g) {
      t.backward(s);
      testutil::collect_grads(t, g);
    }
    return t.val(s)(0, 0);
  };
  CHECK(testutil::max_grad_rel_err({{"a", &At}, {"b", &B}}, run_t) < 1e-6);

  MatrixXd Bt = testutil::random_matrix(5, 3, rng);
  auto run_bt = [&](GradMap* g) {
    Tape<double> t;
    Var<double> out = t.matmul(t.param(A, "a"), t.param(Bt, "b"), false, true);
    Var<double> s = t.weighted_sum_all(out, C);
    if (g) {
      t.backward(s);
      testutil::collect_grads(t, g);
    }
    return t.val(s)(0, 0);
  };
  CHECK(testutil::max_grad_rel_err({{"a", &A}, {"b", &Bt}}, run_bt) < 1e-6);
}

TEST_CASE("elementwise op gradients") {
  Rng rng(22, 0, "elementwise");
  MatrixXd A = away_from_zero(testutil::random_matrix(5, 4, rng));
  MatrixXd B = testutil::random_matrix(5, 4, rng);
  const MatrixXd C = testutil::random_matrix(5, 4, rng);
  const MatrixXd K = testutil::random_matrix(5, 4, rng);
  auto run = [&](GradMap* g) {
    Tape<double> t;
    Var<double> a = t.param(A, "a");
    Var<double> b = t.param(B, "b");
    Var<double> expr = t.add(t.cmul(t.relu(a), t.sigmoid(b)),
                             t.sub(t.affine(a, 0.5, -0.25), t.cmul_const(b, K)));
    Var<double> s = t.weighted_sum_all(expr, C);
    if (g) {
      t.backward(s);
      testutil::collect_grads(t, g);
    }
    return t.val(s)(0, 0);
  };
  CHECK(testutil::max_grad_rel_err({{"a", &A}, {"b", &B}}, run) < 1e-5);
}

TEST_CASE("pow and reciprocal gradients on positive inputs") {
  Rng rng(23, 0, "pow");
  MatrixXd A = testutil::random_matrix(4, 4, rng).array().abs().matrix();
  A.array() += 0.3;
  const MatrixXd C = testutil::random_matrix(4, 4, rng);
  auto run = [&](GradMap* g) {
    Tape<double> t;
    Var<double> a = t.param(A, "a");
    Var<double> s =
        t.weighted_sum_all(t.add(t.pow_elem(a, 1.7), t.recip_elem(a)), C);
    if (g) {
      t.backward(s);
      testutil::collect_grads(t, g);
    }
    return t.val(s)(0, 0);
  };
  CHECK(testutil::max_grad_rel_err({{"a", &A}}, run) < 1e-5);
}

TEST_CASE("softmax rows sum to one and gradients check out") {
  Rng rng(24, 0, "softmax");
  MatrixXd A = testutil::random_matrix(6, 5, rng, 3.0);
  const MatrixXd C = testutil::random_matrix(6, 5, rng);
  Tape<double> t0;
  const MatrixXd y = t0.val(t0.softmax_rows(t0.constant(A)));
  for (int i = 0; i < y.rows(); ++i)
    CHECK(y.row(i).sum() == doctest::Approx(1.0).epsilon(1e-12));
  auto run = [&](GradMap* g) {
    Tape<double> t;
    Var<double> s = t.weighted_sum_all(t.softmax_rows(t.param(A, "a")), C);
    if (g) {
      t.backward(s);
      testutil::collect_grads(t, g);
    }
    return t.val(s)(0, 0);
  };
  CHECK(testutil::max_grad_rel_err({{"a", &A}}, run) < 1e-5);
}

TEST_CASE("layer norm gradients for input, gain and offset") {
  Rng rng(25, 0, "layernorm");
  MatrixXd X = testutil::random_matrix(5, 6, rng, 2.0);
  MatrixXd G = testutil::random_matrix(1, 6, rng);
  MatrixXd O = testutil::random_matrix(1, 6, rng);
  const MatrixXd C = testutil::random_matrix(5, 6, rng);
  auto run = [&](GradMap* g) {
    Tape<double> t;
    Var<double> s = t.weighted_sum_all(
        t.layer_norm_rows(t.param(X, "x"), t.param(G, "g"), t.param(O, "o")), C);
    if (g) {
      t.backward(s);
      testutil::collect_grads(t, g);
    }
    return t.val(s)(0, 0);
  };
  CHECK(testutil::max_grad_rel_err({{"x", &X}, {"g", &G}, {"o", &O}}, run) < 1e-4);
}

TEST_CASE("broadcast, concat, pairsum and reshape gradients") {
  Rng rng(26, 0, "shape-ops");
  MatrixXd A = testutil::random_matrix(3, 4, rng);
  MatrixXd B = testutil::random_matrix(5, 4, rng);
  MatrixXd V = testutil::random_matrix(3, 1, rng);
  MatrixXd Bias = testutil::random_matrix(1, 4, rng);
  const MatrixXd C1 = testutil::random_matrix(15, 4, rng);
  const MatrixXd C2 = testutil::random_matrix(3, 5, rng);
  auto run = [&](GradMap* g) {
    Tape<double> t;
    Var<double> a = t.param(A, "a");
    Var<double> b = t.param(B, "b");
    Var<double> v = t.param(V, "v");
    Var<double> bias = t.param(Bias, "bias");
    Var<double> pairs = t.add_row_broadcast(t.pairsum_rows(a, b), bias);
    Var<double> s1 = t.weighted_sum_all(pairs, C1);
    Var<double> col = t.matmul(pairs, t.constant(MatrixXd::Ones(4, 1)));
    Var<double> square = t.rows_to_matrix(col, 3, 5);
    Var<double> with_bc = t.cmul(square, t.broadcast_col(v, 5));
    Var<double> s2 = t.weighted_sum_all(with_bc, C2);
    Var<double> s = t.sum_scaled({s1, s2}, {1.0, 0.7});
    if (g) {
      t.backward(s);
      testutil::collect_grads(t, g);
    }
    return t.val(s)(0, 0);
  };
  CHECK(testutil::max_grad_rel_err(
            {{"a", &A}, {"b", &B}, {"v", &V}, {"bias", &Bias}}, run) < 1e-5);
}

TEST_CASE("concat_cols splits gradients back to its parts") {
  Rng rng(27, 0, "concat");
  MatrixXd A = testutil::random_matrix(4, 2, rng);
  MatrixXd B = testutil::random_matrix(4, 3, rng);
  const MatrixXd C = testutil::random_matrix(4, 5, rng);
  auto run = [&](GradMap* g) {
    Tape<double> t;
    Var<double> s = t.weighted_sum_all(
        t.concat_cols({t.param(A, "a"), t.param(B, "b")}), C);
    if (g) {
      t.backward(s);
      testutil::collect_grads(t, g);
    }
    return t.val(s)(0, 0);
  };
  CHECK(testutil::max_grad_rel_err({{"a", &A}, {"b", &B}}, run) < 1e-6);
}

TEST_CASE("codebook gather accumulates into the indexed entries") {
  Rng rng(28, 0, "gather");
  MatrixXd CB = testutil::random_matrix(2, 6, rng);
  Eigen::MatrixXi idx(4, 4);
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j)
      idx(i, j) = static_cast<int>(rng.uniform_int(0, 5));
  const MatrixXd C = testutil::random_matrix(4, 4, rng);
  auto run = [&](GradMap* g) {
    Tape<double> t;
    Var<double> s = t.weighted_sum_all(t.gather_row(t.param(CB, "cb"), 1, idx), C);
    if (g) {
      t.backward(s);
      testutil::collect_grads(t, g);
    }
    return t.val(s)(0, 0);
  };
  CHECK(testutil::max_grad_rel_err({{"cb", &CB}}, run) < 1e-6);
}

TEST_CASE("smoothed cross-entropy matches finite differences and skips rows") {
  Rng rng(29, 0, "ce");
  MatrixXd Z = testutil::random_matrix(6, 4, rng, 2.0);
  const std::vector<int> labels{0, 2, 1, 3, 2, 0};
  const std::vector<char> include{1, 1, 0, 1, 1, 0};
  auto run = [&](GradMap* g) {
    Tape<double> t;
    Var<double> s = t.ce_smoothed(t.param(Z, "z"), labels, 0.01, include);
    if (g) {
      t.backward(s);
      testutil::collect_grads(t, g);
    }
    return t.val(s)(0, 0);
  };
  CHECK(testutil::max_grad_rel_err({{"z", &Z}}, run) < 1e-5);

  // Excluded rows must carry zero gradient.
  GradMap grads;
  run(&grads);
  CHECK(grads["z"].row(2).cwiseAbs().maxCoeff() == 0.0);
  CHECK(grads["z"].row(5).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("cross-entropy on perfect scaled one-hot logits vanishes") {
  MatrixXd Z = MatrixXd::Zero(3, 4);
  const std::vector<int> labels{1, 3, 0};
  for (int i = 0; i < 3; ++i) Z(i, labels[i]) = 200.0;
  Tape<double> t;
  const double v =
      t.val(t.ce_smoothed(t.constant(Z), labels, 0.0, {1, 1, 1}))(0, 0);
  CHECK(v == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("cross-entropy with nothing included is exactly zero") {
  MatrixXd Z = MatrixXd::Random(3, 4);
  Tape<double> t;
  Var<double> s = t.ce_smoothed(t.param(Z, "z"), {0, 1, 2}, 0.01, {0, 0, 0});
  CHECK(t.val(s)(0, 0) == 0.0);
  t.backward(s);
  CHECK(t.grad(ad::Var<double>{t.params()[0].node}).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("binary cross-entropy gradient and clipped bound") {
  Rng rng(30, 0, "bce");
  MatrixXd P = testutil::random_matrix(4, 4, rng, 0.35);
  P.array() += 0.5;  // interior of (0,1)
  MatrixXd T(4, 4);
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) T(i, j) = rng.bernoulli(0.5) ? 1.0 : 0.0;
  auto run = [&](GradMap* g) {
    Tape<double> t;
    Var<double> s = t.bce_mean(t.param(P, "p"), T);
    if (g) {
      t.backward(s);
      testutil::collect_grads(t, g);
    }
    return t.val(s)(0, 0);
  };
  CHECK(testutil::max_grad_rel_err({{"p", &P}}, run) < 1e-5);

  // Exact 0/1 predictions hit the clip; the loss stays below -2 log(1-eps).
  Tape<double> t;
  const double v = t.val(t.bce_mean(t.constant(T), T))(0, 0);
  CHECK(v <= -2.0 * std::log(1.0 - 1e-7));
  CHECK(std::isfinite(v));
}
