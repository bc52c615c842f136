#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "airway/abs.hpp"
#include "airway/ssc.hpp"
#include "helpers.hpp"

using namespace airway;
using namespace airway::nn;
using ad::Tape;
using ad::Var;
using testutil::GradMap;

namespace {

template <typename P>
std::vector<std::pair<std::string, MatrixXd*>> param_list(P& p,
                                                          const std::string& prefix) {
  std::vector<std::pair<std::string, MatrixXd*>> out;
  p.for_each(prefix, [&](const std::string& name, MatrixXd& m) {
    out.emplace_back(name, &m);
  });
  return out;
}

DescendantMask random_descendant_mask(int n, Rng& rng) {
  return descendant_mask(testutil::random_tree(n, rng));
}

}  // namespace

TEST_CASE("ground-truth subtree map from label equality") {
  CHECK(gt_subtree_map<double>({4, 4, 4}) == MatrixXd::Ones(3, 3));
  CHECK(gt_subtree_map<double>({0, 1, 2}) == MatrixXd::Identity(3, 3));
  Rng rng(51, 0, "gtmap");
  std::vector<int> labels(12);
  for (int& l : labels) l = static_cast<int>(rng.uniform_int(0, 3));
  const MatrixXd m = gt_subtree_map<double>(labels);
  for (int i = 0; i < 12; ++i) {
    CHECK(m(i, i) == 1.0);
    for (int j = 0; j < 12; ++j) {
      CHECK(m(i, j) == (labels[i] == labels[j] ? 1.0 : 0.0));
      CHECK(m(i, j) == m(j, i));
    }
  }
}

TEST_CASE("raw map is constant when node features coincide") {
  Rng rng(52, 0, "rawmap");
  SscParams<double> p = SscParams<double>::init(8, rng);
  const MatrixXd g = testutil::random_matrix(1, 8, rng).replicate(4, 1);
  Tape<double> t;
  const MatrixXd raw = t.val(predict_raw_map(t, t.constant(g), push_ssc(t, p, "ssc")));
  CHECK(raw.rows() == 4);
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) CHECK(raw(i, j) == doctest::Approx(raw(0, 0)));
  CHECK(raw(0, 0) > 0.0);
  CHECK(raw(0, 0) < 1.0);
}

TEST_CASE("raw map on a single node is a probability") {
  Rng rng(53, 0, "rawmap1");
  SscParams<double> p = SscParams<double>::init(8, rng);
  const MatrixXd g = testutil::random_matrix(1, 8, rng);
  Tape<double> t;
  const MatrixXd raw = t.val(predict_raw_map(t, t.constant(g), push_ssc(t, p, "ssc")));
  CHECK(raw.rows() == 1);
  CHECK(raw(0, 0) > 0.0);
  CHECK(raw(0, 0) < 1.0);
}

TEST_CASE("subtree head gradients match finite differences") {
  Rng rng(54, 0, "ssc-grad");
  SscParams<double> p = SscParams<double>::init(8, rng);
  const int n = 5;
  const MatrixXd g = testutil::random_matrix(n, 8, rng);
  Rng rng_tree(54, 1, "ssc-grad-tree");
  const DescendantMask desc = random_descendant_mask(n, rng_tree);
  MatrixXd target(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) target(i, j) = rng.bernoulli(0.5) ? 1.0 : 0.0;
  auto run = [&](GradMap* grads) {
    Tape<double> t;
    const SscVars<double> vars = push_ssc(t, p, "ssc");
    Var<double> gv = t.constant(g);
    Var<double> raw = predict_raw_map(t, gv, vars);
    Var<double> refined = refine_map(t, raw, predict_blend(t, gv, vars), desc);
    Var<double> s = t.bce_mean(refined, target);
    if (grads) {
      t.backward(s);
      testutil::collect_grads(t, grads);
    }
    return t.val(s)(0, 0);
  };
  CHECK(testutil::max_grad_rel_err(param_list(p, "ssc"), run) < 1e-4);
}

TEST_CASE("refinement with k=0 returns raw exactly; k=1 saturates descendants") {
  Rng rng(55, 0, "refine");
  const int n = 6;
  Rng rng_tree(55, 1, "refine-tree");
  const DescendantMask desc = random_descendant_mask(n, rng_tree);
  MatrixXd raw(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) raw(i, j) = rng.uniform();

  Tape<double> t;
  Var<double> rawv = t.constant(raw);
  const MatrixXd same =
      t.val(refine_map(t, rawv, t.constant(MatrixXd::Zero(n, 1)), desc));
  CHECK(same == raw);  // k = 0: bit-exact passthrough

  const MatrixXd sat =
      t.val(refine_map(t, rawv, t.constant(MatrixXd::Ones(n, 1)), desc));
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      if (desc.values(i, j))
        CHECK(sat(i, j) == doctest::Approx(1.0).epsilon(1e-14));
      else
        CHECK(sat(i, j) == raw(i, j));
    }
}

TEST_CASE("refinement only raises descendant pairs, stays in [0,1]") {
  Rng rng(56, 0, "refine-prop");
  const int n = 7;
  Rng rng_tree(56, 1, "refine-prop-tree");
  const DescendantMask desc = random_descendant_mask(n, rng_tree);
  MatrixXd raw(n, n), k(n, 1);
  for (int i = 0; i < n; ++i) {
    k(i, 0) = rng.uniform();
    for (int j = 0; j < n; ++j) raw(i, j) = rng.uniform();
  }
  Tape<double> t;
  const MatrixXd refined =
      t.val(refine_map(t, t.constant(raw), t.constant(k), desc));
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      CHECK(refined(i, j) >= 0.0);
      CHECK(refined(i, j) <= 1.0);
      if (desc.values(i, j)) {
        CHECK(refined(i, j) >= raw(i, j));
        CHECK(refined(i, j) ==
              doctest::Approx(raw(i, j) + k(i, 0) * (1.0 - raw(i, j))));
      } else {
        CHECK(refined(i, j) == raw(i, j));
      }
    }

  // Monotone in k: raising any k_i never lowers any entry.
  MatrixXd k2 = k;
  k2(2, 0) = std::min(1.0, k(2, 0) + 0.3);
  const MatrixXd refined2 =
      t.val(refine_map(t, t.constant(raw), t.constant(k2), desc));
  CHECK(((refined2 - refined).array() >= -1e-15).all());

  // BCE against a binary target stays finite.
  MatrixXd target = MatrixXd::Zero(n, n);
  const double bce = t.val(t.bce_mean(t.constant(refined), target))(0, 0);
  CHECK(std::isfinite(bce));
}

TEST_CASE("refinement rejects out-of-domain inputs") {
  const int n = 3;
  Rng rng_tree(57, 1, "refine-dom");
  const DescendantMask desc = random_descendant_mask(n, rng_tree);
  Tape<double> t;
  MatrixXd bad = MatrixXd::Constant(n, n, 1.2);
  CHECK_THROWS_AS(
      refine_map(t, t.constant(bad), t.constant(MatrixXd::Zero(n, 1)), desc),
      DomainError);
  MatrixXd raw = MatrixXd::Constant(n, n, 0.5);
  MatrixXd badk = MatrixXd::Constant(n, 1, -0.1);
  CHECK_THROWS_AS(refine_map(t, t.constant(raw), t.constant(badk), desc),
                  DomainError);
}

TEST_CASE("prototypes: single node and uniform probability algebra") {
  Rng rng(58, 0, "proto");
  const MatrixXd g1 = testutil::random_matrix(1, 8, rng);
  MatrixXd z1(1, 3);
  z1 << 5.0, -1.0, 0.5;
  Tape<double> t;
  const MatrixXd h1 = t.val(
      compute_prototypes(t, t.constant(g1), t.constant(z1), 1.7, false));
  MatrixXd p_row(1, 3);
  {
    const double m = z1.maxCoeff();
    p_row = (z1.array() - m).exp();
    p_row /= p_row.sum();
  }
  for (int c = 0; c < 3; ++c)
    CHECK((h1.row(c) - std::pow(p_row(0, c), 1.7) * g1.row(0))
              .cwiseAbs()
              .maxCoeff() < 1e-12);

  // Uniform probabilities: every prototype is the plain feature mean.
  const int n = 6, cdim = 4;
  const MatrixXd g = testutil::random_matrix(n, 8, rng);
  const MatrixXd z = MatrixXd::Zero(n, cdim);
  const MatrixXd h = t.val(
      compute_prototypes(t, t.constant(g), t.constant(z), 1.0, false));
  const MatrixXd mean = g.colwise().sum() / static_cast<double>(cdim == 0 ? 1 : cdim);
  for (int c = 0; c < cdim; ++c)
    CHECK((h.row(c) - mean.row(0)).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("prototypes match an explicit triple loop") {
  Rng rng(59, 0, "proto-loop");
  const int n = 7, cdim = 4, d = 8;
  const MatrixXd g = testutil::random_matrix(n, d, rng);
  const MatrixXd z = testutil::random_matrix(n, cdim, rng, 2.0);
  const double alpha = 1.3;
  Tape<double> t;
  const MatrixXd h = t.val(
      compute_prototypes(t, t.constant(g), t.constant(z), alpha, false));
  MatrixXd expect = MatrixXd::Zero(cdim, d);
  for (int c = 0; c < cdim; ++c)
    for (int k = 0; k < d; ++k)
      for (int i = 0; i < n; ++i) {
        double denom = 0.0;
        for (int u = 0; u < cdim; ++u) denom += std::exp(z(i, u) - z.row(i).maxCoeff());
        const double p = std::exp(z(i, c) - z.row(i).maxCoeff()) / denom;
        expect(c, k) += std::pow(p, alpha) * g(i, k);
      }
  CHECK((h - expect).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("prototypes are invariant to node order up to reassociation") {
  Rng rng(60, 0, "proto-perm");
  const int n = 6;
  const MatrixXd g = testutil::random_matrix(n, 8, rng);
  const MatrixXd z = testutil::random_matrix(n, 3, rng, 2.0);
  const std::vector<int> perm{4, 2, 0, 5, 1, 3};
  MatrixXd gp(n, 8), zp(n, 3);
  for (int i = 0; i < n; ++i) {
    gp.row(i) = g.row(perm[i]);
    zp.row(i) = z.row(perm[i]);
  }
  Tape<double> t;
  const MatrixXd h0 =
      t.val(compute_prototypes(t, t.constant(g), t.constant(z), 1.0, false));
  const MatrixXd h1 =
      t.val(compute_prototypes(t, t.constant(gp), t.constant(zp), 1.0, false));
  CHECK((h0 - h1).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("anomaly scores: shape, feature determinism, gradients") {
  Rng rng(61, 0, "abs-grad");
  AbsParams<double> p = AbsParams<double>::init(8, 2, 4, 16, 1.0, false, rng);
  const int n = 5;
  const MatrixXd g = testutil::random_matrix(n, 8, rng);
  MatrixXd z = testutil::random_matrix(n, 4, rng, 2.0);
  MatrixXd target(n, 1);
  for (int i = 0; i < n; ++i) target(i, 0) = rng.bernoulli(0.3) ? 1.0 : 0.0;

  {  // single node, score in (0,1)
    Tape<double> t;
    const AbsVars<double> vars = push_abs(t, p, "abs");
    Var<double> proto = compute_prototypes(t, t.constant(g.topRows(1)),
                                           t.constant(z.topRows(1)), 1.0, false);
    Var<double> refined = refine_prototypes(t, proto, t.constant(g.topRows(1)),
                                            vars.refine_block);
    const MatrixXd s = t.val(anomaly_scores(t, t.constant(g.topRows(1)), refined, vars));
    CHECK(s.rows() == 1);
    CHECK(s(0, 0) > 0.0);
    CHECK(s(0, 0) < 1.0);
  }

  {  // identical feature rows give identical scores
    Tape<double> t;
    const AbsVars<double> vars = push_abs(t, p, "abs");
    MatrixXd gg = g;
    gg.row(3) = gg.row(1);
    MatrixXd zz = z;
    zz.row(3) = zz.row(1);
    Var<double> gv = t.constant(gg);
    Var<double> proto = compute_prototypes(t, gv, t.constant(zz), 1.0, false);
    Var<double> refined = refine_prototypes(t, proto, gv, vars.refine_block);
    const MatrixXd s = t.val(anomaly_scores(t, gv, refined, vars));
    CHECK(s(3, 0) == doctest::Approx(s(1, 0)).epsilon(1e-14));
  }

  auto run = [&](GradMap* grads) {
    Tape<double> t;
    const AbsVars<double> vars = push_abs(t, p, "abs");
    Var<double> gv = t.constant(g);
    Var<double> proto = compute_prototypes(t, gv, t.param(z, "z"), 1.0, false);
    Var<double> refined = refine_prototypes(t, proto, gv, vars.refine_block);
    Var<double> scores = anomaly_scores(t, gv, refined, vars);
    Var<double> s = t.bce_mean(scores, target);
    if (grads) {
      t.backward(s);
      testutil::collect_grads(t, grads);
    }
    return t.val(s)(0, 0);
  };
  auto params = param_list(p, "abs");
  params.emplace_back("z", &z);
  CHECK(testutil::max_grad_rel_err(params, run) < 1e-4);
}

TEST_CASE("anomaly mask formula") {
  Tape<double> t;
  // Zero scores: mask is exactly all ones.
  const MatrixXd m0 = t.val(anomaly_mask(t, t.constant(MatrixXd::Zero(3, 1))));
  CHECK(m0 == MatrixXd::Ones(3, 3));

  // Two certain anomalies blank each other out.
  MatrixXd certain = MatrixXd::Ones(2, 1);
  const MatrixXd m1 = t.val(anomaly_mask(t, t.constant(certain)));
  CHECK(m1(0, 1) == 0.0);
  CHECK(m1(1, 0) == 0.0);

  // Hand evaluation at 0.5: off-diagonal 1 - (0.25)^2.
  MatrixXd half = MatrixXd::Constant(2, 1, 0.5);
  const MatrixXd mh = t.val(anomaly_mask(t, t.constant(half)));
  CHECK(mh(0, 1) == doctest::Approx(0.9375).epsilon(1e-15));
  CHECK(mh(0, 0) == doctest::Approx(1.0 - std::pow(0.5, 4)).epsilon(1e-15));

  // Random scores: symmetric, in [0,1], diagonal 1 - y^4.
  Rng rng(62, 0, "mask");
  MatrixXd y(5, 1);
  for (int i = 0; i < 5; ++i) y(i, 0) = rng.uniform();
  const MatrixXd m = t.val(anomaly_mask(t, t.constant(y)));
  for (int i = 0; i < 5; ++i) {
    CHECK(m(i, i) == doctest::Approx(1.0 - std::pow(y(i, 0), 4)).epsilon(1e-14));
    for (int j = 0; j < 5; ++j) {
      CHECK(m(i, j) == m(j, i));
      CHECK(m(i, j) >= 0.0);
      CHECK(m(i, j) <= 1.0);
      CHECK(m(i, j) ==
            doctest::Approx(1.0 - std::pow(y(i, 0) * y(j, 0), 2)).epsilon(1e-14));
    }
  }

  // Raising one score never raises any mask entry.
  MatrixXd y2 = y;
  y2(2, 0) = std::min(1.0, y(2, 0) + 0.2);
  const MatrixXd m2 = t.val(anomaly_mask(t, t.constant(y2)));
  CHECK(((m2 - m).array() <= 1e-15).all());
}

TEST_CASE("zero anomaly scores leave subtree-only masking untouched") {
  Rng rng(63, 0, "mask-combine");
  const int n = 5;
  MatrixXd refined(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) refined(i, j) = rng.uniform();
  Tape<double> t;
  Var<double> refv = t.constant(refined);
  Var<double> maskv = anomaly_mask(t, t.constant(MatrixXd::Zero(n, 1)));
  const MatrixXd combined = t.val(t.cmul(refv, maskv));
  CHECK(combined == refined);  // multiplying by exact ones is bit-exact

  BlockParams<double> p = BlockParams<double>::init(8, 2, 4, rng);
  const MatrixXd x = testutil::random_matrix(n, 8, rng);
  const MatrixXd out_combined = t.val(masked_self_attention(
      t, t.constant(x), push_block(t, p, "m"), t.cmul(refv, maskv)));
  const MatrixXd out_subtree = t.val(masked_self_attention(
      t, t.constant(x), push_block(t, p, "m2"), refv));
  CHECK(out_combined == out_subtree);
}
