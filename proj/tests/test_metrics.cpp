#include "doctest.h"

#include "edln/metrics.hpp"
#include "edln/theory.hpp"
#include "oracles.hpp"

#include <cmath>
#include <numeric>

using namespace edln;

namespace {

DataModel default_model(std::uint64_t seed, double cond_z = 3.0) {
  DataModelOptions o;
  o.seed = seed;
  o.cond_z = cond_z;
  return make_data_model(o);
}

}  // namespace

TEST_CASE("self alignment and isometry scaling") {
  const EdlnNetwork net = random_network(8, {6, 7}, 6, 3.0, 1);
  Rng rng(2);
  const Matrix probes = gaussian_matrix(8, 64, rng);
  const AlignmentReport self = alignment(net, 1, net, 1, probes, probes);
  CHECK(self.score == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(self.c0 == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(self.cka == doctest::Approx(1.0).epsilon(1e-12));
  CHECK_FALSE(self.degenerate);

  // h_B = 3 O h_A: Grams scale by 9.
  const Matrix o = random_orthogonal(6, rng);
  std::vector<Matrix> w = net.weights();
  w[0] = 3.0 * o * w[0];
  w[1] = w[1] * o.transpose();
  const EdlnNetwork other = net.with_weights(w);
  const AlignmentReport r = alignment(net, 1, other, 1, probes, probes);
  CHECK(r.score == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(r.c0 == doctest::Approx(9.0).epsilon(1e-12));
  CHECK(alignment(other, 1, net, 1, probes, probes).c0 == doctest::Approx(1.0 / 9.0).epsilon(1e-12));
}

TEST_CASE("score invariances: symmetry, orthogonal maps, rescaling, probe order") {
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const Matrix ha = gaussian_matrix(5, 30, rng);
    const Matrix hb = gaussian_matrix(7, 30, rng);
    const Matrix ga = ha.transpose() * ha;
    const Matrix gb = hb.transpose() * hb;
    const AlignmentReport ab = compare_grams(ga, gb);
    CHECK(compare_grams(gb, ga).score == doctest::Approx(ab.score).epsilon(1e-14));
    const Matrix ha2 = 2.5 * random_orthogonal(5, rng) * ha;
    CHECK(compare_grams(ha2.transpose() * ha2, gb).score == doctest::Approx(ab.score).epsilon(1e-12));
    CHECK(ab.score >= 0.0);
    CHECK(ab.score <= 1.0);
    CHECK(ab.cka >= 0.0);
    CHECK(ab.cka <= 1.0);

    std::vector<int> perm(30);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    Eigen::PermutationMatrix<Eigen::Dynamic> p(30);
    for (int k = 0; k < 30; ++k) p.indices()(k) = perm[std::size_t(k)];
    const Matrix pa = p * ga * p.transpose();
    const Matrix pb = p * gb * p.transpose();
    CHECK(compare_grams(pa, pb).score == doctest::Approx(ab.score).epsilon(1e-12));
    CHECK(compare_grams(pa, pb).cka == doctest::Approx(ab.cka).epsilon(1e-12));
  }
}

TEST_CASE("CKA of proportional centered Grams is 1") {
  Rng rng(4);
  const Matrix h = gaussian_matrix(4, 20, rng);
  const Matrix g = h.transpose() * h;
  // Adding a constant offset changes the raw Gram but not the centered one.
  const AlignmentReport r = compare_grams(g, 2.0 * g + Matrix::Constant(20, 20, 5.0));
  CHECK(r.cka == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(r.score < 1.0 - 1e-6);
}

TEST_CASE("degenerate and invalid alignment inputs") {
  const EdlnNetwork zero(identity(8), identity(6), {Matrix::Zero(5, 8), Matrix::Zero(6, 5)});
  const EdlnNetwork net = random_network(8, {5}, 6, 2.0, 1);
  Rng rng(5);
  const Matrix probes = gaussian_matrix(8, 20, rng);
  const AlignmentReport r = alignment(zero, 1, net, 1, probes, probes);
  CHECK(r.degenerate);
  CHECK(std::isnan(r.score));
  CHECK_THROWS_AS(alignment(net, 1, net, 1, gaussian_matrix(8, 9, rng), gaussian_matrix(8, 9, rng)),
                  std::invalid_argument);
  CHECK_THROWS_AS(alignment(net, 1, net, 1, probes, gaussian_matrix(8, 21, rng)), ShapeError);
  CHECK_THROWS_AS(alignment(net, 3, net, 1, probes, probes), std::out_of_range);
  CHECK_THROWS_AS(compare_grams(Matrix::Identity(3, 3), Matrix::Identity(4, 4)), ShapeError);
}

TEST_CASE("pairwise alignment of closed-form nets and of identical nets") {
  const DataModel dm = default_model(7);
  const PairedBatch probes = sample_batch(dm, 64, {"A", "B"}, 1234);
  const EdlnNetwork sa = random_network(8, {6}, 6, 3.0, 11);
  const EdlnNetwork sb = random_network(8, {10, 10}, 6, 3.0, 12);
  const ClosedFormSolution a = closed_form_platonic(dm, "A", sa, 1);
  const ClosedFormSolution b = closed_form_platonic(dm, "B", sb, 2);
  const Matrix scores = pairwise_alignment(a.network, b.network, probes.views.at("A"),
                                           probes.views.at("B"));
  CHECK(scores.rows() == 1);
  CHECK(scores.cols() == 2);
  CHECK(min_score(scores) >= 1.0 - 1e-8);

  const Matrix self = pairwise_alignment(b.network, b.network, probes.views.at("B"),
                                         probes.views.at("B"));
  CHECK(min_score(self) >= 1.0 - 1e-10);

  // Random nets are not aligned.
  const Matrix random = pairwise_alignment(sa, sb, probes.views.at("A"), probes.views.at("B"));
  CHECK(max_score(random) < 0.999);
  CHECK(alignment_layers(sa, true).size() == 2);
  CHECK(alignment_layers(random_network(8, {}, 6, 2.0, 1)).size() == 1);
}

TEST_CASE("sharpness: scalar D = 1 by hand") {
  DataModel dm;
  dm.input_dim = dm.output_dim = 1;
  dm.v_star = Matrix::Constant(1, 1, 0.7);
  dm.sigma_x = identity(1);
  dm.sigma_eps = identity(1);
  dm.view_transforms["A"] = identity(1);
  const EdlnNetwork net(identity(1), identity(1), {Matrix::Constant(1, 1, 0.3)});
  const SharpnessEstimate s = sharpness(net, Expectation::analytic(view_model(dm, "A")));
  CHECK(s.converged);
  CHECK(std::abs(s.top_eigenvalue - 2.0) < 1e-4);
}

TEST_CASE("sharpness: frozen-linear D = 1 against the Kronecker eigen oracle") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const DataModel dm = default_model(seed);
    const EdlnNetwork net = random_network(8, {}, 6, 3.0, seed);
    const ViewModel vm = view_model(dm, "A");
    const Matrix in = net.m_in() * vm.input_moment * net.m_in().transpose();
    const Matrix out = net.m_out().transpose() * net.m_out();
    const double oracle = 2.0 * oracle::top_eigenvalue(in) * oracle::top_eigenvalue(out);
    const SharpnessEstimate s = sharpness(net, Expectation::analytic(vm));
    CHECK(std::abs(s.top_eigenvalue - oracle) < 1e-4 * oracle);
  }
}

TEST_CASE("sharpness matches a dense Hessian on small nets") {
  DataModelOptions o;
  o.input_dim = 4;
  o.output_dim = 3;
  o.rank = 2;
  for (std::uint64_t seed = 0; seed < 6; ++seed) {
    o.seed = seed;
    const DataModel dm = make_data_model(o);
    const int depth = 1 + int(seed % 3);
    std::vector<Eigen::Index> hidden(std::size_t(depth - 1), 4);
    const EdlnNetwork net = random_network(4, hidden, 3, 2.0, seed);
    REQUIRE(net.parameter_count() <= 60);
    const Expectation ex = seed % 2 ? Expectation::analytic(view_model(dm, "A"))
                                    : Expectation::monte_carlo(sample_batch(dm, 50, {"A"}, seed), "A");
    const double oracle = oracle::top_eigenvalue(oracle::dense_hessian(net, ex));
    const SharpnessEstimate s = sharpness(net, ex);
    CHECK(std::abs(s.top_eigenvalue - oracle) < 1e-3 * std::abs(oracle));
  }
}

TEST_CASE("ill-conditioned views make the closed form sharper") {
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const DataModel mild = default_model(seed, 3.0);
    const DataModel sharp = default_model(seed, 100.0);
    const EdlnNetwork sh = random_network(8, {6}, 6, 1.0, seed);
    const auto s_mild = sharpness(closed_form_platonic(mild, "A", sh, 1).network,
                                  Expectation::analytic(view_model(mild, "A")));
    const auto s_sharp = sharpness(closed_form_platonic(sharp, "A", sh, 1).network,
                                   Expectation::analytic(view_model(sharp, "A")));
    CHECK(s_sharp.top_eigenvalue > s_mild.top_eigenvalue);
  }
}
