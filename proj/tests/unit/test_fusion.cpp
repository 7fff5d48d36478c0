#include "fusiontrack/fusion.hpp"

#include "oracles.hpp"

#include <doctest.h>

#include <map>

using namespace fusiontrack;
using namespace fusiontrack::fusion;
using oracle::Gen;

namespace {

Matrix rows(std::initializer_list<std::initializer_list<double>> r) {
  Matrix m(static_cast<Index>(r.size()), static_cast<Index>(r.begin()->size()));
  Index i = 0;
  for (const auto& row : r) {
    Index j = 0;
    for (double v : row) m(i, j++) = v;
    ++i;
  }
  return m;
}

struct Dir {
  ParamStore store;
  DirectionParams p;
  explicit Dir(Index d, std::uint64_t seed = 3) : p(add_direction_params(store, "dir", d, seed)) {}
};

}  // namespace

TEST_CASE("group_neighbors examples") {
  const Matrix c = rows({{1, 0}, {2, 0}, {3, 0}});
  NeighborGroup g = group_neighbors({0, 0}, c, 2, 2.5);
  CHECK(oracle::retained(g) == std::vector<Index>{0, 1});
  CHECK(g.count() == 2);

  g = group_neighbors({0, 0}, c, 3, 2.5);
  REQUIRE(g.mask.size() == 3);
  CHECK(oracle::retained(g) == std::vector<Index>{0, 1});
  CHECK_FALSE(g.mask[2]);

  g = group_neighbors({0, 0}, rows({{1, 0}, {0, 1}}), 1, 5.0);
  CHECK(oracle::retained(g) == std::vector<Index>{0});

  g = group_neighbors({0, 0}, c, 2, 0.5);
  CHECK(g.empty());
  // radius is inclusive
  CHECK(oracle::retained(group_neighbors({0, 0}, c, 3, 3.0)) == std::vector<Index>{0, 1, 2});
}

TEST_CASE("knn matches the brute-force scan") {
  Gen gen(17);
  for (int trial = 0; trial < 100; ++trial) {
    const Index n = gen.integer(0, 60);
    const Matrix cand = trial % 2 ? gen.lattice(n, 12) : gen.matrix(n, 2, 0.0, 32.0);
    const Matrix centers = trial % 2 ? gen.lattice(20, 12) : gen.matrix(20, 2, 0.0, 32.0);
    const int k = gen.integer(1, 8);
    const double r = trial % 3 == 0 ? 4.0 : gen.uniform(0.5, 20.0);
    const auto fast = group_all(centers, cand, k, r);
    const auto ref = reference::group_all(centers, cand, k, r);
    for (Index c = 0; c < centers.rows(); ++c) {
      const auto want = oracle::knn(centers.row(c).transpose(), cand, k, r);
      CHECK(oracle::retained(fast[static_cast<std::size_t>(c)]) == want);
      CHECK(oracle::retained(ref[static_cast<std::size_t>(c)]) == want);
      CHECK(fast[static_cast<std::size_t>(c)].center_index == c);
    }
  }
}

TEST_CASE("encode_position") {
  auto e = encode_position({3, 4}, {3, 4});
  CHECK(e == (Eigen::Matrix<double, 1, 7>() << 3, 4, 3, 4, 0, 0, 0).finished());
  e = encode_position({10, 20}, {13, 24});
  CHECK(e == (Eigen::Matrix<double, 1, 7>() << 10, 20, 13, 24, -3, -4, 5).finished());
  const auto s = encode_position({13, 24}, {10, 20});
  CHECK(s(4) == -e(4));
  CHECK(s(5) == -e(5));
  CHECK(s(6) == e(6));
}

TEST_CASE("first stage examples") {
  Dir dir(4);
  Gen gen(1);
  const Matrix f = gen.matrix(3, 4, -1, 1);
  CHECK((fuse_first_stage(dir.store, dir.p, f, f) - f).cwiseAbs().maxCoeff() <= 1e-15);

  oracle::zero_params(dir.store);
  const Matrix a = gen.matrix(3, 4, -1, 1), b = gen.matrix(3, 4, -1, 1);
  const Matrix g = fuse_first_stage(dir.store, dir.p, a, b);
  CHECK((g - (a + b) / 2).cwiseAbs().maxCoeff() <= 1e-15);

  const Matrix masked = fuse_first_stage(dir.store, dir.p, a, b, {true, false, true});
  CHECK(masked.row(1).isZero(0.0));
  CHECK_THROWS_AS(fuse_first_stage(dir.store, dir.p, a, gen.matrix(2, 4, 0, 1)), nn::ShapeError);
}

TEST_CASE("second stage examples") {
  Dir dir(4);
  Gen gen(2);
  const Matrix g1 = gen.matrix(1, 4, -1, 1);
  const Vector one = fuse_second_stage(dir.store, dir.p, g1, gen.matrix(1, 7, -3, 3), std::vector<bool>{true});
  CHECK((one.transpose() - g1).cwiseAbs().maxCoeff() <= 1e-15);

  const Matrix same = g1.replicate(5, 1);
  const Vector e = fuse_second_stage(dir.store, dir.p, same, gen.matrix(5, 7, -3, 3), std::vector<bool>(5, true));
  CHECK((e.transpose() - g1).cwiseAbs().maxCoeff() <= 1e-14);

  CHECK_THROWS_AS(fuse_second_stage(dir.store, dir.p, same, gen.matrix(5, 7, -3, 3), std::vector<bool>(5, false)),
                  std::invalid_argument);

  // a masked row's features cannot reach the output
  Matrix g = gen.matrix(4, 4, -1, 1);
  const Matrix u = gen.matrix(4, 7, -3, 3);
  const std::vector<bool> mask{true, false, true, true};
  const Vector before = fuse_second_stage(dir.store, dir.p, g, u, mask);
  g.row(1).setConstant(1e6);
  CHECK(fuse_second_stage(dir.store, dir.p, g, u, mask) == before);
}

TEST_CASE("convexity of every fused value") {
  Gen gen(99);
  double worst = 0.0;
  for (int trial = 0; trial < 200; ++trial) {
    const Index d = gen.integer(1, 32);
    const Index k = gen.integer(1, 8);
    Dir dir(d, static_cast<std::uint64_t>(trial));
    const Matrix a = gen.matrix(k, d, -5, 5), b = gen.matrix(k, d, -5, 5);
    const Matrix g = fuse_first_stage(dir.store, dir.p, a, b);
    for (Index r = 0; r < k; ++r) {
      Matrix pair(2, d);
      pair << a.row(r), b.row(r);
      worst = std::max(worst, oracle::hull_violation(g.row(r), pair));
    }
    std::vector<bool> mask(static_cast<std::size_t>(k));
    for (auto&& m : mask) m = gen.coin(0.7);
    mask[0] = true;
    const Vector e = fuse_second_stage(dir.store, dir.p, g, gen.matrix(k, 7, -20, 20), mask);
    Matrix kept(0, d);
    for (Index r = 0; r < k; ++r) {
      if (!mask[static_cast<std::size_t>(r)]) continue;
      kept.conservativeResize(kept.rows() + 1, Eigen::NoChange);
      kept.row(kept.rows() - 1) = g.row(r);
    }
    worst = std::max(worst, oracle::hull_violation(e.transpose(), kept));

    ParamStore gs;
    const GateParams gate = add_gate_params(gs, "gate", d, static_cast<std::uint64_t>(trial));
    const Matrix fc = gen.matrix(3, d, -5, 5), fl = gen.matrix(3, d, -5, 5);
    const Matrix ff = final_fuse(gs, gate, fc, fl);
    for (Index r = 0; r < 3; ++r) {
      Matrix pair(2, d);
      pair << fc.row(r), fl.row(r);
      worst = std::max(worst, oracle::hull_violation(ff.row(r), pair));
    }
  }
  CHECK(worst <= 1e-12);
}

TEST_CASE("interaction updates") {
  Dir dir(4);
  Gen gen(5);
  PointSet pts;
  pts.positions = gen.matrix(6, 2, 0, 32);
  pts.features = gen.matrix(6, 4, -1, 1);
  PixelGrid pix;
  pix.positions = Matrix(0, 2);
  pix.features = Matrix(0, 4);
  CHECK(points_centered_update(dir.store, dir.p, pts, pix, 8, 16.0).features == pts.features);
  PointSet none;
  none.positions = Matrix(0, 2);
  none.features = Matrix(0, 4);
  pix.positions = gen.matrix(9, 2, 0, 32);
  pix.features = gen.matrix(9, 4, -1, 1);
  CHECK(pixels_centered_update(dir.store, dir.p, pix, none, 4, 8.0).features == pix.features);

  // one point, one coincident pixel, zero parameters: the plain average
  Dir zero(3);
  oracle::zero_params(zero.store);
  PointSet p1;
  p1.positions = rows({{5, 5}});
  p1.features = rows({{1, -2, 3}});
  PixelGrid x1;
  x1.positions = rows({{5, 5}});
  x1.features = rows({{3, 0, -1}});
  const Matrix avg = (p1.features + x1.features) / 2;
  CHECK((points_centered_update(zero.store, zero.p, p1, x1, 8, 16).features - avg).cwiseAbs().maxCoeff() <= 1e-15);
  CHECK((pixels_centered_update(zero.store, zero.p, x1, p1, 4, 8).features - avg).cwiseAbs().maxCoeff() <= 1e-15);
}

TEST_CASE("interaction outputs stay in the hull of own and grouped features") {
  Gen gen(7);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const Index d = gen.integer(1, 16);
    Dir dir(d, static_cast<std::uint64_t>(trial));
    const Matrix cpos = gen.matrix(gen.integer(1, 12), 2, 0, 32);
    const Matrix npos = gen.matrix(gen.integer(1, 12), 2, 0, 32);
    const Matrix cf = gen.matrix(cpos.rows(), d, -3, 3), nf = gen.matrix(npos.rows(), d, -3, 3);
    const int k = gen.integer(1, 6);
    const double r = gen.uniform(2, 20);
    const Matrix out = interact(dir.store, dir.p, cpos, cf, npos, nf, k, r);
    for (Index c = 0; c < cpos.rows(); ++c) {
      const auto nb = oracle::knn(cpos.row(c).transpose(), npos, k, r);
      Matrix hull(static_cast<Index>(nb.size()) + 1, d);
      hull.row(0) = cf.row(c);
      for (std::size_t i = 0; i < nb.size(); ++i) hull.row(static_cast<Index>(i) + 1) = nf.row(nb[i]);
      worst = std::max(worst, oracle::hull_violation(out.row(c), hull));
      if (nb.empty()) CHECK(out.row(c) == cf.row(c));
    }
  }
  CHECK(worst <= 1e-12);
}

TEST_CASE("far neighbors have no influence") {
  Dir dir(4);
  Gen gen(8);
  const Matrix pix = rows({{4, 4}, {12, 4}, {4, 12}, {12, 12}});
  const Matrix pixf = gen.matrix(4, 4, -1, 1);
  Matrix pts = rows({{5, 5}, {30, 30}, {11, 3}});
  Matrix ptsf = gen.matrix(3, 4, -1, 1);
  const Matrix before = interact(dir.store, dir.p, pix, pixf, pts, ptsf, 4, 8.0);
  ptsf.row(1).setConstant(123.0);
  CHECK(interact(dir.store, dir.p, pix, pixf, pts, ptsf, 4, 8.0) == before);
}

TEST_CASE("candidate order does not matter when distances are distinct") {
  Dir dir(5);
  Gen gen(9);
  for (int trial = 0; trial < 20; ++trial) {
    const Matrix cpos = gen.matrix(6, 2, 0, 32), cf = gen.matrix(6, 5, -1, 1);
    const Matrix npos = gen.matrix(10, 2, 0, 32), nf = gen.matrix(10, 5, -1, 1);
    std::vector<Index> perm(10);
    std::iota(perm.begin(), perm.end(), Index{0});
    std::shuffle(perm.begin(), perm.end(), gen.rng);
    Matrix ppos(10, 2), pf(10, 5);
    for (Index i = 0; i < 10; ++i) {
      ppos.row(i) = npos.row(perm[static_cast<std::size_t>(i)]);
      pf.row(i) = nf.row(perm[static_cast<std::size_t>(i)]);
    }
    // neighbors are visited in distance order either way, so even the
    // summation order is unchanged
    CHECK(interact(dir.store, dir.p, cpos, cf, ppos, pf, 4, 12.0) == interact(dir.store, dir.p, cpos, cf, npos, nf, 4, 12.0));
  }
}

TEST_CASE("parallel kernels equal the serial reference") {
  Dir dir(6);
  Gen gen(10);
  for (int trial = 0; trial < 10; ++trial) {
    const Matrix cpos = gen.matrix(80, 2, 0, 32), cf = gen.matrix(80, 6, -1, 1);
    const Matrix npos = gen.matrix(50, 2, 0, 32), nf = gen.matrix(50, 6, -1, 1);
    const Matrix fast = interact(dir.store, dir.p, cpos, cf, npos, nf, 8, 6.0);
    const Matrix slow = reference::interact(dir.store, dir.p, cpos, cf, npos, nf, 8, 6.0);
    CHECK((fast - slow).cwiseAbs().maxCoeff() <= 1e-12);
  }
}

TEST_CASE("final fuse examples") {
  ParamStore s;
  const GateParams gate = add_gate_params(s, "gate", 4, 2);
  Gen gen(11);
  const Matrix f = gen.matrix(2, 4, -1, 1);
  CHECK((final_fuse(s, gate, f, f) - f).cwiseAbs().maxCoeff() <= 1e-15);
  oracle::zero_params(s);
  const Matrix c = gen.matrix(2, 4, -1, 1), l = gen.matrix(2, 4, -1, 1);
  CHECK((final_fuse(s, gate, c, l) - (c + l) / 2).cwiseAbs().maxCoeff() <= 1e-15);
  CHECK_THROWS(final_fuse(s, gate, c, gen.matrix(2, 3, -1, 1)));
}

TEST_CASE("attention export rows sum to one per center") {
  Dir dir(4);
  Gen gen(12);
  InteractionTape tape;
  interact(dir.store, dir.p, gen.matrix(5, 2, 0, 16), gen.matrix(5, 4, -1, 1), gen.matrix(7, 2, 0, 16),
           gen.matrix(7, 4, -1, 1), 3, 10.0, &tape);
  std::map<Index, double> total;
  for (const auto& r : attention_weights(tape)) total[r.center] += r.weight;
  CHECK_FALSE(total.empty());
  for (const auto& [c, t] : total) CHECK(t == doctest::Approx(1.0).epsilon(1e-12));
}
