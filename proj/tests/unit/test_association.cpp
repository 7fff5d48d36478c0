#include "fusiontrack/association.hpp"

#include "oracles.hpp"

#include <doctest.h>

#include <algorithm>
#include <set>

using namespace fusiontrack;
using namespace fusiontrack::association;
using oracle::Gen;

namespace {

FlowProblem random_problem(Gen& gen, Index m, Index n, bool integer_scores) {
  auto draw = [&](double lo, double hi) {
    return integer_scores ? static_cast<double>(gen.integer(static_cast<int>(lo), static_cast<int>(hi))) : gen.uniform(lo, hi);
  };
  Matrix s(m, n);
  for (Index i = 0; i < s.size(); ++i) s(i) = draw(-3, 3);
  Vector nw(n), en(m);
  for (Index j = 0; j < n; ++j) nw(j) = draw(-2, 1);
  for (Index i = 0; i < m; ++i) en(i) = draw(-2, 1);
  return make_flow_problem(s, nw, en);
}

void check_partition(const FlowProblem& p, const Assignment& a) {
  std::set<Index> rows, cols;
  for (const auto& [i, j] : a.links) {
    CHECK(rows.insert(i).second);
    CHECK(cols.insert(j).second);
  }
  for (Index i : a.deaths) CHECK(rows.insert(i).second);
  for (Index j : a.births) CHECK(cols.insert(j).second);
  for (Index j : a.discarded) CHECK(cols.insert(j).second);
  CHECK(static_cast<Index>(rows.size()) == p.tracklets());
  CHECK(static_cast<Index>(cols.size()) == p.total_detections);
}

}  // namespace

TEST_CASE("solver examples") {
  Matrix s(1, 1);
  s << 0.9;
  Vector minus2(1);
  minus2 << -2;
  Assignment a = solve_assignment(make_flow_problem(s, minus2, minus2));
  CHECK(a.links == std::vector<std::pair<Index, Index>>{{0, 0}});
  CHECK(a.births.empty());
  CHECK(a.deaths.empty());

  s << -5;
  a = solve_assignment(make_flow_problem(s, Vector::Zero(1), Vector::Zero(1)));
  CHECK(a.links.empty());
  CHECK(a.births == std::vector<Index>{0});
  CHECK(a.deaths == std::vector<Index>{0});

  const FlowProblem empty = make_flow_problem(Matrix(0, 0), Vector(0), Vector(0));
  CHECK(solve_assignment(empty) == Assignment{});
  CHECK(brute_force_assignment(empty) == Assignment{});
}

TEST_CASE("tie goes to the first tracklet") {
  Matrix s(2, 1);
  s << 1.0, 1.0;
  const FlowProblem p = make_flow_problem(s, Vector::Zero(1), Vector::Zero(2));
  const Assignment a = solve_assignment(p);
  CHECK(a.links == std::vector<std::pair<Index, Index>>{{0, 0}});
  CHECK(a.deaths == std::vector<Index>{1});
  CHECK(brute_force_assignment(p) == a);
}

TEST_CASE("brute force guards its size") {
  Gen gen(1);
  CHECK_NOTHROW(brute_force_assignment(random_problem(gen, 6, 6, false)));
  CHECK_THROWS(brute_force_assignment(random_problem(gen, 7, 2, false)));
  CHECK_THROWS(brute_force_assignment(random_problem(gen, 2, 7, false)));
}

TEST_CASE("flow problem construction") {
  AdjacencyScores sc;
  sc.affinity = Matrix::Constant(1, 1, 0.3);
  sc.new_score = Vector::Constant(1, 0.5);
  sc.end_score = Vector::Constant(1, 0.5);
  sc.confidence = Vector::Constant(1, 0.9);
  const FlowProblem p = build_flow_problem(sc, 0.5);
  CHECK(p.variables() == 3);
  CHECK(p.constraints() == 2);
  const LinearRelaxation lp = linear_relaxation(p);
  CHECK(lp.A.rows() == 2);
  CHECK(lp.A.cols() == 3);

  AdjacencyScores low;
  low.affinity = Matrix::Constant(2, 3, 5.0);
  low.new_score = Vector::Constant(3, 0.9);
  low.end_score = Vector::Constant(2, 0.1);
  low.confidence = Vector::Constant(3, 0.2);
  const FlowProblem q = build_flow_problem(low, 0.5);
  CHECK(q.retained() == 0);
  CHECK(q.variables() == 2);
  const Assignment a = solve_assignment(q);
  CHECK(a.deaths == std::vector<Index>{0, 1});
  CHECK(a.discarded == std::vector<Index>{0, 1, 2});
  check_partition(q, a);
}

TEST_CASE("confidence gating keeps original detection indices") {
  AdjacencyScores sc;
  sc.affinity = Matrix::Zero(1, 3);
  sc.affinity(0, 2) = 4.0;
  sc.new_score = Vector::Constant(3, 0.3);
  sc.end_score = Vector::Constant(1, 0.3);
  sc.confidence = (Vector(3) << 0.9, 0.1, 0.8).finished();
  const FlowProblem p = build_flow_problem(sc, 0.5);
  CHECK(p.detection == std::vector<Index>{0, 2});
  const Assignment a = solve_assignment(p);
  CHECK(a.links == std::vector<std::pair<Index, Index>>{{0, 2}});
  CHECK(a.births == std::vector<Index>{0});
  CHECK(a.discarded == std::vector<Index>{1});
}

TEST_CASE("solver is optimal against exhaustive enumeration") {
  Gen gen(2024);
  for (int trial = 0; trial < 300; ++trial) {
    const Index m = gen.integer(0, 4), n = gen.integer(0, 4);
    const bool ties = trial % 2 == 1;
    const FlowProblem p = random_problem(gen, m, n, ties);
    const Assignment fast = solve_assignment(p);
    const Assignment slow = brute_force_assignment(p);
    check_partition(p, fast);
    CHECK(objective(p, fast) == objective(p, slow));
    CHECK(fast == slow);
    const double best = oracle::best_objective(p.affinity, p.new_logit, p.end_logit);
    CHECK(std::abs(objective(p, fast) - best) <= 1e-12);
  }
}

TEST_CASE("larger instances against enumeration") {
  Gen gen(5);
  for (int trial = 0; trial < 30; ++trial) {
    const FlowProblem p = random_problem(gen, gen.integer(3, 6), gen.integer(3, 6), trial % 3 == 0);
    CHECK(solve_assignment(p) == brute_force_assignment(p));
  }
}

TEST_CASE("linear relaxation has integral optima") {
  Gen gen(77);
  for (int trial = 0; trial < 100; ++trial) {
    const FlowProblem p = random_problem(gen, gen.integer(1, 4), gen.integer(1, 4), false);
    const LinearRelaxation lp = linear_relaxation(p);
    const oracle::LpResult r = oracle::simplex_max(lp.A, lp.b, lp.c);
    REQUIRE(r.feasible);
    for (Index v = 0; v < r.x.size(); ++v) CHECK(std::min(std::abs(r.x(v)), std::abs(r.x(v) - 1.0)) <= 1e-9);
    const Vector y = r.x.array().round();
    CHECK((lp.A * y - lp.b).cwiseAbs().maxCoeff() == 0.0);
    const Assignment a = assignment_from_solution(p, y);
    CHECK(a == solve_assignment(p));
    CHECK(std::abs(r.value - objective(p, a)) <= 1e-9);
  }
}

TEST_CASE("assignment log has one line per decision") {
  Matrix s(2, 2);
  s << 3, -1, -1, -5;
  const Assignment a = solve_assignment(make_flow_problem(s, Vector::Zero(2), Vector::Zero(2)));
  const std::string log = format_assignment(a, 4);
  CHECK(std::count(log.begin(), log.end(), '\n') == 3);
}

TEST_CASE("estimator heads") {
  ParamStore store;
  const EstimatorHeads h = add_estimator_heads(store, "head", 4, 1);
  Gen gen(3);
  const Matrix prev = gen.matrix(3, 4, -1, 1), cur = gen.matrix(5, 4, -1, 1);
  const Matrix s = estimate_affinity(store, h.affinity, prev, cur);
  CHECK(s.rows() == 3);
  CHECK(s.cols() == 5);
  CHECK(estimate_affinity(store, h.affinity, Matrix(0, 4), cur).size() == 0);
  CHECK(estimate_affinity(store, h.affinity, prev, Matrix(0, 4)).size() == 0);
  CHECK_THROWS_AS(estimate_affinity(store, h.affinity, prev, gen.matrix(2, 3, 0, 1)), nn::ShapeError);

  Matrix rev = cur.colwise().reverse();
  CHECK((estimate_affinity(store, h.affinity, prev, rev) - s.rowwise().reverse()).cwiseAbs().maxCoeff() <= 1e-14);

  const StartEnd se = estimate_start_end(store, h, cur);
  for (Index r = 0; r < 5; ++r) {
    const StartEnd one = estimate_start_end(store, h, cur.row(r));
    CHECK(one.new_score(0) == se.new_score(r));
    CHECK(one.end_score(0) == se.end_score(r));
  }
  const Matrix wide = gen.matrix(1000, 4, -50, 50);
  const StartEnd ws = estimate_start_end(store, h, wide);
  const Vector wc = estimate_confidence(store, h, wide);
  for (const Vector* v : {&ws.new_score, &ws.end_score, &wc}) {
    CHECK(v->minCoeff() > 0.0);
    CHECK(v->maxCoeff() < 1.0);
  }

  oracle::zero_params(store);
  const StartEnd z = estimate_start_end(store, h, cur);
  CHECK((z.new_score.array() == 0.5).all());
  CHECK((z.end_score.array() == 0.5).all());
  CHECK((estimate_confidence(store, h, cur).array() == 0.5).all());
}

TEST_CASE("negative-L1 stub affinity peaks at identical features") {
  ParamStore store;
  const Index d = 3;
  const EstimatorHeads h = add_estimator_heads(store, "head", d, 1);
  oracle::zero_params(store);
  Matrix& w0 = store.value(h.affinity.layers[0].weight);  // d x 3d
  for (Index k = 0; k < d; ++k) w0(k, 2 * d + k) = 1.0;
  store.value(h.affinity.layers[1].weight).setConstant(-1.0);
  Gen gen(4);
  const Matrix cur = gen.matrix(4, d, -1, 1);
  const Matrix prev = cur.row(2);
  const Matrix s = estimate_affinity(store, h.affinity, prev, cur);
  CHECK(s(0, 2) == 0.0);
  Index best = 0;
  s.row(0).maxCoeff(&best);
  CHECK(best == 2);
  CHECK(s(0, 0) == doctest::Approx(-(cur.row(0) - cur.row(2)).cwiseAbs().sum()));
}

TEST_CASE("birth and death bookkeeping") {
  TrackletStore store;
  auto box = [](double x) {
    LabeledBox b;
    b.class_name = "Car";
    b.bbox = {x, 0, x + 10, 10};
    return b;
  };
  const Matrix feats = Matrix::Identity(3, 3);
  Assignment born;
  born.births = {0, 1, 2};
  auto out = birth_death_update(born, store, 0, {box(0), box(20), box(40)}, feats, 2);
  REQUIRE(out.size() == 3);
  CHECK(out[0].track_id == 0);
  CHECK(out[2].track_id == 2);

  Assignment keep;
  keep.links = {{0, 0}, {1, 1}};
  keep.deaths = {2};
  out = birth_death_update(keep, store, 1, {box(1), box(21)}, feats.topRows(2), 2);
  CHECK(out[0].track_id == 0);
  CHECK(out[1].track_id == 1);
  CHECK(store.active().size() == 3);  // tracklet 2 missed once

  // explicit end score ends a tracklet at once
  Assignment end_one;
  end_one.links = {{0, 0}};
  end_one.deaths = {1, 2};
  birth_death_update(end_one, store, 2, {box(2)}, feats.topRows(1), 2, (Vector(3) << 0.1, 0.9, 0.1).finished());
  CHECK(store.tracklets()[1].state == TrackState::ended);
  CHECK(store.tracklets()[2].state == TrackState::active);

  Assignment bad;
  bad.links = {{5, 0}};
  CHECK_THROWS(birth_death_update(bad, store, 3, {box(3)}, feats.topRows(1), 2));
}

TEST_CASE("a tracklet that misses max_age + 1 frames is gone") {
  TrackletStore store;
  LabeledBox b;
  b.bbox = {0, 0, 10, 10};
  const Matrix f = Matrix::Ones(1, 2);
  Assignment born;
  born.births = {0};
  birth_death_update(born, store, 0, {b}, f, 2);
  Assignment miss;
  miss.deaths = {0};
  for (int frame = 1; frame <= 3; ++frame) {
    CHECK(store.active().size() == 1);
    birth_death_update(miss, store, frame, {}, Matrix(0, 2), 2);
  }
  CHECK(store.active().empty());
  const auto out = birth_death_update(born, store, 4, {b}, f, 2);
  CHECK(out[0].track_id == 1);
}
