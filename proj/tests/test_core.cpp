#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "bodyfit/ad.hpp"
#include "bodyfit/rng.hpp"
#include "bodyfit/vec.hpp"

using namespace bodyfit;

TEST_CASE("vec3 basics") {
  const Vec3d a(1, 2, 3), b(4, 5, 6);
  CHECK(a.dot(b) == doctest::Approx(32.0));
  const Vec3d c = a.cross(b);
  CHECK(c.x == doctest::Approx(-3.0));
  CHECK(c.y == doctest::Approx(6.0));
  CHECK(c.z == doctest::Approx(-3.0));
  CHECK(a.cross(b).dot(a) == doctest::Approx(0.0));
  CHECK((a - a).norm() == 0.0);
}

TEST_CASE("mat3 multiply and transpose") {
  Mat3d r = Mat3d::identity();
  r(0, 1) = 2.0;
  const Mat3d rt = r.transpose();
  CHECK(rt(1, 0) == 2.0);
  const Vec3d v = r * Vec3d(1, 1, 0);
  CHECK(v.x == doctest::Approx(3.0));
  CHECK((r * Mat3d::identity())(0, 1) == doctest::Approx(2.0));
}

TEST_CASE("transform composition matches sequential application") {
  Transformd a, b;
  a.linear(0, 0) = 2.0;
  a.translation = Vec3d(1, 0, 0);
  b.linear = Mat3d::identity();
  b.translation = Vec3d(0, 3, 0);
  const Vec3d p(1, 1, 1);
  const Vec3d via_compose = (a * b).apply(p);
  const Vec3d via_sequence = a.apply(b.apply(p));
  CHECK((via_compose - via_sequence).norm() == doctest::Approx(0.0));
}

namespace {
// y = exp(sin(x0) * x1) + x0^2 / x1 - log(x1) * sqrt(x0)
double reference(double x0, double x1) {
  return std::exp(std::sin(x0) * x1) + x0 * x0 / x1 - std::log(x1) * std::sqrt(x0);
}
ad::Var taped(ad::Tape& tape, double x0v, double x1v, ad::Var& x0, ad::Var& x1) {
  x0 = ad::leaf(tape, x0v);
  x1 = ad::leaf(tape, x1v);
  using namespace bodyfit::ad;
  return exp(sin(x0) * x1) + x0 * x0 / x1 - log(x1) * sqrt(x0);
}
}  // namespace

TEST_CASE("tape gradients match central differences") {
  Rng rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    const double x0 = rng.uniform(0.2, 2.0);
    const double x1 = rng.uniform(0.5, 3.0);
    ad::Tape tape;
    ad::Var v0, v1;
    const ad::Var y = taped(tape, x0, x1, v0, v1);
    CHECK(y.val() == doctest::Approx(reference(x0, x1)));
    const auto adj = tape.backward(y.i);
    const double h = 1e-6;
    const double g0 = (reference(x0 + h, x1) - reference(x0 - h, x1)) / (2 * h);
    const double g1 = (reference(x0, x1 + h) - reference(x0, x1 - h)) / (2 * h);
    CHECK(adj[v0.i] == doctest::Approx(g0).epsilon(1e-6));
    CHECK(adj[v1.i] == doctest::Approx(g1).epsilon(1e-6));
  }
}

TEST_CASE("constants stay off the tape") {
  ad::Tape tape;
  const ad::Var x = ad::leaf(tape, 2.0);
  const std::size_t before = tape.size();
  const ad::Var c = ad::Var(3.0) * ad::Var(4.0) + ad::Var(1.0);
  CHECK(c.val() == 13.0);
  CHECK(c.is_const());
  CHECK(tape.size() == before);
  const ad::Var y = x * c;  // one node
  CHECK(y.val() == 26.0);
  const auto adj = tape.backward(y.i);
  CHECK(adj[x.i] == doctest::Approx(13.0));
}

TEST_CASE("mixed const/var arithmetic differentiates correctly") {
  ad::Tape tape;
  const ad::Var x = ad::leaf(tape, 3.0);
  const ad::Var y = 2.0 * x * x + ad::Var(5.0) / x;
  const auto adj = tape.backward(y.i);
  CHECK(adj[x.i] == doctest::Approx(2.0 * 2.0 * 3.0 - 5.0 / 9.0));
}

TEST_CASE("vec3 of vars differentiates through norms") {
  ad::Tape tape;
  Vec3<ad::Var> v(ad::leaf(tape, 1.0), ad::leaf(tape, 2.0), ad::leaf(tape, 2.0));
  const ad::Var n = v.norm();
  CHECK(n.val() == doctest::Approx(3.0));
  const auto adj = tape.backward(n.i);
  CHECK(adj[v.x.i] == doctest::Approx(1.0 / 3.0));
  CHECK(adj[v.y.i] == doctest::Approx(2.0 / 3.0));
}

TEST_CASE("rng is deterministic and sane") {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) CHECK(a.next() == b.next());
  Rng r(1);
  double mean = 0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) mean += r.normal();
  mean /= n;
  CHECK(std::abs(mean) < 0.03);
  Rng u(2);
  for (int i = 0; i < 1000; ++i) {
    const double x = u.uniform();
    CHECK(x >= 0.0);
    CHECK(x < 1.0);
  }
  for (int i = 0; i < 1000; ++i) {
    const int k = u.uniform_int(3, 7);
    CHECK(k >= 3);
    CHECK(k <= 7);
  }
}
