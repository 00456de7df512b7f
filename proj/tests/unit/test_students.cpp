#include <doctest.h>

#include <cmath>
#include <numeric>

#include "promos/error.hpp"
#include "promos/students.hpp"
#include "support.hpp"

using namespace promos;

namespace {

StudentEnsemble ensemble(std::size_t d, std::size_t n, std::size_t k, std::uint64_t seed = 1) {
  return init_students(d, 4, n, k, 0.1, Rng(seed).split("s"), Rng(seed).split("r"));
}

void zero(Mlp& m) {
  for (auto* p : m.parameters())
    for (double& v : p->value.data()) v = 0.0;
}

// f(v) = s*v exactly: w1 = [I, -I], relu, w2 = s*[I; -I].
void make_linear(Mlp& m, std::size_t d, double s) {
  m.w1.value = Tensor::matrix(d, 2 * d);
  m.b1.value = Tensor::matrix(1, 2 * d);
  m.w2.value = Tensor::matrix(2 * d, d);
  m.b2.value = Tensor::matrix(1, d);
  for (std::size_t i = 0; i < d; ++i) {
    m.w1.value(i, i) = 1.0;
    m.w1.value(i, d + i) = -1.0;
    m.w2.value(i, i) = s;
    m.w2.value(d + i, i) = -s;
  }
}

}  // namespace

TEST_CASE("sample_mask rates and determinism") {
  const Mask zero_rate = sample_mask(10, 10, 0.0, 3);
  for (double v : zero_rate.m.data()) CHECK(v == 1.0);
  const Mask m = sample_mask(100, 100, 0.1, 7);
  const double ones = std::accumulate(m.m.data().begin(), m.m.data().end(), 0.0) / 10000.0;
  CHECK(ones >= 0.88);
  CHECK(ones <= 0.92);
  CHECK(sample_mask(100, 100, 0.1, 7).m == m.m);
  CHECK(inactive_mask(3, 3).m == Tensor::matrix(3, 3, 1.0));
  CHECK(!inactive_mask(3, 3).active);
  CHECK_THROWS_AS(sample_mask(2, 2, 1.0, 0), ValidationError);
}

TEST_CASE("shared branch: skip only, fully masked, hand computation") {
  StudentEnsemble ens = ensemble(2, 3, 2);
  Rng rng(2);
  const Tensor x = testing::random_tensor(5, 2, rng);
  ad::Tape tape;
  ad::Var xv = tape.constant(x);
  zero(ens.shared);
  CHECK(shared_forward(tape, xv, inactive_mask(5, 2), ens).value() == x);

  ens = ensemble(2, 3, 2);
  Mask off{Tensor::matrix(5, 2), 0, true};
  const Tensor h = shared_forward(tape, xv, off, ens).value();
  const Tensor f0 = ens.shared.forward(tape, tape.constant(Tensor::matrix(1, 2))).value();
  for (std::size_t r = 0; r < 5; ++r)
    for (std::size_t c = 0; c < 2; ++c) CHECK(h(r, c) == doctest::Approx(f0(0, c) + x(r, c)));

  // Hand-set 2x2: w1=[[1,2],[3,-4]], b1=0, relu, w2=[[1,0],[0,1]], b2=[0.5,0].
  Mlp& m = ens.shared;
  m.w1.value = Tensor::from_rows({{1, 2}, {3, -4}});
  m.b1.value = Tensor::matrix(1, 2);
  m.w2.value = Tensor::identity(2);
  m.b2.value = Tensor::row({0.5, 0});
  // x=[1,1]: pre = [4,-2], relu [4,0], out [4.5, 0], plus skip -> [5.5, 1].
  const Tensor one = Tensor::row({1, 1});
  const Tensor out = shared_forward(tape, tape.constant(one), inactive_mask(1, 2), ens).value();
  CHECK(out(0, 0) == 5.5);
  CHECK(out(0, 1) == 1.0);
}

TEST_CASE("routing: dense, example row, uniform ties, sparsity") {
  ad::Tape tape;
  SUBCASE("probs row [0.5,0.3,0.2] with K=2") {
    StudentEnsemble ens = ensemble(3, 3, 2);
    ens.router.value = Tensor::identity(3);
    const double l[3] = {std::log(0.5), std::log(0.3), std::log(0.2)};
    const Routing r = route(tape, tape.constant(Tensor::row({l[0], l[1], l[2]})), ens);
    const Tensor& g = r.gates.value();
    CHECK(g(0, 0) == doctest::Approx(0.5));
    CHECK(g(0, 1) == doctest::Approx(0.3));
    CHECK(g(0, 2) == 0.0);
    CHECK(r.selected[0] == std::vector<std::size_t>{0, 1});
  }
  SUBCASE("K=N gates equal probs") {
    StudentEnsemble ens = ensemble(4, 3, 3);
    Rng rng(1);
    const Routing r = route(tape, tape.constant(testing::random_tensor(6, 4, rng)), ens);
    CHECK(r.gates.value() == r.probs.value());
  }
  SUBCASE("zero router gives uniform probs and lowest-index ties") {
    StudentEnsemble ens = ensemble(4, 5, 2);
    ens.router.value = Tensor::matrix(5, 4);
    Rng rng(1);
    const Routing r = route(tape, tape.constant(testing::random_tensor(3, 4, rng)), ens);
    for (std::size_t i = 0; i < 3; ++i) {
      CHECK(r.gates.value()(i, 0) == doctest::Approx(0.2));
      CHECK(r.gates.value()(i, 1) == doctest::Approx(0.2));
      for (std::size_t p = 2; p < 5; ++p) CHECK(r.gates.value()(i, p) == 0.0);
    }
  }
  SUBCASE("sparsity, exact gate values, histogram sums to nK") {
    StudentEnsemble ens = ensemble(4, 6, 2);
    Rng rng(3);
    const Routing r = route(tape, tape.constant(testing::random_tensor(20, 4, rng)), ens);
    for (std::size_t i = 0; i < 20; ++i) {
      double rowsum = 0;
      std::size_t nz = 0;
      for (std::size_t p = 0; p < 6; ++p) {
        rowsum += r.probs.value()(i, p);
        if (r.gates.value()(i, p) != 0.0) {
          ++nz;
          CHECK(r.gates.value()(i, p) == r.probs.value()(i, p));
        }
      }
      CHECK(nz <= 2);
      CHECK(rowsum == doctest::Approx(1.0).epsilon(1e-12));
    }
    const auto hist = r.activation_histogram(6);
    CHECK(std::accumulate(hist.begin(), hist.end(), std::size_t{0}) == 40);
  }
}

TEST_CASE("personalized branch: skip only, single expert, linear combination") {
  ad::Tape tape;
  Rng rng(5);
  const Tensor x = testing::random_tensor(4, 2, rng);
  SUBCASE("all student maps zero") {
    StudentEnsemble ens = ensemble(2, 3, 2);
    for (auto& m : ens.personalized) zero(m);
    ad::Var xv = tape.constant(x);
    const Routing r = route(tape, xv, ens);
    CHECK(personalized_forward(tape, xv, inactive_mask(4, 2), r, ens).h.value() == x);
  }
  SUBCASE("gates [0.6,0.4], f1(v)=v, f2(v)=-v") {
    StudentEnsemble ens = ensemble(2, 2, 2);
    make_linear(ens.personalized[0], 2, 1.0);
    make_linear(ens.personalized[1], 2, -1.0);
    // Router so that every row has probs [0.6, 0.4]: logits differ by ln(1.5) via a constant column.
    Tensor xr = Tensor::matrix(4, 2);
    for (std::size_t i = 0; i < 4; ++i) xr(i, 0) = 1.0, xr(i, 1) = x(i, 1);
    ens.router.value = Tensor::from_rows({{std::log(1.5), 0}, {0, 0}});
    ad::Var xv = tape.constant(xr);
    const Mask mask = sample_mask(4, 2, 0.3, 11);
    const Routing r = route(tape, xv, ens);
    const Tensor h = personalized_forward(tape, xv, mask, r, ens).h.value();
    for (std::size_t i = 0; i < 4; ++i)
      for (std::size_t c = 0; c < 2; ++c)
        CHECK(h(i, c) == doctest::Approx(0.2 * xr(i, c) * mask.m(i, c) + xr(i, c)).epsilon(1e-12));
  }
  SUBCASE("K=1 single expert; idle students are not evaluated") {
    StudentEnsemble ens = ensemble(2, 3, 1);
    ens.router.value = Tensor::from_rows({{0, 0}, {5, 0}, {0, 0}});
    Tensor xr = Tensor::matrix(4, 2);
    for (std::size_t i = 0; i < 4; ++i) xr(i, 0) = 1.0 + static_cast<double>(i), xr(i, 1) = x(i, 1);
    ad::Var xv = tape.constant(xr);
    const Routing r = route(tape, xv, ens);
    const auto out = personalized_forward(tape, xv, inactive_mask(4, 2), r, ens);
    CHECK(out.evaluated == std::vector<std::size_t>{1});
    const Tensor f = ens.personalized[1].forward(tape, xv).value();
    for (std::size_t i = 0; i < 4; ++i) {
      const double w = r.probs.value()(i, 1);
      for (std::size_t c = 0; c < 2; ++c) CHECK(out.h.value()(i, c) == doctest::Approx(w * f(i, c) + xr(i, c)));
    }
  }
}

TEST_CASE("router receives gradient through kept gates (grad_check on a 3-node toy)") {
  StudentEnsemble ens = ensemble(3, 4, 2, 7);
  for (auto& m : ens.personalized)
    for (double& v : m.w2.value.data()) v = 0.3;
  Rng rng(8);
  const Tensor x = testing::random_tensor(3, 3, rng);
  auto f = [&](ad::Tape& tape, ad::Var w) {
    StudentEnsemble local = ens;
    local.router.value = w.value();
    ad::Var xv = tape.constant(x);
    ad::Var logits = ad::matmul_nt(xv, w);
    Routing r = route(tape, xv, local);
    // Recompose the gates from the differentiable logits with route()'s selection.
    Tensor keep = Tensor::matrix(3, 4);
    for (std::size_t i = 0; i < 3; ++i)
      for (auto p : r.selected[i]) keep(i, p) = 1.0;
    ad::Var gates = ad::mul_const(ad::row_softmax(logits), keep);
    r.gates = gates;
    auto out = personalized_forward(tape, xv, inactive_mask(3, 3), r, local);
    return ad::sum(ad::mul(out.h, out.h));
  };
  CHECK(ad::grad_check(f, ens.router.value, 1e-6) < 1e-4);

  ad::Tape tape;
  ad::Var xv = tape.constant(x);
  const Routing r = route(tape, xv, ens);
  auto out = personalized_forward(tape, xv, inactive_mask(3, 3), r, ens);
  auto g = tape.backward(ad::sum(ad::mul(out.h, out.h)));
  double norm = 0;
  for (double v : g.of(ens.router).data()) norm += v * v;
  CHECK(norm > 0.0);
}

TEST_CASE("ensemble validation and initial identity") {
  CHECK_THROWS_AS(ensemble(3, 2, 3), ValidationError);
  CHECK_THROWS_AS(ensemble(3, 2, 0), ValidationError);
  StudentEnsemble ens = ensemble(3, 4, 2);
  Rng rng(1);
  const Tensor x = testing::random_tensor(5, 3, rng);
  ad::Tape tape;
  ad::Var xv = tape.constant(x);
  CHECK(shared_forward(tape, xv, sample_mask(5, 3, 0.2, 1), ens).value() == x);
  const Routing r = route(tape, xv, ens);
  CHECK(personalized_forward(tape, xv, sample_mask(5, 3, 0.2, 1), r, ens).h.value() == x);
}

TEST_CASE("router auxiliary losses") {
  StudentEnsemble ens = ensemble(3, 4, 2);
  ens.router.value = Tensor::matrix(4, 3);
  Rng rng(1);
  ad::Tape tape;
  const Routing r = route(tape, tape.constant(testing::random_tensor(8, 3, rng)), ens);
  // Uniform probs with everything routed to students 0 and 1: N * (0.5*0.25 + 0.5*0.25) = 1.
  CHECK(load_balance_loss(r, 4).value().item() == doctest::Approx(1.0));
  CHECK(router_z_loss(r).value().item() == doctest::Approx(std::log(4.0) * std::log(4.0)));
}
