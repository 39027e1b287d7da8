#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <vector>

#include "spn/errors.hpp"
#include "spn/grad_check.hpp"
#include "spn/heads.hpp"

using namespace spn;
namespace a = spn::ad;

TEST_CASE("action head computes linear logits and softmax probabilities") {
  ParamStore store;
  Rng rng(3);
  ActionHead head(store, "act", 2, 3, rng);
  store.named("act.w")->value = DenseArray({2, 3}, {1.0, 0.0, -1.0,
                                                    0.0, 2.0, 1.0});
  const ad::Var f = a::constant(DenseArray({1, 2}, {1.0, 2.0}));
  const ad::Var lg = head.logits(f);
  REQUIRE(lg->value.shape == std::vector<std::int64_t>({1, 3}));
  CHECK(lg->value.data[0] == doctest::Approx(1.0));
  CHECK(lg->value.data[1] == doctest::Approx(4.0));
  CHECK(lg->value.data[2] == doctest::Approx(1.0));

  const ad::Var pr = head.predict(f);
  const double z = std::exp(1.0) + std::exp(4.0) + std::exp(1.0);
  CHECK(pr->value.data[0] == doctest::Approx(std::exp(1.0) / z).epsilon(1e-12));
  CHECK(pr->value.data[1] == doctest::Approx(std::exp(4.0) / z).epsilon(1e-12));
  double sum = 0.0;
  for (const double v : pr->value.data) sum += v;
  CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("an all-zero bottleneck yields exactly uniform action probabilities") {
  ParamStore store;
  Rng rng(5);
  ActionHead head(store, "act", 4, 3, rng);
  const ad::Var pr = head.predict(a::constant(DenseArray::zeros({2, 4})));
  for (const double v : pr->value.data)
    CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
}

TEST_CASE("action head validates geometry") {
  ParamStore store;
  Rng rng(5);
  CHECK_THROWS_AS(ActionHead(store, "a0", 4, 1, rng), ConfigError);
  ActionHead head(store, "a1", 4, 3, rng);
  CHECK_THROWS_AS(head.logits(a::constant(DenseArray::zeros({2, 3}))), ShapeError);
}

TEST_CASE("generative head with zero weights copies the anchor") {
  ParamStore store;
  Rng rng(7);
  GenerativeHead head(store, "dec", 3, 2, 4, 5, rng);
  for (const char* name : {"dec.w1", "dec.b1", "dec.w2", "dec.b2", "dec.w3", "dec.b3"}) {
    DenseArray& v = store.named(name)->value;
    for (double& x : v.data) x = 0.0;
  }
  const ad::Var f = a::constant(DenseArray({2, 3}, {1, 2, 3, 4, 5, 6}));
  const ad::Var z = a::constant(DenseArray({2, 2}, {0.3, -0.4, 0.1, 0.9}));
  DenseArray anchor({2, 5}, {1, 2, 3, 4, 5, 6, 7, 8, 9, 10});
  const ad::Var out = head.forward(f, z, a::constant(anchor));
  REQUIRE(out->value.shape == std::vector<std::int64_t>({2, 5}));
  CHECK(out->value.data == anchor.data);
}

TEST_CASE("generative head validates geometry") {
  ParamStore store;
  Rng rng(7);
  GenerativeHead head(store, "dec", 3, 2, 4, 5, rng);
  const ad::Var f = a::constant(DenseArray::zeros({2, 3}));
  const ad::Var z = a::constant(DenseArray::zeros({2, 2}));
  const ad::Var anc = a::constant(DenseArray::zeros({2, 5}));
  CHECK_THROWS_AS(head.forward(a::constant(DenseArray::zeros({2, 4})), z, anc),
                  ShapeError);
  CHECK_THROWS_AS(head.forward(f, a::constant(DenseArray::zeros({1, 2})), anc),
                  ShapeError);
  CHECK_THROWS_AS(head.forward(f, z, a::constant(DenseArray::zeros({2, 4}))),
                  ShapeError);
  CHECK_THROWS_AS(GenerativeHead(store, "d2", 3, 0, 4, 5, rng), ConfigError);
}

TEST_CASE("generative head gradients match finite differences") {
  ParamStore store;
  Rng rng(11);
  GenerativeHead head(store, "dec", 3, 2, 4, 5, rng);

  std::vector<DenseArray> point;
  point.push_back(uniform_init(rng, {2, 3}, 1.0));   // features
  point.push_back(uniform_init(rng, {2, 2}, 1.0));   // noise
  for (std::size_t i = 0; i < store.size(); ++i) point.push_back(store.var(i)->value);

  const DenseArray anchor = uniform_init(rng, {2, 5}, 1.0);
  const auto fn = [&](const std::vector<ad::Var>& vs) {
    store.replace_all(std::vector<ad::Var>(vs.begin() + 2, vs.end()));
    return a::mean_all(head.forward(vs[0], vs[1], a::constant(anchor)));
  };
  const GradCheckResult res = gradient_check(fn, point);
  CHECK(res.checked > 50);
  CHECK(res.max_rel_err < 1e-5);
}

TEST_CASE("argmax breaks ties toward the lowest index") {
  const DenseArray scores({3, 3}, {0.4, 0.4, 0.2,
                                   0.1, 0.5, 0.5,
                                   0.0, 0.1, 0.9});
  const std::vector<int> picks = argmax_rows(scores);
  REQUIRE(picks.size() == 3);
  CHECK(picks[0] == 0);
  CHECK(picks[1] == 1);
  CHECK(picks[2] == 2);
}
