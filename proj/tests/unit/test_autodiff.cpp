#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <random>
#include <string>

#include "check.hpp"
#include "qsector/checkpoint.hpp"
#include "qsector/optim.hpp"

using namespace qsector::ad;
using qtest::random_tensor;

namespace {

// Contracts an op's output with a fixed random tensor so every output element
// contributes to the scalar loss.
struct OpCase {
  std::mt19937_64 rng{11};
  ParameterSet params;
  std::vector<Parameter*> inputs;

  Parameter& input(const std::string& name, Shape shape, double lo = -1.0, double hi = 1.0) {
    auto& p = params.add(name, random_tensor(std::move(shape), rng, lo, hi));
    inputs.push_back(&p);
    return p;
  }

  double check(const std::function<Var(Tape&, std::vector<Var>&)>& op) {
    Tensor w;
    auto loss = [&](Tape& tape) {
      std::vector<Var> vars;
      for (auto* p : inputs) vars.push_back(tape.parameter(*p));
      Var y = op(tape, vars);
      if (w.size() == 0) w = random_tensor(y.shape(), rng);
      return sum(mul(y, tape.constant(w)));
    };
    return qtest::finite_difference_check(inputs, loss, rng, 16).worst;
  }
};

}  // namespace

TEST_CASE("elementwise and reduction ops match finite differences") {
  const double tol = 1e-6;
  {
    OpCase c;
    c.input("a", {2, 3, 4});
    c.input("b", {4});
    CHECK(c.check([](Tape&, auto& v) { return add(v[0], v[1]); }) < tol);
  }
  {
    OpCase c;
    c.input("a", {2, 3, 4});
    c.input("b", {3, 4});
    CHECK(c.check([](Tape&, auto& v) { return mul(v[0], v[1]); }) < tol);
  }
  {
    OpCase c;
    c.input("a", {5, 4});
    c.input("b", {5, 4});
    CHECK(c.check([](Tape&, auto& v) { return sub(v[0], v[1]); }) < tol);
    CHECK(c.check([](Tape&, auto& v) { return minimum(v[0], v[1]); }) < tol);
  }
  {
    OpCase c;
    c.input("a", {3, 6});
    CHECK(c.check([](Tape&, auto& v) { return sigmoid(v[0]); }) < tol);
    CHECK(c.check([](Tape&, auto& v) { return tanh(v[0]); }) < tol);
    CHECK(c.check([](Tape&, auto& v) { return exp(v[0]); }) < tol);
    CHECK(c.check([](Tape&, auto& v) { return square(v[0]); }) < tol);
    CHECK(c.check([](Tape&, auto& v) { return relu(v[0]); }) < tol);
    CHECK(c.check([](Tape&, auto& v) { return scale(add_scalar(neg(v[0]), 0.3), 2.5); }) < tol);
    CHECK(c.check([](Tape&, auto& v) { return softmax(v[0]); }) < tol);
    CHECK(c.check([](Tape&, auto& v) { return log_softmax(v[0]); }) < tol);
    CHECK(c.check([](Tape&, auto& v) { return layer_norm(v[0]); }) < tol);
    CHECK(c.check([](Tape&, auto& v) { return clamp(v[0], -0.5, 0.5); }) < tol);
    CHECK(c.check([](Tape&, auto& v) { return sum_last(v[0]); }) < tol);
    CHECK(c.check([](Tape&, auto& v) { return mean(v[0]); }) < tol);
    CHECK(c.check([](Tape&, auto& v) { return slice_last(v[0], 1, 4); }) < tol);
    CHECK(c.check([](Tape&, auto& v) { return gather_rows(v[0], {5, 0, 2}); }) < tol);
    CHECK(c.check([](Tape&, auto& v) { return reshape(v[0], {2, 9}); }) < tol);
  }
  {
    OpCase c;
    c.input("a", {3, 5}, 0.2, 2.0);
    CHECK(c.check([](Tape&, auto& v) { return log(v[0]); }) < tol);
    CHECK(c.check([](Tape&, auto& v) { return reciprocal(v[0]); }) < tol);
    CHECK(c.check([](Tape&, auto& v) { return normalize_sum(v[0]); }) < tol);
  }
}

TEST_CASE("matrix and sequence ops match finite differences") {
  const double tol = 1e-6;
  {
    OpCase c;
    c.input("a", {2, 3, 4});
    c.input("b", {4, 5});
    CHECK(c.check([](Tape&, auto& v) { return matmul(v[0], v[1]); }) < tol);
  }
  {
    OpCase c;
    c.input("a", {2, 3, 4});
    c.input("b", {2, 4, 3});
    CHECK(c.check([](Tape&, auto& v) { return bmm(v[0], v[1]); }) < tol);
    CHECK(c.check([](Tape&, auto& v) { return transpose_last(v[0]); }) < tol);
    CHECK(c.check([](Tape&, auto& v) { return select_step(v[0], 1); }) < tol);
    CHECK(c.check([](Tape&, auto& v) { return mean_steps(v[0]); }) < tol);
  }
  {
    OpCase c;
    c.input("a", {2, 3});
    c.input("b", {2, 3});
    CHECK(c.check([](Tape&, auto& v) { return stack_steps({v[0], v[1], v[0]}); }) < tol);
    CHECK(c.check([](Tape&, auto& v) { return concat_last({v[1], v[0]}); }) < tol);
  }
}

TEST_CASE("broadcast forward values") {
  Tape tape;
  Var a = tape.constant(Tensor({2, 2}, {1, 2, 3, 4}));
  Var b = tape.constant(Tensor({2}, {10, 20}));
  const Tensor& y = add(a, b).value();
  CHECK(y[0] == 11);
  CHECK(y[3] == 24);
  CHECK_THROWS_AS(add(b, a), ShapeError);
  CHECK_THROWS_AS(matmul(a, tape.constant(Tensor({3, 1}))), ShapeError);
}

TEST_CASE("a parameter bound twice accumulates both paths") {
  ParameterSet ps;
  auto& p = ps.add("p", Tensor({1}, {3.0}));
  Tape tape;
  Var x1 = tape.parameter(p);
  Var x2 = tape.parameter(p);
  tape.backward(sum(mul(x1, x2)));  // p^2
  CHECK(p.grad[0] == doctest::Approx(6.0));
}

TEST_CASE("backward rejects non-scalar losses") {
  Tape tape;
  Var a = tape.constant(Tensor({2}, {1, 2}));
  CHECK_THROWS_AS(tape.backward(a), ShapeError);
}

TEST_CASE("custom node with a wrong cotangent count") {
  ParameterSet ps;
  auto& p = ps.add("p", Tensor({2}, {1, 2}));
  Tape tape;
  Var x = tape.parameter(p);
  Var y = tape.custom(
      std::span<const Var>(&x, 1), [](std::span<const Tensor* const> in) { return *in[0]; },
      [](std::span<const Tensor* const>, const Tensor&, const Tensor& g) { return std::vector<Tensor>{g, g}; });
  CHECK_THROWS_AS(tape.backward(sum(y)), ArityError);
}

TEST_CASE("dropout is identity in eval mode and unbiased in training") {
  std::mt19937_64 rng(3);
  Tape tape;
  Var a = tape.constant(Tensor({1000}, 1.0));
  const Tensor& e = dropout(a, 0.5, false, rng).value();
  CHECK(e[17] == 1.0);
  const Tensor& t = dropout(a, 0.5, true, rng).value();
  double s = 0;
  for (double v : t.storage()) {
    CHECK((v == 0.0 || v == 2.0));
    s += v;
  }
  CHECK(s / 1000.0 == doctest::Approx(1.0).epsilon(0.15));
}

TEST_CASE("adam matches a hand-computed first and second step") {
  ParameterSet ps;
  auto& p = ps.add("p", Tensor({2}, {1.0, -1.0}));
  Adam opt(ps.all(), {0.1, 0.9, 0.999, 1e-8});
  p.grad = Tensor({2}, {0.5, -2.0});
  opt.step();
  // First step moves each coordinate by about lr * sign(g).
  const double x1 = 1.0 - 0.1 * 0.5 / (0.5 + 1e-8);
  CHECK(p.value[0] == doctest::Approx(x1).epsilon(1e-14));
  CHECK(p.value[1] == doctest::Approx(-1.0 + 0.1 * 2.0 / (2.0 + 1e-8)).epsilon(1e-14));
  p.grad = Tensor({2}, {0.5, 1.0});
  opt.step();
  const double m = 0.9 * 0.05 + 0.1 * 0.5, v = 0.999 * 0.00025 + 0.001 * 0.25;
  const double mh = m / (1 - 0.81), vh = v / (1 - 0.999 * 0.999);
  CHECK(p.value[0] == doctest::Approx(x1 - 0.1 * mh / (std::sqrt(vh) + 1e-8)).epsilon(1e-14));
}

TEST_CASE("clip_grad_norm rescales to the bound") {
  ParameterSet ps;
  auto& a = ps.add("a", Tensor({2}));
  auto& b = ps.add("b", Tensor({1}));
  a.grad = Tensor({2}, {3.0, 0.0});
  b.grad = Tensor({1}, {4.0});
  CHECK(clip_grad_norm(ps.all(), 1.0) == doctest::Approx(5.0));
  CHECK(a.grad[0] == doctest::Approx(0.6));
  CHECK(b.grad[0] == doctest::Approx(0.8));
  CHECK(clip_grad_norm(ps.all(), 10.0) == doctest::Approx(1.0));
  CHECK(a.grad[0] == doctest::Approx(0.6));
}

TEST_CASE("checkpoint encode and decode round trip") {
  std::mt19937_64 rng(5);
  ParameterSet ps;
  ps.add("w", random_tensor({3, 4}, rng));
  ps.add("b", random_tensor({4}, rng));
  Checkpoint ck;
  ck.metadata["kind"] = "mlp";
  ck.groups.emplace_back("actor", snapshot(ps));
  auto bytes = encode_checkpoint(ck);
  Checkpoint back = decode_checkpoint(bytes);
  CHECK(back.metadata.at("kind") == "mlp");
  ParameterSet other;
  other.add("w", Tensor({3, 4}));
  other.add("b", Tensor({4}));
  restore(other, back.group("actor"));
  CHECK(other.find("w")->value.storage() == ps.find("w")->value.storage());
  CHECK(encode_checkpoint(back) == bytes);

  auto path = (std::filesystem::temp_directory_path() / "qsector_ckpt_test.bin").string();
  save_checkpoint(ck, path);
  CHECK(encode_checkpoint(load_checkpoint(path)) == bytes);
  std::filesystem::remove(path);

  SUBCASE("corruption is detected") {
    auto bad = bytes;
    bad[bad.size() / 2] ^= 0x40;
    CHECK_THROWS_AS(decode_checkpoint(bad), CheckpointError);
    bad = bytes;
    bad.resize(bytes.size() - 3);
    CHECK_THROWS_AS(decode_checkpoint(bad), CheckpointError);
  }
  SUBCASE("shape mismatch on restore") {
    ParameterSet wrong;
    wrong.add("w", Tensor({4, 3}));
    wrong.add("b", Tensor({4}));
    CHECK_THROWS_AS(restore(wrong, back.group("actor")), CheckpointError);
  }
  CHECK_THROWS_AS(back.group("critic"), CheckpointError);
}
