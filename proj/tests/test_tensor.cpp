#include <doctest.h>

#include <cstring>

#include "rsvc/adam.hpp"
#include "rsvc/grad_check.hpp"
#include "rsvc/ops.hpp"
#include "rsvc/selfcheck.hpp"

using namespace rsvc;

TEST_CASE("matmul by the identity returns the other factor") {
  auto I = Tensor<float>::from({2, 2}, {1, 0, 0, 1});
  auto A = Tensor<float>::from({2, 2}, {1, 2, 3, 4});
  auto C = matmul(I, A);
  for (int i = 0; i < 4; ++i) CHECK(C.vec()[i] == A.vec()[i]);
}

TEST_CASE("softmax of a constant vector is uniform and sums to one") {
  auto y = softmax(Tensor<float>::from({3}, {0, 0, 0}));
  for (int i = 0; i < 3; ++i) CHECK(y.vec()[i] == doctest::Approx(1.0f / 3.0f));
  CHECK(y.vec().sum() == doctest::Approx(1.0f));
}

TEST_CASE("l1 distance of a tensor to itself is zero") {
  std::mt19937 rng(3);
  auto x = Tensor<float>::uniform({4, 5}, rng);
  CHECK(l1_distance(x, x).item() == 0.0f);
}

TEST_CASE("backward of x*x at x=3 yields gradient 6") {
  auto x = Tensor<float>::scalar(3.0f, true);
  Tape<float> tape;
  TapeScope<float> scope(tape);
  auto loss = mul(x, x);
  tape.backward(loss);
  CHECK(tape.gradient(x)[0] == doctest::Approx(6.0f));
}

TEST_CASE("two-layer gelu net gradients match central differences at 32-bit") {
  std::mt19937 rng(11);
  // positive draws keep gradient sums cancellation-free, which a same-
  // precision float oracle needs to stay meaningful
  std::vector<Tensor<float>> inputs = {
      Tensor<float>::uniform({4, 4}, rng, 0.3f, 1.0f),  // x
      Tensor<float>::uniform({4, 4}, rng, 0.3f, 1.0f),  // W1
      Tensor<float>::uniform({4}, rng, 0.3f, 1.0f),     // b1
      Tensor<float>::uniform({4, 4}, rng, 0.3f, 1.0f),  // W2
  };
  auto net = [](const std::vector<Tensor<float>>& in) {
    auto h = gelu(add(matmul(in[0], in[1]), in[2]));
    return mean(matmul(h, in[3]));
  };
  auto r = grad_check<float>(net, inputs);
  INFO(r.worst_coordinate);
  CHECK(r.max_rel_err < 1e-3f);
}

TEST_CASE("leaf not on the loss path reads back a zero gradient") {
  auto x = Tensor<float>::from({2}, {1, 2}, true);
  auto y = Tensor<float>::from({2}, {5, 7}, true);
  Tape<float> tape;
  TapeScope<float> scope(tape);
  auto unused = mul(y, y);  // recorded, but never feeds the loss
  auto loss = mean(mul(x, x));
  tape.backward(loss);
  VecX<float> gy = tape.gradient(y);
  CHECK(gy.size() == 2);
  CHECK(gy[0] == 0.0f);
  CHECK(gy[1] == 0.0f);
  CHECK(tape.gradient(x)[0] == doctest::Approx(1.0f));  // d mean(x^2)/dx = 2x/2
}

TEST_CASE("grad_check on sum is exact to rounding (64-bit)") {
  std::mt19937 rng(5);
  auto x = Tensor<double>::uniform({4, 4}, rng);
  auto r = grad_check<double>([](const std::vector<Tensor<double>>& in) { return sum(in[0]); },
                              {x});
  CHECK(r.max_rel_err < 1e-9);
}

TEST_CASE("grad_check of mean(gelu(x)) at x=0.5") {
  auto x = Tensor<float>::scalar(0.5f);
  auto r = grad_check<float>(
      [](const std::vector<Tensor<float>>& in) { return mean(gelu(in[0])); }, {x});
  CHECK(r.max_rel_err < 1e-4f);
}

TEST_CASE("adam first step matches the closed form") {
  Adam<float> opt(AdamConfig<float>{0.1f, 0.9f, 0.98f, 1e-8f});
  auto p = Tensor<float>::scalar(5.0f);
  opt.apply("w", p, VecX<float>::Constant(1, 2.0f));
  CHECK(std::abs(p.item() - 5.0f + 0.1f) < 1e-6f);  // delta = -lr * g / (|g| + eps)
}

TEST_CASE("adam leaves a parameter unchanged under zero gradient") {
  Adam<float> opt;
  auto p = Tensor<float>::from({3}, {1, -2, 3});
  opt.apply("w", p, VecX<float>::Zero(3));
  CHECK(p.vec()[0] == 1.0f);
  CHECK(p.vec()[1] == -2.0f);
  CHECK(p.vec()[2] == 3.0f);
}

TEST_CASE("adam second step under repeated unit gradient moves by -lr") {
  const float lr = 0.05f;
  Adam<float> opt(AdamConfig<float>{lr, 0.9f, 0.98f, 1e-8f});
  auto p = Tensor<float>::scalar(0.0f);
  opt.apply("w", p, VecX<float>::Constant(1, 1.0f));
  const float after_first = p.item();
  opt.apply("w", p, VecX<float>::Constant(1, 1.0f));
  CHECK(std::abs((p.item() - after_first) + lr) < 1e-6f);
}

TEST_CASE("adam rejects a non-finite gradient and names the parameter") {
  Adam<float> opt;
  auto p = Tensor<float>::scalar(1.0f);
  VecX<float> g = VecX<float>::Constant(1, std::numeric_limits<float>::quiet_NaN());
  try {
    opt.apply("decoder.w3", p, g);
    FAIL("expected rejection");
  } catch (const std::runtime_error& e) {
    CHECK(std::string(e.what()).find("decoder.w3") != std::string::npos);
    CHECK(p.item() == 1.0f);
  }
}

TEST_CASE("adam step through a tape rejects NaN without touching parameters") {
  auto w = Tensor<float>::scalar(2.0f, true);
  Tape<float> tape;
  {
    TapeScope<float> scope(tape);
    // log of a negative number manufactures a NaN on the backward path:
    // d/dw sqrt-like compositions are overkill; just seed NaN via values.
    auto loss = mul(w, w);
    tape.backward(loss);
  }
  NamedTensors<float> params = {{"w", w}};
  Adam<float> opt;
  // poison the computed gradient by injecting through apply()
  VecX<float> g = tape.gradient(w);
  g[0] = std::numeric_limits<float>::infinity();
  CHECK_THROWS_AS(opt.apply("w", w, g), std::runtime_error);
  CHECK(w.item() == 2.0f);
}

TEST_CASE("instance norm hits zero mean unit variance per channel") {
  std::mt19937 rng(17);
  auto x = Tensor<float>::uniform({16, 4}, rng);
  auto y = instance_norm(x);
  auto m = y.mat();
  for (Eigen::Index c = 0; c < 4; ++c) {
    const float mu = m.col(c).mean();
    const float var = (m.col(c).array() - mu).square().mean();
    CHECK(std::abs(mu) < 1e-5f);
    CHECK(std::abs(var - 1.0f) < 1e-4f);
  }
}

TEST_CASE("backward is deterministic: same seed gives bit-identical gradients") {
  auto run = [](unsigned seed) {
    std::mt19937 rng(seed);
    auto x = Tensor<float>::uniform({6, 6}, rng);
    auto w1 = Tensor<float>::uniform({6, 6}, rng, -1, 1, true);
    auto b1 = Tensor<float>::uniform({6}, rng, -1, 1, true);
    auto w2 = Tensor<float>::uniform({6, 3}, rng, -1, 1, true);
    Tape<float> tape;
    TapeScope<float> scope(tape);
    auto h = gelu(add(matmul(x, w1), b1));
    auto loss = mean(matmul(h, w2));
    tape.backward(loss);
    std::vector<VecX<float>> grads = {tape.gradient(w1), tape.gradient(b1), tape.gradient(w2)};
    return grads;
  };
  auto a = run(123), b = run(123);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    REQUIRE(a[i].size() == b[i].size());
    CHECK(std::memcmp(a[i].data(), b[i].data(), sizeof(float) * a[i].size()) == 0);
  }
}

TEST_CASE("unknown primitive id is rejected") {
  auto x = Tensor<float>::scalar(1.0f);
  CHECK_THROWS_AS(apply_primitive<float>(static_cast<Primitive>(999), {x}),
                  std::invalid_argument);
}

TEST_CASE("shape mismatch errors carry the offending dims") {
  auto a = Tensor<float>::zeros({2, 3});
  auto b = Tensor<float>::zeros({2, 3});
  try {
    matmul(a, b);
    FAIL("expected rejection");
  } catch (const std::invalid_argument& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[2x3]") != std::string::npos);
  }
  try {
    add(Tensor<float>::zeros({4}), Tensor<float>::zeros({5}));
    FAIL("expected rejection");
  } catch (const std::invalid_argument& e) {
    CHECK(std::string(e.what()).find("[5]") != std::string::npos);
  }
}

TEST_CASE("requires_grad=false input never accumulates gradient") {
  auto x = Tensor<float>::from({2}, {3, 4});  // requires_grad stays false
  auto w = Tensor<float>::from({2}, {1, 2}, true);
  Tape<float> tape;
  TapeScope<float> scope(tape);
  auto loss = mean(mul(x, w));
  tape.backward(loss);
  VecX<float> gx = tape.gradient(x);
  CHECK(gx[0] == 0.0f);
  CHECK(gx[1] == 0.0f);
  VecX<float> gw = tape.gradient(w);
  CHECK(gw[0] == doctest::Approx(1.5f));
  CHECK(gw[1] == doctest::Approx(2.0f));
}

TEST_CASE("detached tensors cut gradient flow") {
  auto w = Tensor<float>::scalar(3.0f, true);
  Tape<float> tape;
  TapeScope<float> scope(tape);
  auto y = mul(w, w);
  auto z = y.detach();
  auto loss = mul(z, z);
  CHECK_THROWS(tape.backward(loss));  // loss never recorded: all inputs detached
}

TEST_CASE("backward rejects a non-scalar loss") {
  auto x = Tensor<float>::from({2}, {1, 2}, true);
  Tape<float> tape;
  TapeScope<float> scope(tape);
  auto y = mul(x, x);
  CHECK_THROWS_AS(tape.backward(y), std::invalid_argument);
}

TEST_CASE("row-broadcast add and its gradient") {
  auto m = Tensor<float>::from({2, 3}, {1, 2, 3, 4, 5, 6}, true);
  auto v = Tensor<float>::from({3}, {10, 20, 30}, true);
  Tape<float> tape;
  TapeScope<float> scope(tape);
  auto y = add(m, v);
  CHECK(y.vec()[0] == 11.0f);
  CHECK(y.vec()[5] == 36.0f);
  auto loss = sum(y);
  tape.backward(loss);
  VecX<float> gv = tape.gradient(v);
  CHECK(gv[0] == 2.0f);  // two rows contribute
  CHECK(gv[2] == 2.0f);
}

TEST_CASE("concat and slice round-trip") {
  auto a = Tensor<float>::from({2, 2}, {1, 2, 3, 4});
  auto b = Tensor<float>::from({2, 1}, {9, 8});
  auto c = concat_cols(a, b);
  CHECK(c.shape == Shape{2, 3});
  CHECK(c.vec()[2] == 9.0f);
  auto back = slice_cols(c, 0, 2);
  for (int i = 0; i < 4; ++i) CHECK(back.vec()[i] == a.vec()[i]);
  auto r = concat_rows(a, transpose(b));
  CHECK(r.shape == Shape{3, 2});
  CHECK(r.vec()[4] == 9.0f);
}

TEST_CASE("every primitive passes the gradient sweep at both precisions") {
  for (const auto& gc : primitive_grad_sweep<float>(4, 2)) {
    INFO(gc.name << ": " << gc.worst);
    CHECK(gc.max_rel_err < primitive_sweep_tolerance<float>());
  }
  for (const auto& gc : primitive_grad_sweep<double>(4, 2)) {
    INFO(gc.name << ": " << gc.worst);
    CHECK(gc.max_rel_err < primitive_sweep_tolerance<double>());
  }
}
