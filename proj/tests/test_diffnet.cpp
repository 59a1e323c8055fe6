#include <gtest/gtest.h>

#include "lex/diffnet/checkpoint.hpp"
#include "lex/diffnet/mlp.hpp"
#include "support.hpp"

#include <fstream>

using namespace lex;
using namespace lex::diffnet;
using lex::test::grad_check;
using lex::test::random_tensor;

namespace {

constexpr double kTol = 1e-3;

Tensor<double> positive(Shape s, Rng& rng) { return random_tensor(std::move(s), rng, 0.2, 2.0); }

}  // namespace

TEST(Tensor, ShapeMustMatchData) {
  EXPECT_THROW(Tensor<double>(Shape{2, 3}, std::vector<double>(5)), DimensionError);
  Tensor<float> t = Tensor<float>::matrix(2, 3, 1.5f);
  EXPECT_EQ(t.size(), 6u);
  EXPECT_EQ(t.rows(), 2u);
  EXPECT_EQ(t.cols(), 3u);
  EXPECT_TRUE(Tensor<float>().empty());
}

TEST(Backward, SumGivesOnes) {
  Var<double> p(Tensor<double>::matrix(2, 2, {1, 2, 3, 4}), true);
  backward(sum(p));
  for (double g : p.grad().storage()) EXPECT_EQ(g, 1.0);
}

TEST(Backward, HalfSquaredNormGivesParameter) {
  Rng rng(1);
  auto x = random_tensor({3, 4}, rng);
  Var<double> p(x, true);
  backward(scale(sum(mul(p, p)), 0.5));
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_DOUBLE_EQ(p.grad()[i], x[i]);
}

TEST(Backward, NonScalarIsContractError) {
  Var<double> p(Tensor<double>::matrix(2, 2), true);
  EXPECT_THROW(backward(p), ContractError);
}

TEST(Backward, SharedSubexpressionAccumulates) {
  Var<double> p(Tensor<double>::scalar(3.0).reshaped({1, 1}), true);
  auto y = mul(p, p);            // p^2
  backward(sum(add(y, y)));      // 2 p^2 -> 4p
  EXPECT_DOUBLE_EQ(p.grad()[0], 12.0);
}

// Central finite differences on every primitive, 64-bit.
TEST(GradCheck, Primitives) {
  Rng rng(7);
  auto a = random_tensor({3, 4}, rng), b = random_tensor({4, 2}, rng), c = random_tensor({3, 4}, rng);
  auto bias = random_tensor({4}, rng);
  auto w = random_tensor({3, 4}, rng);
  auto weighted = [&](const Var<double>& v) { return sum(mul_const(v, w.reshaped(v.shape()))); };

  EXPECT_LT(grad_check([&](auto& x) { return sum(matmul(x, constant(b))); }, a), kTol);
  EXPECT_LT(grad_check([&](auto& x) { return sum(mul(matmul(constant(a), x), matmul(constant(a), x))); }, b), kTol);
  EXPECT_LT(grad_check([&](auto& x) { return weighted(add_bias(constant(a), x)); }, bias), kTol);
  EXPECT_LT(grad_check([&](auto& x) { return weighted(add(x, constant(c))); }, a), kTol);
  EXPECT_LT(grad_check([&](auto& x) { return weighted(sub(constant(c), x)); }, a), kTol);
  EXPECT_LT(grad_check([&](auto& x) { return weighted(mul(x, x)); }, a), kTol);
  EXPECT_LT(grad_check([&](auto& x) { return weighted(soft_min(x, constant(c))); }, a), kTol);
  EXPECT_LT(grad_check([&](auto& x) { return weighted(relu(x)); }, a), kTol);
  EXPECT_LT(grad_check([&](auto& x) { return weighted(sigmoid(x)); }, a), kTol);
  EXPECT_LT(grad_check([&](auto& x) { return weighted(log_sigmoid(x)); }, a), kTol);
  EXPECT_LT(grad_check([&](auto& x) { return weighted(exp(x)); }, a), kTol);
  EXPECT_LT(grad_check([&](auto& x) { return weighted(log(x)); }, positive({3, 4}, rng)), kTol);
  EXPECT_LT(grad_check([&](auto& x) { return weighted(softmax_rows(x)); }, a), kTol);
  EXPECT_LT(grad_check([&](auto& x) { return weighted(log_softmax_rows(x)); }, a), kTol);
  EXPECT_LT(grad_check([&](auto& x) { return sum(mul(logsumexp_rows(x), logsumexp_rows(x))); }, a), kTol);
  EXPECT_LT(grad_check([&](auto& x) { return sum(mul(sum_rows(x), sum_rows(x))); }, a), kTol);
  EXPECT_LT(grad_check([&](auto& x) { return sum(exp(gather_cols(x, {0, 3, 1}))); }, a), kTol);
  EXPECT_LT(grad_check([&](auto& x) { return weighted(broadcast_cols(x, 4)); }, random_tensor({3}, rng)), kTol);
  EXPECT_LT(grad_check([&](auto& x) { return sum(exp(repeat_rows(x, 3))); }, a), kTol);
  EXPECT_LT(grad_check([&](auto& x) { return sum(exp(sum_groups(x, 3))); }, random_tensor({6}, rng)), kTol);
  EXPECT_LT(grad_check([&](auto& x) { return sum(exp(logmeanexp_groups(x, 3))); }, random_tensor({6}, rng)), kTol);
  EXPECT_LT(grad_check([&](auto& x) { return mean(exp(x)); }, a), kTol);
  EXPECT_LT(grad_check([&](auto& x) { return weighted(clamp(x, -0.5, 0.5)); }, a), kTol);
  EXPECT_LT(grad_check([&](auto& x) { return weighted(blend(x, c, a)); }, random_tensor({3, 4}, rng, 0, 1)), kTol);
}

TEST(Mlp, ZeroWeightsSoftmaxIsUniform) {
  MlpSpec spec{4, {5}, 3, Activation::relu, Activation::softmax};
  Rng rng(3);
  auto p = init_mlp<double>(spec, rng);
  for (auto& e : p.entries()) e.var.mutable_value() = Tensor<double>(e.var.shape(), 0.0);
  auto out = mlp_forward(spec, p, random_tensor({6, 4}, rng));
  for (double v : out.storage()) EXPECT_DOUBLE_EQ(v, 1.0 / 3.0);
}

TEST(Mlp, IdentityNetworkReturnsInput) {
  MlpSpec spec{3, {}, 3, Activation::relu, Activation::identity};
  Rng rng(3);
  auto p = init_mlp<double>(spec, rng);
  p.get("W0").mutable_value() = Tensor<double>::matrix(3, 3, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  p.get("b0").mutable_value() = Tensor<double>(Shape{3}, 0.0);
  auto x = random_tensor({5, 3}, rng);
  EXPECT_EQ(mlp_forward(spec, p, x), x);
}

TEST(Mlp, WideSoftmaxRowsSumToOne) {
  MlpSpec spec{11, {200, 200, 200}, 2, Activation::relu, Activation::softmax};
  Rng rng(11);
  auto p = init_mlp<float>(spec, rng);
  Tensor<float> x = random_tensor({64, 11}, rng, -3, 3).cast<float>();
  auto out = mlp_forward(spec, p, x);
  for (std::size_t r = 0; r < out.rows(); ++r) {
    EXPECT_NEAR(out(r, 0) + out(r, 1), 1.0, 1e-6);
    EXPECT_GE(out(r, 0), 0.0f);
  }
}

TEST(Mlp, InputWidthMismatchIsDimensionError) {
  MlpSpec spec{4, {5}, 2};
  Rng rng(3);
  auto p = init_mlp<double>(spec, rng);
  EXPECT_THROW(mlp_forward(spec, p, Tensor<double>::matrix(2, 5)), DimensionError);
}

TEST(Mlp, InitWithinFanInBound) {
  MlpSpec spec{16, {9}, 2};
  Rng rng(5);
  auto p = init_mlp<double>(spec, rng);
  for (double v : p.get("W0").value().storage()) EXPECT_LE(std::abs(v), 0.25);
  for (double v : p.get("b1").value().storage()) EXPECT_LE(std::abs(v), 1.0 / 3.0);
}

TEST(Mlp, CrossEntropyGradientsMatchFiniteDifferences) {
  MlpSpec spec{3, {4, 4}, 3, Activation::relu, Activation::softmax};
  Rng rng(21);
  auto p = init_mlp<double>(spec, rng);
  auto x = random_tensor({5, 3}, rng);
  std::vector<std::size_t> labels{0, 2, 1, 1, 0};
  auto loss = [&](const ParamStore<double>& ps) {
    auto lp = log_softmax_rows(mlp_preactivation(spec, ps, constant(x)));
    Tensor<double> onehot(Shape{5, 3}, 0.0);
    for (std::size_t i = 0; i < 5; ++i) onehot(i, labels[i]) = 1.0;
    return neg(sum(mul_const(lp, onehot)));
  };
  p.zero_grad();
  backward(loss(p));
  for (auto& e : p.entries()) {
    std::vector<double> numeric(e.var.size());
    for (std::size_t i = 0; i < e.var.size(); ++i) {
      const double v0 = e.var.value()[i];
      ParamStore<double> q = p;
      q.get(e.name).mutable_value()[i] = v0 + 1e-4;
      const double fp = loss(q).value()[0];
      q.get(e.name).mutable_value()[i] = v0 - 1e-4;
      const double fm = loss(q).value()[0];
      numeric[i] = (fp - fm) / 2e-4;
    }
    EXPECT_LT(lex::test::max_rel_err(e.var.grad().storage(), numeric), kTol) << e.name;
  }
}

TEST(Adam, ZeroGradZeroDecayLeavesParameters) {
  ParamStore<double> p;
  p.add("w", Tensor<double>::vector({1.0, -2.0}));
  p.zero_grad();
  adam_step(p, {1e-2, 0.0});
  EXPECT_EQ(p.get("w").value()[0], 1.0);
  EXPECT_EQ(p.get("w").value()[1], -2.0);
}

TEST(Adam, ConstantGradientMovesOpposite) {
  ParamStore<double> p;
  p.add("w", Tensor<double>::vector({0.0}));
  double prev = 0.0;
  for (int i = 0; i < 50; ++i) {
    p.get("w").grad() = Tensor<double>::vector({0.7});
    adam_step(p, {1e-2, 0.0});
    EXPECT_LT(p.get("w").value()[0], prev);
    prev = p.get("w").value()[0];
  }
}

TEST(Adam, QuadraticBowlConverges) {
  ParamStore<double> p;
  p.add("w", Tensor<double>::vector({3.0, -2.0, 0.5}));
  for (int i = 0; i < 5000; ++i) {
    p.zero_grad();
    backward(scale(sum(mul(p.get("w"), p.get("w"))), 0.5));
    adam_step(p, {1e-2, 0.0});
  }
  for (double v : p.get("w").value().storage()) EXPECT_LT(std::abs(v), 1e-3);
}

TEST(Adam, MissingGradientIsContractError) {
  ParamStore<double> p;
  p.add("w", Tensor<double>::vector({1.0}));
  EXPECT_THROW(adam_step(p, {}), ContractError);
}

TEST(Adam, DeterministicAcrossIdenticalRuns) {
  auto run = [] {
    MlpSpec spec{3, {8}, 2, Activation::relu, Activation::softmax};
    Rng rng(99);
    auto p = init_mlp<float>(spec, rng);
    Tensor<float> x = random_tensor({10, 3}, rng).cast<float>();
    for (int s = 0; s < 20; ++s) {
      p.zero_grad();
      backward(sum(log(mlp_forward(spec, p, constant(x)))));
      adam_step(p, {1e-3, 1e-3});
    }
    return p.checksum();
  };
  EXPECT_EQ(run(), run());
}

TEST(Checkpoint, RoundTrip) {
  MlpSpec spec{3, {8}, 2};
  Rng rng(4);
  auto p = init_mlp<float>(spec, rng);
  auto dir = lex::test::temp_dir("ckpt");
  NamedTensors tensors;
  append_store(tensors, "theta/", p);
  save_tensors((dir / "c.bin").string(), tensors);
  auto loaded = load_tensors((dir / "c.bin").string());
  ASSERT_EQ(loaded.size(), tensors.size());
  auto q = init_mlp<float>(spec, rng);
  EXPECT_NE(q.checksum(), p.checksum());
  restore_store(loaded, "theta/", q);
  EXPECT_EQ(q.checksum(), p.checksum());
}

TEST(Checkpoint, BadMagicIsParseError) {
  auto dir = lex::test::temp_dir("ckpt_bad");
  { std::ofstream((dir / "bad.bin").string()) << "NOTACKPTxxxxxxxxxxxx"; }
  EXPECT_THROW(load_tensors((dir / "bad.bin").string()), ParseError);
}
