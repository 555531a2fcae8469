#include <cmath>
#include <random>

#include "doctest.h"
#include "evha/error.hpp"
#include "evha/nn/network.hpp"

using namespace evha::nn;

namespace {

Tensor random_tensor(Shape s, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor t(std::move(s));
  for (double& v : t.values()) v = u(rng);
  return t;
}

// Direct nested-loop convolution with zero padding.
Tensor naive_conv(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int pad) {
  const int c = x.dim(0), h = x.dim(1), wd = x.dim(2), o = w.dim(0), k = w.dim(2);
  const int ho = (h + 2 * pad - k) / stride + 1, wo = (wd + 2 * pad - k) / stride + 1;
  Tensor y({o, ho, wo});
  for (int oc = 0; oc < o; ++oc)
    for (int oy = 0; oy < ho; ++oy)
      for (int ox = 0; ox < wo; ++ox) {
        double acc = b[oc];
        for (int ic = 0; ic < c; ++ic)
          for (int ky = 0; ky < k; ++ky)
            for (int kx = 0; kx < k; ++kx) {
              const int iy = oy * stride - pad + ky, ix = ox * stride - pad + kx;
              if (iy < 0 || iy >= h || ix < 0 || ix >= wd) continue;
              acc += w[((oc * c + ic) * k + ky) * k + kx] * x[(ic * h + iy) * wd + ix];
            }
        y[(oc * ho + oy) * wo + ox] = acc;
      }
  return y;
}

LossFn mse_to(Tensor target) {
  return [target](Tape& t, Var out) { return t.mse_loss(out, target); };
}

void check_grads(Network net, const Tensor& x, std::uint64_t seed) {
  const Shape out = net.output_shape(x.shape());
  const auto r = gradient_check(net, x, mse_to(random_tensor(out, seed)));
  INFO("worst " << r.worst << " err " << r.max_relative_error);
  CHECK(r.checked > 0);
  CHECK(r.max_relative_error < 1e-4);
}

}  // namespace

TEST_CASE("identity network returns its input") {
  Network net({2, 3, 3}, {}, 1);
  const Tensor x = random_tensor({2, 3, 3}, 2);
  CHECK(predict(net, x) == x);
  Network copy = net;
  const auto r = gradient_check(copy, x, mse_to(random_tensor({2, 3, 3}, 3)));
  CHECK(r.max_relative_error < 1e-9);  // zero up to rounding of the difference quotient
}

TEST_CASE("dense layer with zero weights outputs its bias") {
  Network net({4}, {LayerSpec::dense(3)}, 1);
  for (double& v : net.param("L0.w").values()) v = 0.0;
  net.param("L0.b") = Tensor::vector({0.5, -1.0, 2.0});
  CHECK(predict(net, random_tensor({4}, 9)) == Tensor::vector({0.5, -1.0, 2.0}));
}

TEST_CASE("convolution matches the nested-loop oracle") {
  for (auto [k, s, p] : {std::tuple{3, 1, 1}, std::tuple{3, 2, 1}, std::tuple{1, 1, 0}, std::tuple{5, 2, 0}}) {
    Network net({3, 11, 9}, {LayerSpec::conv(4, k, s, p)}, 17);
    const Tensor x = random_tensor({3, 11, 9}, 5);
    const Tensor got = predict(net, x);
    const Tensor want = naive_conv(x, net.param("L0.w"), net.param("L0.b"), s, p);
    REQUIRE(got.shape() == want.shape());
    for (std::size_t i = 0; i < got.size(); ++i) CHECK(got[i] == doctest::Approx(want[i]).epsilon(1e-12));
  }
}

TEST_CASE("shape errors name the failing layer") {
  CHECK_THROWS_WITH_AS(Network({1, 4, 4}, {LayerSpec::dense(2), LayerSpec::conv(2)}, 1),
                       doctest::Contains("layer 1 (conv)"), evha::Error);
  Network net({1, 8, 8}, {LayerSpec::conv(2)}, 1);
  CHECK_THROWS_WITH_AS(predict(net, Tensor({1, 7, 8})), doctest::Contains("input"), evha::Error);
  CHECK_THROWS_AS(Network({1, 4, 4}, {LayerSpec::add_saved(3)}, 1), evha::Error);
}

TEST_CASE("gradient checks for every layer type") {
  SUBCASE("conv") { check_grads(Network({2, 6, 5}, {LayerSpec::conv(3)}, 1), random_tensor({2, 6, 5}, 2), 3); }
  SUBCASE("strided conv") {
    check_grads(Network({2, 7, 7}, {LayerSpec::conv(3, 3, 2, 1)}, 4), random_tensor({2, 7, 7}, 5), 6);
  }
  SUBCASE("maxpool") {
    check_grads(Network({2, 6, 6}, {LayerSpec::conv(2), LayerSpec::maxpool()}, 7), random_tensor({2, 6, 6}, 8), 9);
  }
  SUBCASE("dense + relu") {
    check_grads(Network({6}, {LayerSpec::dense(5), LayerSpec::relu(), LayerSpec::dense(3)}, 10),
                random_tensor({6}, 11), 12);
  }
  SUBCASE("norm") {
    check_grads(Network({3, 4, 5}, {LayerSpec::conv(3), LayerSpec::norm()}, 13), random_tensor({3, 4, 5}, 14), 15);
  }
  SUBCASE("vector norm") {
    check_grads(Network({5}, {LayerSpec::dense(6), LayerSpec::norm(), LayerSpec::dense(3)}, 25), random_tensor({5}, 26),
                27);
  }
  SUBCASE("global average pool") {
    check_grads(Network({2, 4, 4}, {LayerSpec::conv(3), LayerSpec::gap(), LayerSpec::dense(2)}, 16),
                random_tensor({2, 4, 4}, 17), 18);
  }
  SUBCASE("upsample and concat") {
    check_grads(Network({2, 4, 4},
                        {LayerSpec::conv(2), LayerSpec::save(0), LayerSpec::maxpool(), LayerSpec::conv(3),
                         LayerSpec::upsample(), LayerSpec::concat_saved(0), LayerSpec::conv(1, 1)},
                        19),
                random_tensor({2, 4, 4}, 20), 21);
  }
  SUBCASE("residual add with projection") {
    check_grads(Network({2, 4, 4},
                        {LayerSpec::save(0), LayerSpec::conv(3), LayerSpec::norm(), LayerSpec::relu(),
                         LayerSpec::conv(3), LayerSpec::add_saved(0)},
                        22),
                random_tensor({2, 4, 4}, 23), 24);
  }
}

TEST_CASE("loss gradients match finite differences") {
  Network net({5}, {LayerSpec::dense(4)}, 30);
  const Tensor x = random_tensor({5}, 31);
  SUBCASE("softmax cross-entropy") {
    const auto r = gradient_check(net, x, [](Tape& t, Var o) { return t.softmax_cross_entropy(o, 2); });
    CHECK(r.max_relative_error < 1e-4);
  }
  SUBCASE("negative cosine") {
    const Tensor z = random_tensor({4}, 32);
    const auto r = gradient_check(net, x, [z](Tape& t, Var o) { return t.neg_cosine(o, t.input(z)); });
    CHECK(r.max_relative_error < 1e-4);
  }
  SUBCASE("power loss") {
    const Tensor y = random_tensor({4}, 33);
    for (double g : {2.0, 1.3, 0.6}) {
      const auto r = gradient_check(net, x, [y, g](Tape& t, Var o) { return t.power_loss(o, y, 1e-8, g); });
      CHECK(r.max_relative_error < 1e-4);
    }
  }
  SUBCASE("l1 and l2") {
    const Tensor y = random_tensor({4}, 34);
    CHECK(gradient_check(net, x, [y](Tape& t, Var o) { return t.l1_loss(o, y); }).max_relative_error < 1e-4);
    CHECK(gradient_check(net, x, mse_to(y)).max_relative_error < 1e-4);
  }
}

TEST_CASE("sum gradient is all ones and stopgrad blocks it") {
  Tape t;
  const Var x = t.input(random_tensor({2, 3}, 1), true);
  const Var s = t.sum(x);
  t.backward(s);
  for (double g : t.grad(x)) CHECK(g == 1.0);

  Tape t2;
  const Var a = t2.input(random_tensor({3}, 2), true);
  const Var stopped = t2.stopgrad(a);
  CHECK(t2.value(stopped) == t2.value(a));
  t2.backward(t2.sum(t2.scale(stopped, 3.0)));
  CHECK(t2.grad(a).empty());
}

TEST_CASE("negative cosine values") {
  auto nc = [](Tensor p, Tensor z) {
    Tape t;
    return t.value(t.neg_cosine(t.input(p), t.input(z)))[0];
  };
  CHECK(nc(Tensor::vector({1, 2, 3}), Tensor::vector({1, 2, 3})) == doctest::Approx(-1.0).epsilon(1e-15));
  CHECK(nc(Tensor::vector({1, 0}), Tensor::vector({0, 1})) == 0.0);
  CHECK(nc(Tensor::vector({1, 0}), Tensor::vector({-1, 0})) == 1.0);
  const Tensor p = random_tensor({8}, 3), z = random_tensor({8}, 4);
  Tensor p2 = p, z2 = z;
  for (double& v : p2.values()) v *= 3.5;
  for (double& v : z2.values()) v *= 0.25;
  CHECK(std::abs(nc(p, z) - nc(p2, z2)) < 1e-12);

  Tape t;
  const double v = t.value(t.neg_cosine(t.input(Tensor({3})), t.input(Tensor::vector({1, 1, 1}))))[0];
  CHECK(v == 0.0);
  CHECK(t.stabilized_cosines() == 1);
}

TEST_CASE("softmax probabilities and loss") {
  std::vector<double> probs;
  Tape t;
  const double l = t.value(t.softmax_cross_entropy(t.input(Tensor({7}, 0.3)), 4, &probs))[0];
  CHECK(l == doctest::Approx(std::log(7.0)).epsilon(1e-12));
  double prev = l;
  for (double big : {1.0, 5.0, 12.0, 25.0}) {
    Tensor logits({3});
    logits[1] = big;
    Tape t2;
    const double li = t2.value(t2.softmax_cross_entropy(t2.input(logits), 1, &probs))[0];
    CHECK(li < prev);
    CHECK(li >= 0.0);
    prev = li;
    double s = 0.0;
    for (double p : probs) s += p;
    CHECK(std::abs(s - 1.0) < 1e-12);
  }
  Tape t3;
  CHECK_THROWS_AS(t3.softmax_cross_entropy(t3.input(Tensor({3})), 3), evha::Error);
}

TEST_CASE("sgd step") {
  Network net({3}, {LayerSpec::dense(2)}, 5);
  const Network before = net;
  sgd_step(net, zero_gradients(net), 0.1);
  CHECK(net.param("L0.w") == before.param("L0.w"));

  // gradient of 0.5*|theta|^2 is theta itself
  Gradients g;
  for (const auto& p : net.parameters()) g.emplace_back(p.value.values().begin(), p.value.values().end());
  sgd_step(net, g, 0.25);
  for (std::size_t i = 0; i < net.parameters().size(); ++i) {
    const auto& now = net.parameters()[i].value;
    const auto& was = before.parameters()[i].value;
    for (std::size_t k = 0; k < now.size(); ++k) CHECK(now[k] == doctest::Approx(0.75 * was[k]).epsilon(1e-15));
  }
  CHECK_THROWS_AS(sgd_step(net, Gradients{}, 0.1), evha::Error);
}

TEST_CASE("training on a separable toy set lowers the loss and is reproducible") {
  auto run = [](std::uint64_t seed) {
    Network net({2}, {LayerSpec::dense(8), LayerSpec::relu(), LayerSpec::dense(2)}, seed);
    std::mt19937_64 rng(99);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    std::vector<std::pair<Tensor, int>> data;
    for (int i = 0; i < 40; ++i) {
      Tensor x = Tensor::vector({u(rng), u(rng)});
      data.push_back({x, x[0] + x[1] > 0 ? 1 : 0});
    }
    std::vector<double> losses;
    for (int step = 0; step < 100; ++step) {
      Gradients g = zero_gradients(net);
      double total = 0.0;
      for (const auto& [x, y] : data) {
        Tape t;
        const Var l = t.softmax_cross_entropy(forward(t, net, t.input(x)).output, y);
        total += t.value(l)[0];
        t.backward(l);
        accumulate(g, t, net, 1.0 / data.size());
      }
      losses.push_back(total / data.size());
      sgd_step(net, g, 0.5);
    }
    return std::pair{losses, encode_checkpoint({{}, {{"toy", net}}, {}})};
  };
  const auto [losses, bytes] = run(3);
  CHECK(losses.back() < 0.5 * losses.front());
  CHECK(run(3).second == bytes);
}

TEST_CASE("checkpoint round trip and manifest rejection") {
  Network a({1, 8, 8}, {LayerSpec::conv(4), LayerSpec::norm(), LayerSpec::relu(), LayerSpec::gap(), LayerSpec::dense(3)},
            1);
  Checkpoint c;
  c.metadata["classes"] = "x,y,z";
  c.networks.emplace("net", a);
  c.tensors.emplace("pc", Tensor::vector({0.25, -1.5}));
  const auto bytes = encode_checkpoint(c);

  Network fresh({1, 8, 8}, {LayerSpec::conv(4), LayerSpec::norm(), LayerSpec::relu(), LayerSpec::gap(),
                            LayerSpec::dense(3)},
                2);
  const Checkpoint back = decode_checkpoint(bytes, {{"net", fresh}});
  CHECK(back.metadata.at("classes") == "x,y,z");
  CHECK(back.tensors.at("pc") == Tensor::vector({0.25, -1.5}));
  for (std::size_t i = 0; i < a.parameters().size(); ++i) {
    CHECK(back.networks.at("net").parameters()[i].value == a.parameters()[i].value);
  }
  CHECK(encode_checkpoint(back) == bytes);

  Network other({1, 8, 8}, {LayerSpec::conv(5), LayerSpec::gap(), LayerSpec::dense(3)}, 1);
  CHECK_THROWS_WITH_AS(decode_checkpoint(bytes, {{"net", other}}), doctest::Contains("manifest"), evha::Error);
  auto truncated = bytes;
  truncated.resize(bytes.size() - 3);
  CHECK_THROWS_AS(decode_checkpoint(truncated, {{"net", fresh}}), evha::ParseError);
  auto bad = bytes;
  bad[0] = 'X';
  CHECK_THROWS_AS(decode_checkpoint(bad, {{"net", fresh}}), evha::ParseError);
}
