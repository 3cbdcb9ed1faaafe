#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "cervifuse/nn/checkpoint.hpp"
#include "cervifuse/nn/optim.hpp"
#include "doctest.h"

using namespace cervifuse;
using namespace cervifuse::nn;

namespace {

TensorD random_matrix(std::size_t r, std::size_t c, Rng& rng, double scale = 1.0) {
  TensorD t({r, c});
  for (auto& v : t.data()) v = rng.uniform(-scale, scale);
  return t;
}

// Triple-loop reference: out[i][j] = act(sum_k x[i][k] * w[k][j] + b[j]).
TensorD matmul_oracle(const TensorD& x, const TensorD& w, const TensorD& b, bool relu) {
  TensorD out({x.rows(), w.cols()});
  for (std::size_t i = 0; i < x.rows(); ++i)
    for (std::size_t j = 0; j < w.cols(); ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < x.cols(); ++k) acc += x.at(i, k) * w.at(k, j);
      acc += b[j];
      out.at(i, j) = relu ? std::max(0.0, acc) : acc;
    }
  return out;
}

}  // namespace

TEST_SUITE("dense_forward") {
  TEST_CASE("identity weights pass input through") {
    DenseParams<double> p{TensorD::matrix({{1, 0}, {0, 1}}), TensorD::vector({0, 0}), Activation::none};
    auto y = dense_forward(TensorD::matrix({{1, 2}}), p);
    CHECK(y == TensorD::matrix({{1, 2}}));
  }

  TEST_CASE("relu clamps the zero boundary") {
    DenseParams<double> p{TensorD::matrix({{1}, {1}}), TensorD::vector({-2}), Activation::relu};
    auto y = dense_forward(TensorD::matrix({{1, 1}}), p);
    CHECK(y.at(0, 0) == 0.0);
  }

  TEST_CASE("matches triple-loop matmul oracle") {
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
      Rng rng(seed);
      const auto x = random_matrix(7, 13, rng);
      DenseParams<double> p{random_matrix(13, 5, rng), TensorD({5}), seed % 2 ? Activation::relu : Activation::none};
      for (auto& v : p.bias.data()) v = rng.uniform(-1, 1);
      const auto got = dense_forward(x, p);
      const auto want = matmul_oracle(x, p.weights, p.bias, p.activation == Activation::relu);
      for (std::size_t i = 0; i < got.size(); ++i) REQUIRE(std::abs(got[i] - want[i]) < 1e-12);
    }
  }

  TEST_CASE("shape mismatch is a dimension error") {
    DenseParams<double> p{TensorD({3, 2}), TensorD({2}), Activation::none};
    CHECK_THROWS_AS(dense_forward(TensorD({1, 2}), p), DimensionError);
  }

  TEST_CASE("glorot init respects the limit and zero bias") {
    Rng rng(3);
    auto p = DenseParams<float>::glorot(30, 70, Activation::relu, rng);
    const double limit = std::sqrt(6.0 / 100.0);
    for (auto v : p.weights.data()) CHECK(std::abs(v) <= limit);
    for (auto v : p.bias.data()) CHECK(v == 0.0f);
  }
}

TEST_SUITE("batchnorm_forward") {
  TEST_CASE("constant column maps to zero") {
    auto p = BatchNormParams<double>::identity(2);
    auto y = batchnorm_forward(TensorD::matrix({{5, 1}, {5, 2}, {5, 3}}), p);
    for (std::size_t i = 0; i < 3; ++i) CHECK(y.at(i, 0) == 0.0);
  }

  TEST_CASE("gamma zero yields beta") {
    auto p = BatchNormParams<double>::identity(2);
    p.gamma.fill(0.0);
    p.beta = TensorD::vector({0.5, -2.0});
    auto y = batchnorm_forward(TensorD::matrix({{1, 7}, {4, 2}, {9, 3}}), p);
    for (std::size_t i = 0; i < 3; ++i) {
      CHECK(y.at(i, 0) == 0.5);
      CHECK(y.at(i, 1) == -2.0);
    }
  }

  TEST_CASE("hand-evaluated standardization of [1, 3]") {
    auto p = BatchNormParams<double>::identity(1);
    p.epsilon = 1e-12;
    auto y = batchnorm_forward(TensorD::matrix({{1}, {3}}), p);
    CHECK(y.at(0, 0) == doctest::Approx(-1.0).epsilon(1e-9));
    CHECK(y.at(1, 0) == doctest::Approx(1.0).epsilon(1e-9));
  }

  TEST_CASE("running statistics follow the momentum rule") {
    auto p = BatchNormParams<double>::identity(1);
    batchnorm_forward(TensorD::matrix({{1}, {3}}), p);
    CHECK(p.running_mean[0] == doctest::Approx(0.99 * 0 + 0.01 * 2));
    CHECK(p.running_var[0] == doctest::Approx(0.99 * 1 + 0.01 * 1));
  }

  TEST_CASE("infer mode uses running statistics") {
    auto p = BatchNormParams<double>::identity(1);
    p.running_mean[0] = 2.0;
    p.running_var[0] = 4.0;
    p.epsilon = 1e-12;
    p.mode = Mode::infer;
    auto y = batchnorm_forward(TensorD::matrix({{6}}), p);
    CHECK(y.at(0, 0) == doctest::Approx(2.0));
  }

  TEST_CASE("single-row batch in train mode is rejected") {
    auto p = BatchNormParams<double>::identity(2);
    CHECK_THROWS_AS(batchnorm_forward(TensorD({1, 2}), p), BatchTooSmall);
  }

  TEST_CASE("property: train output is standardized") {
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
      Rng rng(seed);
      const std::size_t b = 16 + rng.uniform_index(48), d = 1 + rng.uniform_index(8);
      TensorD x({b, d});
      for (std::size_t j = 0; j < d; ++j) {
        const double shift = rng.uniform(-100, 100), scale = rng.uniform(5, 50);
        for (std::size_t i = 0; i < b; ++i) x.at(i, j) = shift + scale * rng.normal();
      }
      auto p = BatchNormParams<double>::identity(d);
      auto y = batchnorm_forward(x, p);
      for (std::size_t j = 0; j < d; ++j) {
        double mean = 0, var = 0;
        for (std::size_t i = 0; i < b; ++i) mean += y.at(i, j);
        mean /= b;
        for (std::size_t i = 0; i < b; ++i) var += (y.at(i, j) - mean) * (y.at(i, j) - mean);
        var /= b;
        CHECK(std::abs(mean) < 1e-6);
        CHECK(var > 1 - 1e-3);
        CHECK(var < 1 + 1e-3);
      }
    }
  }
}

TEST_SUITE("dropout_forward") {
  TEST_CASE("rate zero is identity") {
    Rng rng(1);
    auto x = random_matrix(4, 9, rng);
    CHECK(dropout_forward(x, 0.0, 42, Mode::train).output == x);
  }

  TEST_CASE("infer mode is bit-identical to identity") {
    Rng rng(2);
    auto x = random_matrix(5, 5, rng);
    for (double rate : {0.1, 0.5, 0.9}) CHECK(dropout_forward(x, rate, 7, Mode::infer).output == x);
  }

  TEST_CASE("inverted scaling keeps the mean (law of large numbers)") {
    TensorF ones({100000}, 1.0f);
    auto r = dropout_forward(ones, 0.5, 1234, Mode::train);
    double mean = std::accumulate(r.output.data().begin(), r.output.data().end(), 0.0) / 100000.0;
    CHECK(mean >= 0.98);
    CHECK(mean <= 1.02);
    for (std::size_t i = 0; i < ones.size(); ++i) CHECK((r.mask[i] == 0.0f || r.mask[i] == 2.0f));
  }

  TEST_CASE("rate one is invalid") { CHECK_THROWS_AS(dropout_forward(TensorF({2}), 1.0, 1, Mode::train), InvalidParameter); }
}

TEST_SUITE("softmax") {
  TEST_CASE("uniform logits") {
    auto p = softmax(TensorD::matrix({{0, 0, 0}}));
    for (std::size_t j = 0; j < 3; ++j) CHECK(p.at(0, j) == doctest::Approx(1.0 / 3).epsilon(1e-15));
  }

  TEST_CASE("logs of 1, 2, 3") {
    auto p = softmax(TensorD::matrix({{std::log(1.0), std::log(2.0), std::log(3.0)}}));
    CHECK(p.at(0, 0) == doctest::Approx(1.0 / 6).epsilon(1e-14));
    CHECK(p.at(0, 1) == doctest::Approx(1.0 / 3).epsilon(1e-14));
    CHECK(p.at(0, 2) == doctest::Approx(1.0 / 2).epsilon(1e-14));
  }

  TEST_CASE("large logits do not overflow") {
    auto p = softmax(TensorF::matrix({{1000.0f, 0.0f}}));
    CHECK(p.all_finite());
    CHECK(p.at(0, 0) == doctest::Approx(1.0));
    CHECK(p.at(0, 1) == doctest::Approx(0.0));
  }

  TEST_CASE("property: rows sum to one for magnitudes up to 1e4") {
    Rng rng(99);
    for (int trial = 0; trial < 200; ++trial) {
      const double mag = std::pow(10.0, rng.uniform(-2, 4));
      auto logits = random_matrix(3, 2 + rng.uniform_index(9), rng, mag);
      auto p = softmax(logits.cast<float>());
      for (std::size_t i = 0; i < p.rows(); ++i) {
        double s = 0;
        for (auto v : p.row(i)) s += v;
        REQUIRE(std::abs(s - 1.0) <= 1e-6);
      }
    }
  }

  TEST_CASE("needs at least two classes") { CHECK_THROWS_AS(softmax(TensorD({1, 1})), DimensionError); }
}

TEST_SUITE("cross_entropy") {
  TEST_CASE("perfect prediction has zero loss") {
    CHECK(cross_entropy(TensorD::matrix({{0, 1, 0}}), TensorD::matrix({{0, 1, 0}})) == 0.0);
  }

  TEST_CASE("uniform over five classes is ln 5") {
    TensorD p({1, 5}, 0.2);
    auto y = one_hot<double>(std::vector<int>{3}, 5);
    CHECK(cross_entropy(p, y) == doctest::Approx(std::log(5.0)).epsilon(1e-12));
    CHECK(cross_entropy(p, y) == doctest::Approx(1.6094).epsilon(1e-4));
  }

  TEST_CASE("matches direct per-sample summation") {
    Rng rng(5);
    for (int trial = 0; trial < 20; ++trial) {
      const std::size_t b = 1 + rng.uniform_index(20), c = 2 + rng.uniform_index(6);
      auto probs = softmax(random_matrix(b, c, rng, 3.0));
      std::vector<int> labels(b);
      for (auto& l : labels) l = static_cast<int>(rng.uniform_index(c));
      double want = 0.0;
      for (std::size_t i = 0; i < b; ++i) want += -std::log(probs.at(i, labels[i]));
      want /= static_cast<double>(b);
      CHECK(std::abs(cross_entropy(probs, one_hot<double>(labels, c)) - want) < 1e-10);
    }
  }

  TEST_CASE("non one-hot labels are rejected") {
    CHECK_THROWS_AS(cross_entropy(TensorD::matrix({{0.5, 0.5}}), TensorD::matrix({{1, 1}})), InvalidLabel);
    CHECK_THROWS_AS(cross_entropy(TensorD::matrix({{0.5, 0.5}}), TensorD::matrix({{0, 0}})), InvalidLabel);
    CHECK_THROWS_AS(cross_entropy(TensorD::matrix({{0.5, 0.5}}), TensorD::matrix({{0.5, 0.5}})), InvalidLabel);
  }

  TEST_CASE("zero probability is clipped") {
    CHECK(cross_entropy(TensorD::matrix({{1, 0}}), TensorD::matrix({{0, 1}})) == doctest::Approx(-std::log(1e-12)));
  }
}

TEST_SUITE("adam_step") {
  TEST_CASE("zero gradient leaves parameters unchanged") {
    TensorD w = TensorD::vector({1.5, -2.0, 0.25});
    TensorD g({3});
    std::vector<Parameter<double>> params{{"w", &w, &g}};
    AdamState<double> state;
    const TensorD before = w;
    for (int i = 0; i < 10; ++i) adam_step(params, state);
    CHECK(w == before);
  }

  TEST_CASE("first step with unit gradient moves by lr") {
    TensorD w = TensorD::vector({0.0});
    TensorD g = TensorD::vector({1.0});
    std::vector<Parameter<double>> params{{"w", &w, &g}};
    AdamState<double> state;
    adam_step(params, state);
    // lr * sqrt(1-b2)/(1-b1) * (1-b1) / (sqrt(1-b2) + eps) = 1e-3 * (1 - 3.16e-7)
    CHECK(std::abs(w[0] + 1e-3) < 1e-9);
    CHECK(state.step_count == 1);
  }

  TEST_CASE("two steps on w^2 decrease the loss") {
    TensorD w = TensorD::vector({1.0});
    TensorD g({1});
    std::vector<Parameter<double>> params{{"w", &w, &g}};
    AdamState<double> state;
    state.lr = 0.1;
    double prev = w[0] * w[0];
    for (int i = 0; i < 2; ++i) {
      g[0] = 2 * w[0];
      adam_step(params, state);
      const double now = w[0] * w[0];
      CHECK(now < prev);
      prev = now;
    }
  }

  TEST_CASE("shape mismatch is rejected") {
    TensorD w({3}), g({2});
    std::vector<Parameter<double>> params{{"w", &w, &g}};
    AdamState<double> state;
    CHECK_THROWS_AS(adam_step(params, state), DimensionError);
  }
}

TEST_SUITE("network") {
  Network<double> small_net(std::uint64_t seed, double dropout) {
    Rng rng(seed);
    Network<double> net;
    net.add("bn", BatchNormLayer<double>(BatchNormParams<double>::identity(4)));
    net.add("fc1", DenseLayer<double>(DenseParams<double>::glorot(4, 6, Activation::relu, rng)));
    net.add("drop", DropoutLayer<double>(dropout, seed));
    net.add("fc2", DenseLayer<double>(DenseParams<double>::glorot(6, 3, Activation::none, rng)));
    return net;
  }

  TEST_CASE("backward before forward is a state error") {
    auto net = small_net(1, 0.0);
    CHECK_THROWS_AS(net.backward(TensorD({2, 3})), StateError);
  }

  TEST_CASE("single dense layer: weight gradient equals the input") {
    Network<double> net;
    net.add("fc", DenseLayer<double>({TensorD::matrix({{0.3}, {-0.7}}), TensorD({1}), Activation::none}));
    const auto x = TensorD::matrix({{2.0, 5.0}});
    net.forward(x, Mode::train);
    net.backward(TensorD::matrix({{1.0}}));
    auto params = net.parameters();
    CHECK(*params[0].grad == TensorD::matrix({{2.0}, {5.0}}));
    CHECK((*params[1].grad)[0] == 1.0);
  }

  TEST_CASE("fused softmax-CE gradient is probs minus one-hot over B") {
    Rng rng(8);
    auto logits = random_matrix(5, 4, rng, 2.0);
    std::vector<int> labels{0, 3, 1, 1, 2};
    auto sce = softmax_cross_entropy(logits, labels);
    auto onehot = one_hot<double>(labels, 4);
    for (std::size_t i = 0; i < logits.size(); ++i) CHECK(sce.grad_logits[i] == doctest::Approx((sce.probs[i] - onehot[i]) / 5));
    // against central differences of the loss in the logits
    const double h = 1e-6;
    for (std::size_t i = 0; i < logits.size(); ++i) {
      auto lp = logits, lm = logits;
      lp[i] += h;
      lm[i] -= h;
      const double fd = (softmax_cross_entropy(lp, labels).loss - softmax_cross_entropy(lm, labels).loss) / (2 * h);
      CHECK(std::abs(fd - sce.grad_logits[i]) < 1e-8);
    }
  }

  TEST_CASE("determinism: identical seeds give bit-identical parameters after N steps") {
    auto run = [] {
      auto net = small_net(17, 0.5);
      Rng rng(4);
      auto x = random_matrix(8, 4, rng);
      std::vector<int> labels{0, 1, 2, 0, 1, 2, 0, 1};
      AdamState<double> state;
      for (int i = 0; i < 25; ++i) {
        net.train_step_gradients(x, labels);
        auto params = net.parameters();
        adam_step(params, state);
      }
      std::vector<TensorD> out;
      for (auto& [name, t] : net.state()) out.push_back(*t);
      return out;
    };
    CHECK(run() == run());
  }

  TEST_CASE("checkpoint round-trips every tensor and dtype") {
    auto net = small_net(3, 0.2);
    Rng rng(11);
    auto x = random_matrix(6, 4, rng);
    net.forward(x, Mode::train);
    auto state = network_state(net);
    state.push_back({"extra.f32", TensorF({2, 3, 1}, 1.25f)});
    state.push_back({"extra.empty", TensorD({0})});
    const auto path = std::filesystem::temp_directory_path() / "cf_nn_test.cfck";
    save_checkpoint(path, state);
    auto loaded = load_checkpoint(path);
    REQUIRE(loaded.size() == state.size());
    for (std::size_t i = 0; i < state.size(); ++i) {
      CHECK(loaded[i].name == state[i].name);
      CHECK(loaded[i].tensor == state[i].tensor);
    }
    auto other = small_net(99, 0.2);
    load_network_state(other, loaded);
    CHECK(other.forward(x, Mode::infer) == net.forward(x, Mode::infer));

    std::ofstream(path, std::ios::binary) << "NOPE";
    CHECK_THROWS_AS(load_checkpoint(path), ParseError);
    std::filesystem::remove(path);
  }
}
