#include <cmath>
#include <fstream>
#include <functional>

#include "cervifuse/common/error.hpp"
#include "cervifuse/common/rng.hpp"
#include "cervifuse/fusion/features.hpp"
#include "cervifuse/fusion/model.hpp"
#include "cervifuse/nn/checkpoint.hpp"
#include "doctest.h"
#include "support/tempdir.hpp"

using namespace cervifuse;
using namespace cervifuse::fusion;
using nn::TensorF;

namespace {

struct Dataset {
  TensorF x;
  std::vector<int> y;
};

// Two classes split by the hyperplane w.x = 0 with |w.x| >= 1 for every row.
Dataset separable(std::size_t n, std::size_t d, std::uint64_t seed, std::vector<double>& w) {
  Rng rng(seed);
  w.assign(d, 0.0);
  for (auto& v : w) v = rng.normal();
  Dataset ds{TensorF({n, d}), std::vector<int>(n)};
  for (std::size_t i = 0; i < n;) {
    std::vector<double> row(d);
    double s = 0;
    for (std::size_t j = 0; j < d; ++j) {
      row[j] = 2.0 * rng.normal();
      s += row[j] * w[j];
    }
    if (std::abs(s) < 1.0) continue;
    for (std::size_t j = 0; j < d; ++j) ds.x.at(i, j) = static_cast<float>(row[j]);
    ds.y[i] = s > 0 ? 1 : 0;
    ++i;
  }
  return ds;
}

double accuracy(const std::vector<int>& pred, const std::vector<int>& truth) {
  std::size_t ok = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) ok += pred[i] == truth[i];
  return static_cast<double>(ok) / static_cast<double>(pred.size());
}

std::vector<std::vector<float>> snapshot(nn::Network<float>& net) {
  std::vector<std::vector<float>> out;
  for (auto& [name, t] : net.state()) out.emplace_back(t->values());
  return out;
}

FeatureMatrix block(const std::string& id, std::size_t n, std::size_t d, std::uint64_t seed) {
  Rng rng(seed);
  FeatureMatrix m;
  m.backbone_id = id;
  m.split = "train";
  m.rows = TensorF({n, d});
  for (auto& v : m.rows.data()) v = static_cast<float>(rng.normal());
  for (std::size_t i = 0; i < n; ++i) {
    m.labels.push_back(static_cast<int>(i % 3));
    m.sample_ids.push_back("s" + std::to_string(i));
  }
  m.class_names = {"a", "b", "c"};
  return m;
}

// Counts votes directly and resolves ties from the summed probabilities.
int vote_oracle(const std::vector<int>& votes, const std::vector<std::vector<float>>& probs, int classes) {
  int best = -1, best_votes = -1;
  double best_sum = -1;
  for (int c = 0; c < classes; ++c) {
    const int v = static_cast<int>(std::count(votes.begin(), votes.end(), c));
    double s = 0;
    for (const auto& p : probs) s += p[c];
    if (v > best_votes || (v == best_votes && s > best_sum)) {
      best = c;
      best_votes = v;
      best_sum = s;
    }
  }
  return best;
}

}  // namespace

TEST_SUITE("head training") {
  TEST_CASE("separable features reach full training accuracy") {
    std::vector<double> w;
    const auto ds = separable(200, 8, 1, w);
    // the generating hyperplane classifies every row
    for (std::size_t i = 0; i < 200; ++i) {
      double s = 0;
      for (std::size_t j = 0; j < 8; ++j) s += w[j] * ds.x.at(i, j);
      REQUIRE((s > 0 ? 1 : 0) == ds.y[i]);
    }
    HeadModel head({"toy", 8, 2, kFeatureDim, 0.5, 3});
    Schedule sch;
    sch.phases = {{50, 1e-3}};
    const auto hist = head.train(ds.x, ds.y, sch);
    REQUIRE(hist.size() == 50);
    CHECK(accuracy(head.predict(ds.x).labels, ds.y) == 1.0);
    CHECK(hist.back().loss < hist.front().loss);
  }

  TEST_CASE("zero epochs leave parameters unchanged") {
    std::vector<double> w;
    const auto ds = separable(40, 6, 2, w);
    HeadModel head({"toy", 6, 2, 64, 0.5, 4});
    const auto before = snapshot(head.network());
    Schedule sch;
    sch.phases = {{0, 1e-3}};
    CHECK(head.train(ds.x, ds.y, sch).empty());
    CHECK(snapshot(head.network()) == before);
  }

  TEST_CASE("same seed replays the same training") {
    std::vector<double> w;
    const auto ds = separable(90, 6, 3, w);
    Schedule sch;
    sch.phases = {{4, 1e-3}, {2, 1e-5}};
    sch.seed = 11;
    HeadModel a({"toy", 6, 2, 128, 0.5, 5}), b({"toy", 6, 2, 128, 0.5, 5});
    const auto ha = a.train(ds.x, ds.y, sch), hb = b.train(ds.x, ds.y, sch);
    CHECK(ha.back().loss == hb.back().loss);
    CHECK(snapshot(a.network()) == snapshot(b.network()));
    CHECK(ha[4].lr == 1e-5);
  }

  TEST_CASE("loss decreases for every tested seed") {
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
      std::vector<double> w;
      const auto ds = separable(64, 5, 100 + seed, w);
      HeadModel head({"toy", 5, 2, 64, 0.5, seed});
      Schedule sch;
      sch.phases = {{10, 1e-3}};
      sch.seed = seed;
      const auto h = head.train(ds.x, ds.y, sch);
      CHECK(h.back().loss < h.front().loss);
    }
  }

  TEST_CASE("a trailing single row joins the previous batch") {
    std::vector<double> w;
    const auto ds = separable(33, 4, 4, w);
    HeadModel head({"toy", 4, 2, 16, 0.5, 1});
    Schedule sch;
    sch.phases = {{2, 1e-3}};
    CHECK_NOTHROW(head.train(ds.x, ds.y, sch));
  }

  TEST_CASE("non-finite inputs surface as divergence with the epoch") {
    std::vector<double> w;
    auto ds = separable(20, 4, 5, w);
    ds.x.at(3, 1) = std::numeric_limits<float>::infinity();
    HeadModel head({"toy", 4, 2, 16, 0.5, 1});
    Schedule sch;
    sch.phases = {{3, 1e-3}};
    try {
      head.train(ds.x, ds.y, sch);
      FAIL("expected DivergenceError");
    } catch (const DivergenceError& e) {
      CHECK(e.epoch() == 1);
    }
  }

  TEST_CASE("input validation") {
    HeadModel head({"toy", 4, 2, 16, 0.5, 1});
    CHECK_THROWS_AS(head.train(TensorF({4, 5}), {0, 1, 0, 1}, Schedule{}), DimensionError);
    CHECK_THROWS_AS(head.train(TensorF({4, 4}), {0, 1, 0, 2}, Schedule{}), InvalidLabel);
    CHECK_THROWS_AS(HeadModel({"toy", 4, 1, 16, 0.5, 1}), InvalidParameter);
  }
}

TEST_SUITE("feature extraction") {
  TEST_CASE("extraction requires training and yields 1024 columns") {
    std::vector<double> w;
    auto ds = separable(50, 6, 6, w);
    // duplicate a row
    for (std::size_t j = 0; j < 6; ++j) ds.x.at(7, j) = ds.x.at(2, j);
    HeadModel head({"toy", 6, 2, kFeatureDim, 0.5, 7});
    CHECK_THROWS_AS(head.features(ds.x), StateError);
    Schedule sch;
    sch.phases = {{3, 1e-3}};
    head.train(ds.x, ds.y, sch);
    const auto f = head.features(ds.x);
    CHECK(f.rows() == 50);
    CHECK(f.cols() == 1024);
    CHECK(std::equal(f.row(2).begin(), f.row(2).end(), f.row(7).begin()));
    for (float v : f.data()) CHECK(v >= 0.0f);

    const auto norm = Normalization::fit(f);
    const auto z = norm.apply(f);
    double worst = 0;
    for (std::size_t j = 0; j < 1024; ++j) {
      if (norm.std[j] == 1.0f) continue;
      double mean = 0;
      for (std::size_t i = 0; i < 50; ++i) mean += z.at(i, j);
      worst = std::max(worst, std::abs(mean / 50));
    }
    CHECK(worst < 1e-6);
  }

  TEST_CASE("constant columns standardize to zero") {
    TensorF rows = TensorF::matrix({{1, 5}, {2, 5}, {3, 5}});
    const auto n = Normalization::fit(rows);
    CHECK(n.std[1] == 1.0f);
    const auto z = n.apply(rows);
    CHECK(z.at(0, 1) == 0.0f);
    CHECK(z.at(1, 0) == 0.0f);
  }

  TEST_CASE("feature store round-trip") {
    cftest::TempDir dir("fmx");
    auto m = block("vgg16", 10, 12, 1);
    m.normalization = Normalization::fit(m.rows);
    m.config_hash = "abc";
    save_feature_matrix(m, dir / "f.fmx");
    CHECK(load_feature_matrix(dir / "f.fmx") == m);
    std::ofstream(dir / "bad.fmx", std::ios::binary) << "FMX2xxxxxxxx";
    CHECK_THROWS_AS(load_feature_matrix(dir / "bad.fmx"), ParseError);
    CHECK_THROWS_AS(load_feature_matrix(dir / "missing.fmx"), MissingArtifact);
  }
}

TEST_SUITE("concatenation") {
  TEST_CASE("four blocks of 1024 give 4096 with exact placement") {
    std::vector<FeatureMatrix> blocks;
    for (int k = 0; k < 4; ++k) blocks.push_back(block("m" + std::to_string(k), 9, 1024, 10 + k));
    const auto cat = concat_features(blocks);
    CHECK(cat.cols() == 4096);
    for (std::size_t i = 0; i < 9; ++i)
      for (std::size_t j = 0; j < 4; ++j)
        for (std::size_t d = 0; d < 1024; d += 97) CHECK(cat.at(i, 1024 * j + d) == blocks[j].rows.at(i, d));

    const auto swapped = concat_features(std::vector<const FeatureMatrix*>{&blocks[2], &blocks[0], &blocks[3], &blocks[1]});
    for (std::size_t i = 0; i < 9; ++i) {
      CHECK(swapped.at(i, 0) == cat.at(i, 2048));
      CHECK(swapped.at(i, 3 * 1024 + 5) == cat.at(i, 1024 + 5));
    }
  }

  TEST_CASE("single block is the identity") {
    const auto b = block("m", 5, 7, 3);
    CHECK(concat_features(std::vector<FeatureMatrix>{b}) == b.rows);
  }

  TEST_CASE("misaligned blocks are rejected") {
    auto a = block("a", 5, 4, 1), b = block("b", 5, 4, 2), c = block("c", 6, 4, 3);
    CHECK_THROWS_AS(concat_features(std::vector<FeatureMatrix>{a, c}), AlignmentError);
    std::swap(b.sample_ids[0], b.sample_ids[1]);
    CHECK_THROWS_AS(concat_features(std::vector<FeatureMatrix>{a, b}), AlignmentError);
  }
}

TEST_SUITE("fusion model") {
  TEST_CASE("a single predictive block gives perfect held-out accuracy") {
    // block 0 encodes the class, block 1 is noise
    Rng rng(3);
    auto make = [&](std::size_t n) {
      Dataset ds{TensorF({n, 2 * 16}), std::vector<int>(n)};
      for (std::size_t i = 0; i < n; ++i) {
        const int c = static_cast<int>(i % 3);
        ds.y[i] = c;
        for (std::size_t d = 0; d < 16; ++d) ds.x.at(i, d) = static_cast<float>((d % 3 == static_cast<std::size_t>(c) ? 2.0 : -1.0) + 0.3 * rng.normal());
        for (std::size_t d = 16; d < 32; ++d) ds.x.at(i, d) = static_cast<float>(rng.normal());
      }
      return ds;
    };
    const auto train = make(150), test = make(60);
    FusionModel model({{"a", "b"}, 16, 3, 0.5, 9});
    Schedule sch;
    sch.phases = {{30, 1e-3}};
    model.train(train.x, train.y, sch);
    CHECK(accuracy(model.predict(test.x).labels, test.y) == 1.0);
  }

  TEST_CASE("without dropout and with fixed statistics it is a linear softmax classifier") {
    FusionModel model({{"a", "b"}, 3, 3, 0.0, 4});
    auto& net = model.network();
    auto& bn = net.layer<nn::BatchNormLayer<float>>("bn").params();
    Rng rng(8);
    for (std::size_t j = 0; j < 6; ++j) {
      bn.gamma[j] = static_cast<float>(rng.uniform(0.5, 1.5));
      bn.beta[j] = static_cast<float>(rng.uniform(-0.5, 0.5));
      bn.running_mean[j] = static_cast<float>(rng.uniform(-1, 1));
      bn.running_var[j] = static_cast<float>(rng.uniform(0.5, 2));
    }
    const auto& dense = net.layer<nn::DenseLayer<float>>("dense_cls").params();
    TensorF x({5, 6});
    for (auto& v : x.data()) v = static_cast<float>(rng.normal());
    const auto p = predict(net, x);
    for (std::size_t i = 0; i < 5; ++i) {
      std::vector<double> z(3);
      for (std::size_t c = 0; c < 3; ++c) {
        z[c] = dense.bias[c];
        for (std::size_t j = 0; j < 6; ++j) {
          const double xn = (x.at(i, j) - bn.running_mean[j]) / std::sqrt(bn.running_var[j] + 1e-3) * bn.gamma[j] + bn.beta[j];
          z[c] += xn * dense.weights.at(j, c);
        }
      }
      const double mx = *std::max_element(z.begin(), z.end());
      double sum = 0;
      for (double v : z) sum += std::exp(v - mx);
      for (std::size_t c = 0; c < 3; ++c) CHECK(p.probs.at(i, c) == doctest::Approx(std::exp(z[c] - mx) / sum).epsilon(1e-5));
    }
  }

  TEST_CASE("fusion needs two blocks and unchanged parameters at zero epochs") {
    CHECK_THROWS_AS(FusionModel({{"a"}, 4, 2, 0.5, 1}), InvalidParameter);
    FusionModel model({{"a", "b"}, 4, 2, 0.5, 1});
    const auto before = snapshot(model.network());
    Schedule sch;
    sch.phases = {};
    model.train(TensorF({4, 8}), {0, 1, 0, 1}, sch);
    CHECK(snapshot(model.network()) == before);
  }
}

TEST_SUITE("prediction") {
  TEST_CASE("rows are normalized, repeatable and independent of chunking") {
    std::vector<double> w;
    auto ds = separable(70, 6, 9, w);
    for (std::size_t j = 0; j < 6; ++j) ds.x.at(1, j) = ds.x.at(0, j);
    HeadModel head({"toy", 6, 2, 64, 0.5, 2});
    Schedule sch;
    sch.phases = {{2, 1e-3}};
    head.train(ds.x, ds.y, sch);
    const auto one = predict(head.network(), ds.x, 1);
    const auto many = predict(head.network(), ds.x, 32);
    CHECK(one.probs == many.probs);
    CHECK(std::equal(one.probs.row(0).begin(), one.probs.row(0).end(), one.probs.row(1).begin()));
    for (std::size_t i = 0; i < 70; ++i) CHECK(std::abs(one.probs.at(i, 0) + one.probs.at(i, 1) - 1.0) < 1e-6);
    CHECK_THROWS_AS(head.predict(TensorF({2, 5})), DimensionError);
  }

  TEST_CASE("head checkpoints restore identical predictions") {
    cftest::TempDir dir("head");
    std::vector<double> w;
    const auto ds = separable(40, 5, 10, w);
    HeadModel head({"vgg16", 5, 2, 32, 0.5, 3});
    Schedule sch;
    sch.phases = {{2, 1e-3}};
    head.train(ds.x, ds.y, sch);
    head.save(dir / "head.ckpt");
    auto back = HeadModel::load(dir / "head.ckpt");
    CHECK(back.trained());
    CHECK(back.config().backbone_id == "vgg16");
    CHECK(back.predict(ds.x).probs == head.predict(ds.x).probs);
    CHECK_THROWS_AS(FusionModel::load(dir / "head.ckpt"), LoadError);
  }
}

TEST_SUITE("majority vote") {
  TEST_CASE("examples") {
    auto flat = [](std::size_t c) { return TensorF({1, c}, 1.0f / static_cast<float>(c)); };
    CHECK(majority_vote({{0}, {0}, {1}, {2}}, {flat(3), flat(3), flat(3), flat(3)}) == std::vector<int>{0});
    CHECK(majority_vote({{2}}, {flat(3)}) == std::vector<int>{2});
    // two-two tie resolved by confidence, then by index
    TensorF p1 = TensorF::matrix({{0.2f, 0.8f}}), p2 = TensorF::matrix({{0.9f, 0.1f}});
    CHECK(majority_vote({{1}, {1}, {0}, {0}}, {p1, p1, p2, p2}) == std::vector<int>{0});
    CHECK(majority_vote({{1}, {0}}, {flat(2), flat(2)}) == std::vector<int>{0});
    CHECK_THROWS_AS(majority_vote({}, {}), InvalidParameter);
  }

  TEST_CASE("matches exhaustive counting for up to four voters and seven classes") {
    Rng rng(99);
    std::size_t cases = 0;
    for (int m = 1; m <= 4; ++m) {
      for (int c = 2; c <= 7; ++c) {
        int total = 1;
        for (int k = 0; k < m; ++k) total *= c;
        for (int code = 0; code < total; ++code) {
          std::vector<int> votes(m);
          for (int k = 0, r = code; k < m; ++k, r /= c) votes[k] = r % c;
          // probability rows drawn from a coarse grid so exact ties occur
          std::vector<std::vector<float>> rows(m, std::vector<float>(c));
          std::vector<std::vector<int>> vote_in(m, std::vector<int>(1));
          std::vector<TensorF> probs;
          for (int k = 0; k < m; ++k) {
            float sum = 0;
            for (auto& v : rows[k]) sum += v = static_cast<float>(1 + rng.uniform_index(3));
            for (auto& v : rows[k]) v /= sum;
            vote_in[k][0] = votes[k];
            probs.emplace_back(std::vector<std::size_t>{1, static_cast<std::size_t>(c)}, rows[k]);
          }
          REQUIRE(majority_vote(vote_in, probs)[0] == vote_oracle(votes, rows, c));
          ++cases;
        }
      }
    }
    CHECK(cases > 3000);
  }
}
