#include "doctest.h"

#include <cmath>
#include <numeric>

#include "longtail/error.hpp"
#include "longtail/train.hpp"
#include "support.hpp"

using namespace longtail;

namespace {

// Two records, one image, hand-set features.
Dataset two_record_dataset() {
  Dataset ds;
  ds.catalog = ClassCatalog({1, 1});
  ds.train.feature_dim = 3;
  ds.eval.feature_dim = 3;
  const std::vector<float> a{0.5f, -1.0f, 2.0f}, b{1.5f, 0.25f, -0.75f};
  ds.train.push_back(a, 1, 0);
  ds.train.push_back(b, 2, 0);
  ds.eval = ds.train;
  ds.images = group_images(ds.train);
  return ds;
}

// Toy image set for RFS: category c appears in images_with[c] of `total` images.
Dataset rfs_toy(const std::vector<int>& images_with, int total) {
  Dataset ds;
  std::vector<std::int64_t> counts(images_with.size(), 0);
  ds.train.feature_dim = 2;
  const std::vector<float> f{0.0f, 0.0f};
  for (int img = 0; img < total; ++img) {
    ds.train.push_back(f, kBackground, img);
    for (std::size_t c = 0; c < images_with.size(); ++c) {
      if (img < images_with[c]) {
        ds.train.push_back(f, static_cast<int>(c) + 1, img);
        ++counts[c];
      }
    }
  }
  ds.catalog = ClassCatalog(counts);
  ds.images = group_images(ds.train);
  return ds;
}

}  // namespace

TEST_CASE("lr schedule") {
  TrainConfig c;
  c.lr = 0.02;
  CHECK(scheduled_lr(c, 1) == doctest::Approx(0.02));
  CHECK(scheduled_lr(c, 7) == doctest::Approx(0.02));
  CHECK(scheduled_lr(c, 8) == doctest::Approx(0.002));
  CHECK(scheduled_lr(c, 11) == doctest::Approx(0.0002));
  CHECK(scheduled_lr(c, 12) == doctest::Approx(0.0002));

  CHECK(step_lr(c, 1, 0) == doctest::Approx(0.02 / 3));
  CHECK(step_lr(c, 1, 250) == doctest::Approx(0.02 * 2 / 3));
  CHECK(step_lr(c, 1, 500) == doctest::Approx(0.02));
  CHECK(step_lr(c, 8, 10000) == doctest::Approx(0.002));
}

TEST_CASE("config validation and names") {
  TrainConfig c;
  CHECK_NOTHROW(validate(c));
  c.epochs = 0;
  CHECK_THROWS_AS(validate(c), ConfigError);
  c = {};
  c.batch_size = 0;
  CHECK_THROWS_AS(validate(c), ConfigError);
  c = {};
  c.lr = -1;
  CHECK_THROWS_AS(validate(c), ConfigError);
  CHECK_THROWS_WITH_AS(method_from_string("sgd"), doctest::Contains("tail_finetune"), ConfigError);
  CHECK(sampler_from_string("rfs") == Sampler::Rfs);
  for (auto m : {Method::Softmax, Method::Bags, Method::Reweight, Method::Focal, Method::TailFinetune}) {
    CHECK(method_from_string(to_string(m)) == m);
  }

  TrainConfig custom;
  custom.method = Method::Focal;
  custom.beta = 2.5;
  custom.variant = {false, true};
  custom.seed = 99;
  nlohmann::json j = custom;
  CHECK(j.get<TrainConfig>() == custom);
}

TEST_CASE("lr = 0 leaves parameters unchanged") {
  const Dataset ds = generate(testing::small_config());
  TrainConfig c;
  c.lr = 0.0;
  c.epochs = 3;
  c.batch_size = 64;
  const auto r = train(ds, c);
  CHECK(r.params == init_head(HeadLayout::Plain, ds.train.feature_dim,
                              ds.catalog.num_foreground() + 1, c.seed));
  REQUIRE(r.history.epoch_loss.size() == 3);
  CHECK(r.history.epoch_loss[0] == doctest::Approx(r.history.epoch_loss[2]).epsilon(1e-12));
}

TEST_CASE("one SGD step matches a finite-difference update of the full objective") {
  const Dataset ds = two_record_dataset();
  TrainConfig c;
  c.epochs = 1;
  c.batch_size = 2;
  c.lr = 0.3;
  c.warmup_steps = 0;
  c.weight_decay = 0.05;
  c.seed = 4;
  const auto start = init_head(HeadLayout::Plain, 3, 3, c.seed);

  auto objective = [&](const HeadParams& p) {
    Matrix z(2, 3);
    for (int k = 0; k < 2; ++k) {
      const auto out = forward(p, ds.train.feature(k));
      std::copy(out.begin(), out.end(), z.row(k).begin());
    }
    return softmax_ce(z, ds.train.labels).loss;
  };
  const double h = 1e-6;
  HeadParams expected = start;
  for (std::size_t i = 0; i < start.weights.data().size(); ++i) {
    HeadParams up = start, down = start;
    up.weights.data()[i] += h;
    down.weights.data()[i] -= h;
    const double g = (objective(up) - objective(down)) / (2 * h);
    expected.weights.data()[i] -= c.lr * (g + c.weight_decay * start.weights.data()[i]);
  }
  for (std::size_t j = 0; j < 3; ++j) {
    HeadParams up = start, down = start;
    up.bias[j] += h;
    down.bias[j] -= h;
    expected.bias[j] -= c.lr * (objective(up) - objective(down)) / (2 * h);
  }

  const auto got = train(ds, c).params;
  for (std::size_t i = 0; i < got.weights.data().size(); ++i) {
    CHECK(got.weights.data()[i] == doctest::Approx(expected.weights.data()[i]).epsilon(1e-8));
  }
  for (std::size_t j = 0; j < 3; ++j) CHECK(got.bias[j] == doctest::Approx(expected.bias[j]).epsilon(1e-8));
}

TEST_CASE("training is deterministic and leaves the data untouched") {
  const Dataset ds = generate(testing::small_config());
  const Dataset copy = ds;
  const auto part = GroupPartition::assign(ds.catalog, default_boundaries());
  TrainConfig c;
  c.epochs = 2;
  c.batch_size = 32;
  c.method = Method::Bags;
  const auto a = train(ds, c, &part);
  const auto b = train(ds, c, &part);
  CHECK(a.params == b.params);
  CHECK(a.history == b.history);
  CHECK(ds == copy);
  c.seed = 1;
  CHECK_FALSE(train(ds, c, &part).params == a.params);
}

TEST_CASE("loss decreases on the separable dataset for every method") {
  const Dataset ds = generate(testing::small_config());
  const auto part = GroupPartition::assign(ds.catalog, default_boundaries());
  TrainConfig base;
  base.epochs = 4;
  base.batch_size = 32;
  base.lr = 0.05;
  base.warmup_steps = 20;
  const auto baseline = train(ds, base);
  for (auto m : {Method::Softmax, Method::Bags, Method::Reweight, Method::Focal, Method::TailFinetune}) {
    CAPTURE(to_string(m));
    TrainConfig c = base;
    c.method = m;
    const auto r = train(ds, c, &part, m == Method::TailFinetune ? &baseline.params : nullptr);
    CHECK(r.history.epoch_loss.back() < r.history.epoch_loss.front());
    CHECK(r.history.epoch_lr.size() == 4);
  }
  TrainConfig rfs = base;
  rfs.sampler = Sampler::Rfs;
  rfs.rfs_t = 0.5;
  const auto r = train(ds, rfs);
  CHECK(r.history.epoch_loss.back() < r.history.epoch_loss.front());
}

TEST_CASE("layout and method mismatches") {
  const Dataset ds = generate(testing::small_config());
  TrainConfig c;
  c.epochs = 1;
  c.method = Method::Bags;
  CHECK_THROWS_AS(train(ds, c), ConfigError);
  c.method = Method::TailFinetune;
  CHECK_THROWS_AS(train(ds, c), ConfigError);
  const auto wrong = init_head(HeadLayout::Plain, 3, 4, 0);
  c.method = Method::Softmax;
  CHECK_THROWS_AS(train(ds, c, nullptr, &wrong), ConfigError);
}

TEST_CASE("divergence aborts with the step index") {
  Dataset ds = two_record_dataset();
  TrainConfig c;
  c.epochs = 50;
  c.batch_size = 2;
  c.lr = 1e300;
  c.warmup_steps = 0;
  CHECK_THROWS_WITH_AS(train(ds, c), doctest::Contains("non-finite loss at step"), NumericalError);
}

TEST_CASE("rfs repeat factors") {
  SUBCASE("frequent categories get factor 1") {
    const auto ds = rfs_toy({5, 8}, 10);
    for (double r : rfs_repeat_factors(ds, 0.3)) CHECK(r == 1.0);
  }
  SUBCASE("f = t/4 gives factor 2") {
    const auto ds = rfs_toy({1, 100}, 100);  // f(1) = 0.01
    const auto r = rfs_repeat_factors(ds, 0.04);
    CHECK(r[0] == 2.0);
    for (std::size_t i = 1; i < r.size(); ++i) CHECK(r[i] == 1.0);
  }
  SUBCASE("stochastic rounding") {
    std::mt19937_64 rng(1);
    const std::vector<double> f{2.3, 1.0, 1.5};
    double total = 0;
    for (int t = 0; t < 2000; ++t) {
      const auto e = rfs_expand_images(f, rng);
      CHECK(std::count(e.begin(), e.end(), 0) >= 2);
      CHECK(std::count(e.begin(), e.end(), 1) == 1);
      total += e.size();
    }
    CHECK(total / 2000 == doctest::Approx(4.8).epsilon(0.02));
  }
  CHECK_THROWS_AS(rfs_repeat_factors(rfs_toy({1}, 2), 0.0), ConfigError);
}

TEST_CASE("tail_finetune_filter") {
  const Dataset ds = generate(testing::small_config());
  const auto f = tail_finetune_filter(ds.train, ds.catalog, 2);
  std::vector<std::int64_t> kept(ds.catalog.num_foreground() + 1, 0);
  for (int y : f.labels) {
    if (y != kBackground) CHECK(bin_of(ds.catalog.count(y)) <= 2);
    ++kept[y];
  }
  for (int j = 1; j <= ds.catalog.num_foreground(); ++j) CHECK(kept[j] <= ds.catalog.count(j));
  CHECK(kept[0] == std::count(ds.train.labels.begin(), ds.train.labels.end(), kBackground));

  const auto heads = rfs_toy({500, 600}, 600);
  CHECK_THROWS_AS(tail_finetune_filter(heads.train, heads.catalog, 2), DataError);
  CHECK_THROWS_AS(tail_finetune_filter(ds.train, ds.catalog, 3), ConfigError);
}
