#include <gtest/gtest.h>

#include "helpers.hpp"
#include "mtk/mtk_build.hpp"
#include "mtk/synth.hpp"

using namespace mtk;

namespace {

const std::vector<std::size_t> kClasses = {4, 2, 5};
const std::vector<bool> kSecured = {true, false, true};

std::vector<TriggerKey> keys_for(ImageShape s) { return default_key_set(make_tasks(kClasses, kSecured), s); }

}  // namespace

TEST(BuildD0, SecuredLabelsUniform) {
  const std::size_t n = 10000;
  auto ds = test::random_dataset(kClasses, kSecured, n, {2, 2, 1}, 3);
  // Put all ground truth on class 0 so a leak would show up.
  std::vector<std::uint16_t> zeros(ds.label_data().size(), 0);
  MultiTaskDataset skewed(ds.tasks(), ds.shape(), ds.pixel_data(), zeros);
  auto d0 = build_d0(skewed, 1);
  for (std::size_t c = 0; c < 4; ++c)
    EXPECT_NEAR(empirical_marginal(d0, 0, c), 0.25, test::binomial_bound(0.25, n));
  for (std::size_t c = 0; c < 5; ++c)
    EXPECT_NEAR(empirical_marginal(d0, 2, c), 0.2, test::binomial_bound(0.2, n));
  for (std::size_t s = 0; s < n; ++s) ASSERT_EQ(d0.label(s, 1), 0);
  EXPECT_EQ(*d0.provenance_data(), skewed.label_data());
  EXPECT_EQ(d0.pixel_data(), skewed.pixel_data());
}

TEST(BuildD0, NeedsSecuredTask) {
  auto ds = test::random_dataset({2, 3}, {false, false}, 10, {2, 2, 1}, 1);
  EXPECT_THROW(build_d0(ds, 1), InvalidInput);
}

TEST(BuildDj, EnumerationOnFourSamples) {
  ImageShape shape{32, 32, 3};
  auto ds = test::random_dataset(kClasses, kSecured, 4, shape, 8);
  auto keys = keys_for(shape);
  auto d0 = build_d0(ds, 2);
  for (const auto& key : keys) {
    auto dj = build_dj(d0, key, key.task);
    for (std::size_t s = 0; s < 4; ++s) {
      for (std::size_t p = 0; p < shape.pixels(); ++p)
        for (std::size_t c = 0; c < 3; ++c) {
          const float got = dj.image(s)[p * 3 + c];
          if (key.mask[p])
            ASSERT_EQ(got, key.color[c]);
          else
            ASSERT_EQ(got, d0.image(s)[p * 3 + c]);
        }
      for (std::size_t t = 0; t < 3; ++t)
        ASSERT_EQ(dj.label(s, t), t == key.task ? ds.label(s, t) : d0.label(s, t));
    }
  }
}

TEST(BuildDj, Errors) {
  ImageShape shape{32, 32, 3};
  auto ds = test::random_dataset(kClasses, kSecured, 4, shape, 8);
  auto keys = keys_for(shape);
  EXPECT_THROW(build_dj(ds, keys[0], 0), InvalidInput);
  auto d0 = build_d0(ds, 2);
  EXPECT_THROW(build_dj(d0, keys[0], 2), InvalidInput);
  auto k1 = keys[0];
  k1.task = 1;
  EXPECT_THROW(build_dj(d0, k1, 1), InvalidInput);
}

// Exhaustive check of every build law on 50 samples.
TEST(BuildAll, LawsOnFiftySamples) {
  ImageShape shape{32, 32, 3};
  auto ds = test::random_dataset(kClasses, kSecured, 50, shape, 21);
  auto keys = keys_for(shape);
  std::reverse(keys.begin(), keys.end());
  auto set = build_all(ds, keys, 77);
  ASSERT_EQ(set.parts.size(), keys.size() + 1);
  EXPECT_EQ(set.total_size(), (keys.size() + 1) * ds.size());
  EXPECT_EQ(set.keys[0].task, 0u);
  EXPECT_EQ(set.keys[1].task, 2u);
  EXPECT_EQ(set.origin_hash, dataset_hash(ds));
  const auto& d0 = set.parts[0];
  for (std::size_t s = 0; s < 50; ++s) {
    EXPECT_TRUE(std::equal(d0.image(s).begin(), d0.image(s).end(), ds.image(s).begin()));
    EXPECT_EQ(d0.label(s, 1), ds.label(s, 1));
    for (std::size_t t = 0; t < 3; ++t) EXPECT_EQ(d0.ground_truth(s, t), ds.label(s, t));
  }
  for (std::size_t p = 1; p < set.parts.size(); ++p) {
    const auto& key = set.keys[p - 1];
    const auto& dj = set.parts[p];
    ASSERT_EQ(dj.size(), ds.size());
    for (std::size_t s = 0; s < 50; ++s) {
      auto want = apply_key(ds.image(s), key);
      EXPECT_TRUE(std::equal(want.begin(), want.end(), dj.image(s).begin()));
      for (std::size_t t = 0; t < 3; ++t) {
        if (t == key.task)
          EXPECT_EQ(dj.label(s, t), ds.label(s, t));
        else
          EXPECT_EQ(dj.label(s, t), d0.label(s, t));
      }
    }
  }
}

TEST(BuildAll, SizesDeterminismAndErrors) {
  ImageShape shape{8, 8, 3};
  auto ds = test::random_dataset(kClasses, kSecured, 1000, shape, 4);
  auto keys = keys_for(shape);
  auto a = build_all(ds, keys, 5);
  EXPECT_EQ(a.total_size(), 3000u);
  auto b = build_all(ds, keys, 5);
  ASSERT_EQ(a.parts.size(), b.parts.size());
  for (std::size_t p = 0; p < a.parts.size(); ++p) EXPECT_EQ(a.parts[p], b.parts[p]);
  EXPECT_FALSE(build_all(ds, keys, 6).parts[0] == a.parts[0]);

  auto one = test::random_dataset({4, 2}, {true, false}, 10, shape, 4);
  auto one_keys = default_key_set(one.tasks(), shape);
  EXPECT_EQ(build_all(one, one_keys, 1).parts.size(), 2u);
  auto mismatch = keys;
  mismatch[1].task = 1;
  EXPECT_THROW(build_all(ds, mismatch, 1), InvalidInput);
  EXPECT_THROW(build_all(ds, {keys[0]}, 1), InvalidInput);
}

TEST(BuildAll, SaveLoadRoundTrip) {
  ImageShape shape{8, 8, 3};
  auto ds = test::random_dataset(kClasses, kSecured, 30, shape, 4);
  auto set = build_all(ds, keys_for(shape), 9);
  auto dir = test::temp_dir("keyed");
  save_keyed(set, dir);
  auto back = load_keyed(dir);
  EXPECT_EQ(back.origin_hash, set.origin_hash);
  EXPECT_EQ(back.seed, set.seed);
  ASSERT_EQ(back.parts.size(), set.parts.size());
  for (std::size_t p = 0; p < set.parts.size(); ++p) EXPECT_EQ(back.parts[p], set.parts[p]);
  for (std::size_t k = 0; k < set.keys.size(); ++k) EXPECT_EQ(back.keys[k].mask, set.keys[k].mask);
  std::filesystem::remove_all(dir);
  EXPECT_THROW(load_keyed(dir), Error);
}
