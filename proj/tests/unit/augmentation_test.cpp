#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <numeric>
#include <vector>

#include "atn/augment.hpp"
#include "atn/errors.hpp"

using namespace atn;

namespace {

Image random_image(Rng& rng, std::size_t h, std::size_t w) {
  Image img(h, w, 3);
  for (float& p : img.pixels) p = static_cast<float>(uniform01(rng));
  return img;
}

// Quantized to the byte grid the dataset stores.
Image byte_image(Rng& rng, std::size_t h, std::size_t w) {
  Image img(h, w, 3);
  for (float& p : img.pixels) p = static_cast<float>(rng() % 256) / 255.0f;
  return img;
}

Dataset small_dataset(Rng& rng, std::size_t n) {
  Dataset ds;
  ds.height = 16;
  ds.width = 12;
  ds.hz = 10;
  ds.episodes.push_back({n, "desert", 1});
  for (std::size_t i = 0; i < n; ++i) {
    Record r;
    r.timestamp = 0.1 * static_cast<double>(i);
    r.steering_deg = static_cast<float>(uniform(rng, -20, 20));
    r.kinematics = round_to_float({uniform(rng, 0, 5), uniform(rng, 0, 60), uniform(rng, -45, 45),
                                   uniform(rng, -2, 2), uniform(rng, -45, 45)});
    r.image = image_to_bytes(byte_image(rng, ds.height, ds.width));
    r.seg.assign(ds.height * ds.width, static_cast<std::uint8_t>(rng() % 9));
    ds.records.push_back(std::move(r));
  }
  return ds;
}

}  // namespace

TEST_SUITE("augmentation") {

TEST_CASE("crop") {
  Rng rng(1);
  const Image img = random_image(rng, 64, 64);
  const Image out = crop(img, 0.25, 0.125);
  CHECK(out.height == 40);
  CHECK(out.width == 64);
  for (std::size_t r = 0; r < out.height; r += 7)
    for (std::size_t c = 0; c < out.width; c += 5)
      for (std::size_t ch = 0; ch < 3; ++ch) CHECK(out.at(r, c, ch) == img.at(r + 16, c, ch));
  CHECK(crop(img, 0.0, 0.0) == img);
  CHECK_THROWS_AS(crop(img, 0.5, 0.0), ConfigError);
  CHECK_THROWS_AS(crop(img, -0.1, 0.0), ConfigError);
}

TEST_CASE("brightness jitter") {
  Rng rng(2);
  const Image img = random_image(rng, 8, 8);
  SUBCASE("factor 1 round-trips through HSV") {
    const Image out = brightness_jitter(img, 1.0);
    for (std::size_t i = 0; i < img.pixels.size(); ++i) CHECK(std::abs(out.pixels[i] - img.pixels[i]) <= 1e-6);
  }
  SUBCASE("factor 0.5 halves a gray image") {
    Image gray(4, 4, 3);
    for (std::size_t i = 0; i < gray.pixels.size(); i += 3) {
      const float v = static_cast<float>(uniform01(rng));
      gray.pixels[i] = gray.pixels[i + 1] = gray.pixels[i + 2] = v;
    }
    const Image out = brightness_jitter(gray, 0.5);
    for (std::size_t i = 0; i < gray.pixels.size(); ++i)
      CHECK(out.pixels[i] == doctest::Approx(0.5 * gray.pixels[i]).epsilon(1e-6));
  }
  SUBCASE("factor 10 saturates the value channel") {
    const Image out = brightness_jitter(img, 10.0);
    for (std::size_t r = 0; r < 8; ++r)
      for (std::size_t c = 0; c < 8; ++c) {
        const Hsv in = rgb_to_hsv(img.at(r, c, 0), img.at(r, c, 1), img.at(r, c, 2));
        const Hsv o = rgb_to_hsv(out.at(r, c, 0), out.at(r, c, 1), out.at(r, c, 2));
        if (in.v >= 0.1f) CHECK(o.v == doctest::Approx(1.0).epsilon(1e-6));
        CHECK(o.s == doctest::Approx(in.s).epsilon(1e-4));
      }
  }
  SUBCASE("non-positive factor") {
    CHECK_THROWS_AS(brightness_jitter(img, 0.0), ConfigError);
    CHECK_THROWS_AS(brightness_jitter(img, -1.0), ConfigError);
  }
  SUBCASE("draws stay in the configured range") {
    AugmentConfig config;
    for (int i = 0; i < 1000; ++i) {
      const double f = draw_brightness(rng, config);
      CHECK(f >= 0.3);
      CHECK(f <= 1.7);
    }
    config.literal_brightness_range = true;
    for (int i = 0; i < 1000; ++i) {
      const double f = draw_brightness(rng, config);
      CHECK(f > 0.0);
      CHECK(f <= 10.0);
    }
  }
}

TEST_CASE("horizontal flip") {
  Rng rng(3);
  AugmentedSample s;
  s.image = random_image(rng, 6, 9);
  s.steering_deg = 12.0f;
  s.kinematics = {1.5, 30.0, 4.0, -0.7, 11.0};
  const AugmentedSample f = horizontal_flip(s);
  CHECK(f.steering_deg == -12.0f);
  CHECK(f.kinematics == KinematicsVector{1.5, 30.0, -4.0, 0.7, -11.0});
  CHECK(f.provenance.flipped);
  CHECK(f.image.at(2, 0, 1) == s.image.at(2, 8, 1));

  const AugmentedSample ff = horizontal_flip(f);
  CHECK(ff.image == s.image);
  CHECK(ff.steering_deg == s.steering_deg);
  CHECK(ff.kinematics == s.kinematics);
  CHECK(ff.provenance == s.provenance);

  AugmentedSample five;
  five.image = Image(1, 1, 3);
  five.steering_deg = 5.0f;
  CHECK(five.steering_deg + horizontal_flip(five).steering_deg == 0.0f);
}

TEST_CASE("upsampling copies") {
  CHECK(upsample_copies(12.0) == 10);
  CHECK(upsample_copies(-12.0) == 10);
  CHECK(upsample_copies(7.0) == 5);
  CHECK(upsample_copies(10.0) == 5);
  CHECK(upsample_copies(3.0) == 1);
  CHECK(upsample_copies(5.0) == 1);
  CHECK(upsample_copies(-5.0001) == 5);

  std::vector<AugmentedSample> one(1);
  one[0].steering_deg = 12.0f;
  CHECK(upsample_by_angle(one, 1).size() == 10);
  one[0].steering_deg = 7.0f;
  CHECK(upsample_by_angle(one, 1).size() == 5);
  one[0].steering_deg = 3.0f;
  CHECK(upsample_by_angle(one, 1).size() == 1);
  CHECK(upsample_by_angle(std::vector<AugmentedSample>{}, 1).empty());
}

TEST_CASE("upsampled size is the sum of copies and nothing is invented") {
  Rng rng(4);
  std::vector<AugmentedSample> in(300);
  std::size_t expected = 0;
  for (std::size_t i = 0; i < in.size(); ++i) {
    in[i].steering_deg = static_cast<float>(uniform(rng, -25, 25));
    in[i].provenance.source_index = i;
    expected += static_cast<std::size_t>(upsample_copies(in[i].steering_deg));
  }
  const auto out = upsample_by_angle(in, 77);
  CHECK(out.size() == expected);
  std::map<std::size_t, std::vector<std::size_t>> copies;
  for (const auto& s : out) {
    CHECK(s.steering_deg == in[s.provenance.source_index].steering_deg);
    copies[s.provenance.source_index].push_back(s.provenance.copy_index);
  }
  CHECK(copies.size() == in.size());
  for (auto& [src, idx] : copies) {
    std::sort(idx.begin(), idx.end());
    for (std::size_t c = 0; c < idx.size(); ++c) CHECK(idx[c] == c);
  }
  CHECK(upsample_by_angle(in, 77).size() == out.size());
  for (std::size_t i = 0; i < out.size(); ++i) CHECK(upsample_by_angle(in, 77)[i].provenance == out[i].provenance);
}

TEST_CASE("temporal subsample") {
  std::vector<Record> records(50);
  for (std::size_t i = 0; i < records.size(); ++i) records[i].timestamp = 0.1 * static_cast<double>(i);
  const auto two = temporal_subsample(records, 2.0);
  REQUIRE(two.size() == 10);
  for (std::size_t i = 0; i < two.size(); ++i) CHECK(two[i].timestamp == records[5 * i].timestamp);
  CHECK(temporal_subsample(records, 10.0).size() == records.size());
  CHECK(temporal_subsample(records, 50.0).size() == records.size());
  CHECK(temporal_subsample(std::vector<Record>(records.begin(), records.begin() + 1), 2.0).size() == 1);
  CHECK(temporal_subsample(std::vector<Record>{}, 2.0).empty());
}

TEST_CASE("augmentation plan") {
  Rng rng(5);
  const Dataset ds = small_dataset(rng, 400);
  std::vector<std::size_t> indices(ds.records.size());
  std::iota(indices.begin(), indices.end(), 0);
  AugmentConfig config;
  const auto plan = build_augmentation_plan(ds, indices, config, 99);

  SUBCASE("counts per source are exactly 10x/5x/1x for each orientation") {
    std::map<std::pair<std::size_t, bool>, int> count;
    for (const auto& p : plan) ++count[{p.source_index, p.flipped}];
    CHECK(count.size() == 2 * ds.records.size());
    for (const auto& [key, n] : count) CHECK(n == upsample_copies(ds.records[key.first].steering_deg));
  }
  SUBCASE("steering histogram is symmetric") {
    std::vector<double> angles;
    for (const auto& p : plan) angles.push_back(ds.records[p.source_index].steering_deg * (p.flipped ? -1.0 : 1.0));
    for (double lo = -25.0; lo < 25.0; lo += 0.5) {
      const double hi = lo + 0.5;
      const auto right = std::count_if(angles.begin(), angles.end(), [&](double a) { return a > lo && a <= hi; });
      const auto left = std::count_if(angles.begin(), angles.end(), [&](double a) { return a >= -hi && a < -lo; });
      INFO("bin (" << lo << ", " << hi << "]");
      CHECK(right == left);
    }
  }
  SUBCASE("deterministic in the seed") {
    CHECK(build_augmentation_plan(ds, indices, config, 99) == plan);
    CHECK_FALSE(build_augmentation_plan(ds, indices, config, 100) == plan);
  }
  SUBCASE("upsample and flip switches") {
    config.upsample = false;
    config.flip = false;
    CHECK(build_augmentation_plan(ds, indices, config, 1).size() == ds.records.size());
    config.flip = true;
    CHECK(build_augmentation_plan(ds, indices, config, 1).size() == 2 * ds.records.size());
  }
  SUBCASE("materialized flipped sample mirrors its source") {
    const auto it = std::find_if(plan.begin(), plan.end(), [](const Provenance& p) { return p.flipped; });
    REQUIRE(it != plan.end());
    Provenance plain = *it;
    plain.flipped = false;
    const AugmentedSample a = materialize(ds, plain, config);
    const AugmentedSample b = materialize(ds, *it, config);
    CHECK(b.steering_deg == -a.steering_deg);
    CHECK(b.kinematics == a.kinematics.mirrored());
    CHECK(b.image == mirror_horizontal(a.image));
    CHECK(a.image.height == 10);
  }
  SUBCASE("provenance sidecar round-trips") {
    const auto dir = std::filesystem::temp_directory_path() / "atn_unit" / "provenance";
    std::filesystem::create_directories(dir);
    write_provenance(plan, dir / "provenance.txt");
    CHECK(read_provenance(dir / "provenance.txt") == plan);
  }
  SUBCASE("materialized dataset keeps the dataset format") {
    const std::vector<Provenance> head(plan.begin(), plan.begin() + 20);
    const Dataset out = materialize_dataset(ds, head, config);
    CHECK(out.records.size() == 20);
    CHECK(out.height == 10);
    CHECK_NOTHROW(out.validate());
  }
}

}  // TEST_SUITE
