#include <algorithm>
#include <cmath>
#include <set>
#include <thread>

#include "cbamnet/data.hpp"
#include "doctest.h"
#include "support.hpp"

using namespace cbamnet;
namespace fs = std::filesystem;

namespace {

Image random_image(std::size_t h, std::size_t w, std::uint64_t seed) {
  Rng rng(seed);
  Image img = Image::blank(h, w);
  for (float& v : img.values) v = static_cast<float>(rng.below(256)) / 255.0f;
  return img;
}

Dataset make_dataset(const std::vector<std::size_t>& counts) {
  Dataset ds;
  auto img = std::make_shared<const Image>(Image::blank(4, 4, 0.5f));
  for (std::size_t c = 0; c < counts.size(); ++c) {
    ds.classes.push_back("class" + std::to_string(c));
    for (std::size_t i = 0; i < counts[c]; ++i) {
      ds.samples.push_back({"c" + std::to_string(c) + "/" + std::to_string(i), c, img});
    }
  }
  return ds;
}

std::set<std::string> paths(const Dataset& ds) {
  std::set<std::string> out;
  for (const auto& s : ds.samples) out.insert(s.path);
  return out;
}

std::string header(std::size_t w, std::size_t h) {
  return "P6 " + std::to_string(w) + " " + std::to_string(h) + " 255\n";
}

}  // namespace

TEST_SUITE("data") {

TEST_CASE("ppm decoding") {
  const Image ones = decode_ppm(header(2, 2) + std::string(12, '\xff'));
  CHECK(ones.height == 2);
  CHECK(ones.width == 2);
  for (float v : ones.values) CHECK(v == 1.0f);
  for (float v : decode_ppm(header(3, 1) + std::string(9, '\0')).values) CHECK(v == 0.0f);

  // Interleaved RGB becomes planar [C,H,W].
  const Image px = decode_ppm("P6\n# comment\n2 1\n# another\n255\n" + std::string("\x0a\x14\x1e\x28\x32\x3c", 6));
  CHECK(px.at(0, 0, 0) == 10 / 255.0f);
  CHECK(px.at(2, 0, 0) == 30 / 255.0f);
  CHECK(px.at(0, 0, 1) == 40 / 255.0f);

  CHECK_THROWS(decode_ppm("P5 2 2 255\n" + std::string(4, '\0')));
  CHECK_THROWS(decode_ppm(header(2, 2) + std::string(11, '\0')));
  CHECK_THROWS(decode_ppm("P6 2 2 65535\n" + std::string(24, '\0')));
  CHECK_THROWS(decode_ppm("P6 2 2"));
  CHECK_THROWS(decode_ppm(""));
}

TEST_CASE("ppm round trip") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Image img = random_image(3 + seed % 5, 4 + seed % 3, seed);
    const std::string bytes = encode_ppm(img);
    CHECK(encode_ppm(decode_ppm(bytes)) == bytes);
    CHECK(decode_ppm(bytes) == img);
  }
  Image wild = Image::blank(1, 2);
  wild.values = {-0.5f, 2.0f, 0.5f, 0.5f, 0.0f, 1.0f};
  const Image q = decode_ppm(encode_ppm(wild));
  CHECK(q.values[0] == 0.0f);
  CHECK(q.values[1] == 1.0f);
  CHECK(q.values[2] == 128 / 255.0f);
}

TEST_CASE("bilinear resize") {
  const Image img = random_image(5, 7, 1);
  CHECK(resize_bilinear(img, 5, 7) == img);
  Image four = Image::blank(2, 2);
  four.values = {0.1f, 0.2f, 0.3f, 0.4f, 0, 0, 0, 1, 1, 1, 1, 1};
  const Image one = resize_bilinear(four, 1, 1);
  CHECK(one.values[0] == doctest::Approx(0.25).epsilon(1e-6));
  CHECK(one.values[1] == doctest::Approx(0.25).epsilon(1e-6));
  CHECK(one.values[2] == doctest::Approx(1.0).epsilon(1e-6));
  const Image flat = resize_bilinear(Image::blank(3, 5, 0.7f), 11, 2);
  for (float v : flat.values) CHECK(v == doctest::Approx(0.7f).epsilon(1e-6));
  for (std::size_t h : {1, 3, 8, 17})
    for (std::size_t w : {1, 4, 9}) {
      const Image r = resize_bilinear(img, h, w);
      CHECK(r.channels == 3);
      CHECK(r.height == h);
      CHECK(r.width == w);
      CHECK(r.values.size() == 3 * h * w);
    }
  // Upsampling 1 -> 2 samples at -0.25 and 0.75, edge-clamped: [a, 0.25a + 0.75b].
  Image row = Image::blank(1, 2, 0.0f, 1);
  row.values = {0.0f, 1.0f};
  const Image up = resize_bilinear(row, 1, 4);
  CHECK(up.values[0] == 0.0f);
  CHECK(up.values[1] == doctest::Approx(0.25f));
  CHECK(up.values[2] == doctest::Approx(0.75f));
  CHECK(up.values[3] == 1.0f);
}

TEST_CASE("normalization") {
  const Image img = random_image(4, 4, 2);
  CHECK(normalize(img, Normalization{}) == img);
  const Normalization n{{0.2, 0.4, 0.6}, {0.5, 0.25, 2.0}};
  Image consts = Image::blank(2, 2);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t p = 0; p < 4; ++p) consts.values[c * 4 + p] = static_cast<float>(n.mean[c]);
  for (float v : normalize(consts, n).values) CHECK(std::abs(v) < 1e-6);
  const Image back = denormalize(normalize(img, n), n);
  for (std::size_t i = 0; i < img.values.size(); ++i) CHECK(std::abs(back.values[i] - img.values[i]) < 1e-6);
  CHECK_THROWS(Normalization({{0, 0, 0}, {1, 0, 1}}).validate());
}

TEST_CASE("augmentation") {
  const Image img = random_image(9, 7, 3);
  CHECK(apply_augment(img, AugmentParams{}) == img);
  CHECK(flip_horizontal(flip_horizontal(img)) == img);
  CHECK(flip_vertical(flip_vertical(img)) == img);
  CHECK(flip_horizontal(img).at(1, 2, 0) == img.at(1, 2, 6));
  CHECK(flip_vertical(img).at(2, 0, 3) == img.at(2, 8, 3));
  const Image r0 = rotate(img, 0.0);
  for (std::size_t i = 0; i < img.values.size(); ++i) CHECK(std::abs(r0.values[i] - img.values[i]) < 1e-6);

  // Square image, 90 degrees: every pixel lands on a grid point.
  const Image sq = random_image(5, 5, 4);
  const Image r90 = rotate(sq, 90.0);
  const Image r360 = rotate(rotate(r90, 90.0), 180.0);
  for (std::size_t i = 0; i < sq.values.size(); ++i) CHECK(std::abs(r360.values[i] - sq.values[i]) < 1e-5);

  // Rotation fills with zero and stays in range.
  const Image white = Image::blank(16, 16, 1.0f);
  const Image rw = rotate(white, 10.0);
  CHECK(rw.at(0, 0, 0) == 0.0f);
  CHECK(rw.at(0, 8, 8) == doctest::Approx(1.0f));
  Rng rng(5);
  for (int i = 0; i < 50; ++i) {
    for (float v : augment(img, rng).values) CHECK((v >= 0.0f && v <= 1.0f));
  }

  // Draw order is fixed and disabled options still consume their draw.
  Rng a(9), b(9);
  AugmentOptions off;
  off.hflip = false;
  off.rotate = false;
  for (int i = 0; i < 20; ++i) {
    const auto pa = draw_augment(a, AugmentOptions{});
    const auto pb = draw_augment(b, off);
    CHECK(pa.vflip == pb.vflip);
    CHECK_FALSE(pb.hflip);
    CHECK(pb.degrees == 0.0);
    CHECK(std::abs(pa.degrees) <= 10.0);
  }
  // Both flips appear with roughly even odds.
  Rng c(10);
  int h = 0, v = 0;
  for (int i = 0; i < 4000; ++i) {
    const auto p = draw_augment(c, AugmentOptions{});
    h += p.hflip;
    v += p.vflip;
  }
  CHECK(std::abs(h - 2000) < 200);
  CHECK(std::abs(v - 2000) < 200);
}

TEST_CASE("split arithmetic and partition") {
  const Dataset ds = make_dataset({500, 400});
  const auto s = split_dataset(ds, 0.8, 42);
  CHECK(s.second.class_counts() == std::vector<std::size_t>{100, 80});
  CHECK(s.first.class_counts() == std::vector<std::size_t>{400, 320});
  const auto again = split_dataset(ds, 0.8, 42);
  CHECK(paths(again.second) == paths(s.second));
  CHECK(paths(split_dataset(ds, 0.8, 43).second) != paths(s.second));

  std::set<std::string> all = paths(s.first), test = paths(s.second);
  for (const auto& p : test) CHECK(all.insert(p).second);
  CHECK(all == paths(ds));

  const auto fv = validation_split(s.first, 0.2, 42);
  CHECK(fv.second.class_counts() == std::vector<std::size_t>{80, 64});
  std::set<std::string> fit = paths(fv.first);
  for (const auto& p : paths(fv.second)) CHECK(fit.insert(p).second);
  CHECK(fit == paths(s.first));
  CHECK(paths(validation_split(s.first, 0.2, 42).second) == paths(fv.second));

  CHECK_THROWS(split_dataset(make_dataset({5, 1}), 0.8, 1));
  CHECK_THROWS(split_dataset(ds, 1.0, 1));
  CHECK_THROWS(split_dataset(ds, 0.0, 1));

  // Both halves keep dataset order.
  for (const auto* half : {&s.first, &s.second}) {
    for (std::size_t i = 1; i < half->samples.size(); ++i) {
      CHECK(half->samples[i - 1].label <= half->samples[i].label);
    }
  }
}

TEST_CASE("small-class exclusion") {
  const Dataset ds = make_dataset({480, 691 * 5, 505, 506});
  const Dataset kept = exclude_small_classes(ds);
  // 480 -> test 96; 505 -> 101; 506 -> 102.
  CHECK(kept.classes == std::vector<std::string>{"class1", "class2", "class3"});
  CHECK(kept.class_counts() == std::vector<std::size_t>{3455, 505, 506});
  kept.validate();
  CHECK(split_dataset(kept, 0.8, 1).second.class_counts()[0] == 691);
  // n = 500 leaves exactly 100 for test, which is "100 or fewer".
  CHECK_THROWS(exclude_small_classes(make_dataset({500, 20})));
  const Dataset untouched = exclude_small_classes(make_dataset({600, 700}));
  CHECK(untouched.class_counts() == std::vector<std::size_t>{600, 700});
}

TEST_CASE("directory scan") {
  testing::TempDir dir;
  for (const char* cls : {"beta", "alpha"}) {
    fs::create_directories(dir / cls);
    for (int i = 2; i >= 0; --i) write_ppm(dir / cls / ("f" + std::to_string(i) + ".ppm"), random_image(4, 4, i));
  }
  testing::spit(dir / "alpha" / "notes.txt", "ignored");
  const Dataset ds = scan_directory(dir.path());
  CHECK(ds.classes == std::vector<std::string>{"alpha", "beta"});
  REQUIRE(ds.size() == 6);
  CHECK(fs::path(ds.samples[0].path).filename() == "f0.ppm");
  CHECK(ds.samples[3].label == 1);
  const Dataset again = scan_directory(dir.path());
  for (std::size_t i = 0; i < 6; ++i) {
    CHECK(again.samples[i].path == ds.samples[i].path);
    CHECK(*again.samples[i].image == *ds.samples[i].image);
  }

  testing::spit(dir / "beta" / "broken.ppm", "P6 4 4 200\n");
  CHECK_THROWS(scan_directory(dir.path()));
  CleaningReport report;
  const Dataset lenient = scan_directory(dir.path(), true, &report);
  CHECK(lenient.size() == 6);
  REQUIRE(report.skipped.size() == 1);
  CHECK(report.skipped[0].path.ends_with("broken.ppm"));
  CHECK(report.to_text().find("broken.ppm") != std::string::npos);

  fs::create_directories(dir / "empty");
  CHECK_THROWS(scan_directory(dir.path(), true));
}

TEST_CASE("synthetic corpus") {
  testing::TempDir a, b;
  const SynthSpec spec{4, 6, 48, 42};
  const Dataset da = generate_synthetic(spec, a.path());
  generate_synthetic(spec, b.path());
  CHECK(da.size() == 24);
  std::size_t files = 0;
  for (const auto& cls : synthetic_class_names()) {
    for (const auto& e : fs::directory_iterator(a / cls)) {
      ++files;
      CHECK(testing::slurp(e.path()) == testing::slurp(b / cls / e.path().filename().string()));
    }
  }
  CHECK(files == 24);
  const Dataset scanned = scan_directory(a.path());
  CHECK(scanned.classes == synthetic_class_names());
  for (std::size_t i = 0; i < 24; ++i) CHECK(*scanned.samples[i].image == *da.samples[i].image);

  for (std::size_t c = 0; c < 4; ++c)
    for (std::size_t d = c + 1; d < 4; ++d) CHECK_FALSE(render_ship(c, 48, 42, 0) == render_ship(d, 48, 42, 0));
  CHECK(render_ship(1, 48, 42, 3) == render_ship(1, 48, 42, 3));
  CHECK_FALSE(render_ship(1, 48, 42, 3) == render_ship(1, 48, 43, 3));
  CHECK_THROWS(generate_synthetic(SynthSpec{4, 1, 16, 1}, a / "small"));
}

TEST_CASE("batch assembly") {
  testing::TempDir dir;
  const Dataset ds = generate_synthetic(SynthSpec{2, 5, 40, 1}, dir.path());
  BatchOptions opts;
  opts.height = opts.width = 32;
  opts.norm = channel_stats(ds, 32, 32);
  opts.augment = true;
  const std::vector<std::size_t> idx{7, 0, 3, 9, 4};
  const auto one = assemble_batch<float>(ds, idx, opts, 5);
  CHECK(one.images.shape() == Shape{5, 3, 32, 32});
  CHECK(one.labels == std::vector<std::size_t>{1, 0, 0, 1, 0});
  for (std::size_t w : {2, 3, 8}) {
    opts.workers = w;
    const auto many = assemble_batch<float>(ds, idx, opts, 5);
    CHECK(std::equal(one.images.data().begin(), one.images.data().end(), many.images.data().begin()));
  }
  const auto other = assemble_batch<float>(ds, idx, opts, 6);
  CHECK_FALSE(std::equal(one.images.data().begin(), one.images.data().end(), other.images.data().begin()));

  opts.augment = false;
  const auto plain = assemble_batch<float>(ds, {2}, opts, 0);
  const auto single = image_to_input<float>(*ds.samples[2].image, opts);
  CHECK(std::equal(plain.images.data().begin(), plain.images.data().end(), single.data().begin()));

  // Fit-set statistics normalize that set to zero mean, unit deviation.
  const auto all = [&] {
    std::vector<std::size_t> v(ds.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = i;
    return assemble_batch<double>(ds, v, opts, 0);
  }();
  for (std::size_t c = 0; c < 3; ++c) {
    double s = 0.0, s2 = 0.0;
    std::size_t n = 0;
    for (std::size_t b = 0; b < ds.size(); ++b)
      for (std::size_t p = 0; p < 32 * 32; ++p) {
        const double v = all.images.data()[(b * 3 + c) * 1024 + p];
        s += v;
        s2 += v * v;
        ++n;
      }
    CHECK(std::abs(s / n) < 1e-4);
    CHECK(std::abs(s2 / n - 1.0) < 1e-3);
  }
}

}  // TEST_SUITE
