#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "fundus/error.hpp"
#include "fundus/preprocess.hpp"
#include "test_support.hpp"

using namespace fundus;
using fundus::testing::error_code_of;
using fundus::testing::random_image;

namespace {

// Direct 2-D summation with replicated edges; weights built and normalized here.
ImageGrid blur_oracle(const ImageGrid& img, double sx, double sy, int k) {
  std::vector<double> w;
  double total = 0.0;
  for (int i = -k; i <= k; ++i) {
    for (int j = -k; j <= k; ++j) {
      const double v = std::exp(-(i * i) / (2 * sy * sy) - (j * j) / (2 * sx * sx));
      w.push_back(v);
      total += v;
    }
  }
  ImageGrid out(img.height(), img.width(), img.channels());
  for (int y = 0; y < img.height(); ++y) {
    for (int x = 0; x < img.width(); ++x) {
      for (int c = 0; c < img.channels(); ++c) {
        double acc = 0.0;
        std::size_t n = 0;
        for (int i = -k; i <= k; ++i) {
          for (int j = -k; j <= k; ++j) {
            const int yy = std::clamp(y + i, 0, img.height() - 1);
            const int xx = std::clamp(x + j, 0, img.width() - 1);
            acc += w[n++] / total * img.at(yy, xx, c);
          }
        }
        out.at(y, x, c) = static_cast<float>(acc);
      }
    }
  }
  return out;
}

double max_abs_diff(const ImageGrid& a, const ImageGrid& b) {
  REQUIRE(a.size() == b.size());
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(double(a.values()[i]) - b.values()[i]));
  return m;
}

}  // namespace

TEST_CASE("image grid validates intensities") {
  CHECK_THROWS_AS(ImageGrid::from_values(1, 2, 1, {0.5f, 1.5f}), Error);
  CHECK_THROWS_AS(ImageGrid::from_values(1, 2, 1, {0.5f}), Error);
  CHECK(ImageGrid::from_values(1, 2, 1, {0.0f, 1.0f}).in_unit_range());
}

TEST_CASE("crop_dark_border") {
  SUBCASE("all dark passes through") {
    ImageGrid img(10, 10, 1);
    CHECK(crop_dark_border(img, 0.05f) == img);
  }
  SUBCASE("bright block in rows and cols 2..7 gives 6x6") {
    ImageGrid img(10, 10, 1);
    for (int y = 2; y <= 7; ++y)
      for (int x = 2; x <= 7; ++x) img.at(y, x, 0) = 1.0f;
    const ImageGrid out = crop_dark_border(img, 0.05f);
    CHECK(out.height() == 6);
    CHECK(out.width() == 6);
    CHECK(std::all_of(out.values().begin(), out.values().end(), [](float v) { return v == 1.0f; }));
  }
  SUBCASE("bounding box matches brute-force scan and is idempotent") {
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 30; ++trial) {
      ImageGrid img(12, 15, 3);
      std::uniform_int_distribution<int> ry(0, 11), rx(0, 14);
      const int blobs = 1 + trial % 4;
      int y0 = 99, y1 = -1, x0 = 99, x1 = -1;
      for (int b = 0; b < blobs; ++b) {
        const int y = ry(rng), x = rx(rng);
        img.at(y, x, b % 3) = 0.8f;
        y0 = std::min(y0, y), y1 = std::max(y1, y), x0 = std::min(x0, x), x1 = std::max(x1, x);
      }
      const ImageGrid once = crop_dark_border(img, 0.05f);
      CHECK(once.height() == y1 - y0 + 1);
      CHECK(once.width() == x1 - x0 + 1);
      CHECK(once.at(0, 0, 0) == img.at(y0, x0, 0));
      CHECK(crop_dark_border(once, 0.05f) == once);
    }
  }
  SUBCASE("no dark border leaves image unchanged") {
    ImageGrid img(7, 9, 3, 0.4f);
    CHECK(crop_dark_border(img, 0.05f) == img);
  }
}

TEST_CASE("apply_circle_mask") {
  SUBCASE("5x5 masked count matches per-pixel distance oracle") {
    ImageGrid img(5, 5, 1, 1.0f);
    const ImageGrid out = apply_circle_mask(img, 0.0);
    int masked = 0, expected = 0;
    for (int y = 0; y < 5; ++y) {
      for (int x = 0; x < 5; ++x) {
        masked += out.at(y, x, 0) == 0.0f;
        expected += std::sqrt((y - 2.0) * (y - 2.0) + (x - 2.0) * (x - 2.0)) > 2.5;
      }
    }
    CHECK(expected == 4);
    CHECK(masked == expected);
  }
  SUBCASE("224 corner masked, centre kept") {
    ImageGrid img(224, 224, 3, 1.0f);
    const ImageGrid out = apply_circle_mask(img, 0.0);
    CHECK(out.at(0, 0, 0) == 0.0f);
    CHECK(out.at(223, 223, 2) == 0.0f);
    CHECK(out.at(112, 112, 1) == 1.0f);
  }
  SUBCASE("margin shrinks the disc") {
    ImageGrid img(21, 21, 1, 1.0f);
    const ImageGrid wide = apply_circle_mask(img, 0.0);
    const ImageGrid narrow = apply_circle_mask(img, 0.5);
    const auto lit = [](const ImageGrid& g) { return std::count(g.values().begin(), g.values().end(), 1.0f); };
    CHECK(lit(narrow) < lit(wide));
    CHECK(narrow.at(10, 10, 0) == 1.0f);
  }
  SUBCASE("idempotent") {
    std::mt19937_64 rng(5);
    const ImageGrid img = random_image(16, 16, 3, rng);
    const ImageGrid once = apply_circle_mask(img, 0.1);
    CHECK(apply_circle_mask(once, 0.1) == once);
  }
  SUBCASE("rectangles rejected") {
    CHECK(error_code_of([] { apply_circle_mask(ImageGrid(4, 5, 1), 0.0); }) == ErrorCode::NonSquareInput);
  }
}

TEST_CASE("resize") {
  SUBCASE("identity at same size") {
    std::mt19937_64 rng(1);
    const ImageGrid img = random_image(24, 24, 3, rng);
    CHECK(resize(img, 24) == img);
  }
  SUBCASE("constant preserved") {
    const ImageGrid out = resize(ImageGrid(2, 2, 1, 0.5f), 4);
    CHECK(out.height() == 4);
    for (float v : out.values()) CHECK(v == doctest::Approx(0.5f));
  }
  SUBCASE("4x4 checkerboard to 2x2 matches direct bilinear formula") {
    ImageGrid img(4, 4, 1);
    for (int y = 0; y < 4; ++y)
      for (int x = 0; x < 4; ++x) img.at(y, x, 0) = static_cast<float>((x + y) % 2);
    const ImageGrid out = resize(img, 2);
    // Output pixel centre d maps to source coordinate (d + 0.5) * 2 - 0.5 = 0.5 or 2.5.
    for (int oy = 0; oy < 2; ++oy) {
      for (int ox = 0; ox < 2; ++ox) {
        const double sy = (oy + 0.5) * 2 - 0.5, sx = (ox + 0.5) * 2 - 0.5;
        const int y0 = static_cast<int>(sy), x0 = static_cast<int>(sx);
        const double fy = sy - y0, fx = sx - x0;
        const double v = (1 - fy) * (1 - fx) * img.at(y0, x0, 0) + (1 - fy) * fx * img.at(y0, x0 + 1, 0) +
                         fy * (1 - fx) * img.at(y0 + 1, x0, 0) + fy * fx * img.at(y0 + 1, x0 + 1, 0);
        CHECK(out.at(oy, ox, 0) == doctest::Approx(v).epsilon(1e-6));
        CHECK(out.at(oy, ox, 0) == doctest::Approx(0.5));
      }
    }
  }
}

TEST_CASE("gaussian kernel weights") {
  const GaussianKernelSpec k{1.0, 1.0, 1};
  const auto w = k.weights();
  REQUIRE(w.size() == 9);
  const double centre = 1.0 / (1.0 + 4.0 * std::exp(-0.5) + 4.0 * std::exp(-1.0));
  CHECK(w[4] == doctest::Approx(centre).epsilon(1e-12));
  CHECK(w[0] == doctest::Approx(centre * std::exp(-1.0)).epsilon(1e-12));
  CHECK(w[1] == doctest::Approx(centre * std::exp(-0.5)).epsilon(1e-12));
  double sum = 0.0;
  for (double v : w) sum += v;
  CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));

  CHECK_THROWS_AS((GaussianKernelSpec{0.0, 1.0, 1}.validate()), Error);
  CHECK_THROWS_AS((GaussianKernelSpec{1.0, 1.0, 0}.validate()), Error);
}

TEST_CASE("default_kernel") {
  CHECK(default_kernel(10.0, 224).half_size == 20);
  CHECK(default_kernel(1.0, 64).half_size == 2);
  // 2k+1 must fit inside a 16-pixel target.
  CHECK(2 * default_kernel(10.0, 16).half_size + 1 <= 15);
  CHECK(default_kernel(0.2, 8).half_size == 1);
}

TEST_CASE("gaussian_blur") {
  SUBCASE("impulse reproduces the weight matrix") {
    ImageGrid img(7, 7, 1);
    img.at(3, 3, 0) = 1.0f;
    const GaussianKernelSpec k{1.0, 1.0, 1};
    const ImageGrid out = gaussian_blur(img, k);
    const auto w = k.weights();
    for (int i = -1; i <= 1; ++i)
      for (int j = -1; j <= 1; ++j) CHECK(out.at(3 + i, 3 + j, 0) == doctest::Approx(w[(i + 1) * 3 + j + 1]).epsilon(1e-6));
    CHECK(out.at(0, 0, 0) == 0.0f);
  }
  SUBCASE("constant image preserved") {
    const ImageGrid out = gaussian_blur(ImageGrid(20, 20, 3, 0.7f), GaussianKernelSpec{3.0, 2.0, 5});
    for (float v : out.values()) CHECK(std::abs(v - 0.7f) < 1e-6);
  }
  SUBCASE("matches direct summation, anisotropic too") {
    std::mt19937_64 rng(11);
    for (const auto& k : {GaussianKernelSpec{1.0, 1.0, 1}, GaussianKernelSpec{1.0, 1.0, 3},
                          GaussianKernelSpec{2.0, 0.7, 4}}) {
      const ImageGrid img = random_image(19, 23, 3, rng);
      CHECK(max_abs_diff(gaussian_blur(img, k), blur_oracle(img, k.sigma_x, k.sigma_y, k.half_size)) < 1e-6);
    }
  }
  SUBCASE("stays within input range") {
    std::mt19937_64 rng(12);
    ImageGrid img(16, 16, 1);
    std::uniform_real_distribution<float> u(0.2f, 0.6f);
    for (float& v : img.values()) v = u(rng);
    const ImageGrid out = gaussian_blur(img, GaussianKernelSpec{2.0, 2.0, 4});
    const auto [lo, hi] = std::minmax_element(img.values().begin(), img.values().end());
    for (float v : out.values()) {
      CHECK(v >= *lo - 1e-6f);
      CHECK(v <= *hi + 1e-6f);
    }
  }
  SUBCASE("linear before clamping") {
    std::mt19937_64 rng(13);
    std::normal_distribution<double> n(0.0, 3.0);
    const GaussianKernelSpec k{1.5, 2.5, 3};
    for (int trial = 0; trial < 10; ++trial) {
      const int h = 9, w = 13;
      std::vector<double> x(h * w), y(h * w), mix(h * w);
      const double a = n(rng), b = n(rng);
      for (int i = 0; i < h * w; ++i) {
        x[i] = n(rng), y[i] = n(rng);
        mix[i] = a * x[i] + b * y[i];
      }
      const auto bx = blur_plane(x, h, w, k), by = blur_plane(y, h, w, k), bm = blur_plane(mix, h, w, k);
      for (int i = 0; i < h * w; ++i) CHECK(std::abs(bm[i] - (a * bx[i] + b * by[i])) < 1e-6);
    }
  }
}

TEST_CASE("preprocess_image") {
  PreprocessConfig cfg;
  SUBCASE("shape contract on assorted inputs") {
    std::mt19937_64 rng(21);
    for (auto [h, w] : {std::pair{300, 400}, std::pair{224, 224}, std::pair{50, 31}}) {
      const ImageGrid out = preprocess_image(random_image(h, w, 3, rng), cfg);
      CHECK(out.height() == 224);
      CHECK(out.width() == 224);
      CHECK(out.channels() == 3);
      CHECK(out.in_unit_range());
    }
  }
  SUBCASE("all dark stays dark") {
    const ImageGrid out = preprocess_image(ImageGrid(100, 120, 3), cfg);
    CHECK(out.height() == 224);
    CHECK(std::all_of(out.values().begin(), out.values().end(), [](float v) { return v == 0.0f; }));
  }
  SUBCASE("small target with small kernel") {
    PreprocessConfig small;
    small.target_size = 32;
    small.kernel = default_kernel(1.0, 32);
    std::mt19937_64 rng(22);
    const ImageGrid out = preprocess_image(random_image(40, 50, 3, rng), small);
    CHECK(out.height() == 32);
    CHECK(out.at(0, 0, 0) < 0.5f);  // outside the disc before blurring
  }
  SUBCASE("window larger than target rejected") {
    PreprocessConfig bad;
    bad.target_size = 16;
    CHECK_THROWS_AS(preprocess_image(ImageGrid(20, 20, 3, 0.5f), bad), Error);
  }
}

TEST_CASE("augmentation") {
  std::mt19937_64 rng(31);
  const ImageGrid img = random_image(17, 17, 3, rng);

  SUBCASE("flips are involutions") {
    CHECK(flip_horizontal(flip_horizontal(img)) == img);
    CHECK(flip_vertical(flip_vertical(img)) == img);
    CHECK(flip_horizontal(img).at(0, 0, 1) == img.at(0, 16, 1));
    CHECK(flip_vertical(img).at(0, 3, 2) == img.at(16, 3, 2));
  }
  SUBCASE("degenerate config is the identity") {
    AugmentConfig cfg;
    cfg.zoom_range = 0.0;
    cfg.horizontal_flip = cfg.vertical_flip = false;
    Rng r(4);
    CHECK(augment(img, cfg, r) == img);
  }
  SUBCASE("zoom factor 1 is the identity") { CHECK(max_abs_diff(zoom(img, 1.0, 0.0f), img) < 1e-6); }
  SUBCASE("zoom out fills borders") {
    const ImageGrid out = zoom(ImageGrid(17, 17, 1, 1.0f), 0.5, 0.25f);
    CHECK(out.at(0, 0, 0) == doctest::Approx(0.25f));
    CHECK(out.at(8, 8, 0) == doctest::Approx(1.0f));
  }
  SUBCASE("same seed gives identical output") {
    AugmentConfig cfg;
    cfg.seed = 99;
    CHECK(augment(img, cfg) == augment(img, cfg));
    Rng a(5), b(5);
    CHECK(augment(img, cfg, a) == augment(img, cfg, b));
  }
  SUBCASE("different seeds eventually differ") {
    AugmentConfig cfg;
    bool differs = false;
    for (std::uint64_t s = 0; s < 8 && !differs; ++s) {
      cfg.seed = s;
      AugmentConfig other = cfg;
      other.seed = s + 100;
      differs = !(augment(img, cfg) == augment(img, other));
    }
    CHECK(differs);
  }
  SUBCASE("bad zoom range rejected") {
    AugmentConfig cfg;
    cfg.zoom_range = 1.2;
    CHECK_THROWS_AS(cfg.validate(), Error);
  }
}
