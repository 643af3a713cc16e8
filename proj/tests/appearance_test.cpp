#include <gtest/gtest.h>

#include <cmath>
#include <fstream>

#include "ss3d/appearance/background.hpp"
#include "ss3d/appearance/image_io.hpp"
#include "ss3d/appearance/texture.hpp"
#include "ss3d/autodiff/grad_check.hpp"
#include "ss3d/common/error.hpp"

using namespace ss3d;

namespace {

ad::Array random_array(const ad::Shape& shape, Rng& rng, double lo, double hi) {
  ad::Array a(shape);
  for (double& v : a.data()) v = uniform(rng, lo, hi);
  return a;
}

ad::ScalarFunction weighted(std::function<ad::Var(ad::Var)> f, std::uint64_t seed) {
  return [f, seed](ad::Tape& tape, ad::Var x) {
    ad::Var y = f(x);
    Rng rng = make_rng(seed, {99});
    return ad::sum(y * tape.constant(random_array(y.shape(), rng, 0.5, 1.5)));
  };
}

// Direct-sum TV oracle.
double tv_oracle(const ad::Array& img) {
  const std::size_t h = img.shape()[0], w = img.shape()[1], c = img.shape()[2];
  double sx = 0.0, sy = 0.0;
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      for (std::size_t ch = 0; ch < c; ++ch) {
        const double v = img[(y * w + x) * c + ch];
        if (x + 1 < w) sx += std::abs(img[(y * w + x + 1) * c + ch] - v);
        if (y + 1 < h) sy += std::abs(img[((y + 1) * w + x) * c + ch] - v);
      }
    }
  }
  return sx / static_cast<double>(h * (w - 1) * c) + sy / static_cast<double>((h - 1) * w * c);
}

double tv_of(const ad::Array& img) {
  ad::Tape tape;
  return total_variation(tape.constant(img)).item();
}

}  // namespace

TEST(Atlas, LayoutAndCorners) {
  const TextureAtlas atlas = make_atlas(80, 4);
  EXPECT_EQ(atlas.grid, 9u);
  EXPECT_EQ(atlas.size(), 36u);
  EXPECT_EQ(atlas.corner(0, 0), Vec2(0.5, 0.5));
  EXPECT_EQ(atlas.corner(0, 1), Vec2(3.5, 0.5));
  EXPECT_EQ(atlas.corner(10, 2), Vec2(4.5, 7.5));
  EXPECT_THROW(make_atlas(0, 4), Error);
  EXPECT_THROW(make_atlas(4, 1), Error);
  TriangleMesh m = make_icosphere(1);
  atlas.apply(m);
  EXPECT_EQ(m.face_uvs.size(), m.num_faces());
  for (const Vec2& uv : m.uvs) {
    EXPECT_GT(uv[0], 0.0);
    EXPECT_LT(uv[1], 1.0);
  }
}

TEST(Texture, SingleColorIsConstant) {
  TextureSpec spec = TextureSpec::few_color(6, 1);
  Rng rng = make_rng(1);
  spec.weights = random_array(spec.weights.shape(), rng, -3, 3);
  spec.palette[0] = logit(0.2);
  spec.palette[1] = logit(0.6);
  spec.palette[2] = logit(0.9);
  const ad::Array img = realize_texture(spec);
  for (std::size_t i = 0; i < 36; ++i) {
    EXPECT_NEAR(img[3 * i], 0.2, 1e-12);
    EXPECT_NEAR(img[3 * i + 1], 0.6, 1e-12);
    EXPECT_NEAR(img[3 * i + 2], 0.9, 1e-12);
  }
}

TEST(Texture, SaturatedWeightsPickPaletteColors) {
  TextureSpec spec = TextureSpec::few_color(4, 2);
  for (int c = 0; c < 3; ++c) {
    spec.palette[c] = -40.0;     // black
    spec.palette[3 + c] = 40.0;  // white
  }
  for (std::size_t t = 0; t < 16; ++t) {
    const bool white = t % 3 == 0;
    spec.weights[2 * t] = white ? -20.0 : 20.0;
    spec.weights[2 * t + 1] = white ? 20.0 : -20.0;
  }
  const ad::Array img = realize_texture(spec);
  for (std::size_t t = 0; t < 16; ++t) {
    for (int c = 0; c < 3; ++c) EXPECT_NEAR(img[3 * t + c], t % 3 == 0 ? 1.0 : 0.0, 1e-6);
  }
}

TEST(Texture, EqualLogitsGiveUniformMix) {
  TextureSpec spec = TextureSpec::few_color(3, 2);
  for (int c = 0; c < 3; ++c) {
    spec.palette[c] = -1e3;
    spec.palette[3 + c] = 1e3;
  }
  for (double v : realize_texture(spec).values()) EXPECT_NEAR(v, 0.5, 1e-12);
}

TEST(Texture, RejectsZeroColors) {
  EXPECT_THROW(TextureSpec::few_color(4, 0), Error);
}

TEST(Texture, FewColorOutputInPaletteHull) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng = make_rng(seed);
    const std::size_t colors = 1 + seed % 4;
    TextureSpec spec = TextureSpec::few_color(5, colors);
    spec.weights = random_array(spec.weights.shape(), rng, -5, 5);
    spec.palette = random_array(spec.palette.shape(), rng, -4, 4);
    const ad::Array img = realize_texture(spec);
    ad::Tape tape;
    const ad::Array mix = ad::softmax(tape.constant(spec.weights), 2).value();
    const ad::Array pal = ad::sigmoid(tape.constant(spec.palette)).value();
    for (std::size_t t = 0; t < 25; ++t) {
      double weight_sum = 0.0;
      for (std::size_t k = 0; k < colors; ++k) {
        EXPECT_GE(mix[t * colors + k], 0.0);
        weight_sum += mix[t * colors + k];
      }
      EXPECT_NEAR(weight_sum, 1.0, 1e-6);
      // Convex combination of the palette with the softmax weights reproduces the texel.
      for (int c = 0; c < 3; ++c) {
        double hull = 0.0, lo = 1.0, hi = 0.0;
        for (std::size_t k = 0; k < colors; ++k) {
          hull += mix[t * colors + k] * pal[3 * k + c];
          lo = std::min(lo, pal[3 * k + c]);
          hi = std::max(hi, pal[3 * k + c]);
        }
        const double v = img[3 * t + c];
        EXPECT_NEAR(v, hull, 1e-12);
        EXPECT_GE(v, lo - 1e-12);
        EXPECT_LE(v, hi + 1e-12);
        EXPECT_GE(v, 0.0);
        EXPECT_LE(v, 1.0);
      }
    }
  }
}

TEST(Texture, FreeRgbInUnitRange) {
  TextureSpec spec = TextureSpec::free_rgb(4);
  Rng rng = make_rng(2);
  spec.rgb = random_array(spec.rgb.shape(), rng, -50, 50);
  for (double v : realize_texture(spec).values()) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
}

TEST(Texture, GradientsMatchFiniteDifferences) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng = make_rng(seed, {3});
    const ad::Array point = random_array({4 * 4 * 3 + 3 * 3}, rng, -2, 2);
    auto fn = weighted(
        [](ad::Var x) {
          return realize_few_color(ad::reshape(ad::slice(x, 0, 0, 48), {4, 4, 3}),
                                   ad::reshape(ad::slice(x, 0, 48, 57), {3, 3}));
        },
        seed);
    EXPECT_TRUE(ad::grad_check(fn, point).passed(1e-4)) << seed;
    auto free_fn = weighted([](ad::Var x) { return realize_free_rgb(ad::reshape(x, {3, 3, 3})); }, seed);
    EXPECT_TRUE(ad::grad_check(free_fn, random_array({27}, rng, -2, 2)).passed(1e-4)) << seed;
  }
}

TEST(TotalVariation, ConstantImageIsZero) {
  EXPECT_EQ(tv_of(ad::Array({5, 5, 3}, 0.4)), 0.0);
}

TEST(TotalVariation, RampMatchesOracle) {
  const std::size_t t = 7;
  ad::Array ramp({t, t, 3});
  for (std::size_t y = 0; y < t; ++y) {
    for (std::size_t x = 0; x < t; ++x) {
      for (int c = 0; c < 3; ++c) ramp[(y * t + x) * 3 + c] = static_cast<double>(x) / (t - 1);
    }
  }
  EXPECT_NEAR(tv_of(ramp), 1.0 / (t - 1), 1e-15);
  EXPECT_NEAR(tv_of(ramp), tv_oracle(ramp), 1e-15);
}

TEST(TotalVariation, CheckerboardMatchesOracle) {
  ad::Array board({6, 6, 3});
  for (std::size_t y = 0; y < 6; ++y) {
    for (std::size_t x = 0; x < 6; ++x) {
      for (int c = 0; c < 3; ++c) board[(y * 6 + x) * 3 + c] = static_cast<double>((x + y) % 2);
    }
  }
  EXPECT_EQ(tv_of(board), 2.0);
  EXPECT_EQ(tv_of(board), tv_oracle(board));
  Rng rng = make_rng(4);
  const ad::Array noise = random_array({5, 7, 3}, rng, 0, 1);
  EXPECT_NEAR(tv_of(noise), tv_oracle(noise), 1e-14);
}

TEST(TotalVariation, GradientMatchesFiniteDifferences) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng = make_rng(seed, {5});
    // A noisy checkerboard keeps every difference away from the |.| kink and
    // makes each texel a local extremum, so no gradient entry cancels to an
    // exact zero that finite differences would only resolve to rounding noise.
    ad::Array img({4, 5, 3});
    for (std::size_t y = 0; y < 4; ++y) {
      for (std::size_t x = 0; x < 5; ++x) {
        for (std::size_t c = 0; c < 3; ++c) img[(y * 5 + x) * 3 + c] = 0.25 + 0.5 * ((x + y) % 2) + uniform(rng, -0.2, 0.2);
      }
    }
    auto fn = [](ad::Tape&, ad::Var x) { return total_variation(x); };
    EXPECT_TRUE(ad::grad_check(fn, img).passed(1e-4)) << seed;
  }
}

TEST(Background, SingleGrayRowIsConstant) {
  const ad::Array img = realize_background(StripeBackground::constant(1, 0.5, 0.5, 0.5), 6, 5);
  for (double v : img.values()) EXPECT_NEAR(v, 0.5, 1e-12);
}

TEST(Background, TwoRowsInterpolateVertically) {
  StripeBackground bg = StripeBackground::constant(2, 0.0, 0.0, 0.0);
  for (int c = 0; c < 3; ++c) {
    bg.rows[c] = -1e3;
    bg.rows[3 + c] = 1e3;
  }
  const ad::Array img = realize_background(bg, 4, 3);
  const double expected[4] = {0.0, 0.25, 0.75, 1.0};  // row centers at -0.25, 0.25, 0.75, 1.25 in source rows
  for (std::size_t y = 0; y < 4; ++y) {
    for (std::size_t i = 0; i < 9; ++i) EXPECT_NEAR(img[y * 9 + i], expected[y], 1e-12);
  }
}

TEST(Background, RowsAreExactlyConstant) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng = make_rng(seed, {6});
    StripeBackground bg;
    bg.rows = random_array({1 + seed % 8, 3}, rng, -6, 6);
    const ad::Array img = realize_background(bg, 16, 11);
    for (std::size_t y = 0; y < 16; ++y) {
      for (std::size_t x = 1; x < 11; ++x) {
        for (int c = 0; c < 3; ++c) EXPECT_EQ(img[(y * 11 + x) * 3 + c], img[(y * 11) * 3 + c]);
      }
    }
  }
  EXPECT_THROW(realize_background(StripeBackground::constant(9, 0.5, 0.5, 0.5), 8, 8), Error);
}

TEST(Background, GradientMatchesFiniteDifferences) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng = make_rng(seed, {7});
    auto fn = weighted([](ad::Var x) { return realize_background(ad::reshape(x, {4, 3}), 10, 3); }, seed);
    EXPECT_TRUE(ad::grad_check(fn, random_array({12}, rng, -2, 2)).passed(1e-4)) << seed;
  }
}

TEST(Background, FitRecoversRowMeans) {
  const ad::Array img = realize_background(StripeBackground::constant(4, 0.2, 0.4, 0.8), 8, 8);
  const ad::Array again = realize_background(fit_background(img, 4), 8, 8);
  for (std::size_t i = 0; i < img.size(); ++i) EXPECT_NEAR(again[i], img[i], 1e-9);
}

TEST(ImageIo, PngAndPpmRoundTripWithinQuantization) {
  Rng rng = make_rng(8);
  const ad::Array img = random_array({7, 9, 3}, rng, 0, 1);
  for (const char* ext : {".png", ".ppm"}) {
    const std::string path = ::testing::TempDir() + "/img" + ext;
    write_image(path, img);
    const ad::Array back = read_image(path);
    ASSERT_EQ(back.shape(), img.shape());
    for (std::size_t i = 0; i < img.size(); ++i) EXPECT_LE(std::abs(back[i] - img[i]), 0.5 / 255 + 1e-12);
    write_image(path, back);
    EXPECT_EQ(read_image(path).values(), back.values());
  }
}

TEST(ImageIo, RejectsGarbage) {
  const std::string path = ::testing::TempDir() + "/garbage.png";
  std::ofstream(path) << "not an image at all";
  try {
    read_image(path);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), "E_IO");
  }
  EXPECT_THROW(read_image(::testing::TempDir() + "/missing.png"), Error);
}

TEST(ImageIo, TileImagesPlacesTiles) {
  const ad::Array a({2, 2, 3}, 0.0);
  const ad::Array b({2, 2, 3}, 1.0);
  const ad::Array grid = tile_images({a, b, b}, 2);
  EXPECT_EQ(grid.shape(), (ad::Shape{4, 4, 3}));
  EXPECT_EQ(grid[0], 0.0);
  EXPECT_EQ(grid[(0 * 4 + 2) * 3], 1.0);
  EXPECT_EQ(grid[(2 * 4 + 0) * 3], 1.0);
  EXPECT_EQ(grid[(2 * 4 + 2) * 3], 0.0);
}
