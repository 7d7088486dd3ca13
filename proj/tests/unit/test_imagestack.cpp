#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <random>

#include <gtest/gtest.h>

#include "bigprior/array_io.hpp"
#include "bigprior/color.hpp"
#include "bigprior/image.hpp"
#include "bigprior/raster_io.hpp"
#include "test_util.hpp"

using namespace bigprior;

TEST(Image, RejectsNonFiniteAndBadChannelCounts) {
  Grid g({3, 2, 2}, 0.0f);
  g.data()[1] = std::numeric_limits<float>::quiet_NaN();
  EXPECT_THROW(Image(g, ValueRange::unit, ColorSpace::rgb), Error);
  EXPECT_THROW(Image(Shape3{2, 2, 2}, ValueRange::unit, ColorSpace::rgb), ShapeError);
  EXPECT_NO_THROW(Image(Shape3{1, 2, 2}, ValueRange::unit, ColorSpace::gray));
}

TEST(Image, RangeCheckUsesLabConventions) {
  Image lab(Shape3{3, 1, 1}, ValueRange::lab, ColorSpace::lab);
  lab.at(0, 0, 0) = 100.0f;
  lab.at(1, 0, 0) = -128.0f;
  lab.at(2, 0, 0) = 127.0f;
  EXPECT_TRUE(lab.in_range());
  lab.at(0, 0, 0) = 101.0f;
  EXPECT_FALSE(lab.in_range());
}

TEST(PhiMap, RejectsEntriesOutsideUnitInterval) {
  EXPECT_THROW(PhiMap(Grid({1, 1, 2}, 1.5f)), DomainError);
  EXPECT_THROW(PhiMap(Grid({1, 1, 2}, -0.01f)), DomainError);
  EXPECT_NO_THROW(PhiMap(Grid({1, 1, 2}, 1.0f)));
  EXPECT_NO_THROW(PhiMap(Grid({1, 1, 2}, 0.0f)));
}

TEST(LoadImage, AllBlackRaster) {
  const auto dir = testutil::scratch_dir();
  save_image(dir / "black.png", Image(Shape3{3, 2, 2}, ValueRange::raw255, ColorSpace::rgb, 0.0f));
  const Image img = load_image(dir / "black.png");
  EXPECT_EQ(img.shape(), (Shape3{3, 2, 2}));
  EXPECT_EQ(img.value_range(), ValueRange::raw255);
  for (float v : img.data()) EXPECT_EQ(v, 0.0f);
}

TEST(LoadImage, SingleRedPixel) {
  const auto dir = testutil::scratch_dir();
  Image red(Shape3{3, 1, 1}, ValueRange::raw255, ColorSpace::rgb);
  red.at(0, 0, 0) = 255.0f;
  save_image(dir / "red.png", red);
  const Image img = load_image(dir / "red.png");
  EXPECT_EQ(img.at(0, 0, 0), 255.0f);
  EXPECT_EQ(img.at(1, 0, 0), 0.0f);
  EXPECT_EQ(img.at(2, 0, 0), 0.0f);
  EXPECT_EQ(img.color_space(), ColorSpace::rgb);
}

TEST(LoadImage, RoundTripIsBitIdentical) {
  const auto dir = testutil::scratch_dir();
  std::mt19937_64 rng(4);
  std::uniform_int_distribution<int> byte(0, 255);
  for (std::size_t ch : {1u, 3u}) {
    Grid g({ch, 7, 9});
    for (auto& v : g.data()) v = static_cast<float>(byte(rng));
    const Image img(g, ValueRange::raw255, ch == 1 ? ColorSpace::gray : ColorSpace::rgb);
    save_image(dir / "r.png", img);
    const Image back = load_image(dir / "r.png");
    EXPECT_EQ(back.grid(), img.grid());
    EXPECT_EQ(back.color_space(), img.color_space());
  }
}

TEST(LoadImage, Errors) {
  const auto dir = testutil::scratch_dir();
  EXPECT_THROW(load_image(dir / "missing.png"), IoError);
  std::ofstream(dir / "junk.png") << "not a png";
  EXPECT_THROW(load_image(dir / "junk.png"), Error);
}

TEST(Normalize, Endpoints) {
  Image img(Shape3{1, 1, 3}, ValueRange::raw255, ColorSpace::gray);
  img.at(0, 0, 0) = 255.0f;
  img.at(0, 0, 1) = 0.0f;
  img.at(0, 0, 2) = 127.0f;
  const Image n = normalize(img);
  EXPECT_EQ(n.value_range(), ValueRange::centered);
  EXPECT_FLOAT_EQ(n.at(0, 0, 0), 0.5f);
  EXPECT_FLOAT_EQ(n.at(0, 0, 1), -0.5f);
  EXPECT_NEAR(n.at(0, 0, 2), 127.0 / 255.0 - 0.5, 1e-7);
  EXPECT_NEAR(n.at(0, 0, 2), -0.00196, 1e-5);
  EXPECT_THROW(normalize(n), DomainError);
}

TEST(Denormalize, EndpointsAndRoundTrip) {
  Image c(Shape3{1, 1, 2}, ValueRange::centered, ColorSpace::gray);
  c.at(0, 0, 0) = 0.5f;
  c.at(0, 0, 1) = -0.5f;
  const Image d = denormalize(c);
  EXPECT_FLOAT_EQ(d.at(0, 0, 0), 255.0f);
  EXPECT_FLOAT_EQ(d.at(0, 0, 1), 0.0f);
  EXPECT_THROW(denormalize(d), DomainError);

  // Unit-range scale: one float ulp near 0.5 is 6e-8, well inside 1e-6.
  std::mt19937_64 rng(1);
  const Image x(testutil::random_grid({3, 16, 16}, rng, -0.5f, 0.5f), ValueRange::centered, ColorSpace::rgb);
  const Image back = normalize(denormalize(x));
  for (std::size_t i = 0; i < x.data().size(); ++i) EXPECT_NEAR(back.data()[i], x.data()[i], 1e-6);

  // Raw side: values agree to 1e-6 relative to the 255 range.
  const Image raw(testutil::random_grid({3, 16, 16}, rng, 0.0f, 255.0f), ValueRange::raw255, ColorSpace::rgb);
  const Image raw_back = denormalize(normalize(raw));
  for (std::size_t i = 0; i < raw.data().size(); ++i) EXPECT_NEAR(raw_back.data()[i] / 255.0, raw.data()[i] / 255.0, 1e-6);
}

TEST(Color, WhiteAndBlack) {
  const auto white = color::rgb_to_lab({1.0, 1.0, 1.0});
  EXPECT_NEAR(white[0], 100.0, 1e-4);
  EXPECT_LT(std::abs(white[1]), 0.5);
  EXPECT_LT(std::abs(white[2]), 0.5);
  const auto black = color::rgb_to_lab({0.0, 0.0, 0.0});
  EXPECT_NEAR(black[0], 0.0, 1e-9);
  EXPECT_NEAR(black[1], 0.0, 1e-9);
  EXPECT_NEAR(black[2], 0.0, 1e-9);
}

// Independent reference: textbook sRGB -> XYZ -> Lab written out inline.
TEST(Color, MatchesReferenceFormula) {
  auto ref = [](double r, double g, double b) {
    auto lin = [](double c) { return c <= 0.04045 ? c / 12.92 : std::pow((c + 0.055) / 1.055, 2.4); };
    const double R = lin(r), G = lin(g), B = lin(b);
    const double X = 0.4124564 * R + 0.3575761 * G + 0.1804375 * B;
    const double Y = 0.2126729 * R + 0.7151522 * G + 0.0721750 * B;
    const double Z = 0.0193339 * R + 0.1191920 * G + 0.9503041 * B;
    auto f = [](double t) {
      const double d = 6.0 / 29.0;
      return t > d * d * d ? std::cbrt(t) : t / (3 * d * d) + 4.0 / 29.0;
    };
    const double fx = f(X / 0.95047), fy = f(Y / 1.0), fz = f(Z / 1.08883);
    return std::array<double, 3>{116 * fy - 16, 500 * (fx - fy), 200 * (fy - fz)};
  };
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u(0, 1);
  for (int i = 0; i < 200; ++i) {
    const double r = u(rng), g = u(rng), b = u(rng);
    const auto got = color::rgb_to_lab({r, g, b});
    const auto want = ref(r, g, b);
    for (int c = 0; c < 3; ++c) EXPECT_NEAR(got[c], want[c], 2e-3);
  }
}

TEST(Color, RoundTripOnRandomColors) {
  std::mt19937_64 rng(2);
  const Image rgb(testutil::random_grid({3, 16, 16}, rng, 0.0f, 1.0f), ValueRange::unit, ColorSpace::rgb);
  const Image lab = rgb_to_lab(rgb);
  EXPECT_EQ(lab.color_space(), ColorSpace::lab);
  const Image back = lab_to_rgb(lab);
  for (std::size_t i = 0; i < rgb.data().size(); ++i) EXPECT_NEAR(back.data()[i], rgb.data()[i], 1e-3);
}

TEST(Color, RejectsOutOfRangeInput) {
  Image bad(Shape3{3, 1, 1}, ValueRange::unit, ColorSpace::rgb, 1.5f);
  EXPECT_THROW(rgb_to_lab(bad), DomainError);
  Image raw(Shape3{3, 1, 1}, ValueRange::raw255, ColorSpace::rgb, 10.0f);
  EXPECT_THROW(rgb_to_lab(raw), DomainError);
}

TEST(ArrayIo, EmptyGridRoundTrips) {
  const auto dir = testutil::scratch_dir();
  save_array(dir / "e.pfaf", NdArray<float>{{0, 0}, {}});
  const auto back = load_array<float>(dir / "e.pfaf");
  EXPECT_EQ(back.shape, (std::vector<std::size_t>{0, 0}));
  EXPECT_TRUE(back.data.empty());
}

TEST(ArrayIo, RandomGridIsBitExact) {
  const auto dir = testutil::scratch_dir();
  std::mt19937_64 rng(3);
  const Grid g = testutil::random_grid({3, 4, 5}, rng, -1e3f, 1e3f);
  save_grid(dir / "g.pfaf", g);
  const Grid back = load_grid(dir / "g.pfaf");
  ASSERT_EQ(back.shape(), g.shape());
  EXPECT_EQ(std::memcmp(back.data().data(), g.data().data(), g.size() * sizeof(float)), 0);
}

TEST(ArrayIo, HeaderFormat) {
  const auto dir = testutil::scratch_dir();
  save_array(dir / "h.pfaf", NdArray<double>{{2, 3}, {1, 2, 3, 4, 5, 6}});
  std::ifstream in(dir / "h.pfaf", std::ios::binary);
  std::string header;
  std::getline(in, header);
  EXPECT_EQ(header, "PFAF1 2 2 3 f64 LE");
  std::vector<char> payload((std::istreambuf_iterator<char>(in)), {});
  EXPECT_EQ(payload.size(), 6 * sizeof(double));
}

TEST(ArrayIo, RejectsNanAndCorruptFiles) {
  const auto dir = testutil::scratch_dir();
  EXPECT_THROW(save_array(dir / "n.pfaf", NdArray<float>{{1}, {std::numeric_limits<float>::quiet_NaN()}}),
               DomainError);
  std::ofstream(dir / "bad.pfaf") << "PFAF1 1 4 f32 LE\n" << "abc";
  EXPECT_THROW(load_array<float>(dir / "bad.pfaf"), IoError);
  std::ofstream(dir / "magic.pfaf") << "NOPE 1 1 f32 LE\n" << "abcd";
  EXPECT_THROW(load_array<float>(dir / "magic.pfaf"), IoError);
  EXPECT_THROW(load_array<float>(dir / "missing.pfaf"), IoError);
}

TEST(Heatmap, WritesViewableRaster) {
  const auto dir = testutil::scratch_dir();
  save_heatmap(dir / "phi.png", PhiMap(Grid({2, 4, 5}, 0.25f)));
  const Image img = load_image(dir / "phi.png");
  EXPECT_EQ(img.shape(), (Shape3{3, 4, 5}));
}
