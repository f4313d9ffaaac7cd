#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <cstdio>
#include <cstring>

#include "fsnet/eval.hpp"
#include "fsnet/image_io.hpp"
#include "fsnet/sequence.hpp"
#include "fsnet/synthetic.hpp"

using namespace fsnet;
namespace fs = std::filesystem;

namespace {

std::vector<Rect> parse(const std::string& text, bool one_based = true) {
  std::istringstream in(text);
  return parse_rects(in, "gt", one_based);
}

fs::path scratch_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("fsnet_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

void write_text(const fs::path& p, const std::string& text) { std::ofstream(p) << text; }

}  // namespace

TEST(RectFile, OneBasedShift) {
  const auto r = parse("10,20,30,40\n");
  ASSERT_EQ(r.size(), 1u);
  EXPECT_EQ(r[0], (Rect{9, 19, 30, 40}));
}

TEST(RectFile, SeparatorsParseIdentically) {
  const auto comma = parse("10,20,30,40\n1.5,2.5,3,4\n");
  EXPECT_EQ(parse("10\t20\t30\t40\n1.5\t2.5\t3\t4\n"), comma);
  EXPECT_EQ(parse("10 20  30 40\r\n1.5 2.5 3 4\n"), comma);
  EXPECT_EQ(parse("10, 20, 30, 40\n\n1.5 ,2.5,3,4\n\n"), comma);
}

TEST(RectFile, MalformedLineNamesTheLine) {
  try {
    parse("1,2,3,4\n1,2,x,4\n");
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 2u);
    EXPECT_NE(std::string(e.what()).find("gt:2"), std::string::npos) << e.what();
  }
  EXPECT_THROW(parse("1,2,3\n"), ParseError);
  EXPECT_THROW(parse("1,2,3,4,5\n"), ParseError);
  EXPECT_THROW(parse("1,2,3,\n"), ParseError);
  EXPECT_THROW(parse("1,2,0,4\n"), ParseError);
}

// Boxes read from text come back bit-identical after write and reload.
TEST(RectFile, ReadWriteReadIsExact) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(-5, 400), s(0.5, 200);
  std::uniform_int_distribution<int> digits(0, 17);
  std::ostringstream text;
  text.precision(17);
  for (int i = 0; i < 2000; ++i) {
    std::ostringstream f;
    f.precision(digits(rng));
    f << u(rng) << ',' << u(rng) << ',' << s(rng) << ',' << s(rng);
    text << f.str() << '\n';
  }
  const auto first = parse(text.str());
  std::stringstream buf;
  write_rects(buf, first);
  EXPECT_EQ(parse_rects(buf, "rt", true), first);
}

TEST(RectFile, ArbitraryValuesRoundTripToRounding) {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(-5, 400), s(0.5, 200);
  std::vector<Rect> rects;
  for (int i = 0; i < 500; ++i) rects.push_back({u(rng), u(rng), s(rng), s(rng)});
  std::stringstream buf;
  write_rects(buf, rects);
  const auto back = parse_rects(buf, "rt", true);
  ASSERT_EQ(back.size(), rects.size());
  for (std::size_t i = 0; i < rects.size(); ++i) {
    EXPECT_NEAR(back[i].x, rects[i].x, 1e-13);
    EXPECT_NEAR(back[i].y, rects[i].y, 1e-13);
    EXPECT_EQ(back[i].w, rects[i].w);
    EXPECT_EQ(back[i].h, rects[i].h);
  }
}

TEST(RectFile, TextRoundTripKeepsDecimalForm) {
  const std::string text = "10,20,30,40\n1.1,0.1,2.25,7\n";
  std::stringstream out;
  write_rects(out, parse(text));
  EXPECT_EQ(out.str(), text);
}

TEST(LoadSequence, ReadsOtbLayout) {
  const auto dir = scratch_dir("seq_ok");
  fs::create_directories(dir / "img");
  Image img(8, 6, 100);
  for (const char* n : {"0002.png", "0001.png", "0003.png"}) write_png((dir / "img" / n).string(), img);
  write_text(dir / "img" / "notes.txt", "ignored");
  write_text(dir / "groundtruth_rect.txt", "1,1,4,4\n2\t2\t4\t4\n3 3 4 4\n");
  write_text(dir / "attributes.txt", "IV, OCC\nSV");
  const auto seq = load_sequence(dir.string());
  EXPECT_EQ(seq.name, "fsnet_test_seq_ok");
  ASSERT_EQ(seq.size(), 3u);
  EXPECT_EQ(fs::path(seq.frame_paths[0]).filename(), "0001.png");
  EXPECT_EQ(fs::path(seq.frame_paths[2]).filename(), "0003.png");
  EXPECT_EQ(seq.gt_rects[1], (Rect{1, 1, 4, 4}));
  EXPECT_EQ(seq.attributes, (std::vector<std::string>{"IV", "OCC", "SV"}));
  const Image back = read_image(seq.frame_paths[0]);
  EXPECT_EQ(back.width, 8u);
  EXPECT_EQ(back.rgb, img.rgb);

  // write -> reload
  write_rects((dir / "groundtruth_rect.txt").string(), seq.gt_rects);
  EXPECT_EQ(load_sequence(dir.string()).gt_rects, seq.gt_rects);
  fs::remove_all(dir);
}

TEST(LoadSequence, CountMismatchNamesBothCounts) {
  const auto dir = scratch_dir("seq_bad");
  fs::create_directories(dir / "img");
  write_png((dir / "img" / "0001.png").string(), Image(4, 4));
  write_png((dir / "img" / "0002.png").string(), Image(4, 4));
  write_text(dir / "groundtruth_rect.txt", "1,1,2,2\n");
  try {
    load_sequence(dir.string());
    FAIL();
  } catch (const Error& e) {
    const std::string m = e.what();
    EXPECT_NE(m.find("2 frames"), std::string::npos) << m;
    EXPECT_NE(m.find("1 ground-truth"), std::string::npos) << m;
  }
  fs::remove(dir / "groundtruth_rect.txt");
  EXPECT_THROW(load_sequence(dir.string()), Error);
  EXPECT_THROW(load_sequence((dir / "nope").string()), Error);
  fs::remove_all(dir);
}

namespace {

void write_gray_png(const std::string& path, std::size_t w, std::size_t h,
                    const std::vector<std::uint8_t>& px) {
  png_image png;
  std::memset(&png, 0, sizeof png);
  png.version = PNG_IMAGE_VERSION;
  png.width = static_cast<png_uint_32>(w);
  png.height = static_cast<png_uint_32>(h);
  png.format = PNG_FORMAT_GRAY;
  ASSERT_TRUE(png_image_write_to_file(&png, path.c_str(), 0, px.data(), 0, nullptr));
}

void write_gray_jpeg(const std::string& path, std::size_t w, std::size_t h,
                     std::vector<std::uint8_t> px) {
  FILE* f = std::fopen(path.c_str(), "wb");
  ASSERT_NE(f, nullptr);
  jpeg_compress_struct c;
  jpeg_error_mgr err;
  c.err = jpeg_std_error(&err);
  jpeg_create_compress(&c);
  jpeg_stdio_dest(&c, f);
  c.image_width = static_cast<JDIMENSION>(w);
  c.image_height = static_cast<JDIMENSION>(h);
  c.input_components = 1;
  c.in_color_space = JCS_GRAYSCALE;
  jpeg_set_defaults(&c);
  jpeg_set_quality(&c, 100, TRUE);
  jpeg_start_compress(&c, TRUE);
  while (c.next_scanline < c.image_height) {
    JSAMPROW row = px.data() + c.next_scanline * w;
    jpeg_write_scanlines(&c, &row, 1);
  }
  jpeg_finish_compress(&c);
  jpeg_destroy_compress(&c);
  std::fclose(f);
}

}  // namespace

TEST(ImageIo, PngRoundTrip) {
  const auto dir = scratch_dir("png");
  const auto seq = make_synthetic(SyntheticConfig{});
  const auto p = (dir / "f.png").string();
  write_png(p, seq.frames[3]);
  const Image back = read_image(p);
  EXPECT_EQ(back.width, seq.frames[3].width);
  EXPECT_EQ(back.rgb, seq.frames[3].rgb);
  fs::remove_all(dir);
}

TEST(ImageIo, GrayscalePromotedToThreeEqualChannels) {
  const auto dir = scratch_dir("gray");
  std::vector<std::uint8_t> px(16 * 8);
  for (std::size_t i = 0; i < px.size(); ++i) px[i] = static_cast<std::uint8_t>(i * 2);
  write_gray_png((dir / "g.png").string(), 16, 8, px);
  const Image a = read_image((dir / "g.png").string());
  ASSERT_EQ(a.rgb.size(), px.size() * 3);
  for (std::size_t i = 0; i < px.size(); ++i) {
    EXPECT_EQ(a.rgb[3 * i], px[i]);
    EXPECT_EQ(a.rgb[3 * i + 1], px[i]);
    EXPECT_EQ(a.rgb[3 * i + 2], px[i]);
  }
  std::vector<std::uint8_t> flat(16 * 8, 77);
  write_gray_jpeg((dir / "g.JPG").string(), 16, 8, flat);
  const Image b = read_image((dir / "g.JPG").string());
  ASSERT_EQ(b.width, 16u);
  ASSERT_EQ(b.height, 8u);
  for (auto v : b.rgb) EXPECT_NEAR(v, 77, 1);
  fs::remove_all(dir);
}

TEST(ImageIo, BadFilesRaise) {
  const auto dir = scratch_dir("badimg");
  EXPECT_THROW(read_image((dir / "missing.png").string()), Error);
  write_text(dir / "junk.jpg", "not a jpeg");
  EXPECT_THROW(read_image((dir / "junk.jpg").string()), FormatError);
  write_text(dir / "junk.png", "not a png");
  EXPECT_THROW(read_image((dir / "junk.png").string()), FormatError);
  write_text(dir / "f.bmp", "BM");
  EXPECT_THROW(read_image((dir / "f.bmp").string()), FormatError);
  fs::remove_all(dir);
}

TEST(Eval, PerfectTracker) {
  std::vector<Rect> gt{{0, 0, 10, 10}, {5, 5, 20, 8}, {1.5, 2, 3, 3}};
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(-3, 300), s(0.1, 90);
  for (int i = 0; i < 200; ++i) gt.push_back({u(rng), u(rng), s(rng), s(rng)});
  const auto e = evaluate(gt, gt);
  for (double v : e.precision) EXPECT_EQ(v, 1.0);
  for (double v : e.success) EXPECT_EQ(v, 1.0);  // includes the 1.0 threshold
  EXPECT_DOUBLE_EQ(e.auc, 1.0);
  EXPECT_DOUBLE_EQ(e.precision_at_20, 1.0);
}

TEST(Eval, DisplacedTrackerHasZeroPrecision) {
  std::vector<Rect> gt, pred;
  for (int i = 0; i < 5; ++i) {
    gt.push_back({10.0 * i, 0, 10, 10});
    pred.push_back({10.0 * i + 100, 0, 10, 10});
  }
  for (double v : precision_curve(pred, gt)) EXPECT_EQ(v, 0.0);
}

TEST(Eval, HandCountedSuccess) {
  // IoUs 1, 0.5 and 0: the middle pair overlaps on 2 of 4 covered cells.
  const std::vector<Rect> gt{{0, 0, 2, 2}, {0, 0, 3, 1}, {0, 0, 1, 1}};
  const std::vector<Rect> pred{{0, 0, 2, 2}, {1, 0, 3, 1}, {5, 5, 1, 1}};
  ASSERT_DOUBLE_EQ(iou(pred[1], gt[1]), 0.5);
  const auto s = success_curve(pred, gt);
  EXPECT_DOUBLE_EQ(s.curve[10], 2.0 / 3.0);  // threshold 0.5
  EXPECT_DOUBLE_EQ(s.curve[0], 1.0);         // IoU >= 0 always
  EXPECT_DOUBLE_EQ(s.curve[20], 1.0 / 3.0);
}

TEST(Eval, CurvesMonotoneAndAucIsMean) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0, 60), s(5, 30);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<Rect> gt, pred;
    for (int i = 0; i < 30; ++i) {
      gt.push_back({u(rng), u(rng), s(rng), s(rng)});
      pred.push_back({u(rng), u(rng), s(rng), s(rng)});
    }
    const auto e = evaluate(pred, gt);
    ASSERT_EQ(e.precision.size(), kPrecisionPoints);
    ASSERT_EQ(e.success.size(), kSuccessPoints);
    for (std::size_t i = 1; i < e.precision.size(); ++i) EXPECT_GE(e.precision[i], e.precision[i - 1]);
    for (std::size_t i = 1; i < e.success.size(); ++i) EXPECT_LE(e.success[i], e.success[i - 1]);
    double mean = 0;
    for (double v : e.success) mean += v;
    EXPECT_NEAR(e.auc, mean / 21.0, 1e-15);
    EXPECT_GE(e.auc, 0.0);
    EXPECT_LE(e.auc, 1.0);
  }
}

TEST(Eval, LengthMismatchThrows) {
  const std::vector<Rect> a{{0, 0, 1, 1}}, b{{0, 0, 1, 1}, {0, 0, 1, 1}};
  EXPECT_THROW(evaluate(a, b), ShapeError);
  EXPECT_THROW(evaluate({}, {}), Error);
}

TEST(Eval, CurveCsvLayout) {
  std::ostringstream out;
  write_curve_csv(out, std::vector<double>(kSuccessPoints, 0.25), true);
  std::istringstream in(out.str());
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "threshold,success");
  std::getline(in, line);
  EXPECT_EQ(line, "0,0.25");
  std::getline(in, line);
  EXPECT_EQ(line, "0.05,0.25");
}
