#pragma once

// OTB-style sequences on disk: `<dir>/img/*.{png,jpg,jpeg}` plus a ground-truth file
// with one `x,y,w,h` line per frame in 1-based pixel coordinates.

#include <algorithm>
#include <array>
#include <cctype>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "fsnet/error.hpp"
#include "fsnet/rect.hpp"

namespace fsnet {

/// Raised for unreadable rect files; `line` is 1-based (0 when not tied to a line).
class ParseError : public FormatError {
 public:
  ParseError(const std::string& file, std::size_t line, const std::string& what)
      : FormatError(file + (line ? ":" + std::to_string(line) : std::string()) + ": " + what),
        file_(file),
        line_(line) {}
  const std::string& file() const { return file_; }
  std::size_t line() const { return line_; }

 private:
  std::string file_;
  std::size_t line_;
};

struct SequenceDataset {
  std::string name;
  std::vector<std::string> frame_paths;
  std::vector<Rect> gt_rects;  // 0-based
  std::vector<std::string> attributes;

  std::size_t size() const { return frame_paths.size(); }
};

inline constexpr std::array<const char*, 2> kGroundTruthNames{"groundtruth_rect.txt",
                                                              "groundtruth.txt"};

namespace detail {

inline std::optional<double> parse_real(std::string_view s) {
  double v = 0;
  const auto* end = s.data() + s.size();
  const auto [p, ec] = std::from_chars(s.data(), end, v);
  if (ec != std::errc() || p != end || !std::isfinite(v)) return std::nullopt;
  return v;
}

// Comma-separated when the line has a comma (fields trimmed), otherwise whitespace-separated.
inline std::vector<std::string_view> split_fields(std::string_view line) {
  constexpr std::string_view ws = " \t\r";
  std::vector<std::string_view> out;
  if (line.find(',') != std::string_view::npos) {
    std::size_t start = 0;
    while (true) {
      const std::size_t end = std::min(line.find(',', start), line.size());
      std::string_view f = line.substr(start, end - start);
      const auto b = f.find_first_not_of(ws);
      f = b == std::string_view::npos ? std::string_view{} : f.substr(b, f.find_last_not_of(ws) - b + 1);
      out.push_back(f);
      if (end == line.size()) break;
      start = end + 1;
    }
    return out;
  }
  std::size_t i = line.find_first_not_of(ws);
  while (i != std::string_view::npos) {
    const std::size_t j = std::min(line.find_first_of(ws, i), line.size());
    out.push_back(line.substr(i, j - i));
    i = line.find_first_not_of(ws, j);
  }
  return out;
}

// Shortest decimal text that parses back to exactly `x`.
inline std::string shortest(double x) {
  std::array<char, 64> buf{};
  const auto res = std::to_chars(buf.data(), buf.data() + buf.size(), x);
  return std::string(buf.data(), res.ptr);
}

// Shortest decimal for `v + 1` that parses to a double whose `- 1` is exactly `v`.
// Such a decimal exists whenever `v` was itself read from 1-based text.
inline std::string one_based_text(double v) {
  std::array<char, 64> buf{};
  for (int digits = 1; digits <= 17; ++digits) {
    const auto res = std::to_chars(buf.data(), buf.data() + buf.size(), v + 1.0,
                                   std::chars_format::general, digits);
    const auto back = parse_real(std::string_view(buf.data(), res.ptr - buf.data()));
    if (back && *back - 1.0 == v) return shortest(*back);
  }
  return shortest(v + 1.0);
}

}  // namespace detail

/// Parses rect lines (comma, tab or space separated). Blank lines are skipped.
/// `one_based` shifts x and y by -1.
inline std::vector<Rect> parse_rects(std::istream& in, const std::string& name, bool one_based) {
  std::vector<Rect> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto fields = detail::split_fields(line);
    if (fields.size() != 4) {
      throw ParseError(name, lineno,
                       "expected 4 fields x,y,w,h, found " + std::to_string(fields.size()));
    }
    std::array<double, 4> v{};
    for (std::size_t k = 0; k < 4; ++k) {
      const auto x = detail::parse_real(fields[k]);
      if (!x) throw ParseError(name, lineno, "not a number: '" + std::string(fields[k]) + "'");
      v[k] = *x;
    }
    if (!(v[2] > 0 && v[3] > 0)) throw ParseError(name, lineno, "width and height must be > 0");
    const double shift = one_based ? 1.0 : 0.0;
    out.push_back(Rect{v[0] - shift, v[1] - shift, v[2], v[3]});
  }
  return out;
}

inline std::vector<Rect> read_rects(const std::string& path, bool one_based = true) {
  std::ifstream in(path);
  if (!in) throw ParseError(path, 0, "cannot open");
  return parse_rects(in, path, one_based);
}

/// One `x,y,w,h` line per rect, 1-based, so that read_rects returns the same values.
inline void write_rects(std::ostream& out, const std::vector<Rect>& rects) {
  for (const auto& r : rects) {
    out << detail::one_based_text(r.x) << ',' << detail::one_based_text(r.y) << ','
        << detail::shortest(r.w) << ',' << detail::shortest(r.h) << '\n';
  }
}

inline void write_rects(const std::string& path, const std::vector<Rect>& rects) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path);
  write_rects(out, rects);
  if (!out) throw Error("write failed: " + path);
}

inline bool is_frame_file(const std::filesystem::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return ext == ".png" || ext == ".jpg" || ext == ".jpeg";
}

/// Loads an OTB-layout directory. Frames are sorted lexicographically by file name.
/// An optional `attributes.txt` holds comma or whitespace separated tags.
inline SequenceDataset load_sequence(const std::string& dir) {
  namespace fs = std::filesystem;
  const fs::path root(dir);
  if (!fs::is_directory(root)) throw Error("sequence directory not found: " + dir);
  const fs::path img = root / "img";
  if (!fs::is_directory(img)) throw Error("sequence " + dir + " has no img/ subdirectory");

  SequenceDataset seq;
  seq.name = root.filename().empty() ? root.parent_path().filename().string()
                                     : root.filename().string();
  for (const auto& e : fs::directory_iterator(img)) {
    if (e.is_regular_file() && is_frame_file(e.path())) seq.frame_paths.push_back(e.path().string());
  }
  std::sort(seq.frame_paths.begin(), seq.frame_paths.end());
  if (seq.frame_paths.empty()) throw Error("sequence " + dir + ": no PNG or JPEG frames in img/");

  std::optional<fs::path> gt_path;
  for (const char* n : kGroundTruthNames) {
    if (fs::is_regular_file(root / n)) {
      gt_path = root / n;
      break;
    }
  }
  if (!gt_path) throw Error("sequence " + dir + ": missing groundtruth_rect.txt");
  seq.gt_rects = read_rects(gt_path->string(), true);
  if (seq.gt_rects.size() != seq.frame_paths.size()) {
    throw Error("sequence " + dir + ": " + std::to_string(seq.frame_paths.size()) +
                " frames but " + std::to_string(seq.gt_rects.size()) + " ground-truth boxes");
  }

  if (std::ifstream attr(root / "attributes.txt"); attr) {
    std::string tok;
    std::stringstream all;
    all << attr.rdbuf();
    std::string text = all.str();
    std::replace(text.begin(), text.end(), ',', ' ');
    std::istringstream words(text);
    while (words >> tok) seq.attributes.push_back(tok);
  }
  return seq;
}

}  // namespace fsnet
