#include <functional>
#include <random>
#include <set>

#include "doctest.h"
#include "flim/error.hpp"
#include "flim/markers.hpp"
#include "synthetic.hpp"

using namespace flim;
namespace fs = std::filesystem;

namespace {

MarkerSet random_markers(std::mt19937& gen) {
  MarkerSet ms;
  ms.image_id = "img_" + std::to_string(gen() % 1000);
  ms.author_id = "user" + std::to_string(gen() % 10);
  for (std::size_t s = 0, n = gen() % 5; s < n; ++s) {
    Stroke stroke{static_cast<Label>(1 + gen() % 4), {}};
    for (std::size_t p = 0, np = 1 + gen() % 40; p < np; ++p)
      stroke.pixels.push_back({static_cast<int>(gen() % 300), static_cast<int>(gen() % 300)});
    ms.strokes.push_back(stroke);
  }
  return ms;
}

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  return ErrorCode::Internal;
}

}  // namespace

TEST_CASE("format/parse round trip preserves strokes exactly") {
  std::mt19937 gen(11);
  for (int trial = 0; trial < 200; ++trial) {
    const auto ms = random_markers(gen);
    CHECK(parse_markers(format_markers(ms)) == ms);
  }
}

TEST_CASE("text layout") {
  MarkerSet ms{"a", "b", {{2, {{1, 2}, {3, 4}}}}};
  CHECK(format_markers(ms) == "FLIM-MARKERS 1 a b\nstroke 2 2 1 2 3 4\n");
  CHECK(ms.pixel_count() == 2);
  // Whitespace between tokens is free-form.
  CHECK(parse_markers("FLIM-MARKERS 1 a b\nstroke 2 2\n1 2\n  3 4") == ms);
}

TEST_CASE("malformed files") {
  CHECK(code_of([] { parse_markers("MARKERS 1 a b"); }) == ErrorCode::Format);
  CHECK(code_of([] { parse_markers("FLIM-MARKERS 2 a b"); }) == ErrorCode::Version);
  CHECK(code_of([] { parse_markers("FLIM-MARKERS 1 a"); }) == ErrorCode::Format);
  CHECK(code_of([] { parse_markers("FLIM-MARKERS 1 a b\nstroke 1 3 0 0 1 1"); }) == ErrorCode::Format);
  CHECK(code_of([] { parse_markers("FLIM-MARKERS 1 a b\nline 1 1 0 0"); }) == ErrorCode::Format);
  CHECK(code_of([] { parse_markers("FLIM-MARKERS 1 a b\nstroke x 1 0 0"); }) == ErrorCode::Format);
}

TEST_CASE("validation names the offending stroke and pixel") {
  MarkerSet ms{"img", "me", {{1, {{0, 0}, {9, 9}}}, {2, {{3, 10}}}}};
  const MarkerBounds bounds{10, 10, 2, std::nullopt};
  try {
    validate_markers(ms, bounds);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::Validation);
    const std::string msg = e.what();
    CHECK(msg.find("stroke 1") != std::string::npos);
    CHECK(msg.find("(3,10)") != std::string::npos);
  }
  ms.strokes[1].pixels = {{3, 9}};
  CHECK_NOTHROW(validate_markers(ms, bounds));
  CHECK_THROWS_AS(validate_markers(ms, {10, 10, 1, std::nullopt}), Error);
  CHECK_THROWS_AS(validate_markers(ms, {10, 10, 2, Label{1}}), Error);
  ms.strokes[1].pixels.clear();
  CHECK_THROWS_AS(validate_markers(ms, bounds), Error);
  MarkerSet negative{"img", "me", {{1, {{-1, 0}}}}};
  CHECK_THROWS_AS(validate_markers(negative, bounds), Error);
}

TEST_CASE("save and load through files") {
  synthetic::TempDir dir;
  const auto path = dir.path() / "m" / "img.mrk";
  fs::create_directories(path.parent_path());
  const auto ms = synthetic::scripted_markers("img", 1, 50, 60);
  save_markers(ms, path);
  CHECK(load_markers(path) == ms);
  CHECK(load_markers(path, {50, 60, 1, Label{1}}) == ms);
  CHECK_THROWS_AS(load_markers(path, {20, 20, 1, std::nullopt}), Error);
  CHECK(code_of([&] { load_markers(dir.path() / "none.mrk"); }) == ErrorCode::Io);
  // No temporary files are left behind.
  std::size_t files = 0;
  for ([[maybe_unused]] const auto& e : fs::directory_iterator(path.parent_path())) ++files;
  CHECK(files == 1);
}

TEST_CASE("brush strokes are deduplicated, clipped, and connected") {
  const auto pixels = synthetic::brush_stroke({{0, 0}, {0, 9}}, 1, 5, 10);
  std::set<std::pair<int, int>> seen;
  for (const auto& p : pixels) {
    CHECK(seen.insert({p.row, p.col}).second);
    CHECK(p.row >= 0);
    CHECK(p.row < 5);
  }
  // Row 0 fully covered, row 1 covered by the disc, nothing beyond radius 1.
  for (int c = 0; c < 10; ++c) {
    CHECK(seen.count({0, c}) == 1);
    CHECK(seen.count({1, c}) == 1);
  }
  CHECK(seen.size() == 20);
}
