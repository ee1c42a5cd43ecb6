#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "flim/tensor.hpp"

namespace flim {

struct Stroke {
  Label label = 0;
  std::vector<Pixel> pixels;
  friend bool operator==(const Stroke&, const Stroke&) = default;
};

struct MarkerSet {
  std::string image_id;
  std::string author_id;
  std::vector<Stroke> strokes;

  std::size_t pixel_count() const;
  friend bool operator==(const MarkerSet&, const MarkerSet&) = default;
};

struct MarkerBounds {
  std::size_t height = 0;
  std::size_t width = 0;
  int class_count = 0;
  // When set, every stroke must carry this label.
  std::optional<Label> image_label;
};

// Throws Validation naming the first offending stroke or pixel.
void validate_markers(const MarkerSet& markers, const MarkerBounds& bounds);

// Text form: "FLIM-MARKERS 1 <image_id> <author_id>" then one
// "stroke <label> <n> r0 c0 ... r(n-1) c(n-1)" record per stroke.
MarkerSet parse_markers(const std::string& text, const std::string& origin = "<memory>");
std::string format_markers(const MarkerSet& markers);

MarkerSet load_markers(const std::filesystem::path& path, const MarkerBounds& bounds);
MarkerSet load_markers(const std::filesystem::path& path);
// Written to a temporary sibling and renamed into place.
void save_markers(const MarkerSet& markers, const std::filesystem::path& path);

// Writes `contents` atomically (temp file + rename).
void write_file_atomic(const std::filesystem::path& path, const std::string& contents);
std::string read_file(const std::filesystem::path& path);

}  // namespace flim
