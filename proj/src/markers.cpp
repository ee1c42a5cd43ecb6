#include "flim/markers.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <iterator>
#include <sstream>
#include <system_error>

#include "flim/error.hpp"

namespace flim {
namespace fs = std::filesystem;

namespace {

constexpr const char* kMagic = "FLIM-MARKERS";
constexpr int kVersion = 1;

bool is_token(const std::string& s) {
  if (s.empty()) return false;
  for (unsigned char ch : s)
    if (std::isspace(ch)) return false;
  return true;
}

}  // namespace

std::size_t MarkerSet::pixel_count() const {
  std::size_t n = 0;
  for (const auto& s : strokes) n += s.pixels.size();
  return n;
}

void validate_markers(const MarkerSet& markers, const MarkerBounds& bounds) {
  for (std::size_t si = 0; si < markers.strokes.size(); ++si) {
    const auto& stroke = markers.strokes[si];
    const std::string where = "stroke " + std::to_string(si) + " of " + markers.image_id;
    require(!stroke.pixels.empty(), ErrorCode::Validation, where + " has no pixels");
    require(stroke.label >= 1 && (bounds.class_count <= 0 || stroke.label <= bounds.class_count), ErrorCode::Validation,
            where + ": label " + std::to_string(stroke.label) + " outside 1.." + std::to_string(bounds.class_count));
    if (bounds.image_label)
      require(stroke.label == *bounds.image_label, ErrorCode::Validation,
              where + ": label " + std::to_string(stroke.label) + " differs from the image class " +
                  std::to_string(*bounds.image_label));
    for (const auto& p : stroke.pixels) {
      const bool inside = p.row >= 0 && p.col >= 0 && static_cast<std::size_t>(p.row) < bounds.height &&
                          static_cast<std::size_t>(p.col) < bounds.width;
      require(inside, ErrorCode::Validation,
              where + ": pixel (" + std::to_string(p.row) + "," + std::to_string(p.col) + ") outside " +
                  std::to_string(bounds.height) + "x" + std::to_string(bounds.width) + " image");
    }
  }
}

MarkerSet parse_markers(const std::string& text, const std::string& origin) {
  std::istringstream in(text);
  std::string magic;
  int version = 0;
  MarkerSet markers;
  if (!(in >> magic) || magic != kMagic) fail(ErrorCode::Format, origin + ": missing FLIM-MARKERS header");
  if (!(in >> version)) fail(ErrorCode::Format, origin + ": missing marker format version");
  if (version != kVersion)
    fail(ErrorCode::Version, origin + ": marker format version " + std::to_string(version) + ", expected " +
                                 std::to_string(kVersion));
  if (!(in >> markers.image_id >> markers.author_id)) fail(ErrorCode::Format, origin + ": header needs image and author ids");

  std::string keyword;
  while (in >> keyword) {
    if (keyword != "stroke") fail(ErrorCode::Format, origin + ": expected 'stroke', found '" + keyword + "'");
    Stroke stroke;
    long long n = 0;
    if (!(in >> stroke.label >> n) || n < 0)
      fail(ErrorCode::Format, origin + ": malformed record for stroke " + std::to_string(markers.strokes.size()));
    stroke.pixels.reserve(static_cast<std::size_t>(std::min<long long>(n, 1 << 20)));
    for (long long i = 0; i < n; ++i) {
      Pixel p;
      if (!(in >> p.row >> p.col))
        fail(ErrorCode::Format, origin + ": stroke " + std::to_string(markers.strokes.size()) + " declares " +
                                    std::to_string(n) + " pixels but has " + std::to_string(i));
      stroke.pixels.push_back(p);
    }
    markers.strokes.push_back(std::move(stroke));
  }
  return markers;
}

std::string format_markers(const MarkerSet& markers) {
  require(is_token(markers.image_id) && is_token(markers.author_id), ErrorCode::Validation,
          "marker image and author ids must be non-empty and contain no whitespace");
  std::ostringstream out;
  out << kMagic << ' ' << kVersion << ' ' << markers.image_id << ' ' << markers.author_id << '\n';
  for (const auto& stroke : markers.strokes) {
    out << "stroke " << stroke.label << ' ' << stroke.pixels.size();
    for (const auto& p : stroke.pixels) out << ' ' << p.row << ' ' << p.col;
    out << '\n';
  }
  return out.str();
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::Io, "cannot open " + path.string());
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) fail(ErrorCode::Io, "error reading " + path.string());
  return text;
}

void write_file_atomic(const fs::path& path, const std::string& contents) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorCode::Io, "cannot write " + path.string());
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    out.flush();
    if (!out) fail(ErrorCode::Io, "error writing " + path.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) {
    fs::remove(tmp, ec);
    fail(ErrorCode::Io, "cannot move " + tmp.string() + " into place");
  }
}

MarkerSet load_markers(const fs::path& path) { return parse_markers(read_file(path), path.string()); }

MarkerSet load_markers(const fs::path& path, const MarkerBounds& bounds) {
  auto markers = load_markers(path);
  validate_markers(markers, bounds);
  return markers;
}

void save_markers(const MarkerSet& markers, const fs::path& path) {
  for (std::size_t si = 0; si < markers.strokes.size(); ++si)
    require(!markers.strokes[si].pixels.empty(), ErrorCode::Validation, "stroke " + std::to_string(si) + " has no pixels");
  write_file_atomic(path, format_markers(markers));
}

}  // namespace flim
