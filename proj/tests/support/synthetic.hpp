#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "flim/markers.hpp"
#include "flim/tensor.hpp"

namespace synthetic {

// Class names in catalog order (sorted directory names).
const std::vector<std::string>& texture_classes();

// label is 1-based. Every image draws its own frequency, phase, colours and noise.
flim::ImageTensor texture(flim::Label label, std::size_t height, std::size_t width, std::uint64_t seed);

// root/<class>/img_NNN.png for `per_class` images per class.
void write_texture_dataset(const std::filesystem::path& root, std::size_t per_class, std::size_t height,
                           std::size_t width, std::uint64_t seed);

// Two scripted strokes inside the image: a thick horizontal bar and a diagonal.
flim::MarkerSet scripted_markers(const std::string& image_id, flim::Label label, std::size_t height,
                                 std::size_t width);

// Pixels of a polyline stamped with a disc of the given radius, deduplicated,
// clipped to the image, in first-visit order.
std::vector<flim::Pixel> brush_stroke(const std::vector<flim::Pixel>& path, int radius, std::size_t height,
                                      std::size_t width);

class TempDir {
 public:
  explicit TempDir(const std::string& prefix = "flim-test");
  ~TempDir();
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

}  // namespace synthetic
