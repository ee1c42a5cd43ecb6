#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "flim/tensor.hpp"

namespace flim {

struct ImageSize {
  std::size_t height = 0;
  std::size_t width = 0;
  friend bool operator==(const ImageSize&, const ImageSize&) = default;
};

// Decodes PNG, JPEG, or PPM/PGM (detected from magic bytes, not the
// extension) into a tensor with values in [0, 1]. Alpha is dropped.
ImageTensor decode_image(std::span<const std::uint8_t> bytes, const std::string& origin = "<memory>");
ImageTensor read_image(const std::filesystem::path& path);

// Bilinear resampling with half-pixel centers; same size is the identity.
ImageTensor resize_bilinear(const ImageTensor& image, ImageSize target);

// Replicates gray to RGB or collapses RGB to Rec.601 luma. channels == 0 keeps
// the native count.
ImageTensor convert_channels(const ImageTensor& image, std::size_t channels);

ImageTensor load_image(const std::filesystem::path& path, ImageSize target, std::size_t channels = 0);

// 8-bit PNG encoding of a 1- or 3-channel tensor with values clamped to [0, 1].
std::vector<std::uint8_t> encode_png(const ImageTensor& image);
void write_png(const ImageTensor& image, const std::filesystem::path& path);

bool has_image_extension(const std::filesystem::path& path);

}  // namespace flim
