#include "flim/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iterator>

// jpeglib.h needs FILE and size_t declared first.
#include <jpeglib.h>

#include "flim/error.hpp"

namespace flim {
namespace {

std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::Io, "cannot open image " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) fail(ErrorCode::Io, "error reading image " + path.string());
  return bytes;
}

ImageTensor from_bytes8(const std::vector<std::uint8_t>& pixels, std::size_t h, std::size_t w, std::size_t src_channels,
                        std::size_t keep_channels) {
  ImageTensor out(h, w, keep_channels);
  auto data = out.data();
  for (std::size_t i = 0; i < h * w; ++i)
    for (std::size_t ch = 0; ch < keep_channels; ++ch)
      data[i * keep_channels + ch] = static_cast<float>(pixels[i * src_channels + ch]) / 255.0f;
  return out;
}

// --- PNG ---------------------------------------------------------------------

struct PngReadSource {
  std::span<const std::uint8_t> bytes;
  std::size_t offset = 0;
};

void png_read_callback(png_structp png, png_bytep out, png_size_t length) {
  auto* src = static_cast<PngReadSource*>(png_get_io_ptr(png));
  if (src->offset + length > src->bytes.size()) png_error(png, "truncated PNG stream");
  std::memcpy(out, src->bytes.data() + src->offset, length);
  src->offset += length;
}

// libpng reports through these instead of printing to stderr.
void png_error_callback(png_structp png, png_const_charp message) {
  if (auto* text = static_cast<std::string*>(png_get_error_ptr(png))) *text = message;
  png_longjmp(png, 1);
}

void png_warning_callback(png_structp, png_const_charp) {}

ImageTensor decode_png(std::span<const std::uint8_t> bytes, const std::string& origin) {
  std::string message;
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &message, png_error_callback, png_warning_callback);
  if (!png) fail(ErrorCode::Internal, "png_create_read_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    fail(ErrorCode::Internal, "png_create_info_struct failed");
  }
  PngReadSource source{bytes, 0};
  std::vector<std::uint8_t> pixels;
  std::vector<png_bytep> rows;
  png_uint_32 width = 0, height = 0;
  int channels = 0;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    fail(ErrorCode::Format, "corrupt PNG " + origin + ": " + message);
  }
  png_set_read_fn(png, &source, png_read_callback);
  png_read_info(png, info);
  width = png_get_image_width(png, info);
  height = png_get_image_height(png, info);
  const int color = png_get_color_type(png, info);
  const int depth = png_get_bit_depth(png, info);
  if (depth == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  png_read_update_info(png, info);
  channels = png_get_channels(png, info);
  const std::size_t row_bytes = png_get_rowbytes(png, info);
  pixels.resize(row_bytes * height);
  rows.resize(height);
  for (png_uint_32 r = 0; r < height; ++r) rows[r] = pixels.data() + r * row_bytes;
  png_read_image(png, rows.data());
  png_destroy_read_struct(&png, &info, nullptr);

  // 1 gray, 2 gray+alpha, 3 rgb, 4 rgba; alpha dropped.
  const std::size_t keep = (channels <= 2) ? 1 : 3;
  return from_bytes8(pixels, height, width, static_cast<std::size_t>(channels), keep);
}

// --- JPEG ----------------------------------------------------------------------

struct JpegErrorManager {
  jpeg_error_mgr base;
  std::jmp_buf jump;
  char message[JMSG_LENGTH_MAX];
};

void jpeg_error_exit(j_common_ptr cinfo) {
  auto* err = reinterpret_cast<JpegErrorManager*>(cinfo->err);
  (*cinfo->err->format_message)(cinfo, err->message);
  std::longjmp(err->jump, 1);
}

ImageTensor decode_jpeg(std::span<const std::uint8_t> bytes, const std::string& origin) {
  jpeg_decompress_struct cinfo{};
  JpegErrorManager err{};
  cinfo.err = jpeg_std_error(&err.base);
  err.base.error_exit = jpeg_error_exit;
  std::vector<std::uint8_t> pixels;
  std::size_t height = 0, width = 0, channels = 0;
  if (setjmp(err.jump)) {
    jpeg_destroy_decompress(&cinfo);
    fail(ErrorCode::Format, "corrupt JPEG " + origin + ": " + err.message);
  }
  jpeg_create_decompress(&cinfo);
  jpeg_mem_src(&cinfo, bytes.data(), static_cast<unsigned long>(bytes.size()));
  jpeg_read_header(&cinfo, TRUE);
  if (cinfo.num_components != 1) cinfo.out_color_space = JCS_RGB;
  jpeg_start_decompress(&cinfo);
  height = cinfo.output_height;
  width = cinfo.output_width;
  channels = static_cast<std::size_t>(cinfo.output_components);
  pixels.resize(height * width * channels);
  while (cinfo.output_scanline < cinfo.output_height) {
    JSAMPROW row = pixels.data() + static_cast<std::size_t>(cinfo.output_scanline) * width * channels;
    jpeg_read_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_decompress(&cinfo);
  jpeg_destroy_decompress(&cinfo);
  return from_bytes8(pixels, height, width, channels, channels);
}

// --- PPM / PGM (P2, P3, P5, P6) --------------------------------------------------

class PnmReader {
 public:
  PnmReader(std::span<const std::uint8_t> bytes, std::string origin) : bytes_(bytes), origin_(std::move(origin)) {}

  long next_int() {
    skip_space_and_comments();
    if (pos_ >= bytes_.size() || !std::isdigit(bytes_[pos_])) fail(ErrorCode::Format, "malformed PNM header: " + origin_);
    long v = 0;
    while (pos_ < bytes_.size() && std::isdigit(bytes_[pos_])) {
      v = v * 10 + (bytes_[pos_++] - '0');
      if (v > 1'000'000'000L) fail(ErrorCode::Format, "PNM value out of range: " + origin_);
    }
    return v;
  }

  void skip_single_space() {
    if (pos_ >= bytes_.size() || !std::isspace(bytes_[pos_])) fail(ErrorCode::Format, "malformed PNM header: " + origin_);
    ++pos_;
  }

  std::size_t pos() const { return pos_; }

 private:
  void skip_space_and_comments() {
    while (pos_ < bytes_.size()) {
      if (std::isspace(bytes_[pos_])) {
        ++pos_;
      } else if (bytes_[pos_] == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
      } else {
        break;
      }
    }
  }

  std::span<const std::uint8_t> bytes_;
  std::string origin_;
  std::size_t pos_ = 2;
};

ImageTensor decode_pnm(std::span<const std::uint8_t> bytes, const std::string& origin) {
  const char kind = static_cast<char>(bytes[1]);
  const std::size_t channels = (kind == '3' || kind == '6') ? 3 : 1;
  const bool binary = (kind == '5' || kind == '6');
  PnmReader reader(bytes, origin);
  const long width = reader.next_int();
  const long height = reader.next_int();
  const long maxval = reader.next_int();
  if (width <= 0 || height <= 0 || maxval <= 0 || maxval > 65535)
    fail(ErrorCode::Format, "invalid PNM dimensions or maxval: " + origin);
  const std::size_t count = static_cast<std::size_t>(width) * static_cast<std::size_t>(height) * channels;
  ImageTensor out(static_cast<std::size_t>(height), static_cast<std::size_t>(width), channels);
  auto data = out.data();
  const float scale = 1.0f / static_cast<float>(maxval);
  if (binary) {
    reader.skip_single_space();
    const std::size_t sample_bytes = maxval < 256 ? 1 : 2;
    if (reader.pos() + count * sample_bytes > bytes.size()) fail(ErrorCode::Format, "truncated PNM data: " + origin);
    const std::uint8_t* p = bytes.data() + reader.pos();
    for (std::size_t i = 0; i < count; ++i) {
      const unsigned v = sample_bytes == 1 ? p[i] : (static_cast<unsigned>(p[2 * i]) << 8) | p[2 * i + 1];
      data[i] = static_cast<float>(std::min<long>(v, maxval)) * scale;
    }
  } else {
    for (std::size_t i = 0; i < count; ++i) data[i] = static_cast<float>(std::min(reader.next_int(), maxval)) * scale;
  }
  return out;
}

// --- PNG encoding ----------------------------------------------------------------

void png_write_callback(png_structp png, png_bytep data, png_size_t length) {
  auto* out = static_cast<std::vector<std::uint8_t>*>(png_get_io_ptr(png));
  out->insert(out->end(), data, data + length);
}

void png_flush_callback(png_structp) {}

}  // namespace

ImageTensor decode_image(std::span<const std::uint8_t> bytes, const std::string& origin) {
  static constexpr std::uint8_t kPngMagic[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1A, '\n'};
  if (bytes.size() >= 8 && std::equal(kPngMagic, kPngMagic + 8, bytes.begin())) return decode_png(bytes, origin);
  if (bytes.size() >= 3 && bytes[0] == 0xFF && bytes[1] == 0xD8 && bytes[2] == 0xFF) return decode_jpeg(bytes, origin);
  if (bytes.size() >= 2 && bytes[0] == 'P' && (bytes[1] == '2' || bytes[1] == '3' || bytes[1] == '5' || bytes[1] == '6'))
    return decode_pnm(bytes, origin);
  fail(ErrorCode::Format, "unsupported image format: " + origin);
}

ImageTensor read_image(const std::filesystem::path& path) {
  const auto bytes = read_bytes(path);
  return decode_image(bytes, path.string());
}

ImageTensor resize_bilinear(const ImageTensor& image, ImageSize target) {
  require(target.height >= 1 && target.width >= 1, ErrorCode::Argument, "resize target must be positive");
  const std::size_t in_h = image.height(), in_w = image.width(), m = image.channels();
  if (in_h == target.height && in_w == target.width) return image;

  struct Tap {
    std::size_t lo, hi;
    double w;  // weight of hi
  };
  auto taps = [](std::size_t in, std::size_t out) {
    std::vector<Tap> t(out);
    const double scale = static_cast<double>(in) / static_cast<double>(out);
    for (std::size_t i = 0; i < out; ++i) {
      double src = (static_cast<double>(i) + 0.5) * scale - 0.5;
      src = std::clamp(src, 0.0, static_cast<double>(in - 1));
      const auto lo = static_cast<std::size_t>(std::floor(src));
      const std::size_t hi = std::min(lo + 1, in - 1);
      t[i] = {lo, hi, src - static_cast<double>(lo)};
    }
    return t;
  };
  const auto rows = taps(in_h, target.height);
  const auto cols = taps(in_w, target.width);

  ImageTensor out(target.height, target.width, m);
  for (std::size_t r = 0; r < target.height; ++r) {
    const auto& tr = rows[r];
    for (std::size_t c = 0; c < target.width; ++c) {
      const auto& tc = cols[c];
      for (std::size_t ch = 0; ch < m; ++ch) {
        const double top = (1.0 - tc.w) * image.at(tr.lo, tc.lo, ch) + tc.w * image.at(tr.lo, tc.hi, ch);
        const double bottom = (1.0 - tc.w) * image.at(tr.hi, tc.lo, ch) + tc.w * image.at(tr.hi, tc.hi, ch);
        out.at(r, c, ch) = static_cast<float>((1.0 - tr.w) * top + tr.w * bottom);
      }
    }
  }
  return out;
}

ImageTensor convert_channels(const ImageTensor& image, std::size_t channels) {
  if (channels == 0 || channels == image.channels()) return image;
  ImageTensor out(image.height(), image.width(), channels);
  for (std::size_t r = 0; r < image.height(); ++r) {
    for (std::size_t c = 0; c < image.width(); ++c) {
      auto src = image.pixel(r, c);
      auto dst = out.pixel(r, c);
      if (image.channels() == 1) {
        std::fill(dst.begin(), dst.end(), src[0]);
      } else if (channels == 1 && image.channels() == 3) {
        dst[0] = static_cast<float>(0.299 * src[0] + 0.587 * src[1] + 0.114 * src[2]);
      } else {
        fail(ErrorCode::Shape, "cannot convert " + std::to_string(image.channels()) + " channels to " +
                                   std::to_string(channels));
      }
    }
  }
  return out;
}

ImageTensor load_image(const std::filesystem::path& path, ImageSize target, std::size_t channels) {
  return resize_bilinear(convert_channels(read_image(path), channels), target);
}

std::vector<std::uint8_t> encode_png(const ImageTensor& image) {
  const std::size_t m = image.channels();
  require(m == 1 || m == 3, ErrorCode::Shape, "PNG encoding needs 1 or 3 channels");
  std::vector<std::uint8_t> pixels(image.size());
  auto data = image.data();
  for (std::size_t i = 0; i < pixels.size(); ++i)
    pixels[i] = static_cast<std::uint8_t>(std::lround(std::clamp(data[i], 0.0f, 1.0f) * 255.0f));

  std::vector<std::uint8_t> out;
  std::string message;
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, &message, png_error_callback, png_warning_callback);
  if (!png) fail(ErrorCode::Internal, "png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    fail(ErrorCode::Internal, "png_create_info_struct failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    fail(ErrorCode::Internal, "PNG encoding failed: " + message);
  }
  png_set_write_fn(png, &out, png_write_callback, png_flush_callback);
  png_set_IHDR(png, info, static_cast<png_uint_32>(image.width()), static_cast<png_uint_32>(image.height()), 8,
               m == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  const std::size_t stride = image.width() * m;
  for (std::size_t r = 0; r < image.height(); ++r) png_write_row(png, pixels.data() + r * stride);
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  return out;
}

void write_png(const ImageTensor& image, const std::filesystem::path& path) {
  const auto bytes = encode_png(image);
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::Io, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(ErrorCode::Io, "error writing " + path.string());
}

bool has_image_extension(const std::filesystem::path& path) {
  auto ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char ch) { return std::tolower(ch); });
  return ext == ".png" || ext == ".jpg" || ext == ".jpeg" || ext == ".ppm" || ext == ".pgm" || ext == ".pnm";
}

}  // namespace flim
