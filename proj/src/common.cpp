#include <cmath>
#include <iostream>
#include <mutex>

#include "flim/error.hpp"
#include "flim/log.hpp"
#include "flim/rng.hpp"
#include "flim/tensor.hpp"

namespace flim {

const char* to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::Io: return "io";
    case ErrorCode::Format: return "format";
    case ErrorCode::Validation: return "validation";
    case ErrorCode::Shape: return "shape";
    case ErrorCode::Argument: return "argument";
    case ErrorCode::Stratification: return "stratification";
    case ErrorCode::Version: return "version";
    case ErrorCode::Conflict: return "conflict";
    case ErrorCode::NotFound: return "not found";
    case ErrorCode::Internal: return "internal";
  }
  return "unknown";
}

// --- logging -------------------------------------------------------------

namespace {

std::mutex sink_mutex;

void default_sink(LogLevel level, const std::string& message) {
  if (level == LogLevel::Warning) std::cerr << "warning: " << message << '\n';
}

LogSink& sink() {
  static LogSink s = default_sink;
  return s;
}

thread_local WarningCapture* active_capture = nullptr;

}  // namespace

void set_log_sink(LogSink s) {
  std::lock_guard lock(sink_mutex);
  sink() = s ? std::move(s) : LogSink(default_sink);
}

void log_info(const std::string& message) {
  std::lock_guard lock(sink_mutex);
  if (sink()) sink()(LogLevel::Info, message);
}

void log_warning(const std::string& message) {
  for (auto* c = active_capture; c != nullptr; c = c->previous_) c->warnings_.push_back(message);
  std::lock_guard lock(sink_mutex);
  if (sink()) sink()(LogLevel::Warning, message);
}

WarningCapture::WarningCapture() : previous_(active_capture) { active_capture = this; }

WarningCapture::~WarningCapture() { active_capture = previous_; }

// --- rng -------------------------------------------------------------------

std::uint64_t Rng::index(std::uint64_t n) {
  if (n <= 1) return 0;
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
  std::uint64_t v;
  do {
    v = engine_();
  } while (v >= limit);
  return v % n;
}

double Rng::normal() {
  double u1;
  do {
    u1 = uniform();
  } while (u1 <= 0.0);
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

std::uint64_t derive_seed(std::uint64_t base, std::string_view tag, std::uint64_t index) {
  // FNV-1a over the tag, mixed with splitmix64.
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char ch : tag) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  std::uint64_t z = base ^ h ^ (index * 0x9E3779B97F4A7C15ULL);
  z += 0x9E3779B97F4A7C15ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

// --- tensor ----------------------------------------------------------------

ImageTensor::ImageTensor(std::size_t height, std::size_t width, std::size_t channels, float fill)
    : height_(height), width_(width), channels_(channels), data_(height * width * channels, fill) {
  require(height >= 1 && width >= 1 && channels >= 1, ErrorCode::Shape, "image dimensions must be positive");
}

ImageTensor::ImageTensor(std::size_t height, std::size_t width, std::size_t channels, std::vector<float> data)
    : height_(height), width_(width), channels_(channels), data_(std::move(data)) {
  require(height >= 1 && width >= 1 && channels >= 1, ErrorCode::Shape, "image dimensions must be positive");
  require(data_.size() == height * width * channels, ErrorCode::Shape,
          "image data length " + std::to_string(data_.size()) + " does not match " + std::to_string(height) + "x" +
              std::to_string(width) + "x" + std::to_string(channels));
}

bool ImageTensor::all_finite() const {
  for (float v : data_)
    if (!std::isfinite(v)) return false;
  return true;
}

RowMatrix RowMatrix::from_rows(std::span<const FeatureVector> rows) {
  RowMatrix m(0, rows.empty() ? 0 : rows.front().size());
  m.reserve_rows(rows.size());
  for (const auto& r : rows) m.append_row(r);
  return m;
}

void RowMatrix::append_row(std::span<const float> values) {
  require(values.size() == cols_, ErrorCode::Shape,
          "row length " + std::to_string(values.size()) + " != " + std::to_string(cols_));
  values_.insert(values_.end(), values.begin(), values.end());
  ++rows_;
}

}  // namespace flim
