// .flim container layout (all integers and floats little-endian):
//
//   magic "FLIMMODL" | u32 version | body | u64 FNV-1a of everything before it
//
// body:
//   u32 class_count, u32 input_channels, strings class_names, string provenance
//   u32 layer count, then per layer:
//     u32 k, f_m, pool_h, pool_w, pool_stride, conv_stride; u8 scope
//     f64s mean, f64s stddev, f64 epsilon
//     u32 k, u32 channels, u32 filter count, per filter:
//       i32 label, string image_id, u32 stroke, f64 x k*k*m weights
//   u8 has_fc; when set: vector stats, u32 neuron count, per neuron i32 label + f64s
//   u32 head count, per head:
//     string name, u32 depth, u8 uses_fc, u8 has_zscore [+ vector stats]
//     i32 class_count, u64 dimension, f64 gamma, f64 C
//     u32 pooled vectors (each u64 length + f32 values)
//     u32 machines, per machine: i32 positive, i32 negative, f64 bias,
//       u32 support count, u32 indices, f64 coefficients
//
// "f64s" and "strings" are u64-count-prefixed sequences.

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "flim/error.hpp"
#include "flim/markers.hpp"
#include "flim/model.hpp"

namespace flim {
namespace {

constexpr char kMagic[8] = {'F', 'L', 'I', 'M', 'M', 'O', 'D', 'L'};

std::uint64_t fnv1a(std::span<const std::uint8_t> bytes) {
  std::uint64_t h = 1469598103934665603ULL;
  for (auto b : bytes) {
    h ^= b;
    h *= 1099511628211ULL;
  }
  return h;
}

class Writer {
 public:
  void raw(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out_.insert(out_.end(), b, b + n);
  }
  template <class T>
  void uint(T v) {
    for (std::size_t i = 0; i < sizeof(T); ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u8(std::uint8_t v) { out_.push_back(v); }
  void u32(std::uint64_t v) {
    require(v <= UINT32_MAX, ErrorCode::Internal, "value too large for the model format");
    uint(static_cast<std::uint32_t>(v));
  }
  void u64(std::uint64_t v) { uint(v); }
  void i32(std::int32_t v) { uint(static_cast<std::uint32_t>(v)); }
  void f64(double v) { uint(std::bit_cast<std::uint64_t>(v)); }
  void f32(float v) { uint(std::bit_cast<std::uint32_t>(v)); }
  void str(const std::string& s) {
    u64(s.size());
    raw(s.data(), s.size());
  }
  void f64s(std::span<const double> v) {
    u64(v.size());
    for (double x : v) f64(x);
  }
  void f32s(std::span<const float> v) {
    u64(v.size());
    for (float x : v) f32(x);
  }
  std::vector<std::uint8_t>& bytes() { return out_; }

 private:
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : in_(bytes) {}

  void need(std::size_t n) const {
    if (in_.size() - pos_ < n) fail(ErrorCode::Format, "model file is truncated");
  }
  template <class T>
  T uint() {
    need(sizeof(T));
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(in_[pos_ + i]) << (8 * i);
    pos_ += sizeof(T);
    return v;
  }
  std::uint8_t u8() { return uint<std::uint8_t>(); }
  std::uint32_t u32() { return uint<std::uint32_t>(); }
  std::uint64_t u64() { return uint<std::uint64_t>(); }
  std::int32_t i32() { return static_cast<std::int32_t>(uint<std::uint32_t>()); }
  double f64() { return std::bit_cast<double>(uint<std::uint64_t>()); }
  float f32() { return std::bit_cast<float>(uint<std::uint32_t>()); }
  std::size_t count(std::size_t element_size) {
    const auto n = u64();
    if (element_size > 0 && n > (in_.size() - pos_) / element_size) fail(ErrorCode::Format, "model file is truncated");
    return static_cast<std::size_t>(n);
  }
  std::string str() {
    const auto n = count(1);
    std::string s(reinterpret_cast<const char*>(in_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  std::vector<double> f64s() {
    std::vector<double> v(count(8));
    for (auto& x : v) x = f64();
    return v;
  }
  std::vector<float> f32s() {
    std::vector<float> v(count(4));
    for (auto& x : v) x = f32();
    return v;
  }
  bool at_end() const { return pos_ == in_.size(); }

 private:
  std::span<const std::uint8_t> in_;
  std::size_t pos_ = 0;
};

void write_vector_stats(Writer& w, const VectorStats& s) {
  w.f64s(s.mean);
  w.f64s(s.stddev);
  w.f64(s.epsilon);
}

VectorStats read_vector_stats(Reader& r) {
  VectorStats s;
  s.mean = r.f64s();
  s.stddev = r.f64s();
  s.epsilon = r.f64();
  require(s.mean.size() == s.stddev.size(), ErrorCode::Format, "inconsistent z-score statistics");
  return s;
}

}  // namespace

std::vector<std::uint8_t> serialize_model(const FlimModel& model) {
  Writer w;
  w.raw(kMagic, sizeof(kMagic));
  w.u32(kModelFormatVersion);
  w.i32(model.class_count);
  w.u32(model.input_channels);
  w.u64(model.class_names.size());
  for (const auto& n : model.class_names) w.str(n);
  w.str(model.provenance);

  w.u32(model.layers.size());
  for (const auto& layer : model.layers) {
    const auto& c = layer.config;
    w.u32(c.k);
    w.u32(c.filters_per_marker);
    w.u32(c.pool.height);
    w.u32(c.pool.width);
    w.u32(c.pool_stride);
    w.u32(c.conv_stride);
    w.u8(static_cast<std::uint8_t>(c.scope));
    w.f64s(layer.stats.mean);
    w.f64s(layer.stats.stddev);
    w.f64(layer.stats.epsilon);
    w.u32(layer.bank.k());
    w.u32(layer.bank.channels());
    w.u32(layer.bank.size());
    for (const auto& f : layer.bank.filters()) {
      w.i32(f.source.label);
      w.str(f.source.image_id);
      w.u32(f.source.stroke);
      for (double x : f.weights) w.f64(x);
    }
  }

  w.u8(model.fc ? 1 : 0);
  if (model.fc) {
    write_vector_stats(w, model.fc->stats);
    w.u32(model.fc->neurons.size());
    for (const auto& n : model.fc->neurons) {
      w.i32(n.label);
      w.f64s(n.weights);
    }
  }

  w.u32(model.heads.size());
  for (const auto& head : model.heads) {
    w.str(head.name);
    w.u32(head.depth);
    w.u8(head.uses_fc ? 1 : 0);
    w.u8(head.zscore ? 1 : 0);
    if (head.zscore) write_vector_stats(w, *head.zscore);
    const auto& svm = head.svm;
    w.i32(svm.class_count);
    w.u64(svm.dimension);
    w.f64(svm.gamma);
    w.f64(svm.C);
    w.u32(svm.vectors.size());
    for (const auto& v : svm.vectors) w.f32s(v);
    w.u32(svm.machines.size());
    for (const auto& m : svm.machines) {
      w.i32(m.positive);
      w.i32(m.negative);
      w.f64(m.bias);
      w.u32(m.support.size());
      for (auto s : m.support) w.u32(s);
      for (double c : m.coefficients) w.f64(c);
    }
  }
  const auto checksum = fnv1a(w.bytes());
  w.u64(checksum);
  return std::move(w.bytes());
}

FlimModel deserialize_model(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < sizeof(kMagic) + 4 + 8 || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0)
    fail(ErrorCode::Format, "not a FLIM model file (bad magic)");
  Reader header(bytes.subspan(sizeof(kMagic), 4));
  const auto version = header.u32();
  if (version != kModelFormatVersion)
    fail(ErrorCode::Version, "model format version " + std::to_string(version) + " is not supported (expected " +
                                 std::to_string(kModelFormatVersion) + ")");
  const auto body = bytes.first(bytes.size() - 8);
  Reader trailer(bytes.last(8));
  if (trailer.u64() != fnv1a(body)) fail(ErrorCode::Format, "model file checksum mismatch (corrupted)");

  Reader r(body.subspan(sizeof(kMagic) + 4));
  FlimModel model;
  model.class_count = r.i32();
  model.input_channels = r.u32();
  const auto names = r.count(8);
  for (std::size_t i = 0; i < names; ++i) model.class_names.push_back(r.str());
  model.provenance = r.str();

  const auto layers = r.u32();
  for (std::uint32_t l = 0; l < layers; ++l) {
    ConvLayer layer;
    auto& c = layer.config;
    c.k = r.u32();
    c.filters_per_marker = r.u32();
    c.pool.height = r.u32();
    c.pool.width = r.u32();
    c.pool_stride = r.u32();
    c.conv_stride = r.u32();
    const auto scope = r.u8();
    require(scope <= 1, ErrorCode::Format, "unknown cluster scope in model file");
    c.scope = static_cast<ClusterScope>(scope);
    layer.stats.mean = r.f64s();
    layer.stats.stddev = r.f64s();
    layer.stats.epsilon = r.f64();
    const std::size_t k = r.u32(), m = r.u32(), count = r.u32();
    require(k == c.k && m == layer.stats.mean.size() && m == layer.stats.stddev.size(), ErrorCode::Format,
            "inconsistent layer " + std::to_string(l + 1) + " in model file");
    layer.bank = FilterBank(k, m);
    for (std::size_t f = 0; f < count; ++f) {
      Filter filter;
      filter.source.label = r.i32();
      filter.source.image_id = r.str();
      filter.source.stroke = r.u32();
      r.need(k * k * m * 8);
      filter.weights.resize(k * k * m);
      for (auto& x : filter.weights) x = r.f64();
      layer.bank.add(std::move(filter));
    }
    model.layers.push_back(std::move(layer));
  }

  if (r.u8() != 0) {
    FcLayer fc;
    fc.stats = read_vector_stats(r);
    const auto neurons = r.u32();
    for (std::uint32_t i = 0; i < neurons; ++i) {
      Neuron n;
      n.label = r.i32();
      n.weights = r.f64s();
      fc.neurons.push_back(std::move(n));
    }
    model.fc = std::move(fc);
  }

  const auto heads = r.u32();
  for (std::uint32_t h = 0; h < heads; ++h) {
    DecisionHead head;
    head.name = r.str();
    head.depth = r.u32();
    head.uses_fc = r.u8() != 0;
    if (r.u8() != 0) head.zscore = read_vector_stats(r);
    auto& svm = head.svm;
    svm.class_count = r.i32();
    svm.dimension = r.u64();
    svm.gamma = r.f64();
    svm.C = r.f64();
    const auto vectors = r.u32();
    for (std::uint32_t v = 0; v < vectors; ++v) svm.vectors.push_back(r.f32s());
    const auto machines = r.u32();
    for (std::uint32_t mi = 0; mi < machines; ++mi) {
      PairMachine m;
      m.positive = r.i32();
      m.negative = r.i32();
      m.bias = r.f64();
      const auto n = r.u32();
      r.need(static_cast<std::size_t>(n) * 12);
      m.support.resize(n);
      m.coefficients.resize(n);
      for (auto& s : m.support) {
        s = r.u32();
        require(s < svm.vectors.size(), ErrorCode::Format, "support index out of range in model file");
      }
      for (auto& c : m.coefficients) c = r.f64();
      svm.machines.push_back(std::move(m));
    }
    model.heads.push_back(std::move(head));
  }
  require(r.at_end(), ErrorCode::Format, "trailing bytes in model file");
  return model;
}

void save_model(const FlimModel& model, const std::filesystem::path& path) {
  const auto bytes = serialize_model(model);
  write_file_atomic(path, std::string(bytes.begin(), bytes.end()));
}

FlimModel load_model(const std::filesystem::path& path) {
  const auto text = read_file(path);
  return deserialize_model(std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

}  // namespace flim
