#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "flim/dataset.hpp"
#include "flim/kmeans.hpp"
#include "flim/markers.hpp"
#include "flim/normalization.hpp"
#include "flim/svm.hpp"
#include "flim/tensor_ops.hpp"

namespace flim {

enum class ClusterScope : std::uint8_t { Marker = 0, Class = 1 };

struct ConvLayerConfig {
  std::size_t k = 3;
  std::size_t filters_per_marker = 8;
  PoolSize pool{7, 7};
  std::size_t pool_stride = 1;
  std::size_t conv_stride = 1;
  ClusterScope scope = ClusterScope::Marker;

  void validate() const;
  friend bool operator==(const ConvLayerConfig&, const ConvLayerConfig&) = default;
};

// MN -> CO -> RE -> PO.
struct ConvLayer {
  ConvLayerConfig config;
  ChannelStats stats;
  FilterBank bank;
  friend bool operator==(const ConvLayer&, const ConvLayer&) = default;
};

struct Neuron {
  std::vector<double> weights;  // unit norm
  Label label = 0;
  friend bool operator==(const Neuron&, const Neuron&) = default;
};

// z-score -> inner products -> ReLU.
struct FcLayer {
  VectorStats stats;
  std::vector<Neuron> neurons;
  friend bool operator==(const FcLayer&, const FcLayer&) = default;
};

// An SVM fed by the flattened output of conv layer `depth` (1-based), or by
// the FC layer when `uses_fc`.
struct DecisionHead {
  std::string name;  // "CL1", "CL2", "FC"
  std::size_t depth = 0;
  bool uses_fc = false;
  std::optional<VectorStats> zscore;  // present when the SVM input is not FC output
  OvOSvmModel svm;
  friend bool operator==(const DecisionHead&, const DecisionHead&) = default;
};

struct FlimModel {
  int class_count = 0;
  std::size_t input_channels = 0;
  std::vector<ConvLayer> layers;
  std::optional<FcLayer> fc;
  std::vector<DecisionHead> heads;
  std::vector<std::string> class_names;
  // Free-form JSON text: configs, seeds, marker files. Part of the bit-exact
  // round trip.
  std::string provenance;

  friend bool operator==(const FlimModel&, const FlimModel&) = default;
};

// --- representative image selection -------------------------------------

struct SelectionOptions {
  // Images per class; a single value applies to all classes, otherwise one
  // value per class in label order.
  std::vector<std::size_t> per_class{1};
  std::uint64_t seed = 0;
};

// Flattened images of `z1`, labels from the catalog. Returns ascending catalog
// indices.
std::vector<std::size_t> select_images(std::span<const FeatureVector> flattened, std::span<const std::size_t> z1,
                                       const DatasetCatalog& catalog, const SelectionOptions& options);

// --- conv layers -------------------------------------------------------

// Patch rows gathered at each marker pixel of one stroke.
RowMatrix stroke_patches(const ImageTensor& image, const Stroke& stroke, std::size_t k);

ConvLayer learn_conv_layer(std::span<const ImageTensor> inputs, std::span<const MarkerSet> markers,
                           const ConvLayerConfig& config, std::uint64_t seed);

// One layer with explicit strides.
ImageTensor apply_conv_layer(const ConvLayer& layer, const ImageTensor& input, std::size_t conv_stride,
                             std::size_t pool_stride);

// Every layer at stride 1, so the output keeps the input resolution.
ImageTensor forward_training(std::span<const ConvLayer> layers, const ImageTensor& image);

// Per-layer outputs at the configured extraction strides.
std::vector<ImageTensor> forward_extract_layers(const FlimModel& model, const ImageTensor& image);

// Flattened last conv output, passed through the FC layer when present.
FeatureVector forward_extract(const FlimModel& model, const ImageTensor& image);

// --- fully connected layer ----------------------------------------------

struct NeuronsPerClass {
  std::variant<std::size_t, double> value = std::size_t{1};

  std::size_t for_class(std::size_t class_size) const;
};

FcLayer learn_fc_layer(std::span<const FeatureVector> features, std::span<const Label> labels,
                       NeuronsPerClass neurons, std::uint64_t seed);

FeatureVector apply_fc_layer(const FcLayer& fc, std::span<const float> input);

// --- container -----------------------------------------------------------

inline constexpr std::uint32_t kModelFormatVersion = 1;

std::vector<std::uint8_t> serialize_model(const FlimModel& model);
FlimModel deserialize_model(std::span<const std::uint8_t> bytes);

void save_model(const FlimModel& model, const std::filesystem::path& path);
FlimModel load_model(const std::filesystem::path& path);

void check_unit_norm(const FlimModel& model, double tolerance = 1e-6);

}  // namespace flim
