#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "flim/dataset.hpp"
#include "flim/image_io.hpp"
#include "flim/model.hpp"

namespace flim {

enum class KernelConvention { Gamma, Sigma };

struct SvmConfig {
  double C = 100.0;
  // Defaults to 1/n for n input features. Under the Sigma convention the
  // kernel is exp(-|x-y|^2 / (2 sigma^2)) and this value is sigma.
  std::optional<double> scale;
  KernelConvention convention = KernelConvention::Gamma;
  double tol = 1e-3;
  std::size_t max_passes = 10;

  double gamma_for(std::size_t dimension) const;
};

struct FcConfig {
  NeuronsPerClass neurons;
  // Optional neuron fractions to compare by stratified cross-validation on Z1.
  std::vector<double> grid;
  std::size_t cv_folds = 3;
};

struct Seeds {
  std::uint64_t split = 1;
  std::uint64_t select = 1;
  std::uint64_t filters = 1;
  std::uint64_t fc = 1;
};

struct ExperimentConfig {
  std::filesystem::path dataset_root;  // directory tree, or
  std::filesystem::path dataset_csv;   // explicit path,label list
  ImageSize image_size{400, 400};
  std::size_t channels = 0;  // 0 keeps the native channel count
  double train_fraction = 0.30;
  std::vector<std::size_t> per_class{1};
  std::optional<ImageSize> select_size;
  std::filesystem::path markers_dir;
  std::vector<ConvLayerConfig> layers;
  std::optional<FcConfig> fc;
  SvmConfig svm;
  Seeds seeds;
  // Train one decision head per conv depth (CL1..CLL) instead of the last only.
  bool all_heads = true;
  std::filesystem::path output_dir = "flim-out";

  void set_seed(std::uint64_t seed);
  void validate() const;
};

// Relative paths resolve against base_dir.
ExperimentConfig parse_config(const std::string& json_text, const std::filesystem::path& base_dir = {});
ExperimentConfig load_config(const std::filesystem::path& path);
// Without output_dir; used for provenance.
std::string config_to_json(const ExperimentConfig& config);

struct ManifestEntry {
  std::size_t index = 0;
  std::string id;
  std::filesystem::path path;
  Label label = 0;
  std::string class_name;
};

struct ReportRow {
  std::string config;  // "CL1", "CL2", "FC"
  double accuracy = 0.0;
  std::vector<std::vector<std::size_t>> confusion;  // [true-1][predicted-1]
};

struct EvaluationReport {
  std::uint64_t split_seed = 0;
  std::vector<std::string> class_names;
  std::vector<ReportRow> rows;
  std::size_t train_images = 0;
  std::size_t test_images = 0;
  std::vector<std::size_t> feature_dimensions;  // per row
};

std::string report_to_json(const EvaluationReport& report);
EvaluationReport report_from_json(const std::string& text);
// Fixed-width table: one line per split, CL1 / CL2 / FC columns, 4 decimals,
// followed by the confusion matrices.
std::string report_to_table(const EvaluationReport& report);

struct Prediction {
  std::size_t index = 0;
  std::string id;
  Label truth = 0;
  std::string head;
  Label predicted = 0;
};

struct TrainProgress {
  std::string stage;
  double fraction = 0.0;
};

struct TrainOptions {
  // When false, Zs images without a marker file are skipped with a warning.
  bool require_all_markers = true;
  std::function<void(const TrainProgress&)> progress;
};

class Experiment {
 public:
  explicit Experiment(ExperimentConfig config);

  const ExperimentConfig& config() const { return config_; }
  const DatasetCatalog& catalog() const { return catalog_; }

  ImageTensor load_image(std::size_t index) const;

  std::filesystem::path split_path() const;
  std::filesystem::path manifest_path() const;
  std::filesystem::path model_path() const;
  std::filesystem::path features_path() const;
  std::filesystem::path report_json_path() const;
  std::filesystem::path report_text_path() const;
  std::filesystem::path predictions_path() const;
  std::filesystem::path marker_path(const std::string& id) const;

  SplitSpec run_split();
  SplitSpec load_split() const;

  std::vector<ManifestEntry> run_select();
  std::vector<ManifestEntry> manifest(const SplitSpec& split) const;

  FlimModel run_train(const TrainOptions& options = {});
  void run_extract();
  EvaluationReport run_evaluate(std::vector<Prediction>* predictions = nullptr);

 private:
  ExperimentConfig config_;
  DatasetCatalog catalog_;
};

// Inputs of every decision head for one image, in model.heads order.
std::vector<FeatureVector> head_inputs(const FlimModel& model, const ImageTensor& image);

void save_split(const SplitSpec& split, const std::filesystem::path& path);
SplitSpec load_split_file(const std::filesystem::path& path);

std::vector<Prediction> read_predictions_csv(const std::filesystem::path& path);

// Binary feature dump written by `extract`.
struct FeatureRecord {
  std::size_t index = 0;
  Label label = 0;
  std::uint8_t set = 0;  // 1 = Z1, 2 = Z2
  FeatureVector values;
};
std::vector<FeatureRecord> read_features(const std::filesystem::path& path);

}  // namespace flim
