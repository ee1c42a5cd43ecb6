#include "flim/pipeline.hpp"

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "flim/error.hpp"
#include "flim/log.hpp"
#include "flim/markers.hpp"
#include "flim/rng.hpp"
#include "json.hpp"

namespace flim {
namespace fs = std::filesystem;
using nlohmann::json;

// --- configuration -----------------------------------------------------------------

double SvmConfig::gamma_for(std::size_t dimension) const {
  const double value = scale.value_or(1.0 / static_cast<double>(std::max<std::size_t>(dimension, 1)));
  require(value > 0.0, ErrorCode::Argument, "SVM kernel scale must be positive");
  if (convention == KernelConvention::Gamma) return value;
  return 1.0 / (2.0 * value * value);
}

void ExperimentConfig::set_seed(std::uint64_t seed) { seeds = {seed, seed, seed, seed}; }

void ExperimentConfig::validate() const {
  require(!dataset_root.empty() || !dataset_csv.empty(), ErrorCode::Argument,
          "config needs dataset.root or dataset.csv");
  require(image_size.height >= 1 && image_size.width >= 1, ErrorCode::Argument, "image_size must be positive");
  require(channels == 0 || channels == 1 || channels == 3, ErrorCode::Argument, "channels must be 0, 1 or 3");
  require(train_fraction > 0.0 && train_fraction < 1.0, ErrorCode::Argument, "train_fraction must lie in (0, 1)");
  require(!per_class.empty(), ErrorCode::Argument, "select.per_class must not be empty");
  require(!layers.empty(), ErrorCode::Argument, "config needs at least one conv layer");
  for (const auto& l : layers) l.validate();
  require(svm.C > 0.0, ErrorCode::Argument, "svm.C must be positive");
  if (fc) {
    require(fc->cv_folds >= 2, ErrorCode::Argument, "fc.cv_folds must be >= 2");
    for (double g : fc->grid) require(g > 0.0, ErrorCode::Argument, "fc.grid fractions must be positive");
  }
}

namespace {

fs::path resolve(const fs::path& base, const std::string& p) {
  if (p.empty()) return {};
  fs::path path(p);
  return path.is_absolute() || base.empty() ? path : base / path;
}

ImageSize read_size(const json& j, const char* what) {
  require(j.is_array() && j.size() == 2, ErrorCode::Format, std::string(what) + " must be [height, width]");
  return {j[0].get<std::size_t>(), j[1].get<std::size_t>()};
}

NeuronsPerClass read_neurons(const json& j) {
  NeuronsPerClass n;
  if (j.is_number_integer()) {
    n.value = j.get<std::size_t>();
  } else if (j.is_number_float()) {
    n.value = j.get<double>();
  } else if (j.is_object() && j.contains("fraction")) {
    n.value = j["fraction"].get<double>();
  } else if (j.is_object() && j.contains("count")) {
    n.value = j["count"].get<std::size_t>();
  } else {
    fail(ErrorCode::Format, "fc.neurons_per_class must be a count, a fraction, or {count|fraction}");
  }
  return n;
}

json neurons_json(const NeuronsPerClass& n) {
  if (const auto* c = std::get_if<std::size_t>(&n.value)) return json{{"count", *c}};
  return json{{"fraction", std::get<double>(n.value)}};
}

}  // namespace

ExperimentConfig parse_config(const std::string& json_text, const fs::path& base_dir) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    fail(ErrorCode::Format, std::string("config is not valid JSON: ") + e.what());
  }
  ExperimentConfig c;
  try {
    const auto& ds = j.at("dataset");
    c.dataset_root = resolve(base_dir, ds.value("root", ""));
    c.dataset_csv = resolve(base_dir, ds.value("csv", ""));
    if (ds.contains("image_size")) c.image_size = read_size(ds["image_size"], "dataset.image_size");
    c.channels = ds.value("channels", std::size_t{0});
    if (j.contains("split")) c.train_fraction = j["split"].value("train_fraction", 0.30);
    if (j.contains("select")) {
      const auto& s = j["select"];
      if (s.contains("per_class")) {
        if (s["per_class"].is_array()) c.per_class = s["per_class"].get<std::vector<std::size_t>>();
        else c.per_class = {s["per_class"].get<std::size_t>()};
      }
      if (s.contains("image_size")) c.select_size = read_size(s["image_size"], "select.image_size");
    }
    c.markers_dir = resolve(base_dir, j.value("markers_dir", "markers"));
    for (const auto& l : j.at("layers")) {
      ConvLayerConfig layer;
      layer.k = l.value("k", std::size_t{3});
      layer.filters_per_marker = l.value("f_m", std::size_t{8});
      if (l.contains("poolsize")) {
        const auto& p = l["poolsize"];
        if (p.is_array()) layer.pool = {p.at(0).get<std::size_t>(), p.at(1).get<std::size_t>()};
        else layer.pool = {p.get<std::size_t>(), p.get<std::size_t>()};
      }
      layer.pool_stride = l.value("pool_stride", std::size_t{1});
      layer.conv_stride = l.value("conv_stride", std::size_t{1});
      const auto scope = l.value("cluster_scope", std::string("marker"));
      require(scope == "marker" || scope == "class", ErrorCode::Format, "cluster_scope must be marker or class");
      layer.scope = scope == "marker" ? ClusterScope::Marker : ClusterScope::Class;
      c.layers.push_back(layer);
    }
    if (j.contains("fc") && !j["fc"].is_null()) {
      const auto& f = j["fc"];
      FcConfig fc;
      if (f.contains("neurons_per_class")) fc.neurons = read_neurons(f["neurons_per_class"]);
      if (f.contains("grid")) fc.grid = f["grid"].get<std::vector<double>>();
      fc.cv_folds = f.value("cv_folds", std::size_t{3});
      c.fc = fc;
    }
    if (j.contains("svm")) {
      const auto& s = j["svm"];
      c.svm.C = s.value("C", 100.0);
      const auto convention = s.value("kernel", std::string("gamma"));
      require(convention == "gamma" || convention == "sigma", ErrorCode::Format, "svm.kernel must be gamma or sigma");
      c.svm.convention = convention == "gamma" ? KernelConvention::Gamma : KernelConvention::Sigma;
      if (s.contains("scale") && !s["scale"].is_null()) c.svm.scale = s["scale"].get<double>();
      c.svm.tol = s.value("tol", 1e-3);
      c.svm.max_passes = s.value("max_passes", std::size_t{10});
    }
    if (j.contains("seed")) c.set_seed(j["seed"].get<std::uint64_t>());
    if (j.contains("seeds")) {
      const auto& s = j["seeds"];
      c.seeds.split = s.value("split", c.seeds.split);
      c.seeds.select = s.value("select", c.seeds.select);
      c.seeds.filters = s.value("filters", c.seeds.filters);
      c.seeds.fc = s.value("fc", c.seeds.fc);
    }
    c.all_heads = j.value("all_heads", true);
    if (j.contains("output_dir")) c.output_dir = resolve(base_dir, j["output_dir"].get<std::string>());
  } catch (const json::exception& e) {
    fail(ErrorCode::Format, std::string("invalid config: ") + e.what());
  }
  c.validate();
  return c;
}

ExperimentConfig load_config(const fs::path& path) {
  return parse_config(read_file(path), fs::absolute(path).parent_path());
}

std::string config_to_json(const ExperimentConfig& c) {
  json j;
  j["dataset"] = {{"root", c.dataset_root.string()},
                  {"csv", c.dataset_csv.string()},
                  {"image_size", {c.image_size.height, c.image_size.width}},
                  {"channels", c.channels}};
  j["split"] = {{"train_fraction", c.train_fraction}};
  j["select"] = {{"per_class", c.per_class}};
  if (c.select_size) j["select"]["image_size"] = {c.select_size->height, c.select_size->width};
  j["markers_dir"] = c.markers_dir.string();
  j["layers"] = json::array();
  for (const auto& l : c.layers)
    j["layers"].push_back({{"k", l.k},
                           {"f_m", l.filters_per_marker},
                           {"poolsize", {l.pool.height, l.pool.width}},
                           {"pool_stride", l.pool_stride},
                           {"conv_stride", l.conv_stride},
                           {"cluster_scope", l.scope == ClusterScope::Marker ? "marker" : "class"}});
  if (c.fc) j["fc"] = {{"neurons_per_class", neurons_json(c.fc->neurons)}, {"grid", c.fc->grid}, {"cv_folds", c.fc->cv_folds}};
  j["svm"] = {{"C", c.svm.C},
              {"kernel", c.svm.convention == KernelConvention::Gamma ? "gamma" : "sigma"},
              {"scale", c.svm.scale ? json(*c.svm.scale) : json(nullptr)},
              {"tol", c.svm.tol},
              {"max_passes", c.svm.max_passes}};
  j["seeds"] = {{"split", c.seeds.split}, {"select", c.seeds.select}, {"filters", c.seeds.filters}, {"fc", c.seeds.fc}};
  j["all_heads"] = c.all_heads;
  return j.dump();
}

// --- split files -------------------------------------------------------------------------

void save_split(const SplitSpec& split, const fs::path& path) {
  json j{{"train_fraction", split.train_fraction}, {"seed", split.seed}, {"z1", split.z1}, {"z2", split.z2}, {"zs", split.zs}};
  write_file_atomic(path, j.dump(2) + "\n");
}

SplitSpec load_split_file(const fs::path& path) {
  if (!fs::exists(path)) fail(ErrorCode::NotFound, "no split file at " + path.string() + "; run `flim split` first");
  try {
    const auto j = json::parse(read_file(path));
    SplitSpec s;
    s.train_fraction = j.at("train_fraction").get<double>();
    s.seed = j.at("seed").get<std::uint64_t>();
    s.z1 = j.at("z1").get<std::vector<std::size_t>>();
    s.z2 = j.at("z2").get<std::vector<std::size_t>>();
    s.zs = j.value("zs", std::vector<std::size_t>{});
    return s;
  } catch (const json::exception& e) {
    fail(ErrorCode::Format, "invalid split file " + path.string() + ": " + e.what());
  }
}

// --- experiment ----------------------------------------------------------------------------

Experiment::Experiment(ExperimentConfig config) : config_(std::move(config)) {
  config_.validate();
  catalog_ = config_.dataset_csv.empty() ? DatasetCatalog::from_directory(config_.dataset_root)
                                         : DatasetCatalog::from_csv(config_.dataset_csv);
}

ImageTensor Experiment::load_image(std::size_t index) const {
  return flim::load_image(catalog_.entry(index).path, config_.image_size, config_.channels);
}

fs::path Experiment::split_path() const { return config_.output_dir / "split.json"; }
fs::path Experiment::manifest_path() const { return config_.output_dir / "zs.json"; }
fs::path Experiment::model_path() const { return config_.output_dir / "model.flim"; }
fs::path Experiment::features_path() const { return config_.output_dir / "features.bin"; }
fs::path Experiment::report_json_path() const { return config_.output_dir / "report.json"; }
fs::path Experiment::report_text_path() const { return config_.output_dir / "report.txt"; }
fs::path Experiment::predictions_path() const { return config_.output_dir / "predictions.csv"; }
fs::path Experiment::marker_path(const std::string& id) const { return config_.markers_dir / (id + ".mrk"); }

SplitSpec Experiment::run_split() {
  auto split = stratified_split(catalog_, config_.train_fraction, config_.seeds.split);
  fs::create_directories(config_.output_dir);
  save_split(split, split_path());
  log_info("split: |Z1| = " + std::to_string(split.z1.size()) + ", |Z2| = " + std::to_string(split.z2.size()));
  return split;
}

SplitSpec Experiment::load_split() const {
  auto split = load_split_file(split_path());
  validate_split(split, catalog_.size());
  return split;
}

std::vector<ManifestEntry> Experiment::manifest(const SplitSpec& split) const {
  std::vector<ManifestEntry> out;
  for (auto i : split.zs) {
    const auto& e = catalog_.entry(i);
    out.push_back({i, e.id, e.path, e.label, catalog_.class_names()[static_cast<std::size_t>(e.label - 1)]});
  }
  return out;
}

std::vector<ManifestEntry> Experiment::run_select() {
  auto split = load_split();
  const ImageSize size = config_.select_size.value_or(config_.image_size);
  std::vector<FeatureVector> flattened;
  flattened.reserve(split.z1.size());
  for (auto i : split.z1) {
    auto img = convert_channels(read_image(catalog_.entry(i).path), config_.channels);
    flattened.push_back(flatten(resize_bilinear(img, size)));
  }
  SelectionOptions options;
  options.per_class = config_.per_class;
  options.seed = config_.seeds.select;
  split.zs = select_images(flattened, split.z1, catalog_, options);
  save_split(split, split_path());

  const auto entries = manifest(split);
  json j = json::array();
  for (const auto& e : entries)
    j.push_back({{"index", e.index}, {"id", e.id}, {"path", e.path.string()}, {"class", e.label}, {"class_name", e.class_name}});
  write_file_atomic(manifest_path(), j.dump(2) + "\n");
  return entries;
}

namespace {

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i, v >>= 4) s[static_cast<std::size_t>(i)] = digits[v & 15];
  return s;
}

// Stratified k-fold assignment over indices into `labels`.
std::vector<std::size_t> fold_assignment(std::span<const Label> labels, std::size_t folds, std::uint64_t seed) {
  std::map<Label, std::vector<std::size_t>> members;
  for (std::size_t i = 0; i < labels.size(); ++i) members[labels[i]].push_back(i);
  Rng rng(derive_seed(seed, "cv"));
  std::vector<std::size_t> fold(labels.size(), 0);
  for (auto& [label, idx] : members) {
    rng.shuffle(idx.begin(), idx.end());
    for (std::size_t r = 0; r < idx.size(); ++r) fold[idx[r]] = r % folds;
  }
  return fold;
}

double cross_validate_fc(std::span<const FeatureVector> features, std::span<const Label> labels, int class_count,
                         double fraction, const FcConfig& fc_config, const SvmConfig& svm_config, std::uint64_t seed) {
  const auto fold = fold_assignment(labels, fc_config.cv_folds, seed);
  std::size_t correct = 0, total = 0;
  for (std::size_t f = 0; f < fc_config.cv_folds; ++f) {
    std::vector<FeatureVector> train;
    std::vector<Label> train_labels;
    for (std::size_t i = 0; i < features.size(); ++i)
      if (fold[i] != f) {
        train.push_back(features[i]);
        train_labels.push_back(labels[i]);
      }
    std::map<Label, std::size_t> counts;
    for (auto l : train_labels) ++counts[l];
    bool usable = counts.size() >= 2;
    for (const auto& [l, n] : counts) usable = usable && n >= 2;
    if (!usable) continue;
    const auto fc = learn_fc_layer(train, train_labels, NeuronsPerClass{fraction}, seed);
    std::vector<FeatureVector> transformed;
    for (const auto& x : train) transformed.push_back(apply_fc_layer(fc, x));
    const auto stats = fit_zscore(transformed);
    for (auto& x : transformed) apply_zscore_inplace(x, stats);
    SmoOptions smo{svm_config.C, svm_config.gamma_for(fc.neurons.size()), svm_config.tol, svm_config.max_passes};
    const auto svm = train_ovo(transformed, train_labels, class_count, smo);
    for (std::size_t i = 0; i < features.size(); ++i)
      if (fold[i] == f) {
        auto x = apply_fc_layer(fc, features[i]);
        apply_zscore_inplace(x, stats);
        correct += predict(svm, x) == labels[i] ? 1 : 0;
        ++total;
      }
  }
  return total == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(total);
}

}  // namespace

FlimModel Experiment::run_train(const TrainOptions& options) {
  using clock = std::chrono::steady_clock;
  const auto started = clock::now();
  auto progress = [&](const std::string& stage, double fraction) {
    if (options.progress) options.progress({stage, fraction});
  };

  const auto split = load_split();
  if (split.zs.empty()) fail(ErrorCode::NotFound, "no images selected for annotation; run `flim select` first");

  // Marker images.
  std::vector<ImageTensor> inputs;
  std::vector<MarkerSet> markers;
  std::vector<std::string> missing;
  json marker_files = json::array();
  for (auto i : split.zs) {
    const auto& entry = catalog_.entry(i);
    const auto path = marker_path(entry.id);
    if (!fs::exists(path)) {
      missing.push_back(entry.id);
      continue;
    }
    auto image = load_image(i);
    const auto text = read_file(path);
    auto ms = parse_markers(text, path.string());
    validate_markers(ms, {image.height(), image.width(), catalog_.class_count(), entry.label});
    marker_files.push_back({{"id", entry.id}, {"fnv1a", hex64(fnv1a(text))}, {"strokes", ms.strokes.size()}});
    inputs.push_back(std::move(image));
    markers.push_back(std::move(ms));
  }
  if (!missing.empty()) {
    std::string list;
    for (const auto& id : missing) list += (list.empty() ? "" : ", ") + id;
    if (options.require_all_markers) fail(ErrorCode::NotFound, "missing marker files for: " + list);
    log_warning("training without markers for: " + list);
  }
  require(!inputs.empty(), ErrorCode::NotFound, "no marker files found in " + config_.markers_dir.string());

  FlimModel model;
  model.class_count = catalog_.class_count();
  model.class_names = catalog_.class_names();
  model.input_channels = inputs.front().channels();

  const std::size_t layers = config_.layers.size();
  const double steps = static_cast<double>(layers + 2);
  for (std::size_t l = 0; l < layers; ++l) {
    progress("learning conv layer " + std::to_string(l + 1), static_cast<double>(l) / steps);
    auto layer = learn_conv_layer(inputs, markers, config_.layers[l], derive_seed(config_.seeds.filters, "layer", l));
    log_info("layer " + std::to_string(l + 1) + ": " + std::to_string(layer.bank.size()) + " filters");
    if (l + 1 < layers)
      for (auto& img : inputs) img = apply_conv_layer(layer, img, 1, 1);
    model.layers.push_back(std::move(layer));
  }
  inputs.clear();

  // Z1 features for every depth that feeds a head.
  std::vector<std::size_t> depths;
  if (config_.all_heads)
    for (std::size_t d = 1; d <= layers; ++d) depths.push_back(d);
  else
    depths.push_back(layers);
  std::vector<std::vector<FeatureVector>> features(layers + 1);
  std::vector<Label> labels;
  for (std::size_t n = 0; n < split.z1.size(); ++n) {
    progress("extracting Z1 features", (static_cast<double>(layers) + static_cast<double>(n) / split.z1.size()) / steps);
    const auto i = split.z1[n];
    const auto outputs = forward_extract_layers(model, load_image(i));
    for (auto d : depths) features[d].push_back(flatten(outputs[d - 1]));
    labels.push_back(catalog_.entry(i).label);
  }

  progress("training decision layers", static_cast<double>(layers + 1) / steps);
  json fc_provenance = nullptr;
  if (config_.fc) {
    NeuronsPerClass neurons = config_.fc->neurons;
    if (!config_.fc->grid.empty()) {
      double best_fraction = config_.fc->grid.front(), best_accuracy = -1.0;
      json scores = json::array();
      for (double fraction : config_.fc->grid) {
        const double acc = cross_validate_fc(features[layers], labels, model.class_count, fraction, *config_.fc,
                                             config_.svm, config_.seeds.fc);
        scores.push_back({{"fraction", fraction}, {"cv_accuracy", acc}});
        if (acc > best_accuracy) {
          best_accuracy = acc;
          best_fraction = fraction;
        }
      }
      neurons.value = best_fraction;
      fc_provenance = {{"grid", scores}, {"chosen_fraction", best_fraction}};
      log_info("fc grid search chose fraction " + std::to_string(best_fraction));
    }
    model.fc = learn_fc_layer(features[layers], labels, neurons, config_.seeds.fc);
    std::vector<FeatureVector> fc_features;
    fc_features.reserve(labels.size());
    for (const auto& x : features[layers]) fc_features.push_back(apply_fc_layer(*model.fc, x));
    DecisionHead head;
    head.name = "FC";
    head.depth = layers;
    head.uses_fc = true;
    head.zscore = fit_zscore(fc_features);
    for (auto& x : fc_features) apply_zscore_inplace(x, *head.zscore);
    const std::size_t dim = fc_features.front().size();
    head.svm = train_ovo(fc_features, labels, model.class_count,
                         {config_.svm.C, config_.svm.gamma_for(dim), config_.svm.tol, config_.svm.max_passes});
    model.heads.push_back(std::move(head));
  }
  // CL heads precede FC in the model.
  std::vector<DecisionHead> conv_heads;
  for (auto d : depths) {
    auto& set = features[d];
    DecisionHead head;
    head.name = "CL" + std::to_string(d);
    head.depth = d;
    head.zscore = fit_zscore(set);
    for (auto& x : set) apply_zscore_inplace(x, *head.zscore);
    const std::size_t dim = set.front().size();
    head.svm = train_ovo(set, labels, model.class_count,
                         {config_.svm.C, config_.svm.gamma_for(dim), config_.svm.tol, config_.svm.max_passes});
    set.clear();
    set.shrink_to_fit();
    conv_heads.push_back(std::move(head));
  }
  model.heads.insert(model.heads.begin(), std::make_move_iterator(conv_heads.begin()),
                     std::make_move_iterator(conv_heads.end()));

  json provenance;
  provenance["config"] = json::parse(config_to_json(config_));
  provenance["split_seed"] = split.seed;
  provenance["zs"] = split.zs;
  provenance["markers"] = marker_files;
  provenance["fc_selection"] = fc_provenance;
  model.provenance = provenance.dump();

  check_unit_norm(model);
  fs::create_directories(config_.output_dir);
  save_model(model, model_path());
  progress("done", 1.0);
  const double seconds = std::chrono::duration<double>(clock::now() - started).count();
  log_info("trained model in " + std::to_string(seconds) + " s");
  return model;
}

std::vector<FeatureVector> head_inputs(const FlimModel& model, const ImageTensor& image) {
  const auto outputs = forward_extract_layers(model, image);
  std::vector<FeatureVector> out;
  out.reserve(model.heads.size());
  for (const auto& head : model.heads) {
    require(head.depth >= 1 && head.depth <= outputs.size(), ErrorCode::Format, "head depth outside the model");
    auto x = flatten(outputs[head.depth - 1]);
    if (head.uses_fc) {
      require(model.fc.has_value(), ErrorCode::Format, "FC head without an FC layer");
      x = apply_fc_layer(*model.fc, x);
    }
    if (head.zscore) apply_zscore_inplace(x, *head.zscore);
    out.push_back(std::move(x));
  }
  return out;
}

void Experiment::run_extract() {
  const auto model = load_model(model_path());
  const auto split = load_split();
  std::vector<std::uint8_t> set(catalog_.size(), 0);
  for (auto i : split.z1) set[i] = 1;
  for (auto i : split.z2) set[i] = 2;

  auto tmp = features_path();
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorCode::Io, "cannot write " + tmp.string());
    auto put = [&](auto v) {
      for (std::size_t b = 0; b < sizeof(v); ++b) out.put(static_cast<char>((static_cast<std::uint64_t>(v) >> (8 * b)) & 0xFF));
    };
    out.write("FLIMFEAT", 8);
    put(std::uint32_t{1});
    put(static_cast<std::uint64_t>(catalog_.size()));
    std::uint64_t dim = 0;
    bool header_dim_written = false;
    const auto dim_pos = out.tellp();
    put(std::uint64_t{0});
    for (std::size_t i = 0; i < catalog_.size(); ++i) {
      const auto features = forward_extract(model, load_image(i));
      if (!header_dim_written) {
        dim = features.size();
        header_dim_written = true;
      }
      require(features.size() == dim, ErrorCode::Internal, "feature dimension changed between images");
      put(static_cast<std::uint64_t>(i));
      put(static_cast<std::uint32_t>(catalog_.entry(i).label));
      put(set[i]);
      for (float v : features) put(std::bit_cast<std::uint32_t>(v));
    }
    out.seekp(dim_pos);
    put(dim);
    if (!out) fail(ErrorCode::Io, "error writing " + tmp.string());
  }
  fs::rename(tmp, features_path());
}

std::vector<FeatureRecord> read_features(const fs::path& path) {
  const auto bytes = read_file(path);
  std::size_t pos = 0;
  auto get = [&](std::size_t n) {
    if (bytes.size() - pos < n) fail(ErrorCode::Format, "truncated feature file " + path.string());
    std::uint64_t v = 0;
    for (std::size_t b = 0; b < n; ++b) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[pos + b])) << (8 * b);
    pos += n;
    return v;
  };
  if (bytes.size() < 8 || bytes.compare(0, 8, "FLIMFEAT") != 0) fail(ErrorCode::Format, "not a feature file: " + path.string());
  pos = 8;
  const auto version = get(4);
  if (version != 1) fail(ErrorCode::Version, "feature file version " + std::to_string(version) + " (expected 1)");
  const auto rows = get(8), dim = get(8);
  std::vector<FeatureRecord> out;
  for (std::uint64_t r = 0; r < rows; ++r) {
    FeatureRecord rec;
    rec.index = get(8);
    rec.label = static_cast<Label>(get(4));
    rec.set = static_cast<std::uint8_t>(get(1));
    rec.values.resize(dim);
    for (auto& v : rec.values) v = std::bit_cast<float>(static_cast<std::uint32_t>(get(4)));
    out.push_back(std::move(rec));
  }
  return out;
}

EvaluationReport Experiment::run_evaluate(std::vector<Prediction>* predictions_out) {
  const auto model = load_model(model_path());
  require(!model.heads.empty(), ErrorCode::Format, "model has no decision heads");
  const auto split = load_split();

  EvaluationReport report;
  report.split_seed = split.seed;
  report.class_names = catalog_.class_names();
  report.train_images = split.z1.size();
  report.test_images = split.z2.size();
  const auto c = static_cast<std::size_t>(model.class_count);
  for (const auto& head : model.heads) {
    report.rows.push_back({head.name, 0.0, std::vector<std::vector<std::size_t>>(c, std::vector<std::size_t>(c, 0))});
    report.feature_dimensions.push_back(head.svm.dimension);
  }

  std::vector<Prediction> predictions;
  for (auto i : split.z2) {
    const auto& entry = catalog_.entry(i);
    const auto inputs = head_inputs(model, load_image(i));
    for (std::size_t h = 0; h < model.heads.size(); ++h) {
      const Label predicted = predict(model.heads[h].svm, inputs[h]);
      ++report.rows[h].confusion[static_cast<std::size_t>(entry.label - 1)][static_cast<std::size_t>(predicted - 1)];
      predictions.push_back({i, entry.id, entry.label, model.heads[h].name, predicted});
    }
  }
  for (auto& row : report.rows) {
    std::size_t correct = 0, total = 0;
    for (std::size_t a = 0; a < c; ++a)
      for (std::size_t b = 0; b < c; ++b) {
        total += row.confusion[a][b];
        if (a == b) correct += row.confusion[a][b];
      }
    row.accuracy = total == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(total);
  }

  fs::create_directories(config_.output_dir);
  std::ostringstream csv;
  csv << "index,id,true_label,head,predicted_label\n";
  for (const auto& p : predictions) csv << p.index << ',' << p.id << ',' << p.truth << ',' << p.head << ',' << p.predicted << '\n';
  write_file_atomic(predictions_path(), csv.str());
  write_file_atomic(report_json_path(), report_to_json(report));
  write_file_atomic(report_text_path(), report_to_table(report));
  if (predictions_out) *predictions_out = std::move(predictions);
  return report;
}

std::vector<Prediction> read_predictions_csv(const fs::path& path) {
  std::istringstream in(read_file(path));
  std::string line;
  std::getline(in, line);  // header
  std::vector<Prediction> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream row(line);
    std::string field;
    std::vector<std::string> fields;
    while (std::getline(row, field, ',')) fields.push_back(field);
    require(fields.size() == 5, ErrorCode::Format, "malformed prediction row: " + line);
    out.push_back({static_cast<std::size_t>(std::stoull(fields[0])), fields[1], std::stoi(fields[2]), fields[3],
                   std::stoi(fields[4])});
  }
  return out;
}

}  // namespace flim
