#include "flim/flim.h"

#include <mutex>
#include <string>

#include "flim/error.hpp"
#include "flim/log.hpp"
#include "flim/pipeline.hpp"
#include "flim/server.hpp"

struct flim_image {
  flim::ImageTensor tensor;
};

struct flim_model {
  flim::FlimModel model;
};

struct flim_experiment {
  flim::ExperimentConfig config;
  std::string output;
};

namespace {

thread_local std::string last_error;

flim_status to_status(flim::ErrorCode code) { return static_cast<flim_status>(static_cast<int>(code)); }

template <typename Fn>
flim_status guard(Fn&& fn) {
  try {
    fn();
    last_error.clear();
    return FLIM_OK;
  } catch (const flim::Error& e) {
    last_error = e.what();
    return to_status(e.code());
  } catch (const std::bad_alloc&) {
    last_error = "out of memory";
    return FLIM_ERR_INTERNAL;
  } catch (const std::exception& e) {
    last_error = e.what();
    return FLIM_ERR_INTERNAL;
  }
}

void require_arg(const void* p, const char* name) {
  if (!p) flim::fail(flim::ErrorCode::Argument, std::string(name) + " must not be NULL");
}

}  // namespace

extern "C" {

const char* flim_version(void) { return "1.0.0"; }

const char* flim_status_string(flim_status status) {
  if (status == FLIM_OK) return "ok";
  if (status < FLIM_ERR_IO || status > FLIM_ERR_INTERNAL) return "unknown";
  return flim::to_string(static_cast<flim::ErrorCode>(status));
}

const char* flim_last_error(void) { return last_error.c_str(); }

void flim_set_log_callback(flim_log_fn fn, void* user) {
  if (!fn) {
    flim::set_log_sink(nullptr);
    return;
  }
  flim::set_log_sink([fn, user](flim::LogLevel level, const std::string& message) {
    fn(level == flim::LogLevel::Warning ? FLIM_LOG_WARNING : FLIM_LOG_INFO, message.c_str(), user);
  });
}

flim_status flim_image_load(const char* path, size_t height, size_t width, size_t channels, flim_image** out) {
  return guard([&] {
    require_arg(path, "path");
    require_arg(out, "out");
    *out = nullptr;
    auto image = flim::convert_channels(flim::read_image(path), channels);
    if (height != 0 || width != 0) {
      flim::require(height != 0 && width != 0, flim::ErrorCode::Argument, "height and width must both be set or both 0");
      image = flim::resize_bilinear(image, {height, width});
    }
    *out = new flim_image{std::move(image)};
  });
}

void flim_image_shape(const flim_image* image, size_t* height, size_t* width, size_t* channels) {
  if (height) *height = image ? image->tensor.height() : 0;
  if (width) *width = image ? image->tensor.width() : 0;
  if (channels) *channels = image ? image->tensor.channels() : 0;
}

const float* flim_image_data(const flim_image* image) { return image ? image->tensor.data().data() : nullptr; }

void flim_image_free(flim_image* image) { delete image; }

flim_status flim_model_load(const char* path, flim_model** out) {
  return guard([&] {
    require_arg(path, "path");
    require_arg(out, "out");
    *out = nullptr;
    *out = new flim_model{flim::load_model(path)};
  });
}

flim_status flim_model_save(const flim_model* model, const char* path) {
  return guard([&] {
    require_arg(model, "model");
    require_arg(path, "path");
    flim::save_model(model->model, path);
  });
}

void flim_model_free(flim_model* model) { delete model; }

size_t flim_model_class_count(const flim_model* model) {
  return model ? static_cast<size_t>(model->model.class_count) : 0;
}

size_t flim_model_layer_count(const flim_model* model) { return model ? model->model.layers.size() : 0; }

size_t flim_model_filter_count(const flim_model* model, size_t layer) {
  if (!model || layer == 0 || layer > model->model.layers.size()) return 0;
  return model->model.layers[layer - 1].bank.size();
}

size_t flim_model_head_count(const flim_model* model) { return model ? model->model.heads.size() : 0; }

const char* flim_model_head_name(const flim_model* model, size_t head) {
  if (!model || head >= model->model.heads.size()) return nullptr;
  return model->model.heads[head].name.c_str();
}

flim_status flim_model_extract(const flim_model* model, const flim_image* image, float* out, size_t capacity,
                               size_t* length) {
  return guard([&] {
    require_arg(model, "model");
    require_arg(image, "image");
    const auto features = flim::forward_extract(model->model, image->tensor);
    if (length) *length = features.size();
    if (out) std::copy_n(features.begin(), std::min(capacity, features.size()), out);
  });
}

flim_status flim_model_predict(const flim_model* model, const flim_image* image, size_t head, int* label) {
  return guard([&] {
    require_arg(model, "model");
    require_arg(image, "image");
    require_arg(label, "label");
    flim::require(head < model->model.heads.size(), flim::ErrorCode::Argument, "head index out of range");
    const auto inputs = flim::head_inputs(model->model, image->tensor);
    *label = flim::predict(model->model.heads[head].svm, inputs[head]);
  });
}

flim_status flim_experiment_open(const char* config_path, flim_experiment** out) {
  return guard([&] {
    require_arg(config_path, "config_path");
    require_arg(out, "out");
    *out = nullptr;
    *out = new flim_experiment{flim::load_config(config_path), {}};
  });
}

void flim_experiment_free(flim_experiment* experiment) { delete experiment; }

flim_status flim_experiment_set_seed(flim_experiment* experiment, uint64_t seed) {
  return guard([&] {
    require_arg(experiment, "experiment");
    experiment->config.set_seed(seed);
  });
}

flim_status flim_experiment_set_output_dir(flim_experiment* experiment, const char* dir) {
  return guard([&] {
    require_arg(experiment, "experiment");
    require_arg(dir, "dir");
    experiment->config.output_dir = dir;
  });
}

flim_status flim_experiment_set_markers_dir(flim_experiment* experiment, const char* dir) {
  return guard([&] {
    require_arg(experiment, "experiment");
    require_arg(dir, "dir");
    experiment->config.markers_dir = dir;
  });
}

flim_status flim_experiment_split(flim_experiment* experiment, size_t* train_count, size_t* test_count) {
  return guard([&] {
    require_arg(experiment, "experiment");
    const auto split = flim::Experiment(experiment->config).run_split();
    if (train_count) *train_count = split.z1.size();
    if (test_count) *test_count = split.z2.size();
  });
}

flim_status flim_experiment_select(flim_experiment* experiment, const char** manifest_json) {
  return guard([&] {
    require_arg(experiment, "experiment");
    flim::Experiment exp(experiment->config);
    exp.run_select();
    experiment->output = flim::read_file(exp.manifest_path());
    if (manifest_json) *manifest_json = experiment->output.c_str();
  });
}

flim_status flim_experiment_train(flim_experiment* experiment, int require_all_markers) {
  return guard([&] {
    require_arg(experiment, "experiment");
    flim::TrainOptions options;
    options.require_all_markers = require_all_markers != 0;
    flim::Experiment(experiment->config).run_train(options);
  });
}

flim_status flim_experiment_extract(flim_experiment* experiment) {
  return guard([&] {
    require_arg(experiment, "experiment");
    flim::Experiment(experiment->config).run_extract();
  });
}

flim_status flim_experiment_evaluate(flim_experiment* experiment, const char** table) {
  return guard([&] {
    require_arg(experiment, "experiment");
    const auto report = flim::Experiment(experiment->config).run_evaluate();
    experiment->output = flim::report_to_table(report);
    if (table) *table = experiment->output.c_str();
  });
}

flim_status flim_experiment_serve(flim_experiment* experiment, const char* host, int port, flim_ready_fn on_ready,
                                  void* user) {
  return guard([&] {
    require_arg(experiment, "experiment");
    flim::Server server(experiment->config);
    const int bound = server.bind(host ? host : "127.0.0.1", port);
    if (on_ready) on_ready(bound, user);
    server.run();
  });
}

}  // extern "C"
