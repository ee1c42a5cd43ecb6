#include "flim/server.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <limits>
#include <map>
#include <mutex>
#include <thread>

#include "flim/error.hpp"
#include "flim/log.hpp"
#include "flim/markers.hpp"
#include "httplib.h"
#include "json.hpp"

namespace flim {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Job {
  std::string status = "queued";  // queued, running, succeeded, failed
  std::string stage;
  double progress = 0.0;
  std::vector<std::string> warnings;
  std::string error;
  std::vector<std::size_t> filter_counts;
};

int http_status(ErrorCode code) {
  switch (code) {
    case ErrorCode::NotFound: return 404;
    case ErrorCode::Conflict: return 409;
    case ErrorCode::Format:
    case ErrorCode::Validation:
    case ErrorCode::Argument:
    case ErrorCode::Shape:
    case ErrorCode::Version: return 400;
    default: return 500;
  }
}

void send_json(httplib::Response& res, const json& body, int status = 200) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void send_png(httplib::Response& res, const ImageTensor& image) {
  const auto bytes = encode_png(image);
  res.set_content(std::string(bytes.begin(), bytes.end()), "image/png");
}

std::size_t query_index(const httplib::Request& req, const std::string& name) {
  if (!req.has_param(name)) fail(ErrorCode::Argument, "missing query parameter " + name);
  const auto text = req.get_param_value(name);
  std::size_t pos = 0;
  unsigned long long v = 0;
  try {
    v = std::stoull(text, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos == 0 || pos != text.size()) fail(ErrorCode::Argument, "query parameter " + name + " must be an integer");
  return static_cast<std::size_t>(v);
}

// Each tile is min-max scaled on its own.
ImageTensor min_max_scaled(ImageTensor image) {
  float lo = std::numeric_limits<float>::infinity(), hi = -lo;
  for (float v : image.data()) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  const float range = hi - lo;
  for (auto& v : image.storage()) v = range > 0.0f ? (v - lo) / range : 0.0f;
  return image;
}

ImageTensor filter_grid(const FilterBank& bank) {
  const std::size_t k = bank.k(), m = bank.channels(), n = bank.size();
  const std::size_t out_channels = m == 3 ? 3 : 1;
  const std::size_t zoom = std::max<std::size_t>(1, 48 / k), gap = 2, tile = k * zoom;
  const std::size_t cols = std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(n)))));
  const std::size_t rows = std::max<std::size_t>(1, (n + cols - 1) / cols);
  ImageTensor grid(rows * (tile + gap) + gap, cols * (tile + gap) + gap, out_channels, 1.0f);
  for (std::size_t f = 0; f < n; ++f) {
    ImageTensor small(k, k, out_channels);
    const auto& w = bank[f].weights;
    for (std::size_t r = 0; r < k; ++r)
      for (std::size_t c = 0; c < k; ++c) {
        const std::size_t base = (r * k + c) * m;
        if (out_channels == 3) {
          for (std::size_t ch = 0; ch < 3; ++ch) small.at(r, c, ch) = static_cast<float>(w[base + ch]);
        } else {
          double s = 0.0;
          for (std::size_t ch = 0; ch < m; ++ch) s += w[base + ch];
          small.at(r, c, 0) = static_cast<float>(s / static_cast<double>(m));
        }
      }
    small = min_max_scaled(std::move(small));
    const std::size_t top = gap + (f / cols) * (tile + gap), left = gap + (f % cols) * (tile + gap);
    for (std::size_t r = 0; r < tile; ++r)
      for (std::size_t c = 0; c < tile; ++c)
        for (std::size_t ch = 0; ch < out_channels; ++ch) grid.at(top + r, left + c, ch) = small.at(r / zoom, c / zoom, ch);
  }
  return grid;
}

json markers_to_json(const MarkerSet& ms) {
  json strokes = json::array();
  for (const auto& s : ms.strokes) {
    json pixels = json::array();
    for (const auto& p : s.pixels) pixels.push_back({p.row, p.col});
    strokes.push_back({{"label", s.label}, {"pixels", std::move(pixels)}});
  }
  return {{"image_id", ms.image_id}, {"author_id", ms.author_id}, {"strokes", std::move(strokes)}};
}

MarkerSet markers_from_json(const std::string& body) {
  try {
    const auto j = json::parse(body);
    MarkerSet ms;
    ms.image_id = j.at("image_id").get<std::string>();
    ms.author_id = j.value("author_id", std::string("anonymous"));
    for (const auto& s : j.at("strokes")) {
      Stroke stroke;
      stroke.label = s.at("label").get<Label>();
      for (const auto& p : s.at("pixels")) {
        if (!p.is_array() || p.size() != 2) fail(ErrorCode::Format, "each pixel must be [row, col]");
        stroke.pixels.push_back({p[0].get<int>(), p[1].get<int>()});
      }
      ms.strokes.push_back(std::move(stroke));
    }
    return ms;
  } catch (const json::exception& e) {
    fail(ErrorCode::Format, std::string("malformed marker JSON: ") + e.what());
  }
}

bool valid_token(const std::string& s) {
  if (s.empty()) return false;
  return std::all_of(s.begin(), s.end(), [](unsigned char ch) { return std::isgraph(ch) != 0; });
}

}  // namespace

struct Server::State {
  explicit State(ExperimentConfig config) : experiment(std::move(config)) {}

  Experiment experiment;
  httplib::Server http;

  std::mutex mutex;
  std::shared_ptr<const FlimModel> model;
  std::map<std::size_t, Job> jobs;
  std::size_t next_job = 1;
  bool training = false;
  std::thread worker;

  std::mutex run_mutex;
  bool stop_requested = false;
  std::atomic<bool> listening{false};

  std::shared_ptr<const FlimModel> current_model() {
    std::lock_guard lock(mutex);
    if (!model) fail(ErrorCode::NotFound, "no trained model yet");
    return model;
  }

  void train(std::size_t id) {
    WarningCapture capture;
    auto update = [&](auto&& fn) {
      std::lock_guard lock(mutex);
      fn(jobs[id]);
      jobs[id].warnings = capture.warnings();
    };
    update([](Job& j) { j.status = "running"; });
    try {
      TrainOptions options;
      options.require_all_markers = false;
      options.progress = [&](const TrainProgress& p) {
        update([&](Job& j) {
          j.stage = p.stage;
          j.progress = p.fraction;
        });
      };
      auto trained = std::make_shared<const FlimModel>(experiment.run_train(options));
      std::vector<std::size_t> counts;
      for (const auto& layer : trained->layers) counts.push_back(layer.bank.size());
      std::lock_guard lock(mutex);
      model = std::move(trained);
      auto& job = jobs[id];
      job.status = "succeeded";
      job.stage = "done";
      job.progress = 1.0;
      job.filter_counts = std::move(counts);
      job.warnings = capture.warnings();
      training = false;
    } catch (const std::exception& e) {
      std::lock_guard lock(mutex);
      auto& job = jobs[id];
      job.status = "failed";
      job.error = e.what();
      job.warnings = capture.warnings();
      training = false;
    }
  }

  template <typename Fn>
  httplib::Server::Handler guarded(Fn fn) {
    return [fn](const httplib::Request& req, httplib::Response& res) {
      try {
        fn(req, res);
      } catch (const Error& e) {
        send_json(res, {{"error", e.what()}, {"code", to_string(e.code())}}, http_status(e.code()));
      } catch (const std::exception& e) {
        send_json(res, {{"error", e.what()}}, 500);
      }
    };
  }

  void routes() {
    http.Get("/api/images", guarded([this](const httplib::Request&, httplib::Response& res) {
      SplitSpec split;
      if (fs::exists(experiment.split_path())) split = experiment.load_split();
      json out = json::array();
      for (const auto& e : experiment.manifest(split))
        out.push_back({{"id", e.id},
                       {"url", "/api/images/" + e.id},
                       {"class", e.label},
                       {"class_name", e.class_name},
                       {"has_markers", fs::exists(experiment.marker_path(e.id))}});
      send_json(res, out);
    }));

    http.Get(R"(/api/images/([^/]+))", guarded([this](const httplib::Request& req, httplib::Response& res) {
      const auto index = experiment.catalog().index_of_id(req.matches[1]);
      send_png(res, experiment.load_image(index));
    }));

    http.Get(R"(/api/markers/([^/]+))", guarded([this](const httplib::Request& req, httplib::Response& res) {
      const std::string id = req.matches[1];
      experiment.catalog().index_of_id(id);
      const auto path = experiment.marker_path(id);
      if (!fs::exists(path)) fail(ErrorCode::NotFound, "no markers saved for " + id);
      send_json(res, markers_to_json(load_markers(path)));
    }));

    http.Put(R"(/api/markers/([^/]+))", guarded([this](const httplib::Request& req, httplib::Response& res) {
      const std::string id = req.matches[1];
      const auto index = experiment.catalog().index_of_id(id);
      auto ms = markers_from_json(req.body);
      require(ms.image_id == id, ErrorCode::Validation, "image_id " + ms.image_id + " does not match the URL id " + id);
      require(valid_token(ms.author_id), ErrorCode::Validation, "author_id must be a non-empty token without spaces");
      const auto& size = experiment.config().image_size;
      validate_markers(ms, {size.height, size.width, experiment.catalog().class_count(),
                            experiment.catalog().entry(index).label});
      fs::create_directories(experiment.config().markers_dir);
      save_markers(ms, experiment.marker_path(id));
      res.status = 204;
    }));

    http.Post("/api/train", guarded([this](const httplib::Request&, httplib::Response& res) {
      std::lock_guard lock(mutex);
      if (training) {
        send_json(res, {{"error", "a training job is already running"}}, 409);
        return;
      }
      if (worker.joinable()) worker.join();
      const std::size_t id = next_job++;
      jobs[id] = Job{};
      training = true;
      worker = std::thread([this, id] { train(id); });
      send_json(res, {{"job_id", id}, {"url", "/api/jobs/" + std::to_string(id)}}, 202);
    }));

    http.Get(R"(/api/jobs/(\d+))", guarded([this](const httplib::Request& req, httplib::Response& res) {
      const auto id = static_cast<std::size_t>(std::stoull(req.matches[1]));
      std::lock_guard lock(mutex);
      const auto it = jobs.find(id);
      if (it == jobs.end()) fail(ErrorCode::NotFound, "unknown job " + std::to_string(id));
      const auto& j = it->second;
      json body{{"id", id},          {"status", j.status},   {"stage", j.stage},
                {"progress", j.progress}, {"warnings", j.warnings}, {"filter_counts", j.filter_counts}};
      if (!j.error.empty()) body["error"] = j.error;
      send_json(res, body);
    }));

    http.Get("/api/model/filters", guarded([this](const httplib::Request& req, httplib::Response& res) {
      const auto model = current_model();
      const auto layer = query_index(req, "layer");
      require(layer >= 1 && layer <= model->layers.size(), ErrorCode::Argument,
              "layer must lie in 1.." + std::to_string(model->layers.size()));
      send_png(res, filter_grid(model->layers[layer - 1].bank));
    }));

    http.Get("/api/model/activations", guarded([this](const httplib::Request& req, httplib::Response& res) {
      const auto model = current_model();
      if (!req.has_param("image")) fail(ErrorCode::Argument, "missing query parameter image");
      const auto index = experiment.catalog().index_of_id(req.get_param_value("image"));
      const auto layer = query_index(req, "layer");
      const auto filter = query_index(req, "filter");
      require(layer >= 1 && layer <= model->layers.size(), ErrorCode::Argument,
              "layer must lie in 1.." + std::to_string(model->layers.size()));
      require(filter < model->layers[layer - 1].bank.size(), ErrorCode::Argument,
              "filter must lie in 0.." + std::to_string(model->layers[layer - 1].bank.size() - 1));
      const auto outputs = forward_extract_layers(*model, experiment.load_image(index));
      const auto& act = outputs[layer - 1];
      ImageTensor map(act.height(), act.width(), 1);
      for (std::size_t r = 0; r < act.height(); ++r)
        for (std::size_t c = 0; c < act.width(); ++c) map.at(r, c, 0) = act.at(r, c, filter);
      send_png(res, min_max_scaled(std::move(map)));
    }));

    http.Get("/api/evaluate", guarded([this](const httplib::Request& req, httplib::Response& res) {
      current_model();
      const auto report_path = experiment.report_json_path();
      const bool stale = !fs::exists(report_path) ||
                         fs::last_write_time(report_path) < fs::last_write_time(experiment.model_path());
      EvaluationReport report;
      if (stale) {
        std::unique_lock lock(mutex);
        if (training) fail(ErrorCode::Conflict, "a training job is running");
        lock.unlock();
        report = experiment.run_evaluate();
      } else {
        report = report_from_json(read_file(report_path));
      }
      if (req.has_param("format") && req.get_param_value("format") == "text")
        res.set_content(report_to_table(report), "text/plain");
      else
        send_json(res, json::parse(report_to_json(report)));
    }));
  }
};

Server::Server(ExperimentConfig config) : state_(std::make_unique<State>(std::move(config))) {
  if (fs::exists(state_->experiment.model_path())) {
    try {
      state_->model = std::make_shared<const FlimModel>(load_model(state_->experiment.model_path()));
    } catch (const Error& e) {
      log_warning(std::string("ignoring existing model: ") + e.what());
    }
  }
  // httplib's defaults include SO_REUSEPORT, which would let a second server
  // share the port silently.
  state_->http.set_socket_options([](socket_t sock) {
    int yes = 1;
    setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, reinterpret_cast<const char*>(&yes), sizeof(yes));
  });
  state_->routes();
}

Server::~Server() {
  stop();
  wait_for_training();
}

int Server::bind(const std::string& host, int port) {
  require(port >= 0 && port <= 65535, ErrorCode::Argument, "port must lie in 0..65535");
  if (port == 0) {
    const int bound = state_->http.bind_to_any_port(host);
    if (bound < 0) fail(ErrorCode::Io, "cannot bind to " + host);
    return bound;
  }
  if (!state_->http.bind_to_port(host, port))
    fail(ErrorCode::Io, "cannot bind to " + host + ":" + std::to_string(port) + " (port busy?)");
  return port;
}

void Server::run() {
  {
    std::lock_guard lock(state_->run_mutex);
    if (state_->stop_requested) return;
    state_->listening = true;
  }
  state_->http.listen_after_bind();
  state_->listening = false;
}

// run() may not have reached the accept loop yet; httplib ignores stop()
// until it has.
void Server::stop() {
  {
    std::lock_guard lock(state_->run_mutex);
    state_->stop_requested = true;
  }
  while (state_->listening && !state_->http.is_running()) std::this_thread::sleep_for(std::chrono::milliseconds(1));
  state_->http.stop();
}

void Server::wait_for_training() {
  std::thread worker;
  {
    std::lock_guard lock(state_->mutex);
    worker = std::move(state_->worker);
  }
  if (worker.joinable()) worker.join();
}

}  // namespace flim
