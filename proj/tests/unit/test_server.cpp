#include <chrono>
#include <thread>

#include "doctest.h"
#include "flim/error.hpp"
#include "flim/log.hpp"
#include "flim/server.hpp"
#include "httplib.h"
#include "json.hpp"
#include "synthetic.hpp"

using namespace flim;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

constexpr std::size_t kSize = 96;

constexpr const char* kConfig = R"({
  "dataset": {"root": "images", "image_size": [96, 96]},
  "split": {"train_fraction": 0.5},
  "select": {"per_class": 2},
  "markers_dir": "markers",
  "layers": [{"k": 5, "f_m": 8, "poolsize": [3, 3], "pool_stride": 4},
             {"k": 3, "f_m": 4, "poolsize": [3, 3], "pool_stride": 2}],
  "seed": 2,
  "output_dir": "out"
})";

json marker_body(const std::string& id, Label label, const std::vector<Pixel>& pixels) {
  json px = json::array();
  for (const auto& p : pixels) px.push_back({p.row, p.col});
  return {{"image_id", id}, {"author_id", "tester"}, {"strokes", {{{"label", label}, {"pixels", px}}}}};
}

struct Running {
  synthetic::TempDir dir;
  ExperimentConfig config;
  std::unique_ptr<Server> server;
  std::thread thread;
  int port = 0;

  Running() {
    synthetic::write_texture_dataset(dir.path() / "images", 6, kSize, kSize, 4);
    config = parse_config(kConfig, dir.path());
    Experiment ex(config);
    ex.run_split();
    ex.run_select();
    server = std::make_unique<Server>(config);
    port = server->bind("127.0.0.1", 0);
    thread = std::thread([this] { server->run(); });
  }
  ~Running() {
    server->wait_for_training();
    server->stop();
    thread.join();
  }

  httplib::Client client() const {
    httplib::Client c("127.0.0.1", port);
    c.set_read_timeout(120, 0);
    return c;
  }

  json wait_for_job(const std::string& url) const {
    auto c = client();
    for (int i = 0; i < 1200; ++i) {
      const auto res = c.Get(url);
      REQUIRE(res);
      auto body = json::parse(res->body);
      if (body["status"] == "succeeded" || body["status"] == "failed") return body;
      std::this_thread::sleep_for(std::chrono::milliseconds(50));
    }
    FAIL("job did not finish");
    return {};
  }
};

}  // namespace

TEST_CASE("annotation round trip, training job, and model inspection") {
  set_log_sink([](LogLevel, const std::string&) {});
  Running app;
  auto c = app.client();

  // The image list is the selected set.
  auto res = c.Get("/api/images");
  REQUIRE(res);
  CHECK(res->status == 200);
  const auto images = json::parse(res->body);
  REQUIRE(images.size() == 6);
  for (const auto& e : images) {
    CHECK(e["has_markers"] == false);
    CHECK(e["url"] == "/api/images/" + e["id"].get<std::string>());
    CHECK(e["class_name"] == synthetic::texture_classes()[e["class"].get<std::size_t>() - 1]);
  }
  const std::string first = images[0]["id"];
  const Label first_label = images[0]["class"];

  res = c.Get("/api/images/" + first);
  REQUIRE(res);
  CHECK(res->status == 200);
  CHECK(res->get_header_value("Content-Type") == "image/png");
  const auto png = decode_image(std::span(reinterpret_cast<const std::uint8_t*>(res->body.data()), res->body.size()));
  CHECK(png.height() == kSize);
  CHECK(png.width() == kSize);
  CHECK(c.Get("/api/images/nope")->status == 404);

  SUBCASE("markers are stored exactly as drawn") {
    CHECK(c.Get("/api/markers/" + first)->status == 404);
    const auto pixels = synthetic::brush_stroke({{10, 5}, {40, 70}, {80, 20}}, 3, kSize, kSize);
    const auto body = marker_body(first, first_label, pixels);
    res = c.Put("/api/markers/" + first, body.dump(), "application/json");
    REQUIRE(res);
    CHECK(res->status == 204);
    const MarkerSet expect{first, "tester", {{first_label, pixels}}};
    const auto path = app.config.markers_dir / (first + ".mrk");
    CHECK(load_markers(path) == expect);
    CHECK(read_file(path) == format_markers(expect));
    res = c.Get("/api/markers/" + first);
    REQUIRE(res);
    CHECK(json::parse(res->body) == body);
    CHECK(json::parse(c.Get("/api/images")->body)[0]["has_markers"] == true);
  }

  SUBCASE("bad marker uploads are rejected") {
    auto put = [&](const std::string& id, const std::string& body) {
      return c.Put("/api/markers/" + id, body, "application/json")->status;
    };
    CHECK(put(first, "{not json") == 400);
    CHECK(put(first, R"({"image_id": ")" + first + R"(", "strokes": [{"label": 1, "pixels": [[1]]}]})") == 400);
    CHECK(put(first, marker_body("other", first_label, {{1, 1}}).dump()) == 400);
    CHECK(put(first, marker_body(first, first_label, {{1, static_cast<int>(kSize)}}).dump()) == 400);
    const Label wrong = first_label == 1 ? 2 : 1;
    CHECK(put(first, marker_body(first, wrong, {{1, 1}}).dump()) == 400);
    auto anonymous = marker_body(first, first_label, {{1, 1}});
    anonymous["author_id"] = "two words";
    CHECK(put(first, anonymous.dump()) == 400);
    CHECK(put("nope", marker_body("nope", 1, {{1, 1}}).dump()) == 404);
    CHECK(!fs::exists(app.config.markers_dir / (first + ".mrk")));
  }

  SUBCASE("train, then inspect filters, activations, and accuracy") {
    CHECK(c.Get("/api/model/filters?layer=1")->status == 404);
    for (const auto& e : images) {
      const std::string id = e["id"];
      const auto ms = synthetic::scripted_markers(id, e["class"].get<Label>(), kSize, kSize);
      json strokes = json::array();
      for (const auto& s : ms.strokes) {
        json px = json::array();
        for (const auto& p : s.pixels) px.push_back({p.row, p.col});
        strokes.push_back({{"label", s.label}, {"pixels", px}});
      }
      const json body{{"image_id", id}, {"author_id", "tester"}, {"strokes", strokes}};
      REQUIRE(c.Put("/api/markers/" + id, body.dump(), "application/json")->status == 204);
    }

    res = c.Post("/api/train", "", "application/json");
    REQUIRE(res);
    CHECK(res->status == 202);
    const auto job = json::parse(res->body);
    const auto second = c.Post("/api/train", "", "application/json");
    REQUIRE(second);
    CHECK(second->status == 409);

    const auto done = app.wait_for_job(job["url"]);
    CHECK(done["status"] == "succeeded");
    CHECK(done["progress"] == 1.0);
    REQUIRE(done["filter_counts"].size() == 2);
    CHECK(done["filter_counts"][0].get<int>() > 0);
    CHECK(c.Get("/api/jobs/999")->status == 404);

    res = c.Get("/api/model/filters?layer=1");
    REQUIRE(res);
    CHECK(res->status == 200);
    CHECK(res->get_header_value("Content-Type") == "image/png");
    CHECK(c.Get("/api/model/filters?layer=3")->status == 400);
    CHECK(c.Get("/api/model/filters")->status == 400);

    res = c.Get("/api/model/activations?image=" + first + "&layer=1&filter=0");
    REQUIRE(res);
    CHECK(res->status == 200);
    const auto act =
        decode_image(std::span(reinterpret_cast<const std::uint8_t*>(res->body.data()), res->body.size()));
    CHECK(act.height() == kSize / 4);
    CHECK(act.channels() == 1);
    CHECK(c.Get("/api/model/activations?image=" + first + "&layer=1&filter=10000")->status == 400);

    res = c.Get("/api/evaluate");
    REQUIRE(res);
    CHECK(res->status == 200);
    const auto report = json::parse(res->body);
    CHECK(report["rows"].size() == 2);
    res = c.Get("/api/evaluate?format=text");
    REQUIRE(res);
    CHECK(res->body.find("split2") != std::string::npos);
    CHECK(fs::exists(app.config.output_dir / "model.flim"));
  }
  set_log_sink(nullptr);
}

TEST_CASE("training with no markers reports a failed job") {
  set_log_sink([](LogLevel, const std::string&) {});
  Running app;
  auto c = app.client();
  const auto res = c.Post("/api/train", "", "application/json");
  REQUIRE(res);
  const auto done = app.wait_for_job(json::parse(res->body)["url"]);
  CHECK(done["status"] == "failed");
  CHECK(!done["error"].get<std::string>().empty());
  set_log_sink(nullptr);
}

TEST_CASE("a busy port is an Io error") {
  set_log_sink([](LogLevel, const std::string&) {});
  Running app;
  Server other(app.config);
  try {
    other.bind("127.0.0.1", app.port);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::Io);
  }
  set_log_sink(nullptr);
}
