#include <cstdio>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "flim/flim.h"

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string markers;
  bool verbose = false;
};

void add_common(CLI::App* cmd, Common& c, bool with_markers) {
  cmd->add_option("--config", c.config, "Experiment config (JSON)")->required()->check(CLI::ExistingFile);
  cmd->add_option("--seed", c.seed, "Override every seed in the config");
  cmd->add_option("--out", c.out, "Output directory (default: config output_dir)");
  if (with_markers) cmd->add_option("--markers", c.markers, "Directory of <image id>.mrk files");
  cmd->add_flag("-v,--verbose", c.verbose, "Print progress messages");
}

int report_failure(flim_status status) {
  std::cerr << "flim: " << flim_status_string(status) << " error: " << flim_last_error() << '\n';
  return static_cast<int>(status) + 1;
}

void log_to_stderr(flim_log_level level, const char* message, void*) {
  std::cerr << (level == FLIM_LOG_WARNING ? "warning: " : "") << message << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Backpropagation-free CNN feature learning from image markers"};
  app.set_version_flag("--version", std::string(flim_version()));
  app.require_subcommand(1);

  Common common;
  bool allow_missing = false;
  std::string host = "127.0.0.1";
  int port = 8080;

  auto* split = app.add_subcommand("split", "Stratified Z1/Z2 split of the dataset");
  auto* select = app.add_subcommand("select", "Pick representative Z1 images to annotate");
  auto* train = app.add_subcommand("train", "Learn filters from markers and train the decision layers");
  auto* extract = app.add_subcommand("extract", "Write features of every image to features.bin");
  auto* evaluate = app.add_subcommand("evaluate", "Classify Z2 and write the accuracy report");
  auto* serve = app.add_subcommand("serve", "Serve the annotation HTTP API");
  for (auto* cmd : {split, select, extract, evaluate}) add_common(cmd, common, false);
  add_common(train, common, true);
  add_common(serve, common, true);
  train->add_flag("--allow-missing-markers", allow_missing, "Skip selected images that have no marker file");
  serve->add_option("--host", host, "Address to bind");
  serve->add_option("--port", port, "Port to bind (0 picks a free one)")->check(CLI::Range(0, 65535));

  CLI11_PARSE(app, argc, argv);

  if (common.verbose) flim_set_log_callback(log_to_stderr, nullptr);

  flim_experiment* exp = nullptr;
  flim_status status = flim_experiment_open(common.config.c_str(), &exp);
  if (status != FLIM_OK) return report_failure(status);
  if (common.seed) status = flim_experiment_set_seed(exp, *common.seed);
  if (status == FLIM_OK && !common.out.empty()) status = flim_experiment_set_output_dir(exp, common.out.c_str());
  if (status == FLIM_OK && !common.markers.empty()) status = flim_experiment_set_markers_dir(exp, common.markers.c_str());

  if (status == FLIM_OK) {
    if (split->parsed()) {
      std::size_t z1 = 0, z2 = 0;
      status = flim_experiment_split(exp, &z1, &z2);
      if (status == FLIM_OK) std::cout << "Z1: " << z1 << " images, Z2: " << z2 << " images\n";
    } else if (select->parsed()) {
      const char* manifest = nullptr;
      status = flim_experiment_select(exp, &manifest);
      if (status == FLIM_OK) std::cout << manifest;
    } else if (train->parsed()) {
      status = flim_experiment_train(exp, allow_missing ? 0 : 1);
      if (status == FLIM_OK) std::cout << "model written\n";
    } else if (extract->parsed()) {
      status = flim_experiment_extract(exp);
      if (status == FLIM_OK) std::cout << "features written\n";
    } else if (evaluate->parsed()) {
      const char* table = nullptr;
      status = flim_experiment_evaluate(exp, &table);
      if (status == FLIM_OK) std::cout << table;
    } else if (serve->parsed()) {
      status = flim_experiment_serve(
          exp, host.c_str(), port,
          [](int bound, void* h) {
            std::cout << "listening on http://" << *static_cast<std::string*>(h) << ':' << bound << std::endl;
          },
          &host);
    }
  }
  flim_experiment_free(exp);
  return status == FLIM_OK ? 0 : report_failure(status);
}
