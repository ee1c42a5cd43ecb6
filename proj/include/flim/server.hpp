#pragma once

#include <memory>
#include <string>

#include "flim/pipeline.hpp"

namespace flim {

// HTTP companion for annotating the selected images and inspecting a model.
// Handlers run concurrently; at most one training job runs at a time.
class Server {
 public:
  explicit Server(ExperimentConfig config);
  ~Server();
  Server(const Server&) = delete;
  Server& operator=(const Server&) = delete;

  // Port 0 picks a free port. Returns the bound port; a busy port throws Io.
  int bind(const std::string& host, int port);
  // Blocks until stop() is called.
  void run();
  void stop();

  // Waits for a running training job, if any.
  void wait_for_training();

 private:
  struct State;
  std::unique_ptr<State> state_;
};

}  // namespace flim
