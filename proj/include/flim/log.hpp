#pragma once

#include <functional>
#include <string>
#include <vector>

namespace flim {

enum class LogLevel { Info, Warning };

using LogSink = std::function<void(LogLevel, const std::string&)>;

// Process-wide sink. The default (also restored by an empty sink) writes
// warnings to stderr and drops info.
void set_log_sink(LogSink sink);

void log_info(const std::string& message);
void log_warning(const std::string& message);

// Collects warnings raised on the current thread for its lifetime, in addition
// to forwarding them to the process sink. Captures nest.
class WarningCapture {
 public:
  WarningCapture();
  ~WarningCapture();
  WarningCapture(const WarningCapture&) = delete;
  WarningCapture& operator=(const WarningCapture&) = delete;

  const std::vector<std::string>& warnings() const { return warnings_; }

 private:
  friend void log_warning(const std::string&);
  std::vector<std::string> warnings_;
  WarningCapture* previous_;
};

}  // namespace flim
