#include "cervifuse/common/log.hpp"

#include <spdlog/sinks/stdout_color_sinks.h>

namespace cervifuse {

spdlog::logger& log() {
  static std::shared_ptr<spdlog::logger> logger = [] {
    auto l = spdlog::stderr_color_mt("cervifuse");
    l->set_pattern("[%l] %v");
    return l;
  }();
  return *logger;
}

}  // namespace cervifuse
