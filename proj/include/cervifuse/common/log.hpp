#pragma once

#include <spdlog/spdlog.h>

namespace cervifuse {

/// Shared stderr logger ("cervifuse").
spdlog::logger& log();

}  // namespace cervifuse
