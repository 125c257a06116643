#pragma once

#include <spdlog/spdlog.h>

#include <memory>

namespace fusionforge {

// Shared stderr logger; stdout is reserved for command output.
std::shared_ptr<spdlog::logger> logger();

}  // namespace fusionforge
