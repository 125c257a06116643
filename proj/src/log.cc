#include "fusionforge/log.hpp"

#include <spdlog/sinks/stdout_sinks.h>

namespace fusionforge {

std::shared_ptr<spdlog::logger> logger() {
  static std::shared_ptr<spdlog::logger> instance = [] {
    auto existing = spdlog::get("fusionforge");
    if (existing) return existing;
    auto created = spdlog::stderr_logger_mt("fusionforge");
    created->set_pattern("[%l] %v");
    return created;
  }();
  return instance;
}

}  // namespace fusionforge
