#include "spco/log.hpp"

#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <cstdlib>
#include <string>

namespace spco {

void init_logging() {
  auto logger = spdlog::get("spco");
  if (!logger) logger = spdlog::stderr_color_mt("spco");
  spdlog::set_default_logger(logger);
  auto level = spdlog::level::warn;
  if (const char* env = std::getenv("SPCO_LOG"); env && *env) {
    level = spdlog::level::from_str(env);
    if (level == spdlog::level::off && std::string(env) != "off") level = spdlog::level::warn;
  }
  spdlog::set_level(level);
}

}  // namespace spco
