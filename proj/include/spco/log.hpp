#pragma once

namespace spco {

// Sets the spdlog level from SPCO_LOG (trace, debug, info, warn, error,
// critical, off). Logs go to stderr; the default level is warn.
void init_logging();

}  // namespace spco
