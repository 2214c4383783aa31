#pragma once

#include <exception>

namespace fedcpc::app {

enum ExitCode : int { ok = 0, failure = 1, config_error = 2, protocol_error = 3, io_error = 4 };

// Maps the exception currently being handled onto an exit code.
int exit_code_for(const std::exception& e);

} // namespace fedcpc::app
