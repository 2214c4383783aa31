#include "fedcpc/app/exit_codes.hpp"

#include "fedcpc/core/error.hpp"

namespace fedcpc::app {

int exit_code_for(const std::exception& e) {
    if (dynamic_cast<const ConfigError*>(&e)) return config_error;
    // A malformed weights buffer is a persistence failure, not a protocol one.
    if (dynamic_cast<const DecodeError*>(&e)) return io_error;
    if (dynamic_cast<const ProtocolError*>(&e)) return protocol_error;
    if (dynamic_cast<const IoError*>(&e)) return io_error;
    return failure;
}

} // namespace fedcpc::app
