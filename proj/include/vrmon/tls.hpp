#pragma once

#include <cstdint>
#include <span>

#include "vrmon/packet.hpp"

namespace vrmon {

// Best-effort look at the first TLS record of a TCP payload. Parse
// failures degrade to NONE (or the record kind implied by the first
// byte); this must never throw on arbitrary input.
TlsMeta parse_tls_client_hello(std::span<const uint8_t> payload);

} // namespace vrmon
