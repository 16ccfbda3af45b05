#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace vrmon {

// User activity states: home space, main hub, separate user-created
// event, separate provider-created event, asset trading, content
// creation.
enum class StateLabel : uint8_t { HS, MH, SUE, SPE, AT, CC, UNKNOWN };

constexpr size_t kNumStates = 6; // UNKNOWN excluded from label spaces

const char* state_name(StateLabel s);
std::optional<StateLabel> state_from_name(const std::string& name);

std::vector<StateLabel> all_states();

} // namespace vrmon
