#pragma once

#include <stdexcept>

namespace spn {

// Error taxonomy shared across the library. Each type maps to one failure
// class surfaced by the public contracts, so tests can catch them precisely.
struct ShapeError : std::runtime_error { using std::runtime_error::runtime_error; };
struct InvalidValueError : std::runtime_error { using std::runtime_error::runtime_error; };
struct ConfigError : std::runtime_error { using std::runtime_error::runtime_error; };
struct ContractError : std::runtime_error { using std::runtime_error::runtime_error; };
struct RangeError : std::runtime_error { using std::runtime_error::runtime_error; };
struct ParseError : std::runtime_error { using std::runtime_error::runtime_error; };
struct LookupError : std::runtime_error { using std::runtime_error::runtime_error; };
struct VersionError : std::runtime_error { using std::runtime_error::runtime_error; };
struct IoError : std::runtime_error { using std::runtime_error::runtime_error; };

}  // namespace spn
