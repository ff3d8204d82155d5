#pragma once

#include <exception>
#include <stdexcept>
#include <string>

namespace otmd {

/// Invalid or inconsistent input: malformed files, dangling ids, violated
/// scenario invariants, missing routing data.
class ScenarioError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Failure of the worker-to-worker protocol: decoder mismatch, desynchronized
/// steps, truncated frames, unreachable peers, timeouts.
class ProtocolError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Broken internal invariant (conservation, ownership). Always a bug.
class InternalError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

enum ExitCode : int {
    kExitOk = 0,
    kExitUsage = 1,
    kExitScenario = 2,
    kExitProtocol = 3,
    kExitInternal = 4,
};

inline int exit_code_for(const std::exception& e) {
    if (dynamic_cast<const ScenarioError*>(&e)) return kExitScenario;
    if (dynamic_cast<const ProtocolError*>(&e)) return kExitProtocol;
    return kExitInternal;
}

}  // namespace otmd
