#pragma once

#include <cstdint>
#include <filesystem>
#include <string_view>
#include <unordered_map>

#include "padlock/error.hpp"
#include "padlock/timebase.hpp"

namespace padlock {

// Fewer rounds of randomized noise than this are measurably distinguishable.
inline constexpr std::uint32_t kMinSafeRounds = 2;

// Stable 64-bit id for a protected interval name (FNV-1a).
std::uint64_t function_id(std::string_view name);

// Per-function padding model. Persisted in the params file and
// hot-reloadable: running applications pick up updates at their next lookup.
struct PaddingParams {
    std::uint64_t function_id = 0;
    Cycles t_max = 0;        // profiled worst case with no preemptions
    Cycles t_penalty = 0;    // worst case charged per external preemption
    Cycles t_overtime = 0;   // one-shot extension when the body overruns t_max
    std::uint32_t m = 0;     // randomization rounds
    Cycles u = 1;            // stable wait-loop period (analysis metadata)
    Cycles c = 0;            // delay-op offset constant
    double kappa = 0.0;      // profiling exclusion fraction
    std::uint64_t generation = 0;

    // Structural validity required to run an interval at all. Experiment
    // configurations may set m below kMinSafeRounds (the leakage lab does,
    // deliberately); the persistent store never accepts them.
    void validate_structure() const;
    // Full store invariants, including m >= kMinSafeRounds.
    void validate_for_store() const;
};

// Read handle over a params file. Lookups re-check the file revision with a
// cheap stat and refresh the cached table when the file was replaced, so an
// external update is visible at the next lookup; snapshots already handed
// out are unaffected.
class ParamsHandle {
public:
    // Fail-closed: a missing or unparseable file throws ParamsError.
    static ParamsHandle load(const std::filesystem::path& path);

    // Immutable snapshot for one interval. Throws UnknownFunctionError for
    // ids with no record.
    PaddingParams lookup(std::uint64_t function_id);

    std::size_t size() const { return table_.size(); }
    const std::filesystem::path& path() const { return path_; }

private:
    struct Revision {
        std::uint64_t inode = 0;
        std::uint64_t size = 0;
        std::int64_t mtime_ns = 0;
        bool operator==(const Revision&) const = default;
    };

    ParamsHandle() = default;
    void refresh_if_changed_();

    std::filesystem::path path_;
    Revision revision_{};
    std::unordered_map<std::uint64_t, PaddingParams> table_;
};

// Inserts or replaces one record with an atomic write-temp-then-rename,
// serialized by the advisory lock file `<path>.lock`. The record's
// generation is bumped past the stored one. Returns the new generation.
// Throws LockBusyError (retry-able) when another writer holds the lock.
std::uint64_t update_params(const std::filesystem::path& path, PaddingParams record);

// Resolution order: PADLOCK_PARAMS environment variable, else
// "padlock_params.txt" in the working directory.
std::filesystem::path default_params_path();

}  // namespace padlock
