#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "padlock/params.hpp"
#include "padlock/timebase.hpp"

namespace padlock {

// One measurement-mode run of a protected interval under stress.
struct ProfileSample {
    std::uint64_t function_id = 0;
    Cycles duration = 0;
    std::uint64_t preemptions = 0;  // interrupts + involuntary switches
    std::uint64_t voluntary = 0;
};

struct ProfileReport {
    std::uint64_t function_id = 0;
    Cycles t_max = 0;
    double kappa = 0.0;
    std::uint64_t samples_total = 0;
    std::uint64_t samples_excluded = 0;
    Cycles t_penalty = 0;
    std::uint64_t preempted_sample_count = 0;
    bool t_penalty_from_default = false;
    bool stressed = false;
};

// Fallback worst-case preemption cost: roughly 300us at the reference
// 2.3 GHz clock. Used when no profiling run observed a preemption.
inline constexpr Cycles kDefaultTPenalty = 690'000;

// Worst-case execution time at exclusion fraction kappa: the smallest clean
// (unpreempted) sample duration v with at most floor(kappa * n_clean)
// strictly greater clean samples. kappa in [0,1). Throws when no clean
// samples exist — the profiling run was too short or too loaded.
Cycles estimate_tmax(std::span<const ProfileSample> samples, double kappa);

struct TPenaltyEstimate {
    Cycles cycles = 0;
    bool from_default = false;
};

// Worst-case cost of a single preemption: max over preempted samples of
// ceil((duration - t_max) / preemptions), clamped below at zero. Falls back
// to kDefaultTPenalty (flagged) when no sample was preempted.
TPenaltyEstimate estimate_tpenalty(std::span<const ProfileSample> samples, Cycles t_max);

// External stress commands launched for the duration of a profiling run
// (CPU hogs, memory thrashers, interrupt flooders — operator supplied).
struct StressConfig {
    std::vector<std::string> commands;
};

struct ProfileRunResult {
    ProfileReport report;
    std::vector<ProfileSample> samples;
};

// Runs `n_runs` measurement-mode intervals of `body` (padding disabled),
// recording duration and preemption counts per run, with the stress
// commands running alongside. A stress launch failure does not abort the
// run; the report is flagged unstressed.
ProfileRunResult profile_run(std::uint64_t function_id,
                             const std::function<void(std::uint64_t)>& body,
                             const std::function<std::uint64_t(std::size_t)>& input_generator,
                             TimeSource& ts, const StressConfig& stress, std::size_t n_runs,
                             double kappa);

// Converts a report into a stored params record (wait-loop period and
// delay offset from calibration, t_overtime = 2 * t_max) and appends it to
// the params file. Returns the new generation.
std::uint64_t persist_report(const std::filesystem::path& params_path,
                             const ProfileReport& report, Cycles u, Cycles c,
                             std::uint32_t m = 5);

// Sample log CSV: `function_id,duration_cycles,preemptions,voluntary`.
void write_samples_csv(std::ostream& out, std::span<const ProfileSample> samples);
std::vector<ProfileSample> read_samples_csv(std::istream& in);

}  // namespace padlock
