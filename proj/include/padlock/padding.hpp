#pragma once

#include <array>
#include <cstdint>
#include <thread>
#include <vector>

#include "padlock/csprng.hpp"
#include "padlock/params.hpp"
#include "padlock/timebase.hpp"

namespace padlock {

// How the padding loop obtains preemption counts.
//
//   exact      every adjustment round takes an exact counter snapshot. The
//              right choice whenever counters are cheap (virtual backend,
//              mapped counter page); forced in that case.
//   gap_probe  for hardware whose only counter interface is a system call:
//              the spin loop watches for clock gaps, and the expensive exact
//              read happens only when a gap above the threshold (or an
//              overshoot) indicates that something preempted us. A quiet
//              interval completes without entering the kernel.
enum class PreemptRead { exact, gap_probe };

struct PaddingPolicy {
    PreemptRead read = PreemptRead::exact;
    Cycles gap_threshold = 1500;
    // Record the sequence of padding targets in the outcome (keeps an
    // allocation out of the hot path unless asked for).
    bool record_targets = false;
};

// Live state of one protected interval. The random inputs are drawn before
// t_begin is stamped, so generator variability cannot widen the padding;
// the params snapshot stays fixed for the interval's life. The byte buffer
// is inline: a heap allocation inside the measured window would add
// input-independent jitter to every protected call.
struct IntervalState {
    CycleStamp t_begin{};
    PreemptionCounters i_begin{};
    std::array<std::uint8_t, 255> random_inputs{};  // first params.m entries are drawn
    PaddingParams params{};
    bool counters_exact = true;
    // An interval is bound to one thread; end_protected asserts this in
    // debug builds.
    std::thread::id owner_thread{};
};

struct PaddingOutcome {
    Cycles padded_duration = 0;       // last landing minus t_begin
    CycleStamp final_target{};        // last padding target
    std::uint64_t preemptions_observed = 0;
    Cycles ext_preempt_cycles = 0;    // preemptions_observed * t_penalty
    bool overtime_applied = false;
    Cycles overtime_cycles = 0;
    std::uint32_t adjustment_rounds = 0;
    // A voluntary context switch means the body blocked or yielded; the
    // interval's timing guarantees are void and the outcome is flagged.
    bool valid = true;
    std::uint64_t voluntary_switches = 0;
    // Filled only when PaddingPolicy::record_targets is set.
    std::vector<Cycles> target_history;
};

// Measured behaviour of the delay primitive and the spin-wait loop.
struct DelayCalibration {
    Cycles u = 1;                     // stable wait-loop period
    Cycles c = 0;                     // delay-op offset constant
    std::uint32_t warmup_iterations = 0;
};

struct CalibrationConfig {
    Cycles c = 46;
    std::uint32_t warmup_iterations = 64;
    std::uint32_t sample_iterations = 4096;
    double modal_threshold = 0.90;    // below this the period is unstable
    bool verify_slope = true;
};

// Opens a protected interval: draws the m random bytes, snapshots the
// preemption baseline, then stamps t_begin — in that order. Fail-closed:
// structurally invalid params refuse to run the body.
IntervalState begin_protected(const PaddingParams& params, TimeSource& ts, RandomSource& rng,
                              PaddingPolicy policy = {});

// One randomized waiting operation: busy-executes for x + c cycles and
// returns the elapsed time as seen by `ts`.
Cycles delay_op(std::uint8_t x, const DelayCalibration& cal, TimeSource& ts);

// The timing randomization step: one delay op per pre-drawn byte, adding
// sum(x_i) + m*c cycles in total.
void randomize_phase(const IntervalState& state, TimeSource& ts);

// Closes the interval: randomization step, then the preemption-adaptive
// padding loop. Pads to t_begin + t_max, re-targeting by t_penalty per
// observed preemption, with a one-shot t_overtime extension when the body
// overran its budget.
PaddingOutcome end_protected(const IntervalState& state, TimeSource& ts,
                             PaddingPolicy policy = {});

// Measures the spin loop's stable period (modal difference over a sample of
// iterations after a warmup) and verifies that the delay op's cost grows
// monotonically with its input. Throws CalibrationError when the modal
// period is not dominant — padding must stay disabled on such a machine.
DelayCalibration calibrate(TimeSource& ts, const CalibrationConfig& cfg = {});

}  // namespace padlock
