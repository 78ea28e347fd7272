#include "padlock/padding.hpp"

#include <algorithm>
#include <cassert>
#include <map>

namespace padlock {

IntervalState begin_protected(const PaddingParams& params, TimeSource& ts, RandomSource& rng,
                              PaddingPolicy policy) {
    params.validate_structure();

    IntervalState st;
    st.params = params;
    st.owner_thread = std::this_thread::get_id();
    if (params.m > 0) rng.fill(st.random_inputs.data(), params.m);

    const bool exact = policy.read == PreemptRead::exact || ts.counters_are_cheap();
    st.counters_exact = exact;
    st.i_begin = exact ? ts.read_preemptions() : ts.cached_preemptions();

    st.t_begin = ts.now();
    return st;
}

Cycles delay_op(std::uint8_t x, const DelayCalibration& cal, TimeSource& ts) {
    CycleStamp t0 = ts.now();
    ts.busy_delay(static_cast<std::uint32_t>(x) + static_cast<std::uint32_t>(cal.c));
    return ts.now() - t0;
}

void randomize_phase(const IntervalState& state, TimeSource& ts) {
    const std::uint32_t c = static_cast<std::uint32_t>(state.params.c);
    for (std::uint32_t i = 0; i < state.params.m; ++i)
        ts.busy_delay(static_cast<std::uint32_t>(state.random_inputs[i]) + c);
}

namespace {

struct SpinResult {
    Cycles landing = 0;
    Cycles max_gap = 0;
};

// Tightest possible re-check loop; no sleeping — scheduler noise would dwarf
// the loop period.
SpinResult spin_until(TimeSource& ts, Cycles target, Cycles start) {
    SpinResult r;
    Cycles t = start;
    while (t < target) {
        Cycles next = ts.spin_read().cycles;
        Cycles gap = next - t;
        if (gap > r.max_gap) r.max_gap = gap;
        t = next;
    }
    r.landing = t;
    return r;
}

}  // namespace

PaddingOutcome end_protected(const IntervalState& state, TimeSource& ts, PaddingPolicy policy) {
    const PaddingParams& p = state.params;
    assert(state.owner_thread == std::this_thread::get_id() &&
           "interval crossed threads");

    randomize_phase(state, ts);

    const Cycles t_begin = state.t_begin.cycles;
    Cycles t_target = t_begin + p.t_max;
    Cycles overtime = 0;

    const bool exact = policy.read == PreemptRead::exact || ts.counters_are_cheap();
    const std::uint64_t base_preempt = state.i_begin.preemption_total();
    const std::uint64_t base_voluntary = state.i_begin.voluntary_switches;

    std::uint64_t n = 0;
    std::uint64_t voluntary = 0;
    bool synced = false;  // a gap-probe interval that saw activity stays exact
    std::uint32_t rounds = 0;
    Cycles landing = t_begin;
    std::vector<Cycles> history;

    for (;;) {
        ++rounds;
        if (policy.record_targets) history.push_back(t_target);
        const Cycles before = ts.now().cycles;
        SpinResult spin = spin_until(ts, t_target, before);
        landing = spin.landing;

        const bool must_read = exact || synced || spin.max_gap > policy.gap_threshold ||
                               (rounds == 1 && before >= t_target);
        if (must_read) {
            PreemptionCounters now_c = ts.read_preemptions();
            n = now_c.preemption_total() - base_preempt;
            voluntary = now_c.voluntary_switches - base_voluntary;
            if (!exact && (n != 0 || voluntary != 0)) synced = true;
        }

        const Cycles t_ext_preempt = n * p.t_penalty;
        Cycles t_next = t_begin + p.t_max + t_ext_preempt + overtime;
        if (before >= t_next && overtime == 0) {
            overtime = p.t_overtime;
            t_next += overtime;
        }
        if (t_next == t_target) break;
        t_target = t_next;
    }

    PaddingOutcome out;
    out.padded_duration = landing - t_begin;
    out.final_target = CycleStamp{t_target};
    out.preemptions_observed = n;
    out.ext_preempt_cycles = n * p.t_penalty;
    out.overtime_applied = overtime != 0;
    out.overtime_cycles = overtime;
    out.adjustment_rounds = rounds;
    out.voluntary_switches = voluntary;
    out.valid = voluntary == 0;
    out.target_history = std::move(history);
    return out;
}

DelayCalibration calibrate(TimeSource& ts, const CalibrationConfig& cfg) {
    if (cfg.sample_iterations == 0) throw CalibrationError("sample_iterations must be > 0");

    for (std::uint32_t i = 0; i < cfg.warmup_iterations; ++i) ts.spin_read();

    std::map<Cycles, std::uint32_t> histogram;
    Cycles prev = ts.spin_read().cycles;
    for (std::uint32_t i = 0; i < cfg.sample_iterations; ++i) {
        Cycles t = ts.spin_read().cycles;
        ++histogram[t - prev];
        prev = t;
    }

    auto mode = std::max_element(histogram.begin(), histogram.end(),
                                 [](const auto& a, const auto& b) { return a.second < b.second; });
    double modal_fraction = static_cast<double>(mode->second) / cfg.sample_iterations;
    if (modal_fraction < cfg.modal_threshold)
        throw CalibrationError("wait loop has no stable period: modal difference " +
                               std::to_string(mode->first) + " covers only " +
                               std::to_string(modal_fraction * 100.0) +
                               "% of iterations; refusing to enable padding");

    DelayCalibration cal;
    cal.u = mode->first;
    cal.c = cfg.c;
    cal.warmup_iterations = cfg.warmup_iterations;

    if (cfg.verify_slope) {
        // The delay op must cost strictly more for larger inputs; medians
        // over repeated trials tolerate measurement noise.
        auto median_elapsed = [&](std::uint8_t x) {
            std::vector<Cycles> samples;
            samples.reserve(33);
            for (int i = 0; i < 33; ++i) samples.push_back(delay_op(x, cal, ts));
            std::nth_element(samples.begin(), samples.begin() + samples.size() / 2, samples.end());
            return samples[samples.size() / 2];
        };
        Cycles prev_med = median_elapsed(0);
        for (std::uint8_t x : {std::uint8_t{64}, std::uint8_t{128}, std::uint8_t{255}}) {
            Cycles med = median_elapsed(x);
            if (med <= prev_med)
                throw CalibrationError("delay op cost does not grow with its input");
            prev_med = med;
        }
    }
    return cal;
}

}  // namespace padlock
