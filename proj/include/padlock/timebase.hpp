#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "padlock/error.hpp"

namespace padlock {

using Cycles = std::uint64_t;

// A reading of the timestamp counter. Differences are meaningful only
// between stamps taken from the same backend instance.
struct CycleStamp {
    Cycles cycles = 0;
    auto operator<=>(const CycleStamp&) const = default;
};

inline Cycles operator-(CycleStamp a, CycleStamp b) { return a.cycles - b.cycles; }

// Snapshot of the per-thread preemption counters. Each field is monotone
// non-decreasing over a backend's lifetime.
struct PreemptionCounters {
    std::uint64_t interrupts = 0;
    std::uint64_t involuntary_switches = 0;
    std::uint64_t voluntary_switches = 0;

    // The count the padding policy charges T_penalty for. Voluntary switches
    // are tracked separately: they invalidate the interval instead.
    std::uint64_t preemption_total() const { return interrupts + involuntary_switches; }

    auto operator<=>(const PreemptionCounters&) const = default;
};

enum class PreemptKind { interrupt, involuntary, voluntary };

struct VirtualEvent {
    Cycles at_cycle = 0;
    PreemptKind kind = PreemptKind::interrupt;
    Cycles duration_cycles = 0;
};

// Uniform time + preemption-count source. One instance is bound to one
// thread of control; the stamps and counters it hands out are plain values.
class TimeSource {
public:
    virtual ~TimeSource() = default;

    // Current stamp (serialized read on hardware).
    virtual CycleStamp now() = 0;

    // One iteration of the spin-wait loop: re-reads the clock. On the
    // virtual backend this advances the clock by the configured wait-loop
    // iteration cost; on hardware the iteration cost is the read itself.
    virtual CycleStamp spin_read() = 0;

    // Busy-executes `units` iterations of the delay primitive. On the
    // virtual backend the clock advances by exactly `units` cycles.
    virtual void busy_delay(std::uint32_t units) = 0;

    // Exact counter snapshot. May be expensive on hardware without a mapped
    // counter page (falls back to the slow OS interface).
    virtual PreemptionCounters read_preemptions() = 0;

    // Last snapshot taken by read_preemptions(); never enters the kernel.
    virtual PreemptionCounters cached_preemptions() const = 0;

    // True when read_preemptions() is cheap enough for the padding hot path
    // (virtual backend, or a mapped hardware counter page).
    virtual bool counters_are_cheap() const = 0;
};

// Deterministic, scripted backend. Strictly single-threaded; replaying the
// same script yields bit-identical stamp and counter sequences.
class VirtualTimeSource final : public TimeSource {
public:
    struct Config {
        // Cost charged after every now() read (0 keeps oracle tests exact).
        Cycles read_cost = 0;
        // Per-iteration cost of the spin-wait loop, applied cyclically. A
        // single entry models a stable period u; longer patterns model
        // machines whose loop period wobbles.
        std::vector<Cycles> wait_pattern{1};
    };

    VirtualTimeSource() : VirtualTimeSource(Config{}) {}
    explicit VirtualTimeSource(Config cfg, std::vector<VirtualEvent> script = {});

    // `at_cycle,kind,duration_cycles` with kind in {interrupt, involuntary,
    // voluntary}. Lines starting with '#' are skipped.
    static std::vector<VirtualEvent> parse_script_csv(std::istream& in);
    static std::vector<VirtualEvent> load_script_csv(const std::filesystem::path& path);

    // Advances the clock, firing every scripted event in the window: the
    // clock additionally jumps by the event's duration and the matching
    // counter increments. Returns the events fired, in at_cycle order.
    std::vector<VirtualEvent> advance(Cycles delta);

    // Repositions the clock without firing events (test setup).
    void set_clock(CycleStamp t) { clock_ = t.cycles; }

    const std::vector<VirtualEvent>& script() const { return script_; }
    const std::vector<VirtualEvent>& fired_events() const { return fired_; }

    CycleStamp now() override;
    CycleStamp spin_read() override;
    void busy_delay(std::uint32_t units) override;
    PreemptionCounters read_preemptions() override;
    PreemptionCounters cached_preemptions() const override;
    bool counters_are_cheap() const override { return true; }

private:
    void check_advance_(Cycles delta) const;

    Config cfg_;
    std::vector<VirtualEvent> script_;
    std::vector<VirtualEvent> fired_;
    Cycles clock_ = 0;
    std::size_t next_event_ = 0;
    std::size_t wait_idx_ = 0;
};

// Hardware backend: x86 timestamp counter with serialized reads, plus
// preemption counters. The counter source is, in preference order:
//   1. a mapped counter page (three little-endian u64: interrupts,
//      involuntary, voluntary), path given explicitly or via
//      PADLOCK_COUNTER_PAGE — a single memory read, safe in the hot path;
//   2. getrusage(RUSAGE_THREAD), which cannot observe interrupts and costs
//      a system call — used with a one-time logged warning.
class HardwareTimeSource final : public TimeSource {
public:
    HardwareTimeSource();
    explicit HardwareTimeSource(const std::string& counter_page_path);
    ~HardwareTimeSource() override;

    HardwareTimeSource(const HardwareTimeSource&) = delete;
    HardwareTimeSource& operator=(const HardwareTimeSource&) = delete;

    CycleStamp now() override;
    CycleStamp spin_read() override { return now(); }
    void busy_delay(std::uint32_t units) override;
    PreemptionCounters read_preemptions() override;
    PreemptionCounters cached_preemptions() const override { return cached_; }
    bool counters_are_cheap() const override { return page_ != nullptr; }

    // Number of slow-interface reads performed (test hook: with a counter
    // page mapped this must stay at zero).
    std::uint64_t slow_read_count() const { return slow_reads_; }

private:
    void map_page_(const std::string& path);
    PreemptionCounters read_slow_();

    const volatile std::uint64_t* page_ = nullptr;
    PreemptionCounters cached_{};
    std::uint64_t slow_reads_ = 0;
#ifndef NDEBUG
    Cycles last_ = 0;
#endif
};

}  // namespace padlock
