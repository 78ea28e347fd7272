#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "padlock/padding.hpp"
#include "padlock/timebase.hpp"

namespace padlock::sim {

using UserId = std::uint32_t;
using ProcessId = std::uint32_t;
using ColorId = std::uint32_t;

struct SimProcess {
    ProcessId pid = 0;
    UserId user = 0;
    // Capability to read other users' per-core performance counters
    // (normally root only).
    bool privileged = false;
};

// Per-resource flush costs in cycles. The defaults carry the measured
// costs at a 1 GHz reference clock (1 cycle per ns): L1D+L2 23000,
// BTB 7000; no separate figures exist for L1I and TLB, so they default
// to zero-cost placeholders.
struct FlushCosts {
    Cycles l1i = 0;
    Cycles l1d_l2 = 23'000;
    Cycles btb = 7'000;
    Cycles tlb = 0;

    Cycles total() const { return l1i + l1d_l2 + btb + tlb; }

    // Nanosecond cost table scaled to a clock rate. `text config` format:
    // `l1i_ns=.. l1d_l2_ns=.. btb_ns=.. tlb_ns=..`, one key=value per line.
    static FlushCosts from_ns_config(std::istream& in, double clock_hz);
    static FlushCosts scaled(double l1i_ns, double l1d_l2_ns, double btb_ns, double tlb_ns,
                             double clock_hz);
};

struct FlushEvent {
    Cycles at = 0;
    std::uint32_t core = 0;
    ProcessId triggered_by = 0;
    UserId previous_taint = 0;
    UserId incoming_user = 0;
    FlushCosts costs;
};

struct SimCore {
    std::uint32_t id = 0;
    std::optional<UserId> taint;          // set only by protected-interval exit
    std::optional<ProcessId> reserved_by;
    std::optional<ProcessId> current;
    std::optional<UserId> current_user;
    bool sibling_offline = false;
    std::uint64_t schedule_count = 0;
};

struct WorldConfig {
    std::uint32_t cores = 2;
    std::uint32_t total_colors = 16;
    std::uint32_t secure_colors = 4;  // reserved colors C
    std::uint64_t pages_per_color = 0;  // 0 = unbounded
    FlushCosts flush_costs{};
    // Deployment preconditions, modeled as boolean gates checked when a
    // core is reserved for a protected interval.
    bool hyperthreading_disabled = true;
    bool paging_locked = true;
    bool freq_scaling_disabled = true;
};

// Deterministic, single-threaded model of the OS-level defense: core
// reservation, taint marking, lazy per-core cache cleansing, page-color
// allocation. All concurrency is modeled logical time.
class SimWorld {
public:
    explicit SimWorld(WorldConfig cfg);

    // Makes `proc` current on `core`. If the core is tainted by a different
    // user, all per-core caches are flushed first (cost from the table) and
    // the taint cleared; scheduling onto a core reserved by another process
    // is rejected.
    std::optional<FlushEvent> schedule(std::uint32_t core, const SimProcess& proc);

    // Exclusive reservation for a protected interval: the reserver becomes
    // the core's current process (flushing first under the taint rule) and
    // the sibling hyperthread is held offline. Rejected when the world's
    // deployment preconditions are not met or the core is already reserved.
    void reserve_core(std::uint32_t core, const SimProcess& proc);
    void release_core(std::uint32_t core, const SimProcess& proc);

    // Marks the core tainted by `user` (protected-interval exit).
    void taint_core(std::uint32_t core, UserId user);

    // secure=false: any non-reserved color. secure=true: a color from the
    // user's reserved set, reserving a fresh secure color on first use.
    // Throws SimError when no secure color remains for a new user.
    ColorId alloc_page(const SimProcess& proc, bool secure);

    const std::set<ColorId>& user_colors(UserId user) const;

    // One-rule model of performance-counter access control: reading the
    // per-core counters of a core currently used (or tainted) by another
    // user requires the privileged capability.
    std::uint64_t read_perf_counters(std::uint32_t core, const SimProcess& proc) const;

    const SimCore& core(std::uint32_t id) const;
    const std::vector<FlushEvent>& flush_ledger() const { return flush_ledger_; }
    const WorldConfig& config() const { return cfg_; }

    Cycles clock() const { return clock_; }
    void advance_clock(Cycles delta) { clock_ += delta; }

private:
    SimCore& core_(std::uint32_t id);
    std::optional<FlushEvent> schedule_impl_(SimCore& core, const SimProcess& proc);

    WorldConfig cfg_;
    std::vector<SimCore> cores_;
    std::map<UserId, std::set<ColorId>> user_colors_;
    std::set<ColorId> unassigned_secure_;
    std::map<ColorId, std::uint64_t> pages_allocated_;
    std::vector<FlushEvent> flush_ledger_;
    Cycles clock_ = 0;
    std::uint32_t next_nonsecure_ = 0;
};

// ---------------------------------------------------------------------------
// Scripted workloads composing the scheduler model with padded intervals on
// the virtual timebase.

struct WorkItem {
    enum class Op { run, schedule, reserve, release, alloc };
    Op op = Op::schedule;
    SimProcess proc;
    std::uint32_t core = 0;
    Cycles body_cycles = 0;                    // run
    bool secure = false;                       // alloc
    std::vector<VirtualEvent> preempt_script;  // run; at_cycle relative to interval start
};

struct TraceRow {
    Cycles at = 0;
    std::string event;
    std::uint32_t core = 0;
    ProcessId pid = 0;
    UserId user = 0;
    std::string detail;
    Cycles cost = 0;
};

struct SimTrace {
    std::vector<TraceRow> rows;
    std::uint64_t flush_count = 0;
    std::vector<PaddingOutcome> outcomes;
};

// Runs the scripted workload: `run` items reserve a core, execute one padded
// interval on a virtual clock (preemption script applied), taint the core
// and release it. Deterministic for a fixed seed.
SimTrace run_protected_sim(SimWorld& world, const std::vector<WorkItem>& workload,
                           const PaddingParams& params, std::uint64_t rng_seed);

// Workload CSV: `op,pid,user,core,value,secure,script_csv_path` (trailing
// fields optional per op). Trace CSV: `at,event,core,pid,user,detail,cost`.
std::vector<WorkItem> parse_workload_csv(std::istream& in);
void write_trace_csv(std::ostream& out, const SimTrace& trace);

}  // namespace padlock::sim
