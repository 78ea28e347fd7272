#include "padlock/os_sim.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <ostream>
#include <sstream>

#include "padlock/csprng.hpp"

namespace padlock::sim {

FlushCosts FlushCosts::scaled(double l1i_ns, double l1d_l2_ns, double btb_ns, double tlb_ns,
                              double clock_hz) {
    if (clock_hz <= 0) throw SimError("clock rate must be > 0");
    auto to_cycles = [&](double ns) {
        return static_cast<Cycles>(std::llround(ns * clock_hz / 1e9));
    };
    FlushCosts c;
    c.l1i = to_cycles(l1i_ns);
    c.l1d_l2 = to_cycles(l1d_l2_ns);
    c.btb = to_cycles(btb_ns);
    c.tlb = to_cycles(tlb_ns);
    return c;
}

FlushCosts FlushCosts::from_ns_config(std::istream& in, double clock_hz) {
    double l1i = 0, l1d_l2 = 23000, btb = 7000, tlb = 0;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line[0] == '#') continue;
        auto eq = line.find('=');
        if (eq == std::string::npos)
            throw SimError("cost table line " + std::to_string(line_no) + ": expected key=value");
        std::string key = line.substr(0, eq);
        double value = 0;
        try {
            value = std::stod(line.substr(eq + 1));
        } catch (...) {
            throw SimError("cost table line " + std::to_string(line_no) + ": bad value");
        }
        if (key == "l1i_ns") l1i = value;
        else if (key == "l1d_l2_ns") l1d_l2 = value;
        else if (key == "btb_ns") btb = value;
        else if (key == "tlb_ns") tlb = value;
        else throw SimError("cost table line " + std::to_string(line_no) + ": unknown key " + key);
    }
    return scaled(l1i, l1d_l2, btb, tlb, clock_hz);
}

SimWorld::SimWorld(WorldConfig cfg) : cfg_(cfg) {
    if (cfg_.cores == 0) throw SimError("world needs at least one core");
    if (cfg_.secure_colors > cfg_.total_colors)
        throw SimError("secure colors cannot exceed total colors");
    cores_.resize(cfg_.cores);
    for (std::uint32_t i = 0; i < cfg_.cores; ++i) cores_[i].id = i;
    for (ColorId c = 0; c < cfg_.secure_colors; ++c) unassigned_secure_.insert(c);
}

SimCore& SimWorld::core_(std::uint32_t id) {
    if (id >= cores_.size()) throw SimError("no such core: " + std::to_string(id));
    return cores_[id];
}

const SimCore& SimWorld::core(std::uint32_t id) const {
    return const_cast<SimWorld*>(this)->core_(id);
}

std::optional<FlushEvent> SimWorld::schedule_impl_(SimCore& core, const SimProcess& proc) {
    std::optional<FlushEvent> flush;
    if (core.taint && *core.taint != proc.user) {
        FlushEvent ev;
        ev.at = clock_;
        ev.core = core.id;
        ev.triggered_by = proc.pid;
        ev.previous_taint = *core.taint;
        ev.incoming_user = proc.user;
        ev.costs = cfg_.flush_costs;
        core.taint.reset();
        clock_ += ev.costs.total();
        flush_ledger_.push_back(ev);
        flush = ev;
    }
    core.current = proc.pid;
    core.current_user = proc.user;
    ++core.schedule_count;
    return flush;
}

std::optional<FlushEvent> SimWorld::schedule(std::uint32_t core_id, const SimProcess& proc) {
    SimCore& core = core_(core_id);
    if (core.reserved_by && *core.reserved_by != proc.pid)
        throw SimError("core " + std::to_string(core_id) + " is reserved by process " +
                       std::to_string(*core.reserved_by));
    return schedule_impl_(core, proc);
}

void SimWorld::reserve_core(std::uint32_t core_id, const SimProcess& proc) {
    if (!cfg_.hyperthreading_disabled)
        throw SimError("cannot reserve a core while hyperthreading is enabled");
    if (!cfg_.paging_locked)
        throw SimError("cannot reserve a core without locked pages (mlockall)");
    if (!cfg_.freq_scaling_disabled)
        throw SimError("cannot reserve a core while frequency scaling is active");

    SimCore& core = core_(core_id);
    if (core.reserved_by)
        throw SimError("core " + std::to_string(core_id) + " already reserved by process " +
                       std::to_string(*core.reserved_by));
    // Reserving takes the core over (FIFO priority): the reserver becomes
    // current, flushing first under the usual taint rule.
    schedule_impl_(core, proc);
    core.reserved_by = proc.pid;
    core.sibling_offline = true;
}

void SimWorld::release_core(std::uint32_t core_id, const SimProcess& proc) {
    SimCore& core = core_(core_id);
    if (!core.reserved_by || *core.reserved_by != proc.pid)
        throw SimError("core " + std::to_string(core_id) + " is not reserved by process " +
                       std::to_string(proc.pid));
    core.reserved_by.reset();
    core.sibling_offline = false;
}

void SimWorld::taint_core(std::uint32_t core_id, UserId user) {
    core_(core_id).taint = user;
}

ColorId SimWorld::alloc_page(const SimProcess& proc, bool secure) {
    auto has_capacity = [&](ColorId c) {
        return cfg_.pages_per_color == 0 || pages_allocated_[c] < cfg_.pages_per_color;
    };

    if (!secure) {
        // Non-secure allocations never draw from the reserved colors.
        std::uint32_t span = cfg_.total_colors - cfg_.secure_colors;
        if (span == 0) throw SimError("no non-secure colors configured");
        for (std::uint32_t tries = 0; tries < span; ++tries) {
            ColorId c = cfg_.secure_colors + (next_nonsecure_ + tries) % span;
            if (has_capacity(c)) {
                next_nonsecure_ = (next_nonsecure_ + tries + 1) % span;
                ++pages_allocated_[c];
                return c;
            }
        }
        throw SimError("non-secure colors exhausted: no free pages");
    }

    std::set<ColorId>& mine = user_colors_[proc.user];
    for (ColorId c : mine)
        if (has_capacity(c)) {
            ++pages_allocated_[c];
            return c;
        }
    // First use (or all owned colors full): reserve a fresh secure color.
    if (unassigned_secure_.empty())
        throw SimError("secure page colors exhausted: at most " +
                       std::to_string(cfg_.secure_colors) +
                       " users can concurrently run protected functions");
    ColorId c = *unassigned_secure_.begin();
    unassigned_secure_.erase(unassigned_secure_.begin());
    mine.insert(c);
    ++pages_allocated_[c];
    return c;
}

const std::set<ColorId>& SimWorld::user_colors(UserId user) const {
    static const std::set<ColorId> empty;
    auto it = user_colors_.find(user);
    return it == user_colors_.end() ? empty : it->second;
}

std::uint64_t SimWorld::read_perf_counters(std::uint32_t core_id, const SimProcess& proc) const {
    const SimCore& core = this->core(core_id);
    if (!proc.privileged) {
        if (core.current_user && *core.current_user != proc.user)
            throw SimError("per-core counters of another user's process are not readable");
        if (core.taint && *core.taint != proc.user)
            throw SimError("per-core counters tainted by another user are not readable");
    }
    return core.schedule_count;
}

// ---------------------------------------------------------------------------
// Workload composition

SimTrace run_protected_sim(SimWorld& world, const std::vector<WorkItem>& workload,
                           const PaddingParams& params, std::uint64_t rng_seed) {
    SimTrace trace;
    auto note_at = [&](Cycles at, std::string event, const WorkItem& item, std::string detail,
                       Cycles cost) {
        trace.rows.push_back(TraceRow{at, std::move(event), item.core, item.proc.pid,
                                      item.proc.user, std::move(detail), cost});
    };
    auto note = [&](std::string event, const WorkItem& item, std::string detail, Cycles cost) {
        note_at(world.clock(), std::move(event), item, std::move(detail), cost);
    };

    std::uint64_t interval_index = 0;
    for (const WorkItem& item : workload) {
        switch (item.op) {
            case WorkItem::Op::schedule: {
                auto flush = world.schedule(item.core, item.proc);
                if (flush) {
                    ++trace.flush_count;
                    note_at(flush->at, "flush", item,
                            "prev_taint=" + std::to_string(flush->previous_taint),
                            flush->costs.total());
                }
                note("schedule", item, "", 0);
                break;
            }
            case WorkItem::Op::reserve:
                world.reserve_core(item.core, item.proc);
                note("reserve", item, "", 0);
                break;
            case WorkItem::Op::release:
                world.release_core(item.core, item.proc);
                note("release", item, "", 0);
                break;
            case WorkItem::Op::alloc: {
                ColorId c = world.alloc_page(item.proc, item.secure);
                note("alloc", item, std::string(item.secure ? "secure" : "plain") +
                                        " color=" + std::to_string(c), 0);
                break;
            }
            case WorkItem::Op::run: {
                auto flush = world.schedule(item.core, item.proc);
                if (flush) {
                    ++trace.flush_count;
                    note_at(flush->at, "flush", item,
                            "prev_taint=" + std::to_string(flush->previous_taint),
                            flush->costs.total());
                }
                note("schedule", item, "", 0);
                world.reserve_core(item.core, item.proc);
                note("reserve", item, "", 0);

                // The interval runs on a private virtual clock positioned at
                // world time, with the item's preemption script applied
                // relative to interval start.
                std::vector<VirtualEvent> script = item.preempt_script;
                for (VirtualEvent& ev : script) ev.at_cycle += world.clock();
                VirtualTimeSource ts({}, std::move(script));
                ts.set_clock(CycleStamp{world.clock()});

                std::array<std::uint8_t, ChaCha8Rng::kKeyBytes> key{};
                std::array<std::uint8_t, ChaCha8Rng::kNonceBytes> nonce{};
                std::uint64_t s = rng_seed ^ (0x9e3779b97f4a7c15ull * ++interval_index);
                for (std::size_t i = 0; i < sizeof(s); ++i)
                    key[i] = static_cast<std::uint8_t>(s >> (8 * i));
                ChaCha8Rng rng(key, nonce);

                IntervalState st = begin_protected(params, ts, rng);
                ts.advance(item.body_cycles);
                PaddingOutcome outcome = end_protected(st, ts);
                trace.outcomes.push_back(outcome);

                world.advance_clock(ts.now().cycles - world.clock());
                note("pad", item,
                     "padded=" + std::to_string(outcome.padded_duration) +
                         " preempts=" + std::to_string(outcome.preemptions_observed) +
                         " overtime=" + std::to_string(outcome.overtime_applied ? 1 : 0),
                     outcome.padded_duration);

                world.taint_core(item.core, item.proc.user);
                note("taint", item, "user=" + std::to_string(item.proc.user), 0);
                world.release_core(item.core, item.proc);
                note("release", item, "", 0);
                break;
            }
        }
    }
    return trace;
}

std::vector<WorkItem> parse_workload_csv(std::istream& in) {
    std::vector<WorkItem> items;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line[0] == '#') continue;
        if (line_no == 1 && line.rfind("op,", 0) == 0) continue;

        std::stringstream ss(line);
        std::array<std::string, 7> fields;
        std::size_t count = 0;
        std::string tok;
        while (count < fields.size() && std::getline(ss, tok, ','))
            fields[count++] = tok;
        if (count < 4)
            throw SimError("workload csv line " + std::to_string(line_no) +
                           ": expected op,pid,user,core[,value,secure,script]");

        auto parse_u = [&](const std::string& s, const char* what) -> std::uint64_t {
            std::uint64_t v = 0;
            auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
            if (ec != std::errc{} || p != s.data() + s.size())
                throw SimError("workload csv line " + std::to_string(line_no) + ": bad " +
                               std::string(what) + " '" + s + "'");
            return v;
        };

        WorkItem item;
        const std::string& op = fields[0];
        if (op == "run") item.op = WorkItem::Op::run;
        else if (op == "schedule") item.op = WorkItem::Op::schedule;
        else if (op == "reserve") item.op = WorkItem::Op::reserve;
        else if (op == "release") item.op = WorkItem::Op::release;
        else if (op == "alloc") item.op = WorkItem::Op::alloc;
        else throw SimError("workload csv line " + std::to_string(line_no) + ": unknown op " + op);

        item.proc.pid = static_cast<ProcessId>(parse_u(fields[1], "pid"));
        item.proc.user = static_cast<UserId>(parse_u(fields[2], "user"));
        item.core = static_cast<std::uint32_t>(parse_u(fields[3], "core"));
        if (count > 4 && !fields[4].empty()) item.body_cycles = parse_u(fields[4], "value");
        if (count > 5 && !fields[5].empty()) item.secure = parse_u(fields[5], "secure") != 0;
        if (count > 6 && !fields[6].empty())
            item.preempt_script = VirtualTimeSource::load_script_csv(fields[6]);
        items.push_back(std::move(item));
    }
    return items;
}

void write_trace_csv(std::ostream& out, const SimTrace& trace) {
    out << "at,event,core,pid,user,detail,cost\n";
    for (const TraceRow& r : trace.rows) {
        out << r.at << ',' << r.event << ',' << r.core << ',' << r.pid << ',' << r.user << ','
            << r.detail << ',' << r.cost << '\n';
    }
}

}  // namespace padlock::sim
