#include "padlock/timebase.hpp"

#include <algorithm>
#include <cassert>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <fcntl.h>
#include <sys/mman.h>
#include <sys/resource.h>
#include <sys/stat.h>
#include <unistd.h>

#if defined(__x86_64__) || defined(__i386__)
#include <x86intrin.h>
#else
#include <chrono>
#endif

namespace padlock {

// ---------------------------------------------------------------------------
// VirtualTimeSource

VirtualTimeSource::VirtualTimeSource(Config cfg, std::vector<VirtualEvent> script)
    : cfg_(std::move(cfg)), script_(std::move(script)) {
    if (cfg_.wait_pattern.empty())
        throw Error("virtual timebase: wait pattern must not be empty");
    for (Cycles c : cfg_.wait_pattern)
        if (c == 0) throw Error("virtual timebase: wait-loop iteration cost must be > 0");
    if (!std::is_sorted(script_.begin(), script_.end(),
                        [](const VirtualEvent& a, const VirtualEvent& b) { return a.at_cycle < b.at_cycle; }))
        throw Error("virtual timebase: script events must be sorted by at_cycle");
}

void VirtualTimeSource::check_advance_(Cycles delta) const {
    Cycles budget = UINT64_MAX - clock_;
    if (delta > budget) throw Error("virtual timebase: advance would overflow the 64-bit clock");
    budget -= delta;
    for (std::size_t i = next_event_; i < script_.size() && script_[i].at_cycle <= clock_ + delta; ++i) {
        if (script_[i].duration_cycles > budget)
            throw Error("virtual timebase: advance would overflow the 64-bit clock");
        budget -= script_[i].duration_cycles;
    }
}

std::vector<VirtualEvent> VirtualTimeSource::advance(Cycles delta) {
    check_advance_(delta);
    const Cycles window_end = clock_ + delta;
    std::vector<VirtualEvent> fired;
    while (next_event_ < script_.size() && script_[next_event_].at_cycle <= window_end) {
        fired.push_back(script_[next_event_]);
        ++next_event_;
    }
    clock_ = window_end;
    for (const VirtualEvent& ev : fired) {
        clock_ += ev.duration_cycles;
        fired_.push_back(ev);
    }
    return fired;
}

CycleStamp VirtualTimeSource::now() {
    CycleStamp t{clock_};
    if (cfg_.read_cost) advance(cfg_.read_cost);
    return t;
}

CycleStamp VirtualTimeSource::spin_read() {
    advance(cfg_.wait_pattern[wait_idx_]);
    wait_idx_ = (wait_idx_ + 1) % cfg_.wait_pattern.size();
    return CycleStamp{clock_};
}

void VirtualTimeSource::busy_delay(std::uint32_t units) { advance(units); }

PreemptionCounters VirtualTimeSource::read_preemptions() {
    // Counts scripted events whose at_cycle has been reached, independent of
    // whether their duration has been charged yet.
    PreemptionCounters c;
    for (const VirtualEvent& ev : script_) {
        if (ev.at_cycle > clock_) break;
        switch (ev.kind) {
            case PreemptKind::interrupt: ++c.interrupts; break;
            case PreemptKind::involuntary: ++c.involuntary_switches; break;
            case PreemptKind::voluntary: ++c.voluntary_switches; break;
        }
    }
    return c;
}

PreemptionCounters VirtualTimeSource::cached_preemptions() const {
    return const_cast<VirtualTimeSource*>(this)->read_preemptions();
}

namespace {

PreemptKind parse_kind(const std::string& s, std::size_t line_no) {
    if (s == "interrupt") return PreemptKind::interrupt;
    if (s == "involuntary") return PreemptKind::involuntary;
    if (s == "voluntary") return PreemptKind::voluntary;
    throw Error("script csv line " + std::to_string(line_no) + ": unknown event kind '" + s + "'");
}

std::uint64_t parse_u64(const std::string& s, std::size_t line_no, const char* what) {
    std::uint64_t v = 0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || p != s.data() + s.size())
        throw Error("script csv line " + std::to_string(line_no) + ": bad " + what + " '" + s + "'");
    return v;
}

}  // namespace

std::vector<VirtualEvent> VirtualTimeSource::parse_script_csv(std::istream& in) {
    std::vector<VirtualEvent> events;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line[0] == '#') continue;
        std::stringstream ss(line);
        std::string at, kind, dur;
        if (!std::getline(ss, at, ',') || !std::getline(ss, kind, ',') || !std::getline(ss, dur))
            throw Error("script csv line " + std::to_string(line_no) + ": expected at_cycle,kind,duration_cycles");
        VirtualEvent ev;
        ev.at_cycle = parse_u64(at, line_no, "at_cycle");
        ev.kind = parse_kind(kind, line_no);
        ev.duration_cycles = parse_u64(dur, line_no, "duration_cycles");
        if (ev.duration_cycles == 0)
            throw Error("script csv line " + std::to_string(line_no) + ": duration_cycles must be > 0");
        events.push_back(ev);
    }
    if (!std::is_sorted(events.begin(), events.end(),
                        [](const VirtualEvent& a, const VirtualEvent& b) { return a.at_cycle < b.at_cycle; }))
        throw Error("script csv: events must be sorted by at_cycle");
    return events;
}

std::vector<VirtualEvent> VirtualTimeSource::load_script_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open script csv: " + path.string());
    return parse_script_csv(in);
}

// ---------------------------------------------------------------------------
// HardwareTimeSource

HardwareTimeSource::HardwareTimeSource() {
    const char* env = std::getenv("PADLOCK_COUNTER_PAGE");
    map_page_(env ? env : "");
    cached_ = read_preemptions();
}

HardwareTimeSource::HardwareTimeSource(const std::string& counter_page_path) {
    map_page_(counter_page_path);
    cached_ = read_preemptions();
}

HardwareTimeSource::~HardwareTimeSource() {
    if (page_) ::munmap(const_cast<std::uint64_t*>(page_), 4096);
}

void HardwareTimeSource::map_page_(const std::string& path) {
    if (!path.empty()) {
        int fd = ::open(path.c_str(), O_RDONLY);
        if (fd >= 0) {
            void* p = ::mmap(nullptr, 4096, PROT_READ, MAP_SHARED, fd, 0);
            ::close(fd);
            if (p != MAP_FAILED) {
                page_ = static_cast<const volatile std::uint64_t*>(p);
                return;
            }
        }
        std::fprintf(stderr, "padlock: counter page %s cannot be mapped; ", path.c_str());
    }
    std::fprintf(stderr,
                 "padlock: preemption counters fall back to getrusage "
                 "(slow, no interrupt visibility)\n");
}

CycleStamp HardwareTimeSource::now() {
#if defined(__x86_64__) || defined(__i386__)
    _mm_lfence();
    Cycles t = __rdtsc();
#else
    Cycles t = static_cast<Cycles>(
        std::chrono::duration_cast<std::chrono::nanoseconds>(
            std::chrono::steady_clock::now().time_since_epoch())
            .count());
#endif
#ifndef NDEBUG
    // 64-bit counters do not wrap on human timescales; a decrease means the
    // thread moved to a core with an unsynchronized TSC.
    assert(t >= last_ && "timestamp counter went backwards");
    last_ = t;
#endif
    return {t};
}

void HardwareTimeSource::busy_delay(std::uint32_t units) {
#if defined(__x86_64__) || defined(__i386__)
    std::uint64_t acc = 1;
    for (std::uint32_t i = 0; i < units; ++i) asm volatile("addq $1, %0" : "+r"(acc));
#else
    volatile std::uint32_t acc = 0;
    for (std::uint32_t i = 0; i < units; ++i) acc = acc + 1;
#endif
}

PreemptionCounters HardwareTimeSource::read_slow_() {
    ++slow_reads_;
    rusage ru{};
    if (::getrusage(RUSAGE_THREAD, &ru) != 0)
        throw Error("getrusage(RUSAGE_THREAD) failed");
    PreemptionCounters c;
    c.interrupts = 0;  // not observable from userspace without the counter page
    c.involuntary_switches = static_cast<std::uint64_t>(ru.ru_nivcsw);
    c.voluntary_switches = static_cast<std::uint64_t>(ru.ru_nvcsw);
    return c;
}

PreemptionCounters HardwareTimeSource::read_preemptions() {
    PreemptionCounters c;
    if (page_) {
        c.interrupts = page_[0];
        c.involuntary_switches = page_[1];
        c.voluntary_switches = page_[2];
    } else {
        c = read_slow_();
    }
    cached_ = c;
    return c;
}

}  // namespace padlock
