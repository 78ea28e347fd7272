#include "padlock/leakage.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <ostream>
#include <random>
#include <sstream>

#include <sched.h>

namespace padlock {

// ---------------------------------------------------------------------------
// TimingDistribution

void TimingDistribution::add(Cycles duration, std::uint64_t count) {
    if (count == 0) return;
    counts_[duration] += count;
    total_ += count;
}

void TimingDistribution::merge(const TimingDistribution& other) {
    for (const auto& [d, c] : other.counts_) add(d, c);
}

Cycles TimingDistribution::pooled_median(const TimingDistribution& other) const {
    std::uint64_t total = total_ + other.total_;
    if (total == 0) throw Error("median of empty distributions");
    std::uint64_t target = (total + 1) / 2;

    auto a = counts_.begin();
    auto b = other.counts_.begin();
    std::uint64_t cum = 0;
    while (a != counts_.end() || b != other.counts_.end()) {
        Cycles key;
        std::uint64_t cnt = 0;
        if (b == other.counts_.end() || (a != counts_.end() && a->first <= b->first)) {
            key = a->first;
            cnt += a->second;
            if (b != other.counts_.end() && b->first == key) {
                cnt += b->second;
                ++b;
            }
            ++a;
        } else {
            key = b->first;
            cnt += b->second;
            ++b;
        }
        cum += cnt;
        if (cum >= target) return key;
    }
    return 0;  // unreachable
}

void TimingDistribution::to_csv(std::ostream& out) const {
    out << "duration_cycles,count\n";
    for (const auto& [d, c] : counts_) out << d << ',' << c << '\n';
}

TimingDistribution TimingDistribution::from_csv(std::istream& in) {
    TimingDistribution dist;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line[0] == '#') continue;
        if (line_no == 1 && line.rfind("duration_cycles", 0) == 0) continue;
        std::stringstream ss(line);
        std::string d, c;
        if (!std::getline(ss, d, ',') || !std::getline(ss, c))
            throw Error("distribution csv line " + std::to_string(line_no) + ": expected 2 fields");
        std::uint64_t dv = 0, cv = 0;
        auto parse = [&](const std::string& s, std::uint64_t& v) {
            auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
            if (ec != std::errc{} || p != s.data() + s.size())
                throw Error("distribution csv line " + std::to_string(line_no) + ": bad value");
        };
        parse(d, dv);
        parse(c, cv);
        dist.add(dv, cv);
    }
    return dist;
}

// ---------------------------------------------------------------------------
// Statistical distance

DistanceReport statistical_distance(const TimingDistribution& a, const TimingDistribution& b,
                                    Cycles half_window) {
    if (a.empty() || b.empty()) throw Error("statistical distance of an empty distribution");

    Cycles median = a.pooled_median(b);
    DistanceReport rep;
    rep.window_lo = median >= half_window ? median - half_window : 0;
    rep.window_hi = median + half_window;

    auto window_mass = [&](const TimingDistribution& dist) {
        std::uint64_t mass = 0;
        auto lo = dist.counts().lower_bound(rep.window_lo);
        auto hi = dist.counts().upper_bound(rep.window_hi);
        for (auto it = lo; it != hi; ++it) mass += it->second;
        return mass;
    };
    rep.samples_in_window_a = window_mass(a);
    rep.samples_in_window_b = window_mass(b);

    if (rep.samples_in_window_a == 0 || rep.samples_in_window_b == 0) {
        rep.d = 1.0;
        rep.disjoint_support = true;
        return rep;
    }

    const double na = static_cast<double>(rep.samples_in_window_a);
    const double nb = static_cast<double>(rep.samples_in_window_b);

    auto ita = a.counts().lower_bound(rep.window_lo);
    auto enda = a.counts().upper_bound(rep.window_hi);
    auto itb = b.counts().lower_bound(rep.window_lo);
    auto endb = b.counts().upper_bound(rep.window_hi);

    double sum = 0.0;
    while (ita != enda || itb != endb) {
        double pa = 0.0, pb = 0.0;
        if (itb == endb || (ita != enda && ita->first <= itb->first)) {
            Cycles key = ita->first;
            pa = static_cast<double>(ita->second) / na;
            if (itb != endb && itb->first == key) {
                pb = static_cast<double>(itb->second) / nb;
                ++itb;
            }
            ++ita;
        } else {
            pb = static_cast<double>(itb->second) / nb;
            ++itb;
        }
        sum += std::abs(pa - pb);
    }
    rep.d = std::min(0.5 * sum, 1.0);  // rounding must not push past the bound
    return rep;
}

// ---------------------------------------------------------------------------
// Collection

namespace {

void engage_isolation(int core, bool& noisy) {
    cpu_set_t set;
    CPU_ZERO(&set);
    CPU_SET(core, &set);
    if (sched_setaffinity(0, sizeof(set), &set) != 0) {
        std::fprintf(stderr, "padlock: cannot pin to core %d; distribution tagged noisy\n", core);
        noisy = true;
    }
    sched_param sp{};
    sp.sched_priority = sched_get_priority_max(SCHED_FIFO);
    if (sched_setscheduler(0, SCHED_FIFO, &sp) != 0) {
        std::fprintf(stderr,
                     "padlock: SCHED_FIFO unavailable (run with privileges for full isolation); "
                     "distribution tagged noisy\n");
        noisy = true;
    }
}

struct SampleRunner {
    const std::function<void(std::uint64_t)>& body;
    const CollectOptions& opts;
    TimeSource& ts;
    RandomSource& rng;
    // Refreshing the counter cache between samples keeps the gap-probe
    // baseline fresh without putting a system call inside the timed window.
    bool refresh_cache;

    Cycles run(std::uint64_t input) const {
        if (refresh_cache) ts.read_preemptions();
        if (opts.padded) {
            CycleStamp t0 = ts.now();
            IntervalState st = begin_protected(opts.params, ts, rng, opts.policy);
            body(input);
            PaddingOutcome oc = end_protected(st, ts, opts.policy);
            CycleStamp t1 = ts.now();
            if (opts.outcome_sink) opts.outcome_sink(oc);
            return t1 - t0;
        }
        CycleStamp t0 = ts.now();
        body(input);
        CycleStamp t1 = ts.now();
        return t1 - t0;
    }
};

}  // namespace

TimingDistribution collect(const std::function<void(std::uint64_t)>& body, std::uint64_t input,
                           std::size_t n, const CollectOptions& opts, TimeSource& ts,
                           RandomSource& rng) {
    if (n == 0) throw Error("collect: n must be > 0 (empty distribution)");

    TimingDistribution dist;
    if (opts.pin_to_core) engage_isolation(opts.core, dist.noisy);

    SampleRunner runner{body, opts, ts, rng,
                        opts.policy.read == PreemptRead::gap_probe && !ts.counters_are_cheap()};
    for (std::size_t i = 0; i < opts.warmup; ++i) runner.run(input);
    for (std::size_t i = 0; i < n; ++i) dist.add(runner.run(input));
    return dist;
}

std::vector<TimingDistribution> collect_interleaved(
    const std::function<void(std::uint64_t)>& body, const std::vector<std::uint64_t>& inputs,
    std::size_t n_per_class, const CollectOptions& opts, TimeSource& ts, RandomSource& rng,
    std::uint64_t schedule_seed) {
    if (n_per_class == 0) throw Error("collect: n must be > 0 (empty distribution)");
    if (inputs.empty()) throw Error("collect: no input classes");

    bool noisy = false;
    if (opts.pin_to_core) engage_isolation(opts.core, noisy);

    std::vector<std::uint32_t> schedule;
    schedule.reserve(inputs.size() * n_per_class);
    for (std::uint32_t cls = 0; cls < inputs.size(); ++cls)
        schedule.insert(schedule.end(), n_per_class, cls);
    std::mt19937_64 shuffler(schedule_seed);
    std::shuffle(schedule.begin(), schedule.end(), shuffler);

    std::vector<TimingDistribution> dists(inputs.size());
    for (auto& d : dists) d.noisy = noisy;

    SampleRunner runner{body, opts, ts, rng,
                        opts.policy.read == PreemptRead::gap_probe && !ts.counters_are_cheap()};
    for (std::size_t i = 0; i < opts.warmup; ++i) runner.run(inputs[i % inputs.size()]);
    for (std::uint32_t cls : schedule) dists[cls].add(runner.run(inputs[cls]));
    return dists;
}

std::vector<SweepRow> convergence_sweep(const std::function<void(std::uint64_t)>& body,
                                        std::uint64_t input0, std::uint64_t input1,
                                        const std::vector<std::uint32_t>& m_values,
                                        std::size_t n_per_class, CollectOptions opts,
                                        TimeSource& ts, RandomSource& rng,
                                        std::uint64_t schedule_seed) {
    if (n_per_class < 100'000)
        std::fprintf(stderr,
                     "padlock: n=%zu per class is low for a stable noise floor; consider >= 1e5\n",
                     n_per_class);

    std::vector<SweepRow> rows;
    for (std::uint32_t m : m_values) {
        opts.params.m = m;
        // classes: i0, an independent second run of i0, and i1
        auto dists = collect_interleaved(body, {input0, input0, input1}, n_per_class, opts, ts,
                                         rng, schedule_seed ^ (0x517cc1b727220a95ull * (m + 1)));
        SweepRow row;
        row.m = m;
        row.d_same = statistical_distance(dists[0], dists[1]).d;
        row.d_diff = statistical_distance(dists[0], dists[2]).d;
        rows.push_back(row);
    }
    return rows;
}

void write_sweep_csv(std::ostream& out, const std::vector<SweepRow>& rows) {
    out << "m,d_same,d_diff\n";
    char buf[96];
    for (const SweepRow& r : rows) {
        std::snprintf(buf, sizeof(buf), "%u,%.9g,%.9g\n", r.m, r.d_same, r.d_diff);
        out << buf;
    }
}

// ---------------------------------------------------------------------------
// Exact oracles

ResidueDistribution randomization_residues(std::uint32_t m, std::uint32_t u, std::uint32_t c) {
    if (u == 0) throw Error("uniformity oracle: u must be >= 1");

    // Single delay op: (x + c) mod u for x uniform over 0..255.
    std::vector<BigInt> step(u, 0);
    for (std::uint32_t x = 0; x < 256; ++x) step[(x + c) % u] += 1;

    ResidueDistribution dist;
    dist.u = u;
    dist.numer.assign(u, 0);
    dist.numer[0] = 1;  // empty walk: point mass at 0
    dist.denom = 1;

    for (std::uint32_t round = 0; round < m; ++round) {
        std::vector<BigInt> next(u, 0);
        for (std::uint32_t i = 0; i < u; ++i) {
            if (dist.numer[i] == 0) continue;
            for (std::uint32_t s = 0; s < u; ++s) {
                if (step[s] == 0) continue;
                next[(i + s) % u] += dist.numer[i] * step[s];
            }
        }
        dist.numer = std::move(next);
        dist.denom *= 256;
    }
    return dist;
}

double ExactFraction::value() const {
    return num.convert_to<double>() / den.convert_to<double>();
}

std::string ExactFraction::str() const {
    return num.str() + "/" + den.str();
}

ExactFraction uniformity_oracle(std::uint32_t m, std::uint32_t u, std::uint32_t c) {
    ResidueDistribution dist = randomization_residues(m, u, c);

    // d = 1/2 sum_i |numer_i/denom - 1/u| = sum_i |u*numer_i - denom| / (2*u*denom)
    BigInt acc = 0;
    for (const BigInt& n : dist.numer) {
        BigInt diff = n * u - dist.denom;
        acc += diff < 0 ? -diff : diff;
    }
    ExactFraction f;
    f.num = acc;
    f.den = BigInt(2) * u * dist.denom;
    BigInt g = boost::multiprecision::gcd(f.num, f.den);
    if (g > 1) {
        f.num /= g;
        f.den /= g;
    }
    return f;
}

ResidueDistribution exact_padded_completion(Cycles body_cycles, std::uint32_t m, std::uint32_t u,
                                            std::uint32_t c) {
    ResidueDistribution random_part = randomization_residues(m, u, c);

    // The wait loop preserves the spin-entry clock's residue class mod u and
    // lands on its first member at or past the target, so the completion
    // class j collects every (phase, residue) pair with body + phase +
    // residue congruent to j. The body phase is enumerated uniformly.
    ResidueDistribution out;
    out.u = u;
    out.numer.assign(u, 0);
    out.denom = random_part.denom * u;
    for (std::uint32_t phase = 0; phase < u; ++phase) {
        for (std::uint32_t r = 0; r < u; ++r) {
            std::uint64_t j = (body_cycles % u + phase + r) % u;
            out.numer[static_cast<std::size_t>(j)] += random_part.numer[r];
        }
    }
    return out;
}

double overtime_leakage_bound(std::uint64_t overtimes, std::uint64_t observations) {
    if (observations < 1) throw Error("overtime bound: observations must be >= 1");
    if (overtimes == 0) return 0.0;
    return static_cast<double>(overtimes) * std::log2(static_cast<double>(observations));
}

}  // namespace padlock
