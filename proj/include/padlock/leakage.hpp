#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include <boost/multiprecision/cpp_int.hpp>

#include "padlock/padding.hpp"

namespace padlock {

using BigInt = boost::multiprecision::cpp_int;

// Histogram of cycle-resolution duration samples.
class TimingDistribution {
public:
    void add(Cycles duration, std::uint64_t count = 1);
    void merge(const TimingDistribution& other);

    std::uint64_t total() const { return total_; }
    const std::map<Cycles, std::uint64_t>& counts() const { return counts_; }
    bool empty() const { return total_ == 0; }

    // Lower median of this distribution pooled with `other`.
    Cycles pooled_median(const TimingDistribution& other) const;

    // Tagged when collection could not engage core isolation.
    bool noisy = false;

    // CSV `duration_cycles,count`.
    void to_csv(std::ostream& out) const;
    static TimingDistribution from_csv(std::istream& in);

private:
    std::map<Cycles, std::uint64_t> counts_;
    std::uint64_t total_ = 0;
};

struct DistanceReport {
    double d = 0.0;                // half L1 distance over the window
    Cycles window_lo = 0;
    Cycles window_hi = 0;
    std::uint64_t samples_in_window_a = 0;
    std::uint64_t samples_in_window_b = 0;
    bool disjoint_support = false;
};

// Statistical distance between two timing distributions over the window
// median(a u b) +- half_window cycles, with per-side probabilities
// normalized within the window so the choice of window stays auditable.
DistanceReport statistical_distance(const TimingDistribution& a, const TimingDistribution& b,
                                    Cycles half_window = 50);

// ---------------------------------------------------------------------------
// Collection

struct CollectOptions {
    bool padded = true;
    PaddingParams params{};            // used when padded
    PaddingPolicy policy{};
    bool pin_to_core = false;          // hardware isolation (affinity + FIFO)
    int core = 0;
    std::size_t warmup = 0;            // discarded leading samples
    // Sees every padded outcome (overtime / invalid-interval monitoring).
    std::function<void(const PaddingOutcome&)> outcome_sink;
};

// n end-to-end duration samples of `body(input)`, measured from outside the
// call with the same time source (the attacker's view). Throws on n == 0.
TimingDistribution collect(const std::function<void(std::uint64_t)>& body, std::uint64_t input,
                           std::size_t n, const CollectOptions& opts, TimeSource& ts,
                           RandomSource& rng);

// Collects one distribution per entry of `inputs`, n samples each, in a
// seeded random interleaving so slow drift (thermal, host load) hits every
// class equally. Mandatory for distinguishing-attack measurements.
std::vector<TimingDistribution> collect_interleaved(
    const std::function<void(std::uint64_t)>& body, const std::vector<std::uint64_t>& inputs,
    std::size_t n_per_class, const CollectOptions& opts, TimeSource& ts, RandomSource& rng,
    std::uint64_t schedule_seed);

struct SweepRow {
    std::uint32_t m = 0;
    double d_same = 0.0;
    double d_diff = 0.0;
};

// For each m: d_diff = d(dist(i0), dist(i1)) and d_same = d(dist(i0),
// dist(i0)') as the noise floor, all three distributions interleaved.
std::vector<SweepRow> convergence_sweep(const std::function<void(std::uint64_t)>& body,
                                        std::uint64_t input0, std::uint64_t input1,
                                        const std::vector<std::uint32_t>& m_values,
                                        std::size_t n_per_class, CollectOptions opts,
                                        TimeSource& ts, RandomSource& rng,
                                        std::uint64_t schedule_seed);

// `m,d_same,d_diff` rows.
void write_sweep_csv(std::ostream& out, const std::vector<SweepRow>& rows);

// ---------------------------------------------------------------------------
// Exact oracles (integer arithmetic throughout; no floating-point drift)

// Distribution over Z_u as exact counts with a common denominator.
struct ResidueDistribution {
    std::uint32_t u = 1;
    std::vector<BigInt> numer;  // size u, sums to denom
    BigInt denom = 1;
};

// Exact distribution of (sum_{i=1..m} X_i) mod u where each X_i is uniform
// on {c, ..., c+255}: m-fold convolution of the single-step distribution
// reduced mod u.
ResidueDistribution randomization_residues(std::uint32_t m, std::uint32_t u, std::uint32_t c);

// Exact fraction num/den in lowest terms comparable without rounding.
struct ExactFraction {
    BigInt num;
    BigInt den = 1;
    double value() const;
    std::string str() const;
    // three-way comparisons by cross-multiplication
    bool operator<(const ExactFraction& o) const { return num * o.den < o.num * den; }
    bool operator<=(const ExactFraction& o) const { return num * o.den <= o.num * den; }
    bool operator==(const ExactFraction& o) const { return num * o.den == o.num * den; }
};

// Half L1 distance between the randomization step's residue distribution
// and uniform on Z_u. m = 0 is the empty walk (point mass at 0). u = 0 is
// rejected.
ExactFraction uniformity_oracle(std::uint32_t m, std::uint32_t u, std::uint32_t c);

// Exact padded-completion distribution on the virtual backend for a body of
// duration `body_cycles`: enumerates every phase offset 0..u-1 of the
// body's completion, pushes each through the randomization step's exact
// distribution and the wait loop's landing rule. Indexed by the completion
// value mod u (the landing is the first clock value in that class at or
// past the padding target).
ResidueDistribution exact_padded_completion(Cycles body_cycles, std::uint32_t m, std::uint32_t u,
                                            std::uint32_t c);

// Information bound for overtime events: B observed overtimes across N
// timing observations leak at most B * log2(N) bits.
double overtime_leakage_bound(std::uint64_t overtimes, std::uint64_t observations);

}  // namespace padlock
