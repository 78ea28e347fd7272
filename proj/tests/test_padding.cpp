#include <doctest.h>

#include <random>

#include "padlock/padding.hpp"

#include "test_support.hpp"

using namespace padlock;
using test_support::FixedRandomSource;
using test_support::make_params;

TEST_CASE("begin_protected draws m bytes and stamps t_begin") {
    VirtualTimeSource ts;
    ts.set_clock(CycleStamp{1000});
    FixedRandomSource rng(7);
    IntervalState st = begin_protected(make_params(), ts, rng);
    CHECK(st.t_begin.cycles == 1000);
    CHECK(st.params.m == 5);
    for (int i = 0; i < 5; ++i) CHECK(st.random_inputs[i] == 7);
}

TEST_CASE("two begins with the same seed draw identical random inputs") {
    VirtualTimeSource ts1, ts2;
    auto rng1 = test_support::seeded_rng(99);
    auto rng2 = test_support::seeded_rng(99);
    IntervalState a = begin_protected(make_params(), ts1, rng1);
    IntervalState b = begin_protected(make_params(), ts2, rng2);
    CHECK(a.random_inputs == b.random_inputs);
}

TEST_CASE("invalid params refuse to run the body (fail closed)") {
    VirtualTimeSource ts;
    FixedRandomSource rng(0);
    PaddingParams bad = make_params();
    bad.t_max = 0;
    CHECK_THROWS_AS(begin_protected(bad, ts, rng), ParamsError);
}

TEST_CASE("the random draw strictly precedes the t_begin stamp") {
    VirtualTimeSource inner_ts;
    FixedRandomSource inner_rng(1);
    std::vector<std::string> log;
    test_support::RecordingTimeSource ts(inner_ts, log);
    test_support::RecordingRandomSource rng(inner_rng, log);

    begin_protected(make_params(), ts, rng);
    // draw first, then the counter baseline, then the stamp
    REQUIRE(log.size() == 3);
    CHECK(log[0] == "draw");
    CHECK(log[1] == "read_preemptions");
    CHECK(log[2] == "now");
}

TEST_CASE("delay_op busy-executes for x + c cycles on the virtual backend") {
    VirtualTimeSource ts;
    DelayCalibration cal{.u = 1, .c = 46, .warmup_iterations = 0};
    CHECK(delay_op(0, cal, ts) == 46);
    CHECK(delay_op(255, cal, ts) == 301);
}

TEST_CASE("randomize_phase adds sum(x) + m*c cycles") {
    VirtualTimeSource ts;
    FixedRandomSource rng(0);

    SUBCASE("m=0 adds nothing") {
        IntervalState st = begin_protected(make_params(5000, 690000, 0), ts, rng);
        Cycles t0 = ts.now().cycles;
        randomize_phase(st, ts);
        CHECK(ts.now().cycles == t0);
    }
    SUBCASE("five zero bytes with c=46 add 230 cycles") {
        IntervalState st = begin_protected(make_params(5000, 690000, 5), ts, rng);
        Cycles t0 = ts.now().cycles;
        randomize_phase(st, ts);
        CHECK(ts.now().cycles - t0 == 230);
    }
}

TEST_CASE("no preemptions: padding lands exactly on t_max") {
    VirtualTimeSource ts;
    FixedRandomSource rng(0);  // randomization adds exactly 230
    IntervalState st = begin_protected(make_params(), ts, rng);
    ts.advance(3000);  // the protected body
    PaddingOutcome out = end_protected(st, ts);

    CHECK(out.padded_duration == 5000);
    CHECK(out.final_target.cycles - st.t_begin.cycles == 5000);
    CHECK(out.adjustment_rounds == 1);
    CHECK_FALSE(out.overtime_applied);
    CHECK(out.preemptions_observed == 0);
    CHECK(out.ext_preempt_cycles == 0);
    CHECK(out.valid);
}

TEST_CASE("one interrupt during the wait loop re-targets by t_penalty") {
    std::vector<VirtualEvent> script{{4000, PreemptKind::interrupt, 300000}};
    VirtualTimeSource ts({}, script);
    FixedRandomSource rng(0);
    IntervalState st = begin_protected(make_params(), ts, rng);
    ts.advance(3000);
    PaddingOutcome out = end_protected(st, ts);

    CHECK(out.final_target.cycles - st.t_begin.cycles == 5000 + 690000);
    CHECK(out.adjustment_rounds == 2);
    CHECK(out.preemptions_observed == 1);
    CHECK(out.ext_preempt_cycles == 690000);
    CHECK_FALSE(out.overtime_applied);
    CHECK(out.valid);
    // outcome algebra
    CHECK(out.final_target.cycles - st.t_begin.cycles ==
          st.params.t_max + out.ext_preempt_cycles + out.overtime_cycles);
}

TEST_CASE("a body overrunning t_max triggers the overtime branch exactly once") {
    VirtualTimeSource ts;
    FixedRandomSource rng(0);
    PaddingParams p = make_params();
    IntervalState st = begin_protected(p, ts, rng);
    ts.advance(6000);  // body longer than t_max
    PaddingOutcome out = end_protected(st, ts);

    CHECK(out.overtime_applied);
    CHECK(out.overtime_cycles == p.t_overtime);
    CHECK(out.final_target.cycles - st.t_begin.cycles == 5000 + p.t_overtime);
    CHECK(out.preemptions_observed == 0);
    CHECK(out.final_target.cycles - st.t_begin.cycles ==
          p.t_max + out.ext_preempt_cycles + out.overtime_cycles);
}

TEST_CASE("a voluntary context switch invalidates the interval") {
    std::vector<VirtualEvent> script{{3500, PreemptKind::voluntary, 1000}};
    VirtualTimeSource ts({}, script);
    FixedRandomSource rng(0);
    IntervalState st = begin_protected(make_params(), ts, rng);
    ts.advance(3000);
    PaddingOutcome out = end_protected(st, ts);
    CHECK_FALSE(out.valid);
    CHECK(out.voluntary_switches == 1);
}

TEST_CASE("completion covers every residue mod u exactly once over a phase sweep") {
    const Cycles u = 7;
    const Cycles t_max = 5000;
    std::vector<Cycles> completions;
    for (Cycles phase = 0; phase < u; ++phase) {
        VirtualTimeSource ts(VirtualTimeSource::Config{.wait_pattern = {u}});
        FixedRandomSource rng(0);
        IntervalState st = begin_protected(make_params(t_max, 690000, 0), ts, rng);
        ts.advance(1000 + phase);
        PaddingOutcome out = end_protected(st, ts);
        CHECK(out.padded_duration >= t_max);
        CHECK(out.padded_duration < t_max + u);
        completions.push_back(out.padded_duration);
    }
    std::sort(completions.begin(), completions.end());
    for (Cycles i = 0; i < u; ++i) CHECK(completions[i] == t_max + i);
}

TEST_CASE("padded duration never undershoots t_max without preemptions") {
    std::mt19937_64 gen(123);
    for (int i = 0; i < 200; ++i) {
        VirtualTimeSource ts(
            VirtualTimeSource::Config{.wait_pattern = {1 + gen() % 64}});
        auto rng = test_support::seeded_rng(gen());
        IntervalState st = begin_protected(make_params(), ts, rng);
        ts.advance(gen() % 3400);
        PaddingOutcome out = end_protected(st, ts);
        CHECK(out.padded_duration >= st.params.t_max);
        CHECK_FALSE(out.overtime_applied);
    }
}

TEST_CASE("the target sequence depends only on the preemption pattern, not the body") {
    // 1000 random scripts x random duration pairs; identical target history.
    // Scripts are well-formed for the model: single-preemption durations
    // stay within t_penalty (its definition), and arrivals land inside the
    // interval's first padding window.
    std::mt19937_64 gen(2026);
    PaddingParams p = make_params(5000, 7000);

    auto run = [&](Cycles body, const std::vector<VirtualEvent>& script, std::uint64_t seed) {
        VirtualTimeSource ts({}, script);
        auto rng = test_support::seeded_rng(seed);
        IntervalState st = begin_protected(p, ts, rng);
        ts.advance(body);
        PaddingPolicy policy;
        policy.record_targets = true;
        return end_protected(st, ts, policy);
    };

    for (int trial = 0; trial < 1000; ++trial) {
        std::size_t n_events = gen() % 5;
        std::vector<Cycles> arrivals;
        for (std::size_t e = 0; e < n_events; ++e) arrivals.push_back(gen() % p.t_max);
        std::sort(arrivals.begin(), arrivals.end());
        std::vector<VirtualEvent> script;
        for (Cycles at : arrivals)
            script.push_back({at, gen() % 2 ? PreemptKind::interrupt : PreemptKind::involuntary,
                              100 + gen() % (p.t_penalty - 100)});
        // keep body + worst-case randomization within t_max
        Cycles d1 = gen() % 3400;
        Cycles d2 = gen() % 3400;
        std::uint64_t seed = gen();

        PaddingOutcome o1 = run(d1, script, seed);
        PaddingOutcome o2 = run(d2, script, seed);
        REQUIRE(o1.target_history == o2.target_history);
        REQUIRE(o1.adjustment_rounds == o2.adjustment_rounds);
        REQUIRE(o1.final_target == o2.final_target);
        REQUIRE(o1.preemptions_observed == o2.preemptions_observed);
    }
}

TEST_CASE("a cascade of late preemptions re-targets round by round, body-independent") {
    // e1 lands in the first padding window, e2 inside the second.
    std::vector<VirtualEvent> script{
        {3000, PreemptKind::interrupt, 2000},
        {14000, PreemptKind::interrupt, 1000},
    };
    PaddingParams p = make_params(5000, 10000, 5);

    auto run = [&](Cycles body) {
        VirtualTimeSource ts({}, script);
        FixedRandomSource rng(0);  // randomization adds exactly 230
        IntervalState st = begin_protected(p, ts, rng);
        ts.advance(body);
        PaddingPolicy policy;
        policy.record_targets = true;
        return end_protected(st, ts, policy);
    };

    for (Cycles body : {Cycles{1000}, Cycles{3500}}) {
        PaddingOutcome out = run(body);
        CHECK(out.target_history == std::vector<Cycles>{5000, 15000, 25000});
        CHECK(out.adjustment_rounds == 3);
        CHECK(out.final_target.cycles == 25000);
        CHECK(out.preemptions_observed == 2);
        CHECK_FALSE(out.overtime_applied);
    }
}

TEST_CASE("rate-limited preemption scripts terminate quickly") {
    // at most one preemption per t_penalty window
    std::mt19937_64 gen(5);
    PaddingParams p = make_params(5000, 9000);
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<VirtualEvent> script;
        Cycles at = gen() % 5000;
        std::size_t n_events = 1 + gen() % 6;
        for (std::size_t e = 0; e < n_events; ++e) {
            script.push_back({at, PreemptKind::interrupt, 100 + gen() % 8000});
            at += p.t_penalty + gen() % 5000;
        }
        VirtualTimeSource ts({}, script);
        auto rng = test_support::seeded_rng(gen());
        IntervalState st = begin_protected(p, ts, rng);
        ts.advance(gen() % 3400);
        PaddingOutcome out = end_protected(st, ts);
        CHECK(out.adjustment_rounds <= n_events + 2);
    }
}

TEST_CASE("calibrate measures a stable wait-loop period") {
    VirtualTimeSource ts(VirtualTimeSource::Config{.wait_pattern = {7}});
    DelayCalibration cal = calibrate(ts);
    CHECK(cal.u == 7);
    CHECK(cal.c == 46);
}

TEST_CASE("calibrate rejects an unstable period at the 90% threshold") {
    // every 4th iteration costs 12 instead of 7: modal frequency 75%
    VirtualTimeSource ts(VirtualTimeSource::Config{.wait_pattern = {7, 7, 7, 12}});
    CHECK_THROWS_AS(calibrate(ts), CalibrationError);
}

TEST_CASE("gap-probe policy matches exact counting on a quiet interval") {
    VirtualTimeSource ts;
    FixedRandomSource rng(0);
    PaddingPolicy probe;
    probe.read = PreemptRead::gap_probe;
    IntervalState st = begin_protected(make_params(), ts, rng, probe);
    ts.advance(2500);
    PaddingOutcome out = end_protected(st, ts, probe);
    CHECK(out.padded_duration == 5000);
    CHECK(out.preemptions_observed == 0);
}
