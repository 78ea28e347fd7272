#include <doctest.h>

#include <filesystem>
#include <random>
#include <sstream>

#include <unistd.h>

#include "padlock/params.hpp"
#include "padlock/profiler.hpp"

using namespace padlock;

namespace {

ProfileSample clean(Cycles duration) { return {1, duration, 0, 0}; }
ProfileSample preempted(Cycles duration, std::uint64_t n) { return {1, duration, n, 0}; }

// Independent oracle: sort clean durations descending, walk down until the
// strictly-greater count fits the floored budget.
Cycles tmax_oracle(const std::vector<ProfileSample>& samples, double kappa) {
    std::vector<Cycles> durations;
    for (const auto& s : samples)
        if (s.preemptions == 0 && s.voluntary == 0) durations.push_back(s.duration);
    std::sort(durations.begin(), durations.end(), std::greater<>());
    auto budget =
        static_cast<std::size_t>(std::floor(kappa * static_cast<double>(durations.size())));
    Cycles best = durations.front();
    for (Cycles v : durations) {
        std::size_t excluded = 0;
        for (Cycles w : durations)
            if (w > v) ++excluded;
        if (excluded <= budget) best = v;  // durations descend, so the last hit is smallest
    }
    return best;
}

}  // namespace

TEST_CASE("kappa 0 keeps the maximum") {
    std::vector<ProfileSample> samples;
    for (Cycles d = 10; d <= 1000; d += 10) samples.push_back(clean(d));
    CHECK(samples.size() == 100);
    CHECK(estimate_tmax(samples, 0.0) == 1000);
}

TEST_CASE("kappa 0.01 over 100 samples excludes exactly one") {
    std::vector<ProfileSample> samples;
    for (Cycles d = 10; d <= 1000; d += 10) samples.push_back(clean(d));
    CHECK(estimate_tmax(samples, 0.01) == 990);
}

TEST_CASE("kappa 1e-5 with 10^4 samples floors to zero exclusions") {
    std::vector<ProfileSample> samples;
    std::mt19937_64 gen(3);
    Cycles max_d = 0;
    for (int i = 0; i < 10'000; ++i) {
        Cycles d = 1 + gen() % 100'000;
        max_d = std::max(max_d, d);
        samples.push_back(clean(d));
    }
    CHECK(estimate_tmax(samples, 1e-5) == max_d);
}

TEST_CASE("preempted and voluntary samples are not eligible for t_max") {
    std::vector<ProfileSample> samples{clean(100), preempted(900'000, 1), {1, 800'000, 0, 2}};
    CHECK(estimate_tmax(samples, 0.0) == 100);
}

TEST_CASE("no clean samples is an error telling the operator to profile longer") {
    std::vector<ProfileSample> samples{preempted(1000, 1)};
    CHECK_THROWS_WITH_AS(estimate_tmax(samples, 0.0), doctest::Contains("longer profiling"),
                         Error);
}

TEST_CASE("kappa outside [0,1) is rejected") {
    std::vector<ProfileSample> samples{clean(1)};
    CHECK_THROWS_AS(estimate_tmax(samples, 1.0), Error);
    CHECK_THROWS_AS(estimate_tmax(samples, -0.1), Error);
}

TEST_CASE("estimator matches the sort-based oracle on 1000 random sample sets") {
    std::mt19937_64 gen(77);
    for (int trial = 0; trial < 1000; ++trial) {
        std::vector<ProfileSample> samples;
        std::size_t n = 1 + gen() % 200;
        for (std::size_t i = 0; i < n; ++i) {
            ProfileSample s;
            s.function_id = 1;
            s.duration = 1 + gen() % 1000;  // small range forces ties
            s.preemptions = gen() % 10 == 0 ? gen() % 3 : 0;
            s.voluntary = gen() % 20 == 0 ? 1 : 0;
            samples.push_back(s);
        }
        bool any_clean = false;
        for (const auto& s : samples) any_clean |= s.preemptions == 0 && s.voluntary == 0;
        if (!any_clean) samples.push_back(clean(1 + gen() % 1000));

        double kappa = (gen() % 2 ? 0.0 : 1.0 / static_cast<double>(2 + gen() % 50));
        CHECK(estimate_tmax(samples, kappa) == tmax_oracle(samples, kappa));
    }
}

TEST_CASE("t_max is monotone non-increasing in kappa") {
    std::mt19937_64 gen(78);
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<ProfileSample> samples;
        std::size_t n = 1 + gen() % 300;
        for (std::size_t i = 0; i < n; ++i) samples.push_back(clean(1 + gen() % 10'000));
        double k1 = static_cast<double>(gen() % 1000) / 2000.0;
        double k2 = k1 + static_cast<double>(gen() % 1000) / 2001.0;
        if (k2 >= 1.0) k2 = 0.999;
        CHECK(estimate_tmax(samples, k1) >= estimate_tmax(samples, k2));
    }
}

TEST_CASE("adding a sample below the estimate never raises it") {
    std::mt19937_64 gen(79);
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<ProfileSample> samples;
        std::size_t n = 1 + gen() % 300;
        for (std::size_t i = 0; i < n; ++i) samples.push_back(clean(1 + gen() % 10'000));
        double kappa = static_cast<double>(gen() % 100) / 1000.0;
        Cycles before = estimate_tmax(samples, kappa);
        samples.push_back(clean(gen() % (before + 1)));
        CHECK(estimate_tmax(samples, kappa) <= before);
    }
}

TEST_CASE("t_penalty: single preempted sample") {
    std::vector<ProfileSample> samples{preempted(695'000, 1)};
    auto est = estimate_tpenalty(samples, 5000);
    CHECK(est.cycles == 690'000);
    CHECK_FALSE(est.from_default);
}

TEST_CASE("t_penalty: preempted samples under t_max contribute zero") {
    std::vector<ProfileSample> samples{preempted(4000, 1)};
    auto est = estimate_tpenalty(samples, 5000);
    CHECK(est.cycles == 0);
    CHECK_FALSE(est.from_default);
}

TEST_CASE("t_penalty: max of per-preemption ceilings") {
    std::vector<ProfileSample> samples{preempted(15'000, 2), preempted(9'000, 1)};
    CHECK(estimate_tpenalty(samples, 5000).cycles == 5000);
}

TEST_CASE("t_penalty falls back to the configured default without preempted samples") {
    std::vector<ProfileSample> samples{clean(100)};
    auto est = estimate_tpenalty(samples, 5000);
    CHECK(est.cycles == kDefaultTPenalty);
    CHECK(est.from_default);
}

TEST_CASE("profile_run on a constant-duration virtual target gives t_max exactly") {
    VirtualTimeSource ts;
    auto result = profile_run(
        function_id("const5000"), [&](std::uint64_t) { ts.advance(5000); },
        [](std::size_t) { return 0; }, ts, StressConfig{}, 200, 1e-5);
    CHECK(result.report.t_max == 5000);
    CHECK(result.report.samples_total == 200);
    CHECK(result.report.samples_excluded == 0);
    CHECK_FALSE(result.report.stressed);  // no stress commands configured
    CHECK(result.report.t_penalty == kDefaultTPenalty);
    CHECK(result.report.t_penalty_from_default);
}

TEST_CASE("profile_run keeps preempted samples for t_penalty but not t_max") {
    // One scripted preemption lands during the fourth of five 1000-cycle runs.
    std::vector<VirtualEvent> script{{3'500, PreemptKind::interrupt, 9'000}};
    VirtualTimeSource ts({}, script);
    auto result = profile_run(
        function_id("toy"), [&](std::uint64_t) { ts.advance(1000); },
        [](std::size_t) { return 0; }, ts, StressConfig{}, 5, 0.0);
    CHECK(result.report.preempted_sample_count == 1);
    CHECK(result.report.t_max == 1000);      // clean samples only
    CHECK(result.report.t_penalty == 9000);  // ceil((10000 - 1000) / 1)
    CHECK_FALSE(result.report.t_penalty_from_default);
}

TEST_CASE("profile_run with a live stress command marks the report stressed") {
    VirtualTimeSource ts;
    StressConfig stress;
    stress.commands = {"sleep 30"};
    auto result = profile_run(
        function_id("x"), [&](std::uint64_t) { ts.advance(10); }, [](std::size_t) { return 0; },
        ts, stress, 10, 0.0);
    CHECK(result.report.stressed);
}

TEST_CASE("sample log csv round trip") {
    std::vector<ProfileSample> samples{{function_id("toy"), 123, 1, 0},
                                       {function_id("toy"), 456, 0, 2}};
    std::stringstream ss;
    write_samples_csv(ss, samples);
    auto back = read_samples_csv(ss);
    REQUIRE(back.size() == 2);
    CHECK(back[0].function_id == samples[0].function_id);
    CHECK(back[0].duration == 123);
    CHECK(back[0].preemptions == 1);
    CHECK(back[1].voluntary == 2);
}

TEST_CASE("persist_report appends a stored record derived from the report") {
    namespace fs = std::filesystem;
    fs::path dir = fs::temp_directory_path() / ("padlock_report_" + std::to_string(::getpid()));
    fs::create_directories(dir);
    fs::path file = dir / "params.txt";

    ProfileReport rep;
    rep.function_id = function_id("toy");
    rep.t_max = 6400;
    rep.t_penalty = 690'000;
    rep.kappa = 1e-5;
    std::uint64_t gen = persist_report(file, rep, 28, 46);
    CHECK(gen == 1);

    ParamsHandle h = ParamsHandle::load(file);
    PaddingParams p = h.lookup(rep.function_id);
    CHECK(p.t_max == 6400);
    CHECK(p.t_overtime == 12'800);
    CHECK(p.t_penalty == 690'000);
    CHECK(p.m == 5);
    CHECK(p.u == 28);
    CHECK(p.c == 46);

    fs::remove_all(dir);
}
