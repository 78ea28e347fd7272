#include "padlock/profiler.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <ostream>
#include <sstream>

#include <signal.h>
#include <spawn.h>
#include <sys/wait.h>
#include <unistd.h>

extern char** environ;

namespace padlock {

Cycles estimate_tmax(std::span<const ProfileSample> samples, double kappa) {
    if (!(kappa >= 0.0 && kappa < 1.0)) throw Error("kappa must lie in [0, 1)");

    std::vector<Cycles> clean;
    clean.reserve(samples.size());
    for (const ProfileSample& s : samples)
        if (s.preemptions == 0 && s.voluntary == 0) clean.push_back(s.duration);
    if (clean.empty())
        throw Error("no clean (unpreempted) samples; run a longer profiling session");

    std::sort(clean.begin(), clean.end());
    // Exclusion budget floors so that never more than the stated fraction of
    // readings is excluded.
    auto budget = static_cast<std::size_t>(
        std::floor(kappa * static_cast<double>(clean.size())));
    return clean[clean.size() - 1 - budget];
}

TPenaltyEstimate estimate_tpenalty(std::span<const ProfileSample> samples, Cycles t_max) {
    TPenaltyEstimate est;
    bool any = false;
    for (const ProfileSample& s : samples) {
        if (s.preemptions == 0 || s.voluntary != 0) continue;
        any = true;
        if (s.duration <= t_max) continue;  // preempted yet under budget: contributes 0
        Cycles over = s.duration - t_max;
        Cycles per = (over + s.preemptions - 1) / s.preemptions;  // ceil
        est.cycles = std::max(est.cycles, per);
    }
    if (!any) {
        std::fprintf(stderr,
                     "padlock: no preempted samples observed; using default t_penalty=%llu\n",
                     static_cast<unsigned long long>(kDefaultTPenalty));
        return {kDefaultTPenalty, true};
    }
    return est;
}

namespace {

class StressProcesses {
public:
    explicit StressProcesses(const StressConfig& cfg) {
        for (const std::string& cmd : cfg.commands) {
            const char* argv[] = {"/bin/sh", "-c", cmd.c_str(), nullptr};
            pid_t pid = 0;
            int rc = ::posix_spawn(&pid, "/bin/sh", nullptr, nullptr,
                                   const_cast<char**>(argv), environ);
            if (rc != 0) {
                std::fprintf(stderr, "padlock: failed to launch stress command '%s'\n",
                             cmd.c_str());
                ok_ = false;
                continue;
            }
            pids_.push_back(pid);
        }
        if (cfg.commands.empty()) ok_ = false;  // nothing stressing the run
    }

    ~StressProcesses() {
        for (pid_t pid : pids_) {
            ::kill(pid, SIGKILL);
            ::waitpid(pid, nullptr, 0);
        }
    }

    bool all_running() const { return ok_; }

private:
    std::vector<pid_t> pids_;
    bool ok_ = true;
};

}  // namespace

ProfileRunResult profile_run(std::uint64_t function_id,
                             const std::function<void(std::uint64_t)>& body,
                             const std::function<std::uint64_t(std::size_t)>& input_generator,
                             TimeSource& ts, const StressConfig& stress, std::size_t n_runs,
                             double kappa) {
    if (n_runs == 0) throw Error("profile_run requires n_runs > 0");

    ProfileRunResult result;
    result.samples.reserve(n_runs);

    StressProcesses stress_procs(stress);

    for (std::size_t i = 0; i < n_runs; ++i) {
        const std::uint64_t input = input_generator(i);
        // Counter reads sit outside the timed window on both sides.
        PreemptionCounters before = ts.read_preemptions();
        CycleStamp t0 = ts.now();
        body(input);
        CycleStamp t1 = ts.now();
        PreemptionCounters after = ts.read_preemptions();

        ProfileSample s;
        s.function_id = function_id;
        s.duration = t1 - t0;
        s.preemptions = after.preemption_total() - before.preemption_total();
        s.voluntary = after.voluntary_switches - before.voluntary_switches;
        result.samples.push_back(s);
    }

    ProfileReport& rep = result.report;
    rep.function_id = function_id;
    rep.kappa = kappa;
    rep.samples_total = result.samples.size();
    rep.stressed = stress_procs.all_running();
    rep.t_max = estimate_tmax(result.samples, kappa);

    for (const ProfileSample& s : result.samples) {
        if (s.preemptions > 0) ++rep.preempted_sample_count;
        if (s.preemptions == 0 && s.voluntary == 0 && s.duration > rep.t_max)
            ++rep.samples_excluded;
    }

    TPenaltyEstimate tp = estimate_tpenalty(result.samples, rep.t_max);
    rep.t_penalty = tp.cycles;
    rep.t_penalty_from_default = tp.from_default;
    return result;
}

std::uint64_t persist_report(const std::filesystem::path& params_path,
                             const ProfileReport& report, Cycles u, Cycles c,
                             std::uint32_t m) {
    PaddingParams p;
    p.function_id = report.function_id;
    p.t_max = report.t_max;
    p.t_penalty = report.t_penalty;
    p.t_overtime = 2 * report.t_max;
    p.m = m;
    p.u = u;
    p.c = c;
    p.kappa = report.kappa;
    return update_params(params_path, p);
}

void write_samples_csv(std::ostream& out, std::span<const ProfileSample> samples) {
    out << "function_id,duration_cycles,preemptions,voluntary\n";
    char buf[128];
    for (const ProfileSample& s : samples) {
        std::snprintf(buf, sizeof(buf), "%016llx,%llu,%llu,%llu\n",
                      static_cast<unsigned long long>(s.function_id),
                      static_cast<unsigned long long>(s.duration),
                      static_cast<unsigned long long>(s.preemptions),
                      static_cast<unsigned long long>(s.voluntary));
        out << buf;
    }
}

std::vector<ProfileSample> read_samples_csv(std::istream& in) {
    std::vector<ProfileSample> samples;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line[0] == '#') continue;
        if (line_no == 1 && line.rfind("function_id", 0) == 0) continue;
        std::stringstream ss(line);
        std::string id, dur, pre, vol;
        if (!std::getline(ss, id, ',') || !std::getline(ss, dur, ',') ||
            !std::getline(ss, pre, ',') || !std::getline(ss, vol))
            throw Error("sample csv line " + std::to_string(line_no) + ": expected 4 fields");
        ProfileSample s;
        auto parse = [&](const std::string& str, std::uint64_t& out_v, int base) {
            auto [p, ec] = std::from_chars(str.data(), str.data() + str.size(), out_v, base);
            if (ec != std::errc{} || p != str.data() + str.size())
                throw Error("sample csv line " + std::to_string(line_no) + ": bad value '" + str +
                            "'");
        };
        parse(id, s.function_id, 16);
        parse(dur, s.duration, 10);
        parse(pre, s.preemptions, 10);
        parse(vol, s.voluntary, 10);
        samples.push_back(s);
    }
    return samples;
}

}  // namespace padlock
