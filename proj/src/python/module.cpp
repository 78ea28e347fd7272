// Python bindings for the main padlock operations: exact oracles, the
// quantile estimators, virtual padded runs, the scheduler model, and the
// ChaCha/8 stream.

#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "padlock/csprng.hpp"
#include "padlock/leakage.hpp"
#include "padlock/os_sim.hpp"
#include "padlock/padding.hpp"
#include "padlock/params.hpp"
#include "padlock/profiler.hpp"
#include "padlock/timebase.hpp"

namespace py = pybind11;
using namespace padlock;

namespace {

ChaCha8Rng make_rng(py::bytes key, py::bytes nonce) {
    std::string k = key, n = nonce;
    if (k.size() != ChaCha8Rng::kKeyBytes || n.size() != ChaCha8Rng::kNonceBytes)
        throw py::value_error("key must be 32 bytes and nonce 12 bytes");
    std::array<std::uint8_t, 32> ka{};
    std::array<std::uint8_t, 12> na{};
    std::copy(k.begin(), k.end(), ka.begin());
    std::copy(n.begin(), n.end(), na.begin());
    return ChaCha8Rng(ka, na);
}

PaddingParams params_from_kwargs(std::uint64_t t_max, std::uint64_t t_penalty,
                                 std::uint64_t t_overtime, std::uint32_t m, std::uint64_t u,
                                 std::uint64_t c) {
    PaddingParams p;
    p.function_id = function_id("python");
    p.t_max = t_max;
    p.t_penalty = t_penalty;
    p.t_overtime = t_overtime;
    p.m = m;
    p.u = u;
    p.c = c;
    p.kappa = 1e-5;
    return p;
}

py::dict outcome_to_dict(const PaddingOutcome& out, Cycles t_begin) {
    py::dict d;
    d["padded_duration"] = out.padded_duration;
    d["final_target"] = out.final_target.cycles;
    d["final_target_minus_begin"] = out.final_target.cycles - t_begin;
    d["preemptions_observed"] = out.preemptions_observed;
    d["ext_preempt_cycles"] = out.ext_preempt_cycles;
    d["overtime_applied"] = out.overtime_applied;
    d["overtime_cycles"] = out.overtime_cycles;
    d["adjustment_rounds"] = out.adjustment_rounds;
    d["valid"] = out.valid;
    d["target_history"] = out.target_history;
    return d;
}

}  // namespace

PYBIND11_MODULE(_core, mod) {
    mod.doc() = "Constant-time execution padding runtime (core bindings)";

    py::register_exception<Error>(mod, "PadlockError");

    mod.def("function_id", [](const std::string& name) { return function_id(name); },
            py::arg("name"), "Stable 64-bit id for a protected interval name.");

    mod.def(
        "chacha8_keystream",
        [](py::bytes key, py::bytes nonce, std::size_t n) {
            ChaCha8Rng rng = make_rng(key, nonce);
            auto bytes = rng.next_bytes(n);
            return py::bytes(reinterpret_cast<const char*>(bytes.data()), bytes.size());
        },
        py::arg("key"), py::arg("nonce"), py::arg("n"),
        "First n keystream bytes of ChaCha/8 for a 32-byte key and 12-byte nonce.");

    mod.def(
        "estimate_tmax",
        [](const std::vector<std::tuple<std::uint64_t, std::uint64_t, std::uint64_t>>& samples,
           double kappa) {
            std::vector<ProfileSample> s;
            s.reserve(samples.size());
            for (const auto& [dur, pre, vol] : samples) s.push_back({0, dur, pre, vol});
            return estimate_tmax(s, kappa);
        },
        py::arg("samples"), py::arg("kappa"),
        "Worst-case bound over (duration, preemptions, voluntary) samples with at most a "
        "kappa fraction of clean readings excluded.");

    mod.def(
        "estimate_tpenalty",
        [](const std::vector<std::tuple<std::uint64_t, std::uint64_t, std::uint64_t>>& samples,
           std::uint64_t t_max) {
            std::vector<ProfileSample> s;
            s.reserve(samples.size());
            for (const auto& [dur, pre, vol] : samples) s.push_back({0, dur, pre, vol});
            auto est = estimate_tpenalty(s, t_max);
            return py::make_tuple(est.cycles, est.from_default);
        },
        py::arg("samples"), py::arg("t_max"),
        "Worst-case cost of a single preemption; (cycles, from_default).");

    mod.def(
        "uniformity_oracle",
        [](std::uint32_t m, std::uint32_t u, std::uint32_t c) {
            ExactFraction f = uniformity_oracle(m, u, c);
            return py::make_tuple(f.value(), f.str());
        },
        py::arg("m"), py::arg("u"), py::arg("c") = 46,
        "Exact half-L1 distance from uniform mod u of the m-round randomization sum; "
        "(float, exact fraction string).");

    mod.def("overtime_leakage_bound", &overtime_leakage_bound, py::arg("overtimes"),
            py::arg("observations"),
            "Upper bound in bits: overtimes * log2(observations).");

    mod.def(
        "statistical_distance",
        [](const std::map<std::uint64_t, std::uint64_t>& a,
           const std::map<std::uint64_t, std::uint64_t>& b, Cycles half_window) {
            TimingDistribution da, db;
            for (auto [k, v] : a) da.add(k, v);
            for (auto [k, v] : b) db.add(k, v);
            DistanceReport rep = statistical_distance(da, db, half_window);
            py::dict d;
            d["d"] = rep.d;
            d["window"] = py::make_tuple(rep.window_lo, rep.window_hi);
            d["in_window"] = py::make_tuple(rep.samples_in_window_a, rep.samples_in_window_b);
            d["disjoint_support"] = rep.disjoint_support;
            return d;
        },
        py::arg("a"), py::arg("b"), py::arg("half_window") = 50,
        "Statistical distance between duration histograms over a median-centered window.");

    mod.def(
        "run_padded_virtual",
        [](Cycles body_cycles, std::uint64_t t_max, std::uint64_t t_penalty,
           std::uint64_t t_overtime, std::uint32_t m, std::uint64_t u, std::uint64_t c,
           std::uint64_t seed,
           const std::vector<std::tuple<std::uint64_t, std::string, std::uint64_t>>& script) {
            std::vector<VirtualEvent> events;
            for (const auto& [at, kind, dur] : script) {
                VirtualEvent ev;
                ev.at_cycle = at;
                ev.duration_cycles = dur;
                if (kind == "interrupt") ev.kind = PreemptKind::interrupt;
                else if (kind == "involuntary") ev.kind = PreemptKind::involuntary;
                else if (kind == "voluntary") ev.kind = PreemptKind::voluntary;
                else throw py::value_error("unknown event kind: " + kind);
                events.push_back(ev);
            }
            VirtualTimeSource ts(VirtualTimeSource::Config{.wait_pattern = {u}},
                                 std::move(events));
            std::array<std::uint8_t, ChaCha8Rng::kKeyBytes> key{};
            std::array<std::uint8_t, ChaCha8Rng::kNonceBytes> nonce{};
            for (std::size_t i = 0; i < sizeof(seed); ++i)
                key[i] = static_cast<std::uint8_t>(seed >> (8 * i));
            ChaCha8Rng rng(key, nonce);

            PaddingParams p = params_from_kwargs(t_max, t_penalty, t_overtime, m, u, c);
            PaddingPolicy policy;
            policy.record_targets = true;
            IntervalState st = begin_protected(p, ts, rng, policy);
            ts.advance(body_cycles);
            PaddingOutcome out = end_protected(st, ts, policy);
            return outcome_to_dict(out, st.t_begin.cycles);
        },
        py::arg("body_cycles"), py::arg("t_max"), py::arg("t_penalty") = 690'000,
        py::arg("t_overtime") = 0, py::arg("m") = 5, py::arg("u") = 1, py::arg("c") = 46,
        py::arg("seed") = 1, py::arg("script") = py::list(),
        "One protected interval on the deterministic virtual clock; script rows are "
        "(at_cycle, kind, duration_cycles). t_overtime defaults to 2*t_max.");

    // ------------------------------------------------------------------
    // Scheduler / flush / page-color model

    py::class_<sim::SimWorld>(mod, "SimWorld")
        .def(py::init([](std::uint32_t cores, std::uint32_t total_colors,
                         std::uint32_t secure_colors, double clock_hz) {
                 sim::WorldConfig cfg;
                 cfg.cores = cores;
                 cfg.total_colors = total_colors;
                 cfg.secure_colors = secure_colors;
                 cfg.flush_costs = sim::FlushCosts::scaled(0, 23'000, 7'000, 0, clock_hz);
                 return sim::SimWorld(cfg);
             }),
             py::arg("cores") = 2, py::arg("total_colors") = 16, py::arg("secure_colors") = 4,
             py::arg("clock_hz") = 1e9)
        .def(
            "schedule",
            [](sim::SimWorld& w, std::uint32_t core, std::uint32_t pid, std::uint32_t user) {
                auto flush = w.schedule(core, {pid, user, false});
                if (!flush) return py::object(py::none());
                py::dict d;
                d["core"] = flush->core;
                d["previous_taint"] = flush->previous_taint;
                d["cost"] = flush->costs.total();
                return py::object(d);
            },
            py::arg("core"), py::arg("pid"), py::arg("user"),
            "Schedules a process; returns the flush event dict or None.")
        .def("reserve_core",
             [](sim::SimWorld& w, std::uint32_t core, std::uint32_t pid, std::uint32_t user) {
                 w.reserve_core(core, {pid, user, false});
             })
        .def("release_core",
             [](sim::SimWorld& w, std::uint32_t core, std::uint32_t pid, std::uint32_t user) {
                 w.release_core(core, {pid, user, false});
             })
        .def("taint_core", &sim::SimWorld::taint_core, py::arg("core"), py::arg("user"))
        .def(
            "alloc_page",
            [](sim::SimWorld& w, std::uint32_t pid, std::uint32_t user, bool secure) {
                return w.alloc_page({pid, user, false}, secure);
            },
            py::arg("pid"), py::arg("user"), py::arg("secure") = false)
        .def("user_colors",
             [](const sim::SimWorld& w, std::uint32_t user) {
                 const auto& s = w.user_colors(user);
                 return std::vector<std::uint32_t>(s.begin(), s.end());
             })
        .def("flush_count", [](const sim::SimWorld& w) { return w.flush_ledger().size(); })
        .def("clock", [](const sim::SimWorld& w) { return w.clock(); });
}
