#pragma once

// Demo protected bodies compiled into the tooling so experiments and the
// acceptance suite are self-contained.

#include <cstdint>
#include <unordered_map>

namespace padlock::demo {

#if defined(__x86_64__)
inline void toy_loop(std::uint64_t iterations) {
    asm volatile(
        "mov %0, %%rcx\n"
        "1:\n"
        "nop\n"
        "loop 1b\n"
        :
        : "r"(iterations)
        : "rcx", "cc");
}
#else
inline void toy_loop(std::uint64_t iterations) {
    volatile std::uint64_t acc = 0;
    for (std::uint64_t i = 0; i < iterations; ++i) acc = acc + 1;
}
#endif

// The classic distinguishing-attack target: one loop iteration when the
// input is 0, eleven otherwise.
inline void toy_body(std::uint64_t input) { toy_loop(input == 0 ? 1 : 11); }

inline std::unordered_map<std::uint64_t, std::uint64_t>& demo_map() {
    static auto* map = [] {
        auto* m = new std::unordered_map<std::uint64_t, std::uint64_t>();
        m->reserve(1'000'000);
        for (std::uint64_t i = 0; i < 1'000'000; ++i) (*m)[i * 2654435761u] = i;
        return m;
    }();
    return *map;
}

// Hash-table lookup with input-dependent bucket work.
inline void hashmap_body(std::uint64_t input) {
    auto& m = demo_map();
    auto it = m.find((input % 1'000'000) * 2654435761u);
    volatile std::uint64_t sink = it == m.end() ? 0 : it->second;
    (void)sink;
}

}  // namespace padlock::demo
