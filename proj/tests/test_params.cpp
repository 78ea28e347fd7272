#include <doctest.h>

#include <atomic>
#include <filesystem>
#include <fstream>
#include <thread>

#include <unistd.h>

#include "padlock/params.hpp"

using namespace padlock;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() / ("padlock_test_" + std::to_string(::getpid()) + "_" +
                                            std::to_string(counter()++));
        fs::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path, ec);
    }
    static int& counter() {
        static int c = 0;
        return c;
    }
};

PaddingParams sample_params(std::uint64_t id, Cycles t_max = 5000) {
    PaddingParams p;
    p.function_id = id;
    p.t_max = t_max;
    p.t_penalty = 690000;
    p.t_overtime = 2 * t_max;
    p.m = 5;
    p.u = 28;
    p.c = 46;
    p.kappa = 1e-5;
    return p;
}

}  // namespace

TEST_CASE("function_id is a stable 64-bit hash") {
    CHECK(function_id("toy") == function_id("toy"));
    CHECK(function_id("toy") != function_id("hashmap"));
    // FNV-1a offset basis for the empty string
    CHECK(function_id("") == 14695981039346656037ull);
}

TEST_CASE("load reads back what update wrote") {
    TempDir dir;
    fs::path file = dir.path / "params.txt";
    update_params(file, sample_params(1));
    update_params(file, sample_params(2, 9000));

    ParamsHandle h = ParamsHandle::load(file);
    CHECK(h.size() == 2);
    CHECK(h.lookup(1).t_max == 5000);
    CHECK(h.lookup(2).t_max == 9000);
    CHECK(h.lookup(1).kappa == doctest::Approx(1e-5));
}

TEST_CASE("missing file fails closed") {
    CHECK_THROWS_AS(ParamsHandle::load("/nonexistent/padlock_params.txt"), ParamsError);
}

TEST_CASE("truncated record names the byte offset") {
    TempDir dir;
    fs::path file = dir.path / "params.txt";
    std::ofstream(file) << "PADPARAMS 1\nid=0000000000000001 tmax=5000\n";
    try {
        ParamsHandle::load(file);
        FAIL("expected ParamsError");
    } catch (const ParamsError& e) {
        std::string msg = e.what();
        CHECK(msg.find("at byte") != std::string::npos);
        CHECK(msg.find("truncated") != std::string::npos);
    }
}

TEST_CASE("bad header is a parse error") {
    TempDir dir;
    fs::path file = dir.path / "params.txt";
    std::ofstream(file) << "PADPARAMS 2\n";
    CHECK_THROWS_AS(ParamsHandle::load(file), ParamsError);
}

TEST_CASE("empty file with a valid header has zero entries and fails lookups closed") {
    TempDir dir;
    fs::path file = dir.path / "params.txt";
    std::ofstream(file) << "PADPARAMS 1\n";
    ParamsHandle h = ParamsHandle::load(file);
    CHECK(h.size() == 0);
    CHECK_THROWS_AS(h.lookup(1), UnknownFunctionError);
}

TEST_CASE("lookup picks up an external update at the next call") {
    TempDir dir;
    fs::path file = dir.path / "params.txt";
    std::uint64_t gen1 = update_params(file, sample_params(7, 5000));

    ParamsHandle h = ParamsHandle::load(file);
    CHECK(h.lookup(7).t_max == 5000);
    CHECK(h.lookup(7).generation == gen1);

    std::uint64_t gen2 = update_params(file, sample_params(7, 6000));
    CHECK(gen2 == gen1 + 1);

    PaddingParams seen = h.lookup(7);
    CHECK(seen.t_max == 6000);
    CHECK(seen.generation == gen2);
}

TEST_CASE("snapshots taken earlier are unaffected by updates") {
    TempDir dir;
    fs::path file = dir.path / "params.txt";
    update_params(file, sample_params(7, 5000));
    ParamsHandle h = ParamsHandle::load(file);

    PaddingParams snapshot = h.lookup(7);  // as begin_protected would take it
    update_params(file, sample_params(7, 6000));
    CHECK(snapshot.t_max == 5000);
    CHECK(h.lookup(7).t_max == 6000);
}

TEST_CASE("unknown id fails closed") {
    TempDir dir;
    fs::path file = dir.path / "params.txt";
    update_params(file, sample_params(1));
    ParamsHandle h = ParamsHandle::load(file);
    CHECK_THROWS_AS(h.lookup(999), UnknownFunctionError);
}

TEST_CASE("store rejects records below the safe randomization minimum") {
    TempDir dir;
    fs::path file = dir.path / "params.txt";
    PaddingParams p = sample_params(1);
    p.m = 1;
    CHECK_THROWS_AS(update_params(file, p), ParamsError);
    CHECK_FALSE(fs::exists(file));
}

TEST_CASE("world-writable params files are rejected at load") {
    TempDir dir;
    fs::path file = dir.path / "params.txt";
    update_params(file, sample_params(1));
    fs::permissions(file, fs::perms::owner_all | fs::perms::others_write,
                    fs::perm_options::replace);
    CHECK_THROWS_AS(ParamsHandle::load(file), ParamsError);
}

TEST_CASE("serialized updates to one record bump its generation each time") {
    TempDir dir;
    fs::path file = dir.path / "params.txt";
    std::uint64_t g1 = update_params(file, sample_params(3, 1000));
    std::uint64_t g2 = update_params(file, sample_params(3, 2000));
    CHECK(g2 == g1 + 1);
    ParamsHandle h = ParamsHandle::load(file);
    CHECK(h.lookup(3).generation == g1 + 1);
    CHECK(h.lookup(3).t_max == 2000);
}

TEST_CASE("readers racing a writer never observe a torn table") {
    TempDir dir;
    fs::path file = dir.path / "params.txt";
    update_params(file, sample_params(5, 1000));

    std::atomic<bool> stop{false};
    std::atomic<int> failures{0};
    std::thread writer([&] {
        // tmax and tovertime move together; a torn read would break the pair
        for (Cycles t = 1001; t <= 1250; ++t) {
            PaddingParams p = sample_params(5, t);
            update_params(file, p);
        }
        stop = true;
    });

    while (!stop) {
        try {
            ParamsHandle h = ParamsHandle::load(file);
            PaddingParams p = h.lookup(5);
            if (p.t_overtime != 2 * p.t_max) ++failures;
        } catch (const ParamsError&) {
            ++failures;  // a reader must never see a partial file
        }
    }
    writer.join();
    CHECK(failures == 0);
}

TEST_CASE("default path honors PADLOCK_PARAMS") {
    ::setenv("PADLOCK_PARAMS", "/tmp/custom_params.txt", 1);
    CHECK(default_params_path() == fs::path("/tmp/custom_params.txt"));
    ::unsetenv("PADLOCK_PARAMS");
    CHECK(default_params_path() == fs::path("padlock_params.txt"));
}
