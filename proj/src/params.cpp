#include "padlock/params.hpp"

#include <cctype>
#include <cerrno>
#include <charconv>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include <fcntl.h>
#include <sys/file.h>
#include <sys/stat.h>
#include <unistd.h>

namespace padlock {

namespace {

constexpr std::string_view kHeader = "PADPARAMS 1";

struct StatRev {
    std::uint64_t inode = 0;
    std::uint64_t size = 0;
    std::int64_t mtime_ns = 0;
};

StatRev stat_revision(const std::filesystem::path& path, bool& world_writable) {
    struct stat st{};
    if (::stat(path.c_str(), &st) != 0)
        throw ParamsError("params file missing: " + path.string() + " (padding unavailable, fail closed)");
    world_writable = (st.st_mode & S_IWOTH) != 0;
    StatRev r;
    r.inode = st.st_ino;
    r.size = static_cast<std::uint64_t>(st.st_size);
    r.mtime_ns = static_cast<std::int64_t>(st.st_mtim.tv_sec) * 1'000'000'000 + st.st_mtim.tv_nsec;
    return r;
}

[[noreturn]] void parse_fail(const std::filesystem::path& path, std::size_t byte_offset,
                             const std::string& what) {
    throw ParamsError("params parse error in " + path.string() + " at byte " +
                      std::to_string(byte_offset) + ": " + what);
}

// One `key=value` token; returns the value part or fails with the offset of
// the token.
std::string_view expect_field(const std::filesystem::path& path, std::string_view token,
                              std::size_t token_offset, std::string_view key) {
    if (token.size() <= key.size() + 1 || token.substr(0, key.size()) != key ||
        token[key.size()] != '=')
        parse_fail(path, token_offset, "expected " + std::string(key) + "=<value>, got '" +
                                           std::string(token) + "'");
    return token.substr(key.size() + 1);
}

std::uint64_t parse_u64_field(const std::filesystem::path& path, std::string_view value,
                              std::size_t offset, std::string_view key) {
    std::uint64_t v = 0;
    auto [p, ec] = std::from_chars(value.data(), value.data() + value.size(), v);
    if (ec != std::errc{} || p != value.data() + value.size())
        parse_fail(path, offset, "bad unsigned value for " + std::string(key));
    return v;
}

double parse_kappa_field(const std::filesystem::path& path, std::string_view value,
                         std::size_t offset) {
    std::string s(value);
    char* end = nullptr;
    double v = std::strtod(s.c_str(), &end);
    if (end != s.c_str() + s.size())
        parse_fail(path, offset, "bad decimal value for kappa");
    return v;
}

std::unordered_map<std::uint64_t, PaddingParams> parse_table(
    const std::filesystem::path& path, const std::string& text) {
    std::unordered_map<std::uint64_t, PaddingParams> table;

    std::size_t pos = 0;
    auto next_line = [&](std::string_view& line, std::size_t& line_start) {
        if (pos >= text.size()) return false;
        line_start = pos;
        std::size_t nl = text.find('\n', pos);
        if (nl == std::string::npos) {
            line = std::string_view(text).substr(pos);
            pos = text.size();
        } else {
            line = std::string_view(text).substr(pos, nl - pos);
            pos = nl + 1;
        }
        return true;
    };

    std::string_view line;
    std::size_t line_start = 0;
    if (!next_line(line, line_start) || line != kHeader)
        parse_fail(path, line_start, "expected header '" + std::string(kHeader) + "'");

    while (next_line(line, line_start)) {
        if (line.empty() || line[0] == '#') continue;

        // Tokenize on single spaces, tracking each token's byte offset.
        std::array<std::pair<std::string_view, std::size_t>, 9> tokens;
        std::size_t count = 0;
        std::size_t i = 0;
        while (i < line.size()) {
            while (i < line.size() && line[i] == ' ') ++i;
            if (i >= line.size()) break;
            std::size_t start = i;
            while (i < line.size() && line[i] != ' ') ++i;
            if (count == tokens.size())
                parse_fail(path, line_start + start, "unexpected extra field");
            tokens[count++] = {line.substr(start, i - start), line_start + start};
        }
        if (count < tokens.size())
            parse_fail(path, line_start + line.size(),
                       "truncated record: expected 9 fields, got " + std::to_string(count));

        PaddingParams p;
        {
            auto [tok, off] = tokens[0];
            std::string_view v = expect_field(path, tok, off, "id");
            if (v.size() != 16) parse_fail(path, off, "id must be 16 hex digits");
            std::uint64_t id = 0;
            auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), id, 16);
            if (ec != std::errc{} || ptr != v.data() + v.size())
                parse_fail(path, off, "id must be 16 hex digits");
            p.function_id = id;
        }
        p.t_max = parse_u64_field(path, expect_field(path, tokens[1].first, tokens[1].second, "tmax"),
                                  tokens[1].second, "tmax");
        p.t_penalty = parse_u64_field(path, expect_field(path, tokens[2].first, tokens[2].second, "tpenalty"),
                                      tokens[2].second, "tpenalty");
        p.t_overtime = parse_u64_field(path, expect_field(path, tokens[3].first, tokens[3].second, "tovertime"),
                                       tokens[3].second, "tovertime");
        std::uint64_t m = parse_u64_field(path, expect_field(path, tokens[4].first, tokens[4].second, "m"),
                                          tokens[4].second, "m");
        if (m > 255) parse_fail(path, tokens[4].second, "m must fit in 8 bits");
        p.m = static_cast<std::uint32_t>(m);
        std::uint64_t u = parse_u64_field(path, expect_field(path, tokens[5].first, tokens[5].second, "u"),
                                          tokens[5].second, "u");
        if (u > UINT32_MAX) parse_fail(path, tokens[5].second, "u must fit in 32 bits");
        p.u = u;
        std::uint64_t c = parse_u64_field(path, expect_field(path, tokens[6].first, tokens[6].second, "c"),
                                          tokens[6].second, "c");
        if (c > UINT32_MAX) parse_fail(path, tokens[6].second, "c must fit in 32 bits");
        p.c = c;
        p.kappa = parse_kappa_field(path, expect_field(path, tokens[7].first, tokens[7].second, "kappa"),
                                    tokens[7].second);
        p.generation = parse_u64_field(path, expect_field(path, tokens[8].first, tokens[8].second, "gen"),
                                       tokens[8].second, "gen");

        try {
            p.validate_for_store();
        } catch (const ParamsError& e) {
            parse_fail(path, line_start, e.what());
        }
        if (!table.emplace(p.function_id, p).second)
            parse_fail(path, line_start, "duplicate function id");
    }
    return table;
}

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParamsError("params file missing: " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::unordered_map<std::uint64_t, PaddingParams> load_table(const std::filesystem::path& path,
                                                            StatRev& rev_out) {
    bool world_writable = false;
    rev_out = stat_revision(path, world_writable);
    if (world_writable)
        throw ParamsError("params file " + path.string() +
                          " is world-writable; refusing to trust it (fail closed)");
    return parse_table(path, read_file(path));
}

void format_record(std::string& out, const PaddingParams& p) {
    char buf[256];
    std::snprintf(buf, sizeof(buf),
                  "id=%016llx tmax=%llu tpenalty=%llu tovertime=%llu m=%u u=%u c=%u kappa=%.9g gen=%llu\n",
                  static_cast<unsigned long long>(p.function_id),
                  static_cast<unsigned long long>(p.t_max),
                  static_cast<unsigned long long>(p.t_penalty),
                  static_cast<unsigned long long>(p.t_overtime),
                  p.m,
                  static_cast<unsigned>(p.u),
                  static_cast<unsigned>(p.c),
                  p.kappa,
                  static_cast<unsigned long long>(p.generation));
    out += buf;
}

// Writers mirror the permissions of the running binary (rw bits only), the
// same access rule the protected library itself lives under.
mode_t mirrored_mode() {
    struct stat st{};
    if (::stat("/proc/self/exe", &st) == 0) return st.st_mode & 0666;
    return 0644;
}

class LockFile {
public:
    explicit LockFile(const std::filesystem::path& path) {
        fd_ = ::open(path.c_str(), O_CREAT | O_RDWR | O_CLOEXEC, 0644);
        if (fd_ < 0) throw ParamsError("cannot open lock file " + path.string());
        if (::flock(fd_, LOCK_EX | LOCK_NB) != 0) {
            int err = errno;
            ::close(fd_);
            fd_ = -1;
            if (err == EWOULDBLOCK)
                throw LockBusyError("params lock held by another writer: " + path.string());
            throw ParamsError("flock failed on " + path.string());
        }
    }
    ~LockFile() {
        if (fd_ >= 0) ::close(fd_);
    }
    LockFile(const LockFile&) = delete;
    LockFile& operator=(const LockFile&) = delete;

private:
    int fd_ = -1;
};

}  // namespace

std::uint64_t function_id(std::string_view name) {
    std::uint64_t h = 14695981039346656037ull;
    for (unsigned char ch : name) {
        h ^= ch;
        h *= 1099511628211ull;
    }
    return h;
}

void PaddingParams::validate_structure() const {
    if (t_max == 0) throw ParamsError("t_max must be > 0");
    if (u == 0) throw ParamsError("u must be >= 1");
    if (m > 255) throw ParamsError("m must fit in 8 bits");
    if (!(kappa >= 0.0 && kappa < 1.0)) throw ParamsError("kappa must lie in [0, 1)");
}

void PaddingParams::validate_for_store() const {
    validate_structure();
    if (m < kMinSafeRounds)
        throw ParamsError("m must be >= " + std::to_string(kMinSafeRounds) +
                          " randomization rounds");
}

ParamsHandle ParamsHandle::load(const std::filesystem::path& path) {
    ParamsHandle h;
    h.path_ = path;
    StatRev rev;
    h.table_ = load_table(path, rev);
    h.revision_ = Revision{rev.inode, rev.size, rev.mtime_ns};
    return h;
}

void ParamsHandle::refresh_if_changed_() {
    bool world_writable = false;
    StatRev rev = stat_revision(path_, world_writable);
    if (Revision{rev.inode, rev.size, rev.mtime_ns} == revision_) return;
    StatRev fresh;
    table_ = load_table(path_, fresh);
    revision_ = Revision{fresh.inode, fresh.size, fresh.mtime_ns};
}

PaddingParams ParamsHandle::lookup(std::uint64_t function_id) {
    refresh_if_changed_();
    auto it = table_.find(function_id);
    if (it == table_.end()) {
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(function_id));
        throw UnknownFunctionError(std::string("no padding parameters for function id ") + buf +
                                   " (fail closed)");
    }
    return it->second;
}

std::uint64_t update_params(const std::filesystem::path& path, PaddingParams record) {
    record.validate_for_store();

    LockFile lock(path.string() + ".lock");

    std::unordered_map<std::uint64_t, PaddingParams> table;
    if (std::filesystem::exists(path)) {
        StatRev rev;
        table = load_table(path, rev);
    }

    std::uint64_t prev_gen = 0;
    if (auto it = table.find(record.function_id); it != table.end())
        prev_gen = it->second.generation;
    record.generation = prev_gen + 1;
    table[record.function_id] = record;

    // Deterministic record order keeps the file diffable.
    std::map<std::uint64_t, PaddingParams> ordered(table.begin(), table.end());
    std::string text(kHeader);
    text += '\n';
    for (const auto& [id, p] : ordered) format_record(text, p);

    std::filesystem::path tmp = path;
    tmp += ".tmp." + std::to_string(::getpid());
    int fd = ::open(tmp.c_str(), O_CREAT | O_TRUNC | O_WRONLY | O_CLOEXEC, 0600);
    if (fd < 0) throw ParamsError("cannot create temp params file " + tmp.string());
    const char* data = text.data();
    std::size_t left = text.size();
    while (left > 0) {
        ssize_t w = ::write(fd, data, left);
        if (w < 0) {
            ::close(fd);
            ::unlink(tmp.c_str());
            throw ParamsError("write failed on " + tmp.string());
        }
        data += w;
        left -= static_cast<std::size_t>(w);
    }
    ::fchmod(fd, mirrored_mode());
    ::fsync(fd);
    ::close(fd);
    if (::rename(tmp.c_str(), path.c_str()) != 0) {
        ::unlink(tmp.c_str());
        throw ParamsError("atomic rename onto " + path.string() + " failed");
    }
    return record.generation;
}

std::filesystem::path default_params_path() {
    if (const char* env = std::getenv("PADLOCK_PARAMS"); env && *env)
        return std::filesystem::path(env);
    return std::filesystem::path("padlock_params.txt");
}

}  // namespace padlock
