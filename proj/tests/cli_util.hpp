#pragma once

// Helpers for driving the ensel executable from tests.

#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

namespace cliutil {

struct Result {
    int exit_code = -1;
    std::string out, err;
};

inline std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline std::string quote(const std::string& s) { return "'" + s + "'"; }

// Runs `exe args` through the shell, capturing stdout and stderr.
inline Result run(const std::string& exe, const std::string& args) {
    static int counter = 0;
    namespace fs = std::filesystem;
    const auto base = (fs::temp_directory_path() /
                       ("ensel-cli-" + std::to_string(::getpid()) + "-" + std::to_string(counter++)))
                          .string();
    const std::string cmd = quote(exe) + " " + args + " >" + quote(base + ".out") + " 2>" + quote(base + ".err");
    const int status = std::system(cmd.c_str());
    Result r;
    r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.out = slurp(base + ".out");
    r.err = slurp(base + ".err");
    fs::remove(base + ".out");
    fs::remove(base + ".err");
    return r;
}

// Same relative file list and byte-identical regular files.
inline bool same_tree(const std::filesystem::path& a, const std::filesystem::path& b) {
    namespace fs = std::filesystem;
    std::vector<fs::path> fa, fb;
    for (const auto& e : fs::recursive_directory_iterator(a)) fa.push_back(fs::relative(e.path(), a));
    for (const auto& e : fs::recursive_directory_iterator(b)) fb.push_back(fs::relative(e.path(), b));
    std::sort(fa.begin(), fa.end());
    std::sort(fb.begin(), fb.end());
    if (fa != fb) return false;
    for (const auto& f : fa)
        if (fs::is_regular_file(a / f) && slurp(a / f) != slurp(b / f)) return false;
    return true;
}

}  // namespace cliutil
