#pragma once

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <string>

#include "cedh/util.hpp"

namespace cedh::fixtures {

struct CliResult {
    int code = -1;
    std::string out;
    std::string err;
};

inline std::string cli_path() {
    const char* p = std::getenv("CEDH_CLI");
    return p ? p : "cedh";
}

// Runs the cedh binary with `args` (already shell-quoted), capturing output in `scratch`.
inline CliResult run_cli(const std::string& args, const std::filesystem::path& scratch) {
    const auto out = scratch / "stdout.txt";
    const auto err = scratch / "stderr.txt";
    const std::string cmd = "'" + cli_path() + "' " + args + " > '" + out.string() + "' 2> '" + err.string() + "'";
    const int status = std::system(cmd.c_str());
    CliResult r;
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.out = read_file(out);
    r.err = read_file(err);
    return r;
}

}  // namespace cedh::fixtures
