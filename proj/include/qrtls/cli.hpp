// cli.hpp: the `qrtls` command-line tool
//
// Subcommands: spectrum, drive-sim, fit, analytics, bench, locate-failure.
// Option precedence is flag > --config file > QRTLS_WORKERS (workers only) > default.
// Every artifact starts with "# key=value" lines echoing the effective configuration.

#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace qrtls::cli {

inline constexpr const char* artifact_version = "qrtls-artifact-1";

enum ExitCode : int {
    kOk = 0,
    kConfigError = 1,       // message names the offending key or option
    kNumericalFailure = 2,
    kPartialGrid = 3        // grid written, but some cells are NaN
};

// "start:stop:points", points >= 2. Errors name `option`.
struct AxisSpec {
    double start{0.0};
    double stop{0.0};
    int points{2};
    std::vector<double> values() const;
};
AxisSpec parse_axis(const std::string& text, const std::string& option);

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace qrtls::cli
