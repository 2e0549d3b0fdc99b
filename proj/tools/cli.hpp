#pragma once

// certkit command line: train, certify, attack, analyze, report.

#include <ostream>
#include <string>
#include <vector>

namespace certkit {

/// Runs one command. Failures print {"error": {"code", "message"}} to err and
/// return nonzero.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace certkit
