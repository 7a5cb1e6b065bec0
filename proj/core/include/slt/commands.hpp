#pragma once

#include <iosfwd>
#include <string>

#include "slt/config.hpp"

namespace slt {

// Subcommand entry points shared by the CLI binary and the test suites.
// All of them echo the resolved config into the run directory and throw
// slt::Error subclasses on failure (the CLI maps kinds to exit codes).

void cmd_synth(const RunConfig& cfg, std::ostream& out);
void cmd_prepare(const RunConfig& cfg, std::ostream& out);
void cmd_train(const RunConfig& cfg, std::ostream& out);
void cmd_translate(const RunConfig& cfg, std::ostream& out);
void cmd_evaluate(const RunConfig& cfg, std::ostream& out);
void cmd_sweep(const RunConfig& cfg, std::ostream& out);

int exit_code_for(const std::exception& e);

}  // namespace slt
