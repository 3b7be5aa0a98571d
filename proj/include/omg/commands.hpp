#pragma once

// Command entry points shared by the C API and the command-line tool. Each
// takes a JSON run configuration (unknown keys rejected), writes its outputs
// plus the effective configuration, and returns a JSON summary.

#include "omg/error.hpp"

#include <string>

namespace omg {

/// command: pretrain, finetune, sample, eval, gen-data.
std::string run_command(const std::string& command, const std::string& config_json);

/// Effective configuration (defaults merged) without running anything.
std::string effective_config(const std::string& command, const std::string& config_json);

/// Process exit status for an error: 2 config, 3 data, 4 divergence,
/// 5 checkpoint mismatch, 6 unknown prompt, 1 anything else.
int exit_code_for(ErrorCode code);

}  // namespace omg
