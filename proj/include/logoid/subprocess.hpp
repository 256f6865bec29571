#pragma once

#include <map>
#include <string>

namespace logoid {

struct CommandResult {
  int exit_code = -1;
  std::string output;  // captured stdout
};

/// Replaces each "{key}" in the template with the shell-quoted value.
std::string expand_command(const std::string& tmpl, const std::map<std::string, std::string>& vars);

/// Runs a command through /bin/sh and captures stdout. Throws logoid::Error
/// when the shell cannot be started.
CommandResult run_command(const std::string& command);

/// Single-quote a string for /bin/sh.
std::string shell_quote(const std::string& value);

}  // namespace logoid
