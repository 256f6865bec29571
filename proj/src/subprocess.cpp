#include "logoid/subprocess.hpp"

#include "logoid/common.hpp"

#include <array>
#include <cstdio>
#include <fmt/format.h>
#include <sys/wait.h>

namespace logoid {

std::string shell_quote(const std::string& value) {
  std::string out = "'";
  for (char c : value) {
    if (c == '\'') {
      out += "'\\''";
    } else {
      out += c;
    }
  }
  out += "'";
  return out;
}

std::string expand_command(const std::string& tmpl,
                           const std::map<std::string, std::string>& vars) {
  std::string out = tmpl;
  for (const auto& [key, value] : vars) {
    const std::string needle = "{" + key + "}";
    const std::string quoted = shell_quote(value);
    for (std::size_t pos = out.find(needle); pos != std::string::npos;
         pos = out.find(needle, pos + quoted.size())) {
      out.replace(pos, needle.size(), quoted);
    }
  }
  return out;
}

CommandResult run_command(const std::string& command) {
  FILE* pipe = ::popen(command.c_str(), "r");
  if (pipe == nullptr) throw Error(fmt::format("cannot start command: {}", command));
  CommandResult result;
  std::array<char, 4096> buffer;
  std::size_t n;
  while ((n = std::fread(buffer.data(), 1, buffer.size(), pipe)) > 0) {
    result.output.append(buffer.data(), n);
  }
  const int status = ::pclose(pipe);
  result.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return result;
}

}  // namespace logoid
