#pragma once

#include <sys/wait.h>
#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <sstream>
#include <string>
#include <vector>

#include "servoguard/cli.hpp"
#include "support.hpp"

namespace sgtest {

struct CliResult {
  int code = -1;
  std::string out;
  std::string err;
};

/// Runs the CLI in process.
inline CliResult run_cli(const std::vector<std::string>& args, const std::string& stdin_text = {}) {
  std::istringstream in(stdin_text);
  std::ostringstream out, err;
  CliResult r;
  r.code = servoguard::cli::run(args, {in, out, err});
  r.out = out.str();
  r.err = err.str();
  return r;
}

/// Exit status of a shell command line.
inline int shell(const std::string& command) {
  const int status = std::system(command.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

/// Per-test scratch directory, removed on destruction.
class ScratchDir {
public:
  explicit ScratchDir(const std::string& tag)
      : path_(std::filesystem::temp_directory_path() / ("servoguard_" + tag + "_" + std::to_string(::getpid()))) {
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~ScratchDir() { std::filesystem::remove_all(path_); }
  std::string operator/(const std::string& name) const { return (path_ / name).string(); }
  const std::filesystem::path& path() const { return path_; }

private:
  std::filesystem::path path_;
};

inline std::string slurp(const std::string& path) {
  const auto b = servoguard::read_file(path);
  return {b.begin(), b.end()};
}

}  // namespace sgtest
