#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace pmrt::cli {

enum ExitCode : int { kOk = 0, kUsage = 1, kData = 2 };

struct GlobalOptions {
  std::uint64_t seed = 0;
  bool seed_given = false;  // from --seed or PMRT_SEED
  unsigned threads = 0;     // 0 = hardware concurrency
  int verbosity = 1;
  std::filesystem::path output_dir;  // relative outputs resolve here when set
};

/// Runs one command line (without the program name). Errors go to `err` as
/// `error[<module>]: <message>`.
int run(std::span<const std::string> args, std::ostream& out, std::ostream& err);

int main_entry(int argc, char** argv);

}  // namespace pmrt::cli
