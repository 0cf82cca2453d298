#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

namespace eqflow::cli {

inline constexpr int exit_ok = 0;
inline constexpr int exit_failure = 1;
inline constexpr int exit_usage = 2;

/// Every config file carries this version under "schema_version".
inline constexpr int schema_version = 1;

/// Malformed or inconsistent configuration; maps to exit code 2.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ExperimentSpec {
  std::string command;
  std::string config_path;
  std::string out_dir;
  std::optional<std::uint64_t> seed;
  bool timestamp = true;
  /// Positional run directories for `report`.
  std::vector<std::string> run_dirs;
};

/// Parses the file and checks schema_version and, when given, the command.
nlohmann::json load_config(const std::string& path, const std::string& command = "");

int cmd_verify(const ExperimentSpec& spec, std::ostream& out);
int cmd_train(const ExperimentSpec& spec, std::ostream& out);
int cmd_converge(const ExperimentSpec& spec, std::ostream& out);
int cmd_partition(const ExperimentSpec& spec, std::ostream& out);
int cmd_report(const ExperimentSpec& spec, std::ostream& out);

/// Full command line including the program name. Never throws.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace eqflow::cli
