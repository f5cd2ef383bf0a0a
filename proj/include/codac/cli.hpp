#pragma once

#include "codac/cde_operators.hpp"
#include "codac/trainer.hpp"

#include <nlohmann/json.hpp>

#include <iosfwd>
#include <map>
#include <string>
#include <vector>

namespace codac {

enum ExitCode : int {
    exit_ok = 0,
    exit_verification_failed = 1,
    exit_usage = 2,
    exit_data = 3,
};

struct RunManifest {
    std::string command;
    std::string config_path;
    uint64_t seed = 0;
    std::vector<std::string> inputs;
    std::vector<std::string> outputs;
    std::string version;
    double wall_seconds = 0.0;
};

nlohmann::json manifest_to_json(const RunManifest &manifest);

/// Path of the manifest written next to `output`.
std::string manifest_path(const std::string &output);

/// Version string baked in at configure time (git describe when available).
std::string artifact_version();

using FlatConfig = std::map<std::string, std::string>;

/// Parses `key = value` lines; '#' starts a comment. Throws std::invalid_argument
/// on malformed lines or repeated keys.
FlatConfig parse_flat_config(std::istream &in);
FlatConfig read_flat_config(const std::string &path);

/// Applies the keys that name TrainerConfig fields and removes them from `config`.
void apply_trainer_keys(FlatConfig &config, TrainerConfig &out);
void apply_cde_keys(FlatConfig &config, CdeConfig &out);

DistortionSpec distortion_from_string(const std::string &name);

/// Entry point behind the `codac` executable. Returns one of ExitCode.
int run_cli(int argc, const char *const *argv, std::ostream &out, std::ostream &err);

} // namespace codac
