#pragma once

#include <CLI11.hpp>

namespace geoclr::cli {

/// Registers gen-data, cluster, pretrain, probe, finetune, eval and report.
/// Each subcommand runs from its parse callback; failures surface as
/// geoclr::Error (ConfigError for usage problems).
void add_commands(CLI::App& app);

}  // namespace geoclr::cli
