#include <exception>
#include <iostream>

#include <CLI11.hpp>

#include "commands.hpp"
#include "geoclr/errors.hpp"

// Exit codes: 0 success, 1 usage or configuration error, 2 runtime error.
int main(int argc, char** argv) {
  CLI::App app{"geoclr: geography-aware contrastive pretraining and evaluation"};
  app.option_defaults()->always_capture_default();
  app.require_subcommand(1);
  geoclr::cli::add_commands(app);
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  } catch (const geoclr::ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
