#include <CLI11.hpp>

#include "spinlab/cli.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Dipolar spin-cluster decoupling simulator"};
  app.set_version_flag("--version", spinlab::tool_version);
  app.require_subcommand(1);

  spinlab::cli::Options opt;
  std::string out, input;
  std::uint64_t seed = 0;
  const std::vector<std::pair<std::string, std::string>> commands{
      {"simulate", "Run one experiment and write the echo train"},
      {"scan", "Run the configured cycle-time or abundance scan"},
      {"aht", "Report average-Hamiltonian residuals and cycle-error scaling"},
      {"analyze", "Re-run the echo analysis on an existing echo-train CSV"}};
  std::vector<CLI::App*> subs;
  for (const auto& [name, help] : commands) {
    CLI::App* s = app.add_subcommand(name, help);
    s->add_option("--config", opt.config_path, "Experiment config (JSON)")->required();
    s->add_option("--out", out, "Output directory (default: output_dir from the config)");
    s->add_option("--workers", opt.workers, "Worker threads for realizations")->check(CLI::PositiveNumber);
    s->add_option("--seed-override", seed, "Replace the config base seed");
    s->add_flag("-v,--verbose", opt.verbose, "Log progress to stderr");
    if (name == "analyze") s->add_option("--input", input, "Echo-train CSV (default: OUT/echo_train.csv)");
    subs.push_back(s);
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return spinlab::cli::config_error;
  }

  std::string command;
  for (CLI::App* s : subs)
    if (s->parsed()) {
      command = s->get_name();
      if (!out.empty()) opt.out_dir = out;
      if (s->count("--seed-override")) opt.seed_override = seed;
      if (!input.empty()) opt.input = input;
    }
  return spinlab::cli::run(command, opt);
}
