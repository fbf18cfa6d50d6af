// nowcast: data generation, training, prediction, baselines, evaluation and rendering.
#include <exception>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "nowcast/config.hpp"
#include "nowcast/errors.hpp"
#include "nowcast/experiment.hpp"

namespace {

struct Options {
  std::string config;
  std::vector<std::string> sets;
  std::string variant;
  std::string method;
  std::string data_dir;
  std::string run_dir;
};

void common_flags(CLI::App* cmd, Options& o) {
  cmd->add_option("-c,--config", o.config, "key=value config file")->check(CLI::ExistingFile);
  cmd->add_option("-s,--set", o.sets, "override, repeatable: key=value")->allow_extra_args(false);
  cmd->add_option("--data-dir", o.data_dir, "same as --set data_dir=...");
  cmd->add_option("--run-dir", o.run_dir, "same as --set run_dir=...");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Radar nowcasting experiments"};
  app.require_subcommand(1, 1);
  Options o;

  const std::vector<std::pair<std::string, std::string>> commands = {
      {"gen-data", "write synthetic train/test sequences"},
      {"train", "train a model variant"},
      {"predict", "forecast the test windows with a trained model"},
      {"baseline", "forecast the test windows with persistence or optical flow"},
      {"evaluate", "score forecasts against truth into metrics.csv"},
      {"render", "write PGM images of truth and forecast frames"},
  };
  for (const auto& [name, help] : commands) {
    auto* cmd = app.add_subcommand(name, help);
    common_flags(cmd, o);
    if (name == "train" || name == "predict")
      cmd->add_option("--variant", o.variant, "base | hrrr | lv | hrrr_lv");
    if (name == "baseline") cmd->add_option("--method", o.method, "persistence | optical_flow");
  }

  CLI11_PARSE(app, argc, argv);
  const std::string command = app.get_subcommands().front()->get_name();

  try {
    nowcast::KeyValueConfig kv;
    if (!o.config.empty()) kv = nowcast::KeyValueConfig::load(o.config);
    for (const auto& s : o.sets) kv.set_assignment(s);
    if (!o.variant.empty()) kv.set("variant", o.variant);
    if (!o.method.empty()) kv.set("baseline.method", o.method);
    if (!o.data_dir.empty()) kv.set("data_dir", o.data_dir);
    if (!o.run_dir.empty()) kv.set("run_dir", o.run_dir);
    nowcast::run_command(command, nowcast::ExperimentConfig::from_keys(kv));
  } catch (const std::exception& e) {
    std::string msg = e.what();
    for (auto& ch : msg)
      if (ch == '\n') ch = ' ';
    std::cerr << "nowcast " << command << ": error: " << msg << '\n';
    return 1;
  }
  return 0;
}
