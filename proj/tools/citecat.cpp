#include <cstdint>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "citecat/pipeline.hpp"
#include "citecat/version.hpp"

namespace {

bool wants_json_errors(int argc, char** argv) {
  // Checked by hand so even argument-parsing failures honor the flag.
  for (int i = 1; i < argc; ++i)
    if (std::string_view(argv[i]) == "--json-errors") return true;
  return false;
}

void report_error(bool json, const char* type, const std::string& message) {
  if (json) {
    nlohmann::json j{{"error", {{"type", type}, {"message", message}}}};
    std::cerr << j.dump() << "\n";
  } else {
    std::cerr << "citecat: " << type << " error: " << message << "\n";
  }
}

}  // namespace

int main(int argc, char** argv) {
  const bool json_errors = wants_json_errors(argc, argv);

  CLI::App app{"classify the purpose of scientific citation contexts"};
  app.set_version_flag("--version", citecat::kVersion);
  app.fallthrough();
  app.require_subcommand(1);

  std::string config_path;
  app.add_option("--config", config_path, "run config (JSON)")->required();
  uint64_t seed_value = 0;
  auto* seed_opt = app.add_option("--seed", seed_value, "override the config seed");
  std::string out_value;
  auto* out_opt = app.add_option("--out", out_value, "override the output directory");
  app.add_flag("--json-errors", "emit errors as JSON on standard error");

  auto* validate = app.add_subcommand("validate", "load all inputs and report counts");
  auto* featurize =
      app.add_subcommand("featurize", "write features.csv and the fitted tfidf.json");
  auto* train = app.add_subcommand("train", "train and write checkpoint.json + history.json");
  auto* predict =
      app.add_subcommand("predict", "write predictions.csv using a trained checkpoint");
  std::string input_value;
  predict->add_option("--input", input_value,
                      "citation records to predict (default: the config's citations)");
  auto* evaluate =
      app.add_subcommand("evaluate", "write metrics.json for the validation split");
  auto* ablate = app.add_subcommand("ablate", "write ablation.csv (leave-one-module-out)");
  auto* analyze = app.add_subcommand("analyze-features",
                                     "write feature_report.csv (per-class feature AUC)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    report_error(json_errors, "config", e.what());
    return 2;
  }

  try {
    std::optional<uint64_t> seed;
    if (seed_opt->count()) seed = seed_value;
    std::optional<std::filesystem::path> out;
    if (out_opt->count()) out = out_value;

    citecat::pipeline::RunConfig cfg =
        citecat::pipeline::load_run_config(config_path, seed, out);

    if (validate->parsed()) citecat::pipeline::cmd_validate(cfg, std::cout);
    else if (featurize->parsed()) citecat::pipeline::cmd_featurize(cfg, std::cout);
    else if (train->parsed()) citecat::pipeline::cmd_train(cfg, std::cout);
    else if (predict->parsed()) citecat::pipeline::cmd_predict(cfg, input_value, std::cout);
    else if (evaluate->parsed()) citecat::pipeline::cmd_evaluate(cfg, std::cout);
    else if (ablate->parsed()) citecat::pipeline::cmd_ablate(cfg, std::cout);
    else if (analyze->parsed()) citecat::pipeline::cmd_analyze_features(cfg, std::cout);
    return 0;
  } catch (const citecat::ConfigError& e) {
    report_error(json_errors, "config", e.what());
    return 2;
  } catch (const citecat::Error& e) {
    report_error(json_errors, "runtime", e.what());
    return 1;
  } catch (const std::exception& e) {
    report_error(json_errors, "runtime", e.what());
    return 1;
  }
}
