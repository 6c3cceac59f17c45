// attrib: command-line driver for the attribution pipeline.
//
//   attrib <ingest|prune|topics|train|eval|predict> --config run.json [--seed N]
//   attrib predict --config run.json --text "..." [--token-vectors file]

#include <cstdint>
#include <exception>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "attrib/io.hpp"
#include "attrib/pipeline.hpp"

namespace {

void print_prediction(const attrib::pipeline::AdHocPrediction& r) {
  const auto& p = r.prediction;
  double top = p.ranked_factors.empty() ? 0.0 : p.ranked_factors.front().score;
  std::cout << "detected\t" << (p.detected ? "yes" : "no") << "\tmax_score=" << attrib::io::format_double(top, 6)
            << "\tthreshold=" << attrib::io::format_double(r.threshold, 6) << "\n";
  for (std::size_t i = 0; i < std::min<std::size_t>(3, p.ranked_categories.size()); ++i)
    std::cout << i + 1 << "\t" << p.ranked_categories[i].id << "\t"
              << attrib::io::format_double(p.ranked_categories[i].score, 6) << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Attribution-tie detection pipeline"};
  app.require_subcommand(1);

  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string text, token_vectors;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "Run config (JSON)")->required();
    sub->add_option("--seed", seed, "Override the config seed");
  };
  auto* ingest = app.add_subcommand("ingest", "Ingest a comment dump into a normalized corpus");
  auto* prune = app.add_subcommand("prune", "Score comments against factors and prune the corpus");
  auto* topics = app.add_subcommand("topics", "Fit an LDA topic model on the corpus");
  auto* train = app.add_subcommand("train", "Train the attribution model and tune its detection threshold");
  auto* eval = app.add_subcommand("eval", "Evaluate detection and resolution on the holdout split");
  auto* predict = app.add_subcommand("predict", "Score ad-hoc text with the trained model");
  for (auto* sub : {ingest, prune, topics, train, eval, predict}) add_common(sub);
  predict->add_option("--text", text, "Text to score")->required();
  predict->add_option("--token-vectors", token_vectors, "Token vectors for the text (contextual models)");

  CLI11_PARSE(app, argc, argv);

  try {
    auto cfg = attrib::pipeline::load_config(config_path, seed);
    if (*ingest) attrib::pipeline::cmd_ingest(cfg);
    if (*prune) attrib::pipeline::cmd_prune(cfg);
    if (*topics) attrib::pipeline::cmd_topics(cfg);
    if (*train) attrib::pipeline::cmd_train(cfg);
    if (*eval) {
      attrib::pipeline::cmd_eval(cfg);
      std::cout << attrib::io::read_file(cfg.stage_dir("eval") / "metrics.txt");
    }
    if (*predict) print_prediction(attrib::pipeline::cmd_predict(cfg, text, token_vectors));
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
