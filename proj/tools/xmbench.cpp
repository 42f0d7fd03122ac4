#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI/CLI.hpp>
#include <nlohmann/json.hpp>

#include "xmbench/bench.hpp"

namespace fs = std::filesystem;

namespace {

int cmd_run(const std::string& config_path, const std::string& out_dir,
            int jobs) {
  xmb::RunConfig config = xmb::load_run_config(config_path);
  xmb::CrossModalDataset dataset = xmb::acquire_dataset(config);
  std::fprintf(stderr, "dataset '%s': %d samples, %d classes (config %s)\n",
               dataset.name.c_str(), dataset.num_samples(),
               dataset.labels.num_classes, xmb::config_hash(config).c_str());
  xmb::RunOutcome outcome =
      xmb::run_benchmark(config, dataset, jobs, fs::path(out_dir));
  xmb::emit_report(outcome, fs::path(out_dir));
  int scored = 0;
  for (const xmb::CellResult& cell : outcome.report.cells) {
    if (cell.ok()) ++scored;
  }
  std::fprintf(stderr, "%d/%zu cells scored, %zu aggregates -> %s\n", scored,
               outcome.report.cells.size(), outcome.report.aggregates.size(),
               out_dir.c_str());
  if (outcome.failed_cells > 0) {
    for (const xmb::CellResult& cell : outcome.report.cells) {
      if (!cell.ok()) {
        std::fprintf(stderr, "FAILED %s: %s\n", cell.key().c_str(),
                     cell.error.c_str());
      }
    }
    return 1;
  }
  return 0;
}

int cmd_split(const std::string& dataset_dir, std::uint64_t seed, int folds,
              double fraction_db, const std::string& out_file) {
  xmb::CrossModalDataset dataset = xmb::load_dataset(dataset_dir);
  xmb::FoldPlan plan = xmb::make_fold_plan(dataset, folds, seed, fraction_db);
  std::string text = plan.to_json();
  if (out_file.empty()) {
    std::cout << text << "\n";
  } else {
    std::ofstream out(out_file, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + out_file);
    out << text << "\n";
  }
  return 0;
}

int cmd_score(const std::string& run_path, const std::string& qrels_path,
              const std::string& out_file) {
  xmb::RunFile run = xmb::read_run_file(run_path);
  xmb::LabeledIds qrels = xmb::read_label_table(qrels_path);
  nlohmann::json result = xmb::score_run(run, qrels.sample_ids, qrels.labels);
  std::string text = result.dump(2);
  if (out_file.empty()) {
    std::cout << text << "\n";
  } else {
    std::ofstream out(out_file, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + out_file);
    out << text << "\n";
  }
  return 0;
}

int cmd_synth(const std::string& spec_path, const std::string& out_dir) {
  xmb::SynthSpec spec;
  if (!spec_path.empty()) {
    std::ifstream in(spec_path);
    if (!in) throw std::runtime_error("cannot open spec file: " + spec_path);
    nlohmann::json j;
    in >> j;
    spec = xmb::synth_spec_from_json(j);
  }
  xmb::CrossModalDataset dataset = xmb::generate_synthetic(spec);
  xmb::write_dataset(dataset, out_dir);
  std::fprintf(stderr, "wrote %d samples x (%d + %d dims), %d classes -> %s\n",
               dataset.num_samples(), static_cast<int>(dataset.modality_a.cols()),
               static_cast<int>(dataset.modality_b.cols()),
               dataset.labels.num_classes, out_dir.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Cross-modal retrieval benchmark harness"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_dir = "bench_out";
  int jobs = 0;
  CLI::App* run = app.add_subcommand(
      "run", "Execute the fold x mode x direction x method grid");
  run->add_option("--config", config_path, "Run config JSON")
      ->required()
      ->check(CLI::ExistingFile);
  run->add_option("--out", out_dir, "Output directory (default bench_out)");
  run->add_option("--jobs", jobs, "Worker threads (default: hardware)");

  std::string dataset_dir;
  std::uint64_t seed = 7;
  int folds = 5;
  double fraction_db = 0.8;
  std::string split_out;
  CLI::App* split =
      app.add_subcommand("split", "Emit the fold plan JSON for a dataset");
  split->add_option("--dataset", dataset_dir, "Dataset directory")
      ->required()
      ->check(CLI::ExistingDirectory);
  split->add_option("--seed", seed, "Base seed")->required();
  split->add_option("--folds", folds, "Number of folds")->required();
  split->add_option("--fraction-db", fraction_db,
                    "Database fraction per class (default 0.8)");
  split->add_option("--out", split_out, "Output file (default stdout)");

  std::string run_path;
  std::string qrels_path;
  std::string score_out;
  CLI::App* score = app.add_subcommand(
      "score", "Score an existing run file against relevance labels");
  score->add_option("--run", run_path, "Run file (binary or TREC text)")
      ->required()
      ->check(CLI::ExistingFile);
  score->add_option("--qrels", qrels_path, "sample_id,labels CSV")
      ->required()
      ->check(CLI::ExistingFile);
  score->add_option("--out", score_out, "Output file (default stdout)");

  std::string spec_path;
  std::string synth_out;
  CLI::App* synth =
      app.add_subcommand("synth", "Generate a synthetic dataset directory");
  synth->add_option("--spec", spec_path, "Synthetic spec JSON (default spec if omitted)")
      ->check(CLI::ExistingFile);
  synth->add_option("--out", synth_out, "Output dataset directory")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (run->parsed()) return cmd_run(config_path, out_dir, jobs);
    if (split->parsed()) return cmd_split(dataset_dir, seed, folds, fraction_db, split_out);
    if (score->parsed()) return cmd_score(run_path, qrels_path, score_out);
    if (synth->parsed()) return cmd_synth(spec_path, synth_out);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 0;
}
