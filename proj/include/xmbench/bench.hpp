#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "xmbench/dataset.hpp"
#include "xmbench/learners.hpp"
#include "xmbench/metrics.hpp"
#include "xmbench/protocol.hpp"
#include "xmbench/retrieval.hpp"

namespace xmb {

// One method column of the grid. For every method the real-valued embedding
// is evaluated; binarize=true adds one extra column per configured code
// length.
struct MethodConfig {
  std::string name;  // report label, unique; defaults to the kind name
  ModelKind kind = ModelKind::cm;
  int k = 0;          // cm subspace dim; 0 = min(#train classes, dims, rows-1)
  double reg = 1e-4;  // cm/scm covariance ridge
  double l2 = 1e-3;   // sm/scm/ts classifier weight penalty
  bool binarize = false;
  std::filesystem::path embeddings_a;  // precomputed kind only
  std::filesystem::path embeddings_b;
};

// Fully-defaulted run description. config_canonical_json() is the documented
// schema: every field appears, so the hash covers exactly what ran.
struct RunConfig {
  bool synthetic = true;
  SynthSpec synth;                     // when synthetic
  std::filesystem::path dataset_path;  // when !synthetic
  std::filesystem::path subset_overrides;  // optional role CSV

  int n_folds = 5;
  std::uint64_t seed = 7;
  double fraction_db = 0.8;

  Similarity similarity = Similarity::cosine;
  TiePolicy tie_policy;  // seed defaults to the run seed

  std::vector<MethodConfig> methods;       // default: cm, sm, scm, ts
  std::vector<TaskMode> modes;             // default: non_xtd, xtd
  std::vector<Direction> directions;       // default: i2t, t2i
  std::vector<int> code_lengths;           // default: 8, 16, 32
  int cmc_max_rank = 0;                    // 0 = full gallery in report cells
};

RunConfig parse_run_config(const nlohmann::json& j);
RunConfig load_run_config(const std::filesystem::path& path);
nlohmann::json config_canonical_json(const RunConfig& config);
nlohmann::json synth_spec_to_json(const SynthSpec& spec);
SynthSpec synth_spec_from_json(const nlohmann::json& j);

// FNV-1a over the canonical config JSON, as fixed-width hex.
std::string config_hash(const RunConfig& config);

struct RunOutcome {
  EvalReport report;
  nlohmann::json manifest;
  int failed_cells = 0;
};

// Executes the (fold x method x mode x direction x code) grid. Models are
// trained once per (fold, method) and reused across modes and directions.
// Cells are isolated: a failing cell is reported in place and the rest of the
// grid still runs. When out_dir is non-empty, trained models are cached there
// and reloaded on reruns with an unchanged config hash.
RunOutcome run_benchmark(const RunConfig& config,
                         const CrossModalDataset& dataset, int jobs,
                         const std::filesystem::path& out_dir);

// Loads the configured dataset (synthesizing when configured so).
CrossModalDataset acquire_dataset(const RunConfig& config);

// Writes report.json, summary.csv, per-aggregate cmc_<cell>.csv files and
// manifest.json. report.json carries no timings, so identical runs emit
// byte-identical reports.
void emit_report(const RunOutcome& outcome, const std::filesystem::path& out_dir);

// Scores an existing run file against a label table: per-query AP from the
// stored ordering (equal scores form tie groups, resolved analytically),
// plus the aggregate CMC. Query ids must appear in the label file.
nlohmann::json score_run(const RunFile& run,
                         const std::vector<std::string>& sample_ids,
                         const LabelTable& labels);

std::uint64_t fnv1a64(const std::string& text);

}  // namespace xmb
