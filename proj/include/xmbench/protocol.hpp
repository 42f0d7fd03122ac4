#pragma once

#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "xmbench/dataset.hpp"

namespace xmb {

// One class-disjoint 50/50 split of the class ids.
struct ClassPartition {
  std::set<int> train_classes;
  std::set<int> test_classes;
};

// Disjoint database/query sample indices for the train-class and test-class
// halves of one fold.
struct SubsetAssignment {
  std::vector<int> train_db;
  std::vector<int> train_query;
  std::vector<int> test_db;
  std::vector<int> test_query;
};

struct Fold {
  ClassPartition partition;
  SubsetAssignment assignment;
  std::vector<std::string> dropped_samples;  // straddler ids, excluded entirely
};

struct FoldPlan {
  int n_folds = 5;
  std::uint64_t seed = 0;
  double fraction_db = 0.8;
  std::vector<Fold> folds;

  std::string to_json() const;
  static FoldPlan from_json(const std::string& text);
};

enum class TaskMode { non_xtd, xtd };
enum class Direction { image_to_text, text_to_image };

const char* task_mode_name(TaskMode mode);
const char* direction_name(Direction dir);
TaskMode parse_task_mode(const std::string& name);
Direction parse_direction(const std::string& name);

struct TaskSpec {
  TaskMode mode = TaskMode::non_xtd;
  Direction direction = Direction::image_to_text;
  int fold_index = 0;
};

// Binary relevance judgments of one query against a gallery.
struct RelevanceVector {
  std::vector<std::uint8_t> bits;
  int positives = 0;  // cl(q)
};

// Index views into the dataset for one (fold, task) cell. Queries come from
// query_modality rows of query_rows, the gallery from gallery_modality rows
// of gallery_rows, and training always uses the train-class database subset.
struct TaskViews {
  std::vector<int> train_rows;
  std::vector<int> query_rows;
  std::vector<int> gallery_rows;
  Modality query_modality = Modality::a;
  Modality gallery_modality = Modality::b;
};

// Per-sample database/query override, e.g. to honor a dataset's original
// train/test membership. Entries: 0 = database, 1 = query.
enum class SubsetRole : std::int8_t { database = 0, query = 1 };
using SubsetOverrides = std::optional<std::vector<SubsetRole>>;

// Shuffles class ids once per fold (fold seed = seed + fold_index), gives the
// first half (rounding up) to train_classes, drops samples whose labels
// straddle both halves, and splits each half into database/query subsets with
// per-class stratified sampling at fraction_db.
FoldPlan make_fold_plan(const CrossModalDataset& dataset, int n_folds,
                        std::uint64_t seed, double fraction_db,
                        const SubsetOverrides& overrides = std::nullopt);

SubsetAssignment assign_subsets(const CrossModalDataset& dataset,
                                const ClassPartition& partition,
                                double fraction_db, std::uint64_t seed,
                                const SubsetOverrides& overrides = std::nullopt,
                                std::vector<std::string>* dropped = nullptr);

// delta(q, i) = 1 iff the query shares at least one class label with gallery
// item i.
RelevanceVector ground_truth(const std::set<int>& query_labels,
                             const LabelTable& labels,
                             const std::vector<int>& gallery_rows);

TaskViews build_task(const FoldPlan& plan, const TaskSpec& task);

// Reads a sample_id,role CSV ("db"/"database" or "query" per sample) into
// dataset row order.
SubsetOverrides load_subset_overrides(const std::filesystem::path& path,
                                      const CrossModalDataset& dataset);

}  // namespace xmb
