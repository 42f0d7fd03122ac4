#include "xmbench/protocol.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "xmbench/rng.hpp"

namespace xmb {

using nlohmann::json;

namespace {

constexpr std::uint64_t kShuffleSalt = 0x73687566;
constexpr std::uint64_t kSubsetSalt = 0x73756273;

[[noreturn]] void fail(const std::string& msg) {
  throw std::runtime_error(msg);
}

// round-half-up; the db share of an n-sample class at fraction f
int db_count(double fraction, int n) {
  return static_cast<int>(std::floor(fraction * n + 0.5));
}

struct SideSplit {
  std::vector<int> db;
  std::vector<int> query;
};

// Stratified db/query sampling for the samples of one class half. Stratum of
// a sample = its smallest label inside this half's class set.
SideSplit split_side(const std::vector<int>& side_rows,
                     const CrossModalDataset& dataset,
                     const std::set<int>& side_classes, double fraction_db,
                     Rng& rng, const SubsetOverrides& overrides,
                     const char* side_name) {
  std::map<int, std::vector<int>> strata;
  SideSplit out;
  for (int row : side_rows) {
    if (overrides) {
      const auto role = (*overrides)[static_cast<std::size_t>(row)];
      (role == SubsetRole::database ? out.db : out.query).push_back(row);
      continue;
    }
    int stratum = -1;
    for (int l : dataset.labels.labels[static_cast<std::size_t>(row)])
      if (side_classes.count(l)) {
        stratum = l;
        break;
      }
    strata[stratum].push_back(row);
  }
  for (auto& [cls, rows] : strata) {
    rng.shuffle(rows);
    const int n_db = db_count(fraction_db, static_cast<int>(rows.size()));
    if (n_db >= static_cast<int>(rows.size()))
      fail(std::string("fraction_db leaves an empty query subset for class ") +
           std::to_string(cls) + " (" + side_name + " half, " +
           std::to_string(rows.size()) + " samples)");
    if (n_db == 0)
      fail(std::string("fraction_db leaves an empty database subset for class ") +
           std::to_string(cls) + " (" + side_name + " half, " +
           std::to_string(rows.size()) + " samples)");
    out.db.insert(out.db.end(), rows.begin(), rows.begin() + n_db);
    out.query.insert(out.query.end(), rows.begin() + n_db, rows.end());
  }
  std::sort(out.db.begin(), out.db.end());
  std::sort(out.query.begin(), out.query.end());
  return out;
}

json index_list(const std::vector<int>& v) { return json(v); }

}  // namespace

const char* task_mode_name(TaskMode mode) {
  return mode == TaskMode::non_xtd ? "non_xtd" : "xtd";
}

const char* direction_name(Direction dir) {
  return dir == Direction::image_to_text ? "i2t" : "t2i";
}

TaskMode parse_task_mode(const std::string& name) {
  if (name == "non_xtd") return TaskMode::non_xtd;
  if (name == "xtd") return TaskMode::xtd;
  fail("unknown task mode '" + name + "' (expected non_xtd or xtd)");
}

Direction parse_direction(const std::string& name) {
  if (name == "i2t" || name == "image_to_text") return Direction::image_to_text;
  if (name == "t2i" || name == "text_to_image") return Direction::text_to_image;
  fail("unknown direction '" + name + "' (expected i2t or t2i)");
}

SubsetAssignment assign_subsets(const CrossModalDataset& dataset,
                                const ClassPartition& partition,
                                double fraction_db, std::uint64_t seed,
                                const SubsetOverrides& overrides,
                                std::vector<std::string>* dropped) {
  if (fraction_db <= 0.0 || fraction_db >= 1.0)
    fail("fraction_db must be in (0, 1), got " + std::to_string(fraction_db));
  if (overrides &&
      overrides->size() != static_cast<std::size_t>(dataset.num_samples()))
    fail("subset overrides list has " + std::to_string(overrides->size()) +
         " entries for " + std::to_string(dataset.num_samples()) + " samples");

  std::vector<int> train_side, test_side;
  for (int i = 0; i < dataset.num_samples(); ++i) {
    const auto& labels = dataset.labels.labels[static_cast<std::size_t>(i)];
    bool in_train = false, in_test = false;
    for (int l : labels) {
      in_train = in_train || partition.train_classes.count(l) > 0;
      in_test = in_test || partition.test_classes.count(l) > 0;
    }
    if (in_train && in_test) {
      if (dropped) dropped->push_back(dataset.sample_ids[static_cast<std::size_t>(i)]);
    } else if (in_train) {
      train_side.push_back(i);
    } else if (in_test) {
      test_side.push_back(i);
    }
  }
  if (train_side.empty()) fail("train class half received zero usable samples");
  if (test_side.empty()) fail("test class half received zero usable samples");

  Rng rng(derive_seed(seed, kSubsetSalt));
  SubsetAssignment out;
  SideSplit train = split_side(train_side, dataset, partition.train_classes,
                               fraction_db, rng, overrides, "train");
  SideSplit test = split_side(test_side, dataset, partition.test_classes,
                              fraction_db, rng, overrides, "test");
  out.train_db = std::move(train.db);
  out.train_query = std::move(train.query);
  out.test_db = std::move(test.db);
  out.test_query = std::move(test.query);
  return out;
}

FoldPlan make_fold_plan(const CrossModalDataset& dataset, int n_folds,
                        std::uint64_t seed, double fraction_db,
                        const SubsetOverrides& overrides) {
  if (n_folds < 1) fail("n_folds must be >= 1, got " + std::to_string(n_folds));
  dataset.validate();
  const int num_classes = dataset.labels.num_classes;

  FoldPlan plan;
  plan.n_folds = n_folds;
  plan.seed = seed;
  plan.fraction_db = fraction_db;
  plan.folds.reserve(static_cast<std::size_t>(n_folds));

  for (int f = 0; f < n_folds; ++f) {
    const std::uint64_t fold_seed = seed + static_cast<std::uint64_t>(f);
    std::vector<int> class_order(static_cast<std::size_t>(num_classes));
    for (int c = 0; c < num_classes; ++c)
      class_order[static_cast<std::size_t>(c)] = c;
    Rng shuffle_rng(derive_seed(fold_seed, kShuffleSalt));
    shuffle_rng.shuffle(class_order);

    Fold fold;
    const int n_train = (num_classes + 1) / 2;  // odd count favors train
    fold.partition.train_classes.insert(class_order.begin(),
                                        class_order.begin() + n_train);
    fold.partition.test_classes.insert(class_order.begin() + n_train,
                                       class_order.end());
    fold.assignment =
        assign_subsets(dataset, fold.partition, fraction_db, fold_seed,
                       overrides, &fold.dropped_samples);
    plan.folds.push_back(std::move(fold));
  }
  return plan;
}

RelevanceVector ground_truth(const std::set<int>& query_labels,
                             const LabelTable& labels,
                             const std::vector<int>& gallery_rows) {
  if (query_labels.empty()) fail("ground_truth: empty query label set");
  if (gallery_rows.empty()) fail("ground_truth: empty gallery");
  RelevanceVector rel;
  rel.bits.resize(gallery_rows.size(), 0);
  for (std::size_t i = 0; i < gallery_rows.size(); ++i) {
    const auto& item =
        labels.labels[static_cast<std::size_t>(gallery_rows[i])];
    for (int l : query_labels)
      if (item.count(l)) {
        rel.bits[i] = 1;
        ++rel.positives;
        break;
      }
  }
  return rel;
}

TaskViews build_task(const FoldPlan& plan, const TaskSpec& task) {
  if (task.fold_index < 0 ||
      task.fold_index >= static_cast<int>(plan.folds.size()))
    fail("fold index " + std::to_string(task.fold_index) + " outside plan with " +
         std::to_string(plan.folds.size()) + " folds");
  const Fold& fold = plan.folds[static_cast<std::size_t>(task.fold_index)];

  TaskViews views;
  views.train_rows = fold.assignment.train_db;
  if (task.mode == TaskMode::non_xtd) {
    views.query_rows = fold.assignment.train_query;
    views.gallery_rows = fold.assignment.train_db;
  } else {
    views.query_rows = fold.assignment.test_query;
    views.gallery_rows = fold.assignment.test_db;
  }
  if (task.direction == Direction::image_to_text) {
    views.query_modality = Modality::a;
    views.gallery_modality = Modality::b;
  } else {
    views.query_modality = Modality::b;
    views.gallery_modality = Modality::a;
  }
  if (views.query_rows.empty()) fail("task has an empty query view");
  if (views.gallery_rows.empty()) fail("task has an empty gallery view");
  return views;
}

std::string FoldPlan::to_json() const {
  json j;
  j["n_folds"] = n_folds;
  j["seed"] = seed;
  j["fraction_db"] = fraction_db;
  j["folds"] = json::array();
  for (const auto& fold : folds) {
    json jf;
    jf["train_classes"] = json(fold.partition.train_classes);
    jf["test_classes"] = json(fold.partition.test_classes);
    jf["train_db"] = index_list(fold.assignment.train_db);
    jf["train_query"] = index_list(fold.assignment.train_query);
    jf["test_db"] = index_list(fold.assignment.test_db);
    jf["test_query"] = index_list(fold.assignment.test_query);
    jf["dropped_samples"] = json(fold.dropped_samples);
    j["folds"].push_back(std::move(jf));
  }
  return j.dump(2);
}

FoldPlan FoldPlan::from_json(const std::string& text) {
  json j = json::parse(text);
  FoldPlan plan;
  plan.n_folds = j.at("n_folds").get<int>();
  plan.seed = j.at("seed").get<std::uint64_t>();
  plan.fraction_db = j.at("fraction_db").get<double>();
  for (const auto& jf : j.at("folds")) {
    Fold fold;
    for (int c : jf.at("train_classes")) fold.partition.train_classes.insert(c);
    for (int c : jf.at("test_classes")) fold.partition.test_classes.insert(c);
    fold.assignment.train_db = jf.at("train_db").get<std::vector<int>>();
    fold.assignment.train_query = jf.at("train_query").get<std::vector<int>>();
    fold.assignment.test_db = jf.at("test_db").get<std::vector<int>>();
    fold.assignment.test_query = jf.at("test_query").get<std::vector<int>>();
    fold.dropped_samples =
        jf.at("dropped_samples").get<std::vector<std::string>>();
    plan.folds.push_back(std::move(fold));
  }
  if (static_cast<int>(plan.folds.size()) != plan.n_folds)
    fail("fold plan JSON: n_folds=" + std::to_string(plan.n_folds) +
         " but folds array has " + std::to_string(plan.folds.size()));
  return plan;
}

SubsetOverrides load_subset_overrides(const std::filesystem::path& path,
                                      const CrossModalDataset& dataset) {
  std::ifstream in(path);
  if (!in) fail("cannot open roles file " + path.string());
  std::map<std::string, SubsetRole> roles;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (lineno == 1 && line.rfind("sample_id,", 0) == 0) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos)
      fail(path.string() + ":" + std::to_string(lineno) +
           ": expected 'sample_id,role'");
    const std::string id = line.substr(0, comma);
    const std::string role = line.substr(comma + 1);
    if (role == "db" || role == "database")
      roles[id] = SubsetRole::database;
    else if (role == "query")
      roles[id] = SubsetRole::query;
    else
      fail(path.string() + ":" + std::to_string(lineno) + ": unknown role '" +
           role + "'");
  }
  std::vector<SubsetRole> out;
  out.reserve(dataset.sample_ids.size());
  for (const auto& id : dataset.sample_ids) {
    const auto it = roles.find(id);
    if (it == roles.end())
      fail(path.string() + ": no role for sample '" + id + "'");
    out.push_back(it->second);
  }
  return out;
}

}  // namespace xmb
