#include "xmbench/bench.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <fstream>
#include <set>
#include <stdexcept>
#include <thread>
#include <unordered_map>

#include "xmbench/rng.hpp"

namespace xmb {

namespace {

using nlohmann::json;

[[noreturn]] void fail(const std::string& message) {
  throw std::runtime_error(message);
}

// Rejects unknown keys so config typos surface instead of silently falling
// back to defaults.
void check_keys(const json& j, std::initializer_list<const char*> allowed,
                const std::string& where) {
  for (const auto& item : j.items()) {
    bool known = false;
    for (const char* key : allowed) {
      if (item.key() == key) {
        known = true;
        break;
      }
    }
    if (!known) fail("config: unknown key '" + item.key() + "' in " + where);
  }
}

double get_number(const json& j, const char* key, double fallback) {
  if (!j.contains(key)) return fallback;
  if (!j[key].is_number()) fail(std::string("config: ") + key + " must be a number");
  return j[key].get<double>();
}

int get_int(const json& j, const char* key, int fallback) {
  if (!j.contains(key)) return fallback;
  if (!j[key].is_number_integer()) {
    fail(std::string("config: ") + key + " must be an integer");
  }
  return j[key].get<int>();
}

std::uint64_t get_seed(const json& j, const char* key, std::uint64_t fallback) {
  if (!j.contains(key)) return fallback;
  if (!j[key].is_number_integer() || j[key].is_number_float()) {
    fail(std::string("config: ") + key + " must be an integer seed");
  }
  return j[key].get<std::uint64_t>();
}

std::string get_string(const json& j, const char* key,
                       const std::string& fallback) {
  if (!j.contains(key)) return fallback;
  if (!j[key].is_string()) fail(std::string("config: ") + key + " must be a string");
  return j[key].get<std::string>();
}

bool get_bool(const json& j, const char* key, bool fallback) {
  if (!j.contains(key)) return fallback;
  if (!j[key].is_boolean()) fail(std::string("config: ") + key + " must be a boolean");
  return j[key].get<bool>();
}

}  // namespace

std::uint64_t fnv1a64(const std::string& text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

json synth_spec_to_json(const SynthSpec& spec) {
  return {{"num_classes", spec.num_classes},
          {"samples_per_class", spec.samples_per_class},
          {"dim_a", spec.dim_a},
          {"dim_b", spec.dim_b},
          {"class_separation", spec.class_separation},
          {"cross_modal_correlation", spec.cross_modal_correlation},
          {"multilabel_rate", spec.multilabel_rate},
          {"seed", spec.seed}};
}

SynthSpec synth_spec_from_json(const json& j) {
  if (!j.is_object()) fail("config: synthetic spec must be an object");
  check_keys(j,
             {"num_classes", "samples_per_class", "dim_a", "dim_b",
              "class_separation", "cross_modal_correlation", "multilabel_rate",
              "seed"},
             "synthetic spec");
  SynthSpec spec;
  spec.num_classes = get_int(j, "num_classes", spec.num_classes);
  spec.samples_per_class = get_int(j, "samples_per_class", spec.samples_per_class);
  spec.dim_a = get_int(j, "dim_a", spec.dim_a);
  spec.dim_b = get_int(j, "dim_b", spec.dim_b);
  spec.class_separation = get_number(j, "class_separation", spec.class_separation);
  spec.cross_modal_correlation =
      get_number(j, "cross_modal_correlation", spec.cross_modal_correlation);
  spec.multilabel_rate = get_number(j, "multilabel_rate", spec.multilabel_rate);
  spec.seed = get_seed(j, "seed", spec.seed);
  return spec;
}

namespace {

ModelKind method_kind_from_config(const json& j) {
  std::string kind = get_string(j, "kind", "");
  if (kind.empty()) kind = get_string(j, "name", "");
  if (kind.empty()) fail("config: method entry needs a 'kind' (or shorthand 'name')");
  if (kind == "cm") return ModelKind::cm;
  if (kind == "sm") return ModelKind::sm;
  if (kind == "scm") return ModelKind::scm;
  if (kind == "ts") return ModelKind::ts;
  if (kind == "precomputed") return ModelKind::precomputed;
  fail("config: unknown method kind '" + kind + "'");
}

MethodConfig parse_method(const json& j) {
  if (!j.is_object()) fail("config: each methods[] entry must be an object");
  check_keys(j,
             {"name", "kind", "k", "reg", "l2", "binarize", "embeddings_a",
              "embeddings_b"},
             "methods[]");
  MethodConfig m;
  m.kind = method_kind_from_config(j);
  m.name = get_string(j, "name", model_kind_name(m.kind));
  m.k = get_int(j, "k", 0);
  m.reg = get_number(j, "reg", m.reg);
  m.l2 = get_number(j, "l2", m.l2);
  m.binarize = get_bool(j, "binarize", false);
  m.embeddings_a = get_string(j, "embeddings_a", "");
  m.embeddings_b = get_string(j, "embeddings_b", "");
  if (m.k < 0) fail("config: method k must be >= 0");
  if (m.reg < 0.0) fail("config: method reg must be >= 0");
  if (m.l2 < 0.0) fail("config: method l2 must be >= 0");
  if (m.binarize && m.kind == ModelKind::ts) {
    fail("config: ts predictions are already discrete; binarize does not apply");
  }
  if (m.kind == ModelKind::precomputed) {
    if (m.embeddings_a.empty() || m.embeddings_b.empty()) {
      fail("config: precomputed methods need embeddings_a and embeddings_b");
    }
  } else if (!m.embeddings_a.empty() || !m.embeddings_b.empty()) {
    fail("config: embeddings_a/b only apply to precomputed methods");
  }
  return m;
}

std::vector<MethodConfig> default_methods() {
  std::vector<MethodConfig> out;
  for (ModelKind kind :
       {ModelKind::cm, ModelKind::sm, ModelKind::scm, ModelKind::ts}) {
    MethodConfig m;
    m.kind = kind;
    m.name = model_kind_name(kind);
    out.push_back(std::move(m));
  }
  return out;
}

}  // namespace

RunConfig parse_run_config(const json& j) {
  if (!j.is_object()) fail("config: top level must be a JSON object");
  check_keys(j,
             {"dataset", "protocol", "retrieval", "methods", "modes",
              "directions", "code_lengths", "cmc_max_rank"},
             "top level");
  RunConfig cfg;

  if (j.contains("dataset")) {
    const json& d = j["dataset"];
    if (!d.is_object()) fail("config: dataset must be an object");
    check_keys(d, {"synthetic", "path", "subset_overrides"}, "dataset");
    if (d.contains("path") && d.contains("synthetic")) {
      fail("config: dataset takes either 'path' or 'synthetic', not both");
    }
    if (d.contains("path")) {
      cfg.synthetic = false;
      cfg.dataset_path = get_string(d, "path", "");
      if (cfg.dataset_path.empty()) fail("config: dataset.path is empty");
    } else if (d.contains("synthetic")) {
      cfg.synthetic = true;
      cfg.synth = synth_spec_from_json(d["synthetic"]);
    }
    cfg.subset_overrides = get_string(d, "subset_overrides", "");
  }

  if (j.contains("protocol")) {
    const json& p = j["protocol"];
    if (!p.is_object()) fail("config: protocol must be an object");
    check_keys(p, {"folds", "seed", "fraction_db"}, "protocol");
    cfg.n_folds = get_int(p, "folds", cfg.n_folds);
    cfg.seed = get_seed(p, "seed", cfg.seed);
    cfg.fraction_db = get_number(p, "fraction_db", cfg.fraction_db);
  }
  if (cfg.n_folds < 1) fail("config: protocol.folds must be >= 1");
  if (!(cfg.fraction_db > 0.0 && cfg.fraction_db < 1.0)) {
    fail("config: protocol.fraction_db must lie strictly between 0 and 1");
  }

  cfg.tie_policy.seed = cfg.seed;
  if (j.contains("retrieval")) {
    const json& r = j["retrieval"];
    if (!r.is_object()) fail("config: retrieval must be an object");
    check_keys(r, {"similarity", "tie_policy", "tie_seed"}, "retrieval");
    cfg.similarity = parse_similarity(get_string(r, "similarity", "cosine"));
    cfg.tie_policy.kind =
        parse_tie_policy(get_string(r, "tie_policy", "expected_ap_analytic"));
    cfg.tie_policy.seed = get_seed(r, "tie_seed", cfg.seed);
  }

  if (j.contains("methods")) {
    if (!j["methods"].is_array() || j["methods"].empty()) {
      fail("config: methods must be a non-empty array");
    }
    for (const json& m : j["methods"]) cfg.methods.push_back(parse_method(m));
  } else {
    cfg.methods = default_methods();
  }
  std::set<std::string> names;
  for (const MethodConfig& m : cfg.methods) {
    if (!names.insert(m.name).second) {
      fail("config: duplicate method name '" + m.name + "'");
    }
  }

  if (j.contains("modes")) {
    if (!j["modes"].is_array() || j["modes"].empty()) {
      fail("config: modes must be a non-empty array");
    }
    for (const json& m : j["modes"]) {
      cfg.modes.push_back(parse_task_mode(m.get<std::string>()));
    }
  } else {
    cfg.modes = {TaskMode::non_xtd, TaskMode::xtd};
  }
  if (std::set<TaskMode>(cfg.modes.begin(), cfg.modes.end()).size() !=
      cfg.modes.size()) {
    fail("config: duplicate mode");
  }

  if (j.contains("directions")) {
    if (!j["directions"].is_array() || j["directions"].empty()) {
      fail("config: directions must be a non-empty array");
    }
    for (const json& d : j["directions"]) {
      cfg.directions.push_back(parse_direction(d.get<std::string>()));
    }
  } else {
    cfg.directions = {Direction::image_to_text, Direction::text_to_image};
  }
  if (std::set<Direction>(cfg.directions.begin(), cfg.directions.end()).size() !=
      cfg.directions.size()) {
    fail("config: duplicate direction");
  }

  if (j.contains("code_lengths")) {
    if (!j["code_lengths"].is_array()) fail("config: code_lengths must be an array");
    for (const json& c : j["code_lengths"]) {
      if (!c.is_number_integer()) fail("config: code_lengths must be integers");
      cfg.code_lengths.push_back(c.get<int>());
    }
  } else {
    cfg.code_lengths = {8, 16, 32};
  }
  for (int c : cfg.code_lengths) {
    if (c < 1 || c > 4096) fail("config: code lengths must lie in [1, 4096]");
  }
  if (std::set<int>(cfg.code_lengths.begin(), cfg.code_lengths.end()).size() !=
      cfg.code_lengths.size()) {
    fail("config: duplicate code length");
  }
  bool any_binarize = false;
  for (const MethodConfig& m : cfg.methods) any_binarize |= m.binarize;
  if (any_binarize && cfg.code_lengths.empty()) {
    fail("config: a binarized method needs at least one code length");
  }

  cfg.cmc_max_rank = get_int(j, "cmc_max_rank", 0);
  if (cfg.cmc_max_rank < 0) fail("config: cmc_max_rank must be >= 0");
  return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail("cannot open config file: " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    fail("config file " + path.string() + " is not valid JSON: " + e.what());
  }
  return parse_run_config(j);
}

json config_canonical_json(const RunConfig& config) {
  json dataset;
  if (config.synthetic) {
    dataset["synthetic"] = synth_spec_to_json(config.synth);
  } else {
    dataset["path"] = config.dataset_path.string();
  }
  dataset["subset_overrides"] = config.subset_overrides.string();

  json methods = json::array();
  for (const MethodConfig& m : config.methods) {
    methods.push_back({{"name", m.name},
                       {"kind", model_kind_name(m.kind)},
                       {"k", m.k},
                       {"reg", m.reg},
                       {"l2", m.l2},
                       {"binarize", m.binarize},
                       {"embeddings_a", m.embeddings_a.string()},
                       {"embeddings_b", m.embeddings_b.string()}});
  }
  json modes = json::array();
  for (TaskMode m : config.modes) modes.push_back(task_mode_name(m));
  json directions = json::array();
  for (Direction d : config.directions) directions.push_back(direction_name(d));

  return {{"dataset", dataset},
          {"protocol",
           {{"folds", config.n_folds},
            {"seed", config.seed},
            {"fraction_db", config.fraction_db}}},
          {"retrieval",
           {{"similarity", similarity_name(config.similarity)},
            {"tie_policy", tie_policy_name(config.tie_policy.kind)},
            {"tie_seed", config.tie_policy.seed}}},
          {"methods", methods},
          {"modes", modes},
          {"directions", directions},
          {"code_lengths", config.code_lengths},
          {"cmc_max_rank", config.cmc_max_rank}};
}

std::string config_hash(const RunConfig& config) {
  std::uint64_t h = fnv1a64(config_canonical_json(config).dump());
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return std::string(buf);
}

CrossModalDataset acquire_dataset(const RunConfig& config) {
  if (config.synthetic) return generate_synthetic(config.synth);
  return load_dataset(config.dataset_path);
}

namespace {

// One method column of the expanded grid: code_length 0 is the real-valued
// embedding, anything else a binarized variant.
struct ColumnSpec {
  int method = 0;
  int code_length = 0;
};

struct CellSpec {
  std::size_t slot = 0;
  int column = 0;
  int fold = 0;
  TaskMode mode = TaskMode::non_xtd;
  Direction direction = Direction::image_to_text;
};

struct UnitTask {
  int method = 0;
  int fold = 0;
  std::vector<CellSpec> cells;
};

struct UnitLog {
  std::string status = "pending";
  double train_ms = 0.0;
  std::string model_path;
  std::string error;
  std::vector<json> cell_logs;
};

struct TrainedMethod {
  EmbeddingModel model;
  std::unordered_map<int, BinaryEncoder> encoders;  // by code length
};

double ms_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double, std::milli>(
             std::chrono::steady_clock::now() - start)
      .count();
}

struct ListScore {
  ApValue ap;
  std::vector<double> cdf;
};

// Applies the tie policy to one ranked list and scores it. The analytic
// policy averages over within-group permutations in closed form; the shuffle
// policy materializes one permutation from the query seed.
ListScore score_list(const RankedList& list, const RelevanceVector& rel,
                     const TiePolicy& policy, std::uint64_t query_seed) {
  std::vector<std::uint8_t> r(list.order.size());
  for (std::size_t i = 0; i < list.order.size(); ++i) {
    r[i] = rel.bits[static_cast<std::size_t>(list.order[i])];
  }
  ListScore out;
  if (rel.positives == 0) return out;  // undefined AP, excluded upstream

  std::vector<std::uint8_t> resolved = r;
  if (policy.kind == TiePolicy::Kind::seeded_shuffle) {
    Rng rng(query_seed);
    std::vector<std::uint8_t> segment;
    for (const auto& [begin, end] : list.tie_groups) {
      if (end - begin < 2) continue;
      segment.assign(resolved.begin() + begin, resolved.begin() + end);
      rng.shuffle(segment);
      std::copy(segment.begin(), segment.end(), resolved.begin() + begin);
    }
  }

  if (policy.kind == TiePolicy::Kind::expected_ap_analytic) {
    out.ap = expected_ap_with_ties(list.tie_groups, resolved);
    out.cdf = expected_first_match_cdf(list.tie_groups, resolved);
  } else {
    out.ap = average_precision(resolved);
    out.cdf.assign(resolved.size(), 0.0);
    for (std::size_t i = 0; i < resolved.size(); ++i) {
      if (resolved[i] != 0) {
        std::fill(out.cdf.begin() + static_cast<std::ptrdiff_t>(i),
                  out.cdf.end(), 1.0);
        break;
      }
    }
  }
  return out;
}

int default_cm_k(const MethodConfig& m, int num_train_classes, Eigen::Index da,
                 Eigen::Index db, Eigen::Index rows) {
  if (m.k > 0) return m.k;
  return static_cast<int>(
      std::min<Eigen::Index>({static_cast<Eigen::Index>(num_train_classes), da,
                              db, rows - 1}));
}

TrainedMethod train_method(const RunConfig& cfg, const MethodConfig& m,
                           const CrossModalDataset& dataset,
                           const FoldPlan& plan, int fold) {
  const std::vector<int>& rows = plan.folds[static_cast<size_t>(fold)].assignment.train_db;
  const std::set<int>& train_classes =
      plan.folds[static_cast<size_t>(fold)].partition.train_classes;
  TrainedMethod out;
  if (m.kind == ModelKind::precomputed) {
    out.model = load_precomputed_embeddings(m.embeddings_a, m.embeddings_b,
                                            dataset.num_samples());
  } else {
    Matrix a = gather_rows(dataset.modality_a, rows);
    Matrix b = gather_rows(dataset.modality_b, rows);
    ClassIndexer indexer(train_classes);
    const int k = indexer.size();
    if (m.kind == ModelKind::cm) {
      out.model = fit_cm(a, b, default_cm_k(m, k, a.cols(), b.cols(), a.rows()),
                         m.reg);
    } else {
      std::vector<std::vector<int>> labels = indexer.dense_labels(dataset, rows);
      if (m.kind == ModelKind::sm) {
        out.model = fit_sm(a, b, labels, k, m.l2);
      } else if (m.kind == ModelKind::scm) {
        out.model = fit_scm(a, b, labels, k, m.reg, m.l2);
      } else {
        out.model = fit_ts(a, b, labels, k, m.l2);
      }
      out.model.class_ids = indexer.class_ids;
    }
  }
  if (m.binarize) {
    for (int length : cfg.code_lengths) {
      out.encoders.emplace(length,
                           binarize(out.model, dataset, rows, length, m.reg));
    }
  }
  return out;
}

std::string model_file_name(const MethodConfig& m, int fold) {
  return "f" + std::to_string(fold) + "_" + m.name + ".xmdl";
}

std::string encoder_file_name(const MethodConfig& m, int fold, int length) {
  return "f" + std::to_string(fold) + "_" + m.name + "_b" +
         std::to_string(length) + ".xmdl";
}

void save_encoder(const BinaryEncoder& enc, const std::filesystem::path& path) {
  EmbeddingModel stored = enc.model;
  std::vector<double> ta(enc.thresholds_a.data(),
                         enc.thresholds_a.data() + enc.thresholds_a.size());
  std::vector<double> tb(enc.thresholds_b.data(),
                         enc.thresholds_b.data() + enc.thresholds_b.size());
  stored.metadata["__thresholds_a"] = ta;
  stored.metadata["__thresholds_b"] = tb;
  stored.metadata["__code_length"] = enc.code_length;
  save_model(stored, path);
}

BinaryEncoder load_encoder(const std::filesystem::path& path) {
  EmbeddingModel stored = load_model(path);
  if (!stored.metadata.contains("__code_length")) {
    fail("model file is not a binary encoder: " + path.string());
  }
  BinaryEncoder enc;
  enc.code_length = stored.metadata["__code_length"].get<int>();
  std::vector<double> ta = stored.metadata["__thresholds_a"].get<std::vector<double>>();
  std::vector<double> tb = stored.metadata["__thresholds_b"].get<std::vector<double>>();
  enc.thresholds_a = Eigen::Map<const Vector>(ta.data(), static_cast<Eigen::Index>(ta.size()));
  enc.thresholds_b = Eigen::Map<const Vector>(tb.data(), static_cast<Eigen::Index>(tb.size()));
  stored.metadata.erase("__thresholds_a");
  stored.metadata.erase("__thresholds_b");
  stored.metadata.erase("__code_length");
  enc.model = std::move(stored);
  return enc;
}

struct RunContext {
  const RunConfig& cfg;
  const CrossModalDataset& dataset;
  const FoldPlan& plan;
  const std::vector<ColumnSpec>& columns;
  std::filesystem::path models_dir;  // empty = no caching
  bool cache_valid = false;
};

TrainedMethod train_or_load(const RunContext& ctx, const MethodConfig& m,
                            int fold, UnitLog* log) {
  namespace fs = std::filesystem;
  bool need_encoders = m.binarize;
  if (!ctx.models_dir.empty() && ctx.cache_valid) {
    fs::path model_path = ctx.models_dir / model_file_name(m, fold);
    bool have_all = fs::exists(model_path);
    if (need_encoders) {
      for (int length : ctx.cfg.code_lengths) {
        have_all = have_all &&
                   fs::exists(ctx.models_dir / encoder_file_name(m, fold, length));
      }
    }
    if (have_all) {
      TrainedMethod out;
      out.model = load_model(model_path);
      for (int length : need_encoders ? ctx.cfg.code_lengths : std::vector<int>{}) {
        out.encoders.emplace(
            length, load_encoder(ctx.models_dir / encoder_file_name(m, fold, length)));
      }
      log->status = "cached";
      log->model_path = model_path.string();
      return out;
    }
  }
  TrainedMethod out = train_method(ctx.cfg, m, ctx.dataset, ctx.plan, fold);
  log->status = "trained";
  if (!ctx.models_dir.empty()) {
    fs::path model_path = ctx.models_dir / model_file_name(m, fold);
    save_model(out.model, model_path);
    log->model_path = model_path.string();
    for (const auto& [length, enc] : out.encoders) {
      save_encoder(enc, ctx.models_dir / encoder_file_name(m, fold, length));
    }
  }
  return out;
}

CellResult evaluate_cell(const RunContext& ctx, const TrainedMethod& trained,
                         const CellSpec& spec) {
  const MethodConfig& m = ctx.cfg.methods[static_cast<size_t>(
      ctx.columns[static_cast<size_t>(spec.column)].method)];
  const int code_length = ctx.columns[static_cast<size_t>(spec.column)].code_length;

  CellResult cell;
  cell.method = m.name;
  cell.mode = task_mode_name(spec.mode);
  cell.direction = direction_name(spec.direction);
  cell.fold = spec.fold;
  cell.code_length = code_length;

  TaskViews views =
      build_task(ctx.plan, {spec.mode, spec.direction, spec.fold});
  const auto& dropped =
      ctx.plan.folds[static_cast<size_t>(spec.fold)].dropped_samples;
  cell.dropped_straddlers = static_cast<int>(dropped.size());
  cell.query_count = static_cast<int>(views.query_rows.size());
  cell.gallery_size = static_cast<int>(views.gallery_rows.size());

  const std::uint64_t cell_seed =
      derive_seed(ctx.cfg.tie_policy.seed, fnv1a64(cell.key()));

  std::vector<RankedList> lists;
  lists.reserve(views.query_rows.size());
  if (m.kind == ModelKind::ts && code_length == 0) {
    std::vector<int> query_preds = trained.model.predict_rows(
        ctx.dataset, views.query_rows, views.query_modality);
    std::vector<int> gallery_preds = trained.model.predict_rows(
        ctx.dataset, views.gallery_rows, views.gallery_modality);
    TiePolicy raw;  // groups kept intact; the scorer applies the policy
    raw.kind = TiePolicy::Kind::stable_index;
    for (int pred : query_preds) {
      lists.push_back(rank_ts(pred, gallery_preds, raw));
    }
  } else if (code_length > 0) {
    const BinaryEncoder& enc = trained.encoders.at(code_length);
    BinaryCodes queries =
        enc.encode_rows(ctx.dataset, views.query_rows, views.query_modality);
    BinaryCodes gallery =
        enc.encode_rows(ctx.dataset, views.gallery_rows, views.gallery_modality);
    for (int qi = 0; qi < queries.count(); ++qi) {
      lists.push_back(rank_hamming(queries, qi, gallery));
    }
  } else {
    Matrix queries = trained.model.embed_rows(ctx.dataset, views.query_rows,
                                              views.query_modality);
    Matrix gallery = trained.model.embed_rows(ctx.dataset, views.gallery_rows,
                                              views.gallery_modality);
    for (Eigen::Index qi = 0; qi < queries.rows(); ++qi) {
      lists.push_back(
          rank(queries.row(qi).transpose(), gallery, ctx.cfg.similarity));
    }
  }

  std::vector<ApValue> aps;
  std::vector<std::vector<double>> cdfs;
  int excluded = 0;
  aps.reserve(lists.size());
  for (std::size_t qi = 0; qi < lists.size(); ++qi) {
    const int query_row = views.query_rows[qi];
    RelevanceVector rel = ground_truth(
        ctx.dataset.labels.labels[static_cast<size_t>(query_row)],
        ctx.dataset.labels, views.gallery_rows);
    ListScore score = score_list(lists[qi], rel, ctx.cfg.tie_policy,
                                 derive_seed(cell_seed, qi));
    aps.push_back(score.ap);
    if (score.ap.defined) {
      cdfs.push_back(std::move(score.cdf));
    } else {
      ++excluded;
    }
    if (lists[qi].cosine_fallback) ++cell.cosine_fallbacks;
  }
  if (cdfs.empty()) {
    fail("every query in " + cell.key() + " had zero relevant gallery items");
  }
  cell.map = mean_average_precision(aps);
  cell.cmc = cmc_from_cdfs(cdfs, excluded);
  if (ctx.cfg.cmc_max_rank > 0 &&
      static_cast<int>(cell.cmc.values.size()) > ctx.cfg.cmc_max_rank) {
    cell.cmc.values.resize(static_cast<size_t>(ctx.cfg.cmc_max_rank));
  }
  return cell;
}

}  // namespace

RunOutcome run_benchmark(const RunConfig& config,
                         const CrossModalDataset& dataset, int jobs,
                         const std::filesystem::path& out_dir) {
  namespace fs = std::filesystem;
  dataset.validate();

  SubsetOverrides overrides;
  if (!config.subset_overrides.empty()) {
    overrides = load_subset_overrides(config.subset_overrides, dataset);
  }
  FoldPlan plan = make_fold_plan(dataset, config.n_folds, config.seed,
                                 config.fraction_db, overrides);

  std::vector<ColumnSpec> columns;
  for (int mi = 0; mi < static_cast<int>(config.methods.size()); ++mi) {
    columns.push_back({mi, 0});
    if (config.methods[static_cast<size_t>(mi)].binarize) {
      for (int length : config.code_lengths) columns.push_back({mi, length});
    }
  }

  // Cells ordered column-major so the report reads method by method; units
  // group every cell that shares one trained model.
  std::vector<CellSpec> cells;
  for (int ci = 0; ci < static_cast<int>(columns.size()); ++ci) {
    for (TaskMode mode : config.modes) {
      for (Direction direction : config.directions) {
        for (int fold = 0; fold < config.n_folds; ++fold) {
          cells.push_back({cells.size(), ci, fold, mode, direction});
        }
      }
    }
  }
  std::vector<UnitTask> units;
  {
    std::unordered_map<long long, std::size_t> unit_index;
    for (const CellSpec& cell : cells) {
      int method = columns[static_cast<size_t>(cell.column)].method;
      long long key = static_cast<long long>(method) * 1000000 + cell.fold;
      auto it = unit_index.find(key);
      if (it == unit_index.end()) {
        it = unit_index.emplace(key, units.size()).first;
        units.push_back({method, cell.fold, {}});
      }
      units[it->second].cells.push_back(cell);
    }
  }

  const std::string hash = config_hash(config);
  RunContext ctx{config, dataset, plan, columns, {}, false};
  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    ctx.models_dir = out_dir / "models";
    fs::create_directories(ctx.models_dir);
    fs::path manifest_path = out_dir / "manifest.json";
    if (fs::exists(manifest_path)) {
      try {
        std::ifstream in(manifest_path);
        json old;
        in >> old;
        ctx.cache_valid = old.value("config_hash", "") == hash;
      } catch (...) {
        ctx.cache_valid = false;
      }
    }
  }

  RunOutcome outcome;
  outcome.report.cells.resize(cells.size());
  std::vector<UnitLog> unit_logs(units.size());

  std::atomic<std::size_t> next_unit{0};
  auto worker = [&]() {
    while (true) {
      std::size_t u = next_unit.fetch_add(1);
      if (u >= units.size()) break;
      const UnitTask& unit = units[u];
      UnitLog& log = unit_logs[u];
      const MethodConfig& m = config.methods[static_cast<size_t>(unit.method)];
      TrainedMethod trained;
      auto train_start = std::chrono::steady_clock::now();
      try {
        trained = train_or_load(ctx, m, unit.fold, &log);
      } catch (const std::exception& e) {
        log.status = "failed";
        log.error = e.what();
        log.train_ms = ms_since(train_start);
        for (const CellSpec& spec : unit.cells) {
          CellResult& cell = outcome.report.cells[spec.slot];
          cell.method = m.name;
          cell.mode = task_mode_name(spec.mode);
          cell.direction = direction_name(spec.direction);
          cell.fold = spec.fold;
          cell.code_length = columns[static_cast<size_t>(spec.column)].code_length;
          cell.error = std::string("training failed: ") + e.what();
          log.cell_logs.push_back({{"key", cell.key()},
                                   {"status", "failed"},
                                   {"error", cell.error}});
        }
        continue;
      }
      log.train_ms = ms_since(train_start);
      for (const CellSpec& spec : unit.cells) {
        auto eval_start = std::chrono::steady_clock::now();
        CellResult& cell = outcome.report.cells[spec.slot];
        try {
          cell = evaluate_cell(ctx, trained, spec);
          log.cell_logs.push_back({{"key", cell.key()},
                                   {"status", "scored"},
                                   {"eval_ms", ms_since(eval_start)}});
        } catch (const std::exception& e) {
          cell.method = m.name;
          cell.mode = task_mode_name(spec.mode);
          cell.direction = direction_name(spec.direction);
          cell.fold = spec.fold;
          cell.code_length = columns[static_cast<size_t>(spec.column)].code_length;
          cell.error = e.what();
          log.cell_logs.push_back({{"key", cell.key()},
                                   {"status", "failed"},
                                   {"error", cell.error},
                                   {"eval_ms", ms_since(eval_start)}});
        }
      }
    }
  };

  int thread_count = jobs > 0 ? jobs : static_cast<int>(std::thread::hardware_concurrency());
  thread_count = std::clamp(thread_count, 1, static_cast<int>(units.size()));
  if (thread_count <= 1) {
    worker();
  } else {
    std::vector<std::thread> threads;
    threads.reserve(static_cast<size_t>(thread_count));
    for (int t = 0; t < thread_count; ++t) threads.emplace_back(worker);
    for (std::thread& t : threads) t.join();
  }

  for (const CellResult& cell : outcome.report.cells) {
    if (!cell.ok()) ++outcome.failed_cells;
  }

  // Fold-averaged aggregates, only for columns where every fold scored.
  for (int ci = 0; ci < static_cast<int>(columns.size()); ++ci) {
    for (TaskMode mode : config.modes) {
      for (Direction direction : config.directions) {
        std::vector<const CellResult*> fold_cells;
        for (const CellSpec& spec : cells) {
          if (spec.column != ci || spec.mode != mode ||
              spec.direction != direction) {
            continue;
          }
          const CellResult& cell = outcome.report.cells[spec.slot];
          if (cell.ok()) fold_cells.push_back(&cell);
        }
        if (static_cast<int>(fold_cells.size()) == config.n_folds) {
          outcome.report.aggregates.push_back(
              aggregate_folds(fold_cells, config.n_folds));
        }
      }
    }
  }

  json metadata = {{"config", config_canonical_json(config)},
                   {"config_hash", hash},
                   {"dataset",
                    {{"name", dataset.name},
                     {"num_samples", dataset.num_samples()},
                     {"num_classes", dataset.labels.num_classes},
                     {"dim_a", dataset.modality_a.cols()},
                     {"dim_b", dataset.modality_b.cols()}}}};
  outcome.report.metadata_json = metadata.dump();

  json unit_entries = json::array();
  json cell_entries = json::array();
  for (std::size_t u = 0; u < units.size(); ++u) {
    const MethodConfig& m = config.methods[static_cast<size_t>(units[u].method)];
    json entry = {{"method", m.name},
                  {"fold", units[u].fold},
                  {"status", unit_logs[u].status},
                  {"train_ms", unit_logs[u].train_ms}};
    if (!unit_logs[u].model_path.empty()) entry["model"] = unit_logs[u].model_path;
    if (!unit_logs[u].error.empty()) entry["error"] = unit_logs[u].error;
    unit_entries.push_back(std::move(entry));
    for (json& c : unit_logs[u].cell_logs) cell_entries.push_back(std::move(c));
  }
  outcome.manifest = {{"config_hash", hash},
                      {"config", config_canonical_json(config)},
                      {"dataset", metadata["dataset"]},
                      {"jobs", thread_count},
                      {"failed_cells", outcome.failed_cells},
                      {"fold_plan", json::parse(plan.to_json())},
                      {"units", unit_entries},
                      {"cells", cell_entries}};
  return outcome;
}

namespace {

std::string csv_double(double v) { return json(v).dump(); }

}  // namespace

void emit_report(const RunOutcome& outcome, const std::filesystem::path& out_dir) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);

  {
    std::ofstream out(out_dir / "report.json", std::ios::binary);
    if (!out) fail("cannot write " + (out_dir / "report.json").string());
    out << outcome.report.to_json() << "\n";
  }
  {
    std::ofstream out(out_dir / "summary.csv", std::ios::binary);
    if (!out) fail("cannot write " + (out_dir / "summary.csv").string());
    out << "method,code_length,mode,direction,folds,mean_map\n";
    for (const AggregateResult& agg : outcome.report.aggregates) {
      out << agg.method << "," << agg.code_length << "," << agg.mode << ","
          << agg.direction << "," << agg.n_folds << ","
          << csv_double(agg.mean_map) << "\n";
    }
  }
  std::vector<std::string> cmc_files;
  for (const AggregateResult& agg : outcome.report.aggregates) {
    std::string name = "cmc_" + agg.key() + ".csv";
    std::ofstream out(out_dir / name, std::ios::binary);
    if (!out) fail("cannot write " + (out_dir / name).string());
    out << "rank,cmc\n";
    for (std::size_t i = 0; i < agg.mean_cmc.size(); ++i) {
      out << (i + 1) << "," << csv_double(agg.mean_cmc[i]) << "\n";
    }
    cmc_files.push_back(std::move(name));
  }
  {
    json manifest = outcome.manifest;
    manifest["artifacts"] = {{"report", "report.json"},
                             {"summary", "summary.csv"},
                             {"fold_plan", "fold_plan.json"},
                             {"cmc", cmc_files}};
    std::ofstream out(out_dir / "manifest.json", std::ios::binary);
    if (!out) fail("cannot write " + (out_dir / "manifest.json").string());
    out << manifest.dump(2) << "\n";
  }
  if (outcome.manifest.contains("fold_plan")) {
    std::ofstream out(out_dir / "fold_plan.json", std::ios::binary);
    if (!out) fail("cannot write " + (out_dir / "fold_plan.json").string());
    out << outcome.manifest["fold_plan"].dump(2) << "\n";
  }
}

json score_run(const RunFile& run, const std::vector<std::string>& sample_ids,
               const LabelTable& labels) {
  if (sample_ids.size() != labels.size()) {
    fail("score: label table and id list disagree");
  }
  std::unordered_map<std::string, int> row_of;
  for (std::size_t i = 0; i < sample_ids.size(); ++i) {
    row_of.emplace(sample_ids[i], static_cast<int>(i));
  }
  std::vector<int> gallery_rows;
  gallery_rows.reserve(run.gallery_ids.size());
  for (const std::string& id : run.gallery_ids) {
    auto it = row_of.find(id);
    if (it == row_of.end()) fail("score: gallery id '" + id + "' not in labels");
    gallery_rows.push_back(it->second);
  }

  std::vector<ApValue> aps;
  std::vector<std::vector<double>> cdfs;
  json per_query = json::array();
  int excluded = 0;
  TiePolicy analytic;  // equal stored scores form tie groups
  for (const RankedList& list : run.lists) {
    auto it = row_of.find(list.query_id);
    if (it == row_of.end()) {
      fail("score: query id '" + list.query_id + "' not in labels");
    }
    RelevanceVector rel =
        ground_truth(labels.labels[static_cast<size_t>(it->second)], labels,
                     gallery_rows);
    ListScore score = score_list(list, rel, analytic, 0);
    aps.push_back(score.ap);
    if (score.ap.defined) {
      cdfs.push_back(std::move(score.cdf));
    } else {
      ++excluded;
    }
    per_query.push_back({{"id", list.query_id},
                         {"ap", score.ap.value},
                         {"defined", score.ap.defined}});
  }
  if (cdfs.empty()) fail("score: no query has a relevant gallery item");
  MapValue map = mean_average_precision(aps);
  CmcCurve cmc = cmc_from_cdfs(cdfs, excluded);
  return {{"map", map.value},
          {"defined_queries", map.defined_queries},
          {"excluded_queries", map.excluded_queries},
          {"num_queries", static_cast<int>(run.lists.size())},
          {"gallery_size", static_cast<int>(run.gallery_ids.size())},
          {"cmc", cmc.values},
          {"per_query", per_query}};
}

}  // namespace xmb
