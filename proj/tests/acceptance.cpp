// Acceptance gate: ten checks covering metric oracle agreement, protocol
// invariants, learner correctness, and end-to-end benchmark behavior on the
// canonical synthetic dataset. Prints one PASS/FAIL line per criterion and
// exits nonzero if any fail.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "oracles.hpp"
#include "xmbench/bench.hpp"
#include "xmbench/dataset.hpp"
#include "xmbench/learners.hpp"
#include "xmbench/metrics.hpp"
#include "xmbench/protocol.hpp"
#include "xmbench/retrieval.hpp"
#include "xmbench/rng.hpp"

using namespace xmb;
using nlohmann::json;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

std::string fixed(double v, int digits = 3) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
  return buf;
}

// Collects sub-checks; keeps the first failure as the reported reason.
struct Check {
  bool ok = true;
  std::string why;
  int count = 0;

  void expect(bool condition, const std::string& what) {
    ++count;
    if (!condition && ok) {
      ok = false;
      why = what;
    }
  }
};

struct Outcome {
  bool pass = false;
  std::string detail;
};

Outcome pass(std::string detail) { return {true, std::move(detail)}; }
Outcome fail(std::string detail) { return {false, std::move(detail)}; }

Outcome finish(const Check& check, const std::string& pass_detail) {
  if (check.ok) return pass(pass_detail);
  return fail(check.why);
}

TieGroups random_partition(Rng& rng, int n) {
  TieGroups groups;
  int begin = 0;
  while (begin < n) {
    const int width = 1 + static_cast<int>(rng.below(
                              static_cast<std::uint64_t>(n - begin)));
    groups.emplace_back(begin, begin + width);
    begin += width;
  }
  return groups;
}

const AggregateResult* find_aggregate(const EvalReport& report,
                                      const std::string& method, int code_length,
                                      const std::string& mode,
                                      const std::string& direction) {
  for (const AggregateResult& agg : report.aggregates) {
    if (agg.method == method && agg.code_length == code_length &&
        agg.mode == mode && agg.direction == direction)
      return &agg;
  }
  return nullptr;
}

const CellResult* find_cell(const EvalReport& report, const std::string& method,
                            int code_length, const std::string& mode,
                            const std::string& direction, int fold) {
  for (const CellResult& cell : report.cells) {
    if (cell.method == method && cell.code_length == code_length &&
        cell.mode == mode && cell.direction == direction && cell.fold == fold)
      return &cell;
  }
  return nullptr;
}

// ---------------------------------------------------------------------------

Outcome criterion_metric_oracles() {
  const auto start = Clock::now();
  Check check;
  check.expect(!average_precision({0, 0, 0}).defined,
               "ap over an all-irrelevant list must be undefined");
  Rng rng(101);
  for (int i = 0; i < 1000 && check.ok; ++i) {
    const int n = 1 + static_cast<int>(rng.below(8));
    std::vector<std::uint8_t> rel(static_cast<std::size_t>(n));
    bool any = false;
    for (auto& b : rel) {
      b = static_cast<std::uint8_t>(rng.below(2));
      any = any || b != 0;
    }
    if (!any) rel[static_cast<std::size_t>(rng.below(n))] = 1;

    ApValue ap = average_precision(rel);
    check.expect(ap.defined, "ap with a positive present must be defined");
    check.expect(ap.value == oracle::ap_brute_force(rel),
                 "instance " + std::to_string(i) +
                     ": ap differs from the brute-force recomputation");

    TieGroups groups = random_partition(rng, n);
    ApValue tie = expected_ap_with_ties(groups, rel);
    const double want = oracle::expected_ap_enumerated(groups, rel);
    check.expect(tie.defined, "tie-expected ap must be defined");
    check.expect(std::abs(tie.value - want) <= 1e-12,
                 "instance " + std::to_string(i) +
                     ": tie-expected ap off the exhaustive enumeration by " +
                     fixed(std::abs(tie.value - want), 16));
  }
  const double secs = seconds_since(start);
  check.expect(secs < 5.0, "oracle sweep took " + fixed(secs, 2) + " s (limit 5)");
  return finish(check, "exact ap equality and tie expectations within 1e-12 on "
                       "1000 instances (" +
                           fixed(secs, 2) + " s)");
}

Outcome criterion_cmc_invariants() {
  Check check;
  CmcCurve hand = cmc_from_first_ranks({1, 3, 3}, 4, 0);
  const std::vector<double> want = {1.0 / 3.0, 1.0 / 3.0, 1.0, 1.0};
  check.expect(hand.values == want, "hand-counted curve [1,3,3] over 4 mismatched");

  Rng rng(102);
  for (int i = 0; i < 1000 && check.ok; ++i) {
    const int gallery = 1 + static_cast<int>(rng.below(50));
    const int queries = 1 + static_cast<int>(rng.below(20));
    std::vector<int> ranks(static_cast<std::size_t>(queries));
    for (auto& r : ranks) r = 1 + static_cast<int>(rng.below(gallery));
    CmcCurve curve = cmc_from_first_ranks(ranks, gallery, 0);
    check.expect(static_cast<int>(curve.values.size()) == gallery,
                 "curve length must equal the gallery size");
    for (std::size_t j = 0; j < curve.values.size(); ++j) {
      const double v = curve.values[j];
      check.expect(0.0 <= v && v <= 1.0, "curve value outside [0, 1]");
      if (j > 0)
        check.expect(curve.values[j - 1] <= v, "curve must be non-decreasing");
    }
    check.expect(curve.values.back() == 1.0,
                 "curve must reach 1 when every query has a match");
    curve.validate();
  }
  return finish(check,
                "curves monotone in [0, 1] ending at 1 on 1000 instances; "
                "hand count exact");
}

Outcome criterion_cca_correctness() {
  Check check;
  Rng rng(103);
  Matrix a(40, 5);
  for (Eigen::Index i = 0; i < a.size(); ++i) a(i) = rng.gaussian();
  EmbeddingModel dup = fit_cm(a, a, 5, 1e-10);
  auto dup_corr = dup.metadata.at("correlations").get<std::vector<double>>();
  for (double c : dup_corr)
    check.expect(std::abs(c - 1.0) <= 1e-6,
                 "duplicated modality correlation " + fixed(c, 8) + " not 1");

  Matrix t(5, 5);
  t << 2, 1, 0, 0, 0,
       0, 1, 3, 0, 0,
       0, 0, 1, -1, 0,
       1, 0, 0, 1, 0,
       0, 0, 0, 2, 1;
  EmbeddingModel inv = fit_cm(a, a * t, 5, 0.0);
  for (double c : inv.metadata.at("correlations").get<std::vector<double>>())
    check.expect(std::abs(c - 1.0) <= 1e-6,
                 "invertible transform correlation " + fixed(c, 8) + " not 1");

  Matrix fa(8, 2), fb(8, 2);
  fa << 1.0, 0.5, -0.3, 1.2, 0.8, -0.7, 2.1, 0.4,
        -1.4, -0.9, 0.2, 1.7, -0.6, 0.3, 1.1, -1.5;
  fb << 0.9, -0.2, 0.1, 1.0, 1.2, -0.4, 1.8, 0.6,
        -1.0, -1.1, -0.3, 1.5, -0.8, 0.2, 0.7, -1.2;
  EmbeddingModel fixture = fit_cm(fa, fb, 2, 0.0);
  auto got = fixture.metadata.at("correlations").get<std::vector<double>>();
  std::vector<double> want = oracle::cca_correlations(fa, fb);
  check.expect(got.size() == 2 && want.size() == 2,
               "2-D fixture must produce two correlations");
  for (std::size_t i = 0; i < got.size() && check.ok; ++i)
    check.expect(std::abs(got[i] - want[i]) <= 1e-8,
                 "fixture correlation " + std::to_string(i) + " off oracle by " +
                     fixed(std::abs(got[i] - want[i]), 12));
  return finish(check, "perfect-correlation fixtures within 1e-6; 2-D fixture "
                       "matches the dense eigenproblem oracle within 1e-8");
}

Outcome criterion_logreg_gradients() {
  Check check;
  Rng rng(104);
  for (int instance = 0; instance < 50 && check.ok; ++instance) {
    const int m = 4 + static_cast<int>(rng.below(6));
    const int d = 2 + static_cast<int>(rng.below(3));
    const int k = 2 + static_cast<int>(rng.below(3));
    Matrix x(m, d);
    for (Eigen::Index i = 0; i < x.size(); ++i) x(i) = rng.gaussian();
    std::vector<int> y;
    for (int i = 0; i < m; ++i) y.push_back(static_cast<int>(rng.below(k)));
    Matrix w(d, k);
    for (Eigen::Index i = 0; i < w.size(); ++i) w(i) = 0.4 * rng.gaussian();
    Eigen::RowVectorXd bias(k);
    for (int i = 0; i < k; ++i) bias[i] = 0.4 * rng.gaussian();
    const double l2 = 0.25;

    Matrix gw;
    Eigen::RowVectorXd gb;
    logreg_loss_grad(x, y, w, bias, l2, &gw, &gb);
    const double h = 1e-6;
    auto rel_err = [](double analytic, double numeric) {
      return std::abs(analytic - numeric) /
             std::max({std::abs(analytic), std::abs(numeric), 1e-8});
    };
    for (Eigen::Index r = 0; r < d && check.ok; ++r) {
      for (Eigen::Index c = 0; c < k && check.ok; ++c) {
        Matrix wp = w, wm = w;
        wp(r, c) += h;
        wm(r, c) -= h;
        const double up = logreg_loss_grad(x, y, wp, bias, l2, nullptr, nullptr);
        const double dn = logreg_loss_grad(x, y, wm, bias, l2, nullptr, nullptr);
        check.expect(rel_err(gw(r, c), (up - dn) / (2 * h)) <= 1e-4,
                     "weight gradient off finite differences on instance " +
                         std::to_string(instance));
      }
    }
    for (Eigen::Index c = 0; c < k && check.ok; ++c) {
      Eigen::RowVectorXd bp = bias, bm = bias;
      bp[c] += h;
      bm[c] -= h;
      const double up = logreg_loss_grad(x, y, w, bp, l2, nullptr, nullptr);
      const double dn = logreg_loss_grad(x, y, w, bm, l2, nullptr, nullptr);
      check.expect(rel_err(gb[c], (up - dn) / (2 * h)) <= 1e-4,
                   "bias gradient off finite differences on instance " +
                       std::to_string(instance));
    }
  }

  Matrix x(6, 2);
  x << 0.0, 0.0, 0.2, -0.1, 1.0, 1.1, 1.2, 0.9, -1.0, 1.0, -1.1, 1.2;
  std::vector<std::vector<int>> labels = {{0}, {0}, {1}, {1}, {2}, {2}};
  LogisticOptions opts;
  opts.l2 = 0.1;
  opts.standardize = false;
  opts.tol = 1e-10;
  opts.max_iterations = 10000;
  LogisticClassifier clf = fit_multinomial_logreg(x, labels, 3, opts);
  oracle::LogregParams trained{clf.weights, clf.bias};
  oracle::LogregParams ref =
      oracle::logreg_descent(x, {0, 0, 1, 1, 2, 2}, 3, 0.1);
  Matrix got = oracle::softmax_posterior(x, trained);
  Matrix want = oracle::softmax_posterior(x, ref);
  double max_diff = (got - want).cwiseAbs().maxCoeff();
  check.expect(max_diff <= 1e-5, "six-point posteriors off the independent "
                                 "optimizer by " +
                                     fixed(max_diff, 8));
  return finish(check, "gradients within 1e-4 of central differences on 50 "
                       "instances; six-point posteriors within 1e-5");
}

Outcome criterion_protocol_invariants() {
  SynthSpec spec;  // canonical defaults
  CrossModalDataset ds = generate_synthetic(spec);

  const auto start = Clock::now();
  Check check;
  FoldPlan plan = make_fold_plan(ds, 5, 7, 0.8);
  std::vector<std::size_t> straddlers;
  for (const Fold& fold : plan.folds) {
    straddlers.push_back(fold.dropped_samples.size());
    std::set<int> overlap;
    for (int c : fold.partition.train_classes)
      if (fold.partition.test_classes.count(c)) overlap.insert(c);
    check.expect(overlap.empty(), "class halves overlap");

    std::set<int> train_rows(fold.assignment.train_db.begin(),
                             fold.assignment.train_db.end());
    train_rows.insert(fold.assignment.train_query.begin(),
                      fold.assignment.train_query.end());
    for (int row : fold.assignment.test_db)
      check.expect(train_rows.count(row) == 0, "test db row reused in train");
    for (int row : fold.assignment.test_query)
      check.expect(train_rows.count(row) == 0, "test query row reused in train");
  }
  for (int f = 0; f < 5; ++f) {
    for (Direction dir : {Direction::image_to_text, Direction::text_to_image}) {
      TaskViews views = build_task(plan, {TaskMode::xtd, dir, f});
      const Fold& fold = plan.folds[static_cast<std::size_t>(f)];
      for (int row : views.gallery_rows)
        for (int c : ds.labels.labels[static_cast<std::size_t>(row)])
          check.expect(fold.partition.train_classes.count(c) == 0,
                       "unseen-class gallery carries a training label");
    }
  }
  FoldPlan again = make_fold_plan(ds, 5, 7, 0.8);
  check.expect(plan.to_json() == again.to_json(),
               "fold plan not byte-deterministic under a fixed seed");
  const double secs = seconds_since(start);
  check.expect(secs < 1.0, "protocol sweep took " + fixed(secs, 2) + " s (limit 1)");

  std::string drops;
  for (std::size_t i = 0; i < straddlers.size(); ++i)
    drops += (i ? "/" : "") + std::to_string(straddlers[i]);
  return finish(check, "5 folds disjoint, unseen galleries clean, plan "
                       "byte-stable; straddlers dropped per fold: " +
                           drops + " (" + fixed(secs, 2) + " s)");
}

struct CanonicalRun {
  RunConfig config;
  CrossModalDataset dataset;
  RunOutcome outcome;
  double seconds = 0.0;
};

const char* kDirections[2] = {"i2t", "t2i"};

Outcome criterion_seen_vs_unseen(const CanonicalRun& run) {
  Check check;
  for (const char* method : {"cm", "sm", "scm"}) {
    for (const char* dir : kDirections) {
      const AggregateResult* seen =
          find_aggregate(run.outcome.report, method, 0, "non_xtd", dir);
      const AggregateResult* unseen =
          find_aggregate(run.outcome.report, method, 0, "xtd", dir);
      check.expect(seen != nullptr && unseen != nullptr,
                   std::string(method) + " aggregates missing for " + dir);
      if (!check.ok) break;
      check.expect(seen->mean_map > unseen->mean_map,
                   std::string(method) + " " + dir + ": seen-class map " +
                       fixed(seen->mean_map) + " not above unseen " +
                       fixed(unseen->mean_map));
    }
  }
  const AggregateResult* sm_i = find_aggregate(run.outcome.report, "sm", 0,
                                               "non_xtd", "i2t");
  const AggregateResult* sm_t = find_aggregate(run.outcome.report, "sm", 0,
                                               "non_xtd", "t2i");
  for (const AggregateResult* sm : {sm_i, sm_t}) {
    check.expect(sm != nullptr && sm->mean_map > 0.85,
                 "sm seen-class map must exceed 0.85");
    if (sm == nullptr) continue;
    const AggregateResult* x =
        find_aggregate(run.outcome.report, "sm", 0, "xtd", sm->direction);
    check.expect(x != nullptr && sm->mean_map - x->mean_map >= 0.15,
                 "sm unseen-class map must trail the seen-class map by 0.15");
  }
  check.expect(run.seconds < 60.0,
               "benchmark run took " + fixed(run.seconds, 1) + " s (limit 60)");
  std::string gaps;
  for (const char* dir : kDirections) {
    const AggregateResult* s = find_aggregate(run.outcome.report, "sm", 0,
                                              "non_xtd", dir);
    const AggregateResult* x = find_aggregate(run.outcome.report, "sm", 0,
                                              "xtd", dir);
    if (s && x)
      gaps += std::string(dir) + " " + fixed(s->mean_map) + "->" +
              fixed(x->mean_map) + " ";
  }
  return finish(check, "seen-class map beats unseen for cm/sm/scm both "
                       "directions; sm " +
                           gaps + "(" + fixed(run.seconds, 1) + " s)");
}

Outcome criterion_prediction_shortcut(const CanonicalRun& run,
                                      const FoldPlan& plan) {
  Check check;
  for (const char* dir : kDirections) {
    const AggregateResult* ts =
        find_aggregate(run.outcome.report, "ts", 0, "non_xtd", dir);
    check.expect(ts != nullptr, "ts aggregate missing");
    if (!check.ok) break;
    int better = 0;
    for (const char* method : {"cm", "sm", "scm"}) {
      const AggregateResult* other =
          find_aggregate(run.outcome.report, method, 0, "non_xtd", dir);
      check.expect(other != nullptr, "aggregate missing");
      if (other && other->mean_map > ts->mean_map) ++better;
    }
    check.expect(better <= 1, std::string("ts ranks ") + std::to_string(better + 1) +
                                  " of 4 on seen classes for " + dir);

    for (int f = 0; f < run.config.n_folds; ++f) {
      const CellResult* ts_cell =
          find_cell(run.outcome.report, "ts", 0, "xtd", dir, f);
      const CellResult* sm_cell =
          find_cell(run.outcome.report, "sm", 0, "xtd", dir, f);
      check.expect(ts_cell != nullptr && sm_cell != nullptr &&
                       ts_cell->ok() && sm_cell->ok(),
                   "unseen-class ts/sm cells missing for fold " +
                       std::to_string(f));
      if (!check.ok) break;
      check.expect(ts_cell->map.value < sm_cell->map.value,
                   "fold " + std::to_string(f) + " " + dir +
                       ": ts unseen map " + fixed(ts_cell->map.value) +
                       " not below sm " + fixed(sm_cell->map.value));
    }
  }

  // Rank-1 identification against a random-ranking baseline: a random
  // permutation puts a relevant item first with probability cl / gallery.
  std::string cmc_note;
  for (int d = 0; d < 2; ++d) {
    const Direction dir =
        d == 0 ? Direction::image_to_text : Direction::text_to_image;
    double fold_sum = 0.0;
    for (int f = 0; f < run.config.n_folds; ++f) {
      TaskViews views = build_task(plan, {TaskMode::xtd, dir, f});
      double sum = 0.0;
      int defined = 0;
      for (int q : views.query_rows) {
        RelevanceVector rel =
            ground_truth(run.dataset.labels.labels[static_cast<std::size_t>(q)],
                         run.dataset.labels, views.gallery_rows);
        if (rel.positives == 0) continue;
        sum += static_cast<double>(rel.positives) /
               static_cast<double>(views.gallery_rows.size());
        ++defined;
      }
      check.expect(defined > 0, "no scorable unseen-class queries");
      if (defined > 0) fold_sum += sum / defined;
    }
    const double baseline = fold_sum / run.config.n_folds;
    const AggregateResult* ts =
        find_aggregate(run.outcome.report, "ts", 0, "xtd", kDirections[d]);
    check.expect(ts != nullptr && !ts->mean_cmc.empty(), "ts unseen cmc missing");
    if (ts != nullptr && !ts->mean_cmc.empty()) {
      check.expect(ts->mean_cmc[0] < 2.0 * baseline,
                   std::string(kDirections[d]) + ": ts rank-1 rate " +
                       fixed(ts->mean_cmc[0]) + " not below 2x random " +
                       fixed(2.0 * baseline));
      cmc_note += std::string(kDirections[d]) + " " + fixed(ts->mean_cmc[0]) +
                  "<" + fixed(2.0 * baseline) + " ";
    }
  }
  return finish(check, "ts in the top 2 on seen classes, below sm on unseen "
                       "classes in every fold; rank-1 " +
                           cmc_note);
}

Outcome criterion_code_lengths(const CanonicalRun& run) {
  Check check;
  std::string note;
  for (const char* dir : kDirections) {
    const AggregateResult* short_code =
        find_aggregate(run.outcome.report, "cm", 8, "non_xtd", dir);
    const AggregateResult* long_code =
        find_aggregate(run.outcome.report, "cm", 32, "non_xtd", dir);
    check.expect(short_code != nullptr && long_code != nullptr,
                 "binarized cm aggregates missing");
    if (!check.ok) break;
    check.expect(long_code->mean_map >= short_code->mean_map,
                 std::string(dir) + ": 32-bit map " + fixed(long_code->mean_map) +
                     " below 8-bit map " + fixed(short_code->mean_map));
    note += std::string(dir) + " " + fixed(short_code->mean_map) + "->" +
            fixed(long_code->mean_map) + " ";
  }
  return finish(check, "longer codes do not lose seen-class map: " + note);
}

Outcome criterion_map_spread(const CanonicalRun& run) {
  Check check;
  std::string note;
  for (const char* dir : kDirections) {
    double spread[2] = {0.0, 0.0};
    const char* modes[2] = {"non_xtd", "xtd"};
    for (int m = 0; m < 2; ++m) {
      double lo = 2.0, hi = -1.0;
      for (const char* method : {"cm", "sm", "scm"}) {
        const AggregateResult* agg =
            find_aggregate(run.outcome.report, method, 0, modes[m], dir);
        check.expect(agg != nullptr, "aggregate missing for spread");
        if (!agg) continue;
        lo = std::min(lo, agg->mean_map);
        hi = std::max(hi, agg->mean_map);
      }
      spread[m] = hi - lo;
    }
    check.expect(spread[1] < spread[0],
                 std::string(dir) + ": unseen-class spread " + fixed(spread[1]) +
                     " not below seen-class spread " + fixed(spread[0]));
    note += std::string(dir) + " " + fixed(spread[0]) + "->" + fixed(spread[1]) +
            " ";
  }
  return finish(check, "method map spread tightens on unseen classes: " + note);
}

Outcome criterion_reproducibility(const CanonicalRun* canonical) {
  Check check;
  json tiny = {{"dataset",
                {{"synthetic",
                  {{"num_classes", 6},
                   {"samples_per_class", 20},
                   {"dim_a", 10},
                   {"dim_b", 8},
                   {"seed", 11}}}}},
               {"protocol", {{"folds", 2}, {"seed", 3}}},
               {"methods", json::array({{{"name", "sm"}}})}};
  RunConfig cfg = parse_run_config(tiny);
  CrossModalDataset ds = acquire_dataset(cfg);

  oracle::TempDir left("accept_left");
  oracle::TempDir right("accept_right");
  RunOutcome first = run_benchmark(cfg, ds, 1, "");
  RunOutcome second = run_benchmark(cfg, ds, 1, "");
  emit_report(first, left.path);
  emit_report(second, right.path);

  auto slurp = [](const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(in), {});
  };
  const std::string left_bytes = slurp(left.path / "report.json");
  check.expect(!left_bytes.empty(), "report.json missing");
  check.expect(left_bytes == slurp(right.path / "report.json"),
               "identical invocations produced different report.json bytes");

  check.expect(first.report.cells.size() == 1 * 2 * 2 * 2,
               "cell count " + std::to_string(first.report.cells.size()) +
                   " does not match the 1x2x2x2 grid");
  if (canonical != nullptr) {
    std::size_t columns = 0;
    for (const MethodConfig& m : canonical->config.methods)
      columns += 1 + (m.binarize ? canonical->config.code_lengths.size() : 0);
    const std::size_t want = columns * canonical->config.modes.size() *
                             canonical->config.directions.size() *
                             static_cast<std::size_t>(canonical->config.n_folds);
    check.expect(canonical->outcome.report.cells.size() == want,
                 "canonical cell count " +
                     std::to_string(canonical->outcome.report.cells.size()) +
                     " does not match the configured product " +
                     std::to_string(want));
  }
  return finish(check, "byte-identical reports across invocations; cell counts "
                       "match the configured grid");
}

}  // namespace

int main() {
  std::vector<std::pair<int, Outcome>> results;
  auto run_criterion = [&](int id, auto&& fn) {
    Outcome outcome;
    try {
      outcome = fn();
    } catch (const std::exception& e) {
      outcome = fail(std::string("exception: ") + e.what());
    }
    std::printf("C%d %s - %s\n", id, outcome.pass ? "PASS" : "FAIL",
                outcome.detail.c_str());
    std::fflush(stdout);
    results.emplace_back(id, std::move(outcome));
  };

  run_criterion(1, criterion_metric_oracles);
  run_criterion(2, criterion_cmc_invariants);
  run_criterion(3, criterion_cca_correctness);
  run_criterion(4, criterion_logreg_gradients);
  run_criterion(5, criterion_protocol_invariants);

  // One canonical benchmark run shared by the end-to-end criteria.
  std::optional<CanonicalRun> canonical;
  std::optional<FoldPlan> plan;
  std::string canonical_error;
  try {
    CanonicalRun run;
    json cfg_json = {{"methods", json::array({{{"name", "cm"}, {"binarize", true}},
                                              {{"name", "sm"}},
                                              {{"name", "scm"}},
                                              {{"name", "ts"}}})}};
    run.config = parse_run_config(cfg_json);
    run.dataset = acquire_dataset(run.config);
    plan = make_fold_plan(run.dataset, run.config.n_folds, run.config.seed,
                          run.config.fraction_db);
    const auto start = Clock::now();
    run.outcome = run_benchmark(run.config, run.dataset, 1, "");
    run.seconds = seconds_since(start);
    if (run.outcome.failed_cells > 0) {
      canonical_error = std::to_string(run.outcome.failed_cells) +
                        " cells failed in the canonical run";
    } else {
      canonical = std::move(run);
    }
  } catch (const std::exception& e) {
    canonical_error = std::string("canonical run failed: ") + e.what();
  }

  auto with_canonical = [&](auto&& fn) {
    return [&, fn]() -> Outcome {
      if (!canonical) return fail(canonical_error);
      return fn(*canonical);
    };
  };
  run_criterion(6, with_canonical([&](const CanonicalRun& run) {
                  return criterion_seen_vs_unseen(run);
                }));
  run_criterion(7, with_canonical([&](const CanonicalRun& run) {
                  return criterion_prediction_shortcut(run, *plan);
                }));
  run_criterion(8, with_canonical([&](const CanonicalRun& run) {
                  return criterion_code_lengths(run);
                }));
  run_criterion(9, with_canonical([&](const CanonicalRun& run) {
                  return criterion_map_spread(run);
                }));
  run_criterion(10, [&]() {
    return criterion_reproducibility(canonical ? &*canonical : nullptr);
  });

  int failures = 0;
  for (const auto& [id, outcome] : results)
    if (!outcome.pass) ++failures;
  return failures == 0 ? 0 : 1;
}
