#include "xmbench/metrics.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>

namespace xmb {

using nlohmann::json;

namespace {

[[noreturn]] void fail(const std::string& msg) {
  throw std::runtime_error(msg);
}

void check_partition(const TieGroups& groups, std::size_t n) {
  int expected_begin = 0;
  for (const auto& [begin, end] : groups) {
    if (begin != expected_begin || end <= begin)
      fail("tie groups do not partition the ranking: span [" +
           std::to_string(begin) + ", " + std::to_string(end) + ") after " +
           std::to_string(expected_begin));
    expected_begin = end;
  }
  if (expected_begin != static_cast<int>(n))
    fail("tie groups cover " + std::to_string(expected_begin) + " of " +
         std::to_string(n) + " ranked items");
}

}  // namespace

ApValue average_precision(const std::vector<std::uint8_t>& rel) {
  if (rel.empty()) fail("average_precision: empty ranking");
  double ap_sum = 0.0;
  int hits = 0;
  for (std::size_t i = 0; i < rel.size(); ++i) {
    if (rel[i]) {
      ++hits;
      ap_sum += static_cast<double>(hits) / static_cast<double>(i + 1);
    }
  }
  if (hits == 0) return {0.0, false};
  return {ap_sum / static_cast<double>(hits), true};
}

MapValue mean_average_precision(const std::vector<ApValue>& aps) {
  MapValue out;
  double sum = 0.0;
  for (const auto& ap : aps) {
    if (ap.defined) {
      sum += ap.value;
      ++out.defined_queries;
    } else {
      ++out.excluded_queries;
    }
  }
  if (out.defined_queries == 0)
    fail("mean_average_precision: every query has empty ground truth");
  out.value = sum / static_cast<double>(out.defined_queries);
  return out;
}

ApValue expected_ap_with_ties(const TieGroups& groups,
                              const std::vector<std::uint8_t>& rel) {
  check_partition(groups, rel.size());
  int total_positives = 0;
  for (auto b : rel) total_positives += b;
  if (total_positives == 0) return {0.0, false};

  // Within a group of m items holding k positives, position t (1-based,
  // global rank s+t) is positive with probability k/m, and pairs of positions
  // are jointly positive with probability k(k-1)/(m(m-1)). Positives from
  // earlier groups contribute a deterministic prefix count.
  double expected_sum = 0.0;
  int before = 0;
  for (const auto& [begin, end] : groups) {
    const int m = end - begin;
    int k = 0;
    for (int i = begin; i < end; ++i) k += rel[static_cast<std::size_t>(i)];
    const double p1 = static_cast<double>(k) / m;
    const double p2 =
        m > 1 ? static_cast<double>(k) * (k - 1) / (static_cast<double>(m) * (m - 1))
              : 0.0;
    for (int t = 1; t <= m; ++t) {
      const double rank = begin + t;
      expected_sum += ((before + 1) * p1 + (t - 1) * p2) / rank;
    }
    before += k;
  }
  return {expected_sum / total_positives, true};
}

std::vector<double> expected_first_match_cdf(
    const TieGroups& groups, const std::vector<std::uint8_t>& rel) {
  check_partition(groups, rel.size());
  std::vector<double> cdf(rel.size(), 0.0);
  for (const auto& [begin, end] : groups) {
    const int m = end - begin;
    int k = 0;
    for (int i = begin; i < end; ++i) k += rel[static_cast<std::size_t>(i)];
    if (k == 0) continue;
    // P(no positive in the first t slots of the group) =
    //   prod_{j<t} (m-k-j)/(m-j)
    double p_none = 1.0;
    for (int t = 1; t <= m; ++t) {
      p_none *= static_cast<double>(m - k - (t - 1)) / (m - (t - 1));
      if (p_none < 0) p_none = 0;
      cdf[static_cast<std::size_t>(begin + t - 1)] = 1.0 - p_none;
    }
    for (std::size_t i = static_cast<std::size_t>(end); i < rel.size(); ++i)
      cdf[i] = 1.0;
    return cdf;  // first group with a positive decides the whole curve
  }
  return cdf;
}

CmcCurve cmc_from_cdfs(const std::vector<std::vector<double>>& per_query_cdfs,
                       int excluded_queries) {
  if (per_query_cdfs.empty()) fail("cmc: empty query set");
  const std::size_t gallery = per_query_cdfs.front().size();
  CmcCurve curve;
  curve.num_queries = static_cast<int>(per_query_cdfs.size());
  curve.excluded_queries = excluded_queries;
  curve.values.assign(gallery, 0.0);
  for (const auto& cdf : per_query_cdfs) {
    if (cdf.size() != gallery)
      fail("cmc: query curves of different gallery sizes (" +
           std::to_string(cdf.size()) + " vs " + std::to_string(gallery) + ")");
    for (std::size_t i = 0; i < gallery; ++i) curve.values[i] += cdf[i];
  }
  for (auto& v : curve.values) v /= curve.num_queries;
  curve.validate();
  return curve;
}

CmcCurve cmc_from_first_ranks(const std::vector<int>& first_ranks,
                              int gallery_size, int excluded_queries) {
  if (first_ranks.empty()) fail("cmc: empty query set");
  CmcCurve curve;
  curve.num_queries = static_cast<int>(first_ranks.size());
  curve.excluded_queries = excluded_queries;
  curve.values.assign(static_cast<std::size_t>(gallery_size), 0.0);
  for (int r : first_ranks) {
    if (r < 1 || r > gallery_size)
      fail("cmc: first-match rank " + std::to_string(r) +
           " outside gallery of " + std::to_string(gallery_size));
    curve.values[static_cast<std::size_t>(r - 1)] += 1.0;
  }
  double cum = 0.0;
  for (auto& v : curve.values) {
    cum += v;
    v = cum / curve.num_queries;
  }
  curve.validate();
  return curve;
}

void CmcCurve::validate() const {
  double prev = 0.0;
  for (double v : values) {
    if (v < prev - 1e-12 || v < -1e-12 || v > 1.0 + 1e-12)
      fail("CMC curve violates monotone [0,1] invariant");
    prev = v;
  }
}

std::string CellResult::key() const {
  std::string k = method;
  if (code_length > 0) k += "_b" + std::to_string(code_length);
  return k + "_" + mode + "_" + direction + "_f" + std::to_string(fold);
}

std::string AggregateResult::key() const {
  std::string k = method;
  if (code_length > 0) k += "_b" + std::to_string(code_length);
  return k + "_" + mode + "_" + direction;
}

AggregateResult aggregate_folds(const std::vector<const CellResult*>& fold_cells,
                                int expected_folds) {
  if (fold_cells.empty()) fail("aggregate_folds: no cells");
  if (expected_folds > 0 &&
      static_cast<int>(fold_cells.size()) != expected_folds)
    fail("aggregate_folds: got " + std::to_string(fold_cells.size()) +
         " folds, expected " + std::to_string(expected_folds));

  AggregateResult agg;
  agg.method = fold_cells.front()->method;
  agg.mode = fold_cells.front()->mode;
  agg.direction = fold_cells.front()->direction;
  agg.code_length = fold_cells.front()->code_length;
  agg.n_folds = static_cast<int>(fold_cells.size());

  std::size_t min_len = fold_cells.front()->cmc.values.size();
  for (const auto* cell : fold_cells)
    min_len = std::min(min_len, cell->cmc.values.size());
  agg.cmc_truncated_to = static_cast<int>(min_len);
  agg.mean_cmc.assign(min_len, 0.0);

  double map_sum = 0.0;
  for (const auto* cell : fold_cells) {
    map_sum += cell->map.value;
    for (std::size_t i = 0; i < min_len; ++i)
      agg.mean_cmc[i] += cell->cmc.values[i];
  }
  agg.mean_map = map_sum / agg.n_folds;
  for (auto& v : agg.mean_cmc) v /= agg.n_folds;
  return agg;
}

std::string EvalReport::to_json() const {
  json j;
  j["metadata"] = metadata_json.empty() ? json::object() : json::parse(metadata_json);
  j["cells"] = json::array();
  for (const auto& cell : cells) {
    json jc;
    jc["key"] = cell.key();
    jc["method"] = cell.method;
    jc["mode"] = cell.mode;
    jc["direction"] = cell.direction;
    jc["fold"] = cell.fold;
    if (cell.code_length > 0) jc["code_length"] = cell.code_length;
    if (!cell.ok()) {
      jc["error"] = cell.error;
    } else {
      jc["map"] = cell.map.value;
      jc["defined_queries"] = cell.map.defined_queries;
      jc["excluded_queries"] = cell.map.excluded_queries;
      jc["query_count"] = cell.query_count;
      jc["gallery_size"] = cell.gallery_size;
      jc["dropped_straddlers"] = cell.dropped_straddlers;
      if (cell.cosine_fallbacks > 0)
        jc["cosine_fallbacks"] = cell.cosine_fallbacks;
      jc["cmc"] = cell.cmc.values;
    }
    j["cells"].push_back(std::move(jc));
  }
  j["aggregates"] = json::array();
  for (const auto& agg : aggregates) {
    json ja;
    ja["key"] = agg.key();
    ja["method"] = agg.method;
    ja["mode"] = agg.mode;
    ja["direction"] = agg.direction;
    if (agg.code_length > 0) ja["code_length"] = agg.code_length;
    ja["n_folds"] = agg.n_folds;
    ja["mean_map"] = agg.mean_map;
    ja["cmc_truncated_to"] = agg.cmc_truncated_to;
    ja["mean_cmc"] = agg.mean_cmc;
    j["aggregates"].push_back(std::move(ja));
  }
  return j.dump(2);
}

}  // namespace xmb
