#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "xmbench/protocol.hpp"

namespace xmb {

// Consecutive spans of equal-score items in a ranked list, as [begin, end)
// offsets into the ranking. Singleton spans are included, so the groups
// always partition the gallery.
using TieGroups = std::vector<std::pair<int, int>>;

// AP of one ranked list under the class ground truth. Undefined (and excluded
// from MAP) when the query has no positives at all.
struct ApValue {
  double value = 0.0;
  bool defined = false;
};

struct MapValue {
  double value = 0.0;
  int defined_queries = 0;
  int excluded_queries = 0;  // cl = 0, reported but not averaged
};

// values[n] = fraction of queries whose first relevant item appears within
// the top n+1 ranks.
struct CmcCurve {
  std::vector<double> values;
  int num_queries = 0;
  int excluded_queries = 0;

  void validate() const;
};

// relevance_in_rank_order[i] = delta(q, i+1), i.e. already permuted by the
// ranking.
ApValue average_precision(const std::vector<std::uint8_t>& relevance_in_rank_order);

MapValue mean_average_precision(const std::vector<ApValue>& aps);

// Closed-form expectation of AP when each tie group is ordered by an
// independent uniform random permutation. With singleton groups this equals
// average_precision exactly.
ApValue expected_ap_with_ties(const TieGroups& groups,
                              const std::vector<std::uint8_t>& relevance_in_rank_order);

// Per-rank probability that the first relevant item lands within the top n+1
// under the same uniform tie model. Deterministic rankings are the degenerate
// singleton-group case.
std::vector<double> expected_first_match_cdf(
    const TieGroups& groups,
    const std::vector<std::uint8_t>& relevance_in_rank_order);

// Aggregates per-query first-match CDFs (each of gallery length) into a CMC
// curve. Queries without positives must be pre-filtered and passed as
// excluded.
CmcCurve cmc_from_cdfs(const std::vector<std::vector<double>>& per_query_cdfs,
                       int excluded_queries);

// Convenience for deterministic rankings: 1-based rank of the first relevant
// item per query.
CmcCurve cmc_from_first_ranks(const std::vector<int>& first_ranks,
                              int gallery_size, int excluded_queries);

// One scored grid cell: a (fold, mode, direction, method) result.
struct CellResult {
  std::string method;
  std::string mode;
  std::string direction;
  int fold = 0;
  int code_length = 0;  // 0 = real-valued
  MapValue map;
  CmcCurve cmc;
  int dropped_straddlers = 0;
  int query_count = 0;
  int gallery_size = 0;
  int cosine_fallbacks = 0;
  std::string error;  // nonempty = cell failed

  bool ok() const { return error.empty(); }
  std::string key() const;
};

// Fold-averaged aggregate of one (method, mode, direction) column.
struct AggregateResult {
  std::string method;
  std::string mode;
  std::string direction;
  int code_length = 0;
  int n_folds = 0;
  double mean_map = 0.0;
  std::vector<double> mean_cmc;  // truncated to the shortest fold gallery
  int cmc_truncated_to = 0;
  std::string key() const;
};

struct EvalReport {
  std::vector<CellResult> cells;
  std::vector<AggregateResult> aggregates;
  std::string metadata_json;  // run metadata: seeds, config hash, ...

  std::string to_json() const;
};

// Pointwise CMC mean + MAP mean over folds of one column. Throws on fold
// count mismatch against expected_folds (0 = any).
AggregateResult aggregate_folds(const std::vector<const CellResult*>& fold_cells,
                                int expected_folds = 0);

}  // namespace xmb
