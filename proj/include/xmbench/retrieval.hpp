#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "xmbench/common.hpp"
#include "xmbench/metrics.hpp"

namespace xmb {

enum class Similarity { cosine, neg_euclidean, correlation };

const char* similarity_name(Similarity s);
Similarity parse_similarity(const std::string& name);

// How within-tie order is resolved. expected_ap_analytic materializes no
// permutation; the metrics layer consumes tie_groups directly.
struct TiePolicy {
  enum class Kind { stable_index, seeded_shuffle, expected_ap_analytic };
  Kind kind = Kind::expected_ap_analytic;
  std::uint64_t seed = 0;
};

const char* tie_policy_name(TiePolicy::Kind kind);
TiePolicy::Kind parse_tie_policy(const std::string& name);

// One query's full gallery ordering, best first. order is a permutation of
// [0, gallery); scores are parallel and non-increasing; tie_groups spans
// equal-score runs (singletons included).
struct RankedList {
  std::string query_id;
  std::vector<int> order;
  std::vector<double> scores;
  TieGroups tie_groups;
  bool cosine_fallback = false;  // zero-norm query scored by neg_euclidean
};

// Full ordering under the chosen similarity; ties broken by gallery index.
RankedList rank(const Vector& query, const Matrix& gallery, Similarity metric);

// Compact packed binary codes, one code per row.
struct BinaryCodes {
  int code_length = 0;
  int words_per_code = 0;
  std::vector<std::uint64_t> words;

  int count() const {
    return words_per_code == 0 ? 0
                               : static_cast<int>(words.size()) / words_per_code;
  }
  const std::uint64_t* code(int row) const {
    return words.data() + static_cast<std::size_t>(row) * words_per_code;
  }
  int hamming(int row, const std::uint64_t* other) const;
};

// Ascending Hamming distance; ties are pervasive at short code lengths and
// surface in tie_groups.
RankedList rank_hamming(const BinaryCodes& queries, int query_row,
                        const BinaryCodes& gallery);

// Trivial-solution ranking: items whose predicted class equals the query's
// prediction form one tie group ahead of everything else; within-group order
// follows the tie policy.
RankedList rank_ts(int query_prediction, const std::vector<int>& gallery_predictions,
                   const TiePolicy& policy);

// Run files: every query's permutation and scores for later scoring.
// Binary container: "XMRN", u32 gallery size, gallery ids, u32 query count,
// then per query: id, u32 x gallery permutation, f32 x gallery scores.
struct RunFile {
  std::vector<std::string> gallery_ids;
  std::vector<RankedList> lists;
};

void write_run_file(const RunFile& run, const std::filesystem::path& path);
void write_run_trec(const RunFile& run, const std::filesystem::path& path,
                    const std::string& tag);
RunFile read_run_file(const std::filesystem::path& path);

}  // namespace xmb
