#include "xmbench/retrieval.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

#include "xmbench/rng.hpp"

namespace xmb {

namespace {

[[noreturn]] void fail(const std::string& msg) {
  throw std::runtime_error(msg);
}

void sort_and_group(RankedList& list) {
  const std::size_t n = list.scores.size();
  std::vector<int> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  std::sort(perm.begin(), perm.end(), [&](int lhs, int rhs) {
    const double a = list.scores[static_cast<std::size_t>(lhs)];
    const double b = list.scores[static_cast<std::size_t>(rhs)];
    if (a != b) return a > b;
    return lhs < rhs;  // stable gallery index
  });
  std::vector<double> sorted(n);
  for (std::size_t i = 0; i < n; ++i)
    sorted[i] = list.scores[static_cast<std::size_t>(perm[i])];
  list.order = std::move(perm);
  list.scores = std::move(sorted);

  list.tie_groups.clear();
  std::size_t begin = 0;
  for (std::size_t i = 1; i <= n; ++i) {
    if (i == n || list.scores[i] != list.scores[begin]) {
      list.tie_groups.emplace_back(static_cast<int>(begin), static_cast<int>(i));
      begin = i;
    }
  }
}

double cosine_score(const Vector& q, double q_norm, const Vector& g) {
  const double g_norm = g.norm();
  if (g_norm == 0.0) return 0.0;
  return q.dot(g) / (q_norm * g_norm);
}

}  // namespace

const char* similarity_name(Similarity s) {
  switch (s) {
    case Similarity::cosine: return "cosine";
    case Similarity::neg_euclidean: return "neg_euclidean";
    case Similarity::correlation: return "correlation";
  }
  return "?";
}

Similarity parse_similarity(const std::string& name) {
  if (name == "cosine") return Similarity::cosine;
  if (name == "neg_euclidean") return Similarity::neg_euclidean;
  if (name == "correlation") return Similarity::correlation;
  fail("unknown similarity '" + name + "'");
}

const char* tie_policy_name(TiePolicy::Kind kind) {
  switch (kind) {
    case TiePolicy::Kind::stable_index: return "stable_index";
    case TiePolicy::Kind::seeded_shuffle: return "seeded_shuffle";
    case TiePolicy::Kind::expected_ap_analytic: return "expected_ap_analytic";
  }
  return "?";
}

TiePolicy::Kind parse_tie_policy(const std::string& name) {
  if (name == "stable_index") return TiePolicy::Kind::stable_index;
  if (name == "seeded_shuffle") return TiePolicy::Kind::seeded_shuffle;
  if (name == "expected_ap_analytic")
    return TiePolicy::Kind::expected_ap_analytic;
  fail("unknown tie policy '" + name + "'");
}

RankedList rank(const Vector& query, const Matrix& gallery, Similarity metric) {
  if (gallery.rows() == 0) fail("rank: empty gallery");
  if (gallery.cols() != query.size())
    fail("rank: query dim " + std::to_string(query.size()) +
         " vs gallery dim " + std::to_string(gallery.cols()));

  RankedList list;
  list.scores.resize(static_cast<std::size_t>(gallery.rows()));

  Similarity effective = metric;
  Vector q = query;
  if (metric == Similarity::correlation) {
    q.array() -= q.mean();
    effective = Similarity::cosine;
  }
  if (effective == Similarity::cosine && q.norm() == 0.0) {
    // Cosine is undefined for a zero-norm query; fall back per query.
    effective = Similarity::neg_euclidean;
    list.cosine_fallback = true;
  }

  const double q_norm = q.norm();
  for (Eigen::Index i = 0; i < gallery.rows(); ++i) {
    Vector g = gallery.row(i).transpose();
    if (metric == Similarity::correlation) g.array() -= g.mean();
    double s;
    if (effective == Similarity::cosine)
      s = cosine_score(q, q_norm, g);
    else
      s = -(q - g).norm();
    if (!std::isfinite(s)) fail("rank: non-finite similarity score");
    list.scores[static_cast<std::size_t>(i)] = s;
  }
  sort_and_group(list);
  return list;
}

int BinaryCodes::hamming(int row, const std::uint64_t* other) const {
  const std::uint64_t* mine = code(row);
  int dist = 0;
  for (int w = 0; w < words_per_code; ++w)
    dist += std::popcount(mine[w] ^ other[w]);
  return dist;
}

RankedList rank_hamming(const BinaryCodes& queries, int query_row,
                        const BinaryCodes& gallery) {
  if (queries.code_length != gallery.code_length)
    fail("rank_hamming: code length mismatch (" +
         std::to_string(queries.code_length) + " vs " +
         std::to_string(gallery.code_length) + ")");
  if (gallery.count() == 0) fail("rank_hamming: empty gallery");

  RankedList list;
  list.scores.resize(static_cast<std::size_t>(gallery.count()));
  const std::uint64_t* q = queries.code(query_row);
  for (int i = 0; i < gallery.count(); ++i)
    list.scores[static_cast<std::size_t>(i)] = -gallery.hamming(i, q);
  sort_and_group(list);
  return list;
}

RankedList rank_ts(int query_prediction,
                   const std::vector<int>& gallery_predictions,
                   const TiePolicy& policy) {
  if (gallery_predictions.empty()) fail("rank_ts: empty gallery");

  RankedList list;
  std::vector<int> matched, rest;
  for (std::size_t i = 0; i < gallery_predictions.size(); ++i)
    (gallery_predictions[i] == query_prediction ? matched : rest)
        .push_back(static_cast<int>(i));

  if (policy.kind == TiePolicy::Kind::seeded_shuffle) {
    Rng rng(policy.seed);
    rng.shuffle(matched);
    rng.shuffle(rest);
  }
  list.order = matched;
  list.order.insert(list.order.end(), rest.begin(), rest.end());
  list.scores.assign(gallery_predictions.size(), 0.0);
  for (std::size_t i = 0; i < matched.size(); ++i) list.scores[i] = 1.0;

  list.tie_groups.clear();
  if (!matched.empty())
    list.tie_groups.emplace_back(0, static_cast<int>(matched.size()));
  if (!rest.empty())
    list.tie_groups.emplace_back(static_cast<int>(matched.size()),
                                 static_cast<int>(gallery_predictions.size()));
  return list;
}

void write_run_file(const RunFile& run, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail("cannot write run file " + path.string());
  auto put_u32 = [&](std::uint32_t v) {
    const unsigned char b[4] = {
        static_cast<unsigned char>(v & 0xff),
        static_cast<unsigned char>((v >> 8) & 0xff),
        static_cast<unsigned char>((v >> 16) & 0xff),
        static_cast<unsigned char>((v >> 24) & 0xff)};
    out.write(reinterpret_cast<const char*>(b), 4);
  };
  auto put_str = [&](const std::string& s) {
    put_u32(static_cast<std::uint32_t>(s.size()));
    out.write(s.data(), static_cast<std::streamsize>(s.size()));
  };

  out.write("XMRN", 4);
  put_u32(static_cast<std::uint32_t>(run.gallery_ids.size()));
  for (const auto& id : run.gallery_ids) put_str(id);
  put_u32(static_cast<std::uint32_t>(run.lists.size()));
  for (const auto& list : run.lists) {
    if (list.order.size() != run.gallery_ids.size())
      fail("run file: query '" + list.query_id + "' ranks " +
           std::to_string(list.order.size()) + " items, gallery has " +
           std::to_string(run.gallery_ids.size()));
    put_str(list.query_id);
    for (int idx : list.order) put_u32(static_cast<std::uint32_t>(idx));
    for (double s : list.scores) {
      const float f = static_cast<float>(s);
      out.write(reinterpret_cast<const char*>(&f), 4);
    }
  }
  if (!out) fail("short write on " + path.string());
}

void write_run_trec(const RunFile& run, const std::filesystem::path& path,
                    const std::string& tag) {
  std::ofstream out(path);
  if (!out) fail("cannot write run file " + path.string());
  for (const auto& list : run.lists)
    for (std::size_t r = 0; r < list.order.size(); ++r)
      out << list.query_id << " Q0 "
          << run.gallery_ids[static_cast<std::size_t>(list.order[r])] << ' '
          << (r + 1) << ' ' << list.scores[r] << ' ' << tag << '\n';
}

namespace {

RunFile read_run_trec(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail("cannot open run file " + path.string());
  RunFile run;
  std::map<std::string, int> gallery_index;
  std::string line;
  std::vector<std::vector<std::pair<int, double>>> rows;  // per query
  std::vector<std::string> query_ids;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string qid, q0, docid, tag;
    long rank;
    double score;
    if (!(ss >> qid >> q0 >> docid >> rank >> score))
      fail(path.string() + ": malformed TREC run line: " + line);
    auto [it, inserted] =
        gallery_index.emplace(docid, static_cast<int>(run.gallery_ids.size()));
    if (inserted) run.gallery_ids.push_back(docid);
    if (query_ids.empty() || query_ids.back() != qid) {
      query_ids.push_back(qid);
      rows.emplace_back();
    }
    rows.back().emplace_back(it->second, score);
  }
  for (std::size_t q = 0; q < query_ids.size(); ++q) {
    RankedList list;
    list.query_id = query_ids[q];
    for (const auto& [idx, score] : rows[q]) {
      list.order.push_back(idx);
      list.scores.push_back(score);
    }
    std::size_t begin = 0;
    for (std::size_t i = 1; i <= list.scores.size(); ++i) {
      if (i == list.scores.size() || list.scores[i] != list.scores[begin]) {
        list.tie_groups.emplace_back(static_cast<int>(begin),
                                     static_cast<int>(i));
        begin = i;
      }
    }
    run.lists.push_back(std::move(list));
  }
  return run;
}

}  // namespace

RunFile read_run_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail("cannot open run file " + path.string());
  char magic[4] = {};
  in.read(magic, 4);
  if (!in || std::string(magic, 4) != "XMRN") return read_run_trec(path);

  auto get_u32 = [&]() -> std::uint32_t {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    if (!in) fail(path.string() + ": truncated run file");
    return static_cast<std::uint32_t>(b[0]) |
           static_cast<std::uint32_t>(b[1]) << 8 |
           static_cast<std::uint32_t>(b[2]) << 16 |
           static_cast<std::uint32_t>(b[3]) << 24;
  };
  auto get_str = [&]() {
    std::string s(get_u32(), '\0');
    in.read(s.data(), static_cast<std::streamsize>(s.size()));
    if (!in) fail(path.string() + ": truncated run file");
    return s;
  };

  RunFile run;
  const std::uint32_t gallery = get_u32();
  run.gallery_ids.reserve(gallery);
  for (std::uint32_t i = 0; i < gallery; ++i) run.gallery_ids.push_back(get_str());
  const std::uint32_t queries = get_u32();
  for (std::uint32_t q = 0; q < queries; ++q) {
    RankedList list;
    list.query_id = get_str();
    list.order.resize(gallery);
    list.scores.resize(gallery);
    for (std::uint32_t i = 0; i < gallery; ++i)
      list.order[i] = static_cast<int>(get_u32());
    for (std::uint32_t i = 0; i < gallery; ++i) {
      float f;
      in.read(reinterpret_cast<char*>(&f), 4);
      if (!in) fail(path.string() + ": truncated run file");
      list.scores[i] = f;
    }
    std::size_t begin = 0;
    for (std::size_t i = 1; i <= list.scores.size(); ++i) {
      if (i == list.scores.size() || list.scores[i] != list.scores[begin]) {
        list.tie_groups.emplace_back(static_cast<int>(begin),
                                     static_cast<int>(i));
        begin = i;
      }
    }
    run.lists.push_back(std::move(list));
  }
  return run;
}

}  // namespace xmb
