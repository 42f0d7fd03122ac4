#pragma once

#include <cstdint>
#include <filesystem>
#include <set>
#include <string>
#include <vector>

#include "xmbench/common.hpp"

namespace xmb {

// Multi-label class annotations, one label set per sample.
struct LabelTable {
  std::vector<std::set<int>> labels;
  int num_classes = 0;

  std::size_t size() const { return labels.size(); }
  void validate() const;
};

// Paired per-sample features for two modalities plus class annotations.
// Immutable after construction; safe to share across threads.
struct CrossModalDataset {
  std::string name;
  std::string modality_name_a = "a";
  std::string modality_name_b = "b";
  FeatureMatrix modality_a;
  FeatureMatrix modality_b;
  LabelTable labels;
  std::vector<std::string> sample_ids;
  std::vector<std::string> class_names;  // optional, indexed by class id

  int num_samples() const { return static_cast<int>(sample_ids.size()); }
  void validate() const;
};

// Class-conditional synthetic generator parameters. Latent structure per
// sample: a class center confined to one low-dimensional semantic subspace
// (coordinates scaled by class_separation), plus one of a few per-class
// content themes drawn orthogonal to that subspace, plus local detail.
// Themes are shared across modalities outright; local detail is shared at
// strength cross_modal_correlation; the center is scaled per modality by an
// expression factor whose spread vanishes as the correlation approaches 1.
// Both views observe the latent through one fixed rotation; modality A keeps
// the first dim_a coordinates and modality B the first dim_b, so with equal
// dims and correlation 1 the paired views coincide. A multilabel_rate
// fraction of samples gets one extra random label.
struct SynthSpec {
  int num_classes = 10;
  int samples_per_class = 200;
  int dim_a = 64;
  int dim_b = 32;
  double class_separation = 3.0;
  double cross_modal_correlation = 0.9;
  double multilabel_rate = 0.1;
  std::uint64_t seed = 7;

  void validate() const;
};

CrossModalDataset generate_synthetic(const SynthSpec& spec);

// On-disk layout of a dataset directory:
//   meta.json      dataset name, modality names, dims, num_classes, count
//   features_a/b   "XMBF" magic, u32 rows, u32 cols, binary32 LE row-major
//                  (a .csv file of plain numeric rows is accepted as well)
//   labels.csv     sample_id,labels with ';'-separated non-negative class ids
//   classes.csv    optional class_id,name rows
CrossModalDataset load_dataset(const std::filesystem::path& root);
void write_dataset(const CrossModalDataset& dataset,
                   const std::filesystem::path& root);

FeatureMatrix read_feature_file(const std::filesystem::path& path);
void write_feature_file(const FeatureMatrix& features,
                        const std::filesystem::path& path);

// Standalone label file (same sample_id,labels CSV), e.g. relevance
// judgments for scoring an externally produced run.
struct LabeledIds {
  std::vector<std::string> sample_ids;
  LabelTable labels;
};

LabeledIds read_label_table(const std::filesystem::path& path);

}  // namespace xmb
