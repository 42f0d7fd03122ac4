#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "xmbench/dataset.hpp"
#include "xmbench/retrieval.hpp"

namespace xmb {

// Per-dimension mean/scale for one modality, fitted on training rows only.
// scale is floored so constant dimensions stay usable.
struct Standardizer {
  Vector mean;
  Vector scale;
  std::string provenance = "unfit";

  void fit(const Matrix& train);
  Matrix transform(const Matrix& x) const;
  bool fitted() const { return mean.size() > 0; }
};

// Affine map into the shared space: y = x * weight + offset.
struct AffineStage {
  Matrix weight;   // input dim x output dim
  Eigen::RowVectorXd offset;

  bool present() const { return weight.size() > 0; }
  Matrix apply(const Matrix& x) const;
};

// One modality's raw-features -> shared-space chain. Stages are optional:
// CM stops after the projection, SM goes straight to the classifier, SCM
// re-standardizes the projected features before its classifier.
struct ModalityPipeline {
  Standardizer standardizer;
  AffineStage projection;
  Standardizer post_standardizer;
  AffineStage classifier;
  bool softmax = false;

  Matrix apply(const Matrix& raw) const;
  int output_dim() const;
};

enum class ModelKind { cm, sm, scm, ts, precomputed };

const char* model_kind_name(ModelKind kind);

// A fitted mapper from each raw modality into a shared comparable space.
// kind = ts exposes argmax class predictions instead of embeddings.
struct EmbeddingModel {
  ModelKind kind = ModelKind::cm;
  ModalityPipeline pipeline_a;
  ModalityPipeline pipeline_b;
  FeatureMatrix precomputed_a;  // precomputed kind only, one row per sample
  FeatureMatrix precomputed_b;
  std::vector<int> class_ids;   // posterior slot -> original class id
  nlohmann::json metadata = nlohmann::json::object();

  int output_dim() const;
  Matrix embed(const Matrix& raw, Modality modality) const;
  Matrix embed_rows(const CrossModalDataset& dataset,
                    const std::vector<int>& rows, Modality modality) const;
  std::vector<int> predict_rows(const CrossModalDataset& dataset,
                                const std::vector<int>& rows,
                                Modality modality) const;
};

// CM: top-k canonical directions per modality via ridge-whitened
// cross-covariance SVD. Canonical correlations land in
// metadata["correlations"], sorted non-increasing.
EmbeddingModel fit_cm(const Matrix& train_a, const Matrix& train_b, int k,
                      double reg);

// Core multinomial logistic regression trainer shared by SM/SCM/TS. Labels
// are dense ids in [0, k); multi-label samples contribute one replicated
// example per label. Full-batch conjugate-gradient descent with Armijo line
// search; stops when the gradient max-norm drops below tol or at iteration
// cap.
struct LogisticClassifier {
  Standardizer standardizer;
  Matrix weights;  // d x k
  Eigen::RowVectorXd bias;
  int iterations = 0;
  bool converged = false;
  double grad_max_norm = 0.0;
};

struct LogisticOptions {
  double l2 = 1e-3;
  double tol = 1e-6;
  int max_iterations = 500;
  bool standardize = true;
};

LogisticClassifier fit_multinomial_logreg(const Matrix& x,
                                          const std::vector<std::vector<int>>& labels,
                                          int k, const LogisticOptions& opts);

// Regularized NLL and its gradient at the given parameters (replication
// already applied); exposed for the finite-difference checks.
double logreg_loss_grad(const Matrix& x_replicated,
                        const std::vector<int>& y_replicated, const Matrix& w,
                        const Eigen::RowVectorXd& bias, double l2,
                        Matrix* grad_w, Eigen::RowVectorXd* grad_bias);

// SM: a classifier per modality, embedding = K-vector of class posteriors.
EmbeddingModel fit_sm(const Matrix& train_a, const Matrix& train_b,
                      const std::vector<std::vector<int>>& labels, int k,
                      double l2);

// SCM: CM first, then SM classifiers on the CCA-projected features.
EmbeddingModel fit_scm(const Matrix& train_a, const Matrix& train_b,
                       const std::vector<std::vector<int>>& labels, int k,
                       double reg, double l2);

// TS: the SM trainer, but the model exposes argmax class predictions and is
// ranked by prediction equality.
EmbeddingModel fit_ts(const Matrix& train_a, const Matrix& train_b,
                      const std::vector<std::vector<int>>& labels, int k,
                      double l2);

// Plugin kind: per-sample embeddings from two XMBF files aligned with the
// dataset's row order, so externally computed baselines score through the
// same harness.
EmbeddingModel load_precomputed_embeddings(const std::filesystem::path& path_a,
                                           const std::filesystem::path& path_b,
                                           int expected_rows);

// Sign binarization of the code_length leading projection dimensions with
// per-modality median thresholds (bit = 1 iff value > threshold). When the
// model is narrower than code_length, CM is re-fitted at k = code_length.
struct BinaryEncoder {
  EmbeddingModel model;
  Vector thresholds_a;
  Vector thresholds_b;
  int code_length = 0;

  BinaryCodes encode(const Matrix& raw, Modality modality) const;
  BinaryCodes encode_rows(const CrossModalDataset& dataset,
                          const std::vector<int>& rows,
                          Modality modality) const;
};

BinaryEncoder binarize(const EmbeddingModel& model,
                       const CrossModalDataset& dataset,
                       const std::vector<int>& train_rows, int code_length,
                       double reg);

// Self-describing binary model blob for cache/re-use.
void save_model(const EmbeddingModel& model, const std::filesystem::path& path);
EmbeddingModel load_model(const std::filesystem::path& path);

// Maps arbitrary class ids to dense [0, k) slots for the trainers.
struct ClassIndexer {
  std::vector<int> class_ids;  // sorted ascending

  explicit ClassIndexer(const std::set<int>& classes)
      : class_ids(classes.begin(), classes.end()) {}
  int size() const { return static_cast<int>(class_ids.size()); }
  int index_of(int class_id) const;
  // Dense per-sample label lists for the given dataset rows; labels outside
  // the indexer are dropped (straddler exclusion already guarantees they do
  // not occur in practice).
  std::vector<std::vector<int>> dense_labels(const CrossModalDataset& dataset,
                                             const std::vector<int>& rows) const;
};

}  // namespace xmb
