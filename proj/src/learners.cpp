#include "xmbench/learners.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

#include <Eigen/Dense>

namespace xmb {

namespace {

[[noreturn]] void fail(const std::string& message) {
  throw std::runtime_error(message);
}

constexpr double kScaleFloor = 1e-12;

}  // namespace

void Standardizer::fit(const Matrix& train) {
  const auto n = train.rows();
  if (n < 1) fail("standardizer: cannot fit on an empty matrix");
  mean = train.colwise().mean();
  scale = Vector::Ones(train.cols());
  if (n > 1) {
    Matrix centered = train.rowwise() - mean.transpose();
    Vector var = centered.array().square().colwise().sum() / double(n - 1);
    for (Eigen::Index j = 0; j < var.size(); ++j) {
      double sd = std::sqrt(std::max(var[j], 0.0));
      scale[j] = sd < kScaleFloor ? 1.0 : sd;
    }
  }
  provenance = "train:" + std::to_string(n) + "rows";
}

Matrix Standardizer::transform(const Matrix& x) const {
  if (!fitted()) fail("standardizer: transform before fit");
  if (x.cols() != mean.size()) {
    fail("standardizer: input has " + std::to_string(x.cols()) +
         " columns, fitted on " + std::to_string(mean.size()));
  }
  Matrix out = x.rowwise() - mean.transpose();
  out.array().rowwise() /= scale.transpose().array();
  return out;
}

Matrix AffineStage::apply(const Matrix& x) const {
  if (x.cols() != weight.rows()) {
    fail("affine stage: input width " + std::to_string(x.cols()) +
         " does not match map input " + std::to_string(weight.rows()));
  }
  Matrix out = x * weight;
  if (offset.size() > 0) out.rowwise() += offset;
  return out;
}

namespace {

// Stable row-wise softmax, each row renormalized to sum exactly to one.
Matrix softmax_rows(const Matrix& z) {
  Matrix p(z.rows(), z.cols());
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    double zmax = z.row(i).maxCoeff();
    Eigen::RowVectorXd e = (z.row(i).array() - zmax).exp();
    p.row(i) = e / e.sum();
  }
  return p;
}

}  // namespace

Matrix ModalityPipeline::apply(const Matrix& raw) const {
  Matrix x = standardizer.fitted() ? standardizer.transform(raw) : raw;
  if (projection.present()) x = projection.apply(x);
  if (post_standardizer.fitted()) x = post_standardizer.transform(x);
  if (classifier.present()) x = classifier.apply(x);
  if (softmax) x = softmax_rows(x);
  return x;
}

int ModalityPipeline::output_dim() const {
  if (classifier.present()) return static_cast<int>(classifier.weight.cols());
  if (projection.present()) return static_cast<int>(projection.weight.cols());
  return 0;
}

const char* model_kind_name(ModelKind kind) {
  switch (kind) {
    case ModelKind::cm: return "cm";
    case ModelKind::sm: return "sm";
    case ModelKind::scm: return "scm";
    case ModelKind::ts: return "ts";
    case ModelKind::precomputed: return "precomputed";
  }
  fail("unknown model kind");
}

namespace {

ModelKind parse_model_kind(const std::string& name) {
  if (name == "cm") return ModelKind::cm;
  if (name == "sm") return ModelKind::sm;
  if (name == "scm") return ModelKind::scm;
  if (name == "ts") return ModelKind::ts;
  if (name == "precomputed") return ModelKind::precomputed;
  fail("unknown model kind '" + name + "'");
}

}  // namespace

int EmbeddingModel::output_dim() const {
  if (kind == ModelKind::precomputed) {
    return static_cast<int>(precomputed_a.cols());
  }
  return pipeline_a.output_dim();
}

Matrix EmbeddingModel::embed(const Matrix& raw, Modality modality) const {
  if (kind == ModelKind::precomputed) {
    fail("precomputed embeddings are addressed by dataset row, not raw features");
  }
  return modality == Modality::a ? pipeline_a.apply(raw) : pipeline_b.apply(raw);
}

Matrix EmbeddingModel::embed_rows(const CrossModalDataset& dataset,
                                  const std::vector<int>& rows,
                                  Modality modality) const {
  if (kind == ModelKind::precomputed) {
    const FeatureMatrix& table =
        modality == Modality::a ? precomputed_a : precomputed_b;
    if (table.rows() != dataset.num_samples()) {
      fail("precomputed embeddings cover " + std::to_string(table.rows()) +
           " rows, dataset has " + std::to_string(dataset.num_samples()));
    }
    return gather_rows(table, rows);
  }
  Matrix raw = gather_rows(
      modality == Modality::a ? dataset.modality_a : dataset.modality_b, rows);
  return embed(raw, modality);
}

std::vector<int> EmbeddingModel::predict_rows(const CrossModalDataset& dataset,
                                              const std::vector<int>& rows,
                                              Modality modality) const {
  if (class_ids.empty()) {
    fail(std::string(model_kind_name(kind)) +
         " model carries no class posteriors to predict from");
  }
  Matrix posterior = embed_rows(dataset, rows, modality);
  if (posterior.cols() != static_cast<Eigen::Index>(class_ids.size())) {
    fail("posterior width does not match the class table");
  }
  std::vector<int> out(rows.size());
  for (Eigen::Index i = 0; i < posterior.rows(); ++i) {
    Eigen::Index best = 0;
    for (Eigen::Index j = 1; j < posterior.cols(); ++j) {
      if (posterior(i, j) > posterior(i, best)) best = j;
    }
    out[static_cast<size_t>(i)] = class_ids[static_cast<size_t>(best)];
  }
  return out;
}

namespace {

// Sample covariance (n-1 denominator) of already-centered matrices.
Matrix cross_covariance(const Matrix& xa, const Matrix& xb) {
  return (xa.transpose() * xb) / double(xa.rows() - 1);
}

// Symmetric inverse square root. The eigenvalue floor guards against
// rank-deficient covariances the ridge did not cure.
Matrix inverse_sqrt_spd(const Matrix& m, const std::string& what) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(m);
  if (es.info() != Eigen::Success) fail(what + ": eigendecomposition failed");
  Vector d = es.eigenvalues();
  double dmax = d.maxCoeff();
  if (dmax <= 0.0 || d.minCoeff() <= dmax * 1e-12) {
    fail(what + ": covariance is rank-deficient; increase the regularizer");
  }
  Vector inv_sqrt = d.array().rsqrt();
  return es.eigenvectors() * inv_sqrt.asDiagonal() *
         es.eigenvectors().transpose();
}

// Flips each canonical pair so the largest-magnitude weight on the A side is
// positive; SVD sign freedom would otherwise vary with the backend.
void fix_direction_signs(Matrix& wa, Matrix& wb) {
  for (Eigen::Index j = 0; j < wa.cols(); ++j) {
    Eigen::Index arg = 0;
    double best = std::abs(wa(0, j));
    for (Eigen::Index i = 1; i < wa.rows(); ++i) {
      double v = std::abs(wa(i, j));
      if (v > best) {
        best = v;
        arg = i;
      }
    }
    if (wa(arg, j) < 0.0) {
      wa.col(j) = -wa.col(j);
      wb.col(j) = -wb.col(j);
    }
  }
}

}  // namespace

EmbeddingModel fit_cm(const Matrix& train_a, const Matrix& train_b, int k,
                      double reg) {
  const auto n = train_a.rows();
  if (n != train_b.rows()) {
    fail("cm: modality rows differ (" + std::to_string(n) + " vs " +
         std::to_string(train_b.rows()) + ")");
  }
  if (n < 2) fail("cm: needs at least 2 paired samples");
  if (reg < 0.0) fail("cm: regularizer must be non-negative");
  const auto da = train_a.cols();
  const auto db = train_b.cols();
  if (k < 1) fail("cm: k must be positive");
  if (k > std::min(da, db)) {
    fail("cm: k=" + std::to_string(k) + " exceeds min modality dim " +
         std::to_string(std::min(da, db)));
  }
  if (k > n - 1) {
    fail("cm: k=" + std::to_string(k) + " exceeds sample-supported rank " +
         std::to_string(n - 1));
  }

  Standardizer std_a;
  Standardizer std_b;
  std_a.fit(train_a);
  std_b.fit(train_b);
  Matrix xa = std_a.transform(train_a);
  Matrix xb = std_b.transform(train_b);

  Matrix caa = cross_covariance(xa, xa);
  Matrix cbb = cross_covariance(xb, xb);
  Matrix cab = cross_covariance(xa, xb);
  caa.diagonal().array() += reg * caa.trace() / double(da);
  cbb.diagonal().array() += reg * cbb.trace() / double(db);

  Matrix isq_a = inverse_sqrt_spd(caa, "cm modality A");
  Matrix isq_b = inverse_sqrt_spd(cbb, "cm modality B");
  Eigen::JacobiSVD<Matrix> svd(isq_a * cab * isq_b,
                               Eigen::ComputeThinU | Eigen::ComputeThinV);
  Matrix wa = isq_a * svd.matrixU().leftCols(k);
  Matrix wb = isq_b * svd.matrixV().leftCols(k);
  fix_direction_signs(wa, wb);

  EmbeddingModel model;
  model.kind = ModelKind::cm;
  model.pipeline_a.standardizer = std::move(std_a);
  model.pipeline_a.projection.weight = std::move(wa);
  model.pipeline_b.standardizer = std::move(std_b);
  model.pipeline_b.projection.weight = std::move(wb);
  std::vector<double> correlations(static_cast<size_t>(k));
  for (int j = 0; j < k; ++j) {
    correlations[static_cast<size_t>(j)] = svd.singularValues()[j];
  }
  model.metadata = {{"kind", "cm"},
                    {"k", k},
                    {"reg", reg},
                    {"correlations", correlations},
                    {"train_rows", n}};
  return model;
}

double logreg_loss_grad(const Matrix& x_replicated,
                        const std::vector<int>& y_replicated, const Matrix& w,
                        const Eigen::RowVectorXd& bias, double l2,
                        Matrix* grad_w, Eigen::RowVectorXd* grad_bias) {
  const auto m = x_replicated.rows();
  const auto k = w.cols();
  if (static_cast<size_t>(m) != y_replicated.size()) {
    fail("logreg: target count does not match row count");
  }
  Matrix z = (x_replicated * w).rowwise() + bias;
  double nll = 0.0;
  Matrix p(z.rows(), z.cols());
  for (Eigen::Index i = 0; i < m; ++i) {
    double zmax = z.row(i).maxCoeff();
    Eigen::RowVectorXd e = (z.row(i).array() - zmax).exp();
    double total = e.sum();
    p.row(i) = e / total;
    int y = y_replicated[static_cast<size_t>(i)];
    if (y < 0 || y >= k) fail("logreg: target class out of range");
    nll += (zmax + std::log(total)) - z(i, y);
  }
  double loss = nll / double(m) + 0.5 * l2 * w.squaredNorm();
  if (grad_w != nullptr || grad_bias != nullptr) {
    for (Eigen::Index i = 0; i < m; ++i) {
      p(i, y_replicated[static_cast<size_t>(i)]) -= 1.0;
    }
    if (grad_w != nullptr) {
      *grad_w = x_replicated.transpose() * p / double(m) + l2 * w;
    }
    if (grad_bias != nullptr) *grad_bias = p.colwise().sum() / double(m);
  }
  return loss;
}

namespace {

// Expands multi-label samples into one replicated training example per label.
void replicate_labels(const Matrix& x,
                      const std::vector<std::vector<int>>& labels, int k,
                      Matrix* x_rep, std::vector<int>* y_rep) {
  size_t total = 0;
  for (size_t i = 0; i < labels.size(); ++i) {
    if (labels[i].empty()) {
      fail("logreg: sample " + std::to_string(i) + " has no usable label");
    }
    total += labels[i].size();
  }
  x_rep->resize(static_cast<Eigen::Index>(total), x.cols());
  y_rep->clear();
  y_rep->reserve(total);
  Eigen::Index row = 0;
  for (size_t i = 0; i < labels.size(); ++i) {
    for (int y : labels[i]) {
      if (y < 0 || y >= k) {
        fail("logreg: label " + std::to_string(y) + " outside [0, " +
             std::to_string(k) + ")");
      }
      x_rep->row(row++) = x.row(static_cast<Eigen::Index>(i));
      y_rep->push_back(y);
    }
  }
}

}  // namespace

LogisticClassifier fit_multinomial_logreg(
    const Matrix& x, const std::vector<std::vector<int>>& labels, int k,
    const LogisticOptions& opts) {
  if (x.rows() < 1) fail("logreg: empty training set");
  if (static_cast<size_t>(x.rows()) != labels.size()) {
    fail("logreg: label count does not match row count");
  }
  if (k < 1) fail("logreg: class count must be positive");
  if (opts.l2 < 0.0) fail("logreg: l2 must be non-negative");

  LogisticClassifier clf;
  Matrix xs;
  if (opts.standardize) {
    clf.standardizer.fit(x);
    xs = clf.standardizer.transform(x);
  } else {
    xs = x;
  }
  Matrix x_rep;
  std::vector<int> y_rep;
  replicate_labels(xs, labels, k, &x_rep, &y_rep);

  const auto d = x.cols();
  clf.weights = Matrix::Zero(d, k);
  clf.bias = Eigen::RowVectorXd::Zero(k);

  // Polak-Ribiere+ conjugate gradient over the flattened (weights, bias)
  // parameter block with Armijo backtracking.
  Matrix gw, gw_prev, pw;
  Eigen::RowVectorXd gb, gb_prev, pb;
  double loss =
      logreg_loss_grad(x_rep, y_rep, clf.weights, clf.bias, opts.l2, &gw, &gb);
  double alpha = 0.0;
  for (int iter = 0; iter < opts.max_iterations; ++iter) {
    clf.grad_max_norm = std::max(gw.lpNorm<Eigen::Infinity>(),
                                 gb.lpNorm<Eigen::Infinity>());
    if (clf.grad_max_norm < opts.tol) {
      clf.converged = true;
      break;
    }
    if (iter == 0) {
      pw = -gw;
      pb = -gb;
      double gnorm = std::sqrt(gw.squaredNorm() + gb.squaredNorm());
      alpha = 1.0 / (1.0 + gnorm);
    } else {
      double denom = gw_prev.squaredNorm() + gb_prev.squaredNorm();
      double num = gw.cwiseProduct(gw - gw_prev).sum() +
                   gb.cwiseProduct(gb - gb_prev).sum();
      double beta = std::max(0.0, num / denom);
      pw = -gw + beta * pw;
      pb = -gb + beta * pb;
      alpha = std::min(alpha * 2.0, 1e6);
    }
    double slope = gw.cwiseProduct(pw).sum() + gb.cwiseProduct(pb).sum();
    if (slope >= 0.0) {
      pw = -gw;
      pb = -gb;
      slope = -(gw.squaredNorm() + gb.squaredNorm());
    }
    bool accepted = false;
    for (int halving = 0; halving < 60; ++halving) {
      Matrix w_try = clf.weights + alpha * pw;
      Eigen::RowVectorXd b_try = clf.bias + alpha * pb;
      double loss_try = logreg_loss_grad(x_rep, y_rep, w_try, b_try, opts.l2,
                                         nullptr, nullptr);
      if (loss_try <= loss + 1e-4 * alpha * slope) {
        clf.weights = std::move(w_try);
        clf.bias = std::move(b_try);
        loss = loss_try;
        accepted = true;
        break;
      }
      alpha *= 0.5;
    }
    clf.iterations = iter + 1;
    if (!accepted) break;  // numerically flat; the gradient report says how flat
    gw_prev = gw;
    gb_prev = gb;
    loss = logreg_loss_grad(x_rep, y_rep, clf.weights, clf.bias, opts.l2, &gw,
                            &gb);
  }
  if (!clf.converged) {
    clf.grad_max_norm = std::max(gw.lpNorm<Eigen::Infinity>(),
                                 gb.lpNorm<Eigen::Infinity>());
    clf.converged = clf.grad_max_norm < opts.tol;
  }
  return clf;
}

namespace {

void attach_classifier(ModalityPipeline* pipeline, LogisticClassifier&& clf,
                       bool as_post_standardizer) {
  if (as_post_standardizer) {
    pipeline->post_standardizer = std::move(clf.standardizer);
  } else {
    pipeline->standardizer = std::move(clf.standardizer);
  }
  pipeline->classifier.weight = std::move(clf.weights);
  pipeline->classifier.offset = std::move(clf.bias);
  pipeline->softmax = true;
}

nlohmann::json classifier_report(const LogisticClassifier& clf) {
  return {{"iterations", clf.iterations},
          {"converged", clf.converged},
          {"grad_max_norm", clf.grad_max_norm}};
}

void check_paired(const Matrix& train_a, const Matrix& train_b,
                  const std::vector<std::vector<int>>& labels,
                  const char* what) {
  if (train_a.rows() != train_b.rows()) {
    fail(std::string(what) + ": modality rows differ");
  }
  if (static_cast<size_t>(train_a.rows()) != labels.size()) {
    fail(std::string(what) + ": label count does not match row count");
  }
}

}  // namespace

EmbeddingModel fit_sm(const Matrix& train_a, const Matrix& train_b,
                      const std::vector<std::vector<int>>& labels, int k,
                      double l2) {
  check_paired(train_a, train_b, labels, "sm");
  LogisticOptions opts;
  opts.l2 = l2;
  LogisticClassifier clf_a = fit_multinomial_logreg(train_a, labels, k, opts);
  LogisticClassifier clf_b = fit_multinomial_logreg(train_b, labels, k, opts);

  EmbeddingModel model;
  model.kind = ModelKind::sm;
  model.metadata = {{"kind", "sm"},
                    {"k", k},
                    {"l2", l2},
                    {"classifier_a", classifier_report(clf_a)},
                    {"classifier_b", classifier_report(clf_b)}};
  attach_classifier(&model.pipeline_a, std::move(clf_a), false);
  attach_classifier(&model.pipeline_b, std::move(clf_b), false);
  return model;
}

EmbeddingModel fit_scm(const Matrix& train_a, const Matrix& train_b,
                       const std::vector<std::vector<int>>& labels, int k,
                       double reg, double l2) {
  check_paired(train_a, train_b, labels, "scm");
  // The correlation step cannot exceed the modality dims or the sample rank;
  // the classifier still separates all k classes on top of it.
  int k_cca = std::min<Eigen::Index>(
      {static_cast<Eigen::Index>(k), train_a.cols(), train_b.cols(),
       train_a.rows() - 1});
  if (k_cca < 1) fail("scm: no usable correlation dimensions");
  EmbeddingModel cm = fit_cm(train_a, train_b, k_cca, reg);

  Matrix proj_a = cm.pipeline_a.apply(train_a);
  Matrix proj_b = cm.pipeline_b.apply(train_b);
  LogisticOptions opts;
  opts.l2 = l2;
  LogisticClassifier clf_a = fit_multinomial_logreg(proj_a, labels, k, opts);
  LogisticClassifier clf_b = fit_multinomial_logreg(proj_b, labels, k, opts);

  EmbeddingModel model;
  model.kind = ModelKind::scm;
  model.pipeline_a = std::move(cm.pipeline_a);
  model.pipeline_b = std::move(cm.pipeline_b);
  model.metadata = {{"kind", "scm"},
                    {"k", k},
                    {"k_cca", k_cca},
                    {"reg", reg},
                    {"l2", l2},
                    {"correlations", cm.metadata["correlations"]},
                    {"classifier_a", classifier_report(clf_a)},
                    {"classifier_b", classifier_report(clf_b)}};
  attach_classifier(&model.pipeline_a, std::move(clf_a), true);
  attach_classifier(&model.pipeline_b, std::move(clf_b), true);
  return model;
}

EmbeddingModel fit_ts(const Matrix& train_a, const Matrix& train_b,
                      const std::vector<std::vector<int>>& labels, int k,
                      double l2) {
  EmbeddingModel model = fit_sm(train_a, train_b, labels, k, l2);
  model.kind = ModelKind::ts;
  model.metadata["kind"] = "ts";
  int bits = 0;
  while ((1 << bits) < k) ++bits;
  model.metadata["bits_per_prediction"] = bits;
  return model;
}

EmbeddingModel load_precomputed_embeddings(const std::filesystem::path& path_a,
                                           const std::filesystem::path& path_b,
                                           int expected_rows) {
  EmbeddingModel model;
  model.kind = ModelKind::precomputed;
  model.precomputed_a = read_feature_file(path_a);
  model.precomputed_b = read_feature_file(path_b);
  if (model.precomputed_a.rows() != expected_rows ||
      model.precomputed_b.rows() != expected_rows) {
    fail("precomputed embeddings must cover every dataset row: expected " +
         std::to_string(expected_rows) + ", got " +
         std::to_string(model.precomputed_a.rows()) + " and " +
         std::to_string(model.precomputed_b.rows()));
  }
  if (model.precomputed_a.cols() != model.precomputed_b.cols()) {
    fail("precomputed embeddings must share one space: widths " +
         std::to_string(model.precomputed_a.cols()) + " and " +
         std::to_string(model.precomputed_b.cols()));
  }
  if (model.precomputed_a.cols() < 1) fail("precomputed embeddings are empty");
  if (!all_finite(model.precomputed_a) || !all_finite(model.precomputed_b)) {
    fail("precomputed embeddings contain non-finite values");
  }
  model.metadata = {{"kind", "precomputed"},
                    {"dim", model.precomputed_a.cols()},
                    {"source_a", path_a.string()},
                    {"source_b", path_b.string()}};
  return model;
}

namespace {

double column_median(const Matrix& m, Eigen::Index col) {
  std::vector<double> v(static_cast<size_t>(m.rows()));
  for (Eigen::Index i = 0; i < m.rows(); ++i) v[static_cast<size_t>(i)] = m(i, col);
  std::sort(v.begin(), v.end());
  size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

Vector column_medians(const Matrix& m, int cols) {
  Vector out(cols);
  for (int j = 0; j < cols; ++j) out[j] = column_median(m, j);
  return out;
}

BinaryCodes pack_bits(const Matrix& values, const Vector& thresholds) {
  BinaryCodes codes;
  codes.code_length = static_cast<int>(thresholds.size());
  codes.words_per_code = (codes.code_length + 63) / 64;
  codes.words.assign(
      static_cast<size_t>(values.rows()) * static_cast<size_t>(codes.words_per_code),
      0);
  for (Eigen::Index i = 0; i < values.rows(); ++i) {
    uint64_t* row = codes.words.data() +
                    static_cast<size_t>(i) * static_cast<size_t>(codes.words_per_code);
    for (int j = 0; j < codes.code_length; ++j) {
      if (values(i, j) > thresholds[j]) {
        row[j / 64] |= uint64_t{1} << (j % 64);
      }
    }
  }
  return codes;
}

}  // namespace

BinaryCodes BinaryEncoder::encode(const Matrix& raw, Modality modality) const {
  Matrix values = model.embed(raw, modality);
  const Vector& thresholds =
      modality == Modality::a ? thresholds_a : thresholds_b;
  return pack_bits(values.leftCols(code_length), thresholds);
}

BinaryCodes BinaryEncoder::encode_rows(const CrossModalDataset& dataset,
                                       const std::vector<int>& rows,
                                       Modality modality) const {
  Matrix values = model.embed_rows(dataset, rows, modality);
  const Vector& thresholds =
      modality == Modality::a ? thresholds_a : thresholds_b;
  return pack_bits(values.leftCols(code_length), thresholds);
}

BinaryEncoder binarize(const EmbeddingModel& model,
                       const CrossModalDataset& dataset,
                       const std::vector<int>& train_rows, int code_length,
                       double reg) {
  if (code_length < 1) fail("binarize: code length must be positive");
  if (train_rows.empty()) fail("binarize: no training rows for thresholds");
  if (model.kind == ModelKind::ts) {
    fail("binarize: class predictions have no real-valued embedding to threshold");
  }

  BinaryEncoder enc;
  if (model.output_dim() >= code_length) {
    enc.model = model;
  } else if (model.kind == ModelKind::cm) {
    // Widen the shared space to one dimension per bit.
    Matrix raw_a = gather_rows(dataset.modality_a, train_rows);
    Matrix raw_b = gather_rows(dataset.modality_b, train_rows);
    enc.model = fit_cm(raw_a, raw_b, code_length, reg);
  } else {
    fail("binarize: embedding width " + std::to_string(model.output_dim()) +
         " is below code length " + std::to_string(code_length) +
         " and only cm models can be refit wider");
  }
  enc.code_length = code_length;

  Matrix proj_a = enc.model.embed_rows(dataset, train_rows, Modality::a);
  Matrix proj_b = enc.model.embed_rows(dataset, train_rows, Modality::b);
  enc.thresholds_a = column_medians(proj_a, code_length);
  enc.thresholds_b = column_medians(proj_b, code_length);
  for (int j = 0; j < code_length; ++j) {
    if (!std::isfinite(enc.thresholds_a[j]) || !std::isfinite(enc.thresholds_b[j])) {
      fail("binarize: non-finite threshold at bit " + std::to_string(j));
    }
  }
  return enc;
}

namespace {

void write_u32(std::ostream& out, uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff),
                        static_cast<unsigned char>((v >> 16) & 0xff),
                        static_cast<unsigned char>((v >> 24) & 0xff)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

uint32_t read_u32(std::istream& in, const std::string& what) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) {
    fail("model file: truncated while reading " + what);
  }
  return uint32_t(b[0]) | (uint32_t(b[1]) << 8) | (uint32_t(b[2]) << 16) |
         (uint32_t(b[3]) << 24);
}

void write_doubles(std::ostream& out, const double* data, size_t count) {
  static_assert(sizeof(double) == 8);
  out.write(reinterpret_cast<const char*>(data),
            static_cast<std::streamsize>(count * 8));
}

void read_doubles(std::istream& in, double* data, size_t count,
                  const std::string& what) {
  if (!in.read(reinterpret_cast<char*>(data),
               static_cast<std::streamsize>(count * 8))) {
    fail("model file: truncated while reading " + what);
  }
}

void write_matrix(std::ostream& out, const Matrix& m) {
  write_u32(out, static_cast<uint32_t>(m.rows()));
  write_u32(out, static_cast<uint32_t>(m.cols()));
  // Stored column-major, Eigen's native layout for MatrixXd.
  write_doubles(out, m.data(), static_cast<size_t>(m.size()));
}

Matrix read_matrix(std::istream& in, const std::string& what) {
  uint32_t rows = read_u32(in, what + " rows");
  uint32_t cols = read_u32(in, what + " cols");
  Matrix m(rows, cols);
  read_doubles(in, m.data(), static_cast<size_t>(m.size()), what);
  return m;
}

void write_vector(std::ostream& out, const Vector& v) {
  write_u32(out, static_cast<uint32_t>(v.size()));
  write_doubles(out, v.data(), static_cast<size_t>(v.size()));
}

Vector read_vector(std::istream& in, const std::string& what) {
  uint32_t n = read_u32(in, what + " size");
  Vector v(n);
  read_doubles(in, v.data(), static_cast<size_t>(v.size()), what);
  return v;
}

void write_string(std::ostream& out, const std::string& s) {
  write_u32(out, static_cast<uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_string(std::istream& in, const std::string& what) {
  uint32_t n = read_u32(in, what + " length");
  std::string s(n, '\0');
  if (n > 0 && !in.read(s.data(), n)) {
    fail("model file: truncated while reading " + what);
  }
  return s;
}

void write_standardizer(std::ostream& out, const Standardizer& s) {
  write_u32(out, s.fitted() ? 1 : 0);
  if (s.fitted()) {
    write_vector(out, s.mean);
    write_vector(out, s.scale);
    write_string(out, s.provenance);
  }
}

Standardizer read_standardizer(std::istream& in, const std::string& what) {
  Standardizer s;
  if (read_u32(in, what + " flag") != 0) {
    s.mean = read_vector(in, what + " mean");
    s.scale = read_vector(in, what + " scale");
    s.provenance = read_string(in, what + " provenance");
  }
  return s;
}

void write_stage(std::ostream& out, const AffineStage& stage) {
  write_u32(out, stage.present() ? 1 : 0);
  if (stage.present()) {
    write_matrix(out, stage.weight);
    Vector offset = stage.offset.transpose();
    write_vector(out, offset);
  }
}

AffineStage read_stage(std::istream& in, const std::string& what) {
  AffineStage stage;
  if (read_u32(in, what + " flag") != 0) {
    stage.weight = read_matrix(in, what + " weight");
    Vector offset = read_vector(in, what + " offset");
    stage.offset = offset.transpose();
  }
  return stage;
}

void write_pipeline(std::ostream& out, const ModalityPipeline& p) {
  write_standardizer(out, p.standardizer);
  write_stage(out, p.projection);
  write_standardizer(out, p.post_standardizer);
  write_stage(out, p.classifier);
  write_u32(out, p.softmax ? 1 : 0);
}

ModalityPipeline read_pipeline(std::istream& in, const std::string& what) {
  ModalityPipeline p;
  p.standardizer = read_standardizer(in, what + " standardizer");
  p.projection = read_stage(in, what + " projection");
  p.post_standardizer = read_standardizer(in, what + " post-standardizer");
  p.classifier = read_stage(in, what + " classifier");
  p.softmax = read_u32(in, what + " softmax flag") != 0;
  return p;
}

void write_feature_matrix(std::ostream& out, const FeatureMatrix& m) {
  write_u32(out, static_cast<uint32_t>(m.rows()));
  write_u32(out, static_cast<uint32_t>(m.cols()));
  static_assert(sizeof(float) == 4);
  out.write(reinterpret_cast<const char*>(m.data()),
            static_cast<std::streamsize>(m.size()) * 4);
}

FeatureMatrix read_feature_matrix(std::istream& in, const std::string& what) {
  uint32_t rows = read_u32(in, what + " rows");
  uint32_t cols = read_u32(in, what + " cols");
  FeatureMatrix m(rows, cols);
  if (m.size() > 0 &&
      !in.read(reinterpret_cast<char*>(m.data()),
               static_cast<std::streamsize>(m.size()) * 4)) {
    fail("model file: truncated while reading " + what);
  }
  return m;
}

constexpr char kModelMagic[4] = {'X', 'M', 'D', 'L'};

}  // namespace

void save_model(const EmbeddingModel& model,
                const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail("cannot open model file for writing: " + path.string());
  out.write(kModelMagic, 4);
  write_u32(out, 1);  // version
  write_string(out, model_kind_name(model.kind));
  nlohmann::json meta = model.metadata;
  meta["__class_ids"] = model.class_ids;
  write_string(out, meta.dump());
  write_pipeline(out, model.pipeline_a);
  write_pipeline(out, model.pipeline_b);
  write_feature_matrix(out, model.precomputed_a);
  write_feature_matrix(out, model.precomputed_b);
  if (!out) fail("failed writing model file: " + path.string());
}

EmbeddingModel load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail("cannot open model file: " + path.string());
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kModelMagic, 4) != 0) {
    fail("not a model file (bad magic): " + path.string());
  }
  uint32_t version = read_u32(in, "version");
  if (version != 1) {
    fail("unsupported model file version " + std::to_string(version));
  }
  EmbeddingModel model;
  model.kind = parse_model_kind(read_string(in, "kind"));
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(read_string(in, "metadata"));
  } catch (const nlohmann::json::exception& e) {
    fail("model file metadata is not valid JSON: " + std::string(e.what()));
  }
  if (meta.contains("__class_ids")) {
    model.class_ids = meta["__class_ids"].get<std::vector<int>>();
    meta.erase("__class_ids");
  }
  model.metadata = std::move(meta);
  model.pipeline_a = read_pipeline(in, "pipeline A");
  model.pipeline_b = read_pipeline(in, "pipeline B");
  model.precomputed_a = read_feature_matrix(in, "precomputed A");
  model.precomputed_b = read_feature_matrix(in, "precomputed B");
  return model;
}

int ClassIndexer::index_of(int class_id) const {
  auto it = std::lower_bound(class_ids.begin(), class_ids.end(), class_id);
  if (it == class_ids.end() || *it != class_id) return -1;
  return static_cast<int>(it - class_ids.begin());
}

std::vector<std::vector<int>> ClassIndexer::dense_labels(
    const CrossModalDataset& dataset, const std::vector<int>& rows) const {
  std::vector<std::vector<int>> out(rows.size());
  for (size_t i = 0; i < rows.size(); ++i) {
    int row = rows[i];
    if (row < 0 || row >= dataset.num_samples()) {
      fail("dense labels: row " + std::to_string(row) + " out of range");
    }
    for (int label : dataset.labels.labels[static_cast<size_t>(row)]) {
      int idx = index_of(label);
      if (idx >= 0) out[i].push_back(idx);
    }
  }
  return out;
}

}  // namespace xmb
