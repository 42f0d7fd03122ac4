#include "xmbench/dataset.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "xmbench/rng.hpp"

namespace xmb {

using nlohmann::json;

namespace {

constexpr char kFeatureMagic[4] = {'X', 'M', 'B', 'F'};

[[noreturn]] void fail(const std::string& msg) {
  throw std::runtime_error(msg);
}

std::uint32_t read_u32(std::istream& in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (!in) fail("feature file truncated while reading header");
  return static_cast<std::uint32_t>(b[0]) |
         static_cast<std::uint32_t>(b[1]) << 8 |
         static_cast<std::uint32_t>(b[2]) << 16 |
         static_cast<std::uint32_t>(b[3]) << 24;
}

void write_u32(std::ostream& out, std::uint32_t v) {
  const unsigned char b[4] = {
      static_cast<unsigned char>(v & 0xff),
      static_cast<unsigned char>((v >> 8) & 0xff),
      static_cast<unsigned char>((v >> 16) & 0xff),
      static_cast<unsigned char>((v >> 24) & 0xff)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

void check_finite(const FeatureMatrix& m, const std::string& what) {
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c)
      if (!std::isfinite(m(r, c)))
        fail(what + ": non-finite value at row " + std::to_string(r) +
             ", col " + std::to_string(c));
}

FeatureMatrix read_feature_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail("cannot open feature file " + path.string());
  std::vector<std::vector<float>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<float> row;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      try {
        row.push_back(std::stof(cell));
      } catch (const std::exception&) {
        fail(path.string() + ": not a number: '" + cell + "' on row " +
             std::to_string(rows.size()));
      }
    }
    if (!rows.empty() && row.size() != rows.front().size())
      fail(path.string() + ": row " + std::to_string(rows.size()) + " has " +
           std::to_string(row.size()) + " columns, expected " +
           std::to_string(rows.front().size()));
    rows.push_back(std::move(row));
  }
  if (rows.empty()) fail(path.string() + ": empty feature file");
  FeatureMatrix m(static_cast<Eigen::Index>(rows.size()),
                  static_cast<Eigen::Index>(rows.front().size()));
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c)
      m(r, c) = rows[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)];
  return m;
}

struct LabelFile {
  std::vector<std::string> ids;
  std::vector<std::set<int>> labels;
};

LabelFile read_label_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail("cannot open label file " + path.string());
  LabelFile out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (lineno == 1 && line.rfind("sample_id,", 0) == 0) continue;  // header
    const auto comma = line.find(',');
    if (comma == std::string::npos)
      fail(path.string() + ":" + std::to_string(lineno) +
           ": expected 'sample_id,labels'");
    std::string id = line.substr(0, comma);
    std::set<int> labels;
    std::stringstream ss(line.substr(comma + 1));
    std::string tok;
    while (std::getline(ss, tok, ';')) {
      if (tok.empty()) continue;
      int v;
      try {
        v = std::stoi(tok);
      } catch (const std::exception&) {
        fail(path.string() + ":" + std::to_string(lineno) +
             ": bad label '" + tok + "'");
      }
      if (v < 0)
        fail(path.string() + ":" + std::to_string(lineno) +
             ": negative label " + std::to_string(v));
      labels.insert(v);
    }
    out.ids.push_back(std::move(id));
    out.labels.push_back(std::move(labels));
  }
  return out;
}

void write_label_csv(const CrossModalDataset& d,
                     const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) fail("cannot write " + path.string());
  out << "sample_id,labels\n";
  for (std::size_t i = 0; i < d.sample_ids.size(); ++i) {
    out << d.sample_ids[i] << ',';
    bool first = true;
    for (int l : d.labels.labels[i]) {
      if (!first) out << ';';
      out << l;
      first = false;
    }
    out << '\n';
  }
}

}  // namespace

void LabelTable::validate() const {
  if (num_classes < 2)
    fail("label table: num_classes must be >= 2, got " +
         std::to_string(num_classes));
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i].empty())
      fail("label table: sample " + std::to_string(i) + " has no labels");
    for (int l : labels[i])
      if (l < 0 || l >= num_classes)
        fail("label table: sample " + std::to_string(i) + " has label " +
             std::to_string(l) + " outside [0, " + std::to_string(num_classes) +
             ")");
  }
}

void CrossModalDataset::validate() const {
  const auto n = sample_ids.size();
  if (n == 0) fail("dataset has no samples");
  if (static_cast<std::size_t>(modality_a.rows()) != n ||
      static_cast<std::size_t>(modality_b.rows()) != n ||
      labels.size() != n)
    fail("dataset row mismatch: modality_a=" + std::to_string(modality_a.rows()) +
         " modality_b=" + std::to_string(modality_b.rows()) +
         " labels=" + std::to_string(labels.size()) +
         " ids=" + std::to_string(n));
  if (modality_a.cols() < 1 || modality_b.cols() < 1)
    fail("dataset: feature dimensionality must be >= 1");
  labels.validate();
  check_finite(modality_a, "modality " + modality_name_a);
  check_finite(modality_b, "modality " + modality_name_b);
  std::set<std::string> seen;
  for (const auto& id : sample_ids)
    if (!seen.insert(id).second) fail("duplicate sample id '" + id + "'");
}

void SynthSpec::validate() const {
  if (num_classes < 2) fail("synth spec: num_classes must be >= 2");
  if (samples_per_class < 4) fail("synth spec: samples_per_class must be >= 4");
  if (dim_a < 2 || dim_b < 2) fail("synth spec: dims must be >= 2");
  if (class_separation < 0) fail("synth spec: class_separation must be >= 0");
  if (cross_modal_correlation < 0 || cross_modal_correlation > 1)
    fail("synth spec: cross_modal_correlation must be in [0, 1]");
  if (multilabel_rate < 0 || multilabel_rate > 1)
    fail("synth spec: multilabel_rate must be in [0, 1]");
}

CrossModalDataset generate_synthetic(const SynthSpec& spec) {
  spec.validate();
  // Latent structure per sample: class center + content theme + local
  // detail. The theme is what the pair is jointly about, so it is shared
  // across modalities outright; only the local detail is shared at
  // strength rho. Cross-modal correlation is therefore strongest along
  // content directions and weaker along class-center directions, the way
  // instance-level content dominates the leading correlations of real
  // image/text pairs, while class structure sits further down the
  // spectrum.
  const int latent_dim = std::max(spec.dim_a, spec.dim_b);
  const int kThemes = 5;            // content themes per class
  const double kThemeSd = std::sqrt(1.2);
  const double kLocalSd = std::sqrt(0.1);
  const double kExpressionSd = 0.5;  // per-modality class-expression spread
  // All class centers, seen and unseen alike, live in one low-dimensional
  // semantic subspace (rescaled so total separation matches
  // class_separation per coordinate). Unseen-class structure therefore
  // stays where the seen-class structure was learned instead of leaking
  // into every content direction.
  const int kCenterDim = std::min(6, latent_dim);
  const int n = spec.num_classes * spec.samples_per_class;
  const double rho = spec.cross_modal_correlation;
  const double rho_orth = std::sqrt(std::max(0.0, 1.0 - rho * rho));

  Rng rng(derive_seed(spec.seed, /*salt=*/0x53594e54));

  CrossModalDataset d;
  d.name = "synthetic";
  d.modality_a.resize(n, spec.dim_a);
  d.modality_b.resize(n, spec.dim_b);
  d.labels.num_classes = spec.num_classes;
  d.labels.labels.reserve(static_cast<std::size_t>(n));
  d.sample_ids.reserve(static_cast<std::size_t>(n));

  Matrix center_gauss(latent_dim, kCenterDim);
  for (int i = 0; i < latent_dim; ++i)
    for (int j = 0; j < kCenterDim; ++j) center_gauss(i, j) = rng.gaussian();
  const Matrix center_basis =
      Eigen::HouseholderQR<Matrix>(center_gauss).householderQ() *
      Matrix::Identity(latent_dim, kCenterDim);
  const double center_scale = spec.class_separation;
  Matrix center_coords(spec.num_classes, kCenterDim);
  for (int c = 0; c < spec.num_classes; ++c)
    for (int j = 0; j < kCenterDim; ++j)
      center_coords(c, j) = center_scale * rng.gaussian();
  const Matrix centers = center_coords * center_basis.transpose();


  // Each class carries its own set of content themes; same-class samples
  // that share a theme are close in latent space, so codes that resolve
  // themes sharpen the top of same-class rankings. Themes live in the
  // orthogonal complement of the center subspace: within-class content
  // varies along axes that carry no class structure.
  std::vector<Matrix> themes(static_cast<std::size_t>(spec.num_classes));
  for (int c = 0; c < spec.num_classes; ++c) {
    Matrix t(kThemes, latent_dim);
    for (int g = 0; g < kThemes; ++g)
      for (int j = 0; j < latent_dim; ++j) t(g, j) = kThemeSd * rng.gaussian();
    t -= t * center_basis * center_basis.transpose();
    themes[static_cast<std::size_t>(c)] = std::move(t);
  }

  // Both modalities observe the latent through one fixed rotation, then
  // keep their leading coordinates; with equal dims and rho = 1 the two
  // views coincide exactly.
  Matrix gauss(latent_dim, latent_dim);
  for (int i = 0; i < latent_dim; ++i)
    for (int j = 0; j < latent_dim; ++j) gauss(i, j) = rng.gaussian();
  const Matrix rotation =
      Eigen::HouseholderQR<Matrix>(gauss).householderQ() *
      Matrix::Identity(latent_dim, latent_dim);

  Vector latent_a(latent_dim), latent_b(latent_dim);
  int row = 0;
  for (int c = 0; c < spec.num_classes; ++c) {
    const Matrix& theme = themes[static_cast<std::size_t>(c)];
    for (int s = 0; s < spec.samples_per_class; ++s, ++row) {
      const int g = static_cast<int>(rng.below(kThemes));
      // Each modality expresses the class with its own intensity; the
      // spread vanishes as rho -> 1, so maximally correlated pairs stay
      // identical. This unshared variance sits along class-center
      // directions, keeping their canonical correlation below the fully
      // shared content themes.
      const double expr_a = 1.0 + kExpressionSd * rho_orth * rng.gaussian();
      const double expr_b = 1.0 + kExpressionSd * rho_orth * rng.gaussian();
      for (int j = 0; j < latent_dim; ++j) {
        const double content = theme(g, j);
        const double local = kLocalSd * rng.gaussian();
        const double local_alt = kLocalSd * rng.gaussian();
        latent_a[j] = expr_a * centers(c, j) + content + local;
        latent_b[j] =
            expr_b * centers(c, j) + content + rho * local + rho_orth * local_alt;
      }
      const Vector view_a = rotation * latent_a;
      const Vector view_b = rotation * latent_b;
      for (int j = 0; j < spec.dim_a; ++j)
        d.modality_a(row, j) = static_cast<float>(view_a[j]);
      for (int j = 0; j < spec.dim_b; ++j)
        d.modality_b(row, j) = static_cast<float>(view_b[j]);

      std::set<int> labels{c};
      if (rng.uniform01() < spec.multilabel_rate && spec.num_classes > 1) {
        int extra = static_cast<int>(rng.below(
            static_cast<std::uint64_t>(spec.num_classes - 1)));
        if (extra >= c) ++extra;
        labels.insert(extra);
      }
      d.labels.labels.push_back(std::move(labels));

      char id[32];
      std::snprintf(id, sizeof(id), "synth-%06d", row);
      d.sample_ids.emplace_back(id);
    }
  }
  d.validate();
  return d;
}

FeatureMatrix read_feature_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail("cannot open feature file " + path.string());
  char magic[4] = {};
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kFeatureMagic, 4) != 0) {
    // CSV fallback for material that predates the binary container.
    return read_feature_csv(path);
  }
  const std::uint32_t rows = read_u32(in);
  const std::uint32_t cols = read_u32(in);
  if (rows == 0 || cols == 0)
    fail(path.string() + ": feature file declares empty shape " +
         std::to_string(rows) + "x" + std::to_string(cols));
  FeatureMatrix m(static_cast<Eigen::Index>(rows),
                  static_cast<Eigen::Index>(cols));
  static_assert(sizeof(float) == 4);
  in.read(reinterpret_cast<char*>(m.data()),
          static_cast<std::streamsize>(sizeof(float) * rows * cols));
  if (!in)
    fail(path.string() + ": feature payload truncated, expected " +
         std::to_string(rows) + "x" + std::to_string(cols) + " binary32 values");
  char extra;
  if (in.read(&extra, 1))
    fail(path.string() + ": trailing bytes after " + std::to_string(rows) +
         "x" + std::to_string(cols) + " payload");
  return m;
}

void write_feature_file(const FeatureMatrix& features,
                        const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail("cannot write feature file " + path.string());
  out.write(kFeatureMagic, 4);
  write_u32(out, static_cast<std::uint32_t>(features.rows()));
  write_u32(out, static_cast<std::uint32_t>(features.cols()));
  out.write(reinterpret_cast<const char*>(features.data()),
            static_cast<std::streamsize>(sizeof(float) * features.size()));
  if (!out) fail("short write on " + path.string());
}

LabeledIds read_label_table(const std::filesystem::path& path) {
  LabelFile lf = read_label_csv(path);
  if (lf.ids.empty()) fail(path.string() + ": no labeled samples");
  LabeledIds out;
  out.sample_ids = std::move(lf.ids);
  out.labels.labels = std::move(lf.labels);
  int max_label = -1;
  for (const auto& s : out.labels.labels) {
    for (int v : s) max_label = std::max(max_label, v);
  }
  if (max_label < 0) fail(path.string() + ": no labels present");
  out.labels.num_classes = max_label + 1;
  return out;
}

CrossModalDataset load_dataset(const std::filesystem::path& root) {
  const auto meta_path = root / "meta.json";
  std::ifstream meta_in(meta_path);
  if (!meta_in) fail("missing " + meta_path.string());
  json meta;
  try {
    meta_in >> meta;
  } catch (const json::exception& e) {
    fail(meta_path.string() + ": " + e.what());
  }

  CrossModalDataset d;
  d.name = meta.value("name", root.filename().string());
  const auto modalities = meta.value("modalities", json::array({"a", "b"}));
  if (modalities.size() == 2) {
    d.modality_name_a = modalities[0].get<std::string>();
    d.modality_name_b = modalities[1].get<std::string>();
  }

  const std::string file_a = meta.value("feature_file_a", "features_a.xmbf");
  const std::string file_b = meta.value("feature_file_b", "features_b.xmbf");
  const std::string label_file = meta.value("label_file", "labels.csv");
  d.modality_a = read_feature_file(root / file_a);
  d.modality_b = read_feature_file(root / file_b);

  LabelFile lf = read_label_csv(root / label_file);
  if (lf.ids.empty()) fail((root / label_file).string() + ": no samples");
  if (static_cast<Eigen::Index>(lf.ids.size()) != d.modality_a.rows() ||
      static_cast<Eigen::Index>(lf.ids.size()) != d.modality_b.rows())
    fail("shape mismatch: label file lists " + std::to_string(lf.ids.size()) +
         " ids but feature files declare " + std::to_string(d.modality_a.rows()) +
         " (" + d.modality_name_a + ") and " + std::to_string(d.modality_b.rows()) +
         " (" + d.modality_name_b + ") rows");
  d.sample_ids = std::move(lf.ids);
  d.labels.labels = std::move(lf.labels);

  int max_label = -1;
  for (const auto& ls : d.labels.labels)
    for (int l : ls) max_label = std::max(max_label, l);
  d.labels.num_classes = meta.value("num_classes", max_label + 1);
  if (meta.contains("num_samples") &&
      meta["num_samples"].get<int>() != d.num_samples())
    fail(meta_path.string() + ": declares " +
         std::to_string(meta["num_samples"].get<int>()) +
         " samples but label file lists " + std::to_string(d.num_samples()));

  const std::string class_file = meta.value("class_name_file", "classes.csv");
  if (std::filesystem::exists(root / class_file)) {
    d.class_names.assign(static_cast<std::size_t>(d.labels.num_classes), "");
    std::ifstream in(root / class_file);
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty() || line.rfind("class_id,", 0) == 0) continue;
      const auto comma = line.find(',');
      if (comma == std::string::npos) continue;
      const int id = std::stoi(line.substr(0, comma));
      if (id >= 0 && id < d.labels.num_classes)
        d.class_names[static_cast<std::size_t>(id)] = line.substr(comma + 1);
    }
  }

  d.validate();
  return d;
}

void write_dataset(const CrossModalDataset& dataset,
                   const std::filesystem::path& root) {
  dataset.validate();
  std::filesystem::create_directories(root);
  write_feature_file(dataset.modality_a, root / "features_a.xmbf");
  write_feature_file(dataset.modality_b, root / "features_b.xmbf");
  write_label_csv(dataset, root / "labels.csv");
  if (!dataset.class_names.empty()) {
    std::ofstream out(root / "classes.csv");
    out << "class_id,name\n";
    for (std::size_t i = 0; i < dataset.class_names.size(); ++i)
      out << i << ',' << dataset.class_names[i] << '\n';
  }
  json meta = {
      {"name", dataset.name},
      {"modalities", {dataset.modality_name_a, dataset.modality_name_b}},
      {"dims", {dataset.modality_a.cols(), dataset.modality_b.cols()}},
      {"num_classes", dataset.labels.num_classes},
      {"num_samples", dataset.num_samples()},
      {"feature_file_a", "features_a.xmbf"},
      {"feature_file_b", "features_b.xmbf"},
      {"label_file", "labels.csv"},
  };
  if (!dataset.class_names.empty()) meta["class_name_file"] = "classes.csv";
  std::ofstream out(root / "meta.json");
  if (!out) fail("cannot write " + (root / "meta.json").string());
  out << meta.dump(2) << '\n';
}

}  // namespace xmb
