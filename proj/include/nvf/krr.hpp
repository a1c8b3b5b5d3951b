#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>
#include <random>
#include <vector>

#include "nvf/varifold.hpp"

namespace nvf {

struct LabeledCloudSet {
  std::vector<OrientedPointCloud> clouds;
  std::vector<int> labels;
  int num_classes = 0;
};

struct EpisodeSpec {
  int n_way = 5;
  int k_shot = 5;
  int q_query = 15;
  int episodes = 700;
  std::uint64_t seed = 0;
};

inline double default_lambda(const MatrixXd& gram) {
  return 1e-6 * gram.trace() / static_cast<double>(gram.rows());
}

/// (K + lambda I)^-1 Y via Cholesky; on failure, jitter is added starting at
/// 1e-10 * trace/n and escalated x10 up to 1e-4 * trace/n.
inline MatrixXd krr_solve(const MatrixXd& gram, const MatrixXd& y, double lambda) {
  if (gram.rows() != gram.cols()) throw std::invalid_argument("krr_solve: gram must be square");
  if (gram.rows() != y.rows()) throw std::invalid_argument("krr_solve: gram/label row mismatch");
  if (lambda < 0) throw std::invalid_argument("krr_solve: negative lambda");
  const double unit = std::max(gram.trace() / static_cast<double>(gram.rows()), 1e-300);
  double jitter = 0.0;
  for (int attempt = 0; attempt < 8; ++attempt) {
    MatrixXd reg = gram;
    reg.diagonal().array() += lambda + jitter;
    Eigen::LLT<MatrixXd> llt(reg);
    if (llt.info() == Eigen::Success) {
      MatrixXd alpha = llt.solve(y);
      const double resid = (reg * alpha - y).norm();
      if (resid <= 1e-8 * std::max(1.0, y.norm())) return alpha;
    }
    jitter = jitter == 0.0 ? 1e-10 * unit : jitter * 10.0;
    if (jitter > 1e-4 * unit) break;
  }
  throw std::runtime_error("krr_solve: gram not PD");
}

inline MatrixXd krr_predict(const MatrixXd& gram_cross, const MatrixXd& coefficients) {
  if (gram_cross.cols() != coefficients.rows()) throw std::invalid_argument("krr_predict: shape mismatch");
  return gram_cross * coefficients;
}

/// Argmax per row; ties break to the lowest class index.
inline std::vector<int> predict_classes(const MatrixXd& scores) {
  std::vector<int> out(static_cast<std::size_t>(scores.rows()));
  for (Eigen::Index i = 0; i < scores.rows(); ++i) {
    int best = 0;
    for (Eigen::Index c = 1; c < scores.cols(); ++c)
      if (scores(i, c) > scores(i, best)) best = static_cast<int>(c);
    out[static_cast<std::size_t>(i)] = best;
  }
  return out;
}

inline MatrixXd one_hot(const std::vector<int>& labels, int num_classes) {
  MatrixXd y = MatrixXd::Zero(static_cast<Eigen::Index>(labels.size()), num_classes);
  for (std::size_t i = 0; i < labels.size(); ++i) y(static_cast<Eigen::Index>(i), labels[i]) = 1.0;
  return y;
}

constexpr double kAutoLambda = -1.0;

/// Fit on support clouds, score queries. lambda = kAutoLambda selects the
/// scale-aware default 1e-6 * trace/n.
inline double classify_accuracy(const std::vector<OrientedPointCloud>& support, const std::vector<int>& support_labels,
                                const std::vector<OrientedPointCloud>& query, const std::vector<int>& query_labels,
                                int num_classes, const KernelConfig& cfg, double lambda) {
  CloudGram train = self_cloud_gram(support, cfg);
  if (lambda == kAutoLambda) lambda = default_lambda(train.values);
  MatrixXd alpha = krr_solve(train.values, one_hot(support_labels, num_classes), lambda);
  CloudGram cross = pairwise_cloud_gram(query, support, cfg);
  auto pred = predict_classes(krr_predict(cross.values, alpha));
  int hits = 0;
  for (std::size_t i = 0; i < pred.size(); ++i)
    if (pred[i] == query_labels[i]) ++hits;
  return static_cast<double>(hits) / static_cast<double>(pred.size());
}

struct EpisodeResult {
  double mean_accuracy = 0.0;
  double ci95_half_width = 0.0;
  std::vector<double> per_episode;
};

/// N-way K-shot Q-query episodic evaluation; per-episode seed = seed + index.
inline EpisodeResult run_episodes(const LabeledCloudSet& dataset, const EpisodeSpec& spec, const KernelConfig& cfg,
                                  double lambda = kAutoLambda) {
  std::vector<std::vector<int>> by_class(static_cast<std::size_t>(dataset.num_classes));
  for (std::size_t i = 0; i < dataset.labels.size(); ++i)
    by_class[static_cast<std::size_t>(dataset.labels[i])].push_back(static_cast<int>(i));
  int usable = 0;
  for (const auto& c : by_class)
    if (static_cast<int>(c.size()) >= spec.k_shot + spec.q_query) ++usable;
  if (usable < spec.n_way) throw std::invalid_argument("run_episodes: spec not satisfiable by dataset");

  std::vector<int> usable_classes;
  for (std::size_t c = 0; c < by_class.size(); ++c)
    if (static_cast<int>(by_class[c].size()) >= spec.k_shot + spec.q_query) usable_classes.push_back(static_cast<int>(c));

  EpisodeResult result;
  result.per_episode.resize(static_cast<std::size_t>(spec.episodes));
  for (int e = 0; e < spec.episodes; ++e) {
    std::mt19937_64 rng(spec.seed + static_cast<std::uint64_t>(e));
    std::vector<int> classes = usable_classes;
    std::shuffle(classes.begin(), classes.end(), rng);
    classes.resize(static_cast<std::size_t>(spec.n_way));

    std::vector<OrientedPointCloud> support, query;
    std::vector<int> support_labels, query_labels;
    for (int c = 0; c < spec.n_way; ++c) {
      std::vector<int> items = by_class[static_cast<std::size_t>(classes[static_cast<std::size_t>(c)])];
      std::shuffle(items.begin(), items.end(), rng);
      for (int k = 0; k < spec.k_shot; ++k) {
        support.push_back(dataset.clouds[static_cast<std::size_t>(items[static_cast<std::size_t>(k)])]);
        support_labels.push_back(c);
      }
      for (int q = 0; q < spec.q_query; ++q) {
        query.push_back(dataset.clouds[static_cast<std::size_t>(items[static_cast<std::size_t>(spec.k_shot + q)])]);
        query_labels.push_back(c);
      }
    }
    result.per_episode[static_cast<std::size_t>(e)] =
        classify_accuracy(support, support_labels, query, query_labels, spec.n_way, cfg, lambda);
  }

  const double n = static_cast<double>(spec.episodes);
  result.mean_accuracy = std::accumulate(result.per_episode.begin(), result.per_episode.end(), 0.0) / n;
  double var = 0.0;
  for (double acc : result.per_episode) var += (acc - result.mean_accuracy) * (acc - result.mean_accuracy);
  var = spec.episodes > 1 ? var / (n - 1.0) : 0.0;
  result.ci95_half_width = 1.96 * std::sqrt(var / n);
  return result;
}

/// Dataset directory layout: one subdirectory per class holding .xyzn files.
/// Clouds are unit-sphere normalized unless `normalize` is false.
inline LabeledCloudSet load_cloud_dataset(const std::string& dir, bool normalize = true) {
  namespace fs = std::filesystem;
  LabeledCloudSet set;
  std::vector<fs::path> class_dirs;
  for (const auto& entry : fs::directory_iterator(dir))
    if (entry.is_directory()) class_dirs.push_back(entry.path());
  std::sort(class_dirs.begin(), class_dirs.end());
  for (const auto& cdir : class_dirs) {
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(cdir))
      if (entry.path().extension() == ".xyzn") files.push_back(entry.path());
    if (files.empty()) continue;
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
      OrientedPointCloud cloud = load_xyzn(f.string());
      set.clouds.push_back(normalize ? normalize_unit_sphere(cloud) : cloud);
      set.labels.push_back(set.num_classes);
    }
    ++set.num_classes;
  }
  if (set.clouds.empty()) throw std::runtime_error("load_cloud_dataset: no class/.xyzn files under " + dir);
  return set;
}

}  // namespace nvf
