#pragma once
// Evaluation battery: clustering accuracy with optimal cluster-to-class
// matching, linear and kNN probes, the unseen-class protocol, ranking
// metrics and the generative metrics (IS / FID / KID). All operations are
// pure; randomized ones take explicit seeds.

#include <map>
#include <nlohmann/json.hpp>
#include <optional>
#include <string>
#include <vector>

#include "eegpack/data.hpp"
#include "eegpack/encoders.hpp"

namespace eegpack::eval {

// ---------------------------------------------------------------------------
// Clustering / probes
// ---------------------------------------------------------------------------

// K-means (k-means++ init, Lloyd iterations, best of `restarts` by inertia)
// followed by maximum-weight bipartite matching of clusters onto classes.
// K must equal the number of distinct labels. Restart seeds derive from
// `seed` deterministically, so running restarts in parallel cannot change
// the result.
double kmeans_accuracy(const Eigen::MatrixXd& embeddings, const std::vector<int>& labels, int K,
                       std::uint64_t seed, int restarts = 8, bool parallel = false);

// One-vs-rest max-margin linear probe on frozen embeddings (hinge loss,
// fixed L2 regularization, deterministic subgradient schedule).
double linear_probe_accuracy(const Eigen::MatrixXd& train_x, const std::vector<int>& train_y,
                             const Eigen::MatrixXd& test_x, const std::vector<int>& test_y,
                             double regularization = 1e-3);

// Majority vote over the k nearest neighbours (Euclidean); vote ties break
// toward the closest neighbour among the tied labels.
double knn_accuracy(const Eigen::MatrixXd& train_x, const std::vector<int>& train_y,
                    const Eigen::MatrixXd& test_x, const std::vector<int>& test_y, int k = 5);

struct ZeroShotReport {
  double kmeans = 0.0;
  double svm = 0.0;
  double knn = 0.0;
  long probe_train_records = 0;
  long probe_test_records = 0;
};

// Embeds holdout-class records with the frozen encoder and probes among the
// unseen classes only. `provenance` must carry the encoder's train_classes;
// any overlap with the holdout set is a leakage error.
ZeroShotReport zero_shot_protocol(const data::DatasetManifest& manifest,
                                  const std::vector<int>& holdout_classes,
                                  const enc::Encoder& encoder, const nlohmann::json& provenance,
                                  std::uint64_t seed);

// ---------------------------------------------------------------------------
// Ranking metrics
// ---------------------------------------------------------------------------

struct RankedResult {
  std::string query_id;
  std::vector<std::string> ranked_ids;  // best first
  std::vector<int> relevance;           // aligned with ranked_ids; nonzero = relevant
};

std::map<int, double> topk_accuracy(const std::vector<RankedResult>& results,
                                    const std::vector<int>& k_list);
double mean_reciprocal_rank(const std::vector<RankedResult>& results);
double mean_average_precision(const std::vector<RankedResult>& results);

// ---------------------------------------------------------------------------
// Generative metrics
// ---------------------------------------------------------------------------

struct GaussianStats {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;  // symmetric PSD, unbiased estimate
  long count = 0;
};

GaussianStats gaussian_stats(const Eigen::MatrixXd& features);

// exp of the mean KL(p(y|x) || p(y)) per split, averaged over splits.
std::pair<double, double> inception_score(const Eigen::MatrixXd& probabilities, int splits = 10);

// ||mu_a - mu_b||^2 + tr(Ca + Cb - 2 (Ca Cb)^{1/2}); the matrix square root
// is taken by eigendecomposition with negative eigenvalues clipped at -1e-8.
double fid(const GaussianStats& a, const GaussianStats& b);

// Unbiased MMD^2 with kernel (x.y/D + 1)^3 over `subsets` random subsets of
// size `subset_size`; returns (mean, std).
std::pair<double, double> kid(const Eigen::MatrixXd& features_a, const Eigen::MatrixXd& features_b,
                              long subset_size, int subsets, std::uint64_t seed);

// Single-subset unbiased MMD^2 (the building block of kid()).
double mmd2_polynomial(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b);

// ---------------------------------------------------------------------------
// Embedding export / report plumbing
// ---------------------------------------------------------------------------

void export_embeddings(const enc::Encoder& encoder, const data::DatasetManifest& manifest,
                       const std::string& split, const std::filesystem::path& out_csv);

struct EmbeddingTable {
  std::vector<std::string> record_ids;
  std::vector<int> labels;
  std::vector<int> subjects;
  Eigen::MatrixXd embeddings;
};

EmbeddingTable read_embedding_csv(const std::filesystem::path& path);

nlohmann::json metric_report(const std::string& metric, double value, std::optional<double> std_dev,
                             const nlohmann::json& config, const std::string& dataset_hash,
                             const std::string& checkpoint_hash);

}  // namespace eegpack::eval
