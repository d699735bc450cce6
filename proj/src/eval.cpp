#include "eegpack/eval.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <future>
#include <set>
#include <sstream>

namespace eegpack::eval {

// ---------------------------------------------------------------------------
// Hungarian assignment (max weight, square matrix, O(n^3) potentials form).
// ---------------------------------------------------------------------------
namespace {

std::vector<int> max_weight_assignment(const Eigen::MatrixXd& weights) {
  const int n = static_cast<int>(weights.rows());
  // Minimize (max - w).
  const double wmax = weights.maxCoeff();
  const double INF = 1e100;
  std::vector<double> u(static_cast<std::size_t>(n + 1)), v(static_cast<std::size_t>(n + 1));
  std::vector<int> p(static_cast<std::size_t>(n + 1)), way(static_cast<std::size_t>(n + 1));
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(static_cast<std::size_t>(n + 1), INF);
    std::vector<char> used(static_cast<std::size_t>(n + 1), false);
    do {
      used[static_cast<std::size_t>(j0)] = true;
      const int i0 = p[static_cast<std::size_t>(j0)];
      double delta = INF;
      int j1 = -1;
      for (int j = 1; j <= n; ++j) {
        if (used[static_cast<std::size_t>(j)]) continue;
        const double cost = (wmax - weights(i0 - 1, j - 1)) - u[static_cast<std::size_t>(i0)] -
                            v[static_cast<std::size_t>(j)];
        if (cost < minv[static_cast<std::size_t>(j)]) {
          minv[static_cast<std::size_t>(j)] = cost;
          way[static_cast<std::size_t>(j)] = j0;
        }
        if (minv[static_cast<std::size_t>(j)] < delta) {
          delta = minv[static_cast<std::size_t>(j)];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[static_cast<std::size_t>(j)]) {
          u[static_cast<std::size_t>(p[static_cast<std::size_t>(j)])] += delta;
          v[static_cast<std::size_t>(j)] -= delta;
        } else {
          minv[static_cast<std::size_t>(j)] -= delta;
        }
      }
      j0 = j1;
    } while (p[static_cast<std::size_t>(j0)] != 0);
    do {
      const int j1 = way[static_cast<std::size_t>(j0)];
      p[static_cast<std::size_t>(j0)] = p[static_cast<std::size_t>(j1)];
      j0 = j1;
    } while (j0);
  }
  std::vector<int> row_to_col(static_cast<std::size_t>(n), -1);
  for (int j = 1; j <= n; ++j)
    if (p[static_cast<std::size_t>(j)] > 0)
      row_to_col[static_cast<std::size_t>(p[static_cast<std::size_t>(j)] - 1)] = j - 1;
  return row_to_col;
}

struct KmeansRun {
  std::vector<int> assignment;
  double inertia = 0.0;
};

KmeansRun kmeans_once(const Eigen::MatrixXd& x, int K, std::uint64_t seed) {
  const long M = x.rows();
  Rng rng = make_rng(seed);

  // k-means++ seeding.
  Eigen::MatrixXd centers(K, x.cols());
  std::vector<double> dist2(static_cast<std::size_t>(M), 0.0);
  centers.row(0) = x.row(static_cast<long>(rng.below(static_cast<std::uint64_t>(M))));
  for (int k = 1; k < K; ++k) {
    double total = 0.0;
    for (long i = 0; i < M; ++i) {
      double best = (x.row(i) - centers.row(0)).squaredNorm();
      for (int c = 1; c < k; ++c)
        best = std::min(best, (x.row(i) - centers.row(c)).squaredNorm());
      dist2[static_cast<std::size_t>(i)] = best;
      total += best;
    }
    if (total <= 0.0) {
      centers.row(k) = x.row(static_cast<long>(rng.below(static_cast<std::uint64_t>(M))));
      continue;
    }
    double pick = rng.uniform() * total;
    long chosen = M - 1;
    for (long i = 0; i < M; ++i) {
      pick -= dist2[static_cast<std::size_t>(i)];
      if (pick <= 0.0) {
        chosen = i;
        break;
      }
    }
    centers.row(k) = x.row(chosen);
  }

  std::vector<int> assign(static_cast<std::size_t>(M), -1);
  for (int iter = 0; iter < 200; ++iter) {
    bool changed = false;
    for (long i = 0; i < M; ++i) {
      int best_k = 0;
      double best = (x.row(i) - centers.row(0)).squaredNorm();
      for (int k = 1; k < K; ++k) {
        const double d = (x.row(i) - centers.row(k)).squaredNorm();
        if (d < best) {
          best = d;
          best_k = k;
        }
      }
      if (assign[static_cast<std::size_t>(i)] != best_k) {
        assign[static_cast<std::size_t>(i)] = best_k;
        changed = true;
      }
    }
    if (!changed && iter > 0) break;
    Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(K, x.cols());
    std::vector<long> counts(static_cast<std::size_t>(K), 0);
    for (long i = 0; i < M; ++i) {
      sums.row(assign[static_cast<std::size_t>(i)]) += x.row(i);
      counts[static_cast<std::size_t>(assign[static_cast<std::size_t>(i)])]++;
    }
    for (int k = 0; k < K; ++k)
      if (counts[static_cast<std::size_t>(k)] > 0)
        centers.row(k) = sums.row(k) / static_cast<double>(counts[static_cast<std::size_t>(k)]);
  }

  KmeansRun run;
  run.assignment = std::move(assign);
  for (long i = 0; i < M; ++i)
    run.inertia += (x.row(i) - centers.row(run.assignment[static_cast<std::size_t>(i)])).squaredNorm();
  return run;
}

}  // namespace

double kmeans_accuracy(const Eigen::MatrixXd& embeddings, const std::vector<int>& labels, int K,
                       std::uint64_t seed, int restarts, bool parallel) {
  const long M = embeddings.rows();
  if (static_cast<long>(labels.size()) != M)
    throw std::invalid_argument("kmeans_accuracy: label count mismatch");
  std::set<int> distinct(labels.begin(), labels.end());
  if (static_cast<int>(distinct.size()) != K)
    throw std::invalid_argument("kmeans_accuracy: K must equal the number of distinct labels");
  if (M < K) throw std::invalid_argument("kmeans_accuracy: fewer points than clusters");
  if (restarts < 1) throw std::invalid_argument("kmeans_accuracy: restarts must be >= 1");

  Rng seeder = make_rng(seed);
  std::vector<std::uint64_t> restart_seeds;
  for (int r = 0; r < restarts; ++r) restart_seeds.push_back(seeder.fork(static_cast<std::uint64_t>(r)));

  std::vector<KmeansRun> runs(static_cast<std::size_t>(restarts));
  if (parallel) {
    std::vector<std::future<KmeansRun>> futures;
    for (int r = 0; r < restarts; ++r)
      futures.push_back(std::async(std::launch::async, kmeans_once, std::cref(embeddings), K,
                                   restart_seeds[static_cast<std::size_t>(r)]));
    for (int r = 0; r < restarts; ++r) runs[static_cast<std::size_t>(r)] = futures[static_cast<std::size_t>(r)].get();
  } else {
    for (int r = 0; r < restarts; ++r)
      runs[static_cast<std::size_t>(r)] = kmeans_once(embeddings, K, restart_seeds[static_cast<std::size_t>(r)]);
  }

  int best = 0;
  for (int r = 1; r < restarts; ++r)
    if (runs[static_cast<std::size_t>(r)].inertia < runs[static_cast<std::size_t>(best)].inertia) best = r;
  const auto& assign = runs[static_cast<std::size_t>(best)].assignment;

  // Contingency table (clusters x classes), then optimal matching.
  std::map<int, int> class_index;
  for (int l : distinct) class_index.emplace(l, static_cast<int>(class_index.size()));
  const int n = std::max(K, static_cast<int>(class_index.size()));
  Eigen::MatrixXd table = Eigen::MatrixXd::Zero(n, n);
  for (long i = 0; i < M; ++i)
    table(assign[static_cast<std::size_t>(i)], class_index.at(labels[static_cast<std::size_t>(i)])) += 1.0;
  const auto match = max_weight_assignment(table);
  double matched = 0.0;
  for (int k = 0; k < n; ++k)
    if (match[static_cast<std::size_t>(k)] >= 0) matched += table(k, match[static_cast<std::size_t>(k)]);
  return matched / static_cast<double>(M);
}

// ---------------------------------------------------------------------------
// Linear probe
// ---------------------------------------------------------------------------

double linear_probe_accuracy(const Eigen::MatrixXd& train_x, const std::vector<int>& train_y,
                             const Eigen::MatrixXd& test_x, const std::vector<int>& test_y,
                             double regularization) {
  if (train_x.rows() != static_cast<long>(train_y.size()) ||
      test_x.rows() != static_cast<long>(test_y.size()))
    throw std::invalid_argument("linear_probe_accuracy: label count mismatch");
  std::set<int> classes(train_y.begin(), train_y.end());
  if (classes.size() < 2) throw std::invalid_argument("linear_probe_accuracy: single-class train set");

  const long M = train_x.rows();
  const long D = train_x.cols();
  // Bias via appended constant feature.
  Eigen::MatrixXd X(M, D + 1);
  X << train_x, Eigen::VectorXd::Ones(M);
  Eigen::MatrixXd Xt(test_x.rows(), D + 1);
  Xt << test_x, Eigen::VectorXd::Ones(test_x.rows());

  std::vector<int> class_list(classes.begin(), classes.end());
  Eigen::MatrixXd W = Eigen::MatrixXd::Zero(D + 1, static_cast<long>(class_list.size()));

  const int iters = 1500;
  for (std::size_t c = 0; c < class_list.size(); ++c) {
    Eigen::VectorXd y(M);
    for (long i = 0; i < M; ++i)
      y(i) = train_y[static_cast<std::size_t>(i)] == class_list[c] ? 1.0 : -1.0;
    Eigen::VectorXd w = Eigen::VectorXd::Zero(D + 1);
    for (int t = 1; t <= iters; ++t) {
      const double eta = 1.0 / (regularization * static_cast<double>(t));
      Eigen::VectorXd margin = (X * w).cwiseProduct(y);
      Eigen::VectorXd grad = regularization * w;
      for (long i = 0; i < M; ++i)
        if (margin(i) < 1.0) grad -= y(i) * X.row(i).transpose() / static_cast<double>(M);
      w -= eta * grad;
    }
    W.col(static_cast<long>(c)) = w;
  }

  const Eigen::MatrixXd scores = Xt * W;
  long correct = 0;
  for (long i = 0; i < Xt.rows(); ++i) {
    long arg = 0;
    scores.row(i).maxCoeff(&arg);
    if (class_list[static_cast<std::size_t>(arg)] == test_y[static_cast<std::size_t>(i)]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(Xt.rows());
}

// ---------------------------------------------------------------------------
// kNN probe
// ---------------------------------------------------------------------------

double knn_accuracy(const Eigen::MatrixXd& train_x, const std::vector<int>& train_y,
                    const Eigen::MatrixXd& test_x, const std::vector<int>& test_y, int k) {
  if (train_x.rows() != static_cast<long>(train_y.size()) ||
      test_x.rows() != static_cast<long>(test_y.size()))
    throw std::invalid_argument("knn_accuracy: label count mismatch");
  if (k < 1) throw std::invalid_argument("knn_accuracy: k must be >= 1");
  const long M = train_x.rows();
  const long keff = std::min<long>(k, M);

  long correct = 0;
  std::vector<std::pair<double, long>> order(static_cast<std::size_t>(M));
  for (long q = 0; q < test_x.rows(); ++q) {
    for (long i = 0; i < M; ++i)
      order[static_cast<std::size_t>(i)] = {(train_x.row(i) - test_x.row(q)).squaredNorm(), i};
    std::partial_sort(order.begin(), order.begin() + keff, order.end());

    std::map<int, int> votes;
    for (long i = 0; i < keff; ++i)
      votes[train_y[static_cast<std::size_t>(order[static_cast<std::size_t>(i)].second)]]++;
    int top = 0;
    for (const auto& [label, count] : votes) top = std::max(top, count);
    // Tie toward the closest neighbour carrying a tied label.
    int winner = -1;
    for (long i = 0; i < keff && winner < 0; ++i) {
      const int label = train_y[static_cast<std::size_t>(order[static_cast<std::size_t>(i)].second)];
      if (votes[label] == top) winner = label;
    }
    if (winner == test_y[static_cast<std::size_t>(q)]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(test_x.rows());
}

// ---------------------------------------------------------------------------
// Zero-shot protocol
// ---------------------------------------------------------------------------

namespace {

Eigen::MatrixXd embed_split_view(const enc::Encoder& encoder, const data::SplitView& view) {
  nn::NoGradGuard ng;
  Eigen::MatrixXd out(view.count(), encoder.config().embed_dim);
  const long chunk = 256;
  for (long ofs = 0; ofs < view.count(); ofs += chunk) {
    const long n = std::min(chunk, view.count() - ofs);
    nn::Tensor signals({n, view.channels, view.timesteps});
    std::memcpy(signals.raw().data(),
                view.signals.raw().data() + ofs * view.channels * view.timesteps,
                sizeof(double) * static_cast<std::size_t>(n * view.channels * view.timesteps));
    out.middleRows(ofs, n) = encoder.encode_inference(signals);
  }
  return out;
}

}  // namespace

ZeroShotReport zero_shot_protocol(const data::DatasetManifest& manifest,
                                  const std::vector<int>& holdout_classes,
                                  const enc::Encoder& encoder, const nlohmann::json& provenance,
                                  std::uint64_t seed) {
  if (holdout_classes.empty()) throw ConfigError("zero-shot needs at least one holdout class");
  if (!provenance.contains("train_classes"))
    throw DataError("encoder checkpoint carries no train-class audit trail");
  const auto trained_on = provenance.at("train_classes").get<std::vector<int>>();
  for (int h : holdout_classes)
    for (int t : trained_on)
      if (h == t)
        throw DataError("holdout class " + std::to_string(h) +
                        " was present in encoder training; protocol aborted");

  data::SplitView probe_train = data::load_split(manifest, "train").filter_classes(holdout_classes);
  data::SplitView probe_test = data::load_split(manifest, "test").filter_classes(holdout_classes);
  if (probe_train.count() == 0 || probe_test.count() == 0)
    throw DataError("holdout classes have no records to probe");

  const Eigen::MatrixXd train_e = embed_split_view(encoder, probe_train);
  const Eigen::MatrixXd test_e = embed_split_view(encoder, probe_test);

  ZeroShotReport report;
  report.probe_train_records = probe_train.count();
  report.probe_test_records = probe_test.count();
  std::set<int> distinct(probe_test.labels.begin(), probe_test.labels.end());
  report.kmeans = kmeans_accuracy(test_e, probe_test.labels, static_cast<int>(distinct.size()), seed);
  report.svm = linear_probe_accuracy(train_e, probe_train.labels, test_e, probe_test.labels);
  report.knn = knn_accuracy(train_e, probe_train.labels, test_e, probe_test.labels);
  return report;
}

// ---------------------------------------------------------------------------
// Ranking metrics
// ---------------------------------------------------------------------------

namespace {
void check_ranked(const RankedResult& r) {
  if (r.ranked_ids.size() != r.relevance.size())
    throw std::invalid_argument("ranked result: relevance/id length mismatch");
}
}  // namespace

std::map<int, double> topk_accuracy(const std::vector<RankedResult>& results,
                                    const std::vector<int>& k_list) {
  if (results.empty()) throw std::invalid_argument("topk_accuracy: no queries");
  std::map<int, double> out;
  for (int k : k_list) {
    long hits = 0;
    for (const auto& r : results) {
      check_ranked(r);
      const long limit = std::min<long>(k, static_cast<long>(r.relevance.size()));
      for (long i = 0; i < limit; ++i)
        if (r.relevance[static_cast<std::size_t>(i)] != 0) {
          ++hits;
          break;
        }
    }
    out[k] = static_cast<double>(hits) / static_cast<double>(results.size());
  }
  return out;
}

double mean_reciprocal_rank(const std::vector<RankedResult>& results) {
  if (results.empty()) throw std::invalid_argument("mrr: no queries");
  double sum = 0.0;
  for (const auto& r : results) {
    check_ranked(r);
    for (std::size_t i = 0; i < r.relevance.size(); ++i)
      if (r.relevance[i] != 0) {
        sum += 1.0 / static_cast<double>(i + 1);
        break;
      }
  }
  return sum / static_cast<double>(results.size());
}

double mean_average_precision(const std::vector<RankedResult>& results) {
  if (results.empty()) throw std::invalid_argument("map: no queries");
  double sum = 0.0;
  for (const auto& r : results) {
    check_ranked(r);
    long relevant_total = 0;
    for (int rel : r.relevance) relevant_total += rel != 0 ? 1 : 0;
    if (relevant_total == 0) continue;  // AP of a query with no relevant item is 0
    double ap = 0.0;
    long hits = 0;
    for (std::size_t i = 0; i < r.relevance.size(); ++i)
      if (r.relevance[i] != 0) {
        ++hits;
        ap += static_cast<double>(hits) / static_cast<double>(i + 1);
      }
    sum += ap / static_cast<double>(relevant_total);
  }
  return sum / static_cast<double>(results.size());
}

// ---------------------------------------------------------------------------
// Generative metrics
// ---------------------------------------------------------------------------

GaussianStats gaussian_stats(const Eigen::MatrixXd& features) {
  if (features.rows() < 2) throw std::invalid_argument("gaussian_stats: needs count >= 2");
  GaussianStats s;
  s.count = features.rows();
  s.mean = features.colwise().mean();
  const Eigen::MatrixXd centered = features.rowwise() - s.mean.transpose();
  s.cov = centered.transpose() * centered / static_cast<double>(s.count - 1);
  s.cov = 0.5 * (s.cov + s.cov.transpose().eval());
  return s;
}

std::pair<double, double> inception_score(const Eigen::MatrixXd& probabilities, int splits) {
  const long M = probabilities.rows();
  if (M < 1) throw std::invalid_argument("inception_score: empty input");
  if (splits < 1 || splits > M) throw std::invalid_argument("inception_score: bad split count");
  for (long i = 0; i < M; ++i) {
    if (std::abs(probabilities.row(i).sum() - 1.0) > 1e-5 || probabilities.row(i).minCoeff() < 0.0)
      throw std::invalid_argument("inception_score: rows must be probability vectors");
  }

  std::vector<double> scores;
  for (int s = 0; s < splits; ++s) {
    const long lo = M * s / splits;
    const long hi = M * (s + 1) / splits;
    if (hi <= lo) continue;
    const auto block = probabilities.middleRows(lo, hi - lo);
    const Eigen::RowVectorXd marginal = block.colwise().mean();
    double kl_sum = 0.0;
    for (long i = 0; i < block.rows(); ++i) {
      for (long j = 0; j < block.cols(); ++j) {
        const double p = block(i, j);
        if (p > 0.0) kl_sum += p * (std::log(p) - std::log(std::max(marginal(j), 1e-300)));
      }
    }
    scores.push_back(std::exp(kl_sum / static_cast<double>(block.rows())));
  }
  double mean = 0.0;
  for (double v : scores) mean += v;
  mean /= static_cast<double>(scores.size());
  double var = 0.0;
  for (double v : scores) var += (v - mean) * (v - mean);
  const double stddev = scores.size() > 1 ? std::sqrt(var / static_cast<double>(scores.size())) : 0.0;
  return {mean, stddev};
}

namespace {

// Symmetric PSD square root; eigenvalues above -tol are clipped to zero,
// anything lower means the input is not a covariance matrix.
Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& m, double tol = 1e-8) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(m);
  Eigen::VectorXd vals = eig.eigenvalues();
  const double scale = std::max(1.0, vals.cwiseAbs().maxCoeff());
  for (long i = 0; i < vals.size(); ++i) {
    if (vals(i) < -tol * scale)
      throw std::invalid_argument("matrix square root: input is not PSD within tolerance");
    vals(i) = std::max(vals(i), 0.0);
  }
  return eig.eigenvectors() * vals.cwiseSqrt().asDiagonal() * eig.eigenvectors().transpose();
}

}  // namespace

double fid(const GaussianStats& a, const GaussianStats& b) {
  if (a.mean.size() != b.mean.size()) throw std::invalid_argument("fid: dimension mismatch");
  const double mean_term = (a.mean - b.mean).squaredNorm();
  // tr((Ca Cb)^{1/2}) via the symmetric form Ca^{1/2} Cb Ca^{1/2}.
  const Eigen::MatrixXd a_half = psd_sqrt(a.cov);
  const Eigen::MatrixXd inner = a_half * b.cov * a_half;
  const Eigen::MatrixXd inner_sqrt = psd_sqrt(0.5 * (inner + inner.transpose().eval()));
  const double trace_term = a.cov.trace() + b.cov.trace() - 2.0 * inner_sqrt.trace();
  return std::max(0.0, mean_term + trace_term);
}

double mmd2_polynomial(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  const long m = a.rows(), n = b.rows();
  if (m < 2 || n < 2) throw std::invalid_argument("mmd2: need at least 2 samples per side");
  if (a.cols() != b.cols()) throw std::invalid_argument("mmd2: dimension mismatch");
  const double d = static_cast<double>(a.cols());
  auto kernel = [d](const Eigen::MatrixXd& x, const Eigen::MatrixXd& y) {
    return ((x * y.transpose() / d).array() + 1.0).cube().matrix();
  };
  const Eigen::MatrixXd kaa = kernel(a, a);
  const Eigen::MatrixXd kbb = kernel(b, b);
  const Eigen::MatrixXd kab = kernel(a, b);
  const double term_a = (kaa.sum() - kaa.trace()) / static_cast<double>(m * (m - 1));
  const double term_b = (kbb.sum() - kbb.trace()) / static_cast<double>(n * (n - 1));
  const double term_ab = 2.0 * kab.sum() / static_cast<double>(m * n);
  return term_a + term_b - term_ab;
}

std::pair<double, double> kid(const Eigen::MatrixXd& features_a, const Eigen::MatrixXd& features_b,
                              long subset_size, int subsets, std::uint64_t seed) {
  if (subsets < 1) throw std::invalid_argument("kid: need at least one subset");
  const long size = std::min({subset_size, features_a.rows(), features_b.rows()});
  if (size < 2) throw std::invalid_argument("kid: subset size below 2");

  Rng seeder = make_rng(seed);
  std::vector<double> values;
  for (int s = 0; s < subsets; ++s) {
    Rng rng = make_rng(seeder.fork(static_cast<std::uint64_t>(s)));
    auto sample_rows = [&](const Eigen::MatrixXd& x) {
      std::vector<long> idx(static_cast<std::size_t>(x.rows()));
      for (long i = 0; i < x.rows(); ++i) idx[static_cast<std::size_t>(i)] = i;
      rng.shuffle(idx);
      Eigen::MatrixXd out(size, x.cols());
      for (long i = 0; i < size; ++i) out.row(i) = x.row(idx[static_cast<std::size_t>(i)]);
      return out;
    };
    values.push_back(mmd2_polynomial(sample_rows(features_a), sample_rows(features_b)));
  }
  double mean = 0.0;
  for (double v : values) mean += v;
  mean /= static_cast<double>(values.size());
  double var = 0.0;
  for (double v : values) var += (v - mean) * (v - mean);
  const double stddev = values.size() > 1 ? std::sqrt(var / static_cast<double>(values.size())) : 0.0;
  return {mean, stddev};
}

// ---------------------------------------------------------------------------
// Embedding export
// ---------------------------------------------------------------------------

void export_embeddings(const enc::Encoder& encoder, const data::DatasetManifest& manifest,
                       const std::string& split, const std::filesystem::path& out_csv) {
  data::SplitView view = data::load_split(manifest, split);
  const Eigen::MatrixXd e = embed_split_view(encoder, view);
  std::ostringstream out;
  out << "record_id,label,subject";
  for (long j = 0; j < e.cols(); ++j) out << ",e_" << (j + 1);
  out << '\n';
  for (long i = 0; i < e.rows(); ++i) {
    out << csv_escape_check(view.record_ids[static_cast<std::size_t>(i)]) << ','
        << view.labels[static_cast<std::size_t>(i)] << ',' << view.subjects[static_cast<std::size_t>(i)];
    for (long j = 0; j < e.cols(); ++j) out << ',' << format_double(e(i, j));
    out << '\n';
  }
  write_text_file(out_csv, out.str());
}

EmbeddingTable read_embedding_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open embeddings: " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw DataError("empty embedding file");
  const auto header = split_csv_line(line);
  if (header.size() < 4 || header[0] != "record_id")
    throw DataError("unexpected embedding CSV header");
  const long dim = static_cast<long>(header.size()) - 3;

  EmbeddingTable table;
  std::vector<std::vector<double>> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto fields = split_csv_line(line);
    if (static_cast<long>(fields.size()) != dim + 3)
      throw DataError("embedding row width mismatch");
    table.record_ids.push_back(fields[0]);
    table.labels.push_back(std::stoi(fields[1]));
    table.subjects.push_back(std::stoi(fields[2]));
    std::vector<double> row(static_cast<std::size_t>(dim));
    for (long j = 0; j < dim; ++j) row[static_cast<std::size_t>(j)] = std::stod(fields[static_cast<std::size_t>(j + 3)]);
    rows.push_back(std::move(row));
  }
  table.embeddings.resize(static_cast<long>(rows.size()), dim);
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (long j = 0; j < dim; ++j) table.embeddings(static_cast<long>(i), j) = rows[i][static_cast<std::size_t>(j)];
  return table;
}

nlohmann::json metric_report(const std::string& metric, double value, std::optional<double> std_dev,
                             const nlohmann::json& config, const std::string& dataset_hash,
                             const std::string& checkpoint_hash) {
  nlohmann::json j;
  j["metric"] = metric;
  j["value"] = value;
  if (std_dev) j["std"] = *std_dev;
  j["config"] = config;
  j["dataset_hash"] = dataset_hash;
  j["checkpoint_hash"] = checkpoint_hash;
  return j;
}

}  // namespace eegpack::eval
