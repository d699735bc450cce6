#pragma once
// Triplet objective with semi-hard mining, the supervised regime and the
// shared training loop with checkpointing.

#include <array>
#include <filesystem>
#include <optional>

#include "eegpack/data.hpp"
#include "eegpack/encoders.hpp"

namespace eegpack::metric {

enum class MiningMode { semi_hard, all_valid };

MiningMode mining_mode_from_string(const std::string& s);
std::string to_string(MiningMode m);

struct TripletConfig {
  double margin = 0.2;
  MiningMode mining = MiningMode::semi_hard;
  // Distance is squared Euclidean throughout (loss and mining band share one
  // convention; squaring preserves the ordering of nonnegative norms).
};

struct TripletIndexSet {
  std::vector<std::array<long, 3>> triples;  // (anchor, positive, negative)
  bool empty() const { return triples.empty(); }
  long size() const { return static_cast<long>(triples.size()); }
};

struct TrainConfig {
  int epochs = 30;
  long batch_size = 24;
  double learning_rate = 1e-3;
  nn::OptimizerKind optimizer = nn::OptimizerKind::adaptive_moments;
  std::uint64_t seed = 0;
  int checkpoint_every = 0;                // epochs between checkpoints; 0 = final only
  std::filesystem::path checkpoint_dir;    // empty = keep everything in memory
  std::vector<int> exclude_classes;        // dropped from the train/val streams

  void validate() const;
};

// Exactly the triples whose negative falls strictly inside the semi-hard
// band d(a,p) < d(a,n) < d(a,p) + margin, ordered lexicographically.
TripletIndexSet mine_semihard(const Eigen::MatrixXd& embeddings, const std::vector<int>& labels,
                              double margin);

// Every (a,p,n) with label[a]==label[p], a!=p, label[n]!=label[a].
TripletIndexSet mine_all_valid(const Eigen::MatrixXd& embeddings, const std::vector<int>& labels);

// Mean over triples of max(0, d(a,p) - d(a,n) + margin). Throws on an empty
// set; callers skip those steps.
nn::Var triplet_loss(const nn::Var& embeddings, const TripletIndexSet& triples, double margin);

struct HistoryRow {
  int epoch = 0;
  double loss = 0.0;
  double mined_fraction = 0.0;
  double val_metric = 0.0;
  double train_metric = 0.0;  // not serialized; CSV format is fixed below
};

// CSV columns: epoch,loss,mined_fraction,val_metric
void write_history_csv(const std::filesystem::path& path, const std::vector<HistoryRow>& rows);

struct TrainOutput {
  std::vector<HistoryRow> history;
  std::vector<int> train_classes;  // classes the encoder actually saw
  std::string dataset_hash;
};

TrainOutput train_triplet(enc::Encoder& encoder, const data::DatasetManifest& manifest,
                          const TripletConfig& triplet, const TrainConfig& config);

TrainOutput train_supervised(enc::Encoder& encoder, enc::ClassifierHead& head,
                             const data::DatasetManifest& manifest, const TrainConfig& config);

}  // namespace eegpack::metric
