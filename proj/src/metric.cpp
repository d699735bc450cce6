#include "eegpack/metric.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "eegpack/eval.hpp"

namespace eegpack::metric {

using namespace eegpack::nn;

MiningMode mining_mode_from_string(const std::string& s) {
  if (s == "semi_hard") return MiningMode::semi_hard;
  if (s == "all_valid") return MiningMode::all_valid;
  throw ConfigError("unknown mining mode: " + s);
}

std::string to_string(MiningMode m) {
  return m == MiningMode::semi_hard ? "semi_hard" : "all_valid";
}

void TrainConfig::validate() const {
  if (epochs <= 0 || batch_size <= 0) throw ConfigError("epochs and batch_size must be positive");
  if (learning_rate < 0.0) throw ConfigError("learning_rate must be >= 0");
  if (checkpoint_every < 0) throw ConfigError("checkpoint_every must be >= 0");
}

// ---------------------------------------------------------------------------
// Mining
// ---------------------------------------------------------------------------

namespace {

Eigen::MatrixXd squared_distances(const Eigen::MatrixXd& x) {
  const Eigen::VectorXd sq = x.rowwise().squaredNorm();
  Eigen::MatrixXd d = (-2.0 * x * x.transpose());
  d.colwise() += sq;
  d.rowwise() += sq.transpose();
  return d.cwiseMax(0.0);
}

}  // namespace

TripletIndexSet mine_semihard(const Eigen::MatrixXd& embeddings, const std::vector<int>& labels,
                              double margin) {
  const long B = embeddings.rows();
  if (static_cast<long>(labels.size()) != B)
    throw std::invalid_argument("mine_semihard: label count mismatch");
  TripletIndexSet out;
  if (B < 3) return out;
  const Eigen::MatrixXd d = squared_distances(embeddings);
  for (long a = 0; a < B; ++a)
    for (long p = 0; p < B; ++p) {
      if (a == p || labels[static_cast<std::size_t>(a)] != labels[static_cast<std::size_t>(p)])
        continue;
      const double dap = d(a, p);
      for (long n = 0; n < B; ++n) {
        if (labels[static_cast<std::size_t>(n)] == labels[static_cast<std::size_t>(a)]) continue;
        const double dan = d(a, n);
        if (dap < dan && dan < dap + margin) out.triples.push_back({a, p, n});
      }
    }
  return out;
}

TripletIndexSet mine_all_valid(const Eigen::MatrixXd& embeddings, const std::vector<int>& labels) {
  const long B = embeddings.rows();
  if (static_cast<long>(labels.size()) != B)
    throw std::invalid_argument("mine_all_valid: label count mismatch");
  TripletIndexSet out;
  for (long a = 0; a < B; ++a)
    for (long p = 0; p < B; ++p) {
      if (a == p || labels[static_cast<std::size_t>(a)] != labels[static_cast<std::size_t>(p)])
        continue;
      for (long n = 0; n < B; ++n)
        if (labels[static_cast<std::size_t>(n)] != labels[static_cast<std::size_t>(a)])
          out.triples.push_back({a, p, n});
    }
  return out;
}

// ---------------------------------------------------------------------------
// Loss
// ---------------------------------------------------------------------------

Var triplet_loss(const Var& embeddings, const TripletIndexSet& triples, double margin) {
  if (triples.empty()) throw std::invalid_argument("triplet_loss: empty triple set; skip the step");
  std::vector<long> ia, ip, in;
  ia.reserve(triples.triples.size());
  ip.reserve(triples.triples.size());
  in.reserve(triples.triples.size());
  for (const auto& t : triples.triples) {
    ia.push_back(t[0]);
    ip.push_back(t[1]);
    in.push_back(t[2]);
  }
  Var a = gather_rows(embeddings, ia);
  Var p = gather_rows(embeddings, ip);
  Var n = gather_rows(embeddings, in);
  Var dap = row_sum(mul(sub(a, p), sub(a, p)));
  Var dan = row_sum(mul(sub(a, n), sub(a, n)));
  return mean_all(relu(add_scalar(sub(dap, dan), margin)));
}

// ---------------------------------------------------------------------------
// Training loops
// ---------------------------------------------------------------------------

void write_history_csv(const std::filesystem::path& path, const std::vector<HistoryRow>& rows) {
  std::ostringstream out;
  out << "epoch,loss,mined_fraction,val_metric\n";
  for (const auto& r : rows)
    out << r.epoch << ',' << format_double(r.loss) << ',' << format_double(r.mined_fraction)
        << ',' << format_double(r.val_metric) << '\n';
  write_text_file(path, out.str());
}

namespace {

data::SplitView load_filtered(const data::DatasetManifest& manifest, const std::string& split,
                              const std::vector<int>& exclude) {
  data::SplitView view = data::load_split(manifest, split);
  if (exclude.empty()) return view;
  std::set<int> drop(exclude.begin(), exclude.end());
  std::vector<int> keep;
  for (int k = 0; k < manifest.num_classes; ++k)
    if (!drop.count(k)) keep.push_back(k);
  return view.filter_classes(keep);
}

std::optional<data::SplitView> try_load_filtered(const data::DatasetManifest& manifest,
                                                 const std::string& split,
                                                 const std::vector<int>& exclude) {
  if (!manifest.has_split(split) || manifest.split(split).empty()) return std::nullopt;
  auto v = load_filtered(manifest, split, exclude);
  if (v.count() == 0) return std::nullopt;
  return v;
}

std::vector<int> distinct_classes(const data::SplitView& view) {
  std::set<int> s(view.labels.begin(), view.labels.end());
  return {s.begin(), s.end()};
}

void maybe_checkpoint(const enc::Encoder& encoder, const TrainConfig& config, int epoch,
                      bool final_epoch, const nlohmann::json& provenance) {
  if (config.checkpoint_dir.empty()) return;
  const bool scheduled = config.checkpoint_every > 0 && epoch % config.checkpoint_every == 0;
  if (!scheduled && !final_epoch) return;
  std::filesystem::create_directories(config.checkpoint_dir);
  enc::save_encoder(config.checkpoint_dir / ("encoder_epoch" + std::to_string(epoch) + ".ckpt"),
                    encoder, provenance);
  if (final_epoch)
    enc::save_encoder(config.checkpoint_dir / "encoder_final.ckpt", encoder, provenance);
}

double classification_accuracy(const enc::Encoder& encoder, const enc::ClassifierHead& head,
                               const data::SplitView& view) {
  NoGradGuard ng;
  long correct = 0;
  const long chunk = 256;
  for (long ofs = 0; ofs < view.count(); ofs += chunk) {
    const long n = std::min(chunk, view.count() - ofs);
    Tensor signals({n, view.channels, view.timesteps});
    std::memcpy(signals.raw().data(), view.signals.raw().data() + ofs * view.channels * view.timesteps,
                sizeof(double) * static_cast<std::size_t>(n * view.channels * view.timesteps));
    Var probs = softmax_rows(head.logits(encoder.encode(signals)));
    for (long i = 0; i < n; ++i) {
      long arg = 0;
      probs.value().mat().row(i).maxCoeff(&arg);
      if (static_cast<int>(arg) == view.labels[static_cast<std::size_t>(ofs + i)]) ++correct;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(view.count());
}

Eigen::MatrixXd embed_view(const enc::Encoder& encoder, const data::SplitView& view) {
  NoGradGuard ng;
  Eigen::MatrixXd out(view.count(), encoder.config().embed_dim);
  const long chunk = 256;
  for (long ofs = 0; ofs < view.count(); ofs += chunk) {
    const long n = std::min(chunk, view.count() - ofs);
    Tensor signals({n, view.channels, view.timesteps});
    std::memcpy(signals.raw().data(), view.signals.raw().data() + ofs * view.channels * view.timesteps,
                sizeof(double) * static_cast<std::size_t>(n * view.channels * view.timesteps));
    out.middleRows(ofs, n) = encoder.encode_inference(signals);
  }
  return out;
}

}  // namespace

TrainOutput train_triplet(enc::Encoder& encoder, const data::DatasetManifest& manifest,
                          const TripletConfig& triplet, const TrainConfig& config) {
  config.validate();
  if (triplet.margin <= 0.0) throw ConfigError("triplet margin must be > 0");

  data::SplitView train = load_filtered(manifest, "train", config.exclude_classes);
  if (train.count() == 0) throw DataError("train split is empty after class filtering");
  {
    std::map<int, int> counts;
    for (int l : train.labels) counts[l]++;
    for (const auto& [label, count] : counts)
      if (count < 2)
        throw DataError("class " + std::to_string(label) +
                        " has fewer than 2 train records; triplet mining infeasible");
  }
  auto val = try_load_filtered(manifest, "val", config.exclude_classes);

  TrainOutput out;
  out.train_classes = distinct_classes(train);
  out.dataset_hash = hash_container_hex(manifest.root);

  nlohmann::json provenance;
  provenance["regime"] = "triplet";
  provenance["dataset_hash"] = out.dataset_hash;
  provenance["train_classes"] = out.train_classes;
  provenance["margin"] = triplet.margin;
  provenance["mining"] = to_string(triplet.mining);
  provenance["seed"] = config.seed;

  auto optimizer = make_optimizer(config.optimizer, config.learning_rate);
  auto param_list = param_vars(encoder.params());
  Rng seed_rng = make_rng(config.seed);

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    data::BatchStream stream(train, config.batch_size, seed_rng.fork(static_cast<std::uint64_t>(epoch)),
                             /*balanced_classes=*/true);
    double loss_sum = 0.0;
    long mined_batches = 0, total_batches = 0;
    while (auto batch = stream.next()) {
      ++total_batches;
      Var emb = encoder.encode(batch->signals);
      TripletIndexSet mined =
          triplet.mining == MiningMode::semi_hard
              ? mine_semihard(emb.value().to_matrix(), batch->labels, triplet.margin)
              : mine_all_valid(emb.value().to_matrix(), batch->labels);
      if (mined.empty()) continue;  // counted via mined_fraction
      Var loss = triplet_loss(emb, mined, triplet.margin);
      loss_sum += loss.value().item();
      auto grads = gradients(loss, param_list);
      optimizer->step(encoder.params(), grads);
      ++mined_batches;
    }

    HistoryRow row;
    row.epoch = epoch;
    row.loss = mined_batches > 0 ? loss_sum / static_cast<double>(mined_batches) : 0.0;
    row.mined_fraction =
        total_batches > 0 ? static_cast<double>(mined_batches) / static_cast<double>(total_batches) : 0.0;
    const data::SplitView& probe = val ? *val : train;
    row.val_metric = eval::kmeans_accuracy(embed_view(encoder, probe), probe.labels,
                                           static_cast<int>(distinct_classes(probe).size()),
                                           config.seed, /*restarts=*/4);
    out.history.push_back(row);
    maybe_checkpoint(encoder, config, epoch, epoch == config.epochs, provenance);
  }
  return out;
}

TrainOutput train_supervised(enc::Encoder& encoder, enc::ClassifierHead& head,
                             const data::DatasetManifest& manifest, const TrainConfig& config) {
  config.validate();
  if (head.num_classes() <= 0) throw ConfigError("classifier head is empty");

  data::SplitView train = load_filtered(manifest, "train", config.exclude_classes);
  if (train.count() == 0) throw DataError("train split is empty after class filtering");
  auto val = try_load_filtered(manifest, "val", config.exclude_classes);

  TrainOutput out;
  out.train_classes = distinct_classes(train);
  out.dataset_hash = hash_container_hex(manifest.root);

  nlohmann::json provenance;
  provenance["regime"] = "supervised";
  provenance["dataset_hash"] = out.dataset_hash;
  provenance["train_classes"] = out.train_classes;
  provenance["seed"] = config.seed;

  std::vector<Param> all_params = encoder.params();
  for (const auto& p : head.params()) all_params.push_back(p);
  auto param_list = param_vars(all_params);
  auto optimizer = make_optimizer(config.optimizer, config.learning_rate);
  Rng seed_rng = make_rng(config.seed);

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    data::BatchStream stream(train, config.batch_size, seed_rng.fork(static_cast<std::uint64_t>(epoch)),
                             /*balanced_classes=*/false);
    double loss_sum = 0.0;
    long batches = 0;
    while (auto batch = stream.next()) {
      Var logits = head.logits(encoder.encode(batch->signals));
      Var loss = softmax_cross_entropy(logits, batch->labels);
      loss_sum += loss.value().item();
      auto grads = gradients(loss, param_list);
      optimizer->step(all_params, grads);
      ++batches;
    }

    HistoryRow row;
    row.epoch = epoch;
    row.loss = batches > 0 ? loss_sum / static_cast<double>(batches) : 0.0;
    row.mined_fraction = 1.0;
    row.train_metric = classification_accuracy(encoder, head, train);
    row.val_metric = val ? classification_accuracy(encoder, head, *val) : row.train_metric;
    out.history.push_back(row);
    maybe_checkpoint(encoder, config, epoch, epoch == config.epochs, provenance);
  }
  return out;
}

}  // namespace eegpack::metric
