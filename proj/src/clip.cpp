#include "eegpack/clip.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <set>
#include <sstream>

namespace eegpack::clip {

using namespace eegpack::nn;

void ClipConfig::validate() const {
  if (temperature <= 0.0) throw ConfigError("temperature must be > 0");
  if (projection_dim <= 0) throw ConfigError("projection_dim must be > 0");
  if (epochs <= 0 || batch_size < 2) throw ConfigError("epochs > 0 and batch_size >= 2 required");
  if (learning_rate < 0.0) throw ConfigError("learning_rate must be >= 0");
}

// ---------------------------------------------------------------------------
// Loss
// ---------------------------------------------------------------------------

static Var diagonal_symmetric_ce(const Var& logits) {
  const long B = logits.value().rows();
  std::vector<int> diag(static_cast<std::size_t>(B));
  std::iota(diag.begin(), diag.end(), 0);
  Var rows = softmax_cross_entropy(logits, diag);
  Var cols = softmax_cross_entropy(transpose(logits), diag);
  return scale(add(rows, cols), 0.5);
}

static void check_clip_inputs(const Var& eeg, const Var& img) {
  if (eeg.value().rows() != img.value().rows() || eeg.value().cols() != img.value().cols())
    throw std::invalid_argument("clip_loss: batch shape mismatch");
  if (eeg.value().rows() < 2) throw std::invalid_argument("clip_loss: needs batch size >= 2");
  for (const Var* side : {&eeg, &img})
    for (long i = 0; i < side->value().rows(); ++i)
      if (std::abs(side->value().mat().row(i).norm() - 1.0) > 1e-5)
        throw std::invalid_argument("clip_loss: inputs must be row-unit-normalized");
}

Var clip_loss(const Var& eeg_embeds, const Var& img_embeds, double temperature) {
  if (temperature <= 0.0) throw std::invalid_argument("clip_loss: temperature must be > 0");
  check_clip_inputs(eeg_embeds, img_embeds);
  Var logits = scale(matmul(eeg_embeds, transpose(img_embeds)), 1.0 / temperature);
  return diagonal_symmetric_ce(logits);
}

Var clip_loss_scaled(const Var& eeg_embeds, const Var& img_embeds,
                     const Var& log_inv_temperature) {
  check_clip_inputs(eeg_embeds, img_embeds);
  Var sims = matmul(eeg_embeds, transpose(img_embeds));
  Var scale_bc = broadcast_scalar(exp_op(log_inv_temperature), sims.value().shape());
  return diagonal_symmetric_ce(mul(sims, scale_bc));
}

// ---------------------------------------------------------------------------
// Model
// ---------------------------------------------------------------------------

ClipModel::ClipModel(std::unique_ptr<enc::Encoder> encoder, int image_feature_dim,
                     const ClipConfig& config, std::uint64_t seed)
    : encoder_(std::move(encoder)),
      projection_dim_(config.projection_dim),
      image_feature_dim_(image_feature_dim),
      learnable_tau_(config.learnable_temperature) {
  config.validate();
  Rng rng = make_rng(seed);
  eeg_proj_ = Dense("clip.eeg_proj", encoder_->config().embed_dim, projection_dim_, rng);
  img_proj_ = Dense("clip.img_proj", image_feature_dim_, projection_dim_, rng);
  log_inv_tau_ = Param{"clip.log_inv_tau",
                       Var(Tensor::scalar(std::log(1.0 / config.temperature)), learnable_tau_)};
}

Var ClipModel::embed_eeg(const Tensor& signals_bcn) const {
  return row_l2_normalize(eeg_proj_.forward(encoder_->encode(signals_bcn)));
}

Var ClipModel::embed_image_features(const Var& features) const {
  return row_l2_normalize(img_proj_.forward(features));
}

Eigen::MatrixXd ClipModel::embed_eeg_inference(const Tensor& signals_bcn) const {
  NoGradGuard ng;
  return embed_eeg(signals_bcn).value().to_matrix();
}

Eigen::MatrixXd ClipModel::embed_image_features_inference(const Eigen::MatrixXd& features) const {
  NoGradGuard ng;
  return embed_image_features(Var(Tensor::from_matrix(features))).value().to_matrix();
}

std::vector<Param> ClipModel::trainable_params() {
  std::vector<Param> params = encoder_->params();
  eeg_proj_.adopt(params);
  img_proj_.adopt(params);
  if (learnable_tau_) params.push_back(log_inv_tau_);
  return params;
}

double ClipModel::temperature() const {
  return std::exp(-log_inv_tau_.var.value().item());
}

void ClipModel::clamp_temperature() {
  double& t = log_inv_tau_.var.mutable_value().raw()[0];
  t = std::clamp(t, std::log(1.0), std::log(1000.0));  // tau in [1e-3, 1]
}

void ClipModel::save(const std::filesystem::path& path, const nlohmann::json& provenance) const {
  nlohmann::json config;
  config["type"] = "eegclip";
  config["encoder"] = encoder_->config().to_json();
  config["projection_dim"] = projection_dim_;
  config["image_feature_dim"] = image_feature_dim_;
  config["learnable_temperature"] = learnable_tau_;
  config["provenance"] = provenance;
  std::vector<Param> params = encoder_->params();
  params.push_back(eeg_proj_.W);
  params.push_back(eeg_proj_.b);
  params.push_back(img_proj_.W);
  params.push_back(img_proj_.b);
  params.push_back(log_inv_tau_);
  save_checkpoint(path, config, params);
}

ClipModel ClipModel::load(const std::filesystem::path& path, nlohmann::json* provenance) {
  Checkpoint ckpt = load_checkpoint(path);
  if (ckpt.config.value("type", "") != "eegclip")
    throw DataError("checkpoint is not an EEGClip model: " + path.string());
  ClipConfig config;
  config.projection_dim = ckpt.config.at("projection_dim").get<int>();
  config.learnable_temperature = ckpt.config.value("learnable_temperature", true);
  auto encoder = enc::build_encoder(enc::EncoderConfig::from_json(ckpt.config.at("encoder")), 0);
  ClipModel model(std::move(encoder), ckpt.config.at("image_feature_dim").get<int>(), config, 0);
  std::vector<Param> params = model.encoder_->params();
  model.eeg_proj_.adopt(params);
  model.img_proj_.adopt(params);
  params.push_back(model.log_inv_tau_);
  load_into(ckpt, params);
  if (provenance) *provenance = ckpt.config.value("provenance", nlohmann::json::object());
  return model;
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

namespace {

// Partition a shuffled record list into batches whose classes are distinct
// whenever the class count allows it; contrastive targets assume the
// diagonal pair is the only positive in its batch.
std::vector<std::vector<long>> class_distinct_batches(const data::SplitView& view, long batch_size,
                                                      Rng& rng) {
  std::vector<long> order(static_cast<std::size_t>(view.count()));
  std::iota(order.begin(), order.end(), 0);
  rng.shuffle(order);

  std::vector<std::vector<long>> bins;
  std::vector<std::set<int>> bin_classes;
  for (long idx : order) {
    const int label = view.labels[static_cast<std::size_t>(idx)];
    bool placed = false;
    for (std::size_t b = 0; b < bins.size(); ++b) {
      if (static_cast<long>(bins[b].size()) >= batch_size) continue;
      if (bin_classes[b].count(label)) continue;
      bins[b].push_back(idx);
      bin_classes[b].insert(label);
      placed = true;
      break;
    }
    if (!placed) {
      bins.push_back({idx});
      bin_classes.push_back({label});
    }
  }
  // Contrastive loss needs at least two pairs per batch.
  std::vector<std::vector<long>> out;
  std::vector<long> strays;
  for (auto& bin : bins) {
    if (static_cast<long>(bin.size()) >= 2)
      out.push_back(std::move(bin));
    else
      strays.insert(strays.end(), bin.begin(), bin.end());
  }
  for (long s : strays) {
    if (out.empty()) break;
    out.back().push_back(s);
  }
  return out;
}

nn::Tensor gather_signals(const data::SplitView& view, const std::vector<long>& idx) {
  nn::Tensor out({static_cast<long>(idx.size()), view.channels, view.timesteps});
  const long rec = view.channels * view.timesteps;
  for (std::size_t i = 0; i < idx.size(); ++i)
    std::memcpy(out.raw().data() + static_cast<long>(i) * rec,
                view.signals.raw().data() + idx[i] * rec,
                sizeof(double) * static_cast<std::size_t>(rec));
  return out;
}

Eigen::MatrixXd gather_features(const Eigen::MatrixXd& all, const std::vector<long>& idx) {
  Eigen::MatrixXd out(static_cast<long>(idx.size()), all.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) out.row(static_cast<long>(i)) = all.row(idx[i]);
  return out;
}

Eigen::MatrixXd extract_split_features(const enc::ImageFeatureExtractor& extractor,
                                       const data::DatasetManifest& manifest,
                                       const data::SplitView& view) {
  Eigen::MatrixXd features(view.count(), extractor.feature_dim());
  std::vector<img::Image> chunk;
  const long step = 64;
  for (long ofs = 0; ofs < view.count(); ofs += step) {
    chunk.clear();
    const long n = std::min(step, view.count() - ofs);
    for (long i = 0; i < n; ++i) {
      const auto& id = view.image_ids[static_cast<std::size_t>(ofs + i)];
      if (id.empty()) throw DataError("record " + view.record_ids[static_cast<std::size_t>(ofs + i)] +
                                      " has no paired image");
      chunk.push_back(data::load_record_image(manifest, id));
    }
    features.middleRows(ofs, n) = extractor.extract_batch(chunk);
  }
  return features;
}

double batch_top1(const Eigen::MatrixXd& eeg_e, const Eigen::MatrixXd& img_e) {
  const Eigen::MatrixXd sims = eeg_e * img_e.transpose();
  long hits = 0;
  for (long i = 0; i < sims.rows(); ++i) {
    long arg = 0;
    sims.row(i).maxCoeff(&arg);
    if (arg == i) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(sims.rows());
}

}  // namespace

ClipTrainOutput train_clip(ClipModel& model, const enc::ImageFeatureExtractor& extractor,
                           const data::DatasetManifest& manifest, const ClipConfig& config) {
  config.validate();
  if (extractor.feature_dim() != model.image_feature_dim())
    throw ConfigError("extractor feature width does not match the clip model");

  data::SplitView train = data::load_split(manifest, "train");
  std::optional<data::SplitView> val;
  if (manifest.has_split("val") && !manifest.split("val").empty())
    val = data::load_split(manifest, "val");

  ClipTrainOutput out;
  out.dataset_hash = hash_container_hex(manifest.root);
  out.extractor_hash_before = extractor.weights_hash();

  // Image features are frozen; compute them once up front.
  const Eigen::MatrixXd train_feats = extract_split_features(extractor, manifest, train);
  Eigen::MatrixXd val_feats;
  if (val) val_feats = extract_split_features(extractor, manifest, *val);

  auto params = model.trainable_params();
  auto param_list = param_vars(params);
  AdamOptions adam;
  adam.lr = config.learning_rate;
  auto optimizer = make_adam(adam);

  nlohmann::json provenance;
  provenance["dataset_hash"] = out.dataset_hash;
  provenance["extractor_hash"] = out.extractor_hash_before;
  provenance["seed"] = config.seed;

  // One partition per run: epochs revisit the same class-distinct batches,
  // so a frozen model produces a flat loss trace.
  Rng partition_rng = make_rng(config.seed);
  const auto batches = class_distinct_batches(train, config.batch_size, partition_rng);

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    double loss_sum = 0.0;
    long steps = 0;
    for (const auto& idx : batches) {
      Var eeg_e = model.embed_eeg(gather_signals(train, idx));
      Var img_e = model.embed_image_features(Var(Tensor::from_matrix(gather_features(train_feats, idx))));
      Var loss = clip_loss_scaled(eeg_e, img_e, model.log_inv_temperature());
      loss_sum += loss.value().item();
      auto grads = gradients(loss, param_list);
      optimizer->step(params, grads);
      model.clamp_temperature();
      ++steps;
    }

    metric::HistoryRow row;
    row.epoch = epoch;
    row.loss = steps > 0 ? loss_sum / static_cast<double>(steps) : 0.0;
    row.mined_fraction = 1.0;
    if (val) {
      Rng val_rng = make_rng(config.seed + 101);
      const auto val_batches = class_distinct_batches(*val, config.batch_size, val_rng);
      double top1 = 0.0;
      long counted = 0;
      for (const auto& idx : val_batches) {
        const Eigen::MatrixXd eeg_e = model.embed_eeg_inference(gather_signals(*val, idx));
        const Eigen::MatrixXd img_e =
            model.embed_image_features_inference(gather_features(val_feats, idx));
        top1 += batch_top1(eeg_e, img_e) * static_cast<double>(idx.size());
        counted += static_cast<long>(idx.size());
      }
      row.val_metric = counted > 0 ? top1 / static_cast<double>(counted) : 0.0;
    }
    out.history.push_back(row);

    if (!config.checkpoint_dir.empty() && epoch == config.epochs) {
      std::filesystem::create_directories(config.checkpoint_dir);
      model.save(config.checkpoint_dir / "clip_final.ckpt", provenance);
    }
  }

  out.extractor_hash_after = extractor.weights_hash();
  out.final_temperature = model.temperature();
  return out;
}

// ---------------------------------------------------------------------------
// Retrieval
// ---------------------------------------------------------------------------

RetrievalIndex make_index(const Eigen::MatrixXd& gallery, std::vector<std::string> keys) {
  if (gallery.rows() != static_cast<long>(keys.size()))
    throw std::invalid_argument("retrieval index: key/gallery mismatch");
  for (long i = 0; i < gallery.rows(); ++i)
    if (std::abs(gallery.row(i).norm() - 1.0) > 1e-5)
      throw std::invalid_argument("retrieval index rows must be unit-norm");
  return RetrievalIndex{gallery, std::move(keys)};
}

std::vector<Retrieved> retrieve(const RetrievalIndex& index, const Eigen::VectorXd& query, long k) {
  if (index.keys.empty()) throw DataError("retrieve: empty index");
  if (k < 1 || k > static_cast<long>(index.keys.size()))
    throw std::invalid_argument("retrieve: k out of range");
  Eigen::VectorXd q = query;
  const double norm = q.norm();
  if (norm > 1e-12) q /= norm;
  const Eigen::VectorXd sims = index.gallery * q;

  std::vector<long> order(index.keys.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](long a, long b) {
    if (sims(a) != sims(b)) return sims(a) > sims(b);
    return a < b;  // key-order tie break
  });
  std::vector<Retrieved> out;
  out.reserve(static_cast<std::size_t>(k));
  for (long i = 0; i < k; ++i)
    out.push_back({index.keys[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])],
                   sims(order[static_cast<std::size_t>(i)])});
  return out;
}

void save_index(const std::filesystem::path& dir, const RetrievalIndex& index) {
  std::filesystem::create_directories(dir);
  std::ostringstream keys;
  keys << "row,image_id\n";
  for (std::size_t i = 0; i < index.keys.size(); ++i)
    keys << i << ',' << csv_escape_check(index.keys[i]) << '\n';
  write_text_file(dir / "keys.csv", keys.str());

  std::string blob;
  for (long i = 0; i < index.gallery.rows(); ++i)
    for (long j = 0; j < index.gallery.cols(); ++j) {
      const float f = static_cast<float>(index.gallery(i, j));
      char bytes[4];
      std::memcpy(bytes, &f, 4);
      blob.append(bytes, 4);
    }
  write_binary_file(dir / "gallery.f32", blob.data(), blob.size());

  Fnv1a64 h;
  h.update(keys.str());
  h.update(blob.data(), blob.size());
  nlohmann::json meta;
  meta["count"] = index.gallery.rows();
  meta["dim"] = index.gallery.cols();
  meta["hash"] = h.hex();
  write_text_file(dir / "index.json", meta.dump(2) + "\n");
}

RetrievalIndex load_index(const std::filesystem::path& dir) {
  const auto meta = nlohmann::json::parse(read_text_file(dir / "index.json"));
  const long count = meta.at("count").get<long>();
  const long dim = meta.at("dim").get<long>();

  const std::string keys_text = read_text_file(dir / "keys.csv");
  const auto blob = read_binary_file(dir / "gallery.f32");
  Fnv1a64 h;
  h.update(keys_text);
  h.update(blob.data(), blob.size());
  if (h.hex() != meta.at("hash").get<std::string>())
    throw DataError("retrieval index hash mismatch: " + dir.string());

  if (static_cast<long>(blob.size()) != count * dim * 4)
    throw DataError("retrieval index blob size mismatch");
  Eigen::MatrixXd gallery(count, dim);
  for (long i = 0; i < count; ++i)
    for (long j = 0; j < dim; ++j) {
      float f;
      std::memcpy(&f, blob.data() + (i * dim + j) * 4, 4);
      gallery(i, j) = static_cast<double>(f);
    }
  // Stored as float32; re-normalize to keep the unit-row invariant exact.
  for (long i = 0; i < count; ++i) gallery.row(i) /= std::max(gallery.row(i).norm(), 1e-12);

  std::vector<std::string> keys;
  std::istringstream keys_in(keys_text);
  std::string line;
  std::getline(keys_in, line);
  while (std::getline(keys_in, line)) {
    if (line.empty()) continue;
    const auto fields = split_csv_line(line);
    if (fields.size() != 2) throw DataError("bad keys.csv row: " + line);
    keys.push_back(fields[1]);
  }
  return make_index(gallery, std::move(keys));
}

void write_ranked_csv(const std::filesystem::path& path,
                      const std::vector<std::pair<std::string, std::vector<Retrieved>>>& results) {
  std::ostringstream out;
  out << "query_id,rank,image_id,similarity\n";
  for (const auto& [query, hits] : results)
    for (std::size_t r = 0; r < hits.size(); ++r)
      out << csv_escape_check(query) << ',' << (r + 1) << ',' << csv_escape_check(hits[r].key)
          << ',' << format_double(hits[r].similarity) << '\n';
  write_text_file(path, out.str());
}

}  // namespace eegpack::clip
