#pragma once
// Joint EEG-image embedding: frozen image extractor, trainable EEG encoder
// and projection heads under a symmetric contrastive objective, plus the
// retrieval index.

#include "eegpack/data.hpp"
#include "eegpack/encoders.hpp"
#include "eegpack/metric.hpp"

namespace eegpack::clip {

struct ClipConfig {
  double temperature = 0.07;  // initial; clamped to [1e-3, 1] when learnable
  bool learnable_temperature = true;
  int projection_dim = 128;
  int epochs = 50;
  long batch_size = 32;
  double learning_rate = 1e-3;
  std::uint64_t seed = 0;
  std::filesystem::path checkpoint_dir;

  void validate() const;
};

// Symmetric cross-entropy over the cosine-similarity matrix with diagonal
// targets. Inputs must be row-unit-normalized, B >= 2.
nn::Var clip_loss(const nn::Var& eeg_embeds, const nn::Var& img_embeds, double temperature);
// Trainer form with a learnable inverse-temperature variable.
nn::Var clip_loss_scaled(const nn::Var& eeg_embeds, const nn::Var& img_embeds,
                         const nn::Var& log_inv_temperature);

// EEG encoder + both projection heads + temperature, as one trainable unit.
class ClipModel {
 public:
  ClipModel(std::unique_ptr<enc::Encoder> encoder, int image_feature_dim, const ClipConfig& config,
            std::uint64_t seed);

  nn::Var embed_eeg(const nn::Tensor& signals_bcn) const;
  nn::Var embed_image_features(const nn::Var& features) const;
  Eigen::MatrixXd embed_eeg_inference(const nn::Tensor& signals_bcn) const;
  Eigen::MatrixXd embed_image_features_inference(const Eigen::MatrixXd& features) const;

  std::vector<nn::Param> trainable_params();
  nn::Var& log_inv_temperature() { return log_inv_tau_.var; }
  double temperature() const;
  void clamp_temperature();

  enc::Encoder& encoder() { return *encoder_; }
  const enc::Encoder& encoder() const { return *encoder_; }
  int projection_dim() const { return projection_dim_; }
  int image_feature_dim() const { return image_feature_dim_; }

  void save(const std::filesystem::path& path, const nlohmann::json& provenance) const;
  static ClipModel load(const std::filesystem::path& path, nlohmann::json* provenance = nullptr);

 private:
  std::unique_ptr<enc::Encoder> encoder_;
  nn::Dense eeg_proj_, img_proj_;
  nn::Param log_inv_tau_;
  int projection_dim_ = 0;
  int image_feature_dim_ = 0;
  bool learnable_tau_ = true;
};

struct ClipTrainOutput {
  std::vector<metric::HistoryRow> history;  // loss + per-epoch val top-1 retrieval
  std::string extractor_hash_before;
  std::string extractor_hash_after;
  std::string dataset_hash;
  double final_temperature = 0.0;
};

// Only the EEG side (and projections) train; the extractor stays read-only
// and its weight hash is recorded before and after as proof.
ClipTrainOutput train_clip(ClipModel& model, const enc::ImageFeatureExtractor& extractor,
                           const data::DatasetManifest& manifest, const ClipConfig& config);

// ---------------------------------------------------------------------------
// Retrieval
// ---------------------------------------------------------------------------

struct RetrievalIndex {
  Eigen::MatrixXd gallery;        // unit-norm rows
  std::vector<std::string> keys;  // image ids aligned with gallery rows
};

RetrievalIndex make_index(const Eigen::MatrixXd& gallery, std::vector<std::string> keys);

struct Retrieved {
  std::string key;
  double similarity = 0.0;
};

// Descending cosine similarity, ties broken by key order.
std::vector<Retrieved> retrieve(const RetrievalIndex& index, const Eigen::VectorXd& query, long k);

void save_index(const std::filesystem::path& dir, const RetrievalIndex& index);
RetrievalIndex load_index(const std::filesystem::path& dir);

// results CSV: query_id,rank,image_id,similarity
void write_ranked_csv(const std::filesystem::path& path,
                      const std::vector<std::pair<std::string, std::vector<Retrieved>>>& results);

}  // namespace eegpack::clip
