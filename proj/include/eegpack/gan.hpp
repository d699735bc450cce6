#pragma once
// EEG-feature-conditioned image synthesis at desk scale: compact conditional
// generator/discriminator pair, adaptive discriminator augmentation, one-hot
// conditioning ablation and the image-to-EEG translation pipeline.

#include "eegpack/clip.hpp"
#include "eegpack/data.hpp"
#include "eegpack/encoders.hpp"

namespace eegpack::gan {

// ---------------------------------------------------------------------------
// Config / state
// ---------------------------------------------------------------------------

enum class ConditionMode { eeg_feature, one_hot };

ConditionMode condition_mode_from_string(const std::string& s);
std::string to_string(ConditionMode m);

struct AdaState {
  double p = 0.0;                 // augmentation probability, clamped to [0,1]
  double overfit_estimate = 0.0;  // r, mean sign of real-image scores
  double target = 0.6;
  double adjustment_step = 1e-4;
};

// r = mean(sign(outputs)); p <- clamp(p + step * sign(r - target), 0, 1).
AdaState ada_update(AdaState state, const Eigen::VectorXd& real_score_batch);

struct GanConfig {
  int image_size = 32;  // power of two >= 8
  ConditionMode condition_mode = ConditionMode::eeg_feature;
  int noise_dim = 64;
  long steps = 2000;
  long batch_size = 16;
  double lr_g = 2e-4;
  double lr_d = 2e-4;
  bool ada_enabled = true;
  double ada_target = 0.6;
  double ada_step = 1e-4;
  double r1_gamma = 1.0;
  int r1_interval = 4;       // lazy regularization; penalty scaled by the interval
  int base_channels = 64;    // width at the 4x4 root
  long eval_interval = 250;  // FID-vs-step cadence; 0 disables
  long eval_slice = 96;
  std::uint64_t seed = 0;

  void validate() const;
};

// ---------------------------------------------------------------------------
// Networks
// ---------------------------------------------------------------------------

// condition (+) noise -> dense 4x4 root -> nearest-upsample conv stages ->
// RGB conv -> tanh. Activations travel as {B*H*W, 3} rows.
class Generator {
 public:
  Generator(int image_size, int condition_dim, int noise_dim, int base_channels,
            std::uint64_t seed);

  nn::Var forward(const nn::Var& condition, const nn::Var& noise) const;  // {B*H*W, 3}
  std::vector<nn::Param>& params() { return params_; }
  const std::vector<nn::Param>& params() const { return params_; }

  int image_size() const { return image_size_; }
  int condition_dim() const { return condition_dim_; }
  int noise_dim() const { return noise_dim_; }

  void save(const std::filesystem::path& path, const nlohmann::json& provenance) const;
  static Generator load(const std::filesystem::path& path, nlohmann::json* provenance = nullptr);

 private:
  int image_size_, condition_dim_, noise_dim_, base_channels_;
  std::uint64_t seed_;
  nn::Dense root_;
  struct Stage {
    nn::Param kernel, bias;
    long in_c, out_c;
  };
  std::vector<Stage> stages_;
  nn::Param rgb_kernel_, rgb_bias_;
  std::vector<nn::Param> params_;
};

// Mirrored conv stack with projection conditioning on the pooled features.
class Discriminator {
 public:
  Discriminator(int image_size, int condition_dim, int base_channels, std::uint64_t seed);

  // Returns per-sample scores {B}.
  nn::Var forward(const nn::Var& image_rows, const nn::Var& condition, long batch) const;
  std::vector<nn::Param>& params() { return params_; }
  const std::vector<nn::Param>& params() const { return params_; }

 private:
  int image_size_, condition_dim_, base_channels_;
  nn::Param in_kernel_, in_bias_;
  struct Stage {
    nn::Param kernel, bias;
    long in_c, out_c;
  };
  std::vector<Stage> stages_;
  nn::Dense score_;
  nn::Dense cond_proj_;
  std::vector<nn::Param> params_;
};

// ---------------------------------------------------------------------------
// Synthesis
// ---------------------------------------------------------------------------

struct LatentInput {
  Eigen::VectorXd condition;  // EEG feature vector or one-hot class code
  Eigen::VectorXd noise;      // isotropic standard Gaussian draw
};

// Deterministic for fixed (weights, input); output {3,H,W} in [-1,1].
nn::Tensor synthesize(const Generator& generator, const LatentInput& input);

// ---------------------------------------------------------------------------
// Augmentation pipeline (flip / integer translate / colour jitter), each
// applied independently with probability p. All transforms are linear or
// affine in the pixels, so gradients pass through exactly.
// ---------------------------------------------------------------------------

struct AugmentationDraw {
  bool flip = false;
  long dx = 0, dy = 0;
  bool jitter = false;
  double channel_scale[3] = {1.0, 1.0, 1.0};
  double channel_shift[3] = {0.0, 0.0, 0.0};
};

std::vector<AugmentationDraw> draw_augmentations(long batch, int image_size, double p, Rng& rng);
nn::Var apply_augmentations(const nn::Var& image_rows, long batch, int image_size,
                            const std::vector<AugmentationDraw>& draws);

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct GanHistoryRow {
  long step = 0;
  double g_loss = 0.0;
  double d_loss = 0.0;
  double ada_p = 0.0;
  double fid_eval = -1.0;  // -1 marks steps without an evaluation
};

struct GanTrainOutput {
  std::vector<GanHistoryRow> history;
  double fid_initial = 0.0;
  double fid_final = 0.0;
  double ada_p_min = 0.0;
  double ada_p_max = 0.0;
  std::string dataset_hash;
};

// CSV columns: step,g_loss,d_loss,ada_p,fid_eval (fid blank when unmeasured).
void write_gan_history_csv(const std::filesystem::path& path,
                           const std::vector<GanHistoryRow>& rows);

// Trains on the manifest's paired images. In eeg_feature mode `encoder`
// provides frozen 128-D conditions (random same-class pairing per sample);
// in one_hot mode labels condition directly and `encoder` may be null.
GanTrainOutput train_gan(const data::DatasetManifest& manifest, const enc::Encoder* encoder,
                         const GanConfig& config, Generator& generator,
                         const std::filesystem::path& checkpoint_dir = {});

// Builds a generator whose condition width matches the mode.
Generator make_generator(const data::DatasetManifest& manifest, const enc::Encoder* encoder,
                         const GanConfig& config);

// ---------------------------------------------------------------------------
// Image -> EEG translation
// ---------------------------------------------------------------------------

struct Translator {
  Eigen::MatrixXd weights;  // {feature_dim + 1, eeg_dim}; last row is the bias
  bool renormalize = false;

  Eigen::MatrixXd apply(const Eigen::MatrixXd& image_features) const;
  void save(const std::filesystem::path& path, const nlohmann::json& provenance) const;
  static Translator load(const std::filesystem::path& path);
};

// Ridge least squares from image-feature rows to EEG-feature rows.
Translator fit_linear_map(const Eigen::MatrixXd& image_features, const Eigen::MatrixXd& eeg_features,
                          double ridge, bool renormalize);

struct TranslatorFit {
  Translator translator;
  double train_mse = 0.0;
  double val_mse = 0.0;
};

// Fits on the train split's pairs; reports held-out MSE on val (or test).
TranslatorFit fit_image_to_eeg(const enc::ImageFeatureExtractor& extractor,
                               const enc::Encoder& encoder, const data::DatasetManifest& manifest,
                               double ridge = 1e-8);

}  // namespace eegpack::gan
