#pragma once
// EEG feature encoders (recurrent and convolutional), the classification
// head, and frozen image feature extractors.

#include <memory>
#include <nlohmann/json.hpp>

#include "eegpack/checkpoint.hpp"
#include "eegpack/image.hpp"
#include "eegpack/nn.hpp"

namespace eegpack::enc {

enum class EncoderKind { lstm, cnn };

EncoderKind encoder_kind_from_string(const std::string& s);
std::string to_string(EncoderKind k);

struct EncoderConfig {
  EncoderKind kind = EncoderKind::lstm;
  int input_channels = 0;
  int input_timesteps = 0;
  int embed_dim = 128;
  int lstm_layers = 2;
  int lstm_hidden = 128;
  std::vector<int> cnn_channel_widths = {32, 64, 128, 256};
  int cnn_kernel = 3;
  int cnn_stride = 2;
  bool normalize_output = true;

  nlohmann::json to_json() const;
  static EncoderConfig from_json(const nlohmann::json& j);
};

// Throws ConfigError on invalid geometry (e.g. a convolution schedule that
// collapses the temporal axis below one sample).
void validate_config(const EncoderConfig& config);

class Encoder {
 public:
  virtual ~Encoder() = default;

  // {B,C,N} signals -> {B,embed_dim} embedding batch (graph-recording).
  virtual nn::Var encode(const nn::Tensor& signals_bcn) const = 0;

  std::vector<nn::Param>& params() { return params_; }
  const std::vector<nn::Param>& params() const { return params_; }
  const EncoderConfig& config() const { return config_; }

  // Inference-mode encoding; no graph, safe for concurrent callers.
  Eigen::MatrixXd encode_inference(const nn::Tensor& signals_bcn) const;

 protected:
  EncoderConfig config_;
  std::vector<nn::Param> params_;
};

std::unique_ptr<Encoder> build_encoder(const EncoderConfig& config, std::uint64_t seed);

// Linear softmax head. Zero-initialized: an untrained head yields exactly
// uniform class probabilities.
class ClassifierHead {
 public:
  ClassifierHead() = default;
  ClassifierHead(long embed_dim, long num_classes);

  nn::Var logits(const nn::Var& embeddings) const { return dense_.forward(embeddings); }
  long num_classes() const { return dense_.b.var.value().size(); }
  std::vector<nn::Param>& params() { return params_; }
  const std::vector<nn::Param>& params() const { return params_; }

 private:
  nn::Dense dense_;
  std::vector<nn::Param> params_;
};

// Class-probability rows (each row sums to one).
nn::Var classify(const Encoder& encoder, const ClassifierHead& head,
                 const nn::Tensor& signals_bcn);

// ---------------------------------------------------------------------------
// Frozen image feature extractors
// ---------------------------------------------------------------------------
class ImageFeatureExtractor {
 public:
  virtual ~ImageFeatureExtractor() = default;
  virtual int feature_dim() const = 0;
  virtual Eigen::VectorXd extract(const img::Image& image) const = 0;
  virtual Eigen::MatrixXd extract_batch(const std::vector<img::Image>& images) const;
  // Hash of the (read-only) weights; lets callers assert the freeze contract.
  virtual std::string weights_hash() const = 0;
};

// Small convolutional backbone with deterministic seeded weights. Never
// trained inside this toolkit; serves as the built-in desk-scale extractor
// and as the load target for externally supplied backbone checkpoints.
class ConvBackboneExtractor final : public ImageFeatureExtractor {
 public:
  ConvBackboneExtractor(int image_size, int feature_dim, std::uint64_t seed,
                        std::vector<int> widths = {8, 16, 32});

  int feature_dim() const override { return feature_dim_; }
  Eigen::VectorXd extract(const img::Image& image) const override;
  Eigen::MatrixXd extract_batch(const std::vector<img::Image>& images) const override;
  std::string weights_hash() const override;

  int image_size() const { return image_size_; }
  const std::vector<nn::Param>& params() const { return params_; }
  std::vector<nn::Param>& mutable_params() { return params_; }

  void save(const std::filesystem::path& path) const;

 private:
  int image_size_;
  int feature_dim_;
  std::uint64_t seed_;
  std::vector<int> widths_;
  std::vector<nn::Param> params_;
};

std::unique_ptr<ConvBackboneExtractor> load_extractor(const std::filesystem::path& checkpoint);

// ---------------------------------------------------------------------------
// Encoder checkpointing. `provenance` travels with the archive (dataset
// hashes, training regime, class coverage) and is surfaced on load.
// ---------------------------------------------------------------------------
void save_encoder(const std::filesystem::path& path, const Encoder& encoder,
                  const nlohmann::json& provenance);
std::unique_ptr<Encoder> load_encoder(const std::filesystem::path& path,
                                      nlohmann::json* provenance = nullptr);

}  // namespace eegpack::enc
