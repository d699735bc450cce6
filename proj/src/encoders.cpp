#include "eegpack/encoders.hpp"

#include <cmath>

namespace eegpack::enc {

using namespace eegpack::nn;

EncoderKind encoder_kind_from_string(const std::string& s) {
  if (s == "lstm") return EncoderKind::lstm;
  if (s == "cnn") return EncoderKind::cnn;
  throw ConfigError("unknown encoder kind: " + s);
}

std::string to_string(EncoderKind k) { return k == EncoderKind::lstm ? "lstm" : "cnn"; }

nlohmann::json EncoderConfig::to_json() const {
  nlohmann::json j;
  j["kind"] = enc::to_string(kind);
  j["input_channels"] = input_channels;
  j["input_timesteps"] = input_timesteps;
  j["embed_dim"] = embed_dim;
  j["lstm_layers"] = lstm_layers;
  j["lstm_hidden"] = lstm_hidden;
  j["cnn_channel_widths"] = cnn_channel_widths;
  j["cnn_kernel"] = cnn_kernel;
  j["cnn_stride"] = cnn_stride;
  j["normalize_output"] = normalize_output;
  return j;
}

EncoderConfig EncoderConfig::from_json(const nlohmann::json& j) {
  EncoderConfig c;
  c.kind = encoder_kind_from_string(j.at("kind").get<std::string>());
  c.input_channels = j.at("input_channels").get<int>();
  c.input_timesteps = j.at("input_timesteps").get<int>();
  c.embed_dim = j.at("embed_dim").get<int>();
  c.lstm_layers = j.value("lstm_layers", 2);
  c.lstm_hidden = j.value("lstm_hidden", 128);
  c.cnn_channel_widths = j.value("cnn_channel_widths", std::vector<int>{32, 64, 128, 256});
  c.cnn_kernel = j.value("cnn_kernel", 3);
  c.cnn_stride = j.value("cnn_stride", 2);
  c.normalize_output = j.value("normalize_output", true);
  return c;
}

void validate_config(const EncoderConfig& config) {
  if (config.input_channels <= 0 || config.input_timesteps <= 0)
    throw ConfigError("encoder input geometry must be positive");
  if (config.embed_dim <= 0) throw ConfigError("embed_dim must be positive");
  if (config.kind == EncoderKind::lstm) {
    if (config.lstm_layers <= 0 || config.lstm_hidden <= 0)
      throw ConfigError("lstm_layers and lstm_hidden must be positive");
  } else {
    if (config.cnn_channel_widths.empty()) throw ConfigError("cnn needs channel widths");
    if (config.cnn_kernel <= 0 || config.cnn_stride <= 0)
      throw ConfigError("cnn kernel/stride must be positive");
    long length = config.input_timesteps;
    for (std::size_t i = 0; i < config.cnn_channel_widths.size(); ++i) {
      if (config.cnn_channel_widths[i] <= 0) throw ConfigError("cnn widths must be positive");
      length = conv1d_out_len(length, config.cnn_kernel, config.cnn_stride);
      if (length < 1)
        throw ConfigError("cnn block " + std::to_string(i) +
                          " collapses the temporal axis below 1 sample for N=" +
                          std::to_string(config.input_timesteps));
    }
  }
}

namespace {

class LstmEncoder final : public Encoder {
 public:
  LstmEncoder(const EncoderConfig& config, std::uint64_t seed) {
    config_ = config;
    Rng rng = make_rng(seed);
    stack_ = LstmStack("lstm", config.input_channels, config.lstm_hidden, config.lstm_layers, rng);
    proj_ = Dense("proj", config.lstm_hidden, config.embed_dim, rng);
    stack_.collect(params_);
    proj_.collect(params_);
  }

  Var encode(const Tensor& signals_bcn) const override {
    check_geometry(signals_bcn);
    Var h = stack_.forward(signals_bcn);
    Var e = proj_.forward(h);
    return config_.normalize_output ? row_l2_normalize(e) : e;
  }

 private:
  void check_geometry(const Tensor& s) const {
    if (s.rank() != 3 || s.dim(1) != config_.input_channels || s.dim(2) != config_.input_timesteps)
      throw DataError("signal geometry does not match encoder config");
  }
  LstmStack stack_;
  Dense proj_;
};

class CnnEncoder final : public Encoder {
 public:
  CnnEncoder(const EncoderConfig& config, std::uint64_t seed) {
    config_ = config;
    Rng rng = make_rng(seed);
    long in_w = config.input_channels;
    const long k = config.cnn_kernel;
    for (std::size_t i = 0; i < config.cnn_channel_widths.size(); ++i) {
      const long out_w = config.cnn_channel_widths[i];
      const std::string prefix = "conv." + std::to_string(i);
      Param kernel{prefix + ".K",
                   Var(glorot_uniform(rng, in_w * k, out_w, {in_w * k, out_w}), true)};
      Param bias{prefix + ".b",
                 Var(uniform_init(rng, 1.0 / std::sqrt(static_cast<double>(in_w * k)), {out_w}), true)};
      kernels_.push_back(kernel);
      biases_.push_back(bias);
      params_.push_back(kernel);
      params_.push_back(bias);
      in_w = out_w;
    }
    proj_ = Dense("proj", in_w, config.embed_dim, rng);
    proj_.collect(params_);
  }

  Var encode(const Tensor& signals_bcn) const override {
    if (signals_bcn.rank() != 3 || signals_bcn.dim(1) != config_.input_channels ||
        signals_bcn.dim(2) != config_.input_timesteps)
      throw DataError("signal geometry does not match encoder config");
    const long B = signals_bcn.dim(0);
    long L = signals_bcn.dim(2);
    Var rows = bcn_to_bnc(Var(signals_bcn));  // {B*N, C}
    for (std::size_t i = 0; i < kernels_.size(); ++i) {
      rows = conv1d(rows, B, L, kernels_[i].var, biases_[i].var, config_.cnn_kernel,
                    config_.cnn_stride);
      rows = leaky_relu(rows, 0.1);
      L = conv1d_out_len(L, config_.cnn_kernel, config_.cnn_stride);
    }
    Var pooled = global_avg_pool_rows(rows, B, L);
    Var e = proj_.forward(pooled);
    return config_.normalize_output ? row_l2_normalize(e) : e;
  }

 private:
  std::vector<Param> kernels_, biases_;
  Dense proj_;
};

}  // namespace

std::unique_ptr<Encoder> build_encoder(const EncoderConfig& config, std::uint64_t seed) {
  validate_config(config);
  if (config.kind == EncoderKind::lstm) return std::make_unique<LstmEncoder>(config, seed);
  return std::make_unique<CnnEncoder>(config, seed);
}

Eigen::MatrixXd Encoder::encode_inference(const Tensor& signals_bcn) const {
  NoGradGuard ng;
  return encode(signals_bcn).value().to_matrix();
}

// ---------------------------------------------------------------------------
// Classifier head
// ---------------------------------------------------------------------------

ClassifierHead::ClassifierHead(long embed_dim, long num_classes) {
  Rng rng = make_rng(0);
  dense_ = Dense("head", embed_dim, num_classes, rng, /*zero_init=*/true);
  dense_.collect(params_);
}

Var classify(const Encoder& encoder, const ClassifierHead& head, const Tensor& signals_bcn) {
  if (head.params()[0].var.value().dim(0) != encoder.config().embed_dim)
    throw ConfigError("classifier head does not match encoder embedding width");
  return softmax_rows(head.logits(encoder.encode(signals_bcn)));
}

// ---------------------------------------------------------------------------
// Image feature extractors
// ---------------------------------------------------------------------------

Eigen::MatrixXd ImageFeatureExtractor::extract_batch(const std::vector<img::Image>& images) const {
  Eigen::MatrixXd out(static_cast<long>(images.size()), feature_dim());
  for (std::size_t i = 0; i < images.size(); ++i) out.row(static_cast<long>(i)) = extract(images[i]);
  return out;
}

ConvBackboneExtractor::ConvBackboneExtractor(int image_size, int feature_dim, std::uint64_t seed,
                                             std::vector<int> widths)
    : image_size_(image_size), feature_dim_(feature_dim), seed_(seed), widths_(std::move(widths)) {
  if ((image_size & (image_size - 1)) != 0 || image_size < 8)
    throw ConfigError("extractor image size must be a power of two >= 8");
  Rng rng = make_rng(seed);
  long in_c = 3;
  long res = image_size;
  for (std::size_t i = 0; i < widths_.size(); ++i) {
    const long out_c = widths_[i];
    params_.push_back({"bk." + std::to_string(i) + ".K",
                       Var(glorot_uniform(rng, in_c * 9, out_c, {in_c * 9, out_c}), true)});
    params_.push_back(
        {"bk." + std::to_string(i) + ".b",
         Var(uniform_init(rng, 1.0 / std::sqrt(static_cast<double>(in_c * 9)), {out_c}), true)});
    in_c = out_c;
    res /= 2;
    if (res < 2) throw ConfigError("extractor has too many stages for its input size");
  }
  params_.push_back({"bk.out.W", Var(glorot_uniform(rng, in_c, feature_dim, {in_c, feature_dim}), true)});
  params_.push_back({"bk.out.b", Var(Tensor::zeros({feature_dim}), true)});
  // Weights live in float32 space so a checkpoint round trip reproduces the
  // same features bit for bit.
  for (auto& p : params_) {
    auto& raw = p.var.mutable_value().raw();
    for (long i = 0; i < raw.size(); ++i) raw[i] = static_cast<double>(static_cast<float>(raw[i]));
  }
}

Eigen::MatrixXd ConvBackboneExtractor::extract_batch(const std::vector<img::Image>& images) const {
  NoGradGuard ng;
  for (const auto& im : images)
    if (im.height != image_size_ || im.width != image_size_)
      throw DataError("extractor expects " + std::to_string(image_size_) + "px square images");
  const long B = static_cast<long>(images.size());
  Var rows(img::images_to_rows(images));
  long res = image_size_;
  for (std::size_t i = 0; i < widths_.size(); ++i) {
    rows = conv2d(rows, B, res, res, params_[2 * i].var, params_[2 * i + 1].var, 3, 2, 1);
    rows = leaky_relu(rows, 0.1);
    res /= 2;
  }
  Var pooled = global_avg_pool_rows(rows, B, res * res);
  Var feats = add_rowvec(matmul(pooled, params_[params_.size() - 2].var), params_.back().var);
  return feats.value().to_matrix();
}

Eigen::VectorXd ConvBackboneExtractor::extract(const img::Image& image) const {
  return extract_batch({image}).row(0);
}

std::string ConvBackboneExtractor::weights_hash() const { return params_hash(params_); }

void ConvBackboneExtractor::save(const std::filesystem::path& path) const {
  nlohmann::json config;
  config["type"] = "conv_backbone";
  config["image_size"] = image_size_;
  config["feature_dim"] = feature_dim_;
  config["seed"] = seed_;
  config["widths"] = widths_;
  save_checkpoint(path, config, params_);
}

std::unique_ptr<ConvBackboneExtractor> load_extractor(const std::filesystem::path& checkpoint) {
  Checkpoint ckpt = load_checkpoint(checkpoint);
  if (ckpt.config.value("type", "") != "conv_backbone")
    throw DataError("checkpoint is not an image backbone: " + checkpoint.string());
  auto extractor = std::make_unique<ConvBackboneExtractor>(
      ckpt.config.at("image_size").get<int>(), ckpt.config.at("feature_dim").get<int>(),
      ckpt.config.at("seed").get<std::uint64_t>(),
      ckpt.config.at("widths").get<std::vector<int>>());
  load_into(ckpt, extractor->mutable_params());
  return extractor;
}

// ---------------------------------------------------------------------------
// Encoder checkpointing
// ---------------------------------------------------------------------------

void save_encoder(const std::filesystem::path& path, const Encoder& encoder,
                  const nlohmann::json& provenance) {
  nlohmann::json config;
  config["type"] = "eeg_encoder";
  config["encoder"] = encoder.config().to_json();
  config["provenance"] = provenance;
  save_checkpoint(path, config, encoder.params());
}

std::unique_ptr<Encoder> load_encoder(const std::filesystem::path& path,
                                      nlohmann::json* provenance) {
  Checkpoint ckpt = load_checkpoint(path);
  if (ckpt.config.value("type", "") != "eeg_encoder")
    throw DataError("checkpoint is not an EEG encoder: " + path.string());
  EncoderConfig config = EncoderConfig::from_json(ckpt.config.at("encoder"));
  auto encoder = build_encoder(config, /*seed=*/0);
  load_into(ckpt, encoder->params());
  if (provenance) *provenance = ckpt.config.value("provenance", nlohmann::json::object());
  return encoder;
}

}  // namespace eegpack::enc
