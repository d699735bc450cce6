#include "eegpack/gan.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <sstream>

#include "eegpack/eval.hpp"

namespace eegpack::gan {

using namespace eegpack::nn;

ConditionMode condition_mode_from_string(const std::string& s) {
  if (s == "eeg" || s == "eeg_feature") return ConditionMode::eeg_feature;
  if (s == "one-hot" || s == "one_hot") return ConditionMode::one_hot;
  throw ConfigError("unknown condition mode: " + s);
}

std::string to_string(ConditionMode m) {
  return m == ConditionMode::eeg_feature ? "eeg_feature" : "one_hot";
}

void GanConfig::validate() const {
  if (image_size < 8 || (image_size & (image_size - 1)) != 0)
    throw ConfigError("image_size must be a power of two >= 8");
  if (noise_dim <= 0 || steps <= 0 || batch_size < 2)
    throw ConfigError("noise_dim, steps and batch_size (>= 2) must be positive");
  if (lr_g < 0.0 || lr_d < 0.0) throw ConfigError("learning rates must be >= 0");
  if (r1_interval < 1) throw ConfigError("r1_interval must be >= 1");
  if (base_channels < 8) throw ConfigError("base_channels must be >= 8");
}

AdaState ada_update(AdaState state, const Eigen::VectorXd& real_score_batch) {
  if (real_score_batch.size() == 0) throw std::invalid_argument("ada_update: empty score batch");
  double r = 0.0;
  for (long i = 0; i < real_score_batch.size(); ++i) {
    const double v = real_score_batch(i);
    r += (v > 0.0) ? 1.0 : (v < 0.0 ? -1.0 : 0.0);
  }
  r /= static_cast<double>(real_score_batch.size());
  state.overfit_estimate = r;
  const double direction = (r > state.target) ? 1.0 : (r < state.target ? -1.0 : 0.0);
  state.p = std::clamp(state.p + state.adjustment_step * direction, 0.0, 1.0);
  return state;
}

// ---------------------------------------------------------------------------
// Generator
// ---------------------------------------------------------------------------

Generator::Generator(int image_size, int condition_dim, int noise_dim, int base_channels,
                     std::uint64_t seed)
    : image_size_(image_size),
      condition_dim_(condition_dim),
      noise_dim_(noise_dim),
      base_channels_(base_channels),
      seed_(seed) {
  if (image_size < 8 || (image_size & (image_size - 1)) != 0)
    throw ConfigError("generator image size must be a power of two >= 8");
  if (condition_dim <= 0 || noise_dim <= 0) throw ConfigError("generator latent dims must be positive");

  Rng rng = make_rng(seed);
  root_ = Dense("g.root", condition_dim + noise_dim, 16 * base_channels, rng);
  root_.adopt(params_);

  long c = base_channels;
  int res = 4;
  int idx = 0;
  while (res < image_size) {
    Stage stage;
    stage.in_c = c;
    stage.out_c = std::max<long>(8, c / 2);
    const std::string prefix = "g.up" + std::to_string(idx++);
    stage.kernel = Param{prefix + ".K", Var(glorot_uniform(rng, stage.in_c * 9, stage.out_c,
                                                           {stage.in_c * 9, stage.out_c}),
                                            true)};
    stage.bias = Param{prefix + ".b", Var(Tensor::zeros({stage.out_c}), true)};
    params_.push_back(stage.kernel);
    params_.push_back(stage.bias);
    c = stage.out_c;
    res *= 2;
    stages_.push_back(std::move(stage));
  }
  rgb_kernel_ = Param{"g.rgb.K", Var(glorot_uniform(rng, c * 9, 3, {c * 9, 3}), true)};
  rgb_bias_ = Param{"g.rgb.b", Var(Tensor::zeros({3}), true)};
  params_.push_back(rgb_kernel_);
  params_.push_back(rgb_bias_);
}

Var Generator::forward(const Var& condition, const Var& noise) const {
  if (condition.value().cols() != condition_dim_ || noise.value().cols() != noise_dim_)
    throw DataError("generator latent dimensions do not match its config");
  if (condition.value().rows() != noise.value().rows())
    throw DataError("generator condition/noise batch mismatch");
  const long B = condition.value().rows();

  Var latent = concat_cols({condition, noise});
  Var rows = reshape(leaky_relu(root_.forward(latent), 0.2), {B * 16, static_cast<long>(base_channels_)});
  long res = 4;
  for (const auto& stage : stages_) {
    rows = upsample2x(rows, B, res, res);
    res *= 2;
    rows = leaky_relu(conv2d(rows, B, res, res, stage.kernel.var, stage.bias.var, 3, 1, 1), 0.2);
  }
  return tanh_op(conv2d(rows, B, res, res, rgb_kernel_.var, rgb_bias_.var, 3, 1, 1));
}

void Generator::save(const std::filesystem::path& path, const nlohmann::json& provenance) const {
  nlohmann::json config;
  config["type"] = "generator";
  config["image_size"] = image_size_;
  config["condition_dim"] = condition_dim_;
  config["noise_dim"] = noise_dim_;
  config["base_channels"] = base_channels_;
  config["seed"] = seed_;
  config["provenance"] = provenance;
  save_checkpoint(path, config, params_);
}

Generator Generator::load(const std::filesystem::path& path, nlohmann::json* provenance) {
  Checkpoint ckpt = load_checkpoint(path);
  if (ckpt.config.value("type", "") != "generator")
    throw DataError("checkpoint is not a generator: " + path.string());
  Generator g(ckpt.config.at("image_size").get<int>(), ckpt.config.at("condition_dim").get<int>(),
              ckpt.config.at("noise_dim").get<int>(), ckpt.config.at("base_channels").get<int>(),
              ckpt.config.at("seed").get<std::uint64_t>());
  load_into(ckpt, g.params_);
  if (provenance) *provenance = ckpt.config.value("provenance", nlohmann::json::object());
  return g;
}

// ---------------------------------------------------------------------------
// Discriminator
// ---------------------------------------------------------------------------

Discriminator::Discriminator(int image_size, int condition_dim, int base_channels,
                             std::uint64_t seed)
    : image_size_(image_size), condition_dim_(condition_dim), base_channels_(base_channels) {
  Rng rng = make_rng(seed);
  long stages_needed = 0;
  for (int r = image_size; r > 4; r /= 2) ++stages_needed;
  long c = base_channels;
  for (long s = 0; s < stages_needed; ++s) c = std::max<long>(8, c / 2);

  in_kernel_ = Param{"d.in.K", Var(glorot_uniform(rng, 3 * 9, c, {3 * 9, c}), true)};
  in_bias_ = Param{"d.in.b", Var(Tensor::zeros({c}), true)};
  params_.push_back(in_kernel_);
  params_.push_back(in_bias_);

  int idx = 0;
  for (int res = image_size; res > 4; res /= 2) {
    Stage stage;
    stage.in_c = c;
    stage.out_c = std::min<long>(base_channels, c * 2);
    const std::string prefix = "d.down" + std::to_string(idx++);
    stage.kernel = Param{prefix + ".K", Var(glorot_uniform(rng, stage.in_c * 9, stage.out_c,
                                                           {stage.in_c * 9, stage.out_c}),
                                            true)};
    stage.bias = Param{prefix + ".b", Var(Tensor::zeros({stage.out_c}), true)};
    params_.push_back(stage.kernel);
    params_.push_back(stage.bias);
    c = stage.out_c;
    stages_.push_back(std::move(stage));
  }
  score_ = Dense("d.score", c, 1, rng);
  score_.adopt(params_);
  cond_proj_ = Dense("d.cond", condition_dim, c, rng);
  cond_proj_.adopt(params_);
}

Var Discriminator::forward(const Var& image_rows, const Var& condition, long batch) const {
  if (condition.value().cols() != condition_dim_)
    throw DataError("discriminator condition width mismatch");
  if (image_rows.value().rows() != batch * image_size_ * image_size_ ||
      image_rows.value().cols() != 3)
    throw DataError("discriminator image geometry mismatch");

  long res = image_size_;
  Var rows = leaky_relu(conv2d(image_rows, batch, res, res, in_kernel_.var, in_bias_.var, 3, 1, 1), 0.2);
  for (const auto& stage : stages_) {
    rows = leaky_relu(conv2d(rows, batch, res, res, stage.kernel.var, stage.bias.var, 3, 2, 1), 0.2);
    res /= 2;
  }
  Var phi = scale(global_avg_pool_rows(rows, batch, res * res), static_cast<double>(res * res));
  Var base = reshape(score_.forward(phi), {batch});
  Var projected = row_sum(mul(phi, cond_proj_.forward(condition)));
  return add(base, scale(projected, 1.0 / std::sqrt(static_cast<double>(phi.value().cols()))));
}

// ---------------------------------------------------------------------------
// Synthesis
// ---------------------------------------------------------------------------

Tensor synthesize(const Generator& generator, const LatentInput& input) {
  if (input.condition.size() != generator.condition_dim())
    throw DataError("latent condition width does not match the generator");
  if (input.noise.size() != generator.noise_dim())
    throw DataError("latent noise width does not match the generator");
  if (!input.condition.allFinite() || !input.noise.allFinite())
    throw DataError("latent input must be finite");
  NoGradGuard ng;
  Tensor cond({1, generator.condition_dim()});
  cond.raw() = input.condition.array();
  Tensor z({1, generator.noise_dim()});
  z.raw() = input.noise.array();
  const Tensor rows = generator.forward(Var(cond), Var(z)).value();

  const long H = generator.image_size(), W = generator.image_size();
  Tensor chw({3, H, W});
  for (long y = 0; y < H; ++y)
    for (long x = 0; x < W; ++x)
      for (long c = 0; c < 3; ++c) chw.raw()[(c * H + y) * W + x] = rows.mat()(y * W + x, c);
  return chw;
}

// ---------------------------------------------------------------------------
// Augmentation
// ---------------------------------------------------------------------------

std::vector<AugmentationDraw> draw_augmentations(long batch, int image_size, double p, Rng& rng) {
  std::vector<AugmentationDraw> draws(static_cast<std::size_t>(batch));
  const long max_shift = image_size / 8;  // integer translate <= 12.5%
  for (auto& d : draws) {
    d.flip = rng.uniform() < p;
    if (rng.uniform() < p) {
      d.dx = static_cast<long>(rng.below(static_cast<std::uint64_t>(2 * max_shift + 1))) - max_shift;
      d.dy = static_cast<long>(rng.below(static_cast<std::uint64_t>(2 * max_shift + 1))) - max_shift;
    }
    d.jitter = rng.uniform() < p;
    for (int c = 0; c < 3; ++c) {
      const double s = std::exp(rng.uniform(-0.2, 0.2));
      const double t = rng.uniform(-0.15, 0.15);
      if (d.jitter) {
        d.channel_scale[c] = s;
        d.channel_shift[c] = t;
      }
    }
  }
  return draws;
}

Var apply_augmentations(const Var& image_rows, long batch, int image_size,
                        const std::vector<AugmentationDraw>& draws) {
  if (static_cast<long>(draws.size()) != batch)
    throw std::invalid_argument("apply_augmentations: draw count mismatch");
  const long H = image_size, W = image_size;
  bool any_geo = false, any_jitter = false;
  for (const auto& d : draws) {
    any_geo = any_geo || d.flip || d.dx != 0 || d.dy != 0;
    any_jitter = any_jitter || d.jitter;
  }
  Var rows = image_rows;
  if (any_geo) {
    std::vector<long> idx(static_cast<std::size_t>(batch * H * W));
    std::size_t r = 0;
    for (long b = 0; b < batch; ++b) {
      const auto& d = draws[static_cast<std::size_t>(b)];
      for (long y = 0; y < H; ++y)
        for (long x = 0; x < W; ++x) {
          long sy = y - d.dy;
          long sx = x - d.dx;
          if (d.flip) sx = W - 1 - sx;
          idx[r++] = (sy < 0 || sy >= H || sx < 0 || sx >= W) ? -1 : (b * H + sy) * W + sx;
        }
    }
    rows = gather_rows(rows, std::move(idx));
  }
  if (any_jitter) {
    Tensor mul_c({batch * H * W, 3});
    Tensor add_c({batch * H * W, 3});
    for (long b = 0; b < batch; ++b) {
      const auto& d = draws[static_cast<std::size_t>(b)];
      for (long i = 0; i < H * W; ++i)
        for (long c = 0; c < 3; ++c) {
          mul_c.mat()(b * H * W + i, c) = d.channel_scale[c];
          add_c.mat()(b * H * W + i, c) = d.channel_shift[c];
        }
    }
    rows = affine_const(rows, mul_c, add_c);
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

void write_gan_history_csv(const std::filesystem::path& path,
                           const std::vector<GanHistoryRow>& rows) {
  std::ostringstream out;
  out << "step,g_loss,d_loss,ada_p,fid_eval\n";
  for (const auto& r : rows) {
    out << r.step << ',' << format_double(r.g_loss) << ',' << format_double(r.d_loss) << ','
        << format_double(r.ada_p) << ',';
    if (r.fid_eval >= 0.0) out << format_double(r.fid_eval);
    out << '\n';
  }
  write_text_file(path, out.str());
}

Generator make_generator(const data::DatasetManifest& manifest, const enc::Encoder* encoder,
                         const GanConfig& config) {
  config.validate();
  int cond_dim;
  if (config.condition_mode == ConditionMode::eeg_feature) {
    if (!encoder) throw ConfigError("eeg_feature conditioning needs an encoder checkpoint");
    cond_dim = encoder->config().embed_dim;
  } else {
    cond_dim = manifest.num_classes;
  }
  return Generator(config.image_size, cond_dim, config.noise_dim, config.base_channels, config.seed);
}

namespace {

struct TrainData {
  data::SplitView view;
  Tensor image_rows;               // {R*H*W, 3}
  Eigen::MatrixXd conditions;      // {R, cond_dim}
  std::map<int, std::vector<long>> by_class;
};

Tensor load_all_images(const data::DatasetManifest& manifest, const data::SplitView& view,
                       int image_size) {
  std::vector<img::Image> images;
  images.reserve(static_cast<std::size_t>(view.count()));
  for (long i = 0; i < view.count(); ++i) {
    const auto& id = view.image_ids[static_cast<std::size_t>(i)];
    if (id.empty())
      throw DataError("record " + view.record_ids[static_cast<std::size_t>(i)] + " has no paired image");
    img::Image im = data::load_record_image(manifest, id);
    if (im.height != image_size || im.width != image_size)
      throw DataError("image " + id + " is not " + std::to_string(image_size) + "px square");
    images.push_back(std::move(im));
  }
  return img::images_to_rows(images);
}

Eigen::MatrixXd encode_view_features(const enc::Encoder& encoder, const data::SplitView& view) {
  NoGradGuard ng;
  Eigen::MatrixXd out(view.count(), encoder.config().embed_dim);
  const long chunk = 128;
  const long rec = view.channels * view.timesteps;
  for (long ofs = 0; ofs < view.count(); ofs += chunk) {
    const long n = std::min(chunk, view.count() - ofs);
    Tensor signals({n, view.channels, view.timesteps});
    std::memcpy(signals.raw().data(), view.signals.raw().data() + ofs * rec,
                sizeof(double) * static_cast<std::size_t>(n * rec));
    out.middleRows(ofs, n) = encoder.encode_inference(signals);
  }
  return out;
}

TrainData prepare_train_data(const data::DatasetManifest& manifest, const enc::Encoder* encoder,
                             const GanConfig& config) {
  TrainData data;
  data.view = data::load_split(manifest, "train");
  data.image_rows = load_all_images(manifest, data.view, config.image_size);
  if (config.condition_mode == ConditionMode::eeg_feature) {
    data.conditions = encode_view_features(*encoder, data.view);
  } else {
    data.conditions = Eigen::MatrixXd::Zero(data.view.count(), manifest.num_classes);
    for (long i = 0; i < data.view.count(); ++i)
      data.conditions(i, data.view.labels[static_cast<std::size_t>(i)]) = 1.0;
  }
  for (long i = 0; i < data.view.count(); ++i)
    data.by_class[data.view.labels[static_cast<std::size_t>(i)]].push_back(i);
  return data;
}

Tensor gather_image_rows(const Tensor& all_rows, const std::vector<long>& record_idx, long hw) {
  Tensor out({static_cast<long>(record_idx.size()) * hw, 3});
  for (std::size_t i = 0; i < record_idx.size(); ++i)
    std::memcpy(out.raw().data() + static_cast<long>(i) * hw * 3,
                all_rows.raw().data() + record_idx[i] * hw * 3,
                sizeof(double) * static_cast<std::size_t>(hw * 3));
  return out;
}

// Condition for a sample of class k: a random same-class record's vector.
Tensor paired_conditions(const TrainData& data, const std::vector<long>& record_idx, Rng& rng) {
  Tensor out({static_cast<long>(record_idx.size()), data.conditions.cols()});
  for (std::size_t i = 0; i < record_idx.size(); ++i) {
    const int label = data.view.labels[static_cast<std::size_t>(record_idx[i])];
    const auto& pool = data.by_class.at(label);
    const long pick = pool[static_cast<std::size_t>(rng.below(pool.size()))];
    out.mat().row(static_cast<long>(i)) = data.conditions.row(pick);
  }
  return out;
}

Tensor gaussian_noise(long batch, int dim, Rng& rng) {
  Tensor z({batch, static_cast<long>(dim)});
  for (long i = 0; i < z.size(); ++i) z.raw()[i] = rng.normal();
  return z;
}

struct FidProbe {
  std::unique_ptr<enc::ConvBackboneExtractor> extractor;
  std::vector<img::Image> real_images;
  Tensor eval_conditions;
  Tensor eval_noise;
  eval::GaussianStats real_stats;
  long count = 0;
};

FidProbe build_fid_probe(const data::DatasetManifest& manifest, const TrainData& data,
                         const GanConfig& config) {
  FidProbe probe;
  probe.extractor = std::make_unique<enc::ConvBackboneExtractor>(config.image_size, 64,
                                                                 /*seed=*/0xFEEDull);
  // Real slice comes from val when present, train otherwise.
  const data::SplitView* src = &data.view;
  std::optional<data::SplitView> val;
  if (manifest.has_split("val") && !manifest.split("val").empty()) {
    val = data::load_split(manifest, "val");
    src = &*val;
  }
  probe.count = std::min<long>(config.eval_slice, src->count());
  if (probe.count < 2) throw DataError("evaluation slice needs at least 2 paired images");
  std::vector<img::Image> reals;
  for (long i = 0; i < probe.count; ++i)
    reals.push_back(data::load_record_image(manifest, src->image_ids[static_cast<std::size_t>(i)]));
  probe.real_stats = eval::gaussian_stats(probe.extractor->extract_batch(reals));
  probe.real_images = std::move(reals);

  Rng rng = make_rng(config.seed ^ 0x5EEDFACEull);
  std::vector<long> idx;
  for (long i = 0; i < probe.count; ++i)
    idx.push_back(static_cast<long>(rng.below(static_cast<std::uint64_t>(data.view.count()))));
  probe.eval_conditions = paired_conditions(data, idx, rng);
  probe.eval_noise = gaussian_noise(probe.count, config.noise_dim, rng);
  return probe;
}

double eval_fid(const Generator& generator, const FidProbe& probe, int image_size) {
  NoGradGuard ng;
  const Tensor fake_rows =
      generator.forward(Var(probe.eval_conditions), Var(probe.eval_noise)).value();
  const auto fakes = img::rows_to_images(fake_rows, probe.count, image_size, image_size);
  const auto stats = eval::gaussian_stats(probe.extractor->extract_batch(fakes));
  return eval::fid(probe.real_stats, stats);
}

}  // namespace

GanTrainOutput train_gan(const data::DatasetManifest& manifest, const enc::Encoder* encoder,
                         const GanConfig& config, Generator& generator,
                         const std::filesystem::path& checkpoint_dir) {
  config.validate();
  if (config.condition_mode == ConditionMode::eeg_feature && !encoder)
    throw ConfigError("eeg_feature conditioning needs an encoder");

  TrainData data = prepare_train_data(manifest, encoder, config);
  if (generator.condition_dim() != data.conditions.cols())
    throw ConfigError("generator condition width does not match the conditioning mode");
  if (generator.image_size() != config.image_size)
    throw ConfigError("generator image size does not match the config");

  Discriminator disc(config.image_size, static_cast<int>(data.conditions.cols()),
                     config.base_channels, config.seed + 1);

  AdamOptions g_opts, d_opts;
  g_opts.lr = config.lr_g;
  g_opts.beta1 = 0.0;
  g_opts.beta2 = 0.99;
  d_opts.lr = config.lr_d;
  d_opts.beta1 = 0.0;
  d_opts.beta2 = 0.99;
  auto g_opt = make_adam(g_opts);
  auto d_opt = make_adam(d_opts);
  auto g_params = param_vars(generator.params());
  auto d_params = param_vars(disc.params());

  AdaState ada;
  ada.target = config.ada_target;
  ada.adjustment_step = config.ada_step;

  GanTrainOutput out;
  out.dataset_hash = hash_container_hex(manifest.root);

  FidProbe probe = build_fid_probe(manifest, data, config);
  out.fid_initial = eval_fid(generator, probe, config.image_size);
  out.ada_p_min = out.ada_p_max = ada.p;

  Rng rng = make_rng(config.seed);
  const long hw = static_cast<long>(config.image_size) * config.image_size;
  const long B = config.batch_size;
  const long R = data.view.count();

  auto sample_records = [&](long count) {
    std::vector<long> idx(static_cast<std::size_t>(count));
    for (auto& v : idx) v = static_cast<long>(rng.below(static_cast<std::uint64_t>(R)));
    return idx;
  };

  for (long step = 1; step <= config.steps; ++step) {
    // --- discriminator step -------------------------------------------------
    const auto real_idx = sample_records(B);
    Tensor real_rows = gather_image_rows(data.image_rows, real_idx, hw);
    Tensor real_conds = paired_conditions(data, real_idx, rng);

    const auto fake_idx = sample_records(B);
    Tensor fake_conds({B, data.conditions.cols()});
    for (long i = 0; i < B; ++i)
      fake_conds.mat().row(i) = data.conditions.row(fake_idx[static_cast<std::size_t>(i)]);
    Tensor z = gaussian_noise(B, config.noise_dim, rng);
    Tensor fake_rows;
    {
      NoGradGuard ng;
      fake_rows = generator.forward(Var(fake_conds), Var(z)).value();
    }

    const double p = config.ada_enabled ? ada.p : 0.0;
    const auto real_aug = draw_augmentations(B, config.image_size, p, rng);
    const auto fake_aug = draw_augmentations(B, config.image_size, p, rng);

    const bool r1_now = (step % config.r1_interval) == 0;
    Var real_leaf(real_rows, /*requires_grad=*/r1_now);
    Var d_real = disc.forward(apply_augmentations(real_leaf, B, config.image_size, real_aug),
                              Var(real_conds), B);
    Var d_fake = disc.forward(apply_augmentations(Var(fake_rows), B, config.image_size, fake_aug),
                              Var(fake_conds), B);
    Var loss_d = add(mean_all(softplus(neg(d_real))), mean_all(softplus(d_fake)));
    if (r1_now && config.r1_gamma > 0.0) {
      auto gx = backprop(sum_all(d_real), {real_leaf}, /*create_graph=*/true);
      Var penalty = sum_all(mul(gx[0], gx[0]));
      const double weight = 0.5 * config.r1_gamma * static_cast<double>(config.r1_interval) /
                            static_cast<double>(B);
      loss_d = add(loss_d, scale(penalty, weight));
    }
    const double d_loss_value = loss_d.value().item();
    d_opt->step(disc.params(), gradients(loss_d, d_params));

    if (config.ada_enabled) ada = ada_update(ada, d_real.value().raw().matrix());
    out.ada_p_min = std::min(out.ada_p_min, ada.p);
    out.ada_p_max = std::max(out.ada_p_max, ada.p);

    // --- generator step ------------------------------------------------------
    const auto g_idx = sample_records(B);
    Tensor g_conds({B, data.conditions.cols()});
    for (long i = 0; i < B; ++i)
      g_conds.mat().row(i) = data.conditions.row(g_idx[static_cast<std::size_t>(i)]);
    Tensor z2 = gaussian_noise(B, config.noise_dim, rng);
    const auto g_aug = draw_augmentations(B, config.image_size, p, rng);

    Var fakes = generator.forward(Var(g_conds), Var(z2));
    Var d_out = disc.forward(apply_augmentations(fakes, B, config.image_size, g_aug), Var(g_conds), B);
    Var loss_g = mean_all(softplus(neg(d_out)));
    const double g_loss_value = loss_g.value().item();
    g_opt->step(generator.params(), gradients(loss_g, g_params));

    GanHistoryRow row;
    row.step = step;
    row.g_loss = g_loss_value;
    row.d_loss = d_loss_value;
    row.ada_p = ada.p;
    if (config.eval_interval > 0 && (step % config.eval_interval == 0 || step == config.steps))
      row.fid_eval = eval_fid(generator, probe, config.image_size);
    out.history.push_back(row);
  }

  out.fid_final = out.history.empty() || out.history.back().fid_eval < 0.0
                      ? eval_fid(generator, probe, config.image_size)
                      : out.history.back().fid_eval;

  if (!checkpoint_dir.empty()) {
    std::filesystem::create_directories(checkpoint_dir);
    nlohmann::json provenance;
    provenance["dataset_hash"] = out.dataset_hash;
    provenance["condition_mode"] = to_string(config.condition_mode);
    provenance["seed"] = config.seed;
    provenance["steps"] = config.steps;
    generator.save(checkpoint_dir / "generator_final.ckpt", provenance);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Image -> EEG translation
// ---------------------------------------------------------------------------

Eigen::MatrixXd Translator::apply(const Eigen::MatrixXd& image_features) const {
  if (image_features.cols() + 1 != weights.rows())
    throw DataError("translator input width mismatch");
  Eigen::MatrixXd X(image_features.rows(), image_features.cols() + 1);
  X << image_features, Eigen::VectorXd::Ones(image_features.rows());
  Eigen::MatrixXd y = X * weights;
  if (renormalize)
    for (long i = 0; i < y.rows(); ++i) y.row(i) /= std::max(y.row(i).norm(), 1e-12);
  return y;
}

void Translator::save(const std::filesystem::path& path, const nlohmann::json& provenance) const {
  nlohmann::json config;
  config["type"] = "translator";
  config["renormalize"] = renormalize;
  config["provenance"] = provenance;
  std::vector<Param> params;
  params.push_back({"translator.W", Var(Tensor::from_matrix(weights), false)});
  save_checkpoint(path, config, params);
}

Translator Translator::load(const std::filesystem::path& path) {
  Checkpoint ckpt = load_checkpoint(path);
  if (ckpt.config.value("type", "") != "translator")
    throw DataError("checkpoint is not a translator: " + path.string());
  Translator t;
  t.renormalize = ckpt.config.value("renormalize", false);
  t.weights = ckpt.param("translator.W").to_matrix();
  return t;
}

Translator fit_linear_map(const Eigen::MatrixXd& image_features, const Eigen::MatrixXd& eeg_features,
                          double ridge, bool renormalize) {
  if (image_features.rows() != eeg_features.rows())
    throw std::invalid_argument("fit_linear_map: paired row counts differ");
  if (image_features.rows() < 2) throw std::invalid_argument("fit_linear_map: no paired data");
  const long D = image_features.cols();
  Eigen::MatrixXd X(image_features.rows(), D + 1);
  X << image_features, Eigen::VectorXd::Ones(image_features.rows());
  Eigen::MatrixXd gram = X.transpose() * X;
  gram.diagonal().array() += ridge;
  Translator t;
  t.weights = gram.ldlt().solve(X.transpose() * eeg_features);
  t.renormalize = renormalize;
  return t;
}

TranslatorFit fit_image_to_eeg(const enc::ImageFeatureExtractor& extractor,
                               const enc::Encoder& encoder, const data::DatasetManifest& manifest,
                               double ridge) {
  data::SplitView train = data::load_split(manifest, "train");
  std::optional<data::SplitView> held;
  for (const char* name : {"val", "test"})
    if (!held && manifest.has_split(name) && !manifest.split(name).empty())
      held = data::load_split(manifest, name);
  if (!held) throw DataError("image-to-eeg fit needs a held-out split");

  auto features_of = [&](const data::SplitView& view) {
    std::vector<img::Image> images;
    for (long i = 0; i < view.count(); ++i) {
      const auto& id = view.image_ids[static_cast<std::size_t>(i)];
      if (id.empty()) throw DataError("record without paired image in translation fit");
      images.push_back(data::load_record_image(manifest, id));
    }
    return extractor.extract_batch(images);
  };

  const Eigen::MatrixXd train_x = features_of(train);
  const Eigen::MatrixXd train_y = encode_view_features(encoder, train);
  const Eigen::MatrixXd held_x = features_of(*held);
  const Eigen::MatrixXd held_y = encode_view_features(encoder, *held);

  TranslatorFit fit;
  fit.translator = fit_linear_map(train_x, train_y, ridge, encoder.config().normalize_output);
  const Eigen::MatrixXd train_pred = fit.translator.apply(train_x);
  const Eigen::MatrixXd held_pred = fit.translator.apply(held_x);
  fit.train_mse = (train_pred - train_y).squaredNorm() /
                  static_cast<double>(train_y.rows() * train_y.cols());
  fit.val_mse =
      (held_pred - held_y).squaredNorm() / static_cast<double>(held_y.rows() * held_y.cols());
  return fit;
}

}  // namespace eegpack::gan
