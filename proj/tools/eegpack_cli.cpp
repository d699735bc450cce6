// eegpack: config-driven entry point for dataset synthesis, encoder/clip/gan
// training, synthesis, translation and the evaluation battery.
//
// Exit codes: 0 success, 2 configuration error, 3 data error, 4 runtime
// failure.

#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <nlohmann/json.hpp>

#include "eegpack/clip.hpp"
#include "eegpack/data.hpp"
#include "eegpack/encoders.hpp"
#include "eegpack/eval.hpp"
#include "eegpack/gan.hpp"
#include "eegpack/metric.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace eegpack;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitRuntime = 4;

bool g_fast = false;

struct RunDir {
  fs::path root;

  explicit RunDir(const fs::path& out) : root(out) {
    fs::create_directories(root / "checkpoints");
    fs::create_directories(root / "reports");
    fs::create_directories(root / "images");
    fs::create_directories(root / "logs");
  }

  fs::path checkpoints() const { return root / "checkpoints"; }
  fs::path reports() const { return root / "reports"; }
  fs::path images() const { return root / "images"; }

  // Resolved-config snapshot plus content hashes of every input; enough to
  // re-run the command bit-identically in deterministic mode.
  void write_snapshot(const std::string& command, const json& params, const json& input_hashes) const {
    json snap;
    snap["command"] = command;
    snap["parameters"] = params;
    snap["input_hashes"] = input_hashes;
    snap["fast_mode"] = g_fast;
    write_text_file(root / "config.json", snap.dump(2) + "\n");
  }

  void log(const std::string& line) const {
    std::ofstream out(root / "logs" / "run.log", std::ios::app);
    out << line << '\n';
    std::cout << line << '\n';
  }
};

std::vector<int> parse_int_list(const std::string& csv) {
  std::vector<int> out;
  std::string token;
  std::istringstream in(csv);
  while (std::getline(in, token, ',')) {
    if (token.empty()) continue;
    out.push_back(std::stoi(token));
  }
  return out;
}

fs::path cache_dir() {
  if (const char* env = std::getenv("EEGPACK_CACHE")) return fs::path(env);
  return {};
}

// Image features keyed by (dataset, extractor, split); reused across runs
// when EEGPACK_CACHE is set.
Eigen::MatrixXd extract_features_cached(const enc::ImageFeatureExtractor& extractor,
                                        const data::DatasetManifest& manifest,
                                        const data::SplitView& view, const std::string& split) {
  const fs::path cache = cache_dir();
  fs::path file;
  if (!cache.empty()) {
    const std::string key = hash_container_hex(manifest.root) + "_" + extractor.weights_hash() +
                            "_" + split + ".features.f32";
    file = cache / key;
    if (fs::exists(file)) {
      const auto bytes = read_binary_file(file);
      const long dim = extractor.feature_dim();
      if (static_cast<long>(bytes.size()) == view.count() * dim * 4) {
        Eigen::MatrixXd out(view.count(), dim);
        for (long i = 0; i < view.count(); ++i)
          for (long j = 0; j < dim; ++j) {
            float f;
            std::memcpy(&f, bytes.data() + (i * dim + j) * 4, 4);
            out(i, j) = static_cast<double>(f);
          }
        return out;
      }
    }
  }
  Eigen::MatrixXd features(view.count(), extractor.feature_dim());
  std::vector<img::Image> chunk;
  for (long ofs = 0; ofs < view.count(); ofs += 64) {
    chunk.clear();
    const long n = std::min<long>(64, view.count() - ofs);
    for (long i = 0; i < n; ++i)
      chunk.push_back(data::load_record_image(manifest, view.image_ids[static_cast<std::size_t>(ofs + i)]));
    features.middleRows(ofs, n) = extractor.extract_batch(chunk);
  }
  if (!file.empty()) {
    fs::create_directories(file.parent_path());
    std::string blob;
    for (long i = 0; i < features.rows(); ++i)
      for (long j = 0; j < features.cols(); ++j) {
        const float f = static_cast<float>(features(i, j));
        char bytes[4];
        std::memcpy(bytes, &f, 4);
        blob.append(bytes, 4);
      }
    write_binary_file(file, blob.data(), blob.size());
  }
  return features;
}

std::unique_ptr<enc::ConvBackboneExtractor> make_or_load_extractor(const std::string& path,
                                                                   int image_size,
                                                                   std::uint64_t seed) {
  if (!path.empty()) return enc::load_extractor(path);
  return std::make_unique<enc::ConvBackboneExtractor>(image_size, 64, seed);
}

// ---------------------------------------------------------------------------
// make-synthetic
// ---------------------------------------------------------------------------

struct MakeSyntheticArgs {
  std::string out;
  data::SyntheticSpec spec;
};

int run_make_synthetic(const MakeSyntheticArgs& args) {
  RunDir run(args.out);
  const fs::path container = fs::path(args.out) / "container";
  data::DatasetManifest manifest = data::make_synthetic(args.spec, container);
  json params;
  params["classes"] = args.spec.num_classes;
  params["channels"] = args.spec.channels;
  params["timesteps"] = args.spec.timesteps;
  params["records_per_class"] = args.spec.records_per_class;
  params["separation"] = args.spec.class_separation;
  params["noise"] = args.spec.noise_scale;
  params["seed"] = args.spec.seed;
  params["images"] = args.spec.with_images;
  params["image_size"] = args.spec.image_size;
  run.write_snapshot("make-synthetic", params, {{"container", hash_container_hex(container)}});
  run.log("wrote container " + container.string() + " with " +
          std::to_string(manifest.total_records()) + " records");
  return kExitOk;
}

// ---------------------------------------------------------------------------
// train-encoder / finetune
// ---------------------------------------------------------------------------

struct TrainEncoderArgs {
  std::string manifest, out, regime = "triplet", encoder_kind = "lstm";
  std::string checkpoint;  // finetune source
  int embed_dim = 128, epochs = 30, checkpoint_every = 0;
  long batch_size = 24;
  double lr = 1e-3, margin = 0.2;
  std::string mining = "semi_hard", optimizer = "adaptive_moments";
  std::uint64_t seed = 0;
  std::string exclude_classes;
  int normalize_output = -1;  // -1 = regime default
};

int run_train_encoder(const TrainEncoderArgs& args, bool finetune) {
  RunDir run(args.out);
  data::DatasetManifest manifest = data::load_manifest(args.manifest);

  std::unique_ptr<enc::Encoder> encoder;
  json source_hashes = {{"manifest", hash_container_hex(manifest.root)}};
  if (finetune) {
    if (args.checkpoint.empty()) throw ConfigError("finetune needs --checkpoint");
    encoder = enc::load_encoder(args.checkpoint);
    source_hashes["checkpoint"] = nn::checkpoint_file_hash(args.checkpoint);
  } else {
    enc::EncoderConfig config;
    config.kind = enc::encoder_kind_from_string(args.encoder_kind);
    config.input_channels = manifest.channels;
    config.input_timesteps = manifest.timesteps;
    config.embed_dim = args.embed_dim;
    config.normalize_output =
        args.normalize_output >= 0 ? args.normalize_output != 0 : args.regime == "triplet";
    encoder = enc::build_encoder(config, args.seed);
  }

  metric::TrainConfig config;
  config.epochs = args.epochs;
  config.batch_size = args.batch_size;
  config.learning_rate = args.lr;
  config.optimizer = nn::optimizer_kind_from_string(args.optimizer);
  config.seed = args.seed;
  config.checkpoint_every = args.checkpoint_every;
  config.checkpoint_dir = run.checkpoints();
  config.exclude_classes = parse_int_list(args.exclude_classes);

  metric::TrainOutput result;
  const std::string regime = finetune ? "supervised" : args.regime;
  if (regime == "triplet") {
    metric::TripletConfig triplet;
    triplet.margin = args.margin;
    triplet.mining = metric::mining_mode_from_string(args.mining);
    result = metric::train_triplet(*encoder, manifest, triplet, config);
  } else if (regime == "supervised") {
    enc::ClassifierHead head(encoder->config().embed_dim, manifest.num_classes);
    result = metric::train_supervised(*encoder, head, manifest, config);
  } else {
    throw ConfigError("unknown regime: " + regime);
  }

  metric::write_history_csv(run.root / "history.csv", result.history);
  json params;
  params["regime"] = regime;
  params["encoder"] = encoder->config().to_json();
  params["epochs"] = args.epochs;
  params["batch_size"] = args.batch_size;
  params["lr"] = args.lr;
  params["margin"] = args.margin;
  params["mining"] = args.mining;
  params["optimizer"] = args.optimizer;
  params["seed"] = args.seed;
  params["exclude_classes"] = config.exclude_classes;
  run.write_snapshot(finetune ? "finetune" : "train-encoder", params, source_hashes);
  run.log("final epoch: loss=" + format_double(result.history.back().loss) +
          " val_metric=" + format_double(result.history.back().val_metric));
  return kExitOk;
}

// ---------------------------------------------------------------------------
// train-clip
// ---------------------------------------------------------------------------

struct TrainClipArgs {
  std::string manifest, out, extractor_ckpt;
  std::string encoder_kind = "lstm";
  int embed_dim = 128, proj_dim = 128, epochs = 50;
  long batch_size = 32;
  double lr = 1e-3, temperature = 0.07;
  bool fixed_temperature = false;
  std::uint64_t seed = 0, extractor_seed = 99;
};

int run_train_clip(const TrainClipArgs& args) {
  RunDir run(args.out);
  data::DatasetManifest manifest = data::load_manifest(args.manifest);
  if (!manifest.image_root) throw DataError("train-clip needs a container with paired images");

  data::SplitView probe = data::load_split(manifest, "train");
  img::Image sample = data::load_record_image(manifest, probe.image_ids.at(0));
  auto extractor = make_or_load_extractor(args.extractor_ckpt, sample.height, args.extractor_seed);

  enc::EncoderConfig econfig;
  econfig.kind = enc::encoder_kind_from_string(args.encoder_kind);
  econfig.input_channels = manifest.channels;
  econfig.input_timesteps = manifest.timesteps;
  econfig.embed_dim = args.embed_dim;
  econfig.normalize_output = true;

  clip::ClipConfig config;
  config.temperature = args.temperature;
  config.learnable_temperature = !args.fixed_temperature;
  config.projection_dim = args.proj_dim;
  config.epochs = args.epochs;
  config.batch_size = args.batch_size;
  config.learning_rate = args.lr;
  config.seed = args.seed;
  config.checkpoint_dir = run.checkpoints();

  clip::ClipModel model(enc::build_encoder(econfig, args.seed), extractor->feature_dim(), config,
                        args.seed + 1);
  clip::ClipTrainOutput result = clip::train_clip(model, *extractor, manifest, config);
  metric::write_history_csv(run.root / "history.csv", result.history);

  if (result.extractor_hash_before != result.extractor_hash_after)
    throw std::runtime_error("image extractor changed during training; freeze contract violated");

  // Retrieval artifacts over the held-out gallery.
  const std::string gallery_split = manifest.has_split("val") ? "val" : "train";
  data::SplitView gallery_view = data::load_split(manifest, gallery_split);
  const Eigen::MatrixXd gallery_feats =
      extract_features_cached(*extractor, manifest, gallery_view, gallery_split);
  const Eigen::MatrixXd gallery_embeds = model.embed_image_features_inference(gallery_feats);
  clip::RetrievalIndex index = clip::make_index(gallery_embeds, gallery_view.image_ids);
  clip::save_index(run.root / "index", index);

  std::map<std::string, int> image_class;
  for (long i = 0; i < gallery_view.count(); ++i)
    image_class[gallery_view.image_ids[static_cast<std::size_t>(i)]] =
        gallery_view.labels[static_cast<std::size_t>(i)];

  std::vector<std::pair<std::string, std::vector<clip::Retrieved>>> ranked;
  std::vector<eval::RankedResult> pair_relevance, class_relevance;
  const long k = std::min<long>(10, static_cast<long>(index.keys.size()));
  for (long i = 0; i < gallery_view.count(); ++i) {
    nn::Tensor sig({1, gallery_view.channels, gallery_view.timesteps});
    std::memcpy(sig.raw().data(),
                gallery_view.signals.raw().data() + i * gallery_view.channels * gallery_view.timesteps,
                sizeof(double) * static_cast<std::size_t>(gallery_view.channels * gallery_view.timesteps));
    const Eigen::MatrixXd q = model.embed_eeg_inference(sig);
    auto hits = clip::retrieve(index, q.row(0), k);
    eval::RankedResult pair, cls;
    pair.query_id = cls.query_id = gallery_view.record_ids[static_cast<std::size_t>(i)];
    for (const auto& h : hits) {
      pair.ranked_ids.push_back(h.key);
      cls.ranked_ids.push_back(h.key);
      pair.relevance.push_back(h.key == gallery_view.image_ids[static_cast<std::size_t>(i)] ? 1 : 0);
      cls.relevance.push_back(
          image_class.at(h.key) == gallery_view.labels[static_cast<std::size_t>(i)] ? 1 : 0);
    }
    pair_relevance.push_back(std::move(pair));
    class_relevance.push_back(std::move(cls));
    ranked.emplace_back(gallery_view.record_ids[static_cast<std::size_t>(i)], std::move(hits));
  }
  clip::write_ranked_csv(run.reports() / "ranked.csv", ranked);

  // Pair-level retrieval (the exact paired image counts) and class-level
  // relevance (any same-class image counts) are different protocols; both
  // are reported under distinct names.
  json retrieval;
  retrieval["gallery_split"] = gallery_split;
  auto pair_topk = eval::topk_accuracy(pair_relevance, {1, 5, 10});
  for (const auto& [kk, acc] : pair_topk) retrieval["pair_top" + std::to_string(kk)] = acc;
  retrieval["pair_mrr"] = eval::mean_reciprocal_rank(pair_relevance);
  retrieval["class_mrr"] = eval::mean_reciprocal_rank(class_relevance);
  retrieval["class_map"] = eval::mean_average_precision(class_relevance);
  write_text_file(run.reports() / "retrieval.json", retrieval.dump(2) + "\n");

  json params;
  params["encoder"] = model.encoder().config().to_json();
  params["projection_dim"] = args.proj_dim;
  params["temperature_initial"] = args.temperature;
  params["temperature_final"] = result.final_temperature;
  params["epochs"] = args.epochs;
  params["batch_size"] = args.batch_size;
  params["lr"] = args.lr;
  params["seed"] = args.seed;
  json hashes;
  hashes["manifest"] = result.dataset_hash;
  hashes["extractor"] = result.extractor_hash_before;
  run.write_snapshot("train-clip", params, hashes);
  run.log("final val top-1 retrieval: " + format_double(result.history.back().val_metric));
  return kExitOk;
}

// ---------------------------------------------------------------------------
// train-gan
// ---------------------------------------------------------------------------

struct TrainGanArgs {
  std::string manifest, out, condition = "eeg", encoder_ckpt;
  gan::GanConfig config;
};

int run_train_gan(const TrainGanArgs& args) {
  RunDir run(args.out);
  data::DatasetManifest manifest = data::load_manifest(args.manifest);
  if (!manifest.image_root) throw DataError("train-gan needs a container with paired images");

  gan::GanConfig config = args.config;
  config.condition_mode = gan::condition_mode_from_string(args.condition);

  std::unique_ptr<enc::Encoder> encoder;
  json hashes = {{"manifest", hash_container_hex(manifest.root)}};
  if (config.condition_mode == gan::ConditionMode::eeg_feature) {
    if (args.encoder_ckpt.empty()) throw ConfigError("--condition eeg needs --encoder");
    encoder = enc::load_encoder(args.encoder_ckpt);
    hashes["encoder"] = nn::checkpoint_file_hash(args.encoder_ckpt);
  }

  gan::Generator generator = gan::make_generator(manifest, encoder.get(), config);
  gan::GanTrainOutput result =
      gan::train_gan(manifest, encoder.get(), config, generator, run.checkpoints());
  gan::write_gan_history_csv(run.root / "history.csv", result.history);

  json params;
  params["condition"] = gan::to_string(config.condition_mode);
  params["steps"] = config.steps;
  params["batch_size"] = config.batch_size;
  params["image_size"] = config.image_size;
  params["noise_dim"] = config.noise_dim;
  params["lr_g"] = config.lr_g;
  params["lr_d"] = config.lr_d;
  params["ada_enabled"] = config.ada_enabled;
  params["r1_gamma"] = config.r1_gamma;
  params["base_channels"] = config.base_channels;
  params["seed"] = config.seed;
  run.write_snapshot("train-gan", params, hashes);

  json report;
  report["fid_initial"] = result.fid_initial;
  report["fid_final"] = result.fid_final;
  report["fid_drop_fraction"] =
      result.fid_initial > 0.0 ? 1.0 - result.fid_final / result.fid_initial : 0.0;
  report["ada_p_min"] = result.ada_p_min;
  report["ada_p_max"] = result.ada_p_max;
  write_text_file(run.reports() / "gan.json", report.dump(2) + "\n");
  run.log("fid " + format_double(result.fid_initial) + " -> " + format_double(result.fid_final));
  return kExitOk;
}

// ---------------------------------------------------------------------------
// synthesize
// ---------------------------------------------------------------------------

struct SynthesizeArgs {
  std::string generator_ckpt, manifest, out, split = "test";
  std::string encoder_ckpt;  // needed when the generator is EEG-conditioned
  long count = 16;
  int grid_cols = 4;
  std::uint64_t seed = 0;
};

int run_synthesize(const SynthesizeArgs& args) {
  RunDir run(args.out);
  gan::Generator generator = gan::Generator::load(args.generator_ckpt);
  data::DatasetManifest manifest = data::load_manifest(args.manifest);
  data::SplitView view = data::load_split(manifest, args.split);

  json hashes = {{"manifest", hash_container_hex(manifest.root)},
                 {"generator", nn::checkpoint_file_hash(args.generator_ckpt)}};

  std::unique_ptr<enc::Encoder> encoder;
  const bool one_hot = generator.condition_dim() == manifest.num_classes && args.encoder_ckpt.empty();
  if (!one_hot) {
    if (args.encoder_ckpt.empty())
      throw ConfigError("generator expects EEG features; pass --encoder");
    encoder = enc::load_encoder(args.encoder_ckpt);
    if (encoder->config().embed_dim != generator.condition_dim())
      throw ConfigError("encoder embedding width does not match the generator condition");
    hashes["encoder"] = nn::checkpoint_file_hash(args.encoder_ckpt);
  }

  Rng rng = make_rng(args.seed);
  std::vector<img::Image> tiles;
  std::ostringstream sidecar;
  sidecar << "row,col,class,eeg_record_id,seed\n";
  for (long i = 0; i < args.count; ++i) {
    const long rec = static_cast<long>(rng.below(static_cast<std::uint64_t>(view.count())));
    gan::LatentInput input;
    if (one_hot) {
      input.condition = Eigen::VectorXd::Zero(manifest.num_classes);
      input.condition(view.labels[static_cast<std::size_t>(rec)]) = 1.0;
    } else {
      nn::Tensor sig({1, view.channels, view.timesteps});
      std::memcpy(sig.raw().data(), view.signals.raw().data() + rec * view.channels * view.timesteps,
                  sizeof(double) * static_cast<std::size_t>(view.channels * view.timesteps));
      input.condition = encoder->encode_inference(sig).row(0);
    }
    input.noise.resize(generator.noise_dim());
    for (long j = 0; j < input.noise.size(); ++j) input.noise(j) = rng.normal();

    const nn::Tensor chw = gan::synthesize(generator, input);
    const long H = generator.image_size(), W = H;
    nn::Tensor rows({H * W, 3});
    for (long y = 0; y < H; ++y)
      for (long x = 0; x < W; ++x)
        for (long c = 0; c < 3; ++c) rows.mat()(y * W + x, c) = chw.raw()[(c * H + y) * W + x];
    tiles.push_back(img::rows_to_images(rows, 1, H, W)[0]);
    sidecar << (i / args.grid_cols) << ',' << (i % args.grid_cols) << ','
            << view.labels[static_cast<std::size_t>(rec)] << ','
            << view.record_ids[static_cast<std::size_t>(rec)] << ',' << args.seed << '\n';
  }
  img::save_png(run.images() / "mosaic.png", img::make_mosaic(tiles, args.grid_cols));
  write_text_file(run.images() / "mosaic.csv", sidecar.str());

  json params;
  params["count"] = args.count;
  params["split"] = args.split;
  params["seed"] = args.seed;
  run.write_snapshot("synthesize", params, hashes);
  run.log("wrote mosaic of " + std::to_string(args.count) + " samples");
  return kExitOk;
}

// ---------------------------------------------------------------------------
// translate-image
// ---------------------------------------------------------------------------

struct TranslateArgs {
  std::string manifest, out, encoder_ckpt, generator_ckpt, extractor_ckpt;
  std::string split = "test";
  long count = 8;
  double ridge = 1e-8;
  std::uint64_t seed = 0, extractor_seed = 99;
};

int run_translate(const TranslateArgs& args) {
  RunDir run(args.out);
  data::DatasetManifest manifest = data::load_manifest(args.manifest);
  auto encoder = enc::load_encoder(args.encoder_ckpt);
  gan::Generator generator = gan::Generator::load(args.generator_ckpt);
  if (encoder->config().embed_dim != generator.condition_dim())
    throw ConfigError("encoder embedding width does not match the generator condition");

  data::SplitView probe = data::load_split(manifest, "train");
  img::Image sample = data::load_record_image(manifest, probe.image_ids.at(0));
  auto extractor = make_or_load_extractor(args.extractor_ckpt, sample.height, args.extractor_seed);

  gan::TranslatorFit fit = gan::fit_image_to_eeg(*extractor, *encoder, manifest, args.ridge);
  json provenance;
  provenance["manifest"] = hash_container_hex(manifest.root);
  provenance["encoder"] = nn::checkpoint_file_hash(args.encoder_ckpt);
  fit.translator.save(run.checkpoints() / "translator.ckpt", provenance);

  // Translate unseen images and reconstruct through the generator.
  data::SplitView unseen = data::load_split(manifest, args.split);
  const long count = std::min<long>(args.count, unseen.count());
  Rng rng = make_rng(args.seed);
  std::vector<img::Image> tiles;
  for (long i = 0; i < count; ++i) {
    img::Image source = data::load_record_image(manifest, unseen.image_ids[static_cast<std::size_t>(i)]);
    const Eigen::MatrixXd feat = extractor->extract(source).transpose();
    const Eigen::MatrixXd eeg_space = fit.translator.apply(feat);
    gan::LatentInput input;
    input.condition = eeg_space.row(0);
    input.noise.resize(generator.noise_dim());
    for (long j = 0; j < input.noise.size(); ++j) input.noise(j) = rng.normal();
    const nn::Tensor chw = gan::synthesize(generator, input);
    const long H = generator.image_size(), W = H;
    nn::Tensor rows({H * W, 3});
    for (long y = 0; y < H; ++y)
      for (long x = 0; x < W; ++x)
        for (long c = 0; c < 3; ++c) rows.mat()(y * W + x, c) = chw.raw()[(c * H + y) * W + x];
    tiles.push_back(source);
    tiles.push_back(img::rows_to_images(rows, 1, H, W)[0]);
  }
  if (!tiles.empty()) img::save_png(run.images() / "translation.png", img::make_mosaic(tiles, 2));

  json report;
  report["train_mse"] = fit.train_mse;
  report["heldout_mse"] = fit.val_mse;
  report["translated"] = count;
  write_text_file(run.reports() / "translation.json", report.dump(2) + "\n");

  json params;
  params["split"] = args.split;
  params["ridge"] = args.ridge;
  params["seed"] = args.seed;
  json hashes;
  hashes["manifest"] = hash_container_hex(manifest.root);
  hashes["encoder"] = nn::checkpoint_file_hash(args.encoder_ckpt);
  hashes["generator"] = nn::checkpoint_file_hash(args.generator_ckpt);
  run.write_snapshot("translate-image", params, hashes);
  run.log("held-out translation MSE: " + format_double(fit.val_mse));
  return kExitOk;
}

// ---------------------------------------------------------------------------
// zero-shot
// ---------------------------------------------------------------------------

struct ZeroShotArgs {
  std::string manifest, out, holdout;
  TrainEncoderArgs train;
};

int run_zero_shot(const ZeroShotArgs& args) {
  RunDir run(args.out);
  const std::vector<int> holdout = parse_int_list(args.holdout);
  if (holdout.empty()) throw ConfigError("--holdout needs at least one class id");

  TrainEncoderArgs train = args.train;
  train.manifest = args.manifest;
  train.out = (fs::path(args.out) / "encoder_run").string();
  train.exclude_classes = args.holdout;
  const int rc = run_train_encoder(train, /*finetune=*/false);
  if (rc != kExitOk) return rc;

  data::DatasetManifest manifest = data::load_manifest(args.manifest);
  json provenance;
  auto encoder = enc::load_encoder(
      fs::path(train.out) / "checkpoints" / "encoder_final.ckpt", &provenance);
  eval::ZeroShotReport report =
      eval::zero_shot_protocol(manifest, holdout, *encoder, provenance, train.seed);

  json j;
  j["holdout_classes"] = holdout;
  j["kmeans"] = report.kmeans;
  j["svm"] = report.svm;
  j["knn"] = report.knn;
  j["probe_train_records"] = report.probe_train_records;
  j["probe_test_records"] = report.probe_test_records;
  write_text_file(run.reports() / "zero_shot.json", j.dump(2) + "\n");

  json params;
  params["holdout"] = holdout;
  params["regime"] = train.regime;
  params["epochs"] = train.epochs;
  params["seed"] = train.seed;
  run.write_snapshot("zero-shot", params, {{"manifest", hash_container_hex(manifest.root)}});
  run.log("unseen-class kmeans=" + format_double(report.kmeans) +
          " svm=" + format_double(report.svm) + " knn=" + format_double(report.knn));
  return kExitOk;
}

// ---------------------------------------------------------------------------
// export-embeddings
// ---------------------------------------------------------------------------

struct ExportArgs {
  std::string manifest, checkpoint, split = "test", out;
};

int run_export(const ExportArgs& args) {
  data::DatasetManifest manifest = data::load_manifest(args.manifest);
  auto encoder = enc::load_encoder(args.checkpoint);
  const fs::path out_path(args.out);
  if (out_path.has_parent_path()) fs::create_directories(out_path.parent_path());
  eval::export_embeddings(*encoder, manifest, args.split, out_path);
  std::cout << "wrote embeddings for split '" << args.split << "' to " << args.out << '\n';
  return kExitOk;
}

// ---------------------------------------------------------------------------
// evaluate
// ---------------------------------------------------------------------------

struct EvaluateArgs {
  std::string metrics, out;
  std::string embeddings, train_embeddings;
  std::string rankings, probs;
  std::string features_a, features_b, images_a, images_b, extractor_ckpt;
  std::string k_list = "1,5,10";
  long subset_size = 50;
  int subsets = 10, splits = 10, restarts = 8, knn_k = 5;
  double svm_reg = 1e-3;
  std::uint64_t seed = 0, extractor_seed = 99;
};

Eigen::MatrixXd read_plain_matrix_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open: " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw DataError("empty file: " + path.string());
  std::vector<std::vector<double>> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto fields = split_csv_line(line);
    std::vector<double> row;
    for (const auto& f : fields) row.push_back(std::stod(f));
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw DataError("no data rows in: " + path.string());
  Eigen::MatrixXd m(static_cast<long>(rows.size()), static_cast<long>(rows[0].size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].size() != rows[0].size()) throw DataError("ragged CSV: " + path.string());
    for (std::size_t j = 0; j < rows[i].size(); ++j) m(static_cast<long>(i), static_cast<long>(j)) = rows[i][j];
  }
  return m;
}

std::vector<eval::RankedResult> read_rankings_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open: " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw DataError("empty rankings file");
  const auto header = split_csv_line(line);
  if (header.size() < 4 || header[0] != "query_id")
    throw DataError("rankings CSV needs header query_id,rank,candidate_id,relevant");
  std::map<std::string, std::vector<std::pair<long, std::pair<std::string, int>>>> grouped;
  std::vector<std::string> order;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto f = split_csv_line(line);
    if (f.size() < 4) throw DataError("bad rankings row: " + line);
    if (!grouped.count(f[0])) order.push_back(f[0]);
    grouped[f[0]].push_back({std::stol(f[1]), {f[2], std::stoi(f[3])}});
  }
  std::vector<eval::RankedResult> results;
  for (const auto& q : order) {
    auto rows = grouped[q];
    std::sort(rows.begin(), rows.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });
    eval::RankedResult r;
    r.query_id = q;
    for (const auto& [rank, cand] : rows) {
      r.ranked_ids.push_back(cand.first);
      r.relevance.push_back(cand.second);
    }
    results.push_back(std::move(r));
  }
  return results;
}

Eigen::MatrixXd features_from_source(const EvaluateArgs& args, const std::string& csv_path,
                                     const std::string& image_dir) {
  if (!csv_path.empty()) return read_plain_matrix_csv(csv_path);
  if (image_dir.empty()) throw ConfigError("fid/kid need --features-* or --images-*");
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(image_dir))
    if (entry.path().extension() == ".png") files.push_back(entry.path());
  std::sort(files.begin(), files.end());
  if (files.size() < 2) throw DataError("need at least 2 images in " + image_dir);
  std::vector<img::Image> images;
  for (const auto& f : files) images.push_back(img::load_png(f));
  auto extractor =
      make_or_load_extractor(args.extractor_ckpt, images[0].height, args.extractor_seed);
  return extractor->extract_batch(images);
}

int run_evaluate(const EvaluateArgs& args) {
  RunDir run(args.out);
  json input_hashes = json::object();
  auto note_hash = [&](const std::string& name, const std::string& path) {
    if (!path.empty() && fs::is_regular_file(path)) input_hashes[name] = hash_file_hex(path);
  };
  note_hash("embeddings", args.embeddings);
  note_hash("train_embeddings", args.train_embeddings);
  note_hash("rankings", args.rankings);
  note_hash("probs", args.probs);
  note_hash("features_a", args.features_a);
  note_hash("features_b", args.features_b);

  std::vector<std::string> metric_names;
  {
    std::istringstream in(args.metrics);
    std::string token;
    while (std::getline(in, token, ','))
      if (!token.empty()) metric_names.push_back(token);
  }
  if (metric_names.empty()) throw ConfigError("--metrics is empty");

  std::optional<eval::EmbeddingTable> test_table, train_table;
  auto need_embeddings = [&]() -> eval::EmbeddingTable& {
    if (!test_table) {
      if (args.embeddings.empty()) throw ConfigError("metric needs --embeddings");
      test_table = eval::read_embedding_csv(args.embeddings);
    }
    return *test_table;
  };
  auto need_train_embeddings = [&]() -> eval::EmbeddingTable& {
    if (!train_table) {
      if (args.train_embeddings.empty()) throw ConfigError("metric needs --train-embeddings");
      train_table = eval::read_embedding_csv(args.train_embeddings);
    }
    return *train_table;
  };

  const std::string dataset_hash = [&]() {
    if (!args.embeddings.empty() && fs::is_regular_file(args.embeddings))
      return hash_file_hex(args.embeddings);
    return std::string("n/a");
  }();

  json reports = json::array();
  json config;
  config["seed"] = args.seed;

  for (const std::string& name : metric_names) {
    json report;
    if (name == "kmeans") {
      auto& t = need_embeddings();
      std::set<int> distinct(t.labels.begin(), t.labels.end());
      const double acc = eval::kmeans_accuracy(t.embeddings, t.labels,
                                               static_cast<int>(distinct.size()), args.seed,
                                               args.restarts, g_fast);
      report = eval::metric_report("kmeans", acc, std::nullopt, config, dataset_hash, "n/a");
    } else if (name == "svm") {
      auto& tr = need_train_embeddings();
      auto& te = need_embeddings();
      const double acc = eval::linear_probe_accuracy(tr.embeddings, tr.labels, te.embeddings,
                                                     te.labels, args.svm_reg);
      report = eval::metric_report("svm", acc, std::nullopt, config, dataset_hash, "n/a");
    } else if (name == "knn") {
      auto& tr = need_train_embeddings();
      auto& te = need_embeddings();
      const double acc =
          eval::knn_accuracy(tr.embeddings, tr.labels, te.embeddings, te.labels, args.knn_k);
      report = eval::metric_report("knn", acc, std::nullopt, config, dataset_hash, "n/a");
    } else if (name == "topk" || name == "mrr" || name == "map") {
      if (args.rankings.empty()) throw ConfigError("metric needs --rankings");
      const auto ranked = read_rankings_csv(args.rankings);
      if (name == "mrr") {
        report = eval::metric_report("mrr", eval::mean_reciprocal_rank(ranked), std::nullopt,
                                     config, dataset_hash, "n/a");
      } else if (name == "map") {
        report = eval::metric_report("map", eval::mean_average_precision(ranked), std::nullopt,
                                     config, dataset_hash, "n/a");
      } else {
        auto accs = eval::topk_accuracy(ranked, parse_int_list(args.k_list));
        report = eval::metric_report("topk", 0.0, std::nullopt, config, dataset_hash, "n/a");
        json values = json::object();
        for (const auto& [k, acc] : accs) values["top" + std::to_string(k)] = acc;
        report["values"] = values;
        report.erase("value");
      }
    } else if (name == "is") {
      if (args.probs.empty()) throw ConfigError("inception score needs --probs");
      const Eigen::MatrixXd probs = read_plain_matrix_csv(args.probs);
      auto [mean, stddev] = eval::inception_score(probs, args.splits);
      report = eval::metric_report("is", mean, stddev, config, dataset_hash, "n/a");
    } else if (name == "fid") {
      const Eigen::MatrixXd a = features_from_source(args, args.features_a, args.images_a);
      const Eigen::MatrixXd b = features_from_source(args, args.features_b, args.images_b);
      const double v = eval::fid(eval::gaussian_stats(a), eval::gaussian_stats(b));
      report = eval::metric_report("fid", v, std::nullopt, config, dataset_hash, "n/a");
    } else if (name == "kid") {
      const Eigen::MatrixXd a = features_from_source(args, args.features_a, args.images_a);
      const Eigen::MatrixXd b = features_from_source(args, args.features_b, args.images_b);
      auto [mean, stddev] = eval::kid(a, b, args.subset_size, args.subsets, args.seed);
      report = eval::metric_report("kid", mean, stddev, config, dataset_hash, "n/a");
    } else {
      throw ConfigError("unknown metric: " + name);
    }
    reports.push_back(report);
    run.log("metric " + name + ": " + report.dump());
  }

  write_text_file(run.reports() / "metrics.json", reports.dump(2) + "\n");
  run.write_snapshot("evaluate", {{"metrics", args.metrics}}, input_hashes);
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"EEG representation learning, retrieval and synthesis toolkit"};
  app.require_subcommand(1);
  app.add_flag("--fast", g_fast, "relax single-worker determinism for throughput");

  MakeSyntheticArgs ms;
  auto* c_ms = app.add_subcommand("make-synthetic", "generate a synthetic EEGPACK container");
  c_ms->add_option("--out", ms.out)->required();
  c_ms->add_option("--classes", ms.spec.num_classes)->required();
  c_ms->add_option("--channels", ms.spec.channels)->required();
  c_ms->add_option("--timesteps", ms.spec.timesteps)->required();
  c_ms->add_option("--per-class", ms.spec.records_per_class)->required();
  c_ms->add_option("--separation", ms.spec.class_separation);
  c_ms->add_option("--noise", ms.spec.noise_scale);
  c_ms->add_option("--seed", ms.spec.seed);
  c_ms->add_flag("--images", ms.spec.with_images);
  c_ms->add_option("--image-size", ms.spec.image_size);

  TrainEncoderArgs te;
  auto* c_te = app.add_subcommand("train-encoder", "train an EEG encoder");
  c_te->add_option("--manifest", te.manifest)->required();
  c_te->add_option("--out", te.out)->required();
  c_te->add_option("--regime", te.regime)->check(CLI::IsMember({"supervised", "triplet"}));
  c_te->add_option("--encoder", te.encoder_kind)->check(CLI::IsMember({"lstm", "cnn"}));
  c_te->add_option("--embed-dim", te.embed_dim);
  c_te->add_option("--epochs", te.epochs);
  c_te->add_option("--batch-size", te.batch_size);
  c_te->add_option("--lr", te.lr);
  c_te->add_option("--margin", te.margin);
  c_te->add_option("--mining", te.mining)->check(CLI::IsMember({"semi_hard", "all_valid"}));
  c_te->add_option("--optimizer", te.optimizer)
      ->check(CLI::IsMember({"sgd_momentum", "adaptive_moments"}));
  c_te->add_option("--seed", te.seed);
  c_te->add_option("--checkpoint-every", te.checkpoint_every);
  c_te->add_option("--exclude-classes", te.exclude_classes);
  c_te->add_option("--normalize-output", te.normalize_output);

  TrainEncoderArgs ft;
  auto* c_ft = app.add_subcommand("finetune", "supervised finetuning from a checkpoint");
  c_ft->add_option("--manifest", ft.manifest)->required();
  c_ft->add_option("--out", ft.out)->required();
  c_ft->add_option("--checkpoint", ft.checkpoint)->required();
  c_ft->add_option("--epochs", ft.epochs);
  c_ft->add_option("--batch-size", ft.batch_size);
  c_ft->add_option("--lr", ft.lr);
  c_ft->add_option("--seed", ft.seed);
  c_ft->add_option("--optimizer", ft.optimizer)
      ->check(CLI::IsMember({"sgd_momentum", "adaptive_moments"}));

  TrainClipArgs tc;
  auto* c_tc = app.add_subcommand("train-clip", "joint EEG-image contrastive training");
  c_tc->add_option("--manifest", tc.manifest)->required();
  c_tc->add_option("--out", tc.out)->required();
  c_tc->add_option("--extractor", tc.extractor_ckpt);
  c_tc->add_option("--extractor-seed", tc.extractor_seed);
  c_tc->add_option("--encoder", tc.encoder_kind)->check(CLI::IsMember({"lstm", "cnn"}));
  c_tc->add_option("--embed-dim", tc.embed_dim);
  c_tc->add_option("--proj-dim", tc.proj_dim);
  c_tc->add_option("--epochs", tc.epochs);
  c_tc->add_option("--batch-size", tc.batch_size);
  c_tc->add_option("--lr", tc.lr);
  c_tc->add_option("--temperature", tc.temperature);
  c_tc->add_flag("--fixed-temperature", tc.fixed_temperature);
  c_tc->add_option("--seed", tc.seed);

  TrainGanArgs tg;
  auto* c_tg = app.add_subcommand("train-gan", "conditional image synthesis training");
  c_tg->add_option("--manifest", tg.manifest)->required();
  c_tg->add_option("--out", tg.out)->required();
  c_tg->add_option("--condition", tg.condition)->check(CLI::IsMember({"eeg", "one-hot"}));
  c_tg->add_option("--encoder", tg.encoder_ckpt);
  c_tg->add_option("--steps", tg.config.steps);
  c_tg->add_option("--batch-size", tg.config.batch_size);
  c_tg->add_option("--image-size", tg.config.image_size);
  c_tg->add_option("--noise-dim", tg.config.noise_dim);
  c_tg->add_option("--lr-g", tg.config.lr_g);
  c_tg->add_option("--lr-d", tg.config.lr_d);
  c_tg->add_option("--r1-gamma", tg.config.r1_gamma);
  c_tg->add_option("--r1-interval", tg.config.r1_interval);
  c_tg->add_option("--base-channels", tg.config.base_channels);
  c_tg->add_option("--eval-interval", tg.config.eval_interval);
  c_tg->add_option("--eval-slice", tg.config.eval_slice);
  c_tg->add_option("--seed", tg.config.seed);
  bool no_ada = false;
  c_tg->add_flag("--no-ada", no_ada);
  c_tg->add_option("--ada-step", tg.config.ada_step);
  c_tg->add_option("--ada-target", tg.config.ada_target);

  SynthesizeArgs sy;
  auto* c_sy = app.add_subcommand("synthesize", "sample images from a trained generator");
  c_sy->add_option("--generator", sy.generator_ckpt)->required();
  c_sy->add_option("--manifest", sy.manifest)->required();
  c_sy->add_option("--out", sy.out)->required();
  c_sy->add_option("--encoder", sy.encoder_ckpt);
  c_sy->add_option("--split", sy.split);
  c_sy->add_option("--count", sy.count);
  c_sy->add_option("--grid-cols", sy.grid_cols);
  c_sy->add_option("--seed", sy.seed);

  TranslateArgs tr;
  auto* c_tr = app.add_subcommand("translate-image", "map images into EEG space and reconstruct");
  c_tr->add_option("--manifest", tr.manifest)->required();
  c_tr->add_option("--out", tr.out)->required();
  c_tr->add_option("--encoder", tr.encoder_ckpt)->required();
  c_tr->add_option("--generator", tr.generator_ckpt)->required();
  c_tr->add_option("--extractor", tr.extractor_ckpt);
  c_tr->add_option("--extractor-seed", tr.extractor_seed);
  c_tr->add_option("--split", tr.split);
  c_tr->add_option("--count", tr.count);
  c_tr->add_option("--ridge", tr.ridge);
  c_tr->add_option("--seed", tr.seed);

  ZeroShotArgs zs;
  auto* c_zs = app.add_subcommand("zero-shot", "train excluding classes, probe the unseen ones");
  c_zs->add_option("--manifest", zs.manifest)->required();
  c_zs->add_option("--out", zs.out)->required();
  c_zs->add_option("--holdout", zs.holdout)->required();
  c_zs->add_option("--encoder", zs.train.encoder_kind)->check(CLI::IsMember({"lstm", "cnn"}));
  c_zs->add_option("--epochs", zs.train.epochs);
  c_zs->add_option("--batch-size", zs.train.batch_size);
  c_zs->add_option("--lr", zs.train.lr);
  c_zs->add_option("--margin", zs.train.margin);
  c_zs->add_option("--seed", zs.train.seed);

  ExportArgs ex;
  auto* c_ex = app.add_subcommand("export-embeddings", "encode a split and write CSV");
  c_ex->add_option("--manifest", ex.manifest)->required();
  c_ex->add_option("--checkpoint", ex.checkpoint)->required();
  c_ex->add_option("--split", ex.split);
  c_ex->add_option("--out", ex.out)->required();

  EvaluateArgs ev;
  auto* c_ev = app.add_subcommand("evaluate", "run metrics over exported artifacts");
  c_ev->add_option("--metrics", ev.metrics)->required();
  c_ev->add_option("--out", ev.out)->required();
  c_ev->add_option("--embeddings", ev.embeddings);
  c_ev->add_option("--train-embeddings", ev.train_embeddings);
  c_ev->add_option("--rankings", ev.rankings);
  c_ev->add_option("--probs", ev.probs);
  c_ev->add_option("--features-a", ev.features_a);
  c_ev->add_option("--features-b", ev.features_b);
  c_ev->add_option("--images-a", ev.images_a);
  c_ev->add_option("--images-b", ev.images_b);
  c_ev->add_option("--extractor", ev.extractor_ckpt);
  c_ev->add_option("--extractor-seed", ev.extractor_seed);
  c_ev->add_option("--k-list", ev.k_list);
  c_ev->add_option("--subset-size", ev.subset_size);
  c_ev->add_option("--subsets", ev.subsets);
  c_ev->add_option("--splits", ev.splits);
  c_ev->add_option("--restarts", ev.restarts);
  c_ev->add_option("--knn-k", ev.knn_k);
  c_ev->add_option("--svm-reg", ev.svm_reg);
  c_ev->add_option("--seed", ev.seed);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return e.get_exit_code() == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (*c_ms) return run_make_synthetic(ms);
    if (*c_te) return run_train_encoder(te, false);
    if (*c_ft) return run_train_encoder(ft, true);
    if (*c_tc) return run_train_clip(tc);
    if (*c_tg) {
      tg.config.ada_enabled = !no_ada;
      return run_train_gan(tg);
    }
    if (*c_sy) return run_synthesize(sy);
    if (*c_tr) return run_translate(tr);
    if (*c_zs) return run_zero_shot(zs);
    if (*c_ex) return run_export(ex);
    if (*c_ev) return run_evaluate(ev);
    std::cerr << "no subcommand selected\n";
    return kExitConfig;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const std::exception& e) {
    std::cerr << "runtime failure: " << e.what() << '\n';
    return kExitRuntime;
  }
}
