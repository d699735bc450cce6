#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>

#include "eegpack/gan.hpp"
#include "test_util.hpp"

using namespace eegpack;
using namespace eegpack::gan;
using namespace eegpack::nn;

namespace {

std::filesystem::path fresh_dir(const std::string& tag) {
  const auto dir = std::filesystem::temp_directory_path() / ("eegpack_gan_" + tag);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

data::DatasetManifest paired_dataset(const std::filesystem::path& dir, int classes = 4,
                                     int per_class = 12) {
  data::SyntheticSpec spec;
  spec.num_classes = classes;
  spec.channels = 6;
  spec.timesteps = 12;
  spec.records_per_class = per_class;
  spec.class_separation = 3.0;
  spec.noise_scale = 0.3;
  spec.seed = 44;
  spec.with_images = true;
  return data::make_synthetic(spec, dir);
}

std::unique_ptr<enc::Encoder> small_encoder(const data::DatasetManifest& m) {
  enc::EncoderConfig config;
  config.kind = enc::EncoderKind::lstm;
  config.input_channels = m.channels;
  config.input_timesteps = m.timesteps;
  config.embed_dim = 16;
  config.lstm_hidden = 16;
  return enc::build_encoder(config, 9);
}

}  // namespace

// ---------------------------------------------------------------------------
// ADA controller
// ---------------------------------------------------------------------------

TEST_CASE("ada update follows the sign rule and clamps") {
  AdaState s;
  s.p = 0.5;
  s.target = 0.6;
  s.adjustment_step = 0.01;

  // r = 1 > target: p rises by one step.
  Eigen::VectorXd pos = Eigen::VectorXd::Constant(8, 2.5);
  AdaState up = ada_update(s, pos);
  CHECK(up.overfit_estimate == doctest::Approx(1.0));
  CHECK(up.p == doctest::Approx(0.51));

  // r = 0 < target: p falls; floored at zero.
  Eigen::VectorXd zero = Eigen::VectorXd::Zero(8);
  AdaState down = ada_update(s, zero);
  CHECK(down.overfit_estimate == doctest::Approx(0.0));
  CHECK(down.p == doctest::Approx(0.49));
  AdaState floor = s;
  floor.p = 0.0;
  CHECK(ada_update(floor, zero).p == 0.0);

  // p = 1 with r = 1: stays at the ceiling.
  AdaState ceil = s;
  ceil.p = 1.0;
  CHECK(ada_update(ceil, pos).p == 1.0);

  Eigen::VectorXd empty;
  CHECK_THROWS(ada_update(s, empty));
}

TEST_CASE("ada p stays in [0,1] under arbitrary update sequences") {
  Rng rng = make_rng(3);
  AdaState s;
  s.adjustment_step = 0.05;
  for (int i = 0; i < 2000; ++i) {
    Eigen::VectorXd batch(4);
    for (int j = 0; j < 4; ++j) batch(j) = rng.normal();
    s = ada_update(s, batch);
    CHECK(s.p >= 0.0);
    CHECK(s.p <= 1.0);
  }
}

// ---------------------------------------------------------------------------
// Networks / synthesis
// ---------------------------------------------------------------------------

TEST_CASE("synthesize is deterministic, bounded and shape-checked") {
  Generator g(16, 8, 6, 32, 5);
  LatentInput input;
  input.condition = Eigen::VectorXd::LinSpaced(8, -1.0, 1.0);
  input.noise = Eigen::VectorXd::LinSpaced(6, 0.5, -0.5);

  const Tensor a = synthesize(g, input);
  const Tensor b = synthesize(g, input);
  CHECK(a.shape() == std::vector<long>{3, 16, 16});
  CHECK((a.raw() - b.raw()).abs().maxCoeff() == 0.0);
  CHECK(a.raw().maxCoeff() <= 1.0);
  CHECK(a.raw().minCoeff() >= -1.0);

  LatentInput bad = input;
  bad.noise = Eigen::VectorXd::Zero(5);
  CHECK_THROWS_AS(synthesize(g, bad), DataError);
}

TEST_CASE("untrained generator output is bounded for random latents") {
  Generator g(32, 16, 64, 64, 123);
  Rng rng = make_rng(7);
  LatentInput input;
  input.condition.resize(16);
  input.noise.resize(64);
  for (long i = 0; i < 16; ++i) input.condition(i) = rng.normal();
  for (long i = 0; i < 64; ++i) input.noise(i) = rng.normal();
  const Tensor out = synthesize(g, input);
  CHECK(out.raw().maxCoeff() <= 1.0);
  CHECK(out.raw().minCoeff() >= -1.0);
  CHECK(std::isfinite(out.raw().sum()));
}

TEST_CASE("augmentations: identity at p=0, exact flip/translate/jitter") {
  Rng rng = make_rng(9);
  Tensor image({4 * 4, 3});
  for (long i = 0; i < image.size(); ++i) image.raw()[i] = rng.uniform(-1.0, 1.0);

  auto none = draw_augmentations(1, 4, 0.0, rng);
  Var same = apply_augmentations(Var(image), 1, 4, none);
  CHECK((same.value().raw() - image.raw()).abs().maxCoeff() == 0.0);

  // Horizontal flip mirrors columns.
  std::vector<AugmentationDraw> flip(1);
  flip[0].flip = true;
  Var flipped = apply_augmentations(Var(image), 1, 4, flip);
  for (long y = 0; y < 4; ++y)
    for (long x = 0; x < 4; ++x)
      for (long c = 0; c < 3; ++c)
        CHECK(flipped.value().mat()(y * 4 + x, c) == image.mat()(y * 4 + (3 - x), c));

  // Translate by (dx=1, dy=0): column 0 becomes zero padding.
  std::vector<AugmentationDraw> shift(1);
  shift[0].dx = 1;
  Var shifted = apply_augmentations(Var(image), 1, 4, shift);
  for (long y = 0; y < 4; ++y) {
    for (long c = 0; c < 3; ++c) CHECK(shifted.value().mat()(y * 4 + 0, c) == 0.0);
    for (long x = 1; x < 4; ++x)
      for (long c = 0; c < 3; ++c)
        CHECK(shifted.value().mat()(y * 4 + x, c) == image.mat()(y * 4 + x - 1, c));
  }

  // Colour jitter is an exact per-channel affine map.
  std::vector<AugmentationDraw> jitter(1);
  jitter[0].jitter = true;
  jitter[0].channel_scale[0] = 1.5;
  jitter[0].channel_shift[2] = 0.25;
  Var jittered = apply_augmentations(Var(image), 1, 4, jitter);
  CHECK(jittered.value().mat()(5, 0) == doctest::Approx(1.5 * image.mat()(5, 0)));
  CHECK(jittered.value().mat()(5, 2) == doctest::Approx(image.mat()(5, 2) + 0.25));
}

TEST_CASE("a generator step leaves the discriminator untouched") {
  const auto dir = fresh_dir("freeze");
  auto manifest = paired_dataset(dir);
  auto encoder = small_encoder(manifest);

  Generator g(32, 16, 8, 32, 1);
  Discriminator d(32, 16, 32, 2);
  const std::string d_hash = params_hash(d.params());

  Rng rng = make_rng(4);
  Tensor conds({4, 16});
  Tensor z({4, 8});
  for (long i = 0; i < conds.size(); ++i) conds.raw()[i] = rng.normal();
  for (long i = 0; i < z.size(); ++i) z.raw()[i] = rng.normal();

  Var fakes = g.forward(Var(conds), Var(z));
  Var scores = d.forward(fakes, Var(conds), 4);
  Var loss = mean_all(softplus(neg(scores)));
  auto grads = gradients(loss, param_vars(g.params()));
  auto opt = make_adam({});
  opt->step(g.params(), grads);

  CHECK(params_hash(d.params()) == d_hash);
  // And the generator did change.
  Var fakes2 = g.forward(Var(conds), Var(z));
  CHECK((fakes2.value().raw() - fakes.value().raw()).abs().maxCoeff() > 0.0);
}

// ---------------------------------------------------------------------------
// Training smoke (micro scale; full smoke lives in the acceptance suite)
// ---------------------------------------------------------------------------

TEST_CASE("gan micro-run: finite losses, ada bounds, disabled controller") {
  const auto dir = fresh_dir("micro");
  auto manifest = paired_dataset(dir);
  auto encoder = small_encoder(manifest);

  GanConfig config;
  config.steps = 8;
  config.batch_size = 8;
  config.base_channels = 24;
  config.eval_interval = 4;
  config.eval_slice = 8;
  config.seed = 3;

  Generator g = make_generator(manifest, encoder.get(), config);
  auto out = train_gan(manifest, encoder.get(), config, g);
  REQUIRE(out.history.size() == 8);
  for (const auto& row : out.history) {
    CHECK(std::isfinite(row.g_loss));
    CHECK(std::isfinite(row.d_loss));
    CHECK(row.ada_p >= 0.0);
    CHECK(row.ada_p <= 1.0);
  }
  CHECK(out.fid_initial > 0.0);

  // Controller off: p never leaves zero.
  GanConfig off = config;
  off.ada_enabled = false;
  Generator g2 = make_generator(manifest, encoder.get(), off);
  auto out2 = train_gan(manifest, encoder.get(), off, g2);
  CHECK(out2.ada_p_min == 0.0);
  CHECK(out2.ada_p_max == 0.0);
}

TEST_CASE("one-hot conditioning runs the identical loop with class-width conditions") {
  const auto dir = fresh_dir("onehot");
  auto manifest = paired_dataset(dir);

  GanConfig config;
  config.condition_mode = ConditionMode::one_hot;
  config.steps = 4;
  config.batch_size = 8;
  config.base_channels = 24;
  config.eval_interval = 0;
  config.seed = 5;

  Generator g = make_generator(manifest, nullptr, config);
  CHECK(g.condition_dim() == manifest.num_classes);
  auto out = train_gan(manifest, nullptr, config, g);
  CHECK(out.history.size() == 4);
}

TEST_CASE("generator checkpoints round trip") {
  Generator g(16, 8, 6, 24, 12);
  const auto path = fresh_dir("gckpt") / "gen.ckpt";
  g.save(path, {{"note", "t"}});
  Generator loaded = Generator::load(path);
  LatentInput input;
  input.condition = Eigen::VectorXd::Ones(8) * 0.3;
  input.noise = Eigen::VectorXd::Ones(6) * -0.2;
  // float32 storage: small, bounded divergence.
  CHECK((synthesize(g, input).raw() - synthesize(loaded, input).raw()).abs().maxCoeff() < 1e-5);
}

// ---------------------------------------------------------------------------
// Image -> EEG translation
// ---------------------------------------------------------------------------

TEST_CASE("linear map fit recovers an exact linear ground truth") {
  Rng rng = make_rng(21);
  const long n = 60, din = 10, dout = 6;
  Eigen::MatrixXd x(n, din), truth(din, dout);
  for (long i = 0; i < n; ++i)
    for (long j = 0; j < din; ++j) x(i, j) = rng.normal();
  for (long i = 0; i < din; ++i)
    for (long j = 0; j < dout; ++j) truth(i, j) = rng.normal();
  const Eigen::MatrixXd y = x * truth;

  Translator t = fit_linear_map(x.topRows(40), y.topRows(40), 1e-10, false);
  const Eigen::MatrixXd pred = t.apply(x.bottomRows(20));
  const double mse =
      (pred - y.bottomRows(20)).squaredNorm() / static_cast<double>(20 * dout);
  CHECK(mse <= 1e-3);
}

TEST_CASE("identity feature spaces are recovered to 1e-4") {
  Rng rng = make_rng(22);
  const long n = 50, d = 8;
  Eigen::MatrixXd x(n, d);
  for (long i = 0; i < n; ++i)
    for (long j = 0; j < d; ++j) x(i, j) = rng.normal();
  Translator t = fit_linear_map(x, x, 1e-10, false);
  const double mse = (t.apply(x) - x).squaredNorm() / static_cast<double>(n * d);
  CHECK(mse <= 1e-4);
}

TEST_CASE("fit_image_to_eeg reports held-out error and renormalizes unit spaces") {
  const auto dir = fresh_dir("i2e");
  auto manifest = paired_dataset(dir, 4, 14);
  auto encoder = small_encoder(manifest);
  enc::ConvBackboneExtractor extractor(32, 24, 7);

  TranslatorFit fit = fit_image_to_eeg(extractor, *encoder, manifest);
  CHECK(std::isfinite(fit.val_mse));
  CHECK(fit.translator.renormalize);  // encoder normalizes its output space

  // Translated features are unit norm, matching the EEG space convention.
  data::SplitView view = data::load_split(manifest, "test");
  img::Image image = data::load_record_image(manifest, view.image_ids.at(0));
  const Eigen::MatrixXd mapped = fit.translator.apply(extractor.extract(image).transpose());
  CHECK(mapped.row(0).norm() == doctest::Approx(1.0).epsilon(1e-9));

  // Translate-then-synthesize composes into a valid bounded image.
  Generator g(32, 16, 8, 24, 3);
  LatentInput input;
  input.condition = mapped.row(0);
  input.noise = Eigen::VectorXd::Zero(8);
  const Tensor out = synthesize(g, input);
  CHECK(out.raw().maxCoeff() <= 1.0);
  CHECK(out.raw().minCoeff() >= -1.0);
}

TEST_CASE("translator checkpoints round trip") {
  Rng rng = make_rng(30);
  Eigen::MatrixXd x(20, 4), y(20, 3);
  for (long i = 0; i < 20; ++i) {
    for (long j = 0; j < 4; ++j) x(i, j) = rng.normal();
    for (long j = 0; j < 3; ++j) y(i, j) = rng.normal();
  }
  Translator t = fit_linear_map(x, y, 1e-8, false);
  const auto path = fresh_dir("tckpt") / "translator.ckpt";
  t.save(path, {});
  Translator loaded = Translator::load(path);
  CHECK((loaded.apply(x) - t.apply(x)).cwiseAbs().maxCoeff() < 1e-5);
}
