#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>

#include "eegpack/metric.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace eegpack;
using namespace eegpack::metric;
using namespace eegpack::nn;
using testutil::fd_gradient;
using testutil::max_rel_err;
using testutil::random_tensor;

namespace {

std::filesystem::path fresh_dir(const std::string& tag) {
  const auto dir = std::filesystem::temp_directory_path() / ("eegpack_metric_" + tag);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

std::pair<Eigen::MatrixXd, std::vector<int>> random_instance(Rng& rng, long B, long D,
                                                             int classes) {
  Eigen::MatrixXd e(B, D);
  for (long i = 0; i < B; ++i)
    for (long j = 0; j < D; ++j) e(i, j) = rng.normal();
  std::vector<int> labels;
  for (long i = 0; i < B; ++i) labels.push_back(static_cast<int>(rng.below(static_cast<std::uint64_t>(classes))));
  return {e, labels};
}

}  // namespace

TEST_CASE("semi-hard band: the worked 1-D example") {
  Eigen::MatrixXd e(4, 1);
  e << 0.0, 0.1, 0.3, 2.0;
  const std::vector<int> labels = {0, 0, 1, 1};
  auto mined = mine_semihard(e, labels, 0.5);
  // (0,1): d=0.01, band (0.01,0.51); d(0,2)=0.09 in band, d(0,3)=4.0 out.
  const bool has_012 = std::any_of(mined.triples.begin(), mined.triples.end(),
                                   [](const auto& t) { return t == std::array<long, 3>{0, 1, 2}; });
  const bool has_013 = std::any_of(mined.triples.begin(), mined.triples.end(),
                                   [](const auto& t) { return t == std::array<long, 3>{0, 1, 3}; });
  CHECK(has_012);
  CHECK_FALSE(has_013);
}

TEST_CASE("collapsed embeddings and vanishing margin mine nothing") {
  Eigen::MatrixXd e = Eigen::MatrixXd::Zero(6, 3);
  const std::vector<int> labels = {0, 0, 1, 1, 2, 2};
  CHECK(mine_semihard(e, labels, 0.5).empty());  // 0 < 0 is false

  Rng rng = make_rng(3);
  auto [er, lr] = random_instance(rng, 12, 4, 3);
  CHECK(mine_semihard(er, lr, 1e-15).empty());
}

TEST_CASE("mining equals brute force on random instances") {
  Rng rng = make_rng(17);
  for (int trial = 0; trial < 40; ++trial) {
    const long B = 3 + static_cast<long>(rng.below(30));
    const int classes = 2 + static_cast<int>(rng.below(5));
    auto [e, labels] = random_instance(rng, B, 5, classes);
    const double margin = std::vector<double>{0.1, 0.2, 1.0}[rng.below(3)];
    auto mined = mine_semihard(e, labels, margin);
    auto expected = oracles::semihard_bruteforce(e, labels, margin);
    REQUIRE(mined.triples.size() == expected.size());
    CHECK(std::equal(mined.triples.begin(), mined.triples.end(), expected.begin()));
    // Lexicographic ordering contract.
    CHECK(std::is_sorted(mined.triples.begin(), mined.triples.end()));
  }
}

TEST_CASE("triplet loss: hand cases") {
  // a == p (distance 0), d(a,n) = 0, margin 0.5 -> contribution 0.5.
  Eigen::MatrixXd z = Eigen::MatrixXd::Zero(3, 2);
  TripletIndexSet set;
  set.triples.push_back({0, 1, 2});
  Var loss = triplet_loss(Var(Tensor::from_matrix(z)), set, 0.5);
  CHECK(loss.value().item() == doctest::Approx(0.5).epsilon(1e-12));

  // d(a,p)=0, d(a,n)=1, margin 0.5 -> hinge clamps to 0.
  Eigen::MatrixXd e(3, 1);
  e << 0.0, 0.0, 1.0;
  Var loss2 = triplet_loss(Var(Tensor::from_matrix(e)), set, 0.5);
  CHECK(loss2.value().item() == 0.0);
}

TEST_CASE("triplet loss equals the double-loop oracle and is nonnegative") {
  Rng rng = make_rng(29);
  for (int trial = 0; trial < 20; ++trial) {
    auto [e, labels] = random_instance(rng, 16, 6, 3);
    auto mined = mine_all_valid(e, labels);
    if (mined.empty()) continue;
    const double margin = 0.4;
    Var loss = triplet_loss(Var(Tensor::from_matrix(e)), mined, margin);
    const double expected = oracles::triplet_loss_bruteforce(e, mined.triples, margin);
    CHECK(std::abs(loss.value().item() - expected) <= 1e-6);
    CHECK(loss.value().item() >= 0.0);
  }
}

TEST_CASE("hinge floor: exact-zero case constructed") {
  // d(a,n) = d(a,p) + margin exactly: hinge(0) = 0.
  Eigen::MatrixXd e(3, 1);
  e << 0.0, 1.0, std::sqrt(1.5);  // dap = 1, dan = 1.5, margin 0.5
  TripletIndexSet set;
  set.triples.push_back({0, 1, 2});
  Var loss = triplet_loss(Var(Tensor::from_matrix(e)), set, 0.5);
  CHECK(loss.value().item() == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("triplet loss gradients match finite differences to 1e-4") {
  Rng rng = make_rng(31);
  for (int trial = 0; trial < 10; ++trial) {
    auto [e, labels] = random_instance(rng, 12, 5, 3);
    auto mined = mine_semihard(e, labels, 1.0);
    if (mined.empty()) continue;
    Tensor e0 = Tensor::from_matrix(e);
    Var v(e0, true);
    auto grads = gradients(triplet_loss(v, mined, 1.0), {v});
    Tensor fd = fd_gradient(
        [&](const Tensor& t) {
          NoGradGuard ng;
          return triplet_loss(Var(t), mined, 1.0).value().item();
        },
        e0);
    CHECK(max_rel_err(grads[0], fd) <= 1e-4);
  }
}

TEST_CASE("empty triple set is a skip signal") {
  TripletIndexSet empty;
  CHECK_THROWS_AS(triplet_loss(Var(Tensor::zeros({2, 2})), empty, 0.2), std::invalid_argument);
}

// ---------------------------------------------------------------------------
// Training loops (desk micro-scale; the acceptance suite runs the full-size
// pipelines).
// ---------------------------------------------------------------------------

namespace {

data::DatasetManifest overlapping_dataset(const std::filesystem::path& dir, int classes = 3,
                                          int per_class = 24, std::uint64_t seed = 11) {
  data::SyntheticSpec spec;
  spec.num_classes = classes;
  spec.channels = 8;
  spec.timesteps = 16;
  spec.records_per_class = per_class;
  spec.class_separation = 0.6;
  spec.noise_scale = 0.8;
  spec.seed = seed;
  return data::make_synthetic(spec, dir);
}

enc::EncoderConfig tiny_lstm(const data::DatasetManifest& m, bool normalize = true) {
  enc::EncoderConfig config;
  config.kind = enc::EncoderKind::lstm;
  config.input_channels = m.channels;
  config.input_timesteps = m.timesteps;
  config.embed_dim = 16;
  config.lstm_hidden = 24;
  config.normalize_output = normalize;
  return config;
}

}  // namespace

TEST_CASE("triplet training reduces the mined loss on overlapping classes") {
  auto manifest = overlapping_dataset(fresh_dir("triplet"));
  auto encoder = enc::build_encoder(tiny_lstm(manifest), 7);
  TripletConfig triplet;
  TrainConfig config;
  config.epochs = 8;
  config.batch_size = 18;
  config.seed = 5;
  auto out = train_triplet(*encoder, manifest, triplet, config);
  REQUIRE(out.history.size() == 8);
  CHECK(out.history.front().mined_fraction > 0.0);
  CHECK(out.history.back().loss < out.history.front().loss);
}

TEST_CASE("identical seeds give identical histories") {
  const auto dir = fresh_dir("determ");
  auto manifest = overlapping_dataset(dir);
  auto run = [&] {
    auto encoder = enc::build_encoder(tiny_lstm(manifest), 3);
    TripletConfig triplet;
    TrainConfig config;
    config.epochs = 3;
    config.batch_size = 12;
    config.seed = 9;
    return train_triplet(*encoder, manifest, triplet, config);
  };
  auto a = run();
  auto b = run();
  REQUIRE(a.history.size() == b.history.size());
  for (std::size_t i = 0; i < a.history.size(); ++i) {
    CHECK(a.history[i].loss == b.history[i].loss);
    CHECK(a.history[i].mined_fraction == b.history[i].mined_fraction);
    CHECK(a.history[i].val_metric == b.history[i].val_metric);
  }
}

TEST_CASE("a singleton class is a precondition error for triplet training") {
  const auto dir = fresh_dir("singleton");
  std::map<std::string, std::vector<data::EEGRecord>> records;
  Rng rng = make_rng(2);
  for (int i = 0; i < 5; ++i) {
    data::EEGRecord rec;
    rec.signal = Eigen::MatrixXd::Zero(4, 8);
    for (long c = 0; c < 4; ++c)
      for (long n = 0; n < 8; ++n) rec.signal(c, n) = rng.normal();
    rec.label = i < 4 ? 0 : 1;
    records["train"].push_back(rec);
  }
  data::write_container(dir, "lone", 4, 8, 2, false, "", records);
  auto manifest = data::load_manifest(dir);
  auto encoder = enc::build_encoder(tiny_lstm(manifest), 1);
  TripletConfig triplet;
  TrainConfig config;
  config.epochs = 1;
  config.batch_size = 4;
  CHECK_THROWS_AS(train_triplet(*encoder, manifest, triplet, config), DataError);
}

TEST_CASE("supervised training learns; zero learning rate changes nothing") {
  const auto dir = fresh_dir("supervised");
  data::SyntheticSpec spec;
  spec.num_classes = 3;
  spec.channels = 8;
  spec.timesteps = 16;
  spec.records_per_class = 30;
  spec.class_separation = 1.2;
  spec.noise_scale = 0.5;
  spec.seed = 11;
  auto manifest = data::make_synthetic(spec, dir);
  auto config = tiny_lstm(manifest, /*normalize=*/false);

  // Learnable setup improves on chance.
  auto encoder = enc::build_encoder(config, 13);
  enc::ClassifierHead head(config.embed_dim, manifest.num_classes);
  TrainConfig tc;
  tc.epochs = 20;
  tc.batch_size = 16;
  tc.seed = 4;
  tc.learning_rate = 3e-3;
  auto out = train_supervised(*encoder, head, manifest, tc);
  CHECK(out.history.back().train_metric > 0.8);

  // lr = 0: parameters byte-identical, accuracy flat.
  auto frozen = enc::build_encoder(config, 13);
  enc::ClassifierHead frozen_head(config.embed_dim, manifest.num_classes);
  const std::string hash_before = params_hash(frozen->params());
  TrainConfig tz = tc;
  tz.epochs = 3;
  tz.learning_rate = 0.0;
  auto out_z = train_supervised(*frozen, frozen_head, manifest, tz);
  CHECK(params_hash(frozen->params()) == hash_before);
  CHECK(out_z.history.front().val_metric == out_z.history.back().val_metric);
}

TEST_CASE("label shuffling memorizes train but stays near chance on val") {
  // Pure-noise records (separation ~ 0) with randomly assigned labels: the
  // network can only memorize.
  const auto dir = fresh_dir("shuffle");
  data::SyntheticSpec spec;
  spec.num_classes = 2;
  spec.channels = 8;
  spec.timesteps = 16;
  spec.records_per_class = 50;
  spec.class_separation = 1e-6;  // labels carry no signal
  spec.noise_scale = 1.0;
  spec.seed = 23;
  auto manifest = data::make_synthetic(spec, dir);

  auto config = tiny_lstm(manifest, false);
  config.lstm_hidden = 48;
  auto encoder = enc::build_encoder(config, 3);
  enc::ClassifierHead head(config.embed_dim, manifest.num_classes);
  TrainConfig tc;
  tc.epochs = 60;
  tc.batch_size = 12;
  tc.learning_rate = 2e-3;
  tc.seed = 6;
  auto out = train_supervised(*encoder, head, manifest, tc);
  CHECK(out.history.back().train_metric >= 0.9);
  CHECK(std::abs(out.history.back().val_metric - 0.5) <= 0.15);
}

TEST_CASE("history CSV serializes the documented four columns") {
  const auto dir = fresh_dir("csv");
  std::vector<HistoryRow> rows{{1, 0.5, 1.0, 0.25, 0.9}, {2, 0.25, 0.75, 0.5, 0.95}};
  write_history_csv(dir / "history.csv", rows);
  const std::string text = read_text_file(dir / "history.csv");
  CHECK(text.rfind("epoch,loss,mined_fraction,val_metric\n", 0) == 0);
  CHECK(text.find("1,0.5,1,0.25\n") != std::string::npos);
  CHECK(text.find("0.9") == std::string::npos);  // train metric is in-memory only
}
