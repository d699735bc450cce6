#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <nlohmann/json.hpp>
#include <set>
#include <thread>

#include "eegpack/data.hpp"
#include "test_util.hpp"

using namespace eegpack;
using namespace eegpack::data;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& tag) {
  const fs::path dir = fs::temp_directory_path() / ("eegpack_data_" + tag);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::map<std::string, std::vector<EEGRecord>> tiny_records(int channels, int timesteps,
                                                           int num_classes, int per_class_train) {
  Rng rng = make_rng(5);
  std::map<std::string, std::vector<EEGRecord>> out;
  for (int k = 0; k < num_classes; ++k)
    for (int i = 0; i < per_class_train; ++i) {
      EEGRecord rec;
      rec.signal.resize(channels, timesteps);
      for (int c = 0; c < channels; ++c)
        for (int n = 0; n < timesteps; ++n)
          rec.signal(c, n) = static_cast<double>(static_cast<float>(rng.normal()));
      rec.label = k;
      rec.subject = i;
      out["train"].push_back(rec);
      rec.subject = i + 100;
      out["test"].push_back(rec);
    }
  return out;
}

}  // namespace

TEST_CASE("paper-shaped containers load with the right geometry") {
  // EEGCVPR40 shape: 128 channels x 440 timesteps, 40 classes.
  const auto dir = temp_dir("cvpr40");
  write_container(dir, "cvpr40-shaped", 128, 440, 40, true, "raw", tiny_records(128, 440, 40, 1));
  DatasetManifest m = load_manifest(dir);
  CHECK(m.channels == 128);
  CHECK(m.timesteps == 440);
  CHECK(m.num_classes == 40);
  CHECK(m.total_records() == 80);

  // ThoughtViz shape: 14 x 32, 10 classes.
  const auto dir2 = temp_dir("tviz");
  write_container(dir2, "tviz-shaped", 14, 32, 10, true, "raw", tiny_records(14, 32, 10, 2));
  DatasetManifest m2 = load_manifest(dir2);
  CHECK(m2.channels == 14);
  CHECK(m2.timesteps == 32);
  CHECK(m2.num_classes == 10);

  // Object shape: 124 x 32, 6 classes.
  const auto dir3 = temp_dir("object");
  write_container(dir3, "object-shaped", 124, 32, 6, true, "raw", tiny_records(124, 32, 6, 2));
  DatasetManifest m3 = load_manifest(dir3);
  CHECK(m3.channels == 124);
  CHECK(m3.timesteps == 32);
}

TEST_CASE("blob with a wrong-length record is a geometry error") {
  const auto dir = temp_dir("badgeo");
  write_container(dir, "bad", 4, 8, 2, false, "", tiny_records(4, 8, 2, 2));
  // Truncate the train blob by one float.
  const auto blob = dir / "train.f32";
  const auto size = fs::file_size(blob);
  fs::resize_file(blob, size - 4);
  CHECK_THROWS_AS(load_manifest(dir), DataError);
}

TEST_CASE("overlapping splits are rejected") {
  const auto dir = temp_dir("overlap");
  write_container(dir, "ovl", 4, 8, 2, false, "", tiny_records(4, 8, 2, 2));
  auto manifest_text = read_text_file(dir / "manifest.json");
  auto j = nlohmann::json::parse(manifest_text);
  j["splits"]["extra"] = j["splits"]["train"];
  write_text_file(dir / "manifest.json", j.dump());
  CHECK_THROWS_AS(load_manifest(dir), DataError);
}

TEST_CASE("non-finite records are rejected at ingestion") {
  const auto dir = temp_dir("nan");
  write_container(dir, "nan", 2, 4, 1, false, "", tiny_records(2, 4, 1, 2));
  // Poison one float in the train blob.
  auto bytes = read_binary_file(dir / "train.f32");
  const float bad = std::numeric_limits<float>::quiet_NaN();
  std::memcpy(bytes.data(), &bad, 4);
  write_binary_file(dir / "train.f32", bytes.data(), bytes.size());
  DatasetManifest m = load_manifest(dir);
  CHECK_THROWS_AS(load_split(m, "train"), DataError);
}

TEST_CASE("labels outside num_classes are rejected") {
  const auto dir = temp_dir("badlabel");
  auto records = tiny_records(2, 4, 2, 2);
  records["train"][0].label = 7;
  CHECK_THROWS_AS(write_container(dir, "bad", 2, 4, 2, false, "", records), DataError);
}

TEST_CASE("write/load round trip is bit exact without normalization") {
  const auto dir = temp_dir("roundtrip");
  auto records = tiny_records(3, 5, 2, 3);
  write_container(dir, "rt", 3, 5, 2, /*normalize=*/false, "", records);
  DatasetManifest m = load_manifest(dir);
  SplitView view = load_split(m, "train");
  REQUIRE(view.count() == 6);
  for (long i = 0; i < view.count(); ++i) {
    const auto loaded = view.record_signal(i);
    const auto& original = records["train"][static_cast<std::size_t>(i)].signal;
    CHECK((loaded - original).cwiseAbs().maxCoeff() == 0.0);
  }
}

TEST_CASE("z-normalization yields per-channel zero mean unit variance") {
  const auto dir = temp_dir("norm");
  write_container(dir, "norm", 3, 16, 2, /*normalize=*/true, "", tiny_records(3, 16, 2, 3));
  DatasetManifest m = load_manifest(dir);
  SplitView view = load_split(m, "train");
  for (long i = 0; i < view.count(); ++i) {
    const auto sig = view.record_signal(i);
    for (long c = 0; c < 3; ++c) {
      CHECK(std::abs(sig.row(c).mean()) < 1e-12);
      const double var = sig.row(c).array().square().mean();
      CHECK(var == doctest::Approx(1.0).epsilon(1e-9));
    }
  }
}

TEST_CASE("synthetic generation is byte identical for a fixed seed") {
  SyntheticSpec spec;
  spec.num_classes = 3;
  spec.channels = 14;
  spec.timesteps = 32;
  spec.records_per_class = 10;
  spec.class_separation = 5.0;
  spec.noise_scale = 0.1;
  spec.seed = 7;
  spec.with_images = true;

  const auto a = temp_dir("synth_a");
  const auto b = temp_dir("synth_b");
  make_synthetic(spec, a);
  make_synthetic(spec, b);
  CHECK(hash_container_hex(a) == hash_container_hex(b));
}

TEST_CASE("zero noise collapses every record of a class onto its template") {
  SyntheticSpec spec;
  spec.num_classes = 2;
  spec.channels = 4;
  spec.timesteps = 8;
  spec.records_per_class = 6;
  spec.class_separation = 2.0;
  spec.noise_scale = 0.0;
  spec.seed = 3;
  const auto dir = temp_dir("zeronoise");
  DatasetManifest m = make_synthetic(spec, dir);
  SplitView view = load_split(m, "train");
  for (long i = 1; i < view.count(); ++i) {
    if (view.labels[static_cast<std::size_t>(i)] != view.labels[0]) continue;
    CHECK((view.record_signal(i) - view.record_signal(0)).cwiseAbs().maxCoeff() == 0.0);
  }
}

TEST_CASE("separation dominates within-class spread on the emitted container") {
  // Measured directly on the written file: between-class template distance
  // must exceed 10x the within-class spread.
  SyntheticSpec spec;
  spec.num_classes = 3;
  spec.channels = 14;
  spec.timesteps = 32;
  spec.records_per_class = 30;
  spec.class_separation = 5.0;
  spec.noise_scale = 0.1;
  spec.seed = 13;
  const auto dir = temp_dir("sep");
  DatasetManifest m = make_synthetic(spec, dir);
  SplitView view = load_split(m, "train");

  std::map<int, Eigen::MatrixXd> mean;
  std::map<int, long> count;
  for (long i = 0; i < view.count(); ++i) {
    const int label = view.labels[static_cast<std::size_t>(i)];
    if (!mean.count(label)) mean[label] = Eigen::MatrixXd::Zero(14, 32);
    mean[label] += view.record_signal(i);
    count[label]++;
  }
  for (auto& [label, m2] : mean) m2 /= static_cast<double>(count[label]);

  double within = 0.0;
  for (long i = 0; i < view.count(); ++i)
    within += (view.record_signal(i) - mean[view.labels[static_cast<std::size_t>(i)]]).norm();
  within /= static_cast<double>(view.count());

  double min_between = std::numeric_limits<double>::max();
  for (const auto& [la, ma] : mean)
    for (const auto& [lb, mb] : mean)
      if (la < lb) min_between = std::min(min_between, (ma - mb).norm());

  CHECK(min_between > 10.0 * within);
}

TEST_CASE("split partition: sizes add up and locators are disjoint") {
  Rng rng = make_rng(99);
  for (int trial = 0; trial < 8; ++trial) {
    SyntheticSpec spec;
    spec.num_classes = 2 + static_cast<int>(rng.below(4));
    spec.channels = 2 + static_cast<int>(rng.below(6));
    spec.timesteps = 4 + static_cast<int>(rng.below(12));
    spec.records_per_class = 10 + static_cast<int>(rng.below(20));
    spec.class_separation = 1.0;
    spec.noise_scale = 0.2;
    spec.seed = rng.next_u64();
    const auto dir = temp_dir("split" + std::to_string(trial));
    DatasetManifest m = make_synthetic(spec, dir);

    long total = 0;
    std::set<std::string> seen;
    for (const auto& [split, locs] : m.splits) {
      total += static_cast<long>(locs.size());
      for (const auto& loc : locs) CHECK(seen.insert(loc.str()).second);
    }
    CHECK(total == spec.num_classes * spec.records_per_class);
  }
}

TEST_CASE("plain batches: partition arithmetic and seeded reproducibility") {
  const auto dir = temp_dir("batches");
  DatasetManifest m = [&] {
    SyntheticSpec spec;
    spec.num_classes = 2;
    spec.channels = 3;
    spec.timesteps = 6;
    spec.records_per_class = 10;
    spec.class_separation = 1.0;
    spec.noise_scale = 0.1;
    spec.seed = 4;
    return make_synthetic(spec, dir);
  }();
  SplitView view = load_split(m, "train");  // 16 records
  REQUIRE(view.count() == 16);

  // 10 records, batch 4 -> 4,4,2 on a sub-view.
  SplitView ten = view;
  ten.labels.resize(10);
  ten.subjects.resize(10);
  ten.image_ids.resize(10);
  ten.record_ids.resize(10);
  ten.signals = nn::Tensor({10, view.channels, view.timesteps},
                           view.signals.raw().head(10 * view.channels * view.timesteps));
  BatchStream stream(ten, 4, 17, false);
  std::vector<long> sizes;
  while (auto b = stream.next()) sizes.push_back(static_cast<long>(b->labels.size()));
  CHECK(sizes == std::vector<long>{4, 4, 2});

  // Same seed twice: identical order.
  BatchStream s1(view, 5, 123, false), s2(view, 5, 123, false);
  while (true) {
    auto a = s1.next();
    auto b = s2.next();
    CHECK(a.has_value() == b.has_value());
    if (!a) break;
    CHECK(a->indices == b->indices);
  }
}

TEST_CASE("balanced batches keep >= 2 records per contained class, full coverage") {
  Rng rng = make_rng(7);
  for (int trial = 0; trial < 10; ++trial) {
    SyntheticSpec spec;
    spec.num_classes = 2 + static_cast<int>(rng.below(5));
    spec.channels = 2;
    spec.timesteps = 4;
    spec.records_per_class = 4 + static_cast<int>(rng.below(18));
    spec.class_separation = 1.0;
    spec.noise_scale = 0.1;
    spec.seed = rng.next_u64();
    const auto dir = temp_dir("bal" + std::to_string(trial));
    DatasetManifest m = make_synthetic(spec, dir);
    SplitView view = load_split(m, "train");

    const long batch_size = 4 + static_cast<long>(rng.below(12));
    BatchStream stream(view, batch_size, rng.next_u64(), true);
    std::vector<long> covered;
    while (auto batch = stream.next()) {
      std::map<int, int> per_class;
      for (int l : batch->labels) per_class[l]++;
      for (const auto& [label, count] : per_class) CHECK(count >= 2);
      covered.insert(covered.end(), batch->indices.begin(), batch->indices.end());
    }
    std::sort(covered.begin(), covered.end());
    CHECK(static_cast<long>(covered.size()) == view.count());
    CHECK(std::adjacent_find(covered.begin(), covered.end()) == covered.end());
  }
}

TEST_CASE("balanced batching errors when a class has a single record") {
  const auto dir = temp_dir("singleton");
  std::map<std::string, std::vector<EEGRecord>> records;
  for (int i = 0; i < 3; ++i) {
    EEGRecord rec;
    rec.signal = Eigen::MatrixXd::Constant(2, 4, static_cast<double>(i));
    rec.label = i < 2 ? 0 : 1;  // class 1 ends up with one record
    records["train"].push_back(rec);
  }
  write_container(dir, "lone", 2, 4, 2, false, "", records);
  DatasetManifest m = load_manifest(dir);
  SplitView view = load_split(m, "train");
  CHECK_THROWS_AS(BatchStream(view, 4, 1, true), DataError);
}

TEST_CASE("batch_iter runs one full epoch straight from a container") {
  const auto dir = temp_dir("epochstream");
  SyntheticSpec spec;
  spec.num_classes = 3;
  spec.channels = 2;
  spec.timesteps = 4;
  spec.records_per_class = 10;
  spec.class_separation = 1.0;
  spec.noise_scale = 0.1;
  spec.seed = 6;
  DatasetManifest m = make_synthetic(spec, dir);

  auto stream = batch_iter(m, "train", 8, 42, true);
  long covered = 0;
  while (auto batch = stream->next()) {
    covered += static_cast<long>(batch->labels.size());
    std::map<int, int> per_class;
    for (int l : batch->labels) per_class[l]++;
    for (const auto& [label, count] : per_class) CHECK(count >= 2);
  }
  CHECK(covered == stream->view().count());
}

TEST_CASE("empty split errors") {
  const auto dir = temp_dir("emptysplit");
  write_container(dir, "es", 2, 4, 1, false, "", tiny_records(2, 4, 1, 2));
  DatasetManifest m = load_manifest(dir);
  CHECK_THROWS_AS(load_split(m, "val"), DataError);
}

TEST_CASE("concurrent readers see identical data") {
  const auto dir = temp_dir("concurrent");
  SyntheticSpec spec;
  spec.num_classes = 3;
  spec.channels = 4;
  spec.timesteps = 8;
  spec.records_per_class = 12;
  spec.class_separation = 2.0;
  spec.noise_scale = 0.2;
  spec.seed = 8;
  DatasetManifest m = make_synthetic(spec, dir);

  std::vector<std::string> hashes(4);
  std::vector<std::thread> workers;
  for (int t = 0; t < 4; ++t)
    workers.emplace_back([&, t] {
      SplitView view = load_split(m, "train");
      Fnv1a64 h;
      h.update(view.signals.raw().data(), sizeof(double) * static_cast<std::size_t>(view.signals.size()));
      hashes[static_cast<std::size_t>(t)] = h.hex();
    });
  for (auto& w : workers) w.join();
  for (int t = 1; t < 4; ++t) CHECK(hashes[static_cast<std::size_t>(t)] == hashes[0]);
}

TEST_CASE("paired images exist and are loadable for every record") {
  const auto dir = temp_dir("images");
  SyntheticSpec spec;
  spec.num_classes = 4;
  spec.channels = 3;
  spec.timesteps = 6;
  spec.records_per_class = 5;
  spec.class_separation = 1.0;
  spec.noise_scale = 0.1;
  spec.seed = 12;
  spec.with_images = true;
  DatasetManifest m = make_synthetic(spec, dir);
  REQUIRE(m.image_root.has_value());
  SplitView view = load_split(m, "train");
  for (long i = 0; i < view.count(); ++i) {
    const img::Image image = load_record_image(m, view.image_ids[static_cast<std::size_t>(i)]);
    CHECK(image.width == 32);
    CHECK(image.height == 32);
  }
}
