#pragma once
// EEGPACK v1 dataset containers.
//
// A container is a directory holding manifest.json, one <split>.f32 blob of
// little-endian float32 records in C x N row-major order, one
// <split>.labels.csv per split (record_index,label,subject,image_id) and an
// optional images/ directory of PNGs keyed by image_id.
//
// Containers are immutable after write; loading and batch iteration are safe
// from concurrent readers. A BatchStream is single-consumer.

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "eegpack/common.hpp"
#include "eegpack/image.hpp"
#include "eegpack/tensor.hpp"

namespace eegpack::data {

struct RecordLocator {
  std::string blob;  // e.g. "train.f32"
  long index = 0;    // record position within the blob

  std::string str() const { return blob + ":" + std::to_string(index); }
  static RecordLocator parse(const std::string& s);
};

struct EEGRecord {
  Eigen::MatrixXd signal;  // C x N
  int label = 0;
  int subject = 0;
  std::string image_id;  // empty when unpaired
};

struct DatasetManifest {
  std::string name;
  int channels = 0;
  int timesteps = 0;
  int num_classes = 0;
  bool normalize = true;  // per-record, per-channel z-normalization at load
  std::string variant;
  std::optional<std::string> image_root;
  std::map<std::string, std::vector<RecordLocator>> splits;
  std::filesystem::path root;

  const std::vector<RecordLocator>& split(const std::string& name) const;
  bool has_split(const std::string& name) const { return splits.count(name) > 0; }
  long total_records() const;
};

struct SyntheticSpec {
  int num_classes = 0;
  int channels = 0;
  int timesteps = 0;
  int records_per_class = 0;
  double class_separation = 1.0;
  double noise_scale = 0.1;
  std::uint64_t seed = 0;
  // Paired-image emission for cross-modal pipelines.
  bool with_images = false;
  int image_size = 32;
};

// One split fully loaded (and normalized when the manifest says so).
struct SplitView {
  long channels = 0;
  long timesteps = 0;
  nn::Tensor signals;  // {count, C, N}
  std::vector<int> labels;
  std::vector<int> subjects;
  std::vector<std::string> image_ids;
  std::vector<std::string> record_ids;  // locator strings

  long count() const { return static_cast<long>(labels.size()); }
  Eigen::Map<const nn::RowMat> record_signal(long i) const;
  // Sub-view restricted to records whose class passes `keep`.
  SplitView filter_classes(const std::vector<int>& keep_classes) const;
};

DatasetManifest load_manifest(const std::filesystem::path& path);
SplitView load_split(const DatasetManifest& manifest, const std::string& split);

// Writes a complete container; records are grouped per split.
void write_container(const std::filesystem::path& dir, const std::string& name, int channels,
                     int timesteps, int num_classes, bool normalize, const std::string& variant,
                     const std::map<std::string, std::vector<EEGRecord>>& split_records,
                     const std::map<std::string, img::Image>* images = nullptr);

// Generates the class-template-plus-noise container (80/10/10 split
// stratified by class). Byte-identical output for identical specs.
DatasetManifest make_synthetic(const SyntheticSpec& spec, const std::filesystem::path& dir);

img::Image load_record_image(const DatasetManifest& manifest, const std::string& image_id);

// ---------------------------------------------------------------------------
// Batch iteration
// ---------------------------------------------------------------------------
struct Batch {
  nn::Tensor signals;  // {B, C, N}
  std::vector<int> labels;
  std::vector<long> indices;  // positions in the originating SplitView
};

class BatchStream {
 public:
  // One epoch over `view`. With balanced_classes every emitted batch holds at
  // least two records of every class it contains (semi-hard mining needs
  // intra-batch positives). `view` must outlive the stream.
  BatchStream(const SplitView& view, long batch_size, std::uint64_t shuffle_seed,
              bool balanced_classes);

  std::optional<Batch> next();
  long batches_total() const { return static_cast<long>(plan_.size()); }

 private:
  const SplitView& view_;
  std::vector<std::vector<long>> plan_;
  std::size_t cursor_ = 0;
};

// Self-contained single-consumer epoch stream straight off a container.
class EpochStream {
 public:
  EpochStream(SplitView view, long batch_size, std::uint64_t shuffle_seed, bool balanced_classes)
      : view_(std::move(view)), stream_(view_, batch_size, shuffle_seed, balanced_classes) {}
  EpochStream(const EpochStream&) = delete;
  EpochStream& operator=(const EpochStream&) = delete;

  std::optional<Batch> next() { return stream_.next(); }
  long batches_total() const { return stream_.batches_total(); }
  const SplitView& view() const { return view_; }

 private:
  SplitView view_;
  BatchStream stream_;
};

std::unique_ptr<EpochStream> batch_iter(const DatasetManifest& manifest, const std::string& split,
                                        long batch_size, std::uint64_t shuffle_seed,
                                        bool balanced_classes);

}  // namespace eegpack::data
