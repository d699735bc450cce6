#include "eegpack/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <deque>
#include <fstream>
#include <nlohmann/json.hpp>
#include <set>
#include <sstream>

namespace eegpack::data {

using nlohmann::json;

RecordLocator RecordLocator::parse(const std::string& s) {
  const auto pos = s.rfind(':');
  if (pos == std::string::npos || pos + 1 >= s.size())
    throw DataError("malformed record locator: " + s);
  RecordLocator loc;
  loc.blob = s.substr(0, pos);
  try {
    loc.index = std::stol(s.substr(pos + 1));
  } catch (const std::exception&) {
    throw DataError("malformed record locator index: " + s);
  }
  if (loc.index < 0) throw DataError("negative record locator index: " + s);
  return loc;
}

const std::vector<RecordLocator>& DatasetManifest::split(const std::string& name) const {
  auto it = splits.find(name);
  if (it == splits.end()) throw DataError("manifest has no split '" + name + "'");
  return it->second;
}

long DatasetManifest::total_records() const {
  long n = 0;
  for (const auto& [k, v] : splits) n += static_cast<long>(v.size());
  return n;
}

Eigen::Map<const nn::RowMat> SplitView::record_signal(long i) const {
  return {signals.raw().data() + i * channels * timesteps, channels, timesteps};
}

SplitView SplitView::filter_classes(const std::vector<int>& keep_classes) const {
  std::set<int> keep(keep_classes.begin(), keep_classes.end());
  SplitView out;
  out.channels = channels;
  out.timesteps = timesteps;
  std::vector<long> idx;
  for (long i = 0; i < count(); ++i)
    if (keep.count(labels[static_cast<std::size_t>(i)])) idx.push_back(i);
  out.signals = nn::Tensor({static_cast<long>(idx.size()), channels, timesteps});
  for (std::size_t j = 0; j < idx.size(); ++j) {
    const long i = idx[j];
    std::memcpy(out.signals.raw().data() + static_cast<long>(j) * channels * timesteps,
                signals.raw().data() + i * channels * timesteps,
                sizeof(double) * static_cast<std::size_t>(channels * timesteps));
    out.labels.push_back(labels[static_cast<std::size_t>(i)]);
    out.subjects.push_back(subjects[static_cast<std::size_t>(i)]);
    out.image_ids.push_back(image_ids[static_cast<std::size_t>(i)]);
    out.record_ids.push_back(record_ids[static_cast<std::size_t>(i)]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Manifest loading
// ---------------------------------------------------------------------------

DatasetManifest load_manifest(const std::filesystem::path& path) {
  std::filesystem::path dir = path;
  if (std::filesystem::is_directory(dir)) dir /= "manifest.json";
  if (!std::filesystem::exists(dir)) throw DataError("manifest not found: " + dir.string());

  json j;
  try {
    j = json::parse(read_text_file(dir));
  } catch (const json::exception& e) {
    throw DataError("manifest parse error: " + std::string(e.what()));
  }

  DatasetManifest m;
  m.root = dir.parent_path();
  try {
    if (j.at("format_version").get<int>() != 1)
      throw DataError("unsupported container format_version");
    m.name = j.at("name").get<std::string>();
    m.channels = j.at("channels").get<int>();
    m.timesteps = j.at("timesteps").get<int>();
    m.num_classes = j.at("num_classes").get<int>();
    m.normalize = j.value("normalize", true);
    m.variant = j.value("variant", std::string());
    if (j.contains("image_root") && !j["image_root"].is_null())
      m.image_root = j["image_root"].get<std::string>();
    for (const auto& [split_name, locs] : j.at("splits").items()) {
      std::vector<RecordLocator> list;
      for (const auto& s : locs) list.push_back(RecordLocator::parse(s.get<std::string>()));
      m.splits[split_name] = std::move(list);
    }
  } catch (const json::exception& e) {
    throw DataError("manifest field error: " + std::string(e.what()));
  }

  if (m.channels <= 0 || m.timesteps <= 0 || m.num_classes <= 0)
    throw DataError("manifest geometry must be positive");

  // Locators must be globally unique: split record lists stay disjoint.
  std::set<std::pair<std::string, long>> seen;
  for (const auto& [split_name, locs] : m.splits)
    for (const auto& loc : locs)
      if (!seen.insert({loc.blob, loc.index}).second)
        throw DataError("record " + loc.str() + " appears in more than one split");

  // Geometry of every referenced blob, checked eagerly.
  const long rec_bytes = static_cast<long>(m.channels) * m.timesteps * 4;
  std::map<std::string, long> blob_records;
  for (const auto& [split_name, locs] : m.splits) {
    for (const auto& loc : locs) {
      auto it = blob_records.find(loc.blob);
      if (it == blob_records.end()) {
        const auto blob_path = m.root / loc.blob;
        if (!std::filesystem::exists(blob_path))
          throw DataError("missing blob: " + blob_path.string());
        const long size = static_cast<long>(std::filesystem::file_size(blob_path));
        if (size % rec_bytes != 0)
          throw DataError("blob " + loc.blob + " size " + std::to_string(size) +
                          " is not a multiple of the record size " + std::to_string(rec_bytes));
        it = blob_records.emplace(loc.blob, size / rec_bytes).first;
      }
      if (loc.index >= it->second)
        throw DataError("locator " + loc.str() + " exceeds blob record count " +
                        std::to_string(it->second));
    }
    // Matching label file with one row per blob record.
    if (!locs.empty()) {
      const std::string labels_name = locs[0].blob.substr(0, locs[0].blob.rfind('.')) + ".labels.csv";
      if (!std::filesystem::exists(m.root / labels_name))
        throw DataError("missing label file: " + labels_name);
    }
  }
  return m;
}

// ---------------------------------------------------------------------------
// Split loading
// ---------------------------------------------------------------------------

namespace {

struct LabelRow {
  int label = 0;
  int subject = 0;
  std::string image_id;
};

std::vector<LabelRow> read_label_csv(const std::filesystem::path& path, int num_classes) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open label file: " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw DataError("empty label file: " + path.string());
  std::vector<LabelRow> rows;
  long expected_index = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto fields = split_csv_line(line);
    if (fields.size() != 4) throw DataError("label row needs 4 fields: " + line);
    if (std::stol(fields[0]) != expected_index)
      throw DataError("label rows out of order at index " + fields[0]);
    LabelRow row;
    row.label = std::stoi(fields[1]);
    row.subject = std::stoi(fields[2]);
    row.image_id = fields[3];
    if (row.label < 0 || row.label >= num_classes)
      throw DataError("label " + fields[1] + " outside [0, num_classes)");
    rows.push_back(std::move(row));
    ++expected_index;
  }
  return rows;
}

}  // namespace

SplitView load_split(const DatasetManifest& manifest, const std::string& split) {
  const auto& locs = manifest.split(split);
  if (locs.empty()) throw DataError("split '" + split + "' is empty");

  const long C = manifest.channels, N = manifest.timesteps;
  SplitView view;
  view.channels = C;
  view.timesteps = N;
  view.signals = nn::Tensor({static_cast<long>(locs.size()), C, N});

  // Cache blobs and label files; a split normally references exactly one.
  std::map<std::string, std::vector<unsigned char>> blobs;
  std::map<std::string, std::vector<LabelRow>> labels;
  for (std::size_t r = 0; r < locs.size(); ++r) {
    const auto& loc = locs[r];
    auto bit = blobs.find(loc.blob);
    if (bit == blobs.end())
      bit = blobs.emplace(loc.blob, read_binary_file(manifest.root / loc.blob)).first;
    const std::string stem = loc.blob.substr(0, loc.blob.rfind('.'));
    auto lit = labels.find(stem);
    if (lit == labels.end())
      lit = labels
                .emplace(stem, read_label_csv(manifest.root / (stem + ".labels.csv"),
                                              manifest.num_classes))
                .first;
    const auto& blob = bit->second;
    const auto& rows = lit->second;
    if (static_cast<long>(rows.size()) * C * N * 4 != static_cast<long>(blob.size()))
      throw DataError("label row count does not match blob " + loc.blob);

    double* dst = view.signals.raw().data() + static_cast<long>(r) * C * N;
    const unsigned char* src = blob.data() + static_cast<std::size_t>(loc.index) * C * N * 4;
    for (long i = 0; i < C * N; ++i) {
      float f;
      std::memcpy(&f, src + 4 * i, 4);
      dst[i] = static_cast<double>(f);
      if (!std::isfinite(dst[i]))
        throw DataError("non-finite sample in record " + loc.str());
    }
    const auto& lr = rows[static_cast<std::size_t>(loc.index)];
    view.labels.push_back(lr.label);
    view.subjects.push_back(lr.subject);
    view.image_ids.push_back(lr.image_id);
    view.record_ids.push_back(loc.str());
  }

  if (manifest.normalize) {
    for (long r = 0; r < view.count(); ++r) {
      double* rec = view.signals.raw().data() + r * C * N;
      for (long c = 0; c < C; ++c) {
        double* ch = rec + c * N;
        double mean = 0.0;
        for (long n = 0; n < N; ++n) mean += ch[n];
        mean /= static_cast<double>(N);
        double var = 0.0;
        for (long n = 0; n < N; ++n) var += (ch[n] - mean) * (ch[n] - mean);
        const double sd = std::sqrt(var / static_cast<double>(N));
        const double inv = 1.0 / std::max(sd, 1e-8);
        for (long n = 0; n < N; ++n) ch[n] = (ch[n] - mean) * inv;
      }
    }
  }
  return view;
}

// ---------------------------------------------------------------------------
// Container writing
// ---------------------------------------------------------------------------

void write_container(const std::filesystem::path& dir, const std::string& name, int channels,
                     int timesteps, int num_classes, bool normalize, const std::string& variant,
                     const std::map<std::string, std::vector<EEGRecord>>& split_records,
                     const std::map<std::string, img::Image>* images) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw DataError("cannot create container directory: " + dir.string());

  json manifest;
  manifest["format_version"] = 1;
  manifest["name"] = name;
  manifest["channels"] = channels;
  manifest["timesteps"] = timesteps;
  manifest["num_classes"] = num_classes;
  manifest["normalize"] = normalize;
  if (!variant.empty()) manifest["variant"] = variant;
  if (images && !images->empty()) manifest["image_root"] = "images";
  manifest["splits"] = json::object();

  for (const auto& [split, records] : split_records) {
    const std::string blob_name = split + ".f32";
    std::string blob;
    std::ostringstream labels;
    labels << "record_index,label,subject,image_id\n";
    json locs = json::array();
    for (std::size_t i = 0; i < records.size(); ++i) {
      const auto& rec = records[i];
      if (rec.signal.rows() != channels || rec.signal.cols() != timesteps)
        throw DataError("record geometry mismatch in split " + split);
      if (!rec.signal.allFinite()) throw DataError("non-finite record rejected in split " + split);
      if (rec.label < 0 || rec.label >= num_classes)
        throw DataError("record label outside [0, num_classes)");
      for (long c = 0; c < channels; ++c)
        for (long n = 0; n < timesteps; ++n) {
          const float f = static_cast<float>(rec.signal(c, n));
          char bytes[4];
          std::memcpy(bytes, &f, 4);
          blob.append(bytes, 4);
        }
      labels << i << ',' << rec.label << ',' << rec.subject << ','
             << csv_escape_check(rec.image_id) << '\n';
      locs.push_back(blob_name + ":" + std::to_string(i));
    }
    manifest["splits"][split] = std::move(locs);
    write_binary_file(dir / blob_name, blob.data(), blob.size());
    write_text_file(dir / (split + ".labels.csv"), labels.str());
  }

  if (images && !images->empty()) {
    std::filesystem::create_directories(dir / "images");
    for (const auto& [id, image] : *images) img::save_png(dir / "images" / (id + ".png"), image);
  }

  write_text_file(dir / "manifest.json", manifest.dump(2) + "\n");
}

DatasetManifest make_synthetic(const SyntheticSpec& spec, const std::filesystem::path& dir) {
  if (spec.num_classes <= 0 || spec.channels <= 0 || spec.timesteps <= 0 ||
      spec.records_per_class <= 0)
    throw ConfigError("synthetic spec counts must be positive");
  if (spec.class_separation <= 0.0) throw ConfigError("class_separation must be > 0");
  if (spec.noise_scale < 0.0) throw ConfigError("noise_scale must be >= 0");

  Rng rng = make_rng(spec.seed);
  const long C = spec.channels, N = spec.timesteps;

  // Per-class template, drawn once, scaled by the separation knob.
  std::vector<Eigen::MatrixXd> templates;
  for (int k = 0; k < spec.num_classes; ++k) {
    Eigen::MatrixXd t(C, N);
    for (long c = 0; c < C; ++c)
      for (long n = 0; n < N; ++n) t(c, n) = spec.class_separation * rng.normal();
    templates.push_back(std::move(t));
  }

  std::map<std::string, std::vector<EEGRecord>> split_records;
  std::map<std::string, img::Image> images;
  const int n = spec.records_per_class;
  const int n_train = (n * 8) / 10;
  const int n_val = (n * 9) / 10 - n_train;

  for (int k = 0; k < spec.num_classes; ++k) {
    for (int i = 0; i < n; ++i) {
      EEGRecord rec;
      rec.signal = templates[static_cast<std::size_t>(k)];
      for (long c = 0; c < C; ++c)
        for (long t = 0; t < N; ++t) rec.signal(c, t) += spec.noise_scale * rng.normal();
      rec.label = k;
      rec.subject = i % 4;
      if (spec.with_images) {
        rec.image_id = "c" + std::to_string(k) + "_r" + std::to_string(i);
        images[rec.image_id] = img::render_class_shape(
            k, rng.fork(static_cast<std::uint64_t>(k) * 100003ULL + static_cast<std::uint64_t>(i)),
            spec.image_size);
      }
      const char* split = (i < n_train) ? "train" : (i < n_train + n_val) ? "val" : "test";
      split_records[split].push_back(std::move(rec));
    }
  }

  const std::string name = "synthetic-" + std::to_string(spec.num_classes) + "c-" +
                           std::to_string(spec.channels) + "x" + std::to_string(spec.timesteps);
  write_container(dir, name, spec.channels, spec.timesteps, spec.num_classes,
                  /*normalize=*/false, "synthetic", split_records,
                  spec.with_images ? &images : nullptr);
  return load_manifest(dir);
}

img::Image load_record_image(const DatasetManifest& manifest, const std::string& image_id) {
  if (!manifest.image_root) throw DataError("container has no image_root");
  if (image_id.empty()) throw DataError("record has no image_id");
  return img::load_png(manifest.root / *manifest.image_root / (image_id + ".png"));
}

// ---------------------------------------------------------------------------
// Batch iteration
// ---------------------------------------------------------------------------

BatchStream::BatchStream(const SplitView& view, long batch_size, std::uint64_t shuffle_seed,
                         bool balanced_classes)
    : view_(view) {
  if (view.count() == 0) throw DataError("batch stream over empty split");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");

  Rng rng = make_rng(shuffle_seed);

  if (!balanced_classes) {
    std::vector<long> order(static_cast<std::size_t>(view.count()));
    for (long i = 0; i < view.count(); ++i) order[static_cast<std::size_t>(i)] = i;
    rng.shuffle(order);
    for (std::size_t ofs = 0; ofs < order.size(); ofs += static_cast<std::size_t>(batch_size)) {
      const auto end = std::min(order.size(), ofs + static_cast<std::size_t>(batch_size));
      plan_.emplace_back(order.begin() + static_cast<long>(ofs), order.begin() + static_cast<long>(end));
    }
    return;
  }

  if (batch_size < 2) throw ConfigError("balanced batching needs batch_size >= 2");

  // Group records per class, shuffled. Records leave in chunks of two (or
  // three when a class would otherwise strand a single record), so every
  // batch holds >= 2 records of each class it contains.
  std::map<int, std::vector<long>> per_class;
  for (long i = 0; i < view.count(); ++i) per_class[view.labels[static_cast<std::size_t>(i)]].push_back(i);
  for (auto& [label, idx] : per_class) {
    if (idx.size() < 2)
      throw DataError("class " + std::to_string(label) + " has fewer than 2 records; balanced batching infeasible");
    rng.shuffle(idx);
  }

  std::vector<int> class_order;
  for (const auto& [label, idx] : per_class) class_order.push_back(label);
  std::map<int, std::deque<long>> queues;
  for (auto& [label, idx] : per_class) queues[label] = std::deque<long>(idx.begin(), idx.end());

  long remaining = view.count();
  std::size_t rotation = 0;
  while (remaining > 0) {
    rng.shuffle(class_order);
    std::vector<long> batch;
    bool progressed = true;
    while (static_cast<long>(batch.size()) < batch_size && progressed) {
      progressed = false;
      for (std::size_t step = 0; step < class_order.size(); ++step) {
        const int label = class_order[(rotation + step) % class_order.size()];
        auto& q = queues[label];
        if (q.empty()) continue;
        const long chunk = (static_cast<long>(q.size()) == 3) ? 3 : 2;
        if (static_cast<long>(batch.size()) + chunk > batch_size) continue;
        for (long c = 0; c < chunk; ++c) {
          batch.push_back(q.front());
          q.pop_front();
        }
        remaining -= chunk;
        rotation = (rotation + step + 1) % class_order.size();
        progressed = true;
        break;
      }
    }
    if (batch.empty()) {
      // Only possible when batch_size == 2 and a class has an odd leftover
      // chunk of 3; emit that chunk as its own batch to keep the invariant.
      for (auto& [label, q] : queues) {
        if (q.empty()) continue;
        while (!q.empty() && batch.size() < 3) {
          batch.push_back(q.front());
          q.pop_front();
          --remaining;
        }
        break;
      }
    }
    plan_.push_back(std::move(batch));
  }
}

std::unique_ptr<EpochStream> batch_iter(const DatasetManifest& manifest, const std::string& split,
                                        long batch_size, std::uint64_t shuffle_seed,
                                        bool balanced_classes) {
  return std::make_unique<EpochStream>(load_split(manifest, split), batch_size, shuffle_seed,
                                       balanced_classes);
}

std::optional<Batch> BatchStream::next() {
  if (cursor_ >= plan_.size()) return std::nullopt;
  const auto& idx = plan_[cursor_++];
  Batch batch;
  batch.indices = idx;
  batch.signals = nn::Tensor({static_cast<long>(idx.size()), view_.channels, view_.timesteps});
  const long rec = view_.channels * view_.timesteps;
  for (std::size_t i = 0; i < idx.size(); ++i) {
    std::memcpy(batch.signals.raw().data() + static_cast<long>(i) * rec,
                view_.signals.raw().data() + idx[i] * rec,
                sizeof(double) * static_cast<std::size_t>(rec));
    batch.labels.push_back(view_.labels[static_cast<std::size_t>(idx[i])]);
  }
  return batch;
}

}  // namespace eegpack::data
