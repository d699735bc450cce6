#include "eegpack/checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace eegpack::nn {

namespace {
constexpr char kMagic[8] = {'E', 'E', 'G', 'C', 'K', 'P', 'T', '1'};

void append_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

std::uint64_t read_u64(const unsigned char* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return v;
}
}  // namespace

const Tensor& Checkpoint::param(const std::string& name) const {
  for (const auto& [n, t] : params)
    if (n == name) return t;
  throw DataError("checkpoint: missing parameter " + name);
}

bool Checkpoint::has_param(const std::string& name) const {
  for (const auto& [n, t] : params)
    if (n == name) return true;
  return false;
}

void save_checkpoint(const std::filesystem::path& path, const nlohmann::json& config,
                     const std::vector<Param>& params) {
  nlohmann::json meta;
  meta["config"] = config;
  meta["params"] = nlohmann::json::array();
  for (const auto& p : params) {
    nlohmann::json entry;
    entry["name"] = p.name;
    entry["shape"] = p.var.value().shape();
    meta["params"].push_back(entry);
  }
  const std::string json_str = meta.dump();

  std::string body;
  body.append(kMagic, sizeof(kMagic));
  append_u64(body, json_str.size());
  body += json_str;
  for (const auto& p : params) {
    const auto& raw = p.var.value().raw();
    for (long i = 0; i < raw.size(); ++i) {
      const float f = static_cast<float>(raw[i]);
      char bytes[4];
      std::memcpy(bytes, &f, 4);
      body.append(bytes, 4);
    }
  }
  Fnv1a64 h;
  h.update(body.data(), body.size());
  append_u64(body, h.digest());
  write_binary_file(path, body.data(), body.size());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  const auto bytes = read_binary_file(path);
  if (bytes.size() < sizeof(kMagic) + 16) throw DataError("checkpoint truncated: " + path.string());
  if (std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0)
    throw DataError("not a checkpoint file: " + path.string());

  Fnv1a64 h;
  h.update(bytes.data(), bytes.size() - 8);
  const std::uint64_t stored = read_u64(bytes.data() + bytes.size() - 8);
  if (h.digest() != stored)
    throw DataError("checkpoint content hash mismatch: " + path.string());

  const std::uint64_t json_len = read_u64(bytes.data() + sizeof(kMagic));
  std::size_t off = sizeof(kMagic) + 8;
  if (off + json_len > bytes.size() - 8) throw DataError("checkpoint header corrupt");
  nlohmann::json meta =
      nlohmann::json::parse(bytes.begin() + static_cast<long>(off),
                            bytes.begin() + static_cast<long>(off + json_len));
  off += json_len;

  Checkpoint ckpt;
  ckpt.config = meta.at("config");
  for (const auto& entry : meta.at("params")) {
    const std::string name = entry.at("name");
    std::vector<long> shape = entry.at("shape").get<std::vector<long>>();
    Tensor t(shape);
    const std::size_t n = static_cast<std::size_t>(t.size());
    if (off + 4 * n > bytes.size() - 8) throw DataError("checkpoint payload truncated");
    for (std::size_t i = 0; i < n; ++i) {
      float f;
      std::memcpy(&f, bytes.data() + off + 4 * i, 4);
      t.raw()[static_cast<long>(i)] = static_cast<double>(f);
    }
    off += 4 * n;
    ckpt.params.emplace_back(name, std::move(t));
  }
  return ckpt;
}

void load_into(const Checkpoint& ckpt, std::vector<Param>& params) {
  for (auto& p : params) {
    const Tensor& stored = ckpt.param(p.name);
    if (stored.shape() != p.var.value().shape())
      throw DataError("checkpoint: shape mismatch for " + p.name);
    p.var.mutable_value() = stored;
  }
}

std::string checkpoint_file_hash(const std::filesystem::path& path) {
  return hash_file_hex(path);
}

}  // namespace eegpack::nn
