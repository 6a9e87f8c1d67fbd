// SPDX-License-Identifier: Apache-2.0
#include <zlib.h>

#include <bit>
#include <charconv>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

#include "qwen2/errors.hpp"
#include "qwen2/model.hpp"

namespace qwen2 {

static_assert(std::endian::native == std::endian::little, "weight container assumes a little-endian host");

namespace {

constexpr std::string_view kManifestSeparator = "---";

template <typename T>
void put(std::vector<std::uint8_t>& out, T v) {
  std::uint8_t buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.insert(out.end(), buf, buf + sizeof(T));
}

template <typename T>
T get(std::span<const std::uint8_t> bytes, std::size_t offset, const char* what) {
  if (offset + sizeof(T) > bytes.size()) {
    throw FormatError(std::string("truncated file while reading ") + what, offset);
  }
  T v;
  std::memcpy(&v, bytes.data() + offset, sizeof(T));
  return v;
}

std::uint32_t crc32_of(std::span<const std::uint8_t> bytes) {
  uLong crc = crc32(0L, Z_NULL, 0);
  std::size_t done = 0;
  while (done < bytes.size()) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(bytes.size() - done, 1u << 30));
    crc = crc32(crc, bytes.data() + done, chunk);
    done += chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

struct ManifestEntry {
  std::string name;
  Shape shape;
  std::size_t offset;
};

std::string shape_csv(const Shape& s) {
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ',';
    out += std::to_string(s[i]);
  }
  return out;
}

std::size_t parse_size(const std::string& s, std::size_t at) {
  std::size_t v = 0;
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) throw FormatError("bad number '" + s + "' in manifest", at);
  return v;
}

}  // namespace

std::vector<std::uint8_t> serialize_weights(const ModelWeights& w, const ModelConfig& cfg) {
  cfg.validate();
  const auto tensors = named_tensors(w);
  std::ostringstream header;
  header << config_to_text(cfg) << kManifestSeparator << '\n';
  std::size_t offset = 0;
  for (const auto& [name, t] : tensors) {
    header << name << ' ' << shape_csv(t->shape()) << ' ' << offset << '\n';
    offset += t->numel() * sizeof(float);
  }
  const std::string h = header.str();

  std::vector<std::uint8_t> out(std::begin(kWeightMagic), std::end(kWeightMagic));
  put<std::uint32_t>(out, kWeightFormatVersion);
  put<std::uint64_t>(out, h.size());
  out.insert(out.end(), h.begin(), h.end());
  const std::size_t payload_start = out.size();
  for (const auto& [name, t] : tensors) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(t->data().data());
    out.insert(out.end(), p, p + t->numel() * sizeof(float));
  }
  put<std::uint32_t>(out, crc32_of(std::span(out).subspan(payload_start)));
  return out;
}

std::pair<ModelWeights, ModelConfig> deserialize_weights(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kWeightMagic, 4) != 0) {
    throw FormatError("bad magic, not a QW2T weight container", 0);
  }
  const auto version = get<std::uint32_t>(bytes, 4, "format version");
  if (version != kWeightFormatVersion) {
    throw FormatError("unsupported format version " + std::to_string(version), 4);
  }
  const auto header_len = get<std::uint64_t>(bytes, 8, "header length");
  const std::size_t header_start = 16;
  if (header_len > bytes.size() - header_start) throw FormatError("truncated header", header_start);
  const std::string header(reinterpret_cast<const char*>(bytes.data() + header_start), header_len);
  const std::size_t payload_start = header_start + header_len;

  const auto sep = header.find(std::string("\n") + std::string(kManifestSeparator) + "\n");
  if (sep == std::string::npos) throw FormatError("header has no tensor manifest", header_start);
  ModelConfig cfg;
  try {
    cfg = config_from_text(header.substr(0, sep + 1));
  } catch (const ConfigError& e) {
    throw FormatError(std::string("invalid config in header: ") + e.what(), header_start);
  }

  std::vector<ManifestEntry> manifest;
  {
    std::istringstream is(header.substr(sep + kManifestSeparator.size() + 2));
    std::string line;
    while (std::getline(is, line)) {
      if (line.empty()) continue;
      std::istringstream ls(line);
      std::string name, dims, off;
      if (!(ls >> name >> dims >> off)) throw FormatError("malformed manifest line '" + line + "'", header_start);
      ManifestEntry e{name, {}, parse_size(off, header_start)};
      std::size_t pos = 0;
      while (pos <= dims.size()) {
        const auto comma = std::min(dims.find(',', pos), dims.size());
        e.shape.push_back(parse_size(dims.substr(pos, comma - pos), header_start));
        pos = comma + 1;
      }
      manifest.push_back(std::move(e));
    }
  }

  ModelWeights w = allocate_weights(cfg);
  auto expected = named_tensors(w);
  if (expected.size() != manifest.size()) {
    throw FormatError("manifest lists " + std::to_string(manifest.size()) + " tensors, config implies " +
                      std::to_string(expected.size()),
                      header_start);
  }
  std::size_t running = 0;
  for (std::size_t i = 0; i < manifest.size(); ++i) {
    const auto& m = manifest[i];
    auto& [name, t] = expected[i];
    if (m.name != name || m.shape != t->shape() || m.offset != running) {
      throw FormatError("manifest entry '" + m.name + "' " + shape_str(m.shape) + " does not match expected '" +
                            name + "' " + shape_str(t->shape()),
                        header_start);
    }
    const std::size_t nbytes = t->numel() * sizeof(float);
    if (payload_start + running + nbytes > bytes.size()) {
      throw FormatError("truncated payload in tensor '" + name + "'", payload_start + running);
    }
    std::memcpy(t->data().data(), bytes.data() + payload_start + running, nbytes);
    running += nbytes;
  }
  const std::size_t crc_at = payload_start + running;
  const auto stored = get<std::uint32_t>(bytes, crc_at, "payload checksum");
  if (crc_at + 4 != bytes.size()) throw FormatError("trailing bytes after checksum", crc_at + 4);
  const auto actual = crc32_of(bytes.subspan(payload_start, running));
  if (stored != actual) throw FormatError("payload checksum mismatch", crc_at);
  return {std::move(w), std::move(cfg)};
}

void save_weights(const ModelWeights& w, const ModelConfig& cfg, const std::filesystem::path& path) {
  const auto bytes = serialize_weights(w, cfg);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open '" + path.string() + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("failed writing '" + path.string() + "'");
}

std::pair<ModelWeights, ModelConfig> load_weights(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open '" + path.string() + "'");
  const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize_weights(bytes);
}

}  // namespace qwen2
