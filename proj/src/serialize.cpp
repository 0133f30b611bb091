#include "dclstm/serialize.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>

namespace dclstm {

std::uint64_t fnv1a(const void* data, std::size_t len, std::uint64_t seed) {
  const auto* p = static_cast<const unsigned char*>(data);
  std::uint64_t h = seed;
  for (std::size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 1099511628211ULL;
  }
  return h;
}

std::uint64_t fnv1a_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("fnv1a_file: cannot open " + path);
  std::uint64_t h = 14695981039346656037ULL;
  char buf[1 << 16];
  while (in) {
    in.read(buf, sizeof(buf));
    h = fnv1a(buf, static_cast<std::size_t>(in.gcount()), h);
  }
  return h;
}

const Tensor& Container::array(const std::string& name) const {
  for (const auto& [n, t] : arrays)
    if (n == name) return t;
  throw std::out_of_range("container: no array " + name);
}

void write_container(const std::string& path, const nlohmann::json& header,
                     const std::vector<std::pair<std::string, const Tensor*>>& arrays) {
  nlohmann::json full = header;
  full["arrays"] = nlohmann::json::array();
  for (const auto& [name, t] : arrays) {
    full["arrays"].push_back({{"name", name}, {"shape", t->shape()}});
  }
  const std::string hdr = full.dump();

  std::string blob;
  blob.append(kContainerMagic, sizeof(kContainerMagic));
  const std::uint32_t version = kContainerVersion;
  blob.append(reinterpret_cast<const char*>(&version), sizeof(version));
  const std::uint64_t hlen = hdr.size();
  blob.append(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
  blob.append(hdr);
  for (const auto& [name, t] : arrays) {
    blob.append(reinterpret_cast<const char*>(t->data()), t->size() * sizeof(double));
  }
  const std::uint64_t checksum = fnv1a(blob.data(), blob.size());
  blob.append(reinterpret_cast<const char*>(&checksum), sizeof(checksum));

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("write_container: cannot open " + path);
  out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
  if (!out) throw std::runtime_error("write_container: write failed for " + path);
}

Container read_container(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("read_container: cannot open " + path);
  std::string blob((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (blob.size() < sizeof(kContainerMagic) + sizeof(std::uint32_t) + 2 * sizeof(std::uint64_t)) {
    throw std::runtime_error("read_container: truncated file " + path);
  }
  if (std::memcmp(blob.data(), kContainerMagic, sizeof(kContainerMagic)) != 0) {
    throw std::runtime_error("read_container: bad magic in " + path);
  }
  std::size_t off = sizeof(kContainerMagic);
  std::uint32_t version;
  std::memcpy(&version, blob.data() + off, sizeof(version));
  off += sizeof(version);
  if (version != kContainerVersion) {
    throw std::runtime_error("read_container: unsupported version " + std::to_string(version));
  }
  const std::uint64_t stored_checksum = [&] {
    std::uint64_t c;
    std::memcpy(&c, blob.data() + blob.size() - sizeof(c), sizeof(c));
    return c;
  }();
  if (fnv1a(blob.data(), blob.size() - sizeof(std::uint64_t)) != stored_checksum) {
    throw std::runtime_error("read_container: checksum mismatch in " + path);
  }
  std::uint64_t hlen;
  std::memcpy(&hlen, blob.data() + off, sizeof(hlen));
  off += sizeof(hlen);
  if (off + hlen > blob.size()) throw std::runtime_error("read_container: truncated header");
  Container c;
  c.header = nlohmann::json::parse(blob.substr(off, hlen));
  off += hlen;
  for (const auto& meta : c.header.at("arrays")) {
    Shape shape = meta.at("shape").get<Shape>();
    const std::size_t n = shape_product(shape);
    if (off + n * sizeof(double) > blob.size() - sizeof(std::uint64_t)) {
      throw std::runtime_error("read_container: truncated payload");
    }
    std::vector<double> data(n);
    std::memcpy(data.data(), blob.data() + off, n * sizeof(double));
    off += n * sizeof(double);
    c.arrays.emplace_back(meta.at("name").get<std::string>(), Tensor(std::move(shape), std::move(data)));
  }
  return c;
}

}  // namespace dclstm
