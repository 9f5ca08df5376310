#include "hcdg/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include "hcdg/common.hpp"

namespace hcdg::nn {

namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

constexpr char kMagic[8] = {'H', 'C', 'D', 'G', 'C', 'K', 'P', 'T'};
constexpr uint8_t kFloat64 = 1;

struct Array {
  std::vector<int> dims;
  std::span<double> data;
};

std::map<std::string, Array> named_arrays(SegModel& model) {
  std::map<std::string, Array> out;
  for (auto& g : model.all_groups()) {
    const std::string prefix = to_string(g.id) + "/";
    for (auto& [name, t] : g.params) out[prefix + name] = Array{t.shape(), t.data()};
    for (auto& [name, buf] : g.buffers) {
      out[prefix + name] = Array{{static_cast<int>(buf->size())}, std::span<double>(*buf)};
    }
  }
  return out;
}

void put_u32(std::ostream& os, uint32_t v) { os.write(reinterpret_cast<const char*>(&v), 4); }

uint32_t get_u32(std::istream& is) {
  uint32_t v = 0;
  if (!is.read(reinterpret_cast<char*>(&v), 4)) throw DataError("checkpoint truncated");
  return v;
}

uint8_t get_u8(std::istream& is) {
  char c = 0;
  if (!is.read(&c, 1)) throw DataError("checkpoint truncated");
  return static_cast<uint8_t>(c);
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, SegModel& model, const nlohmann::json& header) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open checkpoint for writing: " + path.string());
  nlohmann::json h = header;
  h["format"] = "hcdg-checkpoint";
  const std::string hs = h.dump();
  os.write(kMagic, 8);
  put_u32(os, kCheckpointVersion);
  put_u32(os, static_cast<uint32_t>(hs.size()));
  os.write(hs.data(), static_cast<std::streamsize>(hs.size()));
  const auto arrays = named_arrays(model);
  put_u32(os, static_cast<uint32_t>(arrays.size()));
  for (const auto& [name, a] : arrays) {
    put_u32(os, static_cast<uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    const char dtype = static_cast<char>(kFloat64);
    const char rank = static_cast<char>(a.dims.size());
    os.write(&dtype, 1);
    os.write(&rank, 1);
    for (int d : a.dims) put_u32(os, static_cast<uint32_t>(d));
    os.write(reinterpret_cast<const char*>(a.data.data()), static_cast<std::streamsize>(a.data.size() * sizeof(double)));
  }
  if (!os) throw DataError("failed writing checkpoint: " + path.string());
}

nlohmann::json read_header(std::istream& is, const std::filesystem::path& path) {
  if (!is) throw DataError("cannot open checkpoint: " + path.string());
  char magic[8];
  if (!is.read(magic, 8) || std::memcmp(magic, kMagic, 8) != 0) throw DataError("not an hcdg checkpoint: " + path.string());
  const uint32_t version = get_u32(is);
  if (version != kCheckpointVersion) throw DataError("unsupported checkpoint version " + std::to_string(version));
  const uint32_t hlen = get_u32(is);
  std::string hs(hlen, '\0');
  if (!is.read(hs.data(), hlen)) throw DataError("checkpoint truncated");
  nlohmann::json header = nlohmann::json::parse(hs, nullptr, false);
  if (header.is_discarded()) throw DataError("checkpoint header is not valid JSON: " + path.string());
  return header;
}

nlohmann::json read_checkpoint_header(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  return read_header(is, path);
}

nlohmann::json load_checkpoint(const std::filesystem::path& path, SegModel& model) {
  std::ifstream is(path, std::ios::binary);
  nlohmann::json header = read_header(is, path);

  auto arrays = named_arrays(model);
  const uint32_t count = get_u32(is);
  if (count != arrays.size()) {
    throw DataError("checkpoint holds " + std::to_string(count) + " arrays, model expects " + std::to_string(arrays.size()));
  }
  for (uint32_t i = 0; i < count; ++i) {
    const uint32_t nlen = get_u32(is);
    std::string name(nlen, '\0');
    if (!is.read(name.data(), nlen)) throw DataError("checkpoint truncated");
    auto it = arrays.find(name);
    if (it == arrays.end()) throw DataError("checkpoint array '" + name + "' not present in model");
    if (get_u8(is) != kFloat64) throw DataError("checkpoint array '" + name + "' has unsupported dtype");
    const uint8_t rank = get_u8(is);
    std::vector<int> dims(rank);
    for (auto& d : dims) d = static_cast<int>(get_u32(is));
    if (dims != it->second.dims) throw DataError("checkpoint array '" + name + "' shape mismatch");
    auto dst = it->second.data;
    if (!is.read(reinterpret_cast<char*>(dst.data()), static_cast<std::streamsize>(dst.size() * sizeof(double)))) {
      throw DataError("checkpoint truncated");
    }
  }
  return header;
}

}  // namespace hcdg::nn
