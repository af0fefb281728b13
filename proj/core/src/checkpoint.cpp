#include "udmt/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fmt/format.h>
#include <fstream>
#include <stdexcept>

namespace udmt {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'U', 'D', 'M', 'T', 'C', 'K', 'P', 'T'};

template <typename T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

void put_string(std::ostream& os, const std::string& s) {
  put<std::uint32_t>(os, static_cast<std::uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

class Reader {
 public:
  Reader(std::istream& is, const std::filesystem::path& path) : is_(is), path_(path) {}

  template <typename T>
  T get() {
    T v{};
    read(reinterpret_cast<char*>(&v), sizeof(T));
    return v;
  }

  std::string get_string() {
    const auto n = get<std::uint32_t>();
    std::string s(n, '\0');
    read(s.data(), n);
    return s;
  }

  void read(char* dst, std::size_t n) {
    is_.read(dst, static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(is_.gcount()) != n) {
      throw std::runtime_error(fmt::format("checkpoint {}: truncated file", path_.string()));
    }
  }

 private:
  std::istream& is_;
  const std::filesystem::path& path_;
};

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error(fmt::format("checkpoint {}: cannot open for writing", path.string()));
  os.write(kMagic, sizeof(kMagic));
  put<std::uint32_t>(os, kCheckpointVersion);
  put<std::uint32_t>(os, static_cast<std::uint32_t>(ckpt.metadata.size()));
  for (const auto& [k, v] : ckpt.metadata) {
    put_string(os, k);
    put_string(os, v);
  }
  put<std::uint64_t>(os, ckpt.params.size());
  for (const auto& [name, t] : ckpt.params) {
    put_string(os, name);
    put<std::uint32_t>(os, static_cast<std::uint32_t>(t.rank()));
    for (auto e : t.shape()) put<std::uint64_t>(os, e);
    os.write(reinterpret_cast<const char*>(t.ptr()), static_cast<std::streamsize>(t.numel() * sizeof(double)));
  }
  if (!os) throw std::runtime_error(fmt::format("checkpoint {}: write failed", path.string()));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error(fmt::format("checkpoint {}: cannot open", path.string()));
  Reader r(is, path);
  char magic[8];
  r.read(magic, sizeof(magic));
  if (std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw std::runtime_error(fmt::format("checkpoint {}: bad magic", path.string()));
  }
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw std::runtime_error(fmt::format("checkpoint {}: unsupported version {}", path.string(), version));
  }
  Checkpoint ckpt;
  const auto nmeta = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < nmeta; ++i) {
    auto k = r.get_string();
    ckpt.metadata[k] = r.get_string();
  }
  const auto nparams = r.get<std::uint64_t>();
  for (std::uint64_t i = 0; i < nparams; ++i) {
    auto name = r.get_string();
    const auto rank = r.get<std::uint32_t>();
    if (rank == 0 || rank > 8) throw std::runtime_error(fmt::format("checkpoint {}: bad rank {} for '{}'", path.string(), rank, name));
    Shape shape(rank);
    for (auto& e : shape) e = r.get<std::uint64_t>();
    std::vector<double> data(shape_numel(shape));
    r.read(reinterpret_cast<char*>(data.data()), data.size() * sizeof(double));
    ckpt.params.emplace(std::move(name), Tensor(std::move(shape), std::move(data)));
  }
  return ckpt;
}

}  // namespace udmt
