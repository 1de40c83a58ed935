#include "brve/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>

#include "brve/config.hpp"

namespace brve {

namespace {

constexpr char kMagic[5] = {'B', 'R', 'V', 'E', '1'};
constexpr std::uint16_t kVersion = 1;

template <typename T>
void write_le(std::ostream& os, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  os.write(buf, sizeof(T));
}

template <typename T>
T read_le(std::istream& is) {
  char buf[sizeof(T)];
  is.read(buf, sizeof(T));
  if (!is) throw std::runtime_error("checkpoint: truncated header");
  T v;
  std::memcpy(&v, buf, sizeof(T));
  return v;
}

}  // namespace

void save_checkpoint(const std::string& path, BrveModelT<float>& m) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("checkpoint: cannot open '" + path + "' for writing");
  os.write(kMagic, sizeof(kMagic));
  write_le(os, kVersion);
  write_le(os, fnv1a64(architecture_string(m.cfg)));
  visit_params<float>(m, [&](const std::string&, TensorT<float>& t) { write_dtn1(os, t); });
  if (!os) throw std::runtime_error("checkpoint: write to '" + path + "' failed");
}

BrveModelT<float> load_checkpoint(const std::string& path, const ModelConfig& cfg) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("checkpoint: cannot open '" + path + "'");
  char magic[5];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw std::runtime_error("checkpoint: bad magic in '" + path + "'");
  const auto version = read_le<std::uint16_t>(is);
  if (version != kVersion)
    throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));
  const auto hash = read_le<std::uint64_t>(is);
  const auto expect = fnv1a64(architecture_string(cfg));
  if (hash != expect)
    throw std::runtime_error(
        "checkpoint: architecture hash mismatch; the file was written for a different "
        "configuration");

  BrveModelT<float> m = init_model<float>(cfg, 0);
  visit_params<float>(m, [&](const std::string& name, TensorT<float>& t) {
    TensorT<float> loaded = read_dtn1<float>(is);
    if (loaded.shape() != t.shape())
      throw std::runtime_error("checkpoint: tensor '" + name + "' has the wrong shape");
    t = std::move(loaded);
  });
  is.peek();
  if (!is.eof()) throw std::runtime_error("checkpoint: trailing bytes after parameters");
  refresh_derived(m);
  return m;
}

}  // namespace brve
