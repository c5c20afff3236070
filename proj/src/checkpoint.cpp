#include "ocloc/checkpoint.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>

namespace ocloc {

static_assert(std::endian::native == std::endian::little,
              "checkpoint container assumes a little-endian host");

namespace {

constexpr char kMagic[4] = {'O', 'C', 'L', 'C'};
constexpr uint32_t kVersion = 1;

struct Writer {
  std::ofstream f;

  explicit Writer(const std::string& path) : f(path, std::ios::binary) {
    if (!f) {
      throw std::runtime_error("cannot open for writing: " + path);
    }
  }

  void bytes(const void* p, size_t n) { f.write(static_cast<const char*>(p), static_cast<std::streamsize>(n)); }
  void u32(uint32_t v) { bytes(&v, sizeof v); }
  void u64(uint64_t v) { bytes(&v, sizeof v); }
  void i64(int64_t v) { bytes(&v, sizeof v); }
  void str(const std::string& s) {
    u64(s.size());
    bytes(s.data(), s.size());
  }
  void f32s(const TensorF& t) { bytes(t.ptr(), sizeof(float) * static_cast<size_t>(t.size())); }
};

struct Reader {
  std::ifstream f;
  std::string path;

  explicit Reader(const std::string& p) : f(p, std::ios::binary), path(p) {
    if (!f) {
      throw std::runtime_error("cannot open checkpoint: " + p);
    }
  }

  void bytes(void* p, size_t n) {
    f.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (f.gcount() != static_cast<std::streamsize>(n)) {
      throw std::runtime_error("truncated checkpoint: " + path);
    }
  }
  uint32_t u32() {
    uint32_t v;
    bytes(&v, sizeof v);
    return v;
  }
  uint64_t u64() {
    uint64_t v;
    bytes(&v, sizeof v);
    return v;
  }
  int64_t i64() {
    int64_t v;
    bytes(&v, sizeof v);
    return v;
  }
  std::string str(uint64_t max_len) {
    const uint64_t n = u64();
    if (n > max_len) {
      throw std::runtime_error("corrupt checkpoint (oversized string): " + path);
    }
    std::string s(static_cast<size_t>(n), '\0');
    bytes(s.data(), s.size());
    return s;
  }
  void f32s(TensorF& t) { bytes(t.ptr(), sizeof(float) * static_cast<size_t>(t.size())); }
};

void write_array(Writer& w, const std::string& name, const TensorF& t) {
  w.str(name);
  w.u32(static_cast<uint32_t>(t.shape.size()));
  for (int64_t d : t.shape) {
    w.i64(d);
  }
  w.f32s(t);
}

}  // namespace

void AdamState::init(const ParamStore<float>& params) {
  m.clear();
  v.clear();
  m.reserve(params.values.size());
  v.reserve(params.values.size());
  for (const auto& p : params.values) {
    m.emplace_back(p.shape);
    v.emplace_back(p.shape);
  }
  t = 0;
}

void save_checkpoint(const Checkpoint& ck, const std::string& path) {
  if (ck.adam.m.size() != ck.params.values.size() ||
      ck.adam.v.size() != ck.params.values.size()) {
    throw std::logic_error("optimizer state does not match parameter inventory");
  }
  namespace fs = std::filesystem;
  const fs::path target(path);
  if (target.has_parent_path()) {
    fs::create_directories(target.parent_path());
  }
  const fs::path tmp = target.string() + ".tmp";
  {
    Writer w(tmp.string());
    w.bytes(kMagic, sizeof kMagic);
    w.u32(kVersion);
    w.u64(static_cast<uint64_t>(ck.step));
    for (uint64_t s : ck.rng_state) {
      w.u64(s);
    }
    w.u64(static_cast<uint64_t>(ck.adam.t));
    w.str(config_to_text(ck.config));
    w.u64(ck.params.values.size());
    for (size_t i = 0; i < ck.params.values.size(); ++i) {
      write_array(w, ck.params.names[i], ck.params.values[i]);
    }
    for (size_t i = 0; i < ck.params.values.size(); ++i) {
      w.f32s(ck.adam.m[i]);
      w.f32s(ck.adam.v[i]);
    }
    w.f.flush();
    if (!w.f) {
      throw std::runtime_error("write failed: " + tmp.string());
    }
  }
  fs::rename(tmp, target);
}

Checkpoint load_checkpoint(const std::string& path) {
  Reader r(path);
  char magic[4];
  r.bytes(magic, sizeof magic);
  if (std::memcmp(magic, kMagic, sizeof kMagic) != 0) {
    throw std::runtime_error("not a checkpoint file: " + path);
  }
  const uint32_t version = r.u32();
  if (version != kVersion) {
    throw std::runtime_error("unsupported checkpoint version " + std::to_string(version) + ": " +
                             path);
  }

  Checkpoint ck;
  ck.step = static_cast<int64_t>(r.u64());
  for (uint64_t& s : ck.rng_state) {
    s = r.u64();
  }
  ck.adam.t = static_cast<int64_t>(r.u64());
  ck.config = parse_config(r.str(1 << 20));

  const uint64_t n_params = r.u64();
  if (n_params > (1u << 20)) {
    throw std::runtime_error("corrupt checkpoint (parameter count): " + path);
  }
  for (uint64_t i = 0; i < n_params; ++i) {
    const std::string name = r.str(4096);
    const uint32_t ndim = r.u32();
    if (ndim > 8) {
      throw std::runtime_error("corrupt checkpoint (rank): " + path);
    }
    std::vector<int64_t> shape(ndim);
    for (auto& d : shape) {
      d = r.i64();
      if (d < 0 || d > (int64_t(1) << 32)) {
        throw std::runtime_error("corrupt checkpoint (dimension): " + path);
      }
    }
    TensorF& t = ck.params.add(name, shape);
    r.f32s(t);
  }
  ck.adam.m.reserve(n_params);
  ck.adam.v.reserve(n_params);
  for (uint64_t i = 0; i < n_params; ++i) {
    TensorF m(ck.params.values[i].shape);
    TensorF v(ck.params.values[i].shape);
    r.f32s(m);
    r.f32s(v);
    ck.adam.m.push_back(std::move(m));
    ck.adam.v.push_back(std::move(v));
  }
  return ck;
}

}  // namespace ocloc
