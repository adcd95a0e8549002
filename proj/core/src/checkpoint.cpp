#include "anisdf/checkpoint.hpp"

#include <zlib.h>

#include <cstring>
#include <fstream>
#include <vector>

namespace anisdf {

namespace {

constexpr char kMagic[8] = {'A', 'N', 'I', 'S', 'D', 'F', 'C', 'K'};
constexpr std::uint32_t kFormatVersion = 1;

class Writer {
 public:
  void u32(std::uint32_t v) { raw(&v, 4); }
  void u64(std::uint64_t v) { raw(&v, 8); }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    raw(s.data(), s.size());
  }
  void doubles(const Eigen::VectorXd& v) { raw(v.data(), static_cast<std::size_t>(v.size()) * 8); }
  void raw(const void* p, std::size_t n) {
    const char* c = static_cast<const char*>(p);
    buf_.insert(buf_.end(), c, c + n);
  }
  const std::vector<char>& buffer() const { return buf_; }

 private:
  std::vector<char> buf_;
};

class Reader {
 public:
  Reader(const char* data, std::size_t size) : data_(data), size_(size) {}
  std::uint32_t u32() {
    std::uint32_t v;
    raw(&v, 4);
    return v;
  }
  std::uint64_t u64() {
    std::uint64_t v;
    raw(&v, 8);
    return v;
  }
  std::string str() {
    const std::uint32_t n = u32();
    if (n > remaining()) throw CheckpointError("checkpoint: truncated string");
    std::string s(data_ + at_, n);
    at_ += n;
    return s;
  }
  Eigen::VectorXd doubles(std::size_t n) {
    Eigen::VectorXd v(static_cast<Eigen::Index>(n));
    raw(v.data(), n * 8);
    return v;
  }
  void raw(void* p, std::size_t n) {
    if (n > remaining()) throw CheckpointError("checkpoint: truncated file");
    std::memcpy(p, data_ + at_, n);
    at_ += n;
  }
  std::size_t remaining() const { return size_ - at_; }

 private:
  const char* data_;
  std::size_t size_;
  std::size_t at_ = 0;
};

void write_store_section(Writer& w, const std::map<std::string, Eigen::VectorXd>& values,
                         const std::map<std::string, std::vector<int>>& shapes) {
  w.u32(static_cast<std::uint32_t>(values.size()));
  for (const auto& [id, vals] : values) {
    w.str(id);
    const auto& shape = shapes.at(id);
    w.u32(static_cast<std::uint32_t>(shape.size()));
    for (int d : shape) w.u32(static_cast<std::uint32_t>(d));
    w.doubles(vals);
  }
}

}  // namespace

void save_checkpoint(const Checkpoint& ck, const std::string& path) {
  Writer w;
  w.raw(kMagic, 8);
  w.u32(kFormatVersion);
  w.u64(ck.step);
  w.u64(ck.seed);
  w.u64(ck.store_version);
  w.u64(ck.adam_t);
  w.str(ck.config_text);
  w.str(ck.grid_signature);

  std::map<std::string, Eigen::VectorXd> values;
  std::map<std::string, std::vector<int>> shapes;
  for (const auto& [id, p] : ck.store.all()) {
    values[id] = p.values;
    shapes[id] = p.shape;
  }
  write_store_section(w, values, shapes);

  auto write_moments = [&](const std::map<std::string, Eigen::VectorXd>& m) {
    w.u32(static_cast<std::uint32_t>(m.size()));
    for (const auto& [id, vals] : m) {
      w.str(id);
      w.u32(static_cast<std::uint32_t>(vals.size()));
      w.doubles(vals);
    }
  };
  write_moments(ck.adam_m);
  write_moments(ck.adam_v);

  const std::uint32_t crc = static_cast<std::uint32_t>(
      crc32(0L, reinterpret_cast<const Bytef*>(w.buffer().data()), static_cast<uInt>(w.buffer().size())));
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError("save_checkpoint: cannot open " + path);
  out.write(w.buffer().data(), static_cast<std::streamsize>(w.buffer().size()));
  out.write(reinterpret_cast<const char*>(&crc), 4);
  if (!out) throw CheckpointError("save_checkpoint: write failed for " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("load_checkpoint: cannot open " + path);
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() < 16) throw CheckpointError("load_checkpoint: file too small");

  const std::uint32_t stored_crc = *reinterpret_cast<const std::uint32_t*>(bytes.data() + bytes.size() - 4);
  const std::uint32_t crc = static_cast<std::uint32_t>(
      crc32(0L, reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(bytes.size() - 4)));
  if (crc != stored_crc) throw CheckpointError("load_checkpoint: checksum failure in " + path);

  Reader r(bytes.data(), bytes.size() - 4);
  char magic[8];
  r.raw(magic, 8);
  if (std::memcmp(magic, kMagic, 8) != 0) throw CheckpointError("load_checkpoint: bad magic in " + path);
  const std::uint32_t version = r.u32();
  if (version != kFormatVersion)
    throw CheckpointError("load_checkpoint: unsupported format version " + std::to_string(version));

  Checkpoint ck;
  ck.step = r.u64();
  ck.seed = r.u64();
  ck.store_version = r.u64();
  ck.adam_t = r.u64();
  ck.config_text = r.str();
  ck.grid_signature = r.str();

  const std::uint32_t n_params = r.u32();
  for (std::uint32_t i = 0; i < n_params; ++i) {
    const std::string id = r.str();
    const std::uint32_t nd = r.u32();
    std::vector<int> shape(nd);
    std::size_t total = 1;
    for (std::uint32_t d = 0; d < nd; ++d) {
      shape[d] = static_cast<int>(r.u32());
      total *= static_cast<std::size_t>(shape[d]);
    }
    Parameter& p = ck.store.create(id, shape);
    p.values = r.doubles(total);
  }
  ck.store.set_version(ck.store_version);

  auto read_moments = [&](std::map<std::string, Eigen::VectorXd>& m) {
    const std::uint32_t n = r.u32();
    for (std::uint32_t i = 0; i < n; ++i) {
      const std::string id = r.str();
      const std::uint32_t len = r.u32();
      m[id] = r.doubles(len);
    }
  };
  read_moments(ck.adam_m);
  read_moments(ck.adam_v);
  return ck;
}

}  // namespace anisdf
