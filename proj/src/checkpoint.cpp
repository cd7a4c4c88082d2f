#include "qsector/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace qsector::ad {
namespace {

constexpr char kMagic[4] = {'Q', 'S', 'C', 'K'};

class Writer {
 public:
  void u32(std::uint32_t v) { put_le(v); }
  void u64(std::uint64_t v) { put_le(v); }
  void f64(double v) { put_le(std::bit_cast<std::uint64_t>(v)); }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes.insert(bytes.end(), s.begin(), s.end());
  }
  void raw(const char* p, std::size_t n) { bytes.insert(bytes.end(), p, p + n); }

  std::vector<std::uint8_t> bytes;

 private:
  template <typename T>
  void put_le(T v) {
    for (std::size_t i = 0; i < sizeof(T); ++i) bytes.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
};

class Reader {
 public:
  Reader(const std::vector<std::uint8_t>& b, std::size_t end) : bytes_(b), end_(end) {}

  std::uint32_t u32() { return get_le<std::uint32_t>(); }
  std::uint64_t u64() { return get_le<std::uint64_t>(); }
  double f64() { return std::bit_cast<double>(get_le<std::uint64_t>()); }
  std::string str() {
    const std::uint32_t n = u32();
    need(n);
    std::string s(bytes_.begin() + static_cast<std::ptrdiff_t>(pos_),
                  bytes_.begin() + static_cast<std::ptrdiff_t>(pos_ + n));
    pos_ += n;
    return s;
  }
  void expect_magic() {
    need(4);
    if (std::memcmp(bytes_.data(), kMagic, 4) != 0) throw CheckpointError("checkpoint: bad magic bytes");
    pos_ = 4;
  }
  bool done() const { return pos_ == end_; }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > end_) throw CheckpointError("checkpoint: truncated file");
  }
  template <typename T>
  T get_le() {
    need(sizeof(T));
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(bytes_[pos_ + i]) << (8 * i);
    pos_ += sizeof(T);
    return v;
  }

  const std::vector<std::uint8_t>& bytes_;
  std::size_t end_;
  std::size_t pos_ = 0;
};

}  // namespace

std::uint64_t fnv1a64(const std::uint8_t* data, std::size_t n) {
  std::uint64_t h = 14695981039346656037ULL;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= data[i];
    h *= 1099511628211ULL;
  }
  return h;
}

const std::vector<NamedTensor>& Checkpoint::group(const std::string& name) const {
  for (const auto& [g, tensors] : groups) {
    if (g == name) return tensors;
  }
  throw CheckpointError("checkpoint: missing group '" + name + "'");
}

std::vector<NamedTensor> snapshot(const ParameterSet& params) {
  std::vector<NamedTensor> out;
  for (const auto* p : params.all()) out.push_back({p->name, p->value});
  return out;
}

void restore(ParameterSet& params, const std::vector<NamedTensor>& tensors) {
  if (tensors.size() != params.count()) {
    throw CheckpointError("checkpoint: expected " + std::to_string(params.count()) + " tensors, found " +
                          std::to_string(tensors.size()));
  }
  for (const auto& t : tensors) {
    Parameter* p = params.find(t.name);
    if (p == nullptr) throw CheckpointError("checkpoint: unknown tensor '" + t.name + "'");
    if (p->value.shape() != t.value.shape()) {
      throw CheckpointError("checkpoint: tensor '" + t.name + "' has shape " + shape_str(t.value.shape()) +
                            ", model expects " + shape_str(p->value.shape()));
    }
    p->value = t.value;
  }
}

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt) {
  Writer w;
  w.raw(kMagic, 4);
  w.u32(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(ckpt.metadata.size()));
  for (const auto& [k, v] : ckpt.metadata) {
    w.str(k);
    w.str(v);
  }
  w.u32(static_cast<std::uint32_t>(ckpt.groups.size()));
  for (const auto& [name, tensors] : ckpt.groups) {
    w.str(name);
    w.u32(static_cast<std::uint32_t>(tensors.size()));
    for (const auto& t : tensors) {
      w.str(t.name);
      w.u32(static_cast<std::uint32_t>(t.value.rank()));
      for (auto d : t.value.shape()) w.u64(d);
      for (double x : t.value.data()) w.f64(x);
    }
  }
  w.u64(fnv1a64(w.bytes.data(), w.bytes.size()));
  return std::move(w.bytes);
}

Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 16) throw CheckpointError("checkpoint: file too short");
  const std::size_t body = bytes.size() - 8;
  std::uint64_t stored = 0;
  for (std::size_t i = 0; i < 8; ++i) stored |= static_cast<std::uint64_t>(bytes[body + i]) << (8 * i);
  if (stored != fnv1a64(bytes.data(), body)) throw CheckpointError("checkpoint: checksum mismatch");

  Reader r(bytes, body);
  r.expect_magic();
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw CheckpointError("checkpoint: unsupported format version " + std::to_string(version));
  }
  Checkpoint ckpt;
  const std::uint32_t n_meta = r.u32();
  for (std::uint32_t i = 0; i < n_meta; ++i) {
    std::string k = r.str();
    ckpt.metadata[k] = r.str();
  }
  const std::uint32_t n_groups = r.u32();
  for (std::uint32_t g = 0; g < n_groups; ++g) {
    std::string name = r.str();
    const std::uint32_t n = r.u32();
    std::vector<NamedTensor> tensors;
    for (std::uint32_t i = 0; i < n; ++i) {
      NamedTensor t;
      t.name = r.str();
      const std::uint32_t rank = r.u32();
      Shape shape(rank);
      for (auto& d : shape) d = r.u64();
      std::vector<double> data(numel(shape));
      for (auto& x : data) x = r.f64();
      t.value = Tensor(std::move(shape), std::move(data));
      tensors.push_back(std::move(t));
    }
    ckpt.groups.emplace_back(std::move(name), std::move(tensors));
  }
  if (!r.done()) throw CheckpointError("checkpoint: trailing bytes before checksum");
  return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  const auto bytes = encode_checkpoint(ckpt);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("checkpoint: cannot open '" + path + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw CheckpointError("checkpoint: write failed for '" + path + "'");
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("checkpoint: cannot open '" + path + "'");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

}  // namespace qsector::ad
