#include "tseg/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <stdexcept>

namespace tseg {
namespace {

constexpr char kMagic[8] = {'T', 'S', 'E', 'G', 'C', 'K', 'P', 'T'};
constexpr const char* kIterationName = "meta.iteration";
constexpr const char* kConfigName = "meta.config";

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out_.insert(out_.end(), b, b + n);
  }
  template <class T>
  void le(T v) {
    for (std::size_t i = 0; i < sizeof(T); ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f32(double v) { le(std::bit_cast<std::uint32_t>(static_cast<float>(v))); }
  std::vector<std::uint8_t> take() { return std::move(out_); }

 private:
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> in) : in_(in) {}
  const std::uint8_t* bytes(std::size_t n) {
    if (pos_ + n > in_.size()) throw std::runtime_error("checkpoint: truncated file");
    const auto* p = in_.data() + pos_;
    pos_ += n;
    return p;
  }
  template <class T>
  T le() {
    const auto* p = bytes(sizeof(T));
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(static_cast<T>(p[i]) << (8 * i));
    return v;
  }
  double f32() { return static_cast<double>(std::bit_cast<float>(le<std::uint32_t>())); }
  bool done() const { return pos_ == in_.size(); }

 private:
  std::span<const std::uint8_t> in_;
  std::size_t pos_ = 0;
};

void write_tensor(Writer& w, const std::string& name, const Tensor& t) {
  if (name.size() > 0xffff) throw std::invalid_argument("checkpoint: tensor name too long");
  if (t.rank() > 0xff) throw std::invalid_argument("checkpoint: rank too large");
  w.le<std::uint16_t>(static_cast<std::uint16_t>(name.size()));
  w.bytes(name.data(), name.size());
  w.le<std::uint8_t>(static_cast<std::uint8_t>(t.rank()));
  for (auto d : t.shape()) {
    if (d > 0xffffffffULL) throw std::invalid_argument("checkpoint: extent too large");
    w.le<std::uint32_t>(static_cast<std::uint32_t>(d));
  }
  for (double v : t.data()) w.f32(v);
}

}  // namespace

std::vector<std::uint8_t> Checkpoint::serialize() const {
  if (iteration > (1ULL << 24)) throw std::invalid_argument("checkpoint: iteration not representable as float32");
  Writer w;
  w.bytes(kMagic, sizeof kMagic);
  w.le<std::uint32_t>(kVersion);
  w.le<std::uint32_t>(static_cast<std::uint32_t>(params.size() + 2));
  for (const auto& [name, t] : params) write_tensor(w, name, t);
  write_tensor(w, kIterationName, Tensor::scalar(static_cast<double>(iteration)));
  std::vector<double> cfg(config_text.begin(), config_text.end());
  for (auto& c : cfg) c = static_cast<double>(static_cast<unsigned char>(static_cast<char>(c)));
  if (cfg.empty()) cfg.push_back(0.0);
  const std::size_t n = cfg.size();
  write_tensor(w, kConfigName, Tensor({n}, std::move(cfg)));
  return w.take();
}

Checkpoint Checkpoint::deserialize(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  if (std::memcmp(r.bytes(sizeof kMagic), kMagic, sizeof kMagic) != 0) {
    throw std::runtime_error("checkpoint: bad magic");
  }
  const auto version = r.le<std::uint32_t>();
  if (version != kVersion) throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));
  const auto count = r.le<std::uint32_t>();
  Checkpoint ck;
  bool have_iter = false;
  for (std::uint32_t k = 0; k < count; ++k) {
    const auto len = r.le<std::uint16_t>();
    const auto* np = r.bytes(len);
    std::string name(reinterpret_cast<const char*>(np), len);
    const auto rank = r.le<std::uint8_t>();
    if (rank == 0) throw std::runtime_error("checkpoint: tensor '" + name + "' has rank 0");
    Shape shape(rank);
    for (auto& d : shape) d = r.le<std::uint32_t>();
    Tensor t(shape);
    for (auto& v : t.data()) v = r.f32();
    if (name == kIterationName) {
      ck.iteration = static_cast<std::uint64_t>(t.item());
      have_iter = true;
    } else if (name == kConfigName) {
      ck.config_text.clear();
      for (double v : t.data()) {
        if (v != 0.0) ck.config_text.push_back(static_cast<char>(static_cast<unsigned char>(v)));
      }
    } else if (!ck.params.emplace(std::move(name), std::move(t)).second) {
      throw std::runtime_error("checkpoint: duplicate tensor name");
    }
  }
  if (!have_iter) throw std::runtime_error("checkpoint: missing iteration counter");
  if (!r.done()) throw std::runtime_error("checkpoint: trailing bytes");
  return ck;
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path.string() + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write failed for '" + path.string() + "'");
}

void Checkpoint::save(const std::filesystem::path& path) const { write_file(path, serialize()); }

Checkpoint Checkpoint::load(const std::filesystem::path& path) { return deserialize(read_file(path)); }

}  // namespace tseg
