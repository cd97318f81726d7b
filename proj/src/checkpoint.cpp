#include "protograde/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "protograde/errors.hpp"

namespace protograde {
namespace {

class Writer {
 public:
  void u8(std::uint8_t v) { out_.push_back(static_cast<char>(v)); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void bytes(const std::string& s) { out_ += s; }
  const std::string& str() const { return out_; }

 private:
  std::string out_;
};

class Reader {
 public:
  explicit Reader(std::string data) : data_(std::move(data)) {}
  std::uint8_t u8() {
    need(1);
    return static_cast<std::uint8_t>(data_[pos_++]);
  }
  std::uint32_t u32() {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(u8()) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(u8()) << (8 * i);
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string bytes(std::uint64_t n) {
    need(n);
    std::string s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == data_.size(); }

 private:
  void need(std::uint64_t n) const {
    if (data_.size() - pos_ < n) throw DataError("checkpoint is truncated");
  }
  std::string data_;
  std::size_t pos_ = 0;
};

void write_tensor(Writer& w, const std::string& name, const Tensor& t, bool frozen) {
  w.u32(static_cast<std::uint32_t>(name.size()));
  w.bytes(name);
  w.u8(frozen ? 1 : 0);
  w.u32(static_cast<std::uint32_t>(t.rank()));
  for (auto d : t.shape()) w.u64(d);
  for (double v : t.data()) w.f64(v);
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const HybridEncoder& encoder, const std::string& config_text) {
  Writer w;
  w.bytes("PGCK");
  w.u32(kCheckpointVersion);
  w.u64(config_text.size());
  w.bytes(config_text);
  w.u64(fnv1a64(config_text));
  const auto& params = encoder.parameters().items();
  w.u32(static_cast<std::uint32_t>(params.size() + 2));
  for (const auto& p : params) write_tensor(w, p.name, p.value, p.frozen);
  const auto& s = encoder.scaling();
  write_tensor(w, "scaling.mean", Tensor::from({s.mean.size()}, {s.mean.begin(), s.mean.end()}), true);
  write_tensor(w, "scaling.stddev", Tensor::from({s.stddev.size()}, {s.stddev.begin(), s.stddev.end()}), true);

  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write checkpoint " + path.string());
  out.write(w.str().data(), static_cast<std::streamsize>(w.str().size()));
  if (!out) throw DataError("failed writing checkpoint " + path.string());
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path.string());
  Reader r(std::string(std::istreambuf_iterator<char>(in), {}));
  if (r.bytes(4) != "PGCK") throw DataError(path.string() + " is not a checkpoint (bad magic)");
  const auto version = r.u32();
  if (version != kCheckpointVersion)
    throw DataError("unsupported checkpoint version " + std::to_string(version) + " in " + path.string());

  LoadedCheckpoint ck;
  ck.config_text = r.bytes(r.u64());
  const auto hash = r.u64();
  if (hash != fnv1a64(ck.config_text)) throw DataError("checkpoint config echo does not match its hash");
  ck.config_hash = hex64(hash);

  const auto count = r.u32();
  bool have_mean = false, have_std = false;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::string name = r.bytes(r.u32());
    const bool frozen = r.u8() != 0;
    const auto rank = r.u32();
    if (rank == 0 || rank > 8) throw DataError("checkpoint tensor " + name + " has invalid rank");
    Shape shape(rank);
    for (auto& d : shape) d = r.u64();
    const std::size_t n = shape_size(shape);
    if (n == 0 || n > (std::size_t{1} << 32)) throw DataError("checkpoint tensor " + name + " has invalid shape");
    std::vector<double> values(n);
    for (auto& v : values) v = r.f64();
    if (name == "scaling.mean" || name == "scaling.stddev") {
      if (n != rnfl::kFeatureCount) throw DataError("checkpoint " + name + " must hold 8 values");
      auto& dst = name == "scaling.mean" ? ck.scaling.mean : ck.scaling.stddev;
      std::copy(values.begin(), values.end(), dst.begin());
      (name == "scaling.mean" ? have_mean : have_std) = true;
      continue;
    }
    ck.params.add(name, Tensor::from(std::move(shape), std::move(values)), frozen);
  }
  if (!r.done()) throw DataError("checkpoint has trailing bytes");
  if (!have_mean || !have_std) throw DataError("checkpoint lacks feature scaling statistics");
  return ck;
}

}  // namespace protograde
