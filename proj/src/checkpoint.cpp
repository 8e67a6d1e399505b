#include "msgv/checkpoint.hpp"

#include <zlib.h>

#include <cstring>
#include <fstream>

#include "msgv/errors.hpp"

namespace msgv {

namespace {

constexpr char kMagic[4] = {'M', 'S', 'G', 'V'};
constexpr std::uint32_t kVersion = 1;
constexpr const char* kConfigEntry = "__config__";

void put_u32(std::string& buf, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) buf.push_back(char((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& buf, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) buf.push_back(char((v >> (8 * i)) & 0xff));
}

void put_f64(std::string& buf, double d) {
  std::uint64_t bits;
  std::memcpy(&bits, &d, 8);
  put_u64(buf, bits);
}

void put_str(std::string& buf, const std::string& s) {
  put_u32(buf, std::uint32_t(s.size()));
  buf.append(s);
}

class Reader {
 public:
  explicit Reader(std::string bytes) : bytes_(std::move(bytes)) {}

  std::size_t pos() const { return pos_; }
  const std::string& bytes() const { return bytes_; }

  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) throw IoError("checkpoint truncated");
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t(std::uint8_t(bytes_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t(std::uint8_t(bytes_[pos_ + i])) << (8 * i);
    pos_ += 8;
    return v;
  }
  double f64() {
    const std::uint64_t bits = u64();
    double d;
    std::memcpy(&d, &bits, 8);
    return d;
  }
  std::uint8_t u8() {
    need(1);
    return std::uint8_t(bytes_[pos_++]);
  }
  std::string str() {
    const std::uint32_t n = u32();
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

 private:
  std::string bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

void write_checkpoint(const std::string& path, const CheckpointData& data) {
  std::string buf;
  buf.append(kMagic, 4);
  put_u32(buf, kVersion);
  put_u64(buf, data.step);

  put_u32(buf, std::uint32_t(data.rng_states.size()));
  for (const auto& [name, state] : data.rng_states) {
    put_str(buf, name);
    for (std::uint64_t w : state) put_u64(buf, w);
  }

  put_u32(buf, std::uint32_t(data.tensors.size()) + 1);
  // config echo first, as a raw byte entry
  put_str(buf, kConfigEntry);
  buf.push_back(char(1));  // dtype u8
  put_u32(buf, 1);
  put_u64(buf, data.config_echo.size());
  buf.append(data.config_echo);

  for (const auto& [name, t] : data.tensors) {
    put_str(buf, name);
    buf.push_back(char(0));  // dtype f64
    put_u32(buf, std::uint32_t(t.rank()));
    for (std::size_t d : t.shape()) put_u64(buf, d);
    for (double v : t.values()) put_f64(buf, v);
  }

  const auto crc = std::uint32_t(
      crc32(0, reinterpret_cast<const Bytef*>(buf.data()), uInt(buf.size())));
  put_u32(buf, crc);

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out.write(buf.data(), std::streamsize(buf.size()));
  if (!out) throw IoError("short write to '" + path + "'");
}

CheckpointData read_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "'");
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw IoError("checkpoint has bad magic bytes");
  }
  if (bytes.size() < 8 + 4) throw IoError("checkpoint truncated");
  const std::size_t body = bytes.size() - 4;
  std::uint32_t stored = 0;
  for (int i = 0; i < 4; ++i) {
    stored |= std::uint32_t(std::uint8_t(bytes[body + i])) << (8 * i);
  }
  const auto actual = std::uint32_t(
      crc32(0, reinterpret_cast<const Bytef*>(bytes.data()), uInt(body)));
  if (stored != actual) throw IoError("checkpoint checksum mismatch");

  Reader r(bytes.substr(0, body));
  r.u32();  // magic, already checked
  const std::uint32_t version = r.u32();
  if (version != kVersion) {
    throw IoError("unsupported checkpoint version " + std::to_string(version));
  }

  CheckpointData data;
  data.step = r.u64();
  const std::uint32_t rng_count = r.u32();
  for (std::uint32_t i = 0; i < rng_count; ++i) {
    std::string name = r.str();
    std::array<std::uint64_t, 4> state{};
    for (auto& w : state) w = r.u64();
    data.rng_states.emplace_back(std::move(name), state);
  }

  const std::uint32_t tensor_count = r.u32();
  for (std::uint32_t i = 0; i < tensor_count; ++i) {
    std::string name = r.str();
    const std::uint8_t dtype = r.u8();
    const std::uint32_t ndim = r.u32();
    Shape shape(ndim);
    std::size_t numel = 1;
    for (auto& d : shape) {
      d = r.u64();
      numel *= d;
    }
    if (dtype == 1) {
      r.need(numel);
      std::string payload = r.bytes().substr(r.pos(), numel);
      for (std::size_t k = 0; k < numel; ++k) r.u8();
      if (name == kConfigEntry) {
        data.config_echo = std::move(payload);
      }
      continue;
    }
    if (dtype != 0) throw IoError("checkpoint has unknown dtype tag");
    std::vector<double> vals(numel);
    for (auto& v : vals) v = r.f64();
    data.tensors.emplace_back(std::move(name),
                              Tensor::from_data(std::move(shape), std::move(vals)));
  }
  return data;
}

}  // namespace msgv
