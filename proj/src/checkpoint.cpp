#include "aqa/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "aqa/error.hpp"

namespace aqa {

namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint codec assumes a little-endian host");

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& bytes) : bytes_(bytes) {}

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::string str(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  void floats(std::vector<float>& out, std::size_t n) {
    need(n * 4);
    out.resize(n);
    std::memcpy(out.data(), bytes_.data() + pos_, n * 4);
    pos_ += n * 4;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw IoError("checkpoint: truncated data");
  }
  const std::vector<std::uint8_t>& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const ParameterStore& params) {
  std::vector<std::uint8_t> out(kCheckpointMagic, kCheckpointMagic + 4);
  put_u32(out, kCheckpointVersion);
  put_u32(out, static_cast<std::uint32_t>(params.tensor_count()));
  for (const auto& p : params.all()) {
    put_u32(out, static_cast<std::uint32_t>(p.name.size()));
    out.insert(out.end(), p.name.begin(), p.name.end());
    put_u32(out, static_cast<std::uint32_t>(p.tensor.rank()));
    for (int d : p.tensor.shape()) put_u32(out, static_cast<std::uint32_t>(d));
    for (double v : p.tensor.values()) {
      const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(v));
      put_u32(out, bits);
    }
  }
  return out;
}

std::vector<CheckpointEntry> decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  Reader r(bytes);
  if (r.str(4) != std::string(kCheckpointMagic, 4)) throw IoError("checkpoint: bad magic");
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) throw IoError("checkpoint: unsupported version " + std::to_string(version));
  const std::uint32_t count = r.u32();
  std::vector<CheckpointEntry> entries(count);
  for (auto& e : entries) {
    e.name = r.str(r.u32());
    const std::uint32_t rank = r.u32();
    std::size_t n = 1;
    for (std::uint32_t i = 0; i < rank; ++i) {
      e.dims.push_back(r.u32());
      n *= e.dims.back();
    }
    r.floats(e.data, n);
  }
  if (!r.done()) throw IoError("checkpoint: trailing bytes");
  return entries;
}

void save_checkpoint(const ParameterStore& params, const std::filesystem::path& path) {
  const auto bytes = encode_checkpoint(params);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write checkpoint " + path.string());
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw IoError("failed writing checkpoint " + path.string());
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path.string());
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(f), {});
}

void load_checkpoint(ParameterStore& params, const std::vector<std::uint8_t>& bytes) {
  const auto entries = decode_checkpoint(bytes);
  if (entries.size() != params.tensor_count()) {
    throw IoError("checkpoint holds " + std::to_string(entries.size()) + " parameters, model has " +
                  std::to_string(params.tensor_count()));
  }
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const auto& e = entries[i];
    Tensor t = params.all()[i].tensor;
    if (e.name != params.all()[i].name) {
      throw IoError("checkpoint parameter " + std::to_string(i) + " is '" + e.name + "', model expects '" +
                    params.all()[i].name + "'");
    }
    Shape shape(e.dims.begin(), e.dims.end());
    if (shape != t.shape()) {
      throw IoError("checkpoint parameter '" + e.name + "' has shape " + shape_str(shape) + ", model expects " +
                    shape_str(t.shape()));
    }
    auto values = t.mutable_values();
    for (std::size_t k = 0; k < values.size(); ++k) values[k] = static_cast<double>(e.data[k]);
  }
}

void load_checkpoint(ParameterStore& params, const std::filesystem::path& path) {
  load_checkpoint(params, read_file_bytes(path));
}

}  // namespace aqa
