#pragma once

// Versioned binary checkpoint for ModelParams. Layout (all integers u32
// little-endian, values IEEE-754 binary32 little-endian):
//
//   "CSEG"                      4-byte magic
//   version                     currently 1
//   config block                channels, reduction, backbone_layers, head_layers,
//                               kernel_size, roi_h, roi_w, mask_h, mask_w
//   tensor_count
//   per tensor: rank, dims[rank], values[prod(dims)]
//
// Tensors appear in ModelParams order: (kernel [k,k,Cin,Cout], bias [Cout]) per
// backbone layer, then per head layer.

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <stdexcept>
#include <string>
#include <vector>

#include "cseg/model.hpp"

namespace cseg {

inline constexpr char kCheckpointMagic[4] = {'C', 'S', 'E', 'G'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

inline void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(std::uint8_t(v >> (8 * i)));
}

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& bytes) : bytes_(bytes) {}
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t(bytes_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  float f32() { return std::bit_cast<float>(u32()); }
  void magic() {
    need(4);
    if (std::memcmp(bytes_.data() + pos_, kCheckpointMagic, 4) != 0) throw CheckpointError("checkpoint: bad magic");
    pos_ += 4;
  }
  bool at_end() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) throw CheckpointError("checkpoint: truncated file");
  }
  const std::vector<std::uint8_t>& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::vector<std::uint8_t> serialize_params(const ModelParams<float>& p) {
  std::vector<std::uint8_t> out(kCheckpointMagic, kCheckpointMagic + 4);
  detail::put_u32(out, kCheckpointVersion);
  const auto& c = p.config;
  for (int v : {c.channels, c.reduction, c.backbone_layers, c.head_layers, c.kernel_size, c.roi_h, c.roi_w, c.mask_h,
                c.mask_w})
    detail::put_u32(out, std::uint32_t(v));
  detail::put_u32(out, std::uint32_t(p.tensors.size()));
  for (const auto& t : p.tensors) {
    detail::put_u32(out, std::uint32_t(t.rank()));
    for (int d : t.shape()) detail::put_u32(out, std::uint32_t(d));
    for (float v : t.values()) detail::put_u32(out, std::bit_cast<std::uint32_t>(v));
  }
  return out;
}

inline ModelParams<float> deserialize_params(const std::vector<std::uint8_t>& bytes) {
  detail::Reader r(bytes);
  r.magic();
  const auto version = r.u32();
  if (version != kCheckpointVersion)
    throw CheckpointError("checkpoint: unsupported version " + std::to_string(version));
  ModelParams<float> p;
  auto& c = p.config;
  for (int* f : {&c.channels, &c.reduction, &c.backbone_layers, &c.head_layers, &c.kernel_size, &c.roi_h, &c.roi_w,
                 &c.mask_h, &c.mask_w})
    *f = int(r.u32());
  try {
    c.validate();
  } catch (const std::invalid_argument& e) {
    throw CheckpointError(std::string("checkpoint: ") + e.what());
  }
  const auto expected = ModelParams<float>::init(c, 0);
  const auto count = r.u32();
  if (count != expected.tensors.size()) throw CheckpointError("checkpoint: tensor count does not match config");
  for (std::uint32_t k = 0; k < count; ++k) {
    const auto rank = r.u32();
    if (rank > 8) throw CheckpointError("checkpoint: implausible tensor rank");
    Shape shape;
    for (std::uint32_t d = 0; d < rank; ++d) shape.push_back(int(r.u32()));
    if (shape != expected.tensors[k].shape())
      throw CheckpointError("checkpoint: tensor " + std::to_string(k) + " has shape " + shape_string(shape) +
                            ", config implies " + shape_string(expected.tensors[k].shape()));
    Tensor<float> t(shape);
    for (auto& v : t.values()) v = r.f32();
    p.tensors.push_back(std::move(t));
  }
  if (!r.at_end()) throw CheckpointError("checkpoint: trailing bytes");
  return p;
}

inline void save_params(const ModelParams<float>& p, const std::string& path) {
  const auto bytes = serialize_params(p);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw CheckpointError("checkpoint: cannot open " + path + " for writing");
  f.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
  if (!f) throw CheckpointError("checkpoint: write failed for " + path);
}

inline ModelParams<float> load_params(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw CheckpointError("checkpoint: cannot open " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return deserialize_params(bytes);
}

}  // namespace cseg
