#pragma once

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>
#include <string>
#include <vector>

#include "fatnet/config.hpp"
#include "fatnet/model.hpp"

namespace fatnet {

/**
 * Checkpoint layout (all integers u32 little-endian):
 *   "FATCKPT1" | config length, config text | tensor count |
 *   per tensor: name length, name, rank, dims..., f32 data
 * Parameters and batch-norm running statistics are both stored.
 */
inline constexpr char kCheckpointMagic[8] = {'F', 'A', 'T', 'C', 'K', 'P', 'T', '1'};

class CheckpointError : public Error {
 public:
  enum class Kind { kIo, kBadMagic, kTruncated, kShapeMismatch, kConfigMismatch };

  CheckpointError(Kind kind, const std::string& what) : Error(what), kind_(kind) {}
  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(char((v >> (8 * i)) & 0xff));
}

inline void put_f32(std::string& out, float f) {
  std::uint32_t bits;
  std::memcpy(&bits, &f, 4);
  put_u32(out, bits);
}

/// Bounds-checked little-endian reader over a byte buffer.
class ByteReader {
 public:
  ByteReader(const std::string& bytes, std::string context)
      : bytes_(bytes), context_(std::move(context)) {}

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= std::uint32_t(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }

  float f32() {
    const std::uint32_t bits = u32();
    float f;
    std::memcpy(&f, &bits, 4);
    return f;
  }

  std::string str(std::size_t n) {
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n)
      throw CheckpointError(CheckpointError::Kind::kTruncated,
                            context_ + ": file ends early at byte " + std::to_string(pos_));
  }

  const std::string& bytes_;
  std::string context_;
  std::size_t pos_ = 0;
};

}  // namespace detail

struct CheckpointData {
  std::string config_text;
  std::vector<std::pair<std::string, Tensor<float>>> tensors;
};

template <typename T>
std::string serialize_checkpoint(FatNet<T>& model) {
  std::string out(kCheckpointMagic, 8);
  const std::string cfg = model_config_text(model.config());
  detail::put_u32(out, std::uint32_t(cfg.size()));
  out += cfg;
  std::vector<std::pair<std::string, const Tensor<T>*>> all;
  StateVisitor<T> v;
  v.on_param = [&](const std::string& n, Param<T>& p) { all.emplace_back(n, &p.value()); };
  v.on_buffer = [&](const std::string& n, Tensor<T>& t) { all.emplace_back(n, &t); };
  model.visit("", v);
  detail::put_u32(out, std::uint32_t(all.size()));
  for (const auto& [name, t] : all) {
    detail::put_u32(out, std::uint32_t(name.size()));
    out += name;
    detail::put_u32(out, std::uint32_t(t->rank()));
    for (std::size_t d : t->shape()) detail::put_u32(out, std::uint32_t(d));
    for (T x : t->data()) detail::put_f32(out, float(x));
  }
  return out;
}

inline CheckpointData parse_checkpoint(const std::string& bytes,
                                       const std::string& context = "checkpoint") {
  using Kind = CheckpointError::Kind;
  if (bytes.size() < 8 || std::memcmp(bytes.data(), kCheckpointMagic, 8) != 0) {
    if (bytes.size() < 8 && std::memcmp(bytes.data(), kCheckpointMagic, bytes.size()) == 0)
      throw CheckpointError(Kind::kTruncated, context + ": file ends inside the header");
    throw CheckpointError(Kind::kBadMagic, context + ": not a FatNet checkpoint");
  }
  detail::ByteReader r(bytes, context);
  r.str(8);
  CheckpointData data;
  data.config_text = r.str(r.u32());
  const std::uint32_t count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = r.str(r.u32());
    const std::uint32_t rank = r.u32();
    if (rank == 0 || rank > 8)
      throw CheckpointError(Kind::kTruncated, context + ": corrupt rank for " + name);
    Shape shape;
    std::size_t n = 1;
    for (std::uint32_t d = 0; d < rank; ++d) {
      shape.push_back(r.u32());
      if (shape.back() == 0)
        throw CheckpointError(Kind::kTruncated, context + ": corrupt shape for " + name);
      n *= shape.back();
      if (n > r.remaining())
        throw CheckpointError(Kind::kTruncated, context + ": file ends inside " + name);
    }
    std::vector<float> values(n);
    for (auto& x : values) x = r.f32();
    data.tensors.emplace_back(std::move(name), Tensor<float>(shape, std::move(values)));
  }
  if (r.remaining() != 0)
    throw CheckpointError(Kind::kTruncated,
                          context + ": " + std::to_string(r.remaining()) + " trailing bytes");
  return data;
}

/**
 * Copies checkpoint tensors into `model`. Everything is validated first,
 * so on any error the model is left untouched.
 */
template <typename T>
void load_state(FatNet<T>& model, const CheckpointData& data) {
  using Kind = CheckpointError::Kind;
  std::map<std::string, const Tensor<float>*> stored;
  for (const auto& [n, t] : data.tensors) stored[n] = &t;

  std::vector<std::pair<Tensor<T>*, const Tensor<float>*>> plan;
  StateVisitor<T> v;
  auto match = [&](const std::string& name, Tensor<T>& dst) {
    auto it = stored.find(name);
    if (it == stored.end())
      throw CheckpointError(Kind::kConfigMismatch, "checkpoint has no tensor " + name);
    if (it->second->shape() != dst.shape())
      throw CheckpointError(Kind::kShapeMismatch,
                            "tensor " + name + " is " + shape_string(it->second->shape()) +
                                " in the checkpoint but " + shape_string(dst.shape()) +
                                " in the model");
    plan.emplace_back(&dst, it->second);
    stored.erase(it);
  };
  v.on_param = [&](const std::string& n, Param<T>& p) { match(n, p.var.mutable_value()); };
  v.on_buffer = [&](const std::string& n, Tensor<T>& t) { match(n, t); };
  model.visit("", v);
  if (!stored.empty())
    throw CheckpointError(Kind::kConfigMismatch,
                          "checkpoint tensor " + stored.begin()->first + " is not in the model");
  ModelConfig saved;
  try {
    saved = parse_model_config(data.config_text);
  } catch (const Error& e) {
    throw CheckpointError(Kind::kConfigMismatch, std::string("bad stored config: ") + e.what());
  }
  if (!(saved == model.config()))
    throw CheckpointError(Kind::kConfigMismatch, "checkpoint config differs from the model's");

  for (auto& [dst, src] : plan)
    for (std::size_t i = 0; i < dst->size(); ++i) (*dst)[i] = T(src->data()[i]);
}

inline std::string read_binary_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw CheckpointError(CheckpointError::Kind::kIo, "cannot open " + path);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

/// Writes via a temporary file so an interrupted save never leaves a torn file.
inline void write_binary_file(const std::string& path, const std::string& bytes) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError(CheckpointError::Kind::kIo, "cannot write " + path);
    out.write(bytes.data(), std::streamsize(bytes.size()));
    if (!out) throw CheckpointError(CheckpointError::Kind::kIo, "write failed for " + path);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0)
    throw CheckpointError(CheckpointError::Kind::kIo, "cannot rename onto " + path);
}

template <typename T>
void save_checkpoint(FatNet<T>& model, const std::string& path) {
  write_binary_file(path, serialize_checkpoint(model));
}

/// Rebuilds the model described by the checkpoint and loads its state.
template <typename T = float>
FatNet<T> load_checkpoint(const std::string& path) {
  CheckpointData data = parse_checkpoint(read_binary_file(path), path);
  ModelConfig cfg;
  try {
    cfg = parse_model_config(data.config_text);
    cfg.validate();
  } catch (const Error& e) {
    throw CheckpointError(CheckpointError::Kind::kConfigMismatch,
                          path + ": bad stored config: " + e.what());
  }
  FatNet<T> model(cfg);
  load_state(model, data);
  return model;
}

/// Loads into an existing model; a different architecture is rejected.
template <typename T>
void load_checkpoint_into(FatNet<T>& model, const std::string& path) {
  load_state(model, parse_checkpoint(read_binary_file(path), path));
}

}  // namespace fatnet
