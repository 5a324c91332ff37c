#include "kernatt/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <vector>

namespace kernatt {

namespace {

using Kind = CheckpointError::Kind;

constexpr char kMagic[4] = {'K', 'A', 'T', 'T'};

template <typename T>
void put(std::vector<char>& out, T value) {
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<char>((value >> (8 * i)) & 0xff));
}

class Reader {
 public:
  Reader(const std::vector<char>& buf, const std::string& path) : buf_(buf), path_(path) {}

  template <typename T>
  T get() {
    need(sizeof(T));
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i)
      v |= static_cast<T>(static_cast<unsigned char>(buf_[pos_ + i])) << (8 * i);
    pos_ += sizeof(T);
    return v;
  }

  std::string bytes(std::size_t n) {
    need(n);
    std::string s(buf_.data() + pos_, n);
    pos_ += n;
    return s;
  }

  bool done() const { return pos_ == buf_.size(); }

 private:
  void need(std::size_t n) const {
    if (buf_.size() - pos_ < n) {
      throw CheckpointError(Kind::Malformed, "checkpoint '" + path_ + "' is truncated at byte " +
                                                 std::to_string(pos_));
    }
  }

  const std::vector<char>& buf_;
  const std::string& path_;
  std::size_t pos_ = 0;
};

struct Block {
  Shape shape;
  std::vector<float> values;
};

}  // namespace

std::uint64_t config_digest(const ModelConfig& cfg) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : cfg.canonical()) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

void save_checkpoint(const Model& model, const std::string& path) {
  std::vector<char> out(kMagic, kMagic + 4);
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint64_t>(out, config_digest(model.config()));
  std::uint32_t count = 0;
  model.visit([&](const std::string&, const Tensor&) { ++count; });
  put<std::uint32_t>(out, count);
  model.visit([&](const std::string& name, const Tensor& t) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out.insert(out.end(), name.begin(), name.end());
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape()) put<std::uint64_t>(out, d);
    for (double v : t.data()) put<std::uint32_t>(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  });

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw CheckpointError(Kind::Io, "cannot open '" + path + "' for writing");
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw CheckpointError(Kind::Io, "failed writing '" + path + "'");
}

Model load_checkpoint(const std::string& path, const ModelConfig& cfg) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw CheckpointError(Kind::Io, "cannot open checkpoint '" + path + "'");
  std::vector<char> buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());

  Reader r(buf, path);
  if (r.bytes(4) != std::string(kMagic, 4)) {
    throw CheckpointError(Kind::Malformed, "'" + path + "' is not a checkpoint (bad magic)");
  }
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw CheckpointError(Kind::Malformed, "unsupported checkpoint version " + std::to_string(version));
  }
  const auto digest = r.get<std::uint64_t>();
  const auto count = r.get<std::uint32_t>();
  std::map<std::string, Block> blocks;
  for (std::uint32_t b = 0; b < count; ++b) {
    auto name = r.bytes(r.get<std::uint32_t>());
    Block block;
    const auto rank = r.get<std::uint32_t>();
    if (rank > 3) throw CheckpointError(Kind::Malformed, "block '" + name + "' has rank " + std::to_string(rank));
    for (std::uint32_t k = 0; k < rank; ++k) block.shape.push_back(r.get<std::uint64_t>());
    const std::size_t n = shape_numel(block.shape);
    if (n > buf.size()) throw CheckpointError(Kind::Malformed, "block '" + name + "' is truncated");
    block.values.resize(n);
    for (auto& v : block.values) v = std::bit_cast<float>(r.get<std::uint32_t>());
    if (!blocks.emplace(std::move(name), std::move(block)).second) {
      throw CheckpointError(Kind::Malformed, "duplicate block in '" + path + "'");
    }
  }
  if (!r.done()) throw CheckpointError(Kind::Malformed, "trailing bytes after the last block");

  Rng rng(0);
  Model model = Model::init(cfg, rng);
  std::size_t matched = 0;
  model.visit([&](const std::string& name, Tensor& t) {
    auto it = blocks.find(name);
    if (it == blocks.end()) {
      throw CheckpointError(Kind::DimensionMismatch, "checkpoint has no parameter '" + name + "'");
    }
    if (it->second.shape != t.shape()) {
      throw CheckpointError(Kind::DimensionMismatch, "parameter '" + name + "' is " +
                                                         shape_str(it->second.shape) +
                                                         " in the checkpoint but " +
                                                         shape_str(t.shape()) + " in the config");
    }
    ++matched;
  });
  if (matched != blocks.size()) {
    throw CheckpointError(Kind::DimensionMismatch,
                          "checkpoint holds " + std::to_string(blocks.size()) +
                              " parameters, the config expects " + std::to_string(matched));
  }
  if (digest != config_digest(cfg)) {
    throw CheckpointError(Kind::ConfigMismatch,
                          "checkpoint was written for a different model configuration");
  }
  model.visit([&](const std::string& name, Tensor& t) {
    const auto& values = blocks.at(name).values;
    auto w = t.mutable_data();
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = values[i];
  });
  return model;
}

}  // namespace kernatt
