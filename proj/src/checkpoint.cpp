#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <vector>

#include "hran/model.hpp"

// Checkpoint layout (all little-endian):
//   magic "HRANCKPT" | u32 version=1
//   u32 scale, u32 channels, u32 rg_count, u32 hrab_per_rg, u32 ca_reduction,
//   u32 fusion_mode (0=BFF, 1=HFF), f32 leaky_slope
//   u32 tensor_count, then per tensor:
//     u16 name_len | name bytes | u8 rank | rank x u32 dims | f32 raw data
// Optional trailing optimizer section (training checkpoints):
//   u32 opt_tensor_count | tensors framed as above, names *.adam.m / *.adam.v
//   u64 iteration | u64 rng_state

namespace hran {

namespace {

constexpr char kMagic[8] = {'H', 'R', 'A', 'N', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

void put_u16(std::string& buf, std::uint16_t v) {
  buf.push_back(static_cast<char>(v & 0xFF));
  buf.push_back(static_cast<char>((v >> 8) & 0xFF));
}
void put_u32(std::string& buf, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}
void put_u64(std::string& buf, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}
void put_f32(std::string& buf, float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, 4);
  put_u32(buf, bits);
}

struct Reader {
  const std::string& buf;
  std::size_t pos = 0;
  const std::string& path;

  void need(std::size_t n, const char* what) {
    if (pos + n > buf.size()) {
      throw DataError(path + ": truncated checkpoint while reading " + std::string(what) +
                      " at byte " + std::to_string(pos));
    }
  }
  std::uint16_t u16() {
    need(2, "u16");
    std::uint16_t v = static_cast<std::uint8_t>(buf[pos]) |
                      (static_cast<std::uint16_t>(static_cast<std::uint8_t>(buf[pos + 1])) << 8);
    pos += 2;
    return v;
  }
  std::uint8_t u8() {
    need(1, "u8");
    return static_cast<std::uint8_t>(buf[pos++]);
  }
  std::uint32_t u32() {
    need(4, "u32");
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= static_cast<std::uint32_t>(static_cast<std::uint8_t>(buf[pos + i])) << (8 * i);
    pos += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8, "u64");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i)
      v |= static_cast<std::uint64_t>(static_cast<std::uint8_t>(buf[pos + i])) << (8 * i);
    pos += 8;
    return v;
  }
  float f32() {
    const std::uint32_t bits = u32();
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
  }
  std::string bytes(std::size_t n, const char* what) {
    need(n, what);
    std::string s = buf.substr(pos, n);
    pos += n;
    return s;
  }
};

void frame_tensor(std::string& buf, const std::string& name,
                  const std::vector<std::uint32_t>& shape, const std::vector<float>& data) {
  put_u16(buf, static_cast<std::uint16_t>(name.size()));
  buf.append(name);
  buf.push_back(static_cast<char>(shape.size()));
  for (std::uint32_t d : shape) put_u32(buf, d);
  const std::size_t off = buf.size();
  buf.resize(off + data.size() * 4);
  std::memcpy(buf.data() + off, data.data(), data.size() * 4);
}

struct FramedTensor {
  std::string name;
  std::vector<std::uint32_t> shape;
  std::vector<float> data;
};

FramedTensor read_tensor(Reader& r) {
  FramedTensor t;
  const std::uint16_t nlen = r.u16();
  t.name = r.bytes(nlen, "tensor name");
  const std::uint8_t rank = r.u8();
  if (rank < 1 || rank > 4) {
    throw DataError(r.path + ": tensor '" + t.name + "' has unsupported rank " +
                    std::to_string(rank));
  }
  std::uint64_t count = 1;
  for (int i = 0; i < rank; ++i) {
    t.shape.push_back(r.u32());
    count *= t.shape.back();
  }
  r.need(count * 4, "tensor data");
  t.data.resize(count);
  std::memcpy(t.data.data(), r.buf.data() + r.pos, count * 4);
  r.pos += count * 4;
  return t;
}

void fill_param_tensor(Tensor4<float>& dst, const FramedTensor& src, const Param<float>& p,
                       const std::string& path) {
  if (src.shape != p.shape || src.data.size() != dst.data.size()) {
    throw DataError(path + ": tensor '" + src.name + "' dims do not match the requested model");
  }
  dst.data = src.data;
}

}  // namespace

void save_checkpoint(const std::string& path, const ModelConfig& cfg,
                     const ParamStore<float>& store, const TrainSection* train) {
  std::string buf;
  buf.append(kMagic, 8);
  put_u32(buf, kVersion);
  put_u32(buf, static_cast<std::uint32_t>(cfg.scale));
  put_u32(buf, static_cast<std::uint32_t>(cfg.channels));
  put_u32(buf, static_cast<std::uint32_t>(cfg.rg_count));
  put_u32(buf, static_cast<std::uint32_t>(cfg.hrab_per_rg));
  put_u32(buf, static_cast<std::uint32_t>(cfg.ca_reduction));
  put_u32(buf, static_cast<std::uint32_t>(cfg.fusion));
  put_f32(buf, cfg.leaky_slope);

  put_u32(buf, static_cast<std::uint32_t>(store.count()));
  for (std::size_t i = 0; i < store.count(); ++i) {
    const Param<float>& p = store.param(i);
    frame_tensor(buf, p.name, p.shape, p.pv.value.data);
  }
  if (train != nullptr) {
    for (std::size_t i = 0; i < store.count(); ++i) {
      const Param<float>& p = store.param(i);
      frame_tensor(buf, p.name + ".adam.m", p.shape, p.m.data);
      frame_tensor(buf, p.name + ".adam.v", p.shape, p.v.data);
    }
    put_u64(buf, train->iteration);
    put_u64(buf, train->rng_state);
  }

  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write checkpoint: " + tmp);
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!out) throw DataError("short write on checkpoint: " + tmp);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) {
    throw DataError("cannot rename checkpoint into place: " + path);
  }
}

Checkpoint load_checkpoint(const std::string& path, const ModelConfig* expected) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint: " + path);
  std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  Reader r{buf, 0, path};

  const std::string magic = r.bytes(8, "magic");
  if (std::memcmp(magic.data(), kMagic, 8) != 0) {
    throw ConfigError(path + ": bad magic, not a checkpoint");
  }
  const std::uint32_t version = r.u32();
  if (version != kVersion) {
    throw ConfigError(path + ": unsupported checkpoint version " + std::to_string(version));
  }

  Checkpoint ck;
  ck.cfg.scale = static_cast<int>(r.u32());
  ck.cfg.channels = static_cast<int>(r.u32());
  ck.cfg.rg_count = static_cast<int>(r.u32());
  ck.cfg.hrab_per_rg = static_cast<int>(r.u32());
  ck.cfg.ca_reduction = static_cast<int>(r.u32());
  const std::uint32_t fusion = r.u32();
  if (fusion > 1) throw ConfigError(path + ": unknown fusion mode " + std::to_string(fusion));
  ck.cfg.fusion = static_cast<FusionMode>(fusion);
  ck.cfg.leaky_slope = r.f32();
  ck.cfg.validate();

  if (expected != nullptr && !expected->same_architecture(ck.cfg)) {
    throw ConfigError(path + ": checkpoint config does not match the requesting model");
  }

  ck.store = build_store<float>(ck.cfg);
  const std::uint32_t tcount = r.u32();
  if (tcount != ck.store.count()) {
    throw DataError(path + ": tensor count " + std::to_string(tcount) + " != expected " +
                    std::to_string(ck.store.count()));
  }
  for (std::uint32_t i = 0; i < tcount; ++i) {
    FramedTensor t = read_tensor(r);
    if (!ck.store.contains(t.name)) throw DataError(path + ": unknown tensor '" + t.name + "'");
    Param<float>& p = ck.store.at(t.name);
    fill_param_tensor(p.pv.value, t, p, path);
  }

  if (r.pos < buf.size()) {
    // optimizer section: one .adam.m and one .adam.v per model tensor
    const std::size_t ocount = ck.store.count() * 2;
    for (std::size_t i = 0; i < ocount; ++i) {
      FramedTensor t = read_tensor(r);
      std::string base = t.name;
      bool is_m = false;
      if (base.size() > 7 && base.compare(base.size() - 7, 7, ".adam.m") == 0) {
        is_m = true;
        base.resize(base.size() - 7);
      } else if (base.size() > 7 && base.compare(base.size() - 7, 7, ".adam.v") == 0) {
        base.resize(base.size() - 7);
      } else {
        throw DataError(path + ": unexpected optimizer tensor '" + t.name + "'");
      }
      if (!ck.store.contains(base)) throw DataError(path + ": unknown tensor '" + t.name + "'");
      Param<float>& p = ck.store.at(base);
      fill_param_tensor(is_m ? p.m : p.v, t, p, path);
    }
    ck.train.iteration = r.u64();
    ck.train.rng_state = r.u64();
    ck.has_train = true;
    if (r.pos != buf.size()) {
      throw DataError(path + ": trailing bytes after optimizer section at byte " +
                      std::to_string(r.pos));
    }
  }
  return ck;
}

}  // namespace hran
