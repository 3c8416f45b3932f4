#include "hfo/checkpoint.hpp"

#include <cstring>

#include <json.hpp>

#include "hfo/common.hpp"
#include "hfo/csvio.hpp"

namespace hfo {

namespace {

constexpr char kMagic[4] = {'S', 'S', 'L', 'D'};
constexpr uint32_t kVersion = 1;

void put_u32(std::string& out, uint32_t v) {
  out.push_back(char(v & 0xff));
  out.push_back(char((v >> 8) & 0xff));
  out.push_back(char((v >> 16) & 0xff));
  out.push_back(char((v >> 24) & 0xff));
}

struct Reader {
  const unsigned char* p;
  std::size_t left;
  std::string path;

  void need(std::size_t n) const {
    if (left < n) throw ValidationError("truncated checkpoint file: " + path);
  }
  uint32_t u32() {
    need(4);
    uint32_t v = uint32_t(p[0]) | uint32_t(p[1]) << 8 | uint32_t(p[2]) << 16 | uint32_t(p[3]) << 24;
    p += 4;
    left -= 4;
    return v;
  }
  std::string bytes(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(p), n);
    p += n;
    left -= n;
    return s;
  }
};

void write_table(std::string& out, const std::map<std::string, Tensor>& table) {
  put_u32(out, uint32_t(table.size()));
  for (const auto& [name, t] : table) {
    put_u32(out, uint32_t(name.size()));
    out += name;
    put_u32(out, uint32_t(t.rank()));
    for (std::size_t d = 0; d < t.rank(); ++d) put_u32(out, uint32_t(t.dim(d)));
    std::size_t off = out.size();
    out.resize(off + t.size() * 4);
    for (std::size_t i = 0; i < t.size(); ++i) {
      float f = float(t[i]);
      std::memcpy(out.data() + off + i * 4, &f, 4);
    }
  }
}

std::map<std::string, Tensor> read_table(Reader& r) {
  std::map<std::string, Tensor> table;
  const uint32_t count = r.u32();
  for (uint32_t i = 0; i < count; ++i) {
    std::string name = r.bytes(r.u32());
    const uint32_t rank = r.u32();
    if (rank > 8) throw ValidationError("bad tensor rank in " + r.path);
    std::vector<std::size_t> shape;
    for (uint32_t d = 0; d < rank; ++d) shape.push_back(r.u32());
    Tensor t(shape);
    std::string data = r.bytes(t.size() * 4);
    for (std::size_t j = 0; j < t.size(); ++j) {
      float f;
      std::memcpy(&f, data.data() + j * 4, 4);
      t[j] = double(f);
    }
    if (table.count(name)) throw ValidationError("duplicate tensor '" + name + "' in " + r.path);
    table.emplace(std::move(name), std::move(t));
  }
  return table;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  nlohmann::json header;
  header["latent_dim"] = ck.latent_dim;
  header["image"] = ck.image;
  header["channels"] = ck.channels;
  header["beta"] = ck.beta;
  header["beta_lr"] = ck.beta_lr;
  header["epoch"] = ck.epoch;
  header["seed"] = ck.seed;
  header["fx_seed"] = ck.fx_seed;
  header["fx_kind"] = ck.fx_kind;
  const std::string htext = header.dump();

  std::string out;
  out.append(kMagic, 4);
  put_u32(out, kVersion);
  put_u32(out, uint32_t(htext.size()));
  out += htext;
  write_table(out, ck.tensors);
  for (const auto& [tag, table] : ck.sections) {
    put_u32(out, uint32_t(tag.size()));
    out += tag;
    write_table(out, table);
  }
  write_file_atomic(path, out);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  const std::string raw = read_file(path);
  if (raw.size() < 8 || std::memcmp(raw.data(), kMagic, 4) != 0) {
    throw ValidationError("not a checkpoint file: " + path.string());
  }
  Reader r{reinterpret_cast<const unsigned char*>(raw.data()) + 4, raw.size() - 4, path.string()};
  const uint32_t version = r.u32();
  if (version != kVersion) {
    throw ValidationError("unsupported checkpoint version " + std::to_string(version) + " in " +
                          path.string());
  }
  Checkpoint ck;
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(r.bytes(r.u32()));
    ck.latent_dim = header.at("latent_dim").get<int>();
    ck.image = header.at("image").get<int>();
    ck.channels = header.at("channels").get<std::vector<int>>();
    ck.beta = header.at("beta").get<double>();
    ck.beta_lr = header.at("beta_lr").get<double>();
    ck.epoch = header.at("epoch").get<long>();
    ck.seed = header.at("seed").get<uint64_t>();
    ck.fx_seed = header.at("fx_seed").get<uint64_t>();
    ck.fx_kind = header.at("fx_kind").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("bad checkpoint header in " + path.string() + ": " + e.what());
  }
  ck.tensors = read_table(r);
  while (r.left > 0) {
    std::string tag = r.bytes(r.u32());
    if (tag.empty() || ck.sections.count(tag)) {
      throw ValidationError("bad section tag in " + path.string());
    }
    ck.sections[tag] = read_table(r);
  }
  return ck;
}

uint64_t param_hash(const Checkpoint& ck) {
  uint64_t h = 1469598103934665603ull;
  auto mix_bytes = [&h](const void* data, std::size_t n) {
    const unsigned char* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= p[i];
      h *= 1099511628211ull;
    }
  };
  for (const auto& [name, t] : ck.tensors) {
    mix_bytes(name.data(), name.size());
    for (std::size_t i = 0; i < t.size(); ++i) {
      float f = float(t[i]);
      mix_bytes(&f, 4);
    }
  }
  return h;
}

}  // namespace hfo
