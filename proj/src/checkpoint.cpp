#include "emochat/checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace emochat {

namespace {

constexpr char kMagic[4] = {'E', 'P', 'O', 'C'};

template <class T>
void write_pod(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T read_pod(std::istream& in, const std::string& path) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) fail("load_checkpoint: " + path + ": truncated file");
  return v;
}

std::string read_string(std::istream& in, std::uint64_t len,
                        const std::string& path) {
  if (len > (1ull << 32)) fail("load_checkpoint: " + path + ": corrupt length field");
  std::string s(len, '\0');
  in.read(s.data(), std::streamsize(len));
  if (!in) fail("load_checkpoint: " + path + ": truncated file");
  return s;
}

}  // namespace

void save_checkpoint(const std::string& path, const std::string& config_json,
                     const ParamRefs& params) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail("save_checkpoint: cannot open " + path + " for writing");
  out.write(kMagic, 4);
  write_pod<std::uint32_t>(out, kCheckpointVersion);
  write_pod<std::uint64_t>(out, config_json.size());
  out.write(config_json.data(), std::streamsize(config_json.size()));
  write_pod<std::uint32_t>(out, std::uint32_t(params.size()));
  for (const auto& [name, tensor] : params) {
    write_pod<std::uint32_t>(out, std::uint32_t(name.size()));
    out.write(name.data(), std::streamsize(name.size()));
    write_pod<std::uint32_t>(out, std::uint32_t(tensor->ndim()));
    for (int d : tensor->shape()) write_pod<std::uint64_t>(out, std::uint64_t(d));
    const Real* src = tensor->data();
    std::vector<float> buf(tensor->numel());
    for (std::size_t i = 0; i < buf.size(); ++i) buf[i] = float(src[i]);
    out.write(reinterpret_cast<const char*>(buf.data()),
              std::streamsize(buf.size() * sizeof(float)));
  }
  if (!out) fail("save_checkpoint: write failed for " + path);
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail_arg("load_checkpoint: cannot open " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kMagic, 4) != 0)
    fail("load_checkpoint: " + path + ": bad magic, not a checkpoint file");
  const auto version = read_pod<std::uint32_t>(in, path);
  if (version != kCheckpointVersion)
    fail("load_checkpoint: " + path + ": unsupported format version " +
         std::to_string(version));
  LoadedCheckpoint ckpt;
  const auto config_len = read_pod<std::uint64_t>(in, path);
  ckpt.config_json = read_string(in, config_len, path);
  const auto count = read_pod<std::uint32_t>(in, path);
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_len = read_pod<std::uint32_t>(in, path);
    std::string name = read_string(in, name_len, path);
    const auto ndim = read_pod<std::uint32_t>(in, path);
    if (ndim > 8) fail("load_checkpoint: " + path + ": corrupt rank for '" + name + "'");
    std::vector<int> shape(ndim);
    std::size_t numel = 1;
    for (auto& d : shape) {
      const auto ext = read_pod<std::uint64_t>(in, path);
      d = int(ext);
      numel *= std::size_t(ext);
    }
    std::vector<float> buf(numel);
    in.read(reinterpret_cast<char*>(buf.data()),
            std::streamsize(numel * sizeof(float)));
    if (!in) fail("load_checkpoint: " + path + ": truncated tensor '" + name + "'");
    std::vector<Real> data(numel);
    for (std::size_t j = 0; j < numel; ++j) data[j] = Real(buf[j]);
    if (ckpt.tensors.count(name))
      fail("load_checkpoint: " + path + ": duplicate tensor '" + name + "'");
    ckpt.names.push_back(name);
    ckpt.tensors.emplace(name, Tensor::from_data(std::move(shape), std::move(data)));
  }
  return ckpt;
}

void load_into(const LoadedCheckpoint& ckpt, const ParamRefs& params,
               const std::string& prefix) {
  std::vector<std::string> missing;
  for (const auto& [name, tensor] : params) {
    if (!prefix.empty() && name.rfind(prefix, 0) != 0) continue;
    auto it = ckpt.tensors.find(name);
    if (it == ckpt.tensors.end()) {
      missing.push_back(name);
      continue;
    }
    if (it->second.shape() != tensor->shape())
      fail("load_into: tensor '" + name + "' has shape " +
           shape_str(it->second.shape()) + ", model wants " +
           shape_str(tensor->shape()));
  }
  if (!missing.empty()) {
    std::string msg = "load_into: checkpoint is missing slots:";
    for (const auto& n : missing) msg += " " + n;
    fail(msg);
  }
  for (const auto& [name, tensor] : params) {
    if (!prefix.empty() && name.rfind(prefix, 0) != 0) continue;
    const Tensor& src = ckpt.tensors.at(name);
    std::copy(src.data(), src.data() + src.numel(), tensor->data());
  }
}

}  // namespace emochat
