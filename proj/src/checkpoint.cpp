#include "octlesion/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

namespace oct::nn {

namespace {

constexpr char kMagic[8] = {'O', 'C', 'T', 'N', 'N', 'E', 'T', '1'};

void append_tensors(std::string& out, const std::vector<const Tensor*>& tensors) {
  for (const Tensor* t : tensors) {
    const std::size_t bytes = static_cast<std::size_t>(t->numel()) * sizeof(double);
    const std::size_t at = out.size();
    out.resize(at + bytes);
    std::memcpy(out.data() + at, t->data(), bytes);
  }
}

void read_tensors(const std::string& in, std::size_t& offset, const std::vector<Tensor*>& tensors) {
  for (Tensor* t : tensors) {
    const std::size_t bytes = static_cast<std::size_t>(t->numel()) * sizeof(double);
    if (offset + bytes > in.size()) throw std::runtime_error("checkpoint payload truncated");
    std::memcpy(t->data(), in.data() + offset, bytes);
    offset += bytes;
  }
}

}  // namespace

std::string serialize_net(const MiniNet& net) {
  nlohmann::json header = net.arch();
  header["format"] = "octnnet";
  header["version"] = 1;
  Eigen::Index param_values = 0, buffer_values = 0;
  for (const Tensor* t : net.params()) param_values += t->numel();
  for (const Tensor* t : net.buffers()) buffer_values += t->numel();
  header["param_values"] = param_values;
  header["buffer_values"] = buffer_values;
  const std::string header_str = header.dump();

  std::string out(kMagic, sizeof(kMagic));
  const std::uint64_t len = header_str.size();
  char lenbuf[8];
  for (int i = 0; i < 8; ++i) lenbuf[i] = static_cast<char>((len >> (8 * i)) & 0xFF);
  out.append(lenbuf, 8);
  out += header_str;
  append_tensors(out, net.params());
  append_tensors(out, net.buffers());
  return out;
}

MiniNet deserialize_net(const std::string& bytes) {
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0)
    throw std::runtime_error("not a model checkpoint (bad magic)");
  std::uint64_t len = 0;
  for (int i = 0; i < 8; ++i) len |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[8 + i])) << (8 * i);
  if (16 + len > bytes.size()) throw std::runtime_error("checkpoint header truncated");
  const nlohmann::json header = nlohmann::json::parse(bytes.substr(16, len));
  MiniNet net = MiniNet::from_arch(header);

  std::size_t offset = 16 + static_cast<std::size_t>(len);
  read_tensors(bytes, offset, net.params());
  read_tensors(bytes, offset, net.buffers());
  if (offset != bytes.size()) throw std::runtime_error("checkpoint payload size mismatch");
  return net;
}

void save_net(const MiniNet& net, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for writing: " + path.string());
  const std::string bytes = serialize_net(net);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

MiniNet load_net(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open model checkpoint: " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return deserialize_net(ss.str());
}

}  // namespace oct::nn
