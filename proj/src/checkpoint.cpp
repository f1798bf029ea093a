#include "bsrn/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <vector>

#include "bsrn/errors.hpp"

namespace bsrn {

namespace {

constexpr char kMagic[4] = {'B', 'S', 'R', 'N'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::string& out, std::uint32_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
  out.push_back(static_cast<char>((v >> 16) & 0xff));
  out.push_back(static_cast<char>((v >> 24) & 0xff));
}

void put_u64(std::string& out, std::uint64_t v) {
  put_u32(out, static_cast<std::uint32_t>(v & 0xffffffffULL));
  put_u32(out, static_cast<std::uint32_t>(v >> 32));
}

struct Reader {
  const std::string& path;
  std::string buf;
  std::size_t pos = 0;

  [[noreturn]] void fail(const std::string& what) const {
    throw ParseError(path + ": checkpoint " + what + " (offset " + std::to_string(pos) + ")");
  }

  void need(std::size_t n) const {
    if (buf.size() - pos < n) fail("truncated");
  }

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) v = (v << 8) | static_cast<std::uint8_t>(buf[pos + i]);
    pos += 4;
    return v;
  }

  std::uint64_t u64() {
    const std::uint64_t lo = u32();
    return lo | (static_cast<std::uint64_t>(u32()) << 32);
  }

  std::string bytes(std::size_t n) {
    need(n);
    std::string s = buf.substr(pos, n);
    pos += n;
    return s;
  }
};

std::vector<std::uint32_t> weight_dims(const Kernel& k) {
  return {3u, 3u, static_cast<std::uint32_t>(k.in_channels),
          static_cast<std::uint32_t>(k.out_channels)};
}

std::vector<std::uint32_t> bias_dims(const Kernel& k) {
  return {static_cast<std::uint32_t>(k.out_channels)};
}

// Expected tensor names and dims for a config, in file order.
std::vector<std::pair<std::string, std::vector<std::uint32_t>>> expected_layout(
    const Checkpoint& ref) {
  std::vector<std::pair<std::string, std::vector<std::uint32_t>>> out;
  const auto visit = [&](const ModelParams& p, const std::string& prefix) {
    for_each_kernel(p, [&](const std::string& n, const Kernel& k) {
      out.emplace_back(prefix + n + ".weight", weight_dims(k));
      out.emplace_back(prefix + n + ".bias", bias_dims(k));
    });
  };
  visit(ref.params, "");
  visit(ref.opt.m, "opt/m/");
  visit(ref.opt.v, "opt/v/");
  return out;
}

void append_tensor(std::string& out, const std::string& name, const ArrayX<float>& a,
                   std::vector<std::uint32_t> dims) {
  put_u32(out, static_cast<std::uint32_t>(name.size()));
  out.append(name);
  put_u32(out, static_cast<std::uint32_t>(dims.size()));
  Eigen::Index n = 1;
  for (std::uint32_t d : dims) {
    put_u32(out, d);
    n *= d;
  }
  if (n != a.size()) throw ShapeError("checkpoint: dims disagree with tensor " + name);
  for (Eigen::Index i = 0; i < a.size(); ++i) put_u32(out, std::bit_cast<std::uint32_t>(a[i]));
}

void append_params(std::string& out, const ModelParams& params, const std::string& prefix) {
  for_each_kernel(params, [&](const std::string& name, const Kernel& k) {
    append_tensor(out, prefix + name + ".weight", k.weights, weight_dims(k));
    append_tensor(out, prefix + name + ".bias", k.bias, bias_dims(k));
  });
}

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  ckpt.config.validate();
  std::string out;
  out.append(kMagic, 4);
  put_u32(out, kVersion);
  put_u32(out, static_cast<std::uint32_t>(ckpt.config.channels));
  put_u32(out, static_cast<std::uint32_t>(ckpt.config.state_channels));
  put_u32(out, static_cast<std::uint32_t>(ckpt.config.recursions));
  put_u32(out, static_cast<std::uint32_t>(ckpt.config.freq_control));
  put_u32(out, static_cast<std::uint32_t>(ckpt.config.scales.size()));
  for (int f : ckpt.config.scales) put_u32(out, static_cast<std::uint32_t>(f));

  const auto layout = expected_layout(ckpt);
  put_u32(out, static_cast<std::uint32_t>(layout.size()));
  append_params(out, ckpt.params, "");
  append_params(out, ckpt.opt.m, "opt/m/");
  append_params(out, ckpt.opt.v, "opt/v/");
  put_u64(out, ckpt.step);

  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error(path + ": cannot open for writing");
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw std::runtime_error(path + ": write failed");
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ParseError(path + ": cannot open file");
  Reader rd{path, std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>())};

  if (rd.bytes(4) != std::string(kMagic, 4)) rd.fail("has wrong magic");
  const std::uint32_t version = rd.u32();
  if (version != kVersion) rd.fail("version " + std::to_string(version) + " unsupported");

  Checkpoint ckpt;
  ckpt.config.channels = static_cast<int>(rd.u32());
  ckpt.config.state_channels = static_cast<int>(rd.u32());
  ckpt.config.recursions = static_cast<int>(rd.u32());
  ckpt.config.freq_control = static_cast<int>(rd.u32());
  const std::uint32_t n_scales = rd.u32();
  if (n_scales > 3) rd.fail("declares " + std::to_string(n_scales) + " scales");
  ckpt.config.scales.clear();
  for (std::uint32_t i = 0; i < n_scales; ++i)
    ckpt.config.scales.push_back(static_cast<int>(rd.u32()));
  try {
    ckpt.config.validate();
  } catch (const ConfigError& e) {
    rd.fail(std::string("config invalid: ") + e.what());
  }

  ckpt.params = make_params(ckpt.config);
  ckpt.opt = make_adam_state(ckpt.config);

  // Stage every tensor first; only a fully consistent file mutates the result.
  const std::uint32_t tensor_count = rd.u32();
  struct Staged {
    std::vector<std::uint32_t> dims;
    std::vector<float> data;
  };
  std::map<std::string, Staged> staged;
  for (std::uint32_t t = 0; t < tensor_count; ++t) {
    const std::uint32_t name_len = rd.u32();
    if (name_len > 4096) rd.fail("tensor name too long");
    const std::string name = rd.bytes(name_len);
    const std::uint32_t rank = rd.u32();
    if (rank > 8) rd.fail("tensor " + name + " has rank " + std::to_string(rank));
    Staged entry;
    std::uint64_t count = 1;
    for (std::uint32_t d = 0; d < rank; ++d) {
      entry.dims.push_back(rd.u32());
      count *= entry.dims.back();
      if (count > (1ULL << 32)) rd.fail("tensor " + name + " too large");
    }
    entry.data.resize(count);
    for (std::uint64_t i = 0; i < count; ++i) entry.data[i] = std::bit_cast<float>(rd.u32());
    if (!staged.emplace(name, std::move(entry)).second) rd.fail("duplicate tensor " + name);
  }
  ckpt.step = rd.u64();
  if (rd.pos != rd.buf.size()) rd.fail("has trailing data");

  const auto layout = expected_layout(ckpt);
  if (layout.size() != staged.size())
    rd.fail("holds " + std::to_string(staged.size()) + " tensors, config requires " +
            std::to_string(layout.size()));
  for (const auto& [name, dims] : layout) {
    auto it = staged.find(name);
    if (it == staged.end()) rd.fail("is missing tensor " + name);
    if (it->second.dims != dims) rd.fail("tensor " + name + " has unexpected shape");
  }

  const auto fill = [&](ModelParams& dst, const std::string& prefix) {
    for_each_tensor(dst, [&](const std::string& name, ArrayX<float>& a) {
      const std::vector<float>& src = staged.at(prefix + name).data;
      std::memcpy(a.data(), src.data(), src.size() * sizeof(float));
    });
  };
  fill(ckpt.params, "");
  fill(ckpt.opt.m, "opt/m/");
  fill(ckpt.opt.v, "opt/v/");
  ckpt.opt.step = static_cast<std::int64_t>(ckpt.step);
  return ckpt;
}

}  // namespace bsrn
