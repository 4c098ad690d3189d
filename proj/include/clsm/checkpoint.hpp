#pragma once

// Versioned binary checkpoint:
//
//   "CLSMCKPT"  u32 version
//   u32 header_len, header JSON {kind, model, alphabet, meta}
//   u32 tensor_count, then per tensor: u32 name_len, name, u32 rows, u32 cols,
//   rows*cols float32 (row-major)
//
// Integers and floats are little-endian. Loading rejects other versions, a
// different alphabet, and any missing, extra or mis-shaped tensor.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "clsm/errors.hpp"
#include "clsm/params.hpp"
#include "clsm/tokens.hpp"

namespace clsm::checkpoint {

inline constexpr char kMagic[8] = {'C', 'L', 'S', 'M', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kVersion = 1;

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

struct Tensor {
  std::uint32_t rows = 0, cols = 0;
  std::vector<float> data;
};

struct Contents {
  nlohmann::json header;
  std::map<std::string, Tensor> tensors;
  std::vector<std::string> order;

  std::string kind() const { return header.value("kind", ""); }
};

namespace detail {
inline void put_u32(std::ostream& os, std::uint32_t v) { os.write(reinterpret_cast<const char*>(&v), 4); }
inline std::uint32_t get_u32(std::istream& is) {
  std::uint32_t v = 0;
  if (!is.read(reinterpret_cast<char*>(&v), 4)) throw CheckpointError("truncated checkpoint");
  return v;
}
}  // namespace detail

template <class S>
void save(const std::filesystem::path& path, const std::string& kind, const nlohmann::json& model_config,
          const ParamStore<S>& params, const nlohmann::json& meta = nlohmann::json::object()) {
  nlohmann::json header;
  header["kind"] = kind;
  header["model"] = model_config;
  header["alphabet"] = alphabet::data_symbols();
  header["meta"] = meta;
  const std::string hdr = header.dump();

  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary);
    if (!os) throw CheckpointError("cannot write " + tmp);
    os.write(kMagic, 8);
    detail::put_u32(os, kVersion);
    detail::put_u32(os, static_cast<std::uint32_t>(hdr.size()));
    os.write(hdr.data(), static_cast<std::streamsize>(hdr.size()));
    detail::put_u32(os, static_cast<std::uint32_t>(params.size()));
    std::vector<float> buf;
    for (const auto& p : params) {
      detail::put_u32(os, static_cast<std::uint32_t>(p.name.size()));
      os.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
      detail::put_u32(os, static_cast<std::uint32_t>(p.value.rows()));
      detail::put_u32(os, static_cast<std::uint32_t>(p.value.cols()));
      buf.resize(static_cast<std::size_t>(p.value.size()));
      for (Eigen::Index i = 0; i < p.value.size(); ++i) buf[static_cast<std::size_t>(i)] = static_cast<float>(p.value.data()[i]);
      os.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(float)));
    }
    if (!os) throw CheckpointError("write failed for " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

inline Contents read(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CheckpointError("cannot open checkpoint " + path.string());
  char magic[8];
  if (!is.read(magic, 8) || std::memcmp(magic, kMagic, 8) != 0) throw CheckpointError("not a checkpoint: " + path.string());
  const std::uint32_t version = detail::get_u32(is);
  if (version != kVersion)
    throw CheckpointError("checkpoint version " + std::to_string(version) + " unsupported (expected " +
                          std::to_string(kVersion) + ")");
  Contents c;
  std::string hdr(detail::get_u32(is), '\0');
  if (!is.read(hdr.data(), static_cast<std::streamsize>(hdr.size()))) throw CheckpointError("truncated header");
  try {
    c.header = nlohmann::json::parse(hdr);
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("corrupt header: ") + e.what());
  }
  if (c.header.value("alphabet", nlohmann::json()) != nlohmann::json(alphabet::data_symbols()))
    throw CheckpointError("checkpoint alphabet does not match this build");
  const std::uint32_t count = detail::get_u32(is);
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name(detail::get_u32(is), '\0');
    if (!is.read(name.data(), static_cast<std::streamsize>(name.size()))) throw CheckpointError("truncated name");
    Tensor t;
    t.rows = detail::get_u32(is);
    t.cols = detail::get_u32(is);
    t.data.resize(static_cast<std::size_t>(t.rows) * t.cols);
    if (!is.read(reinterpret_cast<char*>(t.data.data()), static_cast<std::streamsize>(t.data.size() * sizeof(float))))
      throw CheckpointError("truncated tensor " + name);
    c.order.push_back(name);
    c.tensors.emplace(std::move(name), std::move(t));
  }
  return c;
}

template <class S>
void load_into(ParamStore<S>& params, const Contents& c) {
  if (c.tensors.size() != params.size())
    throw CheckpointError("checkpoint holds " + std::to_string(c.tensors.size()) + " tensors, model expects " +
                          std::to_string(params.size()));
  for (auto& p : params) {
    auto it = c.tensors.find(p.name);
    if (it == c.tensors.end()) throw CheckpointError("checkpoint is missing tensor " + p.name);
    const Tensor& t = it->second;
    if (t.rows != p.value.rows() || t.cols != p.value.cols())
      throw CheckpointError("shape mismatch for " + p.name + ": checkpoint " + std::to_string(t.rows) + "x" +
                            std::to_string(t.cols) + ", model " + std::to_string(p.value.rows()) + "x" +
                            std::to_string(p.value.cols()));
    for (Eigen::Index i = 0; i < p.value.size(); ++i) p.value.data()[i] = static_cast<S>(t.data[static_cast<std::size_t>(i)]);
  }
}

inline void expect_kind(const Contents& c, const std::string& kind) {
  if (c.kind() != kind) throw CheckpointError("expected a '" + kind + "' checkpoint, found '" + c.kind() + "'");
}

}  // namespace clsm::checkpoint
