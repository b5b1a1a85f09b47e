#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "vdiff/tensor.hpp"

namespace vdiff::train {

/// Versioned binary archive of named flat arrays plus optimizer and RNG
/// state. Layout is fixed-order and little-endian, so save -> load -> save is
/// byte-identical.
struct Checkpoint {
  static constexpr std::uint32_t kVersion = 1;

  std::uint32_t stage = 0;  // provenance: 1, 2 or 3
  std::uint64_t step = 0;
  std::string config_text;  // key=value lines sufficient to rebuild the model
  std::string rng_state;
  std::map<std::string, Tensor> params;
  std::int64_t opt_step = 0;
  std::map<std::string, std::pair<Tensor, Tensor>> opt_moments;

  void save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("checkpoint: cannot open " + path + " for writing");
    out.write("VDCP", 4);
    write_u32(out, kVersion);
    write_u32(out, stage);
    write_u64(out, step);
    write_blob(out, config_text);
    write_blob(out, rng_state);
    write_u64(out, params.size());
    for (const auto& [name, t] : params) {
      write_blob(out, name);
      write_u32(out, static_cast<std::uint32_t>(t.rank()));
      for (int i = 0; i < t.rank(); ++i) write_u32(out, static_cast<std::uint32_t>(t.extent(i)));
      write_doubles(out, t);
    }
    write_u64(out, static_cast<std::uint64_t>(opt_step));
    write_u64(out, opt_moments.size());
    for (const auto& [name, mv] : opt_moments) {
      write_blob(out, name);
      write_u32(out, static_cast<std::uint32_t>(mv.first.rank()));
      for (int i = 0; i < mv.first.rank(); ++i)
        write_u32(out, static_cast<std::uint32_t>(mv.first.extent(i)));
      write_doubles(out, mv.first);
      write_doubles(out, mv.second);
    }
    if (!out) throw std::runtime_error("checkpoint: write failed for " + path);
  }

  static Checkpoint load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("checkpoint: cannot open " + path);
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, "VDCP", 4) != 0)
      throw std::runtime_error("checkpoint: " + path + " is not a checkpoint file");
    const std::uint32_t version = read_u32(in);
    if (version != kVersion)
      throw std::runtime_error("checkpoint: unsupported format version " + std::to_string(version));
    Checkpoint c;
    c.stage = read_u32(in);
    c.step = read_u64(in);
    c.config_text = read_blob(in);
    c.rng_state = read_blob(in);
    const std::uint64_t n = read_u64(in);
    for (std::uint64_t i = 0; i < n; ++i) {
      std::string name = read_blob(in);
      Tensor t = read_tensor(in);
      c.params.emplace(std::move(name), std::move(t));
    }
    c.opt_step = static_cast<std::int64_t>(read_u64(in));
    const std::uint64_t m = read_u64(in);
    for (std::uint64_t i = 0; i < m; ++i) {
      std::string name = read_blob(in);
      const std::uint32_t rank = read_u32(in);
      std::vector<int> shape;
      for (std::uint32_t r = 0; r < rank; ++r) shape.push_back(static_cast<int>(read_u32(in)));
      Tensor mm(shape), vv(shape);
      read_doubles(in, mm);
      read_doubles(in, vv);
      c.opt_moments.emplace(std::move(name), std::make_pair(std::move(mm), std::move(vv)));
    }
    if (!in) throw std::runtime_error("checkpoint: truncated file " + path);
    return c;
  }

 private:
  static void write_u32(std::ofstream& out, std::uint32_t v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(v));
  }
  static void write_u64(std::ofstream& out, std::uint64_t v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(v));
  }
  static void write_blob(std::ofstream& out, const std::string& s) {
    write_u64(out, s.size());
    out.write(s.data(), static_cast<std::streamsize>(s.size()));
  }
  static void write_doubles(std::ofstream& out, const Tensor& t) {
    out.write(reinterpret_cast<const char*>(t.data()),
              static_cast<std::streamsize>(t.numel() * static_cast<std::int64_t>(sizeof(double))));
  }
  static std::uint32_t read_u32(std::ifstream& in) {
    std::uint32_t v = 0;
    in.read(reinterpret_cast<char*>(&v), sizeof(v));
    return v;
  }
  static std::uint64_t read_u64(std::ifstream& in) {
    std::uint64_t v = 0;
    in.read(reinterpret_cast<char*>(&v), sizeof(v));
    return v;
  }
  static std::string read_blob(std::ifstream& in) {
    const std::uint64_t len = read_u64(in);
    if (len > (1ull << 32)) throw std::runtime_error("checkpoint: corrupt length field");
    std::string s(len, '\0');
    in.read(s.data(), static_cast<std::streamsize>(len));
    return s;
  }
  static Tensor read_tensor(std::ifstream& in) {
    const std::uint32_t rank = read_u32(in);
    if (rank > 8) throw std::runtime_error("checkpoint: corrupt tensor rank");
    std::vector<int> shape;
    for (std::uint32_t r = 0; r < rank; ++r) shape.push_back(static_cast<int>(read_u32(in)));
    Tensor t(shape);
    read_doubles(in, t);
    return t;
  }
  static void read_doubles(std::ifstream& in, Tensor& t) {
    in.read(reinterpret_cast<char*>(t.data()),
            static_cast<std::streamsize>(t.numel() * static_cast<std::int64_t>(sizeof(double))));
  }
};

}  // namespace vdiff::train
