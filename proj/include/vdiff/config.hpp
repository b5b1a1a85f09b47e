#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace vdiff {

/// Plain-text key=value configuration with a fixed key registry: unknown keys
/// are rejected, and the effective configuration can be echoed verbatim for
/// reproducibility.
class Config {
 public:
  static const std::map<std::string, std::string>& defaults() {
    static const std::map<std::string, std::string> d = {
        {"seed", "0"},
        // Model topology.
        {"model.base_channels", "8"},
        {"model.heads", "1"},
        {"model.n1", "2"},
        {"model.n2", "1"},
        {"model.latent_cprime", "8"},
        {"model.embed_dim", "16"},
        {"model.eps_hidden", "64"},
        {"model.enc_base", "16"},
        {"model.enc_cap", "64"},
        {"model.wbpf_resblocks", "3"},
        {"model.global_residual", "1"},
        {"model.frame_h", "32"},
        {"model.frame_w", "32"},
        {"model.init_seed", "1"},
        // Diffusion schedule.
        {"diffusion.steps", "4"},
        {"diffusion.beta_start", "0.1"},
        {"diffusion.beta_end", "0.99"},
        // Training.
        {"train.lr", "0.002"},
        {"train.weight_decay", "4e-05"},
        {"train.batch_size", "1"},
        {"train.steps", "300"},
        {"train.seq_len", "4"},
        {"train.lambda_msfr", "0.1"},
        {"train.msfr_scales", "3"},
        {"train.checkpoint_in", ""},
        {"train.resume", ""},
        // Evaluation.
        {"eval.seq_len", "4"},
        {"eval.split", "eval"},
        {"eval.diffusion_steps", "0"},
        // Data.
        {"data.root", ""},
        // Synthesis.
        {"synth.clips", "8"},
        {"synth.frames", "4"},
        {"synth.height", "32"},
        {"synth.width", "32"},
        {"synth.blur_window", "5"},
        {"synth.velocity_min", "2.0"},
        {"synth.velocity_max", "5.0"},
        {"synth.eval_fraction", "0.25"},
    };
    return d;
  }

  static Config with_defaults() {
    Config c;
    c.values_ = defaults();
    return c;
  }

  void set(const std::string& key, const std::string& value) {
    auto it = values_.find(key);
    if (it == values_.end()) throw std::invalid_argument("config: unknown key '" + key + "'");
    it->second = value;
  }

  void load_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("config: cannot open " + path);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      const auto hash = line.find('#');
      if (hash != std::string::npos) line = line.substr(0, hash);
      line = trim(line);
      if (line.empty()) continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos)
        throw std::runtime_error("config: " + path + ":" + std::to_string(lineno) +
                                 ": expected key=value");
      set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
  }

  /// Parses text in echo format (used to rebuild a model from a checkpoint).
  void apply_text(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
      line = trim(line);
      if (line.empty()) continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos) throw std::runtime_error("config: malformed embedded line");
      set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
  }

  const std::string& str(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw std::invalid_argument("config: unknown key '" + key + "'");
    return it->second;
  }

  std::int64_t i64(const std::string& key) const {
    try {
      std::size_t used = 0;
      const std::int64_t v = std::stoll(str(key), &used);
      if (used != str(key).size()) throw std::invalid_argument("");
      return v;
    } catch (...) {
      throw std::invalid_argument("config: key '" + key + "' is not an integer: " + str(key));
    }
  }

  std::uint64_t u64(const std::string& key) const {
    try {
      std::size_t used = 0;
      const std::uint64_t v = std::stoull(str(key), &used);
      if (used != str(key).size()) throw std::invalid_argument("");
      return v;
    } catch (...) {
      throw std::invalid_argument("config: key '" + key + "' is not an unsigned integer: " + str(key));
    }
  }

  double dbl(const std::string& key) const {
    try {
      std::size_t used = 0;
      const double v = std::stod(str(key), &used);
      if (used != str(key).size()) throw std::invalid_argument("");
      return v;
    } catch (...) {
      throw std::invalid_argument("config: key '" + key + "' is not a number: " + str(key));
    }
  }

  bool flag(const std::string& key) const { return i64(key) != 0; }

  /// Sorted key=value lines; byte-stable for identical settings.
  std::string echo() const {
    std::ostringstream os;
    for (const auto& [k, v] : values_) os << k << "=" << v << "\n";
    return os.str();
  }

  /// Subset needed to rebuild the model from a checkpoint.
  std::string model_text() const {
    std::ostringstream os;
    for (const auto& [k, v] : values_)
      if (k.rfind("model.", 0) == 0 || k.rfind("diffusion.", 0) == 0) os << k << "=" << v << "\n";
    return os.str();
  }

 private:
  static std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
  }

  std::map<std::string, std::string> values_;
};

}  // namespace vdiff
