#pragma once

// Run configuration: one JSON document drives data generation, both training
// stages, generation and evaluation. Parsing is strict: unknown keys and
// out-of-range values raise config_error with the offending field path, so a
// typo fails fast instead of silently using a default.

#include <glosmo/common.hpp>
#include <glosmo/denoiser.hpp>
#include <glosmo/evaluation.hpp>
#include <glosmo/pvqvae.hpp>
#include <glosmo/serialize.hpp>

#include <algorithm>
#include <string>
#include <vector>

namespace glosmo {

struct DataRunConfig {
  int vocab_size = 20;
  int n_train = 2000;
  int n_test = 200;
  int min_glosses = 3;
  int max_glosses = 6;
  int min_span = 12;
  int max_span = 20;
  double noise_scale = 0.02;
  int max_frames = 180;
};

struct PvqVaeRunConfig {
  PvqVaeConfig model;  // r, hidden, d, K, beta
  int epochs = 30;
  int batch_size = 32;
  float lr = 2e-4f;
  int dead_code_batches = 50;
};

struct DiffusionRunConfig {
  int T = 100;
  double gamma_final = 1.0;
};

struct DenoiserRunConfig {
  DenoiserConfig model;  // vocab_size and K/T are filled in from context
  int epochs = 20;
  int batch_size = 32;
  float lr = 1e-3f;
  double aux_weight = 5e-4;
  int n_threads = 1;
};

struct RecognizerRunConfig {
  int window = 9;
  int hidden = 128;
  int epochs = 10;
  int batch_size = 8;
  float lr = 1e-3f;
};

struct GenerateRunConfig {
  double temperature = 1.0;
  std::string length_source = "stats";  // "stats" predicts, "reference" copies
  int length_delta = 0;                 // frames added to every predicted span
};

struct EvalRunConfig {
  double gate_frame_accuracy = 0.95;
  double gate_wer = 0.05;
  double trim = 0.25;
  int min_run = 3;
};

struct RunConfig {
  std::uint64_t seed = 1;
  DataRunConfig data;
  PvqVaeRunConfig pvqvae;
  DiffusionRunConfig diffusion;
  DenoiserRunConfig denoiser;
  RecognizerRunConfig recognizer;
  GenerateRunConfig generate;
  EvalRunConfig eval;
};

namespace detail {

class ConfigReader {
 public:
  ConfigReader(const json& node, std::string path) : node_(node), path_(std::move(path)) {
    if (!node_.is_object()) throw config_error(path_, "expected an object");
  }

  ~ConfigReader() = default;

  template <typename T>
  void read(const char* key, T& out) {
    seen_.push_back(key);
    if (!node_.contains(key)) return;
    const json& v = node_.at(key);
    try {
      out = v.get<T>();
    } catch (const json::exception&) {
      throw config_error(join(key), "wrong type");
    }
  }

  void read_int(const char* key, int& out, int lo, int hi) {
    read(key, out);
    if (out < lo || out > hi)
      throw config_error(join(key),
                         "must be in [" + std::to_string(lo) + ", " + std::to_string(hi) + "]");
  }

  void read_real(const char* key, double& out, double lo, double hi) {
    read(key, out);
    if (!(out >= lo && out <= hi))
      throw config_error(join(key),
                         "must be in [" + std::to_string(lo) + ", " + std::to_string(hi) + "]");
  }

  void read_real(const char* key, float& out, double lo, double hi) {
    double v = out;
    read_real(key, v, lo, hi);
    out = static_cast<float>(v);
  }

  json child(const char* key) {
    seen_.push_back(key);
    if (!node_.contains(key)) return json::object();
    return node_.at(key);
  }

  void finish() const {
    for (auto it = node_.begin(); it != node_.end(); ++it)
      if (std::find(seen_.begin(), seen_.end(), it.key()) == seen_.end())
        throw config_error(join(it.key().c_str()), "unknown key");
  }

  std::string join(const char* key) const { return path_.empty() ? key : path_ + "." + key; }

 private:
  const json& node_;
  std::string path_;
  std::vector<std::string> seen_;
};

}  // namespace detail

inline RunConfig parse_run_config(const json& j) {
  RunConfig c;
  detail::ConfigReader root(j, "");
  root.read("seed", c.seed);

  {
    json node = root.child("data");
    detail::ConfigReader r(node, "data");
    r.read_int("vocab_size", c.data.vocab_size, 2, 10000);
    r.read_int("n_train", c.data.n_train, 1, 1000000);
    r.read_int("n_test", c.data.n_test, 1, 1000000);
    r.read_int("min_glosses", c.data.min_glosses, 1, 64);
    r.read_int("max_glosses", c.data.max_glosses, 1, 64);
    r.read_int("min_span", c.data.min_span, 4, 1000);
    r.read_int("max_span", c.data.max_span, 4, 1000);
    r.read_real("noise_scale", c.data.noise_scale, 0.0, 10.0);
    r.read_int("max_frames", c.data.max_frames, 8, 100000);
    r.finish();
    if (c.data.max_glosses < c.data.min_glosses)
      throw config_error("data.max_glosses", "must be >= data.min_glosses");
    if (c.data.max_span < c.data.min_span)
      throw config_error("data.max_span", "must be >= data.min_span");
  }

  {
    json node = root.child("pvqvae");
    detail::ConfigReader r(node, "pvqvae");
    r.read_int("r", c.pvqvae.model.r, 1, 64);
    r.read_int("hidden", c.pvqvae.model.hidden, 1, 4096);
    r.read_int("d", c.pvqvae.model.d, 1, 4096);
    r.read_int("K", c.pvqvae.model.K, 2, 65536);
    r.read_real("beta", c.pvqvae.model.beta, 0.0, 10.0);
    r.read_int("epochs", c.pvqvae.epochs, 1, 10000);
    r.read_int("batch_size", c.pvqvae.batch_size, 1, 65536);
    r.read_real("lr", c.pvqvae.lr, 0.0, 1.0);
    r.read_int("dead_code_batches", c.pvqvae.dead_code_batches, 1, 1000000);
    r.finish();
    try {
      c.pvqvae.model.validate();
    } catch (const std::exception& e) {
      throw config_error("pvqvae", e.what());
    }
  }

  {
    json node = root.child("diffusion");
    detail::ConfigReader r(node, "diffusion");
    r.read_int("T", c.diffusion.T, 1, 100000);
    r.read_real("gamma_final", c.diffusion.gamma_final, 0.0, 1.0);
    r.finish();
  }

  {
    json node = root.child("denoiser");
    detail::ConfigReader r(node, "denoiser");
    r.read_int("d_feat", c.denoiser.model.d_feat, 1, 65536);
    r.read_int("n_heads", c.denoiser.model.n_heads, 1, 256);
    r.read_int("n_blocks", c.denoiser.model.n_blocks, 1, 64);
    r.read_int("conv_kernel", c.denoiser.model.conv_kernel, 1, 63);
    r.read_int("d_cond", c.denoiser.model.d_cond, 1, 65536);
    r.read_int("d_time", c.denoiser.model.d_time, 2, 65536);
    std::string fusion = fusion_name(c.denoiser.model.fusion);
    std::string ipa = ipa_name(c.denoiser.model.ipa);
    std::string condition = condition_name(c.denoiser.model.condition);
    r.read("fusion", fusion);
    r.read("ipa", ipa);
    r.read("condition", condition);
    r.read("disable_self_attention", c.denoiser.model.disable_self_attention);
    r.read_int("epochs", c.denoiser.epochs, 1, 10000);
    r.read_int("batch_size", c.denoiser.batch_size, 1, 65536);
    r.read_real("lr", c.denoiser.lr, 0.0, 1.0);
    r.read_real("aux_weight", c.denoiser.aux_weight, 0.0, 1.0);
    r.read_int("n_threads", c.denoiser.n_threads, 1, 256);
    r.finish();
    try {
      c.denoiser.model.fusion = fusion_from_name(fusion);
      c.denoiser.model.ipa = ipa_from_name(ipa);
      c.denoiser.model.condition = condition_from_name(condition);
    } catch (const std::exception& e) {
      throw config_error("denoiser", e.what());
    }
  }

  {
    json node = root.child("recognizer");
    detail::ConfigReader r(node, "recognizer");
    r.read_int("window", c.recognizer.window, 1, 255);
    r.read_int("hidden", c.recognizer.hidden, 1, 65536);
    r.read_int("epochs", c.recognizer.epochs, 1, 10000);
    r.read_int("batch_size", c.recognizer.batch_size, 1, 65536);
    r.read_real("lr", c.recognizer.lr, 0.0, 1.0);
    r.finish();
    if (c.recognizer.window % 2 == 0)
      throw config_error("recognizer.window", "must be odd");
  }

  {
    json node = root.child("generate");
    detail::ConfigReader r(node, "generate");
    r.read_real("temperature", c.generate.temperature, 0.0, 100.0);
    r.read("length_source", c.generate.length_source);
    r.read_int("length_delta", c.generate.length_delta, -1000, 1000);
    r.finish();
    if (c.generate.length_source != "stats" && c.generate.length_source != "reference")
      throw config_error("generate.length_source", "must be \"stats\" or \"reference\"");
  }

  {
    json node = root.child("eval");
    detail::ConfigReader r(node, "eval");
    r.read_real("gate_frame_accuracy", c.eval.gate_frame_accuracy, 0.0, 1.0);
    r.read_real("gate_wer", c.eval.gate_wer, 0.0, 10.0);
    r.read_real("trim", c.eval.trim, 0.0, 0.49);
    r.read_int("min_run", c.eval.min_run, 1, 1000);
    r.finish();
  }

  root.finish();
  return c;
}

inline json run_config_to_json(const RunConfig& c) {
  return {
      {"seed", c.seed},
      {"data",
       {{"vocab_size", c.data.vocab_size},
        {"n_train", c.data.n_train},
        {"n_test", c.data.n_test},
        {"min_glosses", c.data.min_glosses},
        {"max_glosses", c.data.max_glosses},
        {"min_span", c.data.min_span},
        {"max_span", c.data.max_span},
        {"noise_scale", c.data.noise_scale},
        {"max_frames", c.data.max_frames}}},
      {"pvqvae",
       {{"r", c.pvqvae.model.r},
        {"hidden", c.pvqvae.model.hidden},
        {"d", c.pvqvae.model.d},
        {"K", c.pvqvae.model.K},
        {"beta", c.pvqvae.model.beta},
        {"epochs", c.pvqvae.epochs},
        {"batch_size", c.pvqvae.batch_size},
        {"lr", c.pvqvae.lr},
        {"dead_code_batches", c.pvqvae.dead_code_batches}}},
      {"diffusion", {{"T", c.diffusion.T}, {"gamma_final", c.diffusion.gamma_final}}},
      {"denoiser",
       {{"d_feat", c.denoiser.model.d_feat},
        {"n_heads", c.denoiser.model.n_heads},
        {"n_blocks", c.denoiser.model.n_blocks},
        {"conv_kernel", c.denoiser.model.conv_kernel},
        {"d_cond", c.denoiser.model.d_cond},
        {"d_time", c.denoiser.model.d_time},
        {"fusion", fusion_name(c.denoiser.model.fusion)},
        {"ipa", ipa_name(c.denoiser.model.ipa)},
        {"condition", condition_name(c.denoiser.model.condition)},
        {"disable_self_attention", c.denoiser.model.disable_self_attention},
        {"epochs", c.denoiser.epochs},
        {"batch_size", c.denoiser.batch_size},
        {"lr", c.denoiser.lr},
        {"aux_weight", c.denoiser.aux_weight},
        {"n_threads", c.denoiser.n_threads}}},
      {"recognizer",
       {{"window", c.recognizer.window},
        {"hidden", c.recognizer.hidden},
        {"epochs", c.recognizer.epochs},
        {"batch_size", c.recognizer.batch_size},
        {"lr", c.recognizer.lr}}},
      {"generate",
       {{"temperature", c.generate.temperature},
        {"length_source", c.generate.length_source},
        {"length_delta", c.generate.length_delta}}},
      {"eval",
       {{"gate_frame_accuracy", c.eval.gate_frame_accuracy},
        {"gate_wer", c.eval.gate_wer},
        {"trim", c.eval.trim},
        {"min_run", c.eval.min_run}}},
  };
}

inline std::string run_config_hash(const RunConfig& c) {
  return hex64(fnv1a64(run_config_to_json(c).dump()));
}

// Applies a dotted-path override like "denoiser.epochs=5". The value is
// parsed as JSON when possible, otherwise taken as a string.
inline void apply_override(json& doc, const std::string& assignment) {
  auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0)
    throw config_error("", "override must look like section.key=value: " + assignment);
  std::string path = assignment.substr(0, eq);
  std::string raw = assignment.substr(eq + 1);

  json value;
  try {
    value = json::parse(raw);
  } catch (const json::exception&) {
    value = raw;  // unquoted strings like tac or stats
  }

  json* node = &doc;
  std::size_t start = 0;
  while (true) {
    std::size_t dot = path.find('.', start);
    std::string key = path.substr(start, dot == std::string::npos ? dot : dot - start);
    if (key.empty()) throw config_error(path, "empty key segment in override");
    if (dot == std::string::npos) {
      (*node)[key] = value;
      return;
    }
    node = &(*node)[key];
    start = dot + 1;
  }
}

inline RunConfig load_run_config(const std::string& path,
                                 const std::vector<std::string>& overrides) {
  json doc = path.empty() ? json::object() : read_json_file(path);
  if (!doc.is_object()) throw config_error("", "config root must be a JSON object");
  for (const auto& o : overrides) apply_override(doc, o);
  return parse_run_config(doc);
}

}  // namespace glosmo
