#pragma once

#include <string>
#include <vector>

#include "data.hpp"
#include "retrieval.hpp"
#include "training.hpp"

namespace avp::config {

struct AblateConfig {
  std::size_t steps = 800;  // per arm; 0 uses train.steps
};

struct RunConfig {
  train::TrainConfig train;
  data::SynthSpec synth;
  retrieval::EvalConfig eval;
  AblateConfig ablate;
};

struct KeyInfo {
  std::string key;
  std::string default_value;
  std::string description;
};

/// Every accepted key with its default, in documentation order.
const std::vector<KeyInfo>& keys();
bool has_key(const std::string& key);

void set(RunConfig& cfg, const std::string& key, const std::string& value);
std::string get(const RunConfig& cfg, const std::string& key);

/// Applies "key=value" (whitespace around either side is trimmed).
void apply_override(RunConfig& cfg, const std::string& assignment);

/// One "key = value" line per key.
std::string to_text(const RunConfig& cfg);
/// Defaults overlaid with the file's assignments. Blank lines and '#' comments are skipped;
/// unknown keys and malformed lines are errors naming the line.
RunConfig parse_text(const std::string& text);
/// parse_text's rules, applied on top of cfg.
void apply_text(RunConfig& cfg, const std::string& text);
RunConfig load(const std::string& path);

}  // namespace avp::config
