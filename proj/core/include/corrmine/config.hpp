#pragma once

#include <array>
#include <cstdint>
#include <string>

#include "corrmine/corpus.hpp"
#include "corrmine/encoder.hpp"
#include "corrmine/idc.hpp"
#include "corrmine/loop.hpp"
#include "corrmine/training.hpp"

namespace corrmine {

struct Paths {
  std::string corpus;
  std::string pairs;
  std::string out = "out";
};

/// Full run configuration. JSON parsing is strict: unknown keys, type
/// mismatches and constraint violations are errors naming the key. Section
/// seeds default to values derived from the top-level seed and are always
/// explicit in the resolved output.
struct RunConfig {
  std::uint64_t seed = 42;
  std::array<double, 3> split = {0.8, 0.1, 0.1};
  int labeled_budget = 0;  // 0 = all labeled pairs
  EncoderConfig encoder;
  TrainConfig train;
  IdcConfig idc;
  LoopConfig loop;  // scalar fields only in JSON; idc/train copied in
  SyntheticSpec synthetic;
  Paths paths;

  /// Copies the shared sections into loop.idc / loop.train.
  LoopConfig loop_config() const;

  void validate() const;
};

RunConfig parse_config_text(const std::string& json_text);
RunConfig load_config(const std::string& path);

/// Resolved config with every default and seed made explicit; re-running from
/// this text reproduces the run bit-for-bit.
std::string resolved_config_json(const RunConfig& cfg);
void write_resolved_config(const RunConfig& cfg, const std::string& out_dir);

/// --seed override: replaces the top seed and re-derives all section seeds.
void reseed(RunConfig& cfg, std::uint64_t seed);

}  // namespace corrmine
