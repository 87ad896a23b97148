#pragma once

#include <string>

#include "e2d2/model.hpp"
#include "e2d2/sampling.hpp"
#include "e2d2/schedule.hpp"
#include "e2d2/training.hpp"

namespace e2d2 {

// Everything a run needs, loadable from a plain-text config (key = value,
// one section per module). A run is reproducible from (RunConfig, corpus):
// the root seed fans out to init/data/noise/sampling streams.
struct RunConfig {
  ModelConfig model;
  NoiseSchedule schedule;
  TrainHp train;
  std::int64_t train_steps = 1000;
  std::int64_t batch_size = 4;
  std::int64_t seq_len = 64;
  std::string metrics_path = "metrics.log";
  SampleConfig sample;
  std::string corpus;
  std::string checkpoint = "model.ckpt";
  std::uint64_t seed = 1;

  static RunConfig from_file(const std::string& path);
  static RunConfig from_text(const std::string& text);

  // Dotted override, e.g. set("model.d_model", "64"). Throws on unknown keys.
  void set(const std::string& dotted_key, const std::string& value);

  std::string to_text() const;
};

}  // namespace e2d2
