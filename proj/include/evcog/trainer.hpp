#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "evcog/checkpoint.hpp"
#include "evcog/errors.hpp"
#include "evcog/model.hpp"

namespace evcog {

struct TrainConfig {
  std::size_t batch_size = 2048;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double weight_decay = 0.01;
  double eps = 1e-8;
  std::size_t val_every_epochs = 100;
  std::size_t plateau_patience = 3;
  double plateau_min_delta = 1e-3;
  std::size_t max_epochs = 10000;
  std::uint64_t seed = 0;
  // Sequences per forward/backward pass; gradients are accumulated over the
  // batch, so this only bounds activation memory.
  std::size_t micro_batch = 128;
  // Compute budget caps for desk-scale runs; 0 disables.
  std::size_t max_steps = 0;
  double max_wall_seconds = 0.0;

  void validate() const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

enum class StopReason { Plateau, MaxEpochs, Budget };
std::string to_string(StopReason r);

struct ValidationPoint {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double wall_time = 0.0;
};

struct TrainLog {
  std::vector<ValidationPoint> points;
  StopReason stop_reason = StopReason::MaxEpochs;
  std::size_t steps = 0;
  double initial_train_loss = 0.0;  // loss of the first optimizer step's batch
  double best_val_loss = 0.0;

  std::string to_csv() const;
};

struct TrainResult {
  ModelCheckpoint checkpoint;  // parameters at the best validation loss
  TrainLog log;
};

class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& what, ModelCheckpoint last_good)
      : Error(what), last_good_(std::move(last_good)) {}
  const ModelCheckpoint& last_good() const noexcept { return last_good_; }

 private:
  ModelCheckpoint last_good_;
};

struct CorpusSplit {
  std::vector<std::string> train;
  std::vector<std::string> val;
};

// Deterministic shuffle, then the last floor(n/10) lines become validation.
// Throws TooSmallError below 10 lines.
CorpusSplit split_corpus(const std::vector<std::string>& lines, std::uint64_t seed);

using ProgressFn = std::function<void(const ValidationPoint&)>;

// Trains from a fresh initialization seeded by train_config.seed.
TrainResult train(const ModelConfig& model_config, const TrainConfig& train_config,
                  const std::vector<std::string>& corpus, const ProgressFn& progress = {});
TrainResult train(const ModelConfig& model_config, const TrainConfig& train_config, const CorpusSplit& split,
                  const ProgressFn& progress = {});

// Encodes lines into a flat [n, context] token buffer. Throws
// LengthOverflowError for lines that do not fit.
std::vector<TokenId> encode_lines(const std::vector<std::string>& lines, std::size_t context);

// Differences between greedy-decoded results and true results.
struct ErrorHistogram {
  static const std::vector<std::string>& labels();
  std::vector<std::size_t> counts;  // one per label; last label is "unparseable"
  std::size_t total = 0;

  std::size_t zero_count() const;
  double fraction(std::size_t bucket) const;
  nlohmann::json to_json() const;
};

std::size_t error_bucket(double diff);
// Parses a rendered result ("+7.2", "-192.93"); nullopt if malformed.
std::optional<double> parse_result(const std::string& text);

ErrorHistogram eval_top1_error_histogram(const Gpt<float>& model, const std::vector<std::string>& eval_lines);

}  // namespace evcog
