#include "evcog/trainer.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <numeric>
#include <sstream>

#include "evcog/optim.hpp"

namespace evcog {

void TrainConfig::validate() const {
  if (batch_size < 1) throw ConfigError("train.batch_size: must be >= 1");
  if (!(learning_rate > 0.0)) throw ConfigError("train.learning_rate: must be > 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0)) throw ConfigError("train.beta1: must lie in [0, 1)");
  if (!(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("train.beta2: must lie in [0, 1)");
  if (!(weight_decay >= 0.0)) throw ConfigError("train.weight_decay: must be >= 0");
  if (!(eps > 0.0)) throw ConfigError("train.eps: must be > 0");
  if (val_every_epochs < 1) throw ConfigError("train.val_every_epochs: must be >= 1");
  if (plateau_patience < 1) throw ConfigError("train.plateau_patience: must be >= 1");
  if (!(plateau_min_delta >= 0.0)) throw ConfigError("train.plateau_min_delta: must be >= 0");
  if (max_epochs < 1) throw ConfigError("train.max_epochs: must be >= 1");
  if (micro_batch < 1) throw ConfigError("train.micro_batch: must be >= 1");
  if (!(max_wall_seconds >= 0.0)) throw ConfigError("train.max_wall_seconds: must be >= 0");
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"batch_size", c.batch_size},
       {"learning_rate", c.learning_rate},
       {"betas", {c.beta1, c.beta2}},
       {"weight_decay", c.weight_decay},
       {"eps", c.eps},
       {"val_every_epochs", c.val_every_epochs},
       {"plateau_patience", c.plateau_patience},
       {"plateau_min_delta", c.plateau_min_delta},
       {"max_epochs", c.max_epochs},
       {"seed", c.seed},
       {"micro_batch", c.micro_batch},
       {"max_steps", c.max_steps},
       {"max_wall_seconds", c.max_wall_seconds}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  c = TrainConfig{};
  c.batch_size = j.value("batch_size", c.batch_size);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  if (j.contains("betas")) {
    auto b = j.at("betas").get<std::vector<double>>();
    if (b.size() != 2) throw ConfigError("train.betas: expected a pair");
    c.beta1 = b[0];
    c.beta2 = b[1];
  }
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.eps = j.value("eps", c.eps);
  c.val_every_epochs = j.value("val_every_epochs", c.val_every_epochs);
  c.plateau_patience = j.value("plateau_patience", c.plateau_patience);
  c.plateau_min_delta = j.value("plateau_min_delta", c.plateau_min_delta);
  c.max_epochs = j.value("max_epochs", c.max_epochs);
  c.seed = j.value("seed", c.seed);
  c.micro_batch = j.value("micro_batch", c.micro_batch);
  c.max_steps = j.value("max_steps", c.max_steps);
  c.max_wall_seconds = j.value("max_wall_seconds", c.max_wall_seconds);
}

std::string to_string(StopReason r) {
  switch (r) {
    case StopReason::Plateau:
      return "plateau";
    case StopReason::MaxEpochs:
      return "max_epochs";
    case StopReason::Budget:
      return "budget";
  }
  return "unknown";
}

std::string TrainLog::to_csv() const {
  std::ostringstream out;
  out.precision(10);
  out << "epoch,train_loss,val_loss,wall_time\n";
  for (const auto& p : points) out << p.epoch << ',' << p.train_loss << ',' << p.val_loss << ',' << p.wall_time << '\n';
  return out.str();
}

CorpusSplit split_corpus(const std::vector<std::string>& lines, std::uint64_t seed) {
  if (lines.size() < 10) {
    throw TooSmallError("corpus has " + std::to_string(lines.size()) + " lines; at least 10 are required");
  }
  std::vector<std::size_t> order(lines.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng = make_rng(seed, 0x5b1);
  std::shuffle(order.begin(), order.end(), rng);
  const std::size_t n_val = lines.size() / 10;
  CorpusSplit split;
  split.train.reserve(lines.size() - n_val);
  split.val.reserve(n_val);
  for (std::size_t i = 0; i < order.size(); ++i) {
    (i < order.size() - n_val ? split.train : split.val).push_back(lines[order[i]]);
  }
  return split;
}

std::vector<TokenId> encode_lines(const std::vector<std::string>& lines, std::size_t context) {
  std::vector<TokenId> out;
  out.reserve(lines.size() * context);
  const auto& vocab = Vocabulary::standard();
  for (const auto& line : lines) {
    auto ids = encode(line, vocab, context);
    out.insert(out.end(), ids.begin(), ids.end());
  }
  return out;
}

TrainResult train(const ModelConfig& model_config, const TrainConfig& train_config,
                  const std::vector<std::string>& corpus, const ProgressFn& progress) {
  return train(model_config, train_config, split_corpus(corpus, train_config.seed), progress);
}

TrainResult train(const ModelConfig& model_config, const TrainConfig& cfg, const CorpusSplit& split,
                  const ProgressFn& progress) {
  model_config.validate();
  cfg.validate();
  if (split.train.empty() || split.val.empty()) throw TooSmallError("train and validation splits must be non-empty");
  const auto ctx = static_cast<std::size_t>(model_config.context_length);
  const TokenId pad = Vocabulary::standard().pad_id();

  const auto train_tokens = encode_lines(split.train, ctx);
  const auto train_targets = shift_targets(train_tokens, split.train.size(), ctx, pad);
  const auto val_tokens = encode_lines(split.val, ctx);
  const auto val_targets = shift_targets(val_tokens, split.val.size(), ctx, pad);

  Gpt<float> model(model_config);
  model.init_weights(cfg.seed);
  AdamW<float> opt(model.params().size(), AdamWConfig{cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.eps,
                                                      cfg.weight_decay});
  AlignedVector<float> grad(model.params().size());
  Rng dropout_rng = make_rng(cfg.seed, 0xd80);

  const auto meta = [&](std::size_t epoch, double val_loss) {
    return nlohmann::json{{"train_config", cfg},         {"epoch", epoch},
                          {"val_loss", val_loss},        {"train_lines", split.train.size()},
                          {"val_lines", split.val.size()}};
  };

  TrainResult result;
  result.checkpoint = ModelCheckpoint::from_model(model, meta(0, std::numeric_limits<double>::infinity()));
  double best_val = std::numeric_limits<double>::infinity();
  std::size_t stale = 0;
  const auto start = std::chrono::steady_clock::now();
  auto elapsed = [&] { return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count(); };

  std::vector<std::size_t> order(split.train.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<TokenId> batch_tokens;
  std::vector<TokenId> batch_targets;
  bool stop = false;
  bool first_step = true;
  result.log.stop_reason = StopReason::MaxEpochs;

  for (std::size_t epoch = 1; epoch <= cfg.max_epochs && !stop; ++epoch) {
    Rng shuffle_rng = make_rng(cfg.seed, 0x10000 + epoch);
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    LossSum epoch_loss;

    for (std::size_t b0 = 0; b0 < order.size(); b0 += cfg.batch_size) {
      const std::size_t nb = std::min(cfg.batch_size, order.size() - b0);
      batch_tokens.resize(nb * ctx);
      batch_targets.resize(nb * ctx);
      std::size_t count = 0;
      for (std::size_t i = 0; i < nb; ++i) {
        const std::size_t src = order[b0 + i] * ctx;
        std::copy_n(train_tokens.begin() + static_cast<std::ptrdiff_t>(src), ctx,
                    batch_tokens.begin() + static_cast<std::ptrdiff_t>(i * ctx));
        std::copy_n(train_targets.begin() + static_cast<std::ptrdiff_t>(src), ctx,
                    batch_targets.begin() + static_cast<std::ptrdiff_t>(i * ctx));
      }
      for (TokenId t : batch_targets) count += t != kIgnoreTarget;
      if (count == 0) continue;

      std::fill(grad.begin(), grad.end(), 0.0f);
      LossSum batch_loss;
      const float scale = 1.0f / static_cast<float>(count);
      for (std::size_t m0 = 0; m0 < nb; m0 += cfg.micro_batch) {
        const std::size_t nm = std::min(cfg.micro_batch, nb - m0);
        auto part = model.forward_backward(std::span(batch_tokens).subspan(m0 * ctx, nm * ctx),
                                           std::span(batch_targets).subspan(m0 * ctx, nm * ctx), nm, true,
                                           &dropout_rng, scale, grad);
        batch_loss.sum += part.sum;
        batch_loss.count += part.count;
      }
      if (!std::isfinite(batch_loss.sum)) {
        throw DivergenceError("training loss became non-finite at epoch " + std::to_string(epoch) + ", step " +
                                  std::to_string(opt.steps() + 1),
                              result.checkpoint);
      }
      if (first_step) {
        result.log.initial_train_loss = batch_loss.mean();
        first_step = false;
      }
      opt.step(model.params(), grad);
      epoch_loss.sum += batch_loss.sum;
      epoch_loss.count += batch_loss.count;

      if ((cfg.max_steps > 0 && opt.steps() >= cfg.max_steps) ||
          (cfg.max_wall_seconds > 0.0 && elapsed() >= cfg.max_wall_seconds)) {
        stop = true;
        result.log.stop_reason = StopReason::Budget;
        break;
      }
    }

    const bool last = stop || epoch == cfg.max_epochs;
    if (epoch % cfg.val_every_epochs != 0 && !last) continue;

    const double val_loss = model.evaluate_loss(val_tokens, val_targets, split.val.size()).mean();
    if (!std::isfinite(val_loss)) {
      throw DivergenceError("validation loss became non-finite at epoch " + std::to_string(epoch), result.checkpoint);
    }
    ValidationPoint point{epoch, epoch_loss.mean(), val_loss, elapsed()};
    result.log.points.push_back(point);
    if (progress) progress(point);

    if (val_loss < best_val - cfg.plateau_min_delta) {
      stale = 0;
    } else {
      ++stale;
    }
    if (val_loss < best_val) {
      best_val = val_loss;
      result.checkpoint = ModelCheckpoint::from_model(model, meta(epoch, val_loss));
    }
    if (!stop && stale >= cfg.plateau_patience) {
      stop = true;
      result.log.stop_reason = StopReason::Plateau;
    }
  }
  result.log.steps = opt.steps();
  result.log.best_val_loss = best_val;
  result.checkpoint.metadata["steps"] = opt.steps();
  result.checkpoint.metadata["stop_reason"] = to_string(result.log.stop_reason);
  return result;
}

// ---------------------------------------------------------------------------

const std::vector<std::string>& ErrorHistogram::labels() {
  static const std::vector<std::string> kLabels = {"<=-100",  "(-100,-10]", "(-10,-1]", "(-1,0)",  "0",
                                                   "(0,1)",   "[1,10)",     "[10,100)", ">=100",   "unparseable"};
  return kLabels;
}

std::size_t ErrorHistogram::zero_count() const { return counts.at(4); }

double ErrorHistogram::fraction(std::size_t bucket) const {
  return total ? static_cast<double>(counts.at(bucket)) / static_cast<double>(total) : 0.0;
}

nlohmann::json ErrorHistogram::to_json() const {
  nlohmann::json j = nlohmann::json::array();
  for (std::size_t i = 0; i < counts.size(); ++i) j.push_back({{"bucket", labels()[i]}, {"count", counts[i]}});
  return {{"total", total}, {"buckets", j}};
}

std::size_t error_bucket(double diff) {
  // Results carry two decimals, so |diff| < 0.005 is an exact match.
  if (std::abs(diff) < 0.005) return 4;
  if (diff <= -100) return 0;
  if (diff <= -10) return 1;
  if (diff <= -1) return 2;
  if (diff < 0) return 3;
  if (diff < 1) return 5;
  if (diff < 10) return 6;
  if (diff < 100) return 7;
  return 8;
}

std::optional<double> parse_result(const std::string& text) {
  if (text.size() < 2 || (text[0] != '+' && text[0] != '-')) return std::nullopt;
  std::size_t i = 1;
  std::size_t int_digits = 0;
  while (i < text.size() && std::isdigit(static_cast<unsigned char>(text[i]))) ++i, ++int_digits;
  if (int_digits == 0) return std::nullopt;
  if (i < text.size()) {
    if (text[i] != '.') return std::nullopt;
    ++i;
    std::size_t frac = 0;
    while (i < text.size() && std::isdigit(static_cast<unsigned char>(text[i]))) ++i, ++frac;
    if (frac == 0 || i != text.size()) return std::nullopt;
  }
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(text.data() + 1, text.data() + text.size(), v);
  if (ec != std::errc{} || ptr != text.data() + text.size()) return std::nullopt;
  return text[0] == '-' ? -v : v;
}

ErrorHistogram eval_top1_error_histogram(const Gpt<float>& model, const std::vector<std::string>& eval_lines) {
  ErrorHistogram hist;
  hist.counts.assign(ErrorHistogram::labels().size(), 0);
  const auto& vocab = Vocabulary::standard();
  std::vector<std::vector<TokenId>> prefixes;
  std::vector<std::optional<double>> truths;
  for (const auto& line : eval_lines) {
    auto eq = line.find('=');
    if (eq == std::string::npos) {
      truths.push_back(std::nullopt);
      prefixes.push_back({});
      continue;
    }
    prefixes.push_back(tokenize(line.substr(0, eq + 1), vocab));
    truths.push_back(parse_result(line.substr(eq + 1)));
  }
  std::vector<std::vector<TokenId>> valid_prefixes;
  std::vector<std::size_t> valid_rows;
  for (std::size_t i = 0; i < prefixes.size(); ++i) {
    if (!prefixes[i].empty() && truths[i]) {
      valid_prefixes.push_back(prefixes[i]);
      valid_rows.push_back(i);
    }
  }
  auto generated = greedy_generate_batch(model, valid_prefixes, vocab.pad_id());
  hist.total = eval_lines.size();
  hist.counts.back() = eval_lines.size() - valid_rows.size();
  for (std::size_t k = 0; k < valid_rows.size(); ++k) {
    auto value = parse_result(decode(generated[k], vocab));
    if (!value) {
      ++hist.counts.back();
      continue;
    }
    ++hist.counts[error_bucket(*value - *truths[valid_rows[k]])];
  }
  return hist;
}

}  // namespace evcog
