#pragma once

#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "evcog/random.hpp"
#include "evcog/tokenizer.hpp"

namespace evcog {

struct ModelConfig {
  int hidden_size = 320;
  int layers = 8;
  int heads = 8;
  int context_length = kContextLength;
  int vocab_size = kVocabSize;
  double dropout = 0.2;
  bool use_bias = false;
  bool tie_embeddings = false;

  // Throws ConfigError with the offending field path.
  void validate() const;
  // V*C*(tied ? 1 : 2) + T*C + L*(12*C^2 + 2*C) + C, plus biases when enabled.
  std::size_t parameter_count() const;
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

// Numeric buffers that Eigen maps over. A fixed base alignment keeps the
// vectorized kernels on the same code path run to run, so results are
// bit-reproducible.
template <typename T>
using AlignedVector = std::vector<T, Eigen::aligned_allocator<T>>;

inline constexpr std::size_t kAbsent = std::numeric_limits<std::size_t>::max();

// One named parameter tensor inside the flat parameter vector.
struct TensorSlot {
  std::string name;
  std::vector<std::int64_t> shape;
  std::size_t offset = 0;
  std::size_t numel = 0;
  enum class Init { Normal, ResidualNormal, One, Zero } init = Init::Normal;
};

struct LayerSlots {
  std::size_t ln1_w = kAbsent, ln1_b = kAbsent;
  std::size_t qkv_w = kAbsent, qkv_b = kAbsent;
  std::size_t proj_w = kAbsent, proj_b = kAbsent;
  std::size_t ln2_w = kAbsent, ln2_b = kAbsent;
  std::size_t fc_w = kAbsent, fc_b = kAbsent;
  std::size_t out_w = kAbsent, out_b = kAbsent;
};

class ParameterLayout {
 public:
  explicit ParameterLayout(const ModelConfig& config);

  std::size_t total() const noexcept { return total_; }
  const std::vector<TensorSlot>& tensors() const noexcept { return tensors_; }
  const TensorSlot& find(const std::string& name) const;

  std::size_t wte = kAbsent, wpe = kAbsent;
  std::vector<LayerSlots> blocks;
  std::size_t lnf_w = kAbsent, lnf_b = kAbsent;
  std::size_t unembed_w = kAbsent, unembed_b = kAbsent;

 private:
  std::size_t add(std::string name, std::vector<std::int64_t> shape, TensorSlot::Init init);

  std::vector<TensorSlot> tensors_;
  std::size_t total_ = 0;
};

// Loss targets: position t predicts token t+1. The first <PAD> after a line is
// kept as an end-of-sequence target; every later position is kIgnoreTarget.
inline constexpr TokenId kIgnoreTarget = -1;
std::vector<TokenId> shift_targets(std::span<const TokenId> tokens, std::size_t batch, std::size_t context,
                                   TokenId pad_id);

struct LossSum {
  double sum = 0.0;
  std::size_t count = 0;
  double mean() const { return count ? sum / static_cast<double>(count) : 0.0; }
};

// Pre-norm GPT decoder: learned absolute positions, causal multi-head
// attention, GELU MLP of width 4*hidden, final layer norm, linear unembedding.
// Activations are row-major [batch*context, features].
template <typename T>
class Gpt {
 public:
  using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

  explicit Gpt(ModelConfig config);

  // normal(0, 0.02) weights, residual projections scaled by 1/sqrt(2*layers),
  // layer-norm gains 1, biases 0.
  void init_weights(std::uint64_t seed);

  const ModelConfig& config() const noexcept { return config_; }
  const ParameterLayout& layout() const noexcept { return layout_; }
  AlignedVector<T>& params() noexcept { return params_; }
  const AlignedVector<T>& params() const noexcept { return params_; }

  struct Output {
    Matrix logits;  // [batch*context, vocab]
    Matrix hidden;  // [batch*context, hidden], the input to the unembedding
  };

  // Inference forward pass (dropout off). `tokens` holds `batch` sequences of
  // exactly context_length ids each.
  Output forward(std::span<const TokenId> tokens, std::size_t batch) const;

  // Forward pass with optional dropout, then backward. Adds
  // grad_scale * d(sum of token losses)/d(params) into `grad`.
  LossSum forward_backward(std::span<const TokenId> tokens, std::span<const TokenId> targets, std::size_t batch,
                           bool train, Rng* rng, T grad_scale, std::span<T> grad) const;

  // Sum of token cross-entropies over non-ignored targets; no gradient.
  LossSum evaluate_loss(std::span<const TokenId> tokens, std::span<const TokenId> targets, std::size_t batch) const;

 private:
  struct LayerCache;
  struct Cache;

  void run_forward(std::span<const TokenId> tokens, std::size_t batch, bool train, Rng* rng, Cache& cache) const;
  void run_backward(std::span<const TokenId> tokens, std::size_t batch, bool train, Cache& cache, Matrix& dlogits,
                    std::span<T> grad) const;
  void check_batch(std::span<const TokenId> tokens, std::size_t batch) const;

  ModelConfig config_;
  ParameterLayout layout_;
  AlignedVector<T> params_;
};

extern template class Gpt<float>;
extern template class Gpt<double>;

// Mean token-level cross-entropy over targets != ignore. Throws
// UndefinedLossError when every target is ignored.
template <typename Derived>
double cross_entropy(const Eigen::MatrixBase<Derived>& logits, std::span<const TokenId> targets,
                     TokenId ignore = kIgnoreTarget);

// Sum of log-softmax probabilities of `continuation` given everything before
// it, evaluated in one causal forward pass. Throws LengthOverflowError when
// prefix+continuation exceeds the context.
template <typename T>
double sequence_log_prob(const Gpt<T>& model, std::span<const TokenId> prefix,
                         std::span<const TokenId> continuation);

// Batched form: entry i scores continuations[i] given prefixes[i].
template <typename T>
std::vector<double> sequence_log_probs(const Gpt<T>& model, const std::vector<std::vector<TokenId>>& prefixes,
                                       const std::vector<std::vector<TokenId>>& continuations);

// Argmax decoding until <PAD> is produced or the context is full. Returns the
// generated tokens, excluding the terminating <PAD>.
template <typename T>
std::vector<TokenId> greedy_generate(const Gpt<T>& model, std::span<const TokenId> prefix,
                                     TokenId pad_id = Vocabulary::standard().pad_id());

template <typename T>
std::vector<std::vector<TokenId>> greedy_generate_batch(const Gpt<T>& model,
                                                        const std::vector<std::vector<TokenId>>& prefixes,
                                                        TokenId pad_id = Vocabulary::standard().pad_id());

}  // namespace evcog

#include "evcog/detail/model_inl.hpp"
