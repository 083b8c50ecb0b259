#include "evcog/model.hpp"

#include <algorithm>
#include <cmath>

#include "evcog/errors.hpp"

namespace evcog {

void ModelConfig::validate() const {
  if (hidden_size < 1) throw ConfigError("model.hidden_size: must be >= 1");
  if (layers < 1) throw ConfigError("model.layers: must be >= 1");
  if (heads < 1) throw ConfigError("model.heads: must be >= 1");
  if (hidden_size % heads != 0) throw ConfigError("model.hidden_size: must be divisible by model.heads");
  if (context_length < 2) throw ConfigError("model.context_length: must be >= 2");
  if (vocab_size < 1) throw ConfigError("model.vocab_size: must be >= 1");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("model.dropout: must lie in [0, 1)");
}

std::size_t ModelConfig::parameter_count() const { return ParameterLayout(*this).total(); }

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = {{"hidden_size", c.hidden_size}, {"layers", c.layers},         {"heads", c.heads},
       {"context_length", c.context_length}, {"vocab_size", c.vocab_size}, {"dropout", c.dropout},
       {"use_bias", c.use_bias},           {"tie_embeddings", c.tie_embeddings}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  c = ModelConfig{};
  c.hidden_size = j.value("hidden_size", c.hidden_size);
  c.layers = j.value("layers", c.layers);
  c.heads = j.value("heads", c.heads);
  c.context_length = j.value("context_length", c.context_length);
  c.vocab_size = j.value("vocab_size", c.vocab_size);
  c.dropout = j.value("dropout", c.dropout);
  c.use_bias = j.value("use_bias", c.use_bias);
  c.tie_embeddings = j.value("tie_embeddings", c.tie_embeddings);
}

ParameterLayout::ParameterLayout(const ModelConfig& config) {
  config.validate();
  const std::int64_t C = config.hidden_size;
  const std::int64_t V = config.vocab_size;
  const std::int64_t T = config.context_length;
  using I = TensorSlot::Init;
  const bool bias = config.use_bias;

  wte = add("wte", {V, C}, I::Normal);
  wpe = add("wpe", {T, C}, I::Normal);
  for (int l = 0; l < config.layers; ++l) {
    const std::string p = "blocks." + std::to_string(l) + ".";
    LayerSlots s;
    s.ln1_w = add(p + "ln1.weight", {C}, I::One);
    if (bias) s.ln1_b = add(p + "ln1.bias", {C}, I::Zero);
    s.qkv_w = add(p + "attn.qkv.weight", {C, 3 * C}, I::Normal);
    if (bias) s.qkv_b = add(p + "attn.qkv.bias", {3 * C}, I::Zero);
    s.proj_w = add(p + "attn.proj.weight", {C, C}, I::ResidualNormal);
    if (bias) s.proj_b = add(p + "attn.proj.bias", {C}, I::Zero);
    s.ln2_w = add(p + "ln2.weight", {C}, I::One);
    if (bias) s.ln2_b = add(p + "ln2.bias", {C}, I::Zero);
    s.fc_w = add(p + "mlp.fc.weight", {C, 4 * C}, I::Normal);
    if (bias) s.fc_b = add(p + "mlp.fc.bias", {4 * C}, I::Zero);
    s.out_w = add(p + "mlp.proj.weight", {4 * C, C}, I::ResidualNormal);
    if (bias) s.out_b = add(p + "mlp.proj.bias", {C}, I::Zero);
    blocks.push_back(s);
  }
  lnf_w = add("lnf.weight", {C}, I::One);
  if (bias) lnf_b = add("lnf.bias", {C}, I::Zero);
  if (!config.tie_embeddings) unembed_w = add("unembed.weight", {C, V}, I::Normal);
  if (bias) unembed_b = add("unembed.bias", {V}, I::Zero);
}

std::size_t ParameterLayout::add(std::string name, std::vector<std::int64_t> shape, TensorSlot::Init init) {
  std::size_t numel = 1;
  for (auto d : shape) numel *= static_cast<std::size_t>(d);
  TensorSlot slot{std::move(name), std::move(shape), total_, numel, init};
  tensors_.push_back(std::move(slot));
  std::size_t offset = total_;
  total_ += numel;
  return offset;
}

const TensorSlot& ParameterLayout::find(const std::string& name) const {
  for (const auto& t : tensors_) {
    if (t.name == name) return t;
  }
  throw FormatError("no parameter tensor named '" + name + "'");
}

std::vector<TokenId> shift_targets(std::span<const TokenId> tokens, std::size_t batch, std::size_t context,
                                   TokenId pad_id) {
  if (tokens.size() != batch * context) throw DimensionError("shift_targets: token count != batch * context");
  std::vector<TokenId> targets(tokens.size(), kIgnoreTarget);
  for (std::size_t b = 0; b < batch; ++b) {
    const TokenId* seq = tokens.data() + b * context;
    TokenId* out = targets.data() + b * context;
    for (std::size_t t = 0; t + 1 < context; ++t) {
      if (seq[t] == pad_id) break;
      out[t] = seq[t + 1];
    }
  }
  return targets;
}

// ---------------------------------------------------------------------------

namespace {

constexpr double kLayerNormEps = 1e-5;

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<RowMat<T>>;
template <typename T>
using CMapMat = Eigen::Map<const RowMat<T>>;
template <typename T>
using CMapRow = Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>;
template <typename T>
using MapRow = Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>>;
template <typename T>
using StridedMat = Eigen::Map<RowMat<T>, 0, Eigen::OuterStride<>>;
template <typename T>
using CStridedMat = Eigen::Map<const RowMat<T>, 0, Eigen::OuterStride<>>;

template <typename T>
CMapMat<T> cmat(const AlignedVector<T>& p, std::size_t off, Eigen::Index rows, Eigen::Index cols) {
  return CMapMat<T>(p.data() + off, rows, cols);
}

template <typename T>
MapMat<T> gmat(std::span<T> g, std::size_t off, Eigen::Index rows, Eigen::Index cols) {
  return MapMat<T>(g.data() + off, rows, cols);
}

template <typename T>
CMapRow<T> crow(const AlignedVector<T>& p, std::size_t off, Eigen::Index n) {
  return CMapRow<T>(p.data() + off, n);
}

template <typename T>
MapRow<T> grow(std::span<T> g, std::size_t off, Eigen::Index n) {
  return MapRow<T>(g.data() + off, n);
}

// y = (x - mean) * rstd * w (+ b)
template <typename T>
void layer_norm(const RowMat<T>& x, const AlignedVector<T>& p, std::size_t w_off, std::size_t b_off,
                RowMat<T>& xhat, std::vector<T>& rstd, RowMat<T>& y) {
  const auto C = x.cols();
  xhat.resize(x.rows(), C);
  y.resize(x.rows(), C);
  rstd.resize(static_cast<std::size_t>(x.rows()));
  auto w = crow(p, w_off, C);
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    T mean = x.row(r).mean();
    auto centered = (x.row(r).array() - mean);
    T var = centered.square().mean();
    T rs = T(1) / std::sqrt(var + static_cast<T>(kLayerNormEps));
    rstd[static_cast<std::size_t>(r)] = rs;
    xhat.row(r) = centered * rs;
    y.row(r) = xhat.row(r).cwiseProduct(w);
  }
  if (b_off != kAbsent) y.rowwise() += crow(p, b_off, C);
}

// Returns dx; accumulates dw (and db) into grad.
template <typename T>
RowMat<T> layer_norm_backward(const RowMat<T>& dy, const RowMat<T>& xhat, const std::vector<T>& rstd,
                              const AlignedVector<T>& p, std::size_t w_off, std::size_t b_off, std::span<T> grad) {
  const auto C = dy.cols();
  auto w = crow(p, w_off, C);
  auto dw = grow(grad, w_off, C);
  dw += dy.cwiseProduct(xhat).colwise().sum();
  if (b_off != kAbsent) grow(grad, b_off, C) += dy.colwise().sum();
  RowMat<T> dx(dy.rows(), C);
  const T inv_c = T(1) / static_cast<T>(C);
  for (Eigen::Index r = 0; r < dy.rows(); ++r) {
    auto dxhat = dy.row(r).cwiseProduct(w);
    T mean_d = dxhat.sum() * inv_c;
    T mean_dx = dxhat.dot(xhat.row(r)) * inv_c;
    dx.row(r) = rstd[static_cast<std::size_t>(r)] *
                (dxhat.array() - mean_d - xhat.row(r).array() * mean_dx).matrix();
  }
  return dx;
}

template <typename T>
constexpr T kGeluC = static_cast<T>(0.7978845608028654);  // sqrt(2/pi)

template <typename T>
T gelu(T x) {
  T u = kGeluC<T> * (x + static_cast<T>(0.044715) * x * x * x);
  return static_cast<T>(0.5) * x * (T(1) + std::tanh(u));
}

template <typename T>
T gelu_grad(T x) {
  T u = kGeluC<T> * (x + static_cast<T>(0.044715) * x * x * x);
  T th = std::tanh(u);
  T du = kGeluC<T> * (T(1) + static_cast<T>(3 * 0.044715) * x * x);
  return static_cast<T>(0.5) * (T(1) + th) + static_cast<T>(0.5) * x * (T(1) - th * th) * du;
}

template <typename T>
void fill_dropout_mask(RowMat<T>& mask, Eigen::Index rows, Eigen::Index cols, double rate, Rng& rng) {
  mask.resize(rows, cols);
  const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
  T* m = mask.data();
  for (Eigen::Index i = 0; i < rows * cols; ++i) m[i] = uniform01(rng) < rate ? T(0) : keep_scale;
}

}  // namespace

template <typename T>
struct Gpt<T>::LayerCache {
  Matrix ln1_xhat, ln1_out;
  std::vector<T> ln1_rstd;
  Matrix qkv;
  AlignedVector<T> att_probs;  // [batch, heads, T, T] softmax output
  AlignedVector<T> att_mask;   // dropout multipliers, same shape (train only)
  Matrix att_out;            // concatenated heads, input to the projection
  Matrix res1_mask;
  Matrix ln2_xhat, ln2_out;
  std::vector<T> ln2_rstd;
  Matrix fc_pre, fc_act;
  Matrix res2_mask;
};

template <typename T>
struct Gpt<T>::Cache {
  std::vector<LayerCache> layers;
  Matrix lnf_xhat;
  std::vector<T> lnf_rstd;
  Matrix hidden;
  Matrix logits;
};

template <typename T>
Gpt<T>::Gpt(ModelConfig config) : config_(config), layout_(config), params_(layout_.total(), T(0)) {
  for (const auto& t : layout_.tensors()) {
    if (t.init == TensorSlot::Init::One) std::fill_n(params_.begin() + static_cast<std::ptrdiff_t>(t.offset), t.numel, T(1));
  }
}

template <typename T>
void Gpt<T>::init_weights(std::uint64_t seed) {
  Rng rng = make_rng(seed, 0x1a17);
  std::normal_distribution<double> normal(0.0, 1.0);
  const double base_std = 0.02;
  const double residual_std = base_std / std::sqrt(2.0 * config_.layers);
  for (const auto& t : layout_.tensors()) {
    T* dst = params_.data() + t.offset;
    switch (t.init) {
      case TensorSlot::Init::Normal:
        for (std::size_t i = 0; i < t.numel; ++i) dst[i] = static_cast<T>(base_std * normal(rng));
        break;
      case TensorSlot::Init::ResidualNormal:
        for (std::size_t i = 0; i < t.numel; ++i) dst[i] = static_cast<T>(residual_std * normal(rng));
        break;
      case TensorSlot::Init::One:
        std::fill_n(dst, t.numel, T(1));
        break;
      case TensorSlot::Init::Zero:
        std::fill_n(dst, t.numel, T(0));
        break;
    }
  }
}

template <typename T>
void Gpt<T>::check_batch(std::span<const TokenId> tokens, std::size_t batch) const {
  const auto ctx = static_cast<std::size_t>(config_.context_length);
  if (tokens.size() != batch * ctx) {
    throw DimensionError("expected " + std::to_string(batch) + " x " + std::to_string(ctx) + " token ids, got " +
                         std::to_string(tokens.size()));
  }
  for (TokenId id : tokens) {
    if (id < 0 || id >= config_.vocab_size) {
      throw InvalidTokenError("token id " + std::to_string(id) + " outside vocabulary of size " +
                              std::to_string(config_.vocab_size));
    }
  }
}

template <typename T>
void Gpt<T>::run_forward(std::span<const TokenId> tokens, std::size_t batch, bool train, Rng* rng,
                         Cache& cache) const {
  const Eigen::Index Tc = config_.context_length;
  const Eigen::Index C = config_.hidden_size;
  const Eigen::Index H = config_.heads;
  const Eigen::Index D = C / H;
  const Eigen::Index V = config_.vocab_size;
  const Eigen::Index N = static_cast<Eigen::Index>(batch) * Tc;
  const bool dropout = train && config_.dropout > 0.0;
  if (dropout && rng == nullptr) throw Error("dropout requires a random stream");
  const T scale = T(1) / std::sqrt(static_cast<T>(D));
  const T keep_scale = static_cast<T>(1.0 / (1.0 - config_.dropout));
  const auto& P = params_;

  Matrix x(N, C);
  auto wte = cmat(P, layout_.wte, V, C);
  auto wpe = cmat(P, layout_.wpe, Tc, C);
  for (Eigen::Index n = 0; n < N; ++n) x.row(n) = wte.row(tokens[static_cast<std::size_t>(n)]) + wpe.row(n % Tc);

  cache.layers.resize(static_cast<std::size_t>(config_.layers));
  for (int l = 0; l < config_.layers; ++l) {
    const auto& s = layout_.blocks[static_cast<std::size_t>(l)];
    auto& L = cache.layers[static_cast<std::size_t>(l)];

    layer_norm<T>(x, P, s.ln1_w, s.ln1_b, L.ln1_xhat, L.ln1_rstd, L.ln1_out);
    L.qkv.noalias() = L.ln1_out * cmat(P, s.qkv_w, C, 3 * C);
    if (s.qkv_b != kAbsent) L.qkv.rowwise() += crow(P, s.qkv_b, 3 * C);

    L.att_probs.assign(static_cast<std::size_t>(batch * H * Tc * Tc), T(0));
    if (dropout) L.att_mask.resize(L.att_probs.size());
    L.att_out.resize(N, C);
    Matrix scores(Tc, Tc);
    for (std::size_t b = 0; b < batch; ++b) {
      const T* base = L.qkv.data() + static_cast<Eigen::Index>(b) * Tc * 3 * C;
      for (Eigen::Index h = 0; h < H; ++h) {
        CStridedMat<T> q(base + h * D, Tc, D, Eigen::OuterStride<>(3 * C));
        CStridedMat<T> k(base + C + h * D, Tc, D, Eigen::OuterStride<>(3 * C));
        CStridedMat<T> v(base + 2 * C + h * D, Tc, D, Eigen::OuterStride<>(3 * C));
        scores.noalias() = q * k.transpose();
        T* probs = L.att_probs.data() + (static_cast<Eigen::Index>(b) * H + h) * Tc * Tc;
        MapMat<T> pm(probs, Tc, Tc);
        for (Eigen::Index i = 0; i < Tc; ++i) {
          T m = scores(i, 0) * scale;
          for (Eigen::Index j = 1; j <= i; ++j) m = std::max(m, scores(i, j) * scale);
          T sum = 0;
          for (Eigen::Index j = 0; j <= i; ++j) {
            T e = std::exp(scores(i, j) * scale - m);
            pm(i, j) = e;
            sum += e;
          }
          for (Eigen::Index j = 0; j <= i; ++j) pm(i, j) /= sum;
        }
        StridedMat<T> out(L.att_out.data() + static_cast<Eigen::Index>(b) * Tc * C + h * D, Tc, D,
                          Eigen::OuterStride<>(C));
        if (dropout) {
          T* mask = L.att_mask.data() + (static_cast<Eigen::Index>(b) * H + h) * Tc * Tc;
          for (Eigen::Index i = 0; i < Tc * Tc; ++i) {
            mask[i] = uniform01(*rng) < config_.dropout ? T(0) : keep_scale;
          }
          out.noalias() = (pm.array() * MapMat<T>(mask, Tc, Tc).array()).matrix() * v;
        } else {
          out.noalias() = pm * v;
        }
      }
    }

    Matrix branch = L.att_out * cmat(P, s.proj_w, C, C);
    if (s.proj_b != kAbsent) branch.rowwise() += crow(P, s.proj_b, C);
    if (dropout) {
      fill_dropout_mask<T>(L.res1_mask, N, C, config_.dropout, *rng);
      branch.array() *= L.res1_mask.array();
    }
    x += branch;

    layer_norm<T>(x, P, s.ln2_w, s.ln2_b, L.ln2_xhat, L.ln2_rstd, L.ln2_out);
    L.fc_pre.noalias() = L.ln2_out * cmat(P, s.fc_w, C, 4 * C);
    if (s.fc_b != kAbsent) L.fc_pre.rowwise() += crow(P, s.fc_b, 4 * C);
    L.fc_act = L.fc_pre.unaryExpr([](T v) { return gelu(v); });
    branch.noalias() = L.fc_act * cmat(P, s.out_w, 4 * C, C);
    if (s.out_b != kAbsent) branch.rowwise() += crow(P, s.out_b, C);
    if (dropout) {
      fill_dropout_mask<T>(L.res2_mask, N, C, config_.dropout, *rng);
      branch.array() *= L.res2_mask.array();
    }
    x += branch;
  }

  layer_norm<T>(x, P, layout_.lnf_w, layout_.lnf_b, cache.lnf_xhat, cache.lnf_rstd, cache.hidden);
  if (layout_.unembed_w != kAbsent) {
    cache.logits.noalias() = cache.hidden * cmat(P, layout_.unembed_w, C, V);
  } else {
    cache.logits.noalias() = cache.hidden * wte.transpose();
  }
  if (layout_.unembed_b != kAbsent) cache.logits.rowwise() += crow(P, layout_.unembed_b, V);
}

template <typename T>
void Gpt<T>::run_backward(std::span<const TokenId> tokens, std::size_t batch, bool train, Cache& cache,
                          Matrix& dlogits, std::span<T> grad) const {
  const Eigen::Index Tc = config_.context_length;
  const Eigen::Index C = config_.hidden_size;
  const Eigen::Index H = config_.heads;
  const Eigen::Index D = C / H;
  const Eigen::Index V = config_.vocab_size;
  const Eigen::Index N = static_cast<Eigen::Index>(batch) * Tc;
  const bool dropout = train && config_.dropout > 0.0;
  const T scale = T(1) / std::sqrt(static_cast<T>(D));
  const auto& P = params_;
  if (grad.size() != params_.size()) throw DimensionError("gradient buffer size does not match parameters");

  Matrix dx;
  if (layout_.unembed_w != kAbsent) {
    gmat(grad, layout_.unembed_w, C, V).noalias() += cache.hidden.transpose() * dlogits;
    dx.noalias() = dlogits * cmat(P, layout_.unembed_w, C, V).transpose();
  } else {
    gmat(grad, layout_.wte, V, C).noalias() += dlogits.transpose() * cache.hidden;
    dx.noalias() = dlogits * cmat(P, layout_.wte, V, C);
  }
  if (layout_.unembed_b != kAbsent) grow(grad, layout_.unembed_b, V) += dlogits.colwise().sum();
  dx = layer_norm_backward<T>(dx, cache.lnf_xhat, cache.lnf_rstd, P, layout_.lnf_w, layout_.lnf_b, grad);

  Matrix dbranch, dhid, dqkv;
  Matrix dpm(Tc, Tc), dscores(Tc, Tc);
  for (int l = config_.layers - 1; l >= 0; --l) {
    const auto& s = layout_.blocks[static_cast<std::size_t>(l)];
    auto& L = cache.layers[static_cast<std::size_t>(l)];

    // MLP branch.
    dbranch = dropout ? Matrix(dx.cwiseProduct(L.res2_mask)) : dx;
    gmat(grad, s.out_w, 4 * C, C).noalias() += L.fc_act.transpose() * dbranch;
    if (s.out_b != kAbsent) grow(grad, s.out_b, C) += dbranch.colwise().sum();
    dhid.noalias() = dbranch * cmat(P, s.out_w, 4 * C, C).transpose();
    dhid.array() *= L.fc_pre.unaryExpr([](T v) { return gelu_grad(v); }).array();
    gmat(grad, s.fc_w, C, 4 * C).noalias() += L.ln2_out.transpose() * dhid;
    if (s.fc_b != kAbsent) grow(grad, s.fc_b, 4 * C) += dhid.colwise().sum();
    Matrix dln = dhid * cmat(P, s.fc_w, C, 4 * C).transpose();
    dx += layer_norm_backward<T>(dln, L.ln2_xhat, L.ln2_rstd, P, s.ln2_w, s.ln2_b, grad);

    // Attention branch.
    dbranch = dropout ? Matrix(dx.cwiseProduct(L.res1_mask)) : dx;
    gmat(grad, s.proj_w, C, C).noalias() += L.att_out.transpose() * dbranch;
    if (s.proj_b != kAbsent) grow(grad, s.proj_b, C) += dbranch.colwise().sum();
    Matrix datt = dbranch * cmat(P, s.proj_w, C, C).transpose();

    dqkv.setZero(N, 3 * C);
    for (std::size_t b = 0; b < batch; ++b) {
      const Eigen::Index row0 = static_cast<Eigen::Index>(b) * Tc;
      const T* base = L.qkv.data() + row0 * 3 * C;
      T* dbase = dqkv.data() + row0 * 3 * C;
      for (Eigen::Index h = 0; h < H; ++h) {
        CStridedMat<T> q(base + h * D, Tc, D, Eigen::OuterStride<>(3 * C));
        CStridedMat<T> k(base + C + h * D, Tc, D, Eigen::OuterStride<>(3 * C));
        CStridedMat<T> v(base + 2 * C + h * D, Tc, D, Eigen::OuterStride<>(3 * C));
        StridedMat<T> dq(dbase + h * D, Tc, D, Eigen::OuterStride<>(3 * C));
        StridedMat<T> dk(dbase + C + h * D, Tc, D, Eigen::OuterStride<>(3 * C));
        StridedMat<T> dv(dbase + 2 * C + h * D, Tc, D, Eigen::OuterStride<>(3 * C));
        CStridedMat<T> dout(datt.data() + row0 * C + h * D, Tc, D, Eigen::OuterStride<>(C));
        const Eigen::Index head = static_cast<Eigen::Index>(b) * H + h;
        CMapMat<T> pm(L.att_probs.data() + head * Tc * Tc, Tc, Tc);

        // dP (after dropout) = dO V^T ; dV = P_dropped^T dO
        dpm.noalias() = dout * v.transpose();
        if (dropout) {
          CMapMat<T> mask(L.att_mask.data() + head * Tc * Tc, Tc, Tc);
          dv.noalias() += (pm.array() * mask.array()).matrix().transpose() * dout;
          dpm.array() *= mask.array();
        } else {
          dv.noalias() += pm.transpose() * dout;
        }
        // Softmax backward; masked entries have zero probability.
        for (Eigen::Index i = 0; i < Tc; ++i) {
          T dot = 0;
          for (Eigen::Index j = 0; j <= i; ++j) dot += dpm(i, j) * pm(i, j);
          for (Eigen::Index j = 0; j <= i; ++j) dscores(i, j) = pm(i, j) * (dpm(i, j) - dot) * scale;
          for (Eigen::Index j = i + 1; j < Tc; ++j) dscores(i, j) = T(0);
        }
        dq.noalias() += dscores * k;
        dk.noalias() += dscores.transpose() * q;
      }
    }
    gmat(grad, s.qkv_w, C, 3 * C).noalias() += L.ln1_out.transpose() * dqkv;
    if (s.qkv_b != kAbsent) grow(grad, s.qkv_b, 3 * C) += dqkv.colwise().sum();
    dln.noalias() = dqkv * cmat(P, s.qkv_w, C, 3 * C).transpose();
    dx += layer_norm_backward<T>(dln, L.ln1_xhat, L.ln1_rstd, P, s.ln1_w, s.ln1_b, grad);
  }

  auto dwte = gmat(grad, layout_.wte, V, C);
  auto dwpe = gmat(grad, layout_.wpe, Tc, C);
  for (Eigen::Index n = 0; n < N; ++n) {
    dwte.row(tokens[static_cast<std::size_t>(n)]) += dx.row(n);
    dwpe.row(n % Tc) += dx.row(n);
  }
}

template <typename T>
typename Gpt<T>::Output Gpt<T>::forward(std::span<const TokenId> tokens, std::size_t batch) const {
  check_batch(tokens, batch);
  const auto ctx = static_cast<std::size_t>(config_.context_length);
  constexpr std::size_t kChunk = 256;
  Output out;
  out.logits.resize(static_cast<Eigen::Index>(batch * ctx), config_.vocab_size);
  out.hidden.resize(static_cast<Eigen::Index>(batch * ctx), config_.hidden_size);
  Cache cache;
  for (std::size_t b0 = 0; b0 < batch; b0 += kChunk) {
    std::size_t nb = std::min(kChunk, batch - b0);
    run_forward(tokens.subspan(b0 * ctx, nb * ctx), nb, false, nullptr, cache);
    const auto rows = static_cast<Eigen::Index>(nb * ctx);
    const auto r0 = static_cast<Eigen::Index>(b0 * ctx);
    out.logits.middleRows(r0, rows) = cache.logits;
    out.hidden.middleRows(r0, rows) = cache.hidden;
  }
  return out;
}

namespace {

// Fills dlogits with grad_scale * (softmax - onehot) on counted rows.
template <typename T>
LossSum softmax_cross_entropy(const RowMat<T>& logits, std::span<const TokenId> targets, T grad_scale,
                              RowMat<T>* dlogits) {
  LossSum loss;
  if (dlogits) dlogits->setZero(logits.rows(), logits.cols());
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    TokenId t = targets[static_cast<std::size_t>(r)];
    if (t == kIgnoreTarget) continue;
    if (t < 0 || t >= logits.cols()) throw InvalidTokenError("target id out of range");
    T m = logits.row(r).maxCoeff();
    auto e = (logits.row(r).array() - m).exp();
    T sum = e.sum();
    loss.sum += static_cast<double>(std::log(sum) + m - logits(r, t));
    ++loss.count;
    if (dlogits) {
      dlogits->row(r) = e.matrix() * (grad_scale / sum);
      (*dlogits)(r, t) -= grad_scale;
    }
  }
  return loss;
}

}  // namespace

template <typename T>
LossSum Gpt<T>::forward_backward(std::span<const TokenId> tokens, std::span<const TokenId> targets,
                                 std::size_t batch, bool train, Rng* rng, T grad_scale, std::span<T> grad) const {
  check_batch(tokens, batch);
  if (targets.size() != tokens.size()) throw DimensionError("targets must match tokens in shape");
  Cache cache;
  run_forward(tokens, batch, train, rng, cache);
  Matrix dlogits;
  LossSum loss = softmax_cross_entropy<T>(cache.logits, targets, grad_scale, &dlogits);
  run_backward(tokens, batch, train, cache, dlogits, grad);
  return loss;
}

template <typename T>
LossSum Gpt<T>::evaluate_loss(std::span<const TokenId> tokens, std::span<const TokenId> targets,
                              std::size_t batch) const {
  check_batch(tokens, batch);
  if (targets.size() != tokens.size()) throw DimensionError("targets must match tokens in shape");
  const auto ctx = static_cast<std::size_t>(config_.context_length);
  constexpr std::size_t kChunk = 256;
  LossSum total;
  Cache cache;
  for (std::size_t b0 = 0; b0 < batch; b0 += kChunk) {
    std::size_t nb = std::min(kChunk, batch - b0);
    run_forward(tokens.subspan(b0 * ctx, nb * ctx), nb, false, nullptr, cache);
    auto part = softmax_cross_entropy<T>(cache.logits, targets.subspan(b0 * ctx, nb * ctx), T(0), nullptr);
    total.sum += part.sum;
    total.count += part.count;
  }
  return total;
}

// ---------------------------------------------------------------------------

template <typename T>
std::vector<double> sequence_log_probs(const Gpt<T>& model, const std::vector<std::vector<TokenId>>& prefixes,
                                       const std::vector<std::vector<TokenId>>& continuations) {
  if (prefixes.size() != continuations.size()) throw DimensionError("prefix/continuation count mismatch");
  const auto ctx = static_cast<std::size_t>(model.config().context_length);
  const TokenId pad = Vocabulary::standard().pad_id();
  std::vector<double> out(prefixes.size(), 0.0);
  std::vector<std::size_t> rows;  // sequences that need a forward pass
  for (std::size_t i = 0; i < prefixes.size(); ++i) {
    std::size_t len = prefixes[i].size() + continuations[i].size();
    if (len > ctx) throw LengthOverflowError("<scored sequence>", len, ctx);
    if (!continuations[i].empty()) {
      if (prefixes[i].empty()) throw DimensionError("a continuation needs a non-empty prefix");
      rows.push_back(i);
    }
  }
  constexpr std::size_t kChunk = 512;
  for (std::size_t c0 = 0; c0 < rows.size(); c0 += kChunk) {
    std::size_t nb = std::min(kChunk, rows.size() - c0);
    std::vector<TokenId> tokens(nb * ctx, pad);
    for (std::size_t b = 0; b < nb; ++b) {
      const auto& p = prefixes[rows[c0 + b]];
      const auto& c = continuations[rows[c0 + b]];
      std::copy(p.begin(), p.end(), tokens.begin() + static_cast<std::ptrdiff_t>(b * ctx));
      std::copy(c.begin(), c.end(), tokens.begin() + static_cast<std::ptrdiff_t>(b * ctx + p.size()));
    }
    auto fwd = model.forward(tokens, nb);
    for (std::size_t b = 0; b < nb; ++b) {
      const auto& p = prefixes[rows[c0 + b]];
      const auto& c = continuations[rows[c0 + b]];
      double lp = 0.0;
      for (std::size_t j = 0; j < c.size(); ++j) {
        auto r = static_cast<Eigen::Index>(b * ctx + p.size() - 1 + j);
        auto row = fwd.logits.row(r).template cast<double>();
        double m = row.maxCoeff();
        double lse = m + std::log((row.array() - m).exp().sum());
        lp += row(c[j]) - lse;
      }
      out[rows[c0 + b]] = lp;
    }
  }
  return out;
}

template <typename T>
double sequence_log_prob(const Gpt<T>& model, std::span<const TokenId> prefix, std::span<const TokenId> continuation) {
  std::vector<std::vector<TokenId>> p{std::vector<TokenId>(prefix.begin(), prefix.end())};
  std::vector<std::vector<TokenId>> c{std::vector<TokenId>(continuation.begin(), continuation.end())};
  return sequence_log_probs(model, p, c)[0];
}

template <typename T>
std::vector<std::vector<TokenId>> greedy_generate_batch(const Gpt<T>& model,
                                                        const std::vector<std::vector<TokenId>>& prefixes,
                                                        TokenId pad_id) {
  const auto ctx = static_cast<std::size_t>(model.config().context_length);
  std::vector<std::vector<TokenId>> seqs = prefixes;
  std::vector<std::vector<TokenId>> generated(prefixes.size());
  std::vector<std::size_t> active;
  for (std::size_t i = 0; i < seqs.size(); ++i) {
    if (seqs[i].size() > ctx) throw LengthOverflowError("<generation prefix>", seqs[i].size(), ctx);
    if (seqs[i].empty()) throw DimensionError("greedy_generate: empty prefix");
    if (seqs[i].size() < ctx) active.push_back(i);
  }
  while (!active.empty()) {
    std::vector<TokenId> tokens(active.size() * ctx, pad_id);
    for (std::size_t b = 0; b < active.size(); ++b) {
      const auto& s = seqs[active[b]];
      std::copy(s.begin(), s.end(), tokens.begin() + static_cast<std::ptrdiff_t>(b * ctx));
    }
    auto fwd = model.forward(tokens, active.size());
    std::vector<std::size_t> still;
    for (std::size_t b = 0; b < active.size(); ++b) {
      auto& s = seqs[active[b]];
      Eigen::Index best = 0;
      fwd.logits.row(static_cast<Eigen::Index>(b * ctx + s.size() - 1)).maxCoeff(&best);
      auto tok = static_cast<TokenId>(best);
      if (tok == pad_id) continue;
      s.push_back(tok);
      generated[active[b]].push_back(tok);
      if (s.size() < ctx) still.push_back(active[b]);
    }
    active = std::move(still);
  }
  return generated;
}

template <typename T>
std::vector<TokenId> greedy_generate(const Gpt<T>& model, std::span<const TokenId> prefix, TokenId pad_id) {
  return greedy_generate_batch(model, {std::vector<TokenId>(prefix.begin(), prefix.end())}, pad_id)[0];
}

template class Gpt<float>;
template class Gpt<double>;

#define EVCOG_INSTANTIATE(T)                                                                                   \
  template double sequence_log_prob<T>(const Gpt<T>&, std::span<const TokenId>, std::span<const TokenId>);     \
  template std::vector<double> sequence_log_probs<T>(const Gpt<T>&, const std::vector<std::vector<TokenId>>&, \
                                                     const std::vector<std::vector<TokenId>>&);               \
  template std::vector<TokenId> greedy_generate<T>(const Gpt<T>&, std::span<const TokenId>, TokenId);           \
  template std::vector<std::vector<TokenId>> greedy_generate_batch<T>(                                          \
      const Gpt<T>&, const std::vector<std::vector<TokenId>>&, TokenId);

EVCOG_INSTANTIATE(float)
EVCOG_INSTANTIATE(double)

#undef EVCOG_INSTANTIATE

}  // namespace evcog
