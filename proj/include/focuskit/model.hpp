#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "focuskit/error.hpp"
#include "focuskit/heatmap.hpp"
#include "focuskit/image.hpp"
#include "focuskit/rng.hpp"
#include "focuskit/textmetrics.hpp"
#include "focuskit/util.hpp"

// Desk-scale triple encoder trained with a dual NT-Xent objective.
//
//   image:  non-overlapping patches -> affine projection -> mean pool
//           -> linear head -> L2 normalise
//   roi:    same architecture applied to image * heatmap (or to the heatmap
//           itself when mask_multiply is off); aliases the image encoder
//           when share_encoders is on
//   text:   FNV-1a hashed tokens -> embedding table -> mean pool
//           -> linear head -> L2 normalise
//
// The hidden width equals embed_dim. Everything is templated on the scalar
// type: training and checkpoints use float, gradient checks use double.

namespace focuskit::model {

struct ModelConfig {
  int embed_dim = 64;
  int patch_size = 8;
  int image_size = 32;
  int vocab_buckets = 4096;
  double temperature = 0.5;
  bool use_roi = true;
  bool use_roi_text_loss = true;
  bool share_encoders = true;
  bool mask_multiply = true;
  double lr = 0.001;
  double momentum = 0.9;
  int epochs = 64;
  int batch_size = 32;
  std::uint64_t seed = 0;

  /// The ROI branch only contributes when both its input and its loss are on.
  bool roi_active() const { return use_roi && use_roi_text_loss; }
  int patches_per_side() const { return image_size / patch_size; }
  int patch_dim() const { return patch_size * patch_size * 3; }

  bool operator==(const ModelConfig&) const = default;
};

inline void validate(const ModelConfig& c) {
  if (c.embed_dim <= 0) throw ValidationError("embed_dim must be positive");
  if (c.patch_size <= 0 || c.image_size <= 0 || c.image_size % c.patch_size != 0) {
    throw ValidationError(fmt::format("image_size {} must be a positive multiple of patch_size {}", c.image_size,
                                      c.patch_size));
  }
  if (c.vocab_buckets <= 0) throw ValidationError("vocab_buckets must be positive");
  if (!(c.temperature > 0)) throw ValidationError("temperature must be positive");
  if (c.batch_size < 1) throw ValidationError("batch_size must be >= 1");
  if (c.epochs < 0) throw ValidationError("epochs must be >= 0");
  if (!(c.lr >= 0) || !(c.momentum >= 0)) throw ValidationError("lr and momentum must be non-negative");
}

inline ordered_json to_json(const ModelConfig& c) {
  ordered_json j;
  j["embed_dim"] = c.embed_dim;
  j["patch_size"] = c.patch_size;
  j["image_size"] = c.image_size;
  j["vocab_buckets"] = c.vocab_buckets;
  j["temperature"] = c.temperature;
  j["use_roi"] = c.use_roi;
  j["use_roi_text_loss"] = c.use_roi_text_loss;
  j["share_encoders"] = c.share_encoders;
  j["mask_multiply"] = c.mask_multiply;
  j["lr"] = c.lr;
  j["momentum"] = c.momentum;
  j["epochs"] = c.epochs;
  j["batch_size"] = c.batch_size;
  j["seed"] = c.seed;
  return j;
}

/// Missing keys keep their defaults; unknown keys are rejected.
inline ModelConfig config_from_json(const json& j, ModelConfig c = {}) {
  if (!j.is_object()) throw ValidationError("model config must be a JSON object");
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "embed_dim") c.embed_dim = value.get<int>();
      else if (key == "patch_size") c.patch_size = value.get<int>();
      else if (key == "image_size") c.image_size = value.get<int>();
      else if (key == "vocab_buckets") c.vocab_buckets = value.get<int>();
      else if (key == "temperature") c.temperature = value.get<double>();
      else if (key == "use_roi") c.use_roi = value.get<bool>();
      else if (key == "use_roi_text_loss") c.use_roi_text_loss = value.get<bool>();
      else if (key == "share_encoders") c.share_encoders = value.get<bool>();
      else if (key == "mask_multiply") c.mask_multiply = value.get<bool>();
      else if (key == "lr") c.lr = value.get<double>();
      else if (key == "momentum") c.momentum = value.get<double>();
      else if (key == "epochs") c.epochs = value.get<int>();
      else if (key == "batch_size") c.batch_size = value.get<int>();
      else if (key == "seed") c.seed = value.get<std::uint64_t>();
      else throw ValidationError(fmt::format("unknown model config key '{}'", key));
    }
  } catch (const json::type_error& e) {
    throw ValidationError(fmt::format("model config: {}", e.what()));
  }
  validate(c);
  return c;
}

template <class T>
struct Matrix {
  int rows = 0;
  int cols = 0;
  std::vector<T> data;

  Matrix() = default;
  Matrix(int r, int c) : rows(r), cols(c), data(static_cast<std::size_t>(r) * c, T(0)) {}

  T& operator()(int r, int c) { return data[static_cast<std::size_t>(r) * cols + c]; }
  T operator()(int r, int c) const { return data[static_cast<std::size_t>(r) * cols + c]; }
  std::span<T> row(int r) { return {data.data() + static_cast<std::size_t>(r) * cols, static_cast<std::size_t>(cols)}; }
  std::span<const T> row(int r) const {
    return {data.data() + static_cast<std::size_t>(r) * cols, static_cast<std::size_t>(cols)};
  }
  bool operator==(const Matrix&) const = default;
};

template <class T>
struct ImageEncoder {
  Matrix<T> patch_weight;  // hidden x patch_dim
  Matrix<T> patch_bias;    // hidden x 1
  Matrix<T> head;          // embed x hidden
  bool operator==(const ImageEncoder&) const = default;
};

template <class T>
struct TextEncoder {
  Matrix<T> token_table;  // vocab_buckets x hidden
  Matrix<T> head;         // embed x hidden
  bool operator==(const TextEncoder&) const = default;
};

/// Encoder weights. With share_encoders the ROI encoder has no storage of
/// its own and roi() returns the image encoder, so a write through either
/// is a write to both. The same type doubles as a gradient or velocity set.
template <class T>
struct ModelParams {
  ModelConfig config;
  ImageEncoder<T> visual;
  std::optional<ImageEncoder<T>> roi_weights;
  TextEncoder<T> text;

  ImageEncoder<T>& roi() { return roi_weights ? *roi_weights : visual; }
  const ImageEncoder<T>& roi() const { return roi_weights ? *roi_weights : visual; }

  bool operator==(const ModelParams&) const = default;
};

/// Visits every stored tensor in canonical order with its checkpoint name.
template <class P, class F>
void for_each_tensor(P& params, F&& f) {
  f("visual.patch_weight", params.visual.patch_weight);
  f("visual.patch_bias", params.visual.patch_bias);
  f("visual.head", params.visual.head);
  if (params.roi_weights) {
    f("roi.patch_weight", params.roi_weights->patch_weight);
    f("roi.patch_bias", params.roi_weights->patch_bias);
    f("roi.head", params.roi_weights->head);
  }
  f("text.token_table", params.text.token_table);
  f("text.head", params.text.head);
}

/// Zero tensors shaped for `config` (the layout of a fresh gradient set).
template <class T>
ModelParams<T> zeros_like(const ModelConfig& config) {
  validate(config);
  const int e = config.embed_dim, hidden = config.embed_dim;
  auto image = [&] { return ImageEncoder<T>{Matrix<T>(hidden, config.patch_dim()), Matrix<T>(hidden, 1), Matrix<T>(e, hidden)}; };
  ModelParams<T> p;
  p.config = config;
  p.visual = image();
  if (!config.share_encoders) p.roi_weights = image();
  p.text = {Matrix<T>(config.vocab_buckets, hidden), Matrix<T>(e, hidden)};
  return p;
}

/// Uniform in +-1/sqrt(fan_in) from SplitMix64(config.seed), tensors drawn
/// in for_each_tensor order. The token table uses the hidden width as its
/// fan-in.
template <class T>
ModelParams<T> init_params(const ModelConfig& config) {
  auto p = zeros_like<T>(config);
  SplitMix64 rng(config.seed);
  for_each_tensor(p, [&](std::string_view name, Matrix<T>& m) {
    int fan_in = m.cols;
    if (name.ends_with("patch_bias")) fan_in = config.patch_dim();
    if (name == "text.token_table") fan_in = config.embed_dim;
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (auto& v : m.data) v = static_cast<T>(rng.uniform(-bound, bound));
  });
  return p;
}

template <class To, class From>
ModelParams<To> cast_params(const ModelParams<From>& src) {
  auto dst = zeros_like<To>(src.config);
  std::vector<const Matrix<From>*> from;
  for_each_tensor(src, [&](std::string_view, const Matrix<From>& m) { from.push_back(&m); });
  std::size_t i = 0;
  for_each_tensor(dst, [&](std::string_view, Matrix<To>& m) {
    const auto& s = *from[i++];
    for (std::size_t k = 0; k < m.data.size(); ++k) m.data[k] = static_cast<To>(s.data[k]);
  });
  return dst;
}

/// Unit-norm embedding rows, N x dim.
template <class T>
struct EmbeddingBatch {
  int dim = 0;
  std::vector<T> values;

  int size() const { return dim == 0 ? 0 : static_cast<int>(values.size() / static_cast<std::size_t>(dim)); }
  std::span<const T> row(int i) const {
    return {values.data() + static_cast<std::size_t>(i) * dim, static_cast<std::size_t>(dim)};
  }
  void push_back(std::span<const T> e) {
    if (dim == 0) dim = static_cast<int>(e.size());
    if (static_cast<int>(e.size()) != dim) throw ValidationError("embedding width mismatch within batch");
    values.insert(values.end(), e.begin(), e.end());
  }
};

namespace detail {

template <class T>
T dot(std::span<const T> a, std::span<const T> b) {
  T s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

// Forward cache of one image-encoder pass.
template <class T>
struct ImagePass {
  std::vector<T> mean_patch;
  std::vector<T> hidden;
  T norm = 0;
  std::vector<T> embedding;
};

template <class T>
struct TextPass {
  std::vector<std::uint32_t> tokens;
  std::vector<T> hidden;
  T norm = 0;
  std::vector<T> embedding;
};

template <class T>
std::vector<T> normalise(const std::vector<T>& y, T& norm) {
  norm = std::sqrt(dot<T>(y, y));
  if (!(norm > 0) || !std::isfinite(static_cast<double>(norm))) {
    throw ValidationError("encoder output has zero or non-finite norm");
  }
  std::vector<T> e(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) e[i] = y[i] / norm;
  return e;
}

template <class T>
std::vector<T> matvec(const Matrix<T>& m, std::span<const T> x) {
  std::vector<T> y(static_cast<std::size_t>(m.rows), T(0));
  for (int r = 0; r < m.rows; ++r) y[static_cast<std::size_t>(r)] = dot<T>(m.row(r), x);
  return y;
}

// Patch-wise projection followed by mean pooling equals projecting the
// mean patch, since the projection is affine; the pass computes the latter.
template <class T>
ImagePass<T> image_forward(const ImageEncoder<T>& enc, const ModelConfig& cfg, const ImageGrid& img) {
  if (img.width != cfg.image_size || img.height != cfg.image_size || img.channels != 3) {
    throw ValidationError(fmt::format("encoder expects {0}x{0}x3 images, got {1}", cfg.image_size, img.shape()));
  }
  const int p = cfg.patch_size, per_side = cfg.patches_per_side();
  ImagePass<T> pass;
  pass.mean_patch.assign(static_cast<std::size_t>(cfg.patch_dim()), T(0));
  for (int py = 0; py < per_side; ++py) {
    for (int px = 0; px < per_side; ++px) {
      for (int v = 0; v < p; ++v) {
        for (int u = 0; u < p; ++u) {
          for (int c = 0; c < 3; ++c) {
            pass.mean_patch[static_cast<std::size_t>((v * p + u) * 3 + c)] +=
                static_cast<T>(img.at(px * p + u, py * p + v, c));
          }
        }
      }
    }
  }
  const T inv = T(1) / static_cast<T>(per_side * per_side);
  for (auto& m : pass.mean_patch) m *= inv;
  pass.hidden = matvec<T>(enc.patch_weight, pass.mean_patch);
  for (std::size_t i = 0; i < pass.hidden.size(); ++i) pass.hidden[i] += enc.patch_bias.data[i];
  pass.embedding = normalise(matvec<T>(enc.head, pass.hidden), pass.norm);
  return pass;
}

// Gradient of a unit-normalised output e = y / |y| given dL/de.
template <class T>
std::vector<T> normalise_backward(std::span<const T> e, T norm, std::span<const T> de) {
  const T proj = dot<T>(e, de);
  std::vector<T> dy(e.size());
  for (std::size_t i = 0; i < e.size(); ++i) dy[i] = (de[i] - e[i] * proj) / norm;
  return dy;
}

template <class T>
void image_backward(const ImageEncoder<T>& enc, const ImagePass<T>& pass, std::span<const T> de,
                    ImageEncoder<T>& grad) {
  const auto dy = normalise_backward<T>(pass.embedding, pass.norm, de);
  const int hidden = enc.head.cols;
  std::vector<T> dh(static_cast<std::size_t>(hidden), T(0));
  for (int r = 0; r < enc.head.rows; ++r) {
    const T g = dy[static_cast<std::size_t>(r)];
    for (int c = 0; c < hidden; ++c) {
      grad.head(r, c) += g * pass.hidden[static_cast<std::size_t>(c)];
      dh[static_cast<std::size_t>(c)] += g * enc.head(r, c);
    }
  }
  for (int r = 0; r < hidden; ++r) {
    const T g = dh[static_cast<std::size_t>(r)];
    grad.patch_bias.data[static_cast<std::size_t>(r)] += g;
    auto row = grad.patch_weight.row(r);
    for (std::size_t c = 0; c < row.size(); ++c) row[c] += g * pass.mean_patch[c];
  }
}

template <class T>
TextPass<T> text_forward(const TextEncoder<T>& enc, std::vector<std::uint32_t> tokens) {
  if (tokens.empty()) throw ValidationError("text encoder needs at least one token");
  TextPass<T> pass;
  pass.tokens = std::move(tokens);
  std::sort(pass.tokens.begin(), pass.tokens.end());
  pass.hidden.assign(static_cast<std::size_t>(enc.token_table.cols), T(0));
  for (auto t : pass.tokens) {
    const auto row = enc.token_table.row(static_cast<int>(t));
    for (std::size_t c = 0; c < row.size(); ++c) pass.hidden[c] += row[c];
  }
  const T inv = T(1) / static_cast<T>(pass.tokens.size());
  for (auto& h : pass.hidden) h *= inv;
  pass.embedding = normalise(matvec<T>(enc.head, pass.hidden), pass.norm);
  return pass;
}

template <class T>
void text_backward(const TextEncoder<T>& enc, const TextPass<T>& pass, std::span<const T> de, TextEncoder<T>& grad) {
  const auto dy = normalise_backward<T>(pass.embedding, pass.norm, de);
  const int hidden = enc.head.cols;
  std::vector<T> dh(static_cast<std::size_t>(hidden), T(0));
  for (int r = 0; r < enc.head.rows; ++r) {
    const T g = dy[static_cast<std::size_t>(r)];
    for (int c = 0; c < hidden; ++c) {
      grad.head(r, c) += g * pass.hidden[static_cast<std::size_t>(c)];
      dh[static_cast<std::size_t>(c)] += g * enc.head(r, c);
    }
  }
  const T inv = T(1) / static_cast<T>(pass.tokens.size());
  for (auto t : pass.tokens) {
    auto row = grad.token_table.row(static_cast<int>(t));
    for (std::size_t c = 0; c < row.size(); ++c) row[c] += dh[c] * inv;
  }
}

inline ImageGrid heatmap_as_image(const Heatmap& hm) {
  ImageGrid img(hm.width, hm.height, 3);
  for (std::size_t i = 0; i < hm.values.size(); ++i) {
    for (int c = 0; c < 3; ++c) img.values[i * 3 + c] = hm.values[i];
  }
  return img;
}

template <class T>
void check_unit_rows(const EmbeddingBatch<T>& b, std::string_view what) {
  const double tol = std::is_same_v<T, float> ? 1e-4 : 1e-6;
  for (int i = 0; i < b.size(); ++i) {
    const double n = std::sqrt(static_cast<double>(dot<T>(b.row(i), b.row(i))));
    if (!std::isfinite(n)) throw ValidationError(fmt::format("{} row {} is not finite", what, i));
    if (std::abs(n - 1.0) > tol) throw ValidationError(fmt::format("{} row {} has norm {}, expected 1", what, i, n));
  }
}

}  // namespace detail

/// Bucket ids of a text: tokenized as for the text metrics, each token hashed
/// with 64-bit FNV-1a modulo vocab_buckets.
inline std::vector<std::uint32_t> text_tokens(std::string_view text, int vocab_buckets) {
  const auto tok = textmetrics::tokenize(text);
  std::vector<std::uint32_t> ids;
  ids.reserve(tok.tokens.size());
  for (const auto& t : tok.tokens) ids.push_back(static_cast<std::uint32_t>(fnv1a64(t) % static_cast<std::uint64_t>(vocab_buckets)));
  return ids;
}

template <class T>
std::vector<T> encode_image(const ModelParams<T>& params, const ImageGrid& img) {
  return detail::image_forward(params.visual, params.config, img).embedding;
}

/// ROI embedding: the ROI encoder applied to image * heatmap, or to the
/// heatmap replicated across channels when mask_multiply is off.
template <class T>
std::vector<T> encode_roi(const ModelParams<T>& params, const ImageGrid& img, const Heatmap& hm) {
  const ImageGrid input = params.config.mask_multiply ? apply_heatmap(img, hm) : [&] {
    if (img.width != hm.width || img.height != hm.height) {
      throw ValidationError(fmt::format("image {} and heatmap {}x{} differ in size", img.shape(), hm.width, hm.height));
    }
    return detail::heatmap_as_image(hm);
  }();
  return detail::image_forward(params.roi(), params.config, input).embedding;
}

template <class T>
std::vector<T> encode_text(const ModelParams<T>& params, std::string_view text) {
  auto ids = text_tokens(text, params.config.vocab_buckets);
  if (ids.empty()) throw ValidationError("cannot encode text without tokens");
  return detail::text_forward(params.text, std::move(ids)).embedding;
}

template <class T>
struct LossGrad {
  T loss = 0;
  std::vector<T> d_first;   // dL/d rows of the first batch
  std::vector<T> d_second;  // dL/d rows of the second batch
};

/// NT-Xent over the pooled 2N rows z = first ++ second. Every row is an
/// anchor whose positive is its cross-modal partner and whose negatives are
/// the other 2N-2 rows; the loss is the mean over all 2N anchors. Rows must
/// be unit norm, so similarities are plain dot products.
template <class T>
LossGrad<T> ntxent_with_grad(const EmbeddingBatch<T>& first, const EmbeddingBatch<T>& second, double temperature,
                             bool want_grad = true) {
  const int n = first.size();
  if (n != second.size() || first.dim != second.dim) {
    throw ValidationError(fmt::format("NT-Xent batches differ: {}x{} vs {}x{}", n, first.dim, second.size(), second.dim));
  }
  if (n == 0) throw ValidationError("NT-Xent needs a non-empty batch");
  if (!(temperature > 0)) throw ValidationError("temperature must be positive");
  detail::check_unit_rows(first, "first batch");
  detail::check_unit_rows(second, "second batch");
  const int m = 2 * n, dim = first.dim;
  auto row = [&](int i) { return i < n ? first.row(i) : second.row(i - n); };
  const T inv_tau = static_cast<T>(1.0 / temperature);

  Matrix<T> s(m, m);
  for (int i = 0; i < m; ++i) {
    for (int k = i; k < m; ++k) {
      const T v = detail::dot<T>(row(i), row(k)) * inv_tau;
      if (!std::isfinite(static_cast<double>(v))) throw ValidationError("non-finite similarity in NT-Xent");
      s(i, k) = v;
      s(k, i) = v;
    }
  }
  LossGrad<T> out;
  Matrix<T> g(m, m);  // dL/ds_ik (scaled similarities)
  const T scale = T(1) / static_cast<T>(m);
  T total = 0;
  for (int i = 0; i < m; ++i) {
    const int pos = i < n ? i + n : i - n;
    T mx = -std::numeric_limits<T>::infinity();
    for (int k = 0; k < m; ++k) {
      if (k != i) mx = std::max(mx, s(i, k));
    }
    T denom = 0;
    for (int k = 0; k < m; ++k) {
      if (k != i) denom += std::exp(s(i, k) - mx);
    }
    total += mx + std::log(denom) - s(i, pos);
    if (want_grad) {
      for (int k = 0; k < m; ++k) {
        if (k == i) continue;
        g(i, k) = scale * (std::exp(s(i, k) - mx) / denom - (k == pos ? T(1) : T(0)));
      }
    }
  }
  out.loss = total * scale;
  if (!std::isfinite(static_cast<double>(out.loss))) throw ValidationError("non-finite NT-Xent loss");
  if (!want_grad) return out;

  out.d_first.assign(static_cast<std::size_t>(n) * dim, T(0));
  out.d_second.assign(static_cast<std::size_t>(n) * dim, T(0));
  for (int i = 0; i < m; ++i) {
    T* d = i < n ? &out.d_first[static_cast<std::size_t>(i) * dim] : &out.d_second[static_cast<std::size_t>(i - n) * dim];
    for (int k = 0; k < m; ++k) {
      if (k == i) continue;
      const T coef = (g(i, k) + g(k, i)) * inv_tau;
      const auto zk = row(k);
      for (int c = 0; c < dim; ++c) d[c] += coef * zk[static_cast<std::size_t>(c)];
    }
  }
  return out;
}

template <class T>
T ntxent(const EmbeddingBatch<T>& v, const EmbeddingBatch<T>& t, double temperature) {
  return ntxent_with_grad(v, t, temperature, false).loss;
}

struct LossFlags {
  bool use_roi_text_loss = true;
};

/// Image-text NT-Xent plus, when enabled, ROI-text NT-Xent.
template <class T>
T dual_loss(const EmbeddingBatch<T>& e_img, const EmbeddingBatch<T>& e_roi, const EmbeddingBatch<T>& e_txt,
            double temperature, LossFlags flags) {
  T loss = ntxent(e_img, e_txt, temperature);
  if (flags.use_roi_text_loss) loss += ntxent(e_roi, e_txt, temperature);
  return loss;
}

/// One training triple.
struct Example {
  ImageGrid image;
  Heatmap heatmap;
  std::string text;
};

template <class T>
struct BatchGradients {
  T loss = 0;
  ModelParams<T> grads;
};

namespace detail {

template <class T>
struct BatchForward {
  std::vector<ImagePass<T>> image, roi;
  std::vector<TextPass<T>> text;
};

template <class T>
void forward_range(const ModelParams<T>& params, std::span<const Example* const> batch, std::size_t lo,
                   std::size_t hi, BatchForward<T>& fw) {
  const auto& cfg = params.config;
  for (std::size_t i = lo; i < hi; ++i) {
    const Example& ex = *batch[i];
    fw.image[i] = image_forward(params.visual, cfg, ex.image);
    if (cfg.roi_active()) {
      if (ex.image.width != ex.heatmap.width || ex.image.height != ex.heatmap.height) {
        throw ValidationError(fmt::format("example {}: image and heatmap sizes differ", i));
      }
      const ImageGrid masked = cfg.mask_multiply ? apply_heatmap(ex.image, ex.heatmap) : heatmap_as_image(ex.heatmap);
      fw.roi[i] = image_forward(params.roi(), cfg, masked);
    }
    auto ids = text_tokens(ex.text, cfg.vocab_buckets);
    if (ids.empty()) throw ValidationError(fmt::format("example {}: caption has no tokens", i));
    fw.text[i] = text_forward(params.text, std::move(ids));
  }
}

template <class T>
void backward_range(const ModelParams<T>& params, const BatchForward<T>& fw, const LossGrad<T>& img_txt,
                    const LossGrad<T>* roi_txt, std::size_t lo, std::size_t hi, ModelParams<T>& grads) {
  const auto dim = static_cast<std::size_t>(params.config.embed_dim);
  for (std::size_t i = lo; i < hi; ++i) {
    std::span<const T> d_img(img_txt.d_first.data() + i * dim, dim);
    image_backward(params.visual, fw.image[i], d_img, grads.visual);
    std::vector<T> d_txt(img_txt.d_second.begin() + static_cast<std::ptrdiff_t>(i * dim),
                         img_txt.d_second.begin() + static_cast<std::ptrdiff_t>((i + 1) * dim));
    if (roi_txt) {
      std::span<const T> d_roi(roi_txt->d_first.data() + i * dim, dim);
      image_backward(params.roi(), fw.roi[i], d_roi, grads.roi());
      for (std::size_t c = 0; c < dim; ++c) d_txt[c] += roi_txt->d_second[i * dim + c];
    }
    text_backward(params.text, fw.text[i], std::span<const T>(d_txt), grads.text);
  }
}

template <class T>
void add_into(ModelParams<T>& acc, const ModelParams<T>& g) {
  std::vector<const Matrix<T>*> src;
  for_each_tensor(g, [&](std::string_view, const Matrix<T>& m) { src.push_back(&m); });
  std::size_t k = 0;
  for_each_tensor(acc, [&](std::string_view, Matrix<T>& m) {
    const auto& s = *src[k++];
    for (std::size_t i = 0; i < m.data.size(); ++i) m.data[i] += s.data[i];
  });
}

template <class F>
void run_chunks(std::size_t n, int workers, F&& work) {
  workers = std::max(1, std::min<int>(workers, static_cast<int>(n)));
  if (workers == 1) {
    work(0, std::size_t{0}, n);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(workers));
  for (int w = 0; w < workers; ++w) {
    const std::size_t lo = n * static_cast<std::size_t>(w) / static_cast<std::size_t>(workers);
    const std::size_t hi = n * static_cast<std::size_t>(w + 1) / static_cast<std::size_t>(workers);
    pool.emplace_back([&, w, lo, hi] {
      try {
        work(w, lo, hi);
      } catch (...) {
        errors[static_cast<std::size_t>(w)] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace detail

/// Loss and exact gradients of the dual objective for one batch. With
/// `workers` > 1 the batch is split into contiguous chunks whose gradients
/// are summed in chunk order, so results are reproducible for a fixed
/// worker count.
template <class T>
BatchGradients<T> loss_and_gradients(const ModelParams<T>& params, std::span<const Example* const> batch,
                                     int workers = 1, std::size_t batch_index = 0) {
  if (batch.empty()) throw ValidationError("gradient batch is empty");
  const auto& cfg = params.config;
  const std::size_t n = batch.size();
  workers = std::max(1, std::min<int>(workers, static_cast<int>(n)));

  detail::BatchForward<T> fw;
  fw.image.resize(n);
  fw.text.resize(n);
  if (cfg.roi_active()) fw.roi.resize(n);
  try {
    detail::run_chunks(n, workers, [&](int, std::size_t lo, std::size_t hi) { detail::forward_range(params, batch, lo, hi, fw); });
  } catch (const ValidationError& e) {
    throw ValidationError(fmt::format("batch {}: {}", batch_index, e.what()));
  }

  EmbeddingBatch<T> e_img, e_roi, e_txt;
  for (std::size_t i = 0; i < n; ++i) {
    e_img.push_back(fw.image[i].embedding);
    e_txt.push_back(fw.text[i].embedding);
    if (cfg.roi_active()) e_roi.push_back(fw.roi[i].embedding);
  }
  BatchGradients<T> out;
  LossGrad<T> img_txt, roi_txt;
  try {
    img_txt = ntxent_with_grad(e_img, e_txt, cfg.temperature);
    out.loss = img_txt.loss;
    if (cfg.roi_active()) {
      roi_txt = ntxent_with_grad(e_roi, e_txt, cfg.temperature);
      out.loss += roi_txt.loss;
    }
  } catch (const ValidationError& e) {
    throw ValidationError(fmt::format("batch {}: {}", batch_index, e.what()));
  }
  if (!std::isfinite(static_cast<double>(out.loss))) {
    throw ValidationError(fmt::format("batch {}: non-finite loss", batch_index));
  }

  std::vector<ModelParams<T>> partial(static_cast<std::size_t>(workers), zeros_like<T>(cfg));
  detail::run_chunks(n, workers, [&](int w, std::size_t lo, std::size_t hi) {
    detail::backward_range(params, fw, img_txt, cfg.roi_active() ? &roi_txt : nullptr, lo, hi,
                           partial[static_cast<std::size_t>(w)]);
  });
  out.grads = std::move(partial[0]);
  for (std::size_t w = 1; w < partial.size(); ++w) detail::add_into(out.grads, partial[w]);
  return out;
}

/// Loss only; used by finite-difference checks and evaluation.
template <class T>
T batch_loss(const ModelParams<T>& params, std::span<const Example* const> batch) {
  const auto& cfg = params.config;
  EmbeddingBatch<T> e_img, e_roi, e_txt;
  for (const Example* ex : batch) {
    e_img.push_back(encode_image(params, ex->image));
    e_txt.push_back(encode_text(params, ex->text));
    if (cfg.roi_active()) e_roi.push_back(encode_roi(params, ex->image, ex->heatmap));
  }
  return dual_loss(e_img, e_roi, e_txt, cfg.temperature, {cfg.roi_active()});
}

/// Classic momentum: v <- momentum * v + g; p <- p - lr * v.
template <class T>
void sgd_step(ModelParams<T>& params, const ModelParams<T>& grads, double lr, double momentum,
              ModelParams<T>& velocity) {
  std::vector<Matrix<T>*> p, g, v;
  for_each_tensor(params, [&](std::string_view, Matrix<T>& m) { p.push_back(&m); });
  for_each_tensor(const_cast<ModelParams<T>&>(grads), [&](std::string_view, Matrix<T>& m) { g.push_back(&m); });
  for_each_tensor(velocity, [&](std::string_view, Matrix<T>& m) { v.push_back(&m); });
  if (p.size() != g.size() || p.size() != v.size()) throw ValidationError("parameter, gradient and velocity sets differ in layout");
  for (std::size_t t = 0; t < p.size(); ++t) {
    if (p[t]->rows != g[t]->rows || p[t]->cols != g[t]->cols || p[t]->rows != v[t]->rows || p[t]->cols != v[t]->cols) {
      throw ValidationError(fmt::format("shape mismatch in tensor {}: {}x{} vs {}x{}", t, p[t]->rows, p[t]->cols,
                                        g[t]->rows, g[t]->cols));
    }
  }
  const T lr_t = static_cast<T>(lr), mom_t = static_cast<T>(momentum);
  for (std::size_t t = 0; t < p.size(); ++t) {
    auto& pd = p[t]->data;
    auto& gd = g[t]->data;
    auto& vd = v[t]->data;
    for (std::size_t i = 0; i < pd.size(); ++i) {
      vd[i] = mom_t * vd[i] + gd[i];
      pd[i] -= lr_t * vd[i];
    }
  }
}

struct TrainOptions {
  int threads = 1;
  std::function<void(int epoch, double mean_loss)> on_epoch;
};

struct TrainResult {
  ModelParams<float> params;
  std::vector<double> epoch_losses;  // mean batch loss per epoch
};

/// Seeded init, seeded per-epoch shuffle, minibatch SGD with momentum. The
/// final partial batch of an epoch is kept.
inline TrainResult train(const ModelConfig& cfg, std::span<const Example> data, const TrainOptions& opts = {}) {
  validate(cfg);
  if (data.empty()) throw ValidationError("training needs at least one example");
  TrainResult result;
  result.params = init_params<float>(cfg);
  auto velocity = zeros_like<float>(cfg);
  SplitMix64 shuffler(cfg.seed ^ 0x5eed5eed5eed5eedULL);
  const std::size_t bs = static_cast<std::size_t>(cfg.batch_size);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto order = shuffler.permutation(data.size());
    std::vector<double> losses;
    for (std::size_t start = 0, b = 0; start < order.size(); start += bs, ++b) {
      std::vector<const Example*> batch;
      for (std::size_t k = start; k < std::min(order.size(), start + bs); ++k) batch.push_back(&data[order[k]]);
      BatchGradients<float> bg;
      try {
        bg = loss_and_gradients<float>(result.params, batch, opts.threads, b);
      } catch (const ValidationError& e) {
        throw ValidationError(fmt::format("training aborted at epoch {}: {}", epoch, e.what()));
      }
      losses.push_back(bg.loss);
      sgd_step(result.params, bg.grads, cfg.lr, cfg.momentum, velocity);
    }
    double mean = 0;
    for (double l : losses) mean += l;
    mean /= static_cast<double>(losses.size());
    result.epoch_losses.push_back(mean);
    if (opts.on_epoch) opts.on_epoch(epoch, mean);
  }
  return result;
}

// Checkpoint layout (all integers u32 little-endian, floats f32 LE):
//   "FCK1" | header_len | header JSON {"format":"focuskit-checkpoint",
//   "version":1,"config":{...}} | tensor_count | per tensor: name_len, name,
//   rank, dims[rank], prod(dims) floats (row-major).
inline std::string encode_checkpoint(const ModelParams<float>& params) {
  ordered_json header;
  header["format"] = "focuskit-checkpoint";
  header["version"] = 1;
  header["config"] = to_json(params.config);
  const std::string h = header.dump();
  std::string out = "FCK1";
  put_u32(out, static_cast<std::uint32_t>(h.size()));
  out += h;
  std::uint32_t count = 0;
  for_each_tensor(params, [&](std::string_view, const Matrix<float>&) { ++count; });
  put_u32(out, count);
  for_each_tensor(params, [&](std::string_view name, const Matrix<float>& m) {
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    put_u32(out, 2);
    put_u32(out, static_cast<std::uint32_t>(m.rows));
    put_u32(out, static_cast<std::uint32_t>(m.cols));
    for (float v : m.data) put_f32(out, v);
  });
  return out;
}

inline ModelParams<float> decode_checkpoint(std::string_view bytes, std::string origin) {
  ByteReader r(bytes, std::move(origin));
  if (r.remaining() < 4 || r.take(4) != "FCK1") throw FormatError(r.origin() + ": bad magic (expected FCK1)");
  const std::uint32_t hlen = r.u32();
  const json header = parse_json(r.take(hlen), r.origin() + " header");
  if (!header.contains("config")) throw FormatError(r.origin() + ": header lacks config");
  auto params = zeros_like<float>(config_from_json(header["config"]));
  const std::uint32_t count = r.u32();
  std::vector<std::pair<std::string, Matrix<float>*>> expected;
  for_each_tensor(params, [&](std::string_view name, Matrix<float>& m) { expected.emplace_back(std::string(name), &m); });
  if (count != expected.size()) {
    throw FormatError(fmt::format("{}: {} tensors stored, config implies {}", r.origin(), count, expected.size()));
  }
  for (auto& [name, m] : expected) {
    const std::string stored(r.take(r.u32()));
    if (stored != name) throw FormatError(fmt::format("{}: expected tensor '{}', found '{}'", r.origin(), name, stored));
    const std::uint32_t rank = r.u32();
    if (rank != 2) throw FormatError(fmt::format("{}: tensor '{}' has rank {}", r.origin(), name, rank));
    const std::uint32_t rows = r.u32(), cols = r.u32();
    if (rows != static_cast<std::uint32_t>(m->rows) || cols != static_cast<std::uint32_t>(m->cols)) {
      throw FormatError(fmt::format("{}: tensor '{}' is {}x{}, expected {}x{}", r.origin(), name, rows, cols, m->rows, m->cols));
    }
    for (auto& v : m->data) v = r.f32();
  }
  if (r.remaining() != 0) throw FormatError(fmt::format("{}: {} trailing bytes", r.origin(), r.remaining()));
  return params;
}

inline void save_checkpoint(const ModelParams<float>& params, const fs::path& path) {
  write_file_atomic(path, encode_checkpoint(params));
}

inline ModelParams<float> load_checkpoint(const fs::path& path) {
  return decode_checkpoint(read_file(path), path.string());
}

}  // namespace focuskit::model
