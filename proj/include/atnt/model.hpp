// Toy pre-norm decoder-only transformer: deterministic init, forward pass with
// per-layer capture, logit lens, greedy decoding and the ATNT weight file.
#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <numbers>
#include <random>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "atnt/attention.hpp"
#include "atnt/numerics.hpp"
#include "atnt/rope.hpp"

namespace atnt {

using TokenId = std::uint32_t;

/// Bad token ids or prompts.
class InputError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Malformed weight file; `offset` is the byte position where parsing failed.
class FormatError : public std::runtime_error {
 public:
  FormatError(const std::string& what, std::uint64_t offset)
      : std::runtime_error(what + " (at byte " + std::to_string(offset) + ")"), offset_(offset) {}
  std::uint64_t offset() const { return offset_; }

 private:
  std::uint64_t offset_;
};

struct ModelConfig {
  std::size_t n_layers = 4;
  std::size_t n_heads = 4;
  std::size_t d_model = 64;
  std::size_t d_head = 16;
  std::size_t d_ff = 176;
  std::size_t vocab_size = 256;
  std::size_t max_seq_len = 256;
  RopeConfig rope{16, 10000.0, 256};
  std::uint64_t rng_seed = 42;

  void validate() const {
    if (n_layers == 0) throw DimensionError("ModelConfig: n_layers must be >= 1");
    if (n_heads == 0 || d_head == 0) throw DimensionError("ModelConfig: empty heads");
    if (d_model != n_heads * d_head) {
      throw DimensionError("ModelConfig: d_model " + std::to_string(d_model) +
                           " != n_heads * d_head (" + std::to_string(n_heads * d_head) + ")");
    }
    if (d_ff == 0 || vocab_size == 0 || max_seq_len == 0) {
      throw DimensionError("ModelConfig: d_ff, vocab_size and max_seq_len must be positive");
    }
    rope.validate();
    if (rope.head_dim != d_head) {
      throw DimensionError("ModelConfig: rope.head_dim " + std::to_string(rope.head_dim) +
                           " != d_head " + std::to_string(d_head));
    }
    if (rope.max_pos < max_seq_len) {
      throw DimensionError("ModelConfig: rope.max_pos below max_seq_len");
    }
  }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

inline void to_json(nlohmann::json& j, const RopeConfig& r) {
  j = nlohmann::json{{"head_dim", r.head_dim}, {"theta_base", r.theta_base}, {"max_pos", r.max_pos}};
}

inline void from_json(const nlohmann::json& j, RopeConfig& r) {
  r.head_dim = j.at("head_dim").get<std::size_t>();
  r.theta_base = j.value("theta_base", 10000.0);
  r.max_pos = j.at("max_pos").get<std::size_t>();
}

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"n_layers", c.n_layers},   {"n_heads", c.n_heads},
                     {"d_model", c.d_model},     {"d_head", c.d_head},
                     {"d_ff", c.d_ff},           {"vocab_size", c.vocab_size},
                     {"max_seq_len", c.max_seq_len}, {"rope", c.rope},
                     {"rng_seed", c.rng_seed}};
}

// Missing fields fall back to the defaults; the rope block defaults to
// d_head / max_seq_len when absent.
inline void from_json(const nlohmann::json& j, ModelConfig& c) {
  ModelConfig d;
  c.n_layers = j.value("n_layers", d.n_layers);
  c.n_heads = j.value("n_heads", d.n_heads);
  c.d_model = j.value("d_model", d.d_model);
  c.d_head = j.value("d_head", c.d_model / std::max<std::size_t>(c.n_heads, 1));
  c.d_ff = j.value("d_ff", d.d_ff);
  c.vocab_size = j.value("vocab_size", d.vocab_size);
  c.max_seq_len = j.value("max_seq_len", d.max_seq_len);
  c.rng_seed = j.value("rng_seed", d.rng_seed);
  if (j.contains("rope")) {
    c.rope = j.at("rope").get<RopeConfig>();
  } else {
    c.rope = RopeConfig{c.d_head, 10000.0, c.max_seq_len};
  }
}

struct LayerWeights {
  DenseArray attn_norm;  // [d_model]
  HeadProjections attn;
  DenseArray ffn_norm;  // [d_model]
  DenseArray w_gate;    // [d_model x d_ff]
  DenseArray w_up;      // [d_model x d_ff]
  DenseArray w_down;    // [d_ff x d_model]

  friend bool operator==(const LayerWeights&, const LayerWeights&) = default;
};

struct ModelWeights {
  ModelConfig config;
  DenseArray embedding;  // [vocab x d_model]
  std::vector<LayerWeights> layers;
  DenseArray final_norm;  // [d_model]
  DenseArray lm_head;     // [d_model x vocab]

  /// Zero-filled weights with the shapes `cfg` implies.
  static ModelWeights zeros(const ModelConfig& cfg) {
    cfg.validate();
    const std::size_t d = cfg.d_model, n = cfg.n_heads, dh = cfg.d_head, ff = cfg.d_ff;
    ModelWeights w;
    w.config = cfg;
    w.embedding = DenseArray({cfg.vocab_size, d});
    for (std::size_t l = 0; l < cfg.n_layers; ++l) {
      LayerWeights lw{DenseArray({d}),
                      HeadProjections{DenseArray({n, d, dh}), DenseArray({n, d, dh}),
                                      DenseArray({n, d, dh}), DenseArray({n * dh, d})},
                      DenseArray({d}),
                      DenseArray({d, ff}),
                      DenseArray({d, ff}),
                      DenseArray({ff, d})};
      w.layers.push_back(std::move(lw));
    }
    w.final_norm = DenseArray({d});
    w.lm_head = DenseArray({d, cfg.vocab_size});
    return w;
  }

  /// Visits every tensor in serialization order.
  template <typename F>
  void for_each_tensor(F&& f) {
    f(embedding);
    for (auto& l : layers) {
      f(l.attn_norm);
      f(l.attn.wq);
      f(l.attn.wk);
      f(l.attn.wv);
      f(l.attn.wo);
      f(l.ffn_norm);
      f(l.w_gate);
      f(l.w_up);
      f(l.w_down);
    }
    f(final_norm);
    f(lm_head);
  }
  template <typename F>
  void for_each_tensor(F&& f) const {
    const_cast<ModelWeights*>(this)->for_each_tensor(
        [&](DenseArray& a) { f(static_cast<const DenseArray&>(a)); });
  }

  friend bool operator==(const ModelWeights&, const ModelWeights&) = default;
};

namespace detail {

// Box-Muller over mt19937_64 so draws are identical across standard libraries.
class NormalSource {
 public:
  explicit NormalSource(std::uint64_t seed) : eng_(seed) {}

  double next() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double t = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(t);
    has_spare_ = true;
    return r * std::cos(t);
  }

 private:
  // (0, 1), never 0 so the log is finite.
  double uniform() { return (static_cast<double>(eng_() >> 11) + 0.5) * 0x1.0p-53; }

  std::mt19937_64 eng_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace detail

/// Gaussian init from `cfg.rng_seed`. Embeddings use std 0.02, input-side
/// projections 1/sqrt(fan_in), residual-path outputs (Wo, W_down)
/// 0.02/sqrt(n_layers); norm gains start at 1.
inline ModelWeights init_random(const ModelConfig& cfg) {
  ModelWeights w = ModelWeights::zeros(cfg);
  detail::NormalSource rng(cfg.rng_seed);
  const auto fill = [&](DenseArray& a, double std) {
    for (double& v : a.data()) v = std * rng.next();
  };
  const double in_std = 1.0 / std::sqrt(static_cast<double>(cfg.d_model));
  const double resid_std = 0.02 / std::sqrt(static_cast<double>(cfg.n_layers));

  fill(w.embedding, 0.02);
  for (auto& l : w.layers) {
    std::fill(l.attn_norm.data().begin(), l.attn_norm.data().end(), 1.0);
    fill(l.attn.wq, in_std);
    fill(l.attn.wk, in_std);
    fill(l.attn.wv, in_std);
    fill(l.attn.wo, resid_std);
    std::fill(l.ffn_norm.data().begin(), l.ffn_norm.data().end(), 1.0);
    fill(l.w_gate, in_std);
    fill(l.w_up, in_std);
    fill(l.w_down, resid_std);
  }
  std::fill(w.final_norm.data().begin(), w.final_norm.data().end(), 1.0);
  fill(w.lm_head, in_std);
  return w;
}

/// FNV-1a over the little-endian bytes of every tensor.
inline std::uint64_t weights_checksum(const ModelWeights& w) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  w.for_each_tensor([&](const DenseArray& a) {
    for (double v : a.data()) {
      const auto bits = std::bit_cast<std::uint64_t>(v);
      for (int b = 0; b < 8; ++b) {
        h ^= (bits >> (8 * b)) & 0xffu;
        h *= 0x100000001b3ULL;
      }
    }
  });
  return h;
}

/// Scale-only RMS normalization of every last-dim row.
inline DenseArray rms_norm(const DenseArray& x, const DenseArray& gain, double eps = 1e-6) {
  const std::size_t w = x.shape().back();
  if (gain.size() != w) throw DimensionError("rms_norm: gain size mismatch");
  DenseArray out = x;
  auto d = out.data();
  for (std::size_t off = 0; off < d.size(); off += w) {
    double ss = 0.0;
    for (std::size_t j = 0; j < w; ++j) ss += d[off + j] * d[off + j];
    const double inv = 1.0 / std::sqrt(ss / static_cast<double>(w) + eps);
    for (std::size_t j = 0; j < w; ++j) d[off + j] = d[off + j] * inv * gain.data()[j];
  }
  return out;
}

/// Per-layer capture of one forward pass over a single sequence.
struct LayerTrace {
  std::vector<DenseArray> hidden;     // per layer, [l x d_model], residual stream after the layer
  std::vector<AttnTensor> attention;  // per layer, [1 x n x l x l], post-hook
  DenseArray logits;                  // [l x vocab]

  std::size_t n_layers() const { return hidden.size(); }
  std::size_t length() const { return logits.extent(0); }

  friend bool operator==(const LayerTrace&, const LayerTrace&) = default;
};

/// Indexed by layer; an empty slot or a short vector means no hook.
using LayerHooks = std::vector<AttnHook>;

inline void check_tokens(const ModelConfig& cfg, std::span<const TokenId> tokens) {
  if (tokens.empty()) throw InputError("forward: empty token sequence");
  if (tokens.size() > cfg.max_seq_len) {
    throw InputError("forward: " + std::to_string(tokens.size()) + " tokens exceed max_seq_len " +
                     std::to_string(cfg.max_seq_len));
  }
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (tokens[i] >= cfg.vocab_size) {
      throw InputError("forward: token id " + std::to_string(tokens[i]) + " at position " +
                       std::to_string(i) + " >= vocab_size " + std::to_string(cfg.vocab_size));
    }
  }
}

inline LayerTrace forward(const ModelWeights& w, std::span<const TokenId> tokens,
                          const LayerHooks& hooks = {}) {
  const ModelConfig& cfg = w.config;
  check_tokens(cfg, tokens);
  const std::size_t l = tokens.size(), d = cfg.d_model;

  DenseArray x({1, l, d});
  for (std::size_t p = 0; p < l; ++p)
    for (std::size_t j = 0; j < d; ++j) x(0, p, j) = w.embedding(tokens[p], j);

  LayerTrace trace;
  for (std::size_t li = 0; li < cfg.n_layers; ++li) {
    const LayerWeights& lw = w.layers[li];
    const DenseArray h = rms_norm(x, lw.attn_norm);
    const DenseArray scores = attention_scores(h, lw.attn, cfg.rope);
    static const AttnHook kNone;
    const AttnHook& hook = li < hooks.size() ? hooks[li] : kNone;
    AttendResult att = attend(scores, h, lw.attn, hook);
    x = x + att.context;

    const DenseArray h2 = rms_norm(x, lw.ffn_norm);
    DenseArray gate = matmul(h2, lw.w_gate);
    const DenseArray up = matmul(h2, lw.w_up);
    for (std::size_t i = 0; i < gate.size(); ++i) {
      const double g = gate.data()[i];
      gate.data()[i] = g / (1.0 + std::exp(-g)) * up.data()[i];
    }
    x = x + matmul(gate, lw.w_down);

    trace.hidden.push_back(x.reshaped({l, d}));
    trace.attention.push_back(std::move(att.weights));
  }
  trace.logits = matmul(rms_norm(x, w.final_norm), w.lm_head).reshaped({l, cfg.vocab_size});
  return trace;
}

/// Final norm + LM head applied to one layer's hidden state, [l x vocab].
inline DenseArray lens_logits(const LayerTrace& trace, std::size_t layer, const ModelWeights& w) {
  if (layer >= trace.n_layers()) {
    throw IndexError("logit_lens: layer " + std::to_string(layer) + " out of range for " +
                     std::to_string(trace.n_layers()) + " layers");
  }
  return matmul(rms_norm(trace.hidden[layer], w.final_norm), w.lm_head);
}

/// Indices of the k largest values, descending; ties go to the lower index.
inline std::vector<TokenId> top_k(std::span<const double> row, std::size_t k) {
  std::vector<TokenId> idx(row.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<TokenId>(i);
  k = std::min(k, idx.size());
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(),
                    [&](TokenId a, TokenId b) { return row[a] > row[b] || (row[a] == row[b] && a < b); });
  idx.resize(k);
  return idx;
}

inline TokenId argmax(std::span<const double> row) { return top_k(row, 1).front(); }

/// Top-k token ids per position read off `layer` through the final head.
inline std::vector<std::vector<TokenId>> logit_lens(const LayerTrace& trace, std::size_t layer,
                                                    const ModelWeights& w, std::size_t k) {
  const DenseArray logits = lens_logits(trace, layer, w);
  std::vector<std::vector<TokenId>> out;
  for (std::size_t p = 0; p < logits.extent(0); ++p) out.push_back(top_k(logits.row(p), k));
  return out;
}

struct GreedyStep {
  TokenId token;
  std::vector<double> logits;  // final-position logits that produced `token`
};

/// Temperature-0 decoding; `run` maps a token sequence to its LayerTrace and
/// is re-invoked on the full sequence at every step.
template <typename Run>
std::vector<GreedyStep> greedy_decode(std::vector<TokenId> tokens, std::size_t n_new, Run&& run) {
  std::vector<GreedyStep> steps;
  for (std::size_t t = 0; t < n_new; ++t) {
    const LayerTrace trace = run(std::span<const TokenId>(tokens));
    const auto last = trace.logits.row(trace.length() - 1);
    GreedyStep step{argmax(last), std::vector<double>(last.begin(), last.end())};
    tokens.push_back(step.token);
    steps.push_back(std::move(step));
  }
  return steps;
}

// --- weight file -----------------------------------------------------------

inline constexpr char kWeightMagic[4] = {'A', 'T', 'N', 'T'};
inline constexpr std::uint32_t kWeightFormatVersion = 1;

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int b = 0; b < 4; ++b) out.push_back(static_cast<char>((v >> (8 * b)) & 0xffu));
}

inline void put_f64(std::string& out, double v) {
  const auto bits = std::bit_cast<std::uint64_t>(v);
  for (int b = 0; b < 8; ++b) out.push_back(static_cast<char>((bits >> (8 * b)) & 0xffu));
}

class ByteReader {
 public:
  explicit ByteReader(std::string_view buf) : buf_(buf) {}

  std::uint64_t pos() const { return pos_; }
  std::size_t remaining() const { return buf_.size() - pos_; }

  std::string_view take(std::size_t n, const char* what) {
    if (remaining() < n) {
      throw FormatError(std::string("truncated weight file reading ") + what, pos_);
    }
    auto s = buf_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  std::uint32_t u32(const char* what) {
    const auto s = take(4, what);
    std::uint32_t v = 0;
    for (int b = 0; b < 4; ++b) v |= std::uint32_t(static_cast<unsigned char>(s[b])) << (8 * b);
    return v;
  }

  double f64(const char* what) {
    const auto s = take(8, what);
    std::uint64_t v = 0;
    for (int b = 0; b < 8; ++b) v |= std::uint64_t(static_cast<unsigned char>(s[b])) << (8 * b);
    return std::bit_cast<double>(v);
  }

 private:
  std::string_view buf_;
  std::uint64_t pos_ = 0;
};

}  // namespace detail

/// "ATNT", u32 version, u32 header length, JSON ModelConfig, then every
/// tensor as little-endian f64 in `for_each_tensor` order.
inline std::string serialize_weights(const ModelWeights& w) {
  std::string out(kWeightMagic, 4);
  detail::put_u32(out, kWeightFormatVersion);
  const std::string header = nlohmann::json(w.config).dump();
  detail::put_u32(out, static_cast<std::uint32_t>(header.size()));
  out += header;
  w.for_each_tensor([&](const DenseArray& a) {
    for (double v : a.data()) detail::put_f64(out, v);
  });
  return out;
}

inline ModelWeights deserialize_weights(std::string_view bytes) {
  detail::ByteReader rd(bytes);
  if (rd.take(4, "magic") != std::string_view(kWeightMagic, 4)) {
    throw FormatError("bad magic, expected ATNT", 0);
  }
  const std::uint64_t ver_at = rd.pos();
  if (const auto ver = rd.u32("version"); ver != kWeightFormatVersion) {
    throw FormatError("unsupported format version " + std::to_string(ver), ver_at);
  }
  const std::uint32_t hlen = rd.u32("header length");
  const std::uint64_t header_at = rd.pos();
  const auto header = rd.take(hlen, "header");
  ModelConfig cfg;
  try {
    cfg = nlohmann::json::parse(header).get<ModelConfig>();
    cfg.validate();
  } catch (const std::exception& e) {
    throw FormatError(std::string("bad config header: ") + e.what(), header_at);
  }
  ModelWeights w = ModelWeights::zeros(cfg);
  w.for_each_tensor([&](DenseArray& a) {
    for (double& v : a.data()) {
      const std::uint64_t at = rd.pos();
      v = rd.f64("tensor data");
      if (!std::isfinite(v)) throw FormatError("non-finite weight", at);
    }
  });
  if (rd.remaining() != 0) {
    throw FormatError("trailing bytes after last tensor (shape mismatch?)", rd.pos());
  }
  return w;
}

inline void save_weights(const ModelWeights& w, const std::string& path) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("save_weights: cannot open " + path);
  const std::string bytes = serialize_weights(w);
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw std::runtime_error("save_weights: write failed for " + path);
}

inline ModelWeights load_weights(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("load_weights: cannot open " + path);
  const std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return deserialize_weights(bytes);
}

// --- token sources -----------------------------------------------------------

/// Raw bytes mapped onto the 256-entry byte vocabulary.
inline std::vector<TokenId> tokens_from_bytes(std::string_view text) {
  std::vector<TokenId> out;
  for (char c : text) out.push_back(static_cast<unsigned char>(c));
  return out;
}

/// Whitespace-separated non-negative integer ids.
inline std::vector<TokenId> parse_token_ids(std::string_view text) {
  std::istringstream is{std::string(text)};
  std::vector<TokenId> out;
  std::string tok;
  while (is >> tok) {
    std::size_t used = 0;
    unsigned long v = 0;
    try {
      v = std::stoul(tok, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != tok.size() || tok.front() == '-' || v > 0xffffffffUL) {
      throw InputError("parse_token_ids: bad token '" + tok + "'");
    }
    out.push_back(static_cast<TokenId>(v));
  }
  return out;
}

}  // namespace atnt
