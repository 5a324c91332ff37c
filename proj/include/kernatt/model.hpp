#pragma once

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "kernatt/attention.hpp"

namespace kernatt {

enum class Architecture { LM, Seq2Seq, Tagger };

std::string to_string(Architecture arch);

/// Shared shape of every transformer block in a stack. The attention member
/// carries kernel, PE, filter and value settings; its d_model and n_heads are
/// taken from this struct.
struct BlockConfig {
  std::size_t d_model = 64;
  std::size_t d_ff = 128;
  std::size_t n_layers = 2;
  std::size_t n_heads = 4;
  AttentionConfig attention;
  double dropout = 0.0;

  void validate() const;
  /// Attention settings with widths filled in and the filter replaced.
  AttentionConfig attention_with(const FilterSpec& filter) const;
};

struct ModelConfig {
  Architecture arch = Architecture::LM;
  std::size_t vocab_size = 16;
  BlockConfig block;
  // Seq2seq only. Both must stay Full.
  FilterSpec encoder_filter{FilterKind::Full};
  FilterSpec cross_filter{FilterKind::Full};

  void validate() const;
  /// Stable text form of every field that shapes the parameters or the forward pass.
  std::string canonical() const;
};

/// One attention layer of a model, named like its parameters
/// (encoder.0.attn, decoder.1.cross, ...).
struct AttentionSite {
  std::string name;
  AttentionConfig config;
};

std::vector<AttentionSite> attention_sites(const ModelConfig& cfg);

struct LayerNormParams {
  Tensor gamma;
  Tensor beta;
};

struct FeedForwardParams {
  Tensor w1, b1, w2, b2;
};

struct LayerParams {
  LayerNormParams ln_attn;
  AttentionParams attn;
  Tensor memory;  // [mem_len x d_model] for CausalWithMemory self-attention
  LayerNormParams ln_cross;
  AttentionParams cross;  // decoder layers only
  LayerNormParams ln_ff;
  FeedForwardParams ff;
};

/// Token ids laid out row-major as [batch x len].
struct TokenBatch {
  std::size_t batch = 0;
  std::size_t len = 0;
  std::vector<int> ids;
};

class Model {
 public:
  static Model init(const ModelConfig& cfg, Rng& rng);

  const ModelConfig& config() const { return cfg_; }

  /// Every parameter tensor once, in a fixed order with stable dotted names.
  void visit(const std::function<void(const std::string&, Tensor&)>& fn);
  void visit(const std::function<void(const std::string&, const Tensor&)>& fn) const;
  std::size_t param_count() const;

  /// Row BOS of the embedding table (index vocab_size) starts decoder inputs.
  int bos() const { return static_cast<int>(cfg_.vocab_size); }

  /// Next-token logits for a causal stack: [b x t x vocab].
  Tensor lm_forward(const TokenBatch& tokens, Rng* dropout_rng = nullptr) const;
  /// Encoder-decoder logits for the decoder inputs: [b x t_t x vocab].
  Tensor seq2seq_forward(const TokenBatch& src, const TokenBatch& tgt_in,
                         Rng* dropout_rng = nullptr) const;
  /// Per-position logits from an encoder stack: [b x t x vocab].
  Tensor tag_forward(const TokenBatch& tokens, Rng* dropout_rng = nullptr) const;

 private:
  Tensor embed(const TokenBatch& tokens) const;
  Tensor self_block(const LayerParams& layer, const AttentionConfig& cfg, Tensor x,
                    std::span<const int> positions, std::size_t batch, Rng* rng) const;
  Tensor feed_forward(const LayerParams& layer, Tensor x, Rng* rng) const;
  Tensor encode(const std::vector<LayerParams>& layers, const AttentionConfig& cfg,
                const TokenBatch& tokens, Rng* rng) const;
  Tensor project(const Tensor& h, std::size_t batch, std::size_t len) const;
  Tensor dropout(const Tensor& x, Rng* rng) const;

  ModelConfig cfg_;
  Tensor embedding_;  // [(vocab + 1) x d_model]
  std::vector<LayerParams> encoder_;
  std::vector<LayerParams> decoder_;
  LayerNormParams ln_encoder_;
  LayerNormParams ln_final_;
  Tensor w_out_;  // [d_model x vocab]
  Tensor b_out_;
};

}  // namespace kernatt
