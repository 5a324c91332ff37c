#include "kernatt/model.hpp"

#include <cmath>
#include <numeric>
#include <sstream>

#include "kernatt/nn_ops.hpp"

namespace kernatt {

std::string to_string(Architecture arch) {
  switch (arch) {
    case Architecture::LM: return "lm";
    case Architecture::Seq2Seq: return "seq2seq";
    case Architecture::Tagger: return "tagger";
  }
  return "?";
}

void BlockConfig::validate() const {
  if (d_model == 0 || d_ff == 0 || n_layers == 0 || n_heads == 0) {
    throw ConfigError("d_model, d_ff, n_layers and n_heads must be positive");
  }
  if (d_ff < d_model) {
    throw ConfigError("d_ff (" + std::to_string(d_ff) + ") must be at least d_model (" +
                      std::to_string(d_model) + ")");
  }
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout must lie in [0, 1)");
  attention_with(attention.filter).validate();
}

AttentionConfig BlockConfig::attention_with(const FilterSpec& filter) const {
  AttentionConfig cfg = attention;
  cfg.d_model = d_model;
  cfg.n_heads = n_heads;
  if (cfg.d_k == 0) cfg.d_k = d_model;
  if (cfg.d_v == 0) cfg.d_v = d_model;
  cfg.filter = filter;
  return cfg;
}

void ModelConfig::validate() const {
  if (vocab_size < 2) throw ConfigError("vocab_size must be at least 2");
  block.validate();
  const auto& filter = block.attention.filter;
  switch (arch) {
    case Architecture::LM:
      if (!filter.causal_family()) {
        throw ConfigError("a language model needs a causal filter (causal, causal_with_memory "
                          "or strided), got " + to_string(filter.kind));
      }
      break;
    case Architecture::Seq2Seq:
      if (!filter.causal_family()) {
        throw ConfigError("decoder self-attention needs a causal filter, got " +
                          to_string(filter.kind));
      }
      if (encoder_filter.kind != FilterKind::Full) {
        throw ConfigError("encoder self-attention must use the full filter");
      }
      if (cross_filter.kind != FilterKind::Full) {
        throw ConfigError("decoder-encoder attention must use the full filter");
      }
      break;
    case Architecture::Tagger: break;
  }
}

std::string ModelConfig::canonical() const {
  const auto a = block.attention_with(block.attention.filter);
  std::ostringstream s;
  s << "arch=" << to_string(arch) << ";vocab=" << vocab_size << ";d_model=" << block.d_model
    << ";d_ff=" << block.d_ff << ";n_layers=" << block.n_layers << ";n_heads=" << block.n_heads
    << ";d_k=" << a.d_k << ";d_v=" << a.d_v << ";kernel=" << to_string(a.kernel)
    << ";symmetric=" << a.symmetric << ";pe=" << to_string(a.pe.mode)
    << ";table=" << to_string(a.pe.table)
    << ";freq=" << (a.pe.freq_denominator == FreqDenominator::Dk ? "dk" : "512")
    << ";t_max=" << a.pe.t_max << ";filter=" << to_string(a.filter.kind)
    << ";mem_len=" << a.filter.mem_len << ";stride=" << a.filter.stride
    << ";window=" << a.filter.window << ";include_self=" << a.filter.include_self
    << ";value=" << to_string(a.value) << ";eps=" << a.eps << ";log_domain=" << a.log_domain;
  return s.str();
}

namespace {

LayerNormParams init_norm(std::size_t d) {
  return {Tensor::full({d}, 1.0), Tensor::zeros({d})};
}

LayerParams init_layer(const BlockConfig& block, const AttentionConfig& self_cfg,
                       const AttentionConfig* cross_cfg, Rng& rng) {
  const std::size_t d = block.d_model, f = block.d_ff;
  LayerParams layer;
  layer.ln_attn = init_norm(d);
  layer.attn = AttentionParams::init(self_cfg, rng);
  if (self_cfg.filter.kind == FilterKind::CausalWithMemory && self_cfg.filter.mem_len > 0) {
    layer.memory = Tensor::randn({self_cfg.filter.mem_len, d}, rng);
  }
  if (cross_cfg) {
    layer.ln_cross = init_norm(d);
    layer.cross = AttentionParams::init(*cross_cfg, rng);
  }
  layer.ln_ff = init_norm(d);
  layer.ff.w1 = Tensor::randn({d, f}, rng, 1.0 / std::sqrt(double(d)));
  layer.ff.b1 = Tensor::zeros({f});
  layer.ff.w2 = Tensor::randn({f, d}, rng, 1.0 / std::sqrt(double(f)));
  layer.ff.b2 = Tensor::zeros({d});
  return layer;
}

template <typename Fn>
void visit_layer(const std::string& prefix, LayerParams& layer, Fn&& fn) {
  fn(prefix + ".ln_attn.gamma", layer.ln_attn.gamma);
  fn(prefix + ".ln_attn.beta", layer.ln_attn.beta);
  layer.attn.visit(
      [&](const std::string& n, Tensor& t) { fn(prefix + ".attn." + n, t); });
  if (layer.memory.defined()) fn(prefix + ".memory", layer.memory);
  if (layer.cross.w_v.defined()) {
    fn(prefix + ".ln_cross.gamma", layer.ln_cross.gamma);
    fn(prefix + ".ln_cross.beta", layer.ln_cross.beta);
    layer.cross.visit(
        [&](const std::string& n, Tensor& t) { fn(prefix + ".cross." + n, t); });
  }
  fn(prefix + ".ln_ff.gamma", layer.ln_ff.gamma);
  fn(prefix + ".ln_ff.beta", layer.ln_ff.beta);
  fn(prefix + ".ff.w1", layer.ff.w1);
  fn(prefix + ".ff.b1", layer.ff.b1);
  fn(prefix + ".ff.w2", layer.ff.w2);
  fn(prefix + ".ff.b2", layer.ff.b2);
}

std::vector<int> range_positions(std::size_t n, int start = 0) {
  std::vector<int> p(n);
  std::iota(p.begin(), p.end(), start);
  return p;
}

void check_tokens(const TokenBatch& t, std::size_t limit, const char* what) {
  if (t.batch == 0 || t.len == 0 || t.ids.size() != t.batch * t.len) {
    throw DimensionError(std::string(what) + ": expected " + std::to_string(t.batch) + "x" +
                         std::to_string(t.len) + " ids, got " + std::to_string(t.ids.size()));
  }
  for (int id : t.ids) {
    if (id < 0 || static_cast<std::size_t>(id) > limit) {
      throw DimensionError(std::string(what) + ": token id " + std::to_string(id) +
                           " outside the vocabulary");
    }
  }
}

}  // namespace

Model Model::init(const ModelConfig& cfg, Rng& rng) {
  cfg.validate();
  Model m;
  m.cfg_ = cfg;
  const auto& block = cfg.block;
  const std::size_t d = block.d_model;
  m.embedding_ = Tensor::randn({cfg.vocab_size + 1, d}, rng);

  if (cfg.arch == Architecture::Seq2Seq) {
    auto enc = block.attention_with(cfg.encoder_filter);
    auto dec = block.attention_with(block.attention.filter);
    auto cross = block.attention_with(cfg.cross_filter);
    for (std::size_t l = 0; l < block.n_layers; ++l)
      m.encoder_.push_back(init_layer(block, enc, nullptr, rng));
    for (std::size_t l = 0; l < block.n_layers; ++l)
      m.decoder_.push_back(init_layer(block, dec, &cross, rng));
    m.ln_encoder_ = init_norm(d);
  } else {
    auto self = block.attention_with(block.attention.filter);
    for (std::size_t l = 0; l < block.n_layers; ++l)
      m.encoder_.push_back(init_layer(block, self, nullptr, rng));
  }
  m.ln_final_ = init_norm(d);
  m.w_out_ = Tensor::randn({d, cfg.vocab_size}, rng, 1.0 / std::sqrt(double(d)));
  m.b_out_ = Tensor::zeros({cfg.vocab_size});
  return m;
}

std::vector<AttentionSite> attention_sites(const ModelConfig& cfg) {
  cfg.validate();
  const auto& block = cfg.block;
  std::vector<AttentionSite> out;
  const bool s2s = cfg.arch == Architecture::Seq2Seq;
  auto self = block.attention_with(s2s ? cfg.encoder_filter : block.attention.filter);
  for (std::size_t l = 0; l < block.n_layers; ++l)
    out.push_back({"encoder." + std::to_string(l) + ".attn", self});
  if (s2s) {
    auto dec = block.attention_with(block.attention.filter);
    auto cross = block.attention_with(cfg.cross_filter);
    for (std::size_t l = 0; l < block.n_layers; ++l) {
      out.push_back({"decoder." + std::to_string(l) + ".attn", dec});
      out.push_back({"decoder." + std::to_string(l) + ".cross", cross});
    }
  }
  return out;
}

void Model::visit(const std::function<void(const std::string&, Tensor&)>& fn) {
  fn("embedding", embedding_);
  for (std::size_t l = 0; l < encoder_.size(); ++l)
    visit_layer("encoder." + std::to_string(l), encoder_[l], fn);
  if (ln_encoder_.gamma.defined()) {
    fn("ln_encoder.gamma", ln_encoder_.gamma);
    fn("ln_encoder.beta", ln_encoder_.beta);
  }
  for (std::size_t l = 0; l < decoder_.size(); ++l)
    visit_layer("decoder." + std::to_string(l), decoder_[l], fn);
  fn("ln_final.gamma", ln_final_.gamma);
  fn("ln_final.beta", ln_final_.beta);
  fn("out.w", w_out_);
  fn("out.b", b_out_);
}

void Model::visit(const std::function<void(const std::string&, const Tensor&)>& fn) const {
  const_cast<Model*>(this)->visit(
      [&](const std::string& name, Tensor& t) { fn(name, static_cast<const Tensor&>(t)); });
}

std::size_t Model::param_count() const {
  std::size_t n = 0;
  visit([&](const std::string&, const Tensor& t) { n += t.numel(); });
  return n;
}

Tensor Model::dropout(const Tensor& x, Rng* rng) const {
  const double p = cfg_.block.dropout;
  if (!rng || p <= 0.0) return x;
  std::bernoulli_distribution keep(1.0 - p);
  std::vector<double> mask(x.numel());
  for (auto& m : mask) m = keep(*rng) ? 1.0 / (1.0 - p) : 0.0;
  return mul(x, Tensor(x.shape(), std::move(mask)));
}

Tensor Model::embed(const TokenBatch& tokens) const {
  return embedding(embedding_, tokens.ids);
}

Tensor Model::feed_forward(const LayerParams& layer, Tensor x, Rng* rng) const {
  auto y = layer_norm(x, layer.ln_ff.gamma, layer.ln_ff.beta);
  auto h = relu(add(matmul(y, layer.ff.w1), layer.ff.b1));
  return add(x, dropout(add(matmul(h, layer.ff.w2), layer.ff.b2), rng));
}

Tensor Model::self_block(const LayerParams& layer, const AttentionConfig& cfg, Tensor x,
                         std::span<const int> positions, std::size_t batch, Rng* rng) const {
  auto y = layer_norm(x, layer.ln_attn.gamma, layer.ln_attn.beta);
  Tensor a;
  if (layer.memory.defined()) {
    const std::size_t mem = layer.memory.dim(0);
    auto keys = concat_prefix(layer.memory, y, batch);
    auto key_pos = range_positions(mem, -static_cast<int>(mem));
    key_pos.insert(key_pos.end(), positions.begin(), positions.end());
    a = attention_forward_batched(cfg, layer.attn, y, keys, positions, key_pos, batch);
  } else {
    a = attention_forward_batched(cfg, layer.attn, y, y, positions, positions, batch);
  }
  return add(x, dropout(a, rng));
}

Tensor Model::encode(const std::vector<LayerParams>& layers, const AttentionConfig& cfg,
                     const TokenBatch& tokens, Rng* rng) const {
  auto pos = range_positions(tokens.len);
  Tensor x = embed(tokens);
  for (const auto& layer : layers) {
    x = self_block(layer, cfg, x, pos, tokens.batch, rng);
    x = feed_forward(layer, x, rng);
  }
  return x;
}

Tensor Model::project(const Tensor& h, std::size_t batch, std::size_t len) const {
  auto y = layer_norm(h, ln_final_.gamma, ln_final_.beta);
  auto logits = add(matmul(y, w_out_), b_out_);
  return reshape(logits, {batch, len, cfg_.vocab_size});
}

Tensor Model::lm_forward(const TokenBatch& tokens, Rng* dropout_rng) const {
  if (cfg_.arch != Architecture::LM) {
    throw ConfigError("lm_forward called on a " + to_string(cfg_.arch) + " model");
  }
  check_tokens(tokens, cfg_.vocab_size - 1, "lm_forward");
  auto cfg = cfg_.block.attention_with(cfg_.block.attention.filter);
  return project(encode(encoder_, cfg, tokens, dropout_rng), tokens.batch, tokens.len);
}

Tensor Model::tag_forward(const TokenBatch& tokens, Rng* dropout_rng) const {
  if (cfg_.arch != Architecture::Tagger) {
    throw ConfigError("tag_forward called on a " + to_string(cfg_.arch) + " model");
  }
  check_tokens(tokens, cfg_.vocab_size - 1, "tag_forward");
  auto cfg = cfg_.block.attention_with(cfg_.block.attention.filter);
  return project(encode(encoder_, cfg, tokens, dropout_rng), tokens.batch, tokens.len);
}

Tensor Model::seq2seq_forward(const TokenBatch& src, const TokenBatch& tgt_in,
                              Rng* dropout_rng) const {
  if (cfg_.arch != Architecture::Seq2Seq) {
    throw ConfigError("seq2seq_forward called on a " + to_string(cfg_.arch) + " model");
  }
  check_tokens(src, cfg_.vocab_size - 1, "seq2seq_forward src");
  check_tokens(tgt_in, cfg_.vocab_size, "seq2seq_forward tgt_in");
  if (src.batch != tgt_in.batch) throw DimensionError("seq2seq_forward: batch sizes differ");
  const auto& block = cfg_.block;
  const std::size_t b = src.batch;

  auto enc_cfg = block.attention_with(cfg_.encoder_filter);
  auto memory = encode(encoder_, enc_cfg, src, dropout_rng);
  memory = layer_norm(memory, ln_encoder_.gamma, ln_encoder_.beta);

  auto dec_cfg = block.attention_with(block.attention.filter);
  auto cross_cfg = block.attention_with(cfg_.cross_filter);
  auto src_pos = range_positions(src.len);
  auto tgt_pos = range_positions(tgt_in.len);
  Tensor x = embed(tgt_in);
  for (const auto& layer : decoder_) {
    x = self_block(layer, dec_cfg, x, tgt_pos, b, dropout_rng);
    auto y = layer_norm(x, layer.ln_cross.gamma, layer.ln_cross.beta);
    auto a = attention_forward_batched(cross_cfg, layer.cross, y, memory, tgt_pos, src_pos, b);
    x = add(x, dropout(a, dropout_rng));
    x = feed_forward(layer, x, dropout_rng);
  }
  return project(x, b, tgt_in.len);
}

}  // namespace kernatt
