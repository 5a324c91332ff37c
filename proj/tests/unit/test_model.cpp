#include <doctest.h>

#include <cmath>
#include <map>
#include <set>

#include "kernatt/gradcheck.hpp"
#include "kernatt/train.hpp"

using namespace kernatt;

namespace {

ModelConfig small_config(Architecture arch, FilterKind filter = FilterKind::Causal) {
  ModelConfig cfg;
  cfg.arch = arch;
  cfg.vocab_size = 7;
  cfg.block.d_model = 16;
  cfg.block.d_ff = 32;
  cfg.block.n_layers = 2;
  cfg.block.n_heads = 2;
  cfg.block.attention.kernel = KernelForm::Exponential;
  cfg.block.attention.pe.mode = PEMode::SymmetricProduct;
  cfg.block.attention.filter.kind = filter;
  if (filter == FilterKind::CausalWithMemory) cfg.block.attention.filter.mem_len = 3;
  if (filter == FilterKind::Strided) {
    cfg.block.attention.filter.stride = 3;
    cfg.block.attention.filter.window = 2;
  }
  return cfg;
}

TokenBatch random_tokens(std::size_t b, std::size_t t, int vocab, Rng& rng) {
  std::uniform_int_distribution<int> tok(0, vocab - 1);
  TokenBatch out{b, t, {}};
  for (std::size_t i = 0; i < b * t; ++i) out.ids.push_back(tok(rng));
  return out;
}

std::string layer_of(const std::string& name) {
  auto first = name.find('.');
  if (first == std::string::npos) return name;
  auto second = name.find('.', first + 1);
  return name.substr(0, second);
}

}  // namespace

TEST_CASE("forward shapes") {
  Rng rng(1);
  auto lm = Model::init(small_config(Architecture::LM), rng);
  auto toks = random_tokens(3, 5, 7, rng);
  CHECK(lm.lm_forward(toks).shape() == Shape{3, 5, 7});

  auto s2s = Model::init(small_config(Architecture::Seq2Seq), rng);
  TokenBatch src{2, 1, {3, 4}}, tgt{2, 1, {s2s.bos(), s2s.bos()}};
  CHECK(s2s.seq2seq_forward(src, tgt).shape() == Shape{2, 1, 7});

  auto tagger = Model::init(small_config(Architecture::Tagger, FilterKind::Full), rng);
  CHECK(tagger.tag_forward(toks).shape() == Shape{3, 5, 7});
}

TEST_CASE("forward rejects the wrong architecture and out-of-range tokens") {
  Rng rng(2);
  auto lm = Model::init(small_config(Architecture::LM), rng);
  TokenBatch toks{1, 2, {0, 7}};
  CHECK_THROWS_AS(lm.lm_forward(toks), Error);
  TokenBatch ok{1, 2, {0, 1}};
  CHECK_THROWS_AS(lm.tag_forward(ok), ConfigError);
}

TEST_CASE("seq2seq filters are fixed by role") {
  auto cfg = small_config(Architecture::Seq2Seq);
  cfg.encoder_filter.kind = FilterKind::Causal;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = small_config(Architecture::Seq2Seq);
  cfg.cross_filter.kind = FilterKind::Causal;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = small_config(Architecture::Seq2Seq, FilterKind::Full);
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  CHECK_THROWS_AS(small_config(Architecture::LM, FilterKind::Full).validate(), ConfigError);
}

TEST_CASE("zero output projection gives uniform predictions") {
  Rng rng(3);
  auto model = Model::init(small_config(Architecture::LM), rng);
  model.visit([](const std::string& name, Tensor& t) {
    if (name == "out.w" || name == "out.b") t = Tensor::zeros(t.shape());
  });
  auto toks = random_tokens(2, 6, 7, rng);
  auto logits = model.lm_forward(toks);
  for (double v : logits.data()) CHECK(v == 0.0);
  std::vector<int> targets(12, 3);
  std::vector<double> weights(12, 1.0);
  auto m = metrics_from_logits(reshape(logits, {12, 7}), targets, weights);
  CHECK(m.perplexity == doctest::Approx(7.0).epsilon(1e-12));
}

TEST_CASE("lm logits never depend on later tokens") {
  for (auto kind : {FilterKind::Causal, FilterKind::CausalWithMemory, FilterKind::Strided}) {
    Rng rng(10 + static_cast<int>(kind));
    auto model = Model::init(small_config(Architecture::LM, kind), rng);
    const std::size_t t = 9;
    for (int trial = 0; trial < 5; ++trial) {
      auto toks = random_tokens(1, t, 7, rng);
      auto base = model.lm_forward(toks);
      std::uniform_int_distribution<std::size_t> pos(0, t - 1);
      const std::size_t j = pos(rng);
      auto changed = toks;
      changed.ids[j] = (changed.ids[j] + 1) % 7;
      auto after = model.lm_forward(changed);
      for (std::size_t i = 0; i < j * 7; ++i) REQUIRE(base.data()[i] == after.data()[i]);
      double diff = 0.0;
      for (std::size_t i = j * 7; i < t * 7; ++i) diff += std::abs(base.data()[i] - after.data()[i]);
      CHECK(diff > 0.0);
    }
  }
}

TEST_CASE("decoder is causal and sees every source position") {
  Rng rng(20);
  auto model = Model::init(small_config(Architecture::Seq2Seq), rng);
  const std::size_t t = 6;
  auto src = random_tokens(1, t, 7, rng);
  auto tgt = random_tokens(1, t, 7, rng);
  auto base = model.seq2seq_forward(src, tgt);
  for (std::size_t j = 0; j < t; ++j) {
    auto changed = tgt;
    changed.ids[j] = model.bos();
    auto after = model.seq2seq_forward(src, changed);
    for (std::size_t i = 0; i < j * 7; ++i) REQUIRE(base.data()[i] == after.data()[i]);
  }
  for (std::size_t j = 0; j < t; ++j) {
    auto changed = src;
    changed.ids[j] = (changed.ids[j] + 3) % 7;
    auto after = model.seq2seq_forward(changed, tgt);
    // The first decoder position already reads the whole source.
    double diff = 0.0;
    for (std::size_t c = 0; c < 7; ++c) diff += std::abs(base.data()[c] - after.data()[c]);
    CHECK(diff > 0.0);
  }
}

TEST_CASE("one training step reaches every layer at d_model = 16") {
  for (auto arch : {Architecture::LM, Architecture::Seq2Seq, Architecture::Tagger})
    for (auto mode : {PEMode::None, PEMode::DirectSum, PEMode::LookupTable, PEMode::XLProduct,
                      PEMode::SymmetricProduct}) {
      auto cfg = small_config(arch, arch == Architecture::Tagger ? FilterKind::Full
                                                                  : FilterKind::CausalWithMemory);
      cfg.block.attention.pe.mode = mode;
      cfg.block.attention.pe.t_max = 8;
      Rng rng(30);
      auto model = Model::init(cfg, rng);
      Tape tape;
      std::vector<std::pair<std::string, Tensor>> leaves;
      model.visit([&](const std::string& name, Tensor& t) {
        t = tape.watch(t);
        leaves.emplace_back(name, t);
      });
      auto toks = random_tokens(2, 5, 7, rng);
      Tensor logits;
      if (arch == Architecture::LM) logits = model.lm_forward(toks);
      if (arch == Architecture::Tagger) logits = model.tag_forward(toks);
      if (arch == Architecture::Seq2Seq) logits = model.seq2seq_forward(toks, toks);
      std::vector<int> targets(toks.ids.begin(), toks.ids.end());
      std::vector<double> weights(targets.size(), 1.0);
      backward(cross_entropy(reshape(logits, {10, 7}), targets, weights));

      std::map<std::string, bool> alive;
      for (const auto& [name, t] : leaves) {
        bool nonzero = false;
        for (double g : t.grad()) nonzero = nonzero || g != 0.0;
        alive[layer_of(name)] = alive[layer_of(name)] || nonzero;
      }
      for (const auto& [layer, ok] : alive) {
        INFO(to_string(arch) << "/" << to_string(mode) << " " << layer);
        CHECK(ok);
      }
    }
}

TEST_CASE("model gradients agree with central differences") {
  for (auto arch : {Architecture::LM, Architecture::Seq2Seq}) {
    auto cfg = small_config(arch);
    cfg.vocab_size = 5;
    cfg.block.d_model = 8;
    cfg.block.d_ff = 8;
    cfg.block.n_layers = 1;
    cfg.block.attention.pe.mode = PEMode::XLProduct;
    Rng rng(40);
    auto model = Model::init(cfg, rng);
    std::vector<Tensor> inputs;
    model.visit([&](const std::string&, const Tensor& t) { inputs.push_back(t); });
    auto toks = random_tokens(2, 4, 5, rng);
    std::vector<int> targets(toks.ids.begin(), toks.ids.end());
    std::vector<double> weights(targets.size(), 1.0);
    auto loss = [&](const std::vector<Tensor>& v) {
      auto m = model;
      std::size_t k = 0;
      m.visit([&](const std::string&, Tensor& t) { t = v[k++]; });
      auto logits = arch == Architecture::LM ? m.lm_forward(toks) : m.seq2seq_forward(toks, toks);
      return cross_entropy(reshape(logits, {8, 5}), targets, weights);
    };
    auto res = check_gradients(loss, inputs);
    INFO(to_string(arch) << " worst input " << res.worst_input);
    CHECK(res.max_rel_error < 1e-4);
  }
}

TEST_CASE("value mode leaves the parameter count unchanged") {
  for (auto mode : {PEMode::DirectSum, PEMode::LookupTable, PEMode::XLProduct,
                    PEMode::SymmetricProduct}) {
    auto cfg = small_config(Architecture::LM);
    cfg.block.attention.pe.mode = mode;
    cfg.block.attention.value = ValueMode::WithPE;
    auto with_pe = fresh_model(cfg, 1).param_count();
    cfg.block.attention.value = ValueMode::ContentOnly;
    CHECK(fresh_model(cfg, 1).param_count() == with_pe);
  }
}

TEST_CASE("parameter names are unique and stable") {
  auto model = fresh_model(small_config(Architecture::Seq2Seq, FilterKind::CausalWithMemory), 5);
  std::set<std::string> names;
  std::size_t total = 0;
  model.visit([&](const std::string& name, const Tensor& t) {
    CHECK(names.insert(name).second);
    total += t.numel();
  });
  CHECK(total == model.param_count());
  CHECK(names.count("embedding"));
  CHECK(names.count("encoder.0.attn.w_f"));
  CHECK(names.count("decoder.1.cross.w_t"));
  CHECK(names.count("decoder.0.memory"));
  CHECK(names.count("out.w"));
}

TEST_CASE("attention sites follow the architecture") {
  auto s2s = attention_sites(small_config(Architecture::Seq2Seq));
  REQUIRE(s2s.size() == 6);
  CHECK(s2s[0].name == "encoder.0.attn");
  CHECK(s2s[0].config.filter.kind == FilterKind::Full);
  CHECK(s2s[2].name == "decoder.0.attn");
  CHECK(s2s[2].config.filter.kind == FilterKind::Causal);
  CHECK(s2s[3].name == "decoder.0.cross");
  CHECK(attention_sites(small_config(Architecture::LM)).size() == 2);
}

TEST_CASE("dropout only acts when a generator is given") {
  auto cfg = small_config(Architecture::LM);
  cfg.block.dropout = 0.5;
  auto model = fresh_model(cfg, 6);
  Rng rng(7);
  auto toks = random_tokens(1, 6, 7, rng);
  auto a = model.lm_forward(toks);
  auto b = model.lm_forward(toks);
  CHECK(std::equal(a.data().begin(), a.data().end(), b.data().begin()));
  Rng drop(8);
  auto c = model.lm_forward(toks, &drop);
  CHECK_FALSE(std::equal(a.data().begin(), a.data().end(), c.data().begin()));
}
