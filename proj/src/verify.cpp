#include "kernatt/verify.hpp"

#include <algorithm>
#include <cstdio>
#include <cmath>
#include <numeric>

#include "json.hpp"
#include "kernatt/attention.hpp"
#include "kernatt/gradcheck.hpp"

namespace kernatt {

namespace {

std::string sci(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", x);
  return buf;
}

constexpr PEMode kAllModes[] = {PEMode::None, PEMode::DirectSum, PEMode::LookupTable,
                                PEMode::XLProduct, PEMode::SymmetricProduct};
constexpr KernelForm kValidForms[] = {KernelForm::Polynomial, KernelForm::Exponential,
                                      KernelForm::RBF};

std::vector<int> iota_positions(std::size_t n, int start = 0) {
  std::vector<int> p(n);
  std::iota(p.begin(), p.end(), start);
  return p;
}

std::size_t uniform(Rng& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

Tensor permute_rows(const Tensor& x, const std::vector<std::size_t>& perm) {
  const std::size_t cols = x.dim(1);
  std::vector<double> v(x.numel());
  auto src = x.data();
  for (std::size_t i = 0; i < perm.size(); ++i)
    std::copy_n(src.begin() + perm[i] * cols, cols, v.begin() + i * cols);
  return Tensor(x.shape(), std::move(v));
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  double m = 0.0;
  auto x = a.data(), y = b.data();
  for (std::size_t i = 0; i < x.size(); ++i) m = std::max(m, std::abs(x[i] - y[i]));
  return m;
}

Witness make_witness(std::vector<std::size_t> perm, const Tensor& input, double deviation) {
  return {std::move(perm), input.shape(), input.to_vector(), deviation};
}

std::vector<FilterSpec> all_filters() {
  FilterSpec strided{FilterKind::Strided};
  strided.stride = 2;
  strided.window = 1;
  return {{FilterKind::Full}, {FilterKind::Causal}, {FilterKind::CausalWithMemory, 2}, strided};
}

}  // namespace

std::string to_json(const VerifyReport& r) {
  nlohmann::json j{{"check", r.check_name},     {"trials", r.trials},
                   {"passed", r.passed},        {"seed", r.seed},
                   {"tolerances", r.tolerances}, {"max_deviation", r.max_deviation},
                   {"detail", r.detail}};
  if (r.witness) {
    j["witness"] = {{"permutation", r.witness->permutation},
                    {"input_shape", r.witness->input_shape},
                    {"input", r.witness->input},
                    {"deviation", r.witness->deviation}};
  }
  return j.dump();
}

std::string to_json(const std::vector<VerifyReport>& reports) {
  auto arr = nlohmann::json::array();
  for (const auto& r : reports) arr.push_back(nlohmann::json::parse(to_json(r)));
  return arr.dump(2);
}

VerifyReport check_equivalence(std::uint64_t seed, bool causal, std::size_t trials, double tol) {
  VerifyReport rep;
  rep.check_name = causal ? "equivalence.causal" : "equivalence.full";
  rep.seed = seed;
  rep.trials = trials;
  rep.tolerances = {{"abs", tol}};
  Rng rng(seed);
  for (std::size_t trial = 0; trial < trials; ++trial) {
    AttentionConfig cfg;
    cfg.d_model = 2 * uniform(rng, 1, 8);
    cfg.d_k = uniform(rng, 1, 8);
    cfg.d_v = uniform(rng, 1, 8);
    cfg.kernel = KernelForm::Exponential;
    cfg.pe.mode = PEMode::DirectSum;
    cfg.value = ValueMode::WithPE;
    cfg.filter.kind = causal ? FilterKind::Causal : FilterKind::Full;
    const std::size_t t = uniform(rng, 1, 8);
    auto params = AttentionParams::init(cfg, rng);
    auto f = Tensor::randn({t, cfg.d_model}, rng);
    auto pos = iota_positions(t);
    auto x = add(f, params.pe_integration(cfg).absolute(pos, cfg.d_model));
    auto mask = build_mask(cfg.filter, t, t);
    auto ref = reference_softmax_attention(params, 1, x, x, &mask);
    for (bool log_domain : {true, false}) {
      cfg.log_domain = log_domain;
      double dev = max_abs_diff(attention_forward(cfg, params, f, f, pos, pos), ref);
      if (dev > rep.max_deviation) rep.max_deviation = dev;
    }
  }
  rep.passed = rep.max_deviation < tol;
  rep.detail = "max elementwise deviation over " + std::to_string(trials) +
               " trials, log-domain and direct normalisation";
  return rep;
}

VerifyReport check_full_equivariance(std::uint64_t seed, std::size_t trials, double tol) {
  VerifyReport rep;
  rep.check_name = "equivariance.full";
  rep.seed = seed;
  rep.trials = trials;
  rep.tolerances = {{"abs", tol}};
  Rng rng(seed);
  std::size_t ok = 0;
  for (std::size_t trial = 0; trial < trials; ++trial) {
    AttentionConfig cfg;
    cfg.d_model = 8;
    cfg.d_k = 4;
    cfg.d_v = 4;
    cfg.kernel = kValidForms[trial % 3];
    cfg.pe.mode = kAllModes[trial % 5];
    cfg.value = trial % 2 ? ValueMode::WithPE : ValueMode::ContentOnly;
    const std::size_t t = uniform(rng, 2, 8);
    auto params = AttentionParams::init(cfg, rng);
    auto f = Tensor::randn({t, cfg.d_model}, rng);
    auto pos = iota_positions(t);
    std::vector<std::size_t> perm(t);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    // (f, t) pairs move together: the permuted sequence carries permuted positions.
    std::vector<int> ppos(t);
    for (std::size_t i = 0; i < t; ++i) ppos[i] = pos[perm[i]];
    auto pf = permute_rows(f, perm);
    auto out = attention_forward(cfg, params, f, f, pos, pos);
    auto pout = attention_forward(cfg, params, pf, pf, ppos, ppos);
    double dev = max_abs_diff(pout, permute_rows(out, perm));
    rep.max_deviation = std::max(rep.max_deviation, dev);
    if (dev < tol) {
      ++ok;
    } else if (!rep.witness) {
      rep.witness = make_witness(perm, f, dev);
    }
  }
  rep.passed = ok == trials;
  rep.detail = std::to_string(ok) + "/" + std::to_string(trials) + " permutations equivariant";
  return rep;
}

VerifyReport check_causal_witness(std::uint64_t seed, std::size_t draws, double tol,
                                  std::size_t max_attempts) {
  VerifyReport rep;
  rep.check_name = "equivariance.causal_witness";
  rep.seed = seed;
  rep.trials = draws;
  rep.tolerances = {{"min_deviation", tol}, {"max_attempts", double(max_attempts)}};
  Rng rng(seed);
  std::size_t found = 0;
  double weakest = INFINITY;
  for (std::size_t draw = 0; draw < draws; ++draw) {
    AttentionConfig cfg;
    cfg.d_model = 8;
    cfg.d_k = 8;
    cfg.d_v = 8;
    cfg.filter.kind = FilterKind::Causal;
    const std::size_t t = 6;
    auto params = AttentionParams::init(cfg, rng);
    auto x = Tensor::randn({t, cfg.d_model}, rng);
    auto pos = iota_positions(t);
    auto out = attention_forward(cfg, params, x, x, pos, pos);

    std::optional<Witness> best;
    for (std::size_t attempt = 0; attempt < max_attempts; ++attempt) {
      std::vector<std::size_t> perm(t);
      std::iota(perm.begin(), perm.end(), 0);
      if (attempt + 1 < t) {
        // Swapping i and i+1 moves key i+1, invisible to query i, into its set.
        std::swap(perm[attempt], perm[attempt + 1]);
      } else {
        std::shuffle(perm.begin(), perm.end(), rng);
      }
      auto px = permute_rows(x, perm);
      double dev = max_abs_diff(attention_forward(cfg, params, px, px, pos, pos),
                                permute_rows(out, perm));
      if (!best || dev > best->deviation) best = make_witness(perm, x, dev);
      if (dev > tol) break;
    }
    if (best && best->deviation > tol) ++found;
    weakest = std::min(weakest, best ? best->deviation : 0.0);
    if (!rep.witness || (best && best->deviation > rep.witness->deviation)) rep.witness = best;
  }
  rep.max_deviation = rep.witness ? rep.witness->deviation : 0.0;
  rep.passed = found == draws;
  rep.detail = "witness found for " + std::to_string(found) + "/" + std::to_string(draws) +
               " parameter draws; smallest witness deviation " + std::to_string(weakest);
  return rep;
}

VerifyReport check_row_stochastic(std::uint64_t seed, std::size_t trials_per_cell, double tol) {
  VerifyReport rep;
  rep.check_name = "smoother.row_stochastic";
  rep.seed = seed;
  rep.tolerances = {{"row_sum_abs", tol}};
  Rng rng(seed);
  std::size_t bad = 0;
  for (auto form : kValidForms)
    for (bool sym : {false, true})
      for (auto mode : kAllModes)
        for (const auto& filter : all_filters())
          for (std::size_t trial = 0; trial < trials_per_cell; ++trial) {
            AttentionConfig cfg;
            cfg.d_model = 8;
            cfg.d_k = 4;
            cfg.d_v = 4;
            cfg.kernel = form;
            cfg.symmetric = sym;
            cfg.pe.mode = mode;
            cfg.pe.t_max = 8;
            cfg.filter = filter;
            const std::size_t tq = uniform(rng, 1, 7), tk = tq + filter.mem_len;
            auto params = AttentionParams::init(cfg, rng);
            auto fq = Tensor::randn({tq, cfg.d_model}, rng);
            auto fk = filter.mem_len ? Tensor::randn({tk, cfg.d_model}, rng) : fq;
            auto pq = iota_positions(tq);
            auto pk = iota_positions(tk, -static_cast<int>(filter.mem_len));
            ++rep.trials;
            Tensor w;
            try {
              w = attention_weights(cfg, params, fq, fk, pq, pk);
            } catch (const DegenerateDenominatorError& e) {
              if (bad++ == 0) {
                rep.detail = "first failure: " + to_string(form) + (sym ? "/symmetric/" : "/") +
                             to_string(mode) + "/" + to_string(filter.kind) + ": " + e.what();
              }
              continue;
            }
            auto mask = build_mask(filter, tq, tk);
            bool fine = true;
            for (std::size_t i = 0; i < w.numel() / tk; ++i) {
              double row = 0.0;
              for (std::size_t j = 0; j < tk; ++j) {
                double v = w.data()[i * tk + j];
                fine = fine && v >= 0.0 && (mask(i % tq, j) || v == 0.0);
                row += v;
              }
              rep.max_deviation = std::max(rep.max_deviation, std::abs(row - 1.0));
              fine = fine && std::abs(row - 1.0) < tol;
            }
            if (!fine && bad++ == 0) {
              rep.detail = "first failure: " + to_string(form) + (sym ? "/symmetric/" : "/") +
                           to_string(mode) + "/" + to_string(filter.kind);
            }
          }
  rep.passed = bad == 0;
  if (rep.passed) {
    rep.detail = "all " + std::to_string(rep.trials) +
                 " draws non-negative with unit row sums (kernel x symmetry x pe x filter)";
  }
  return rep;
}

VerifyReport check_linear_rejected(std::uint64_t seed, std::size_t trials, std::size_t required) {
  VerifyReport rep;
  rep.check_name = "smoother.linear_rejected";
  rep.seed = seed;
  rep.trials = trials;
  rep.tolerances = {{"required_rejections", double(required)}};
  Rng rng(seed);
  std::size_t rejected = 0;
  for (std::size_t trial = 0; trial < trials; ++trial) {
    AttentionConfig cfg;
    cfg.d_model = 8;
    cfg.d_k = 8;
    cfg.d_v = 8;
    cfg.kernel = KernelForm::Linear;
    auto params = AttentionParams::init(cfg, rng);
    auto f = Tensor::randn({8, cfg.d_model}, rng);
    auto pos = iota_positions(8);
    try {
      attention_weights(cfg, params, f, f, pos, pos);
    } catch (const InvalidKernelError&) {
      ++rejected;
    }
  }
  rep.passed = rejected >= required;
  rep.max_deviation = static_cast<double>(trials - rejected);
  rep.detail = std::to_string(rejected) + "/" + std::to_string(trials) +
               " linear-kernel draws raised invalid-kernel";
  return rep;
}

VerifyReport check_attention_gradients(std::uint64_t seed, double tol, double h) {
  VerifyReport rep;
  rep.check_name = "gradients.attention";
  rep.seed = seed;
  rep.tolerances = {{"relative", tol}, {"h", h}};
  Rng rng(seed);
  const std::size_t t = 4, d = 8;
  std::size_t bad = 0;
  for (auto form : kValidForms)
    for (bool sym : {false, true})
      for (auto mode : kAllModes)
        for (auto table : {PETableKind::Sinusoidal, PETableKind::Learned})
          for (auto value : {ValueMode::WithPE, ValueMode::ContentOnly})
            for (const auto& filter : all_filters()) {
              AttentionConfig cfg;
              cfg.d_model = d;
              cfg.d_k = 4;
              cfg.d_v = 4;
              cfg.n_heads = 2;
              cfg.kernel = form;
              cfg.symmetric = sym;
              cfg.pe.mode = mode;
              cfg.pe.table = table;
              cfg.pe.t_max = 8;
              cfg.value = value;
              cfg.filter = filter;
              if (table == PETableKind::Learned &&
                  (mode == PEMode::None || mode == PEMode::SymmetricProduct ||
                   filter.kind == FilterKind::CausalWithMemory)) {
                continue;
              }
              auto params = AttentionParams::init(cfg, rng);
              std::vector<Tensor> inputs{Tensor::randn({t, d}, rng)};
              std::vector<std::string> names{"x"};
              const bool memory = filter.mem_len > 0;
              if (memory) {
                inputs.push_back(Tensor::randn({filter.mem_len, d}, rng));
                names.push_back("memory");
              }
              const std::size_t first_param = inputs.size();
              params.visit([&](const std::string& n, Tensor& p) {
                inputs.push_back(p);
                names.push_back(n);
              });
              auto probe = Tensor::randn({t, d}, rng);
              auto pq = iota_positions(t);
              auto pk = iota_positions(t + filter.mem_len, -static_cast<int>(filter.mem_len));
              auto loss = [&](const std::vector<Tensor>& v) {
                auto p = params;
                std::size_t k = first_param;
                p.visit([&](const std::string&, Tensor& x) { x = v[k++]; });
                auto keys = memory ? concat_prefix(v[1], v[0], 1) : v[0];
                return weighted_sum(attention_forward(cfg, p, v[0], keys, pq, pk), probe);
              };
              auto res = check_gradients(loss, inputs, h);
              ++rep.trials;
              if (res.max_rel_error > rep.max_deviation) rep.max_deviation = res.max_rel_error;
              if (!(res.max_rel_error < tol) && bad++ == 0) {
                rep.detail = "first failure: " + to_string(form) + (sym ? "/symmetric/" : "/") +
                             to_string(mode) + "/" + to_string(table) + "/" + to_string(value) +
                             "/" + to_string(filter.kind) + " at " + names[res.worst_input];
              }
            }
  rep.passed = bad == 0;
  if (rep.passed) {
    rep.detail = std::to_string(rep.trials) + " configuration cells, worst relative error " +
                 sci(rep.max_deviation);
  }
  return rep;
}

VerifyReport check_param_counts() {
  VerifyReport rep;
  rep.check_name = "params.attention";
  rep.tolerances = {{"xl_to_symmetric_ratio", 1.5}};
  Rng rng(0);
  std::size_t bad = 0;
  const std::pair<std::size_t, std::size_t> shapes[] = {{4, 4}, {8, 2}, {16, 8}, {64, 64}, {6, 3}};
  for (auto [d, k] : shapes) {
    for (auto mode : kAllModes)
      for (bool sym : {false, true}) {
        AttentionConfig cfg;
        cfg.d_model = d;
        cfg.d_k = k;
        cfg.d_v = k;
        cfg.symmetric = sym;
        cfg.pe.mode = mode;
        cfg.pe.t_max = 8;
        auto params = AttentionParams::init(cfg, rng);
        std::size_t allocated = 0;
        params.visit([&](const std::string& name, Tensor& x) {
          if (name != "w_v" && name != "w_o" && name != "pe_learned") allocated += x.numel();
        });
        ++rep.trials;
        if (allocated != attention_param_count(mode, sym, d, k, 8) && bad++ == 0) {
          rep.detail = "count mismatch for " + to_string(mode) + " at d_model " +
                       std::to_string(d) + ", d_k " + std::to_string(k);
        }
      }
    auto xl = attention_param_count(PEMode::XLProduct, false, d, k);
    auto sp = attention_param_count(PEMode::SymmetricProduct, true, d, k);
    ++rep.trials;
    if (2 * xl != 3 * sp && bad++ == 0) {
      rep.detail = "xl/symmetric ratio is not 3:2 at d_model " + std::to_string(d);
    }
  }
  rep.passed = bad == 0;
  if (rep.passed) {
    rep.detail = "closed-form counts match allocated tensors; xl_product : symmetric_product = 3:2";
  }
  return rep;
}

std::vector<std::string> verify_suites() {
  return {"equivalence", "equivariance", "smoother", "gradients", "params", "all"};
}

std::vector<VerifyReport> run_suite(const std::string& name, std::uint64_t seed) {
  std::vector<VerifyReport> out;
  const bool all = name == "all";
  if (all || name == "equivalence") {
    out.push_back(check_equivalence(seed, false));
    out.push_back(check_equivalence(seed, true));
  }
  if (all || name == "equivariance") {
    out.push_back(check_full_equivariance(seed));
    out.push_back(check_causal_witness(seed));
  }
  if (all || name == "smoother") {
    out.push_back(check_row_stochastic(seed));
    out.push_back(check_linear_rejected(seed));
  }
  if (all || name == "gradients") out.push_back(check_attention_gradients(seed));
  if (all || name == "params") out.push_back(check_param_counts());
  if (out.empty()) {
    throw ConfigError("unknown verify suite '" + name +
                      "' (expected equivalence, equivariance, smoother, gradients, params or all)");
  }
  return out;
}

}  // namespace kernatt
