#include "kernatt/nn_ops.hpp"

#include <algorithm>
#include <cmath>

#include "tensor_internal.hpp"

namespace kernatt {

std::size_t VisibilityMask::row_count(std::size_t i) const {
  std::size_t n = 0;
  for (std::size_t j = 0; j < cols; ++j) n += bits[i * cols + j];
  return n;
}

namespace {

void expect_rank(const Tensor& t, std::size_t rank, const char* op) {
  if (!t.defined() || t.rank() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                         (t.defined() ? shape_str(t.shape()) : std::string("undefined")));
  }
}

}  // namespace

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  expect_rank(x, 2, "layer_norm");
  const std::size_t n = x.dim(0), d = x.dim(1);
  if (gamma.numel() != d || beta.numel() != d) throw DimensionError("layer_norm: affine width");
  auto xd = x.data();
  auto gd = gamma.data();
  auto bd = beta.data();
  std::vector<double> out(n * d);
  auto xhat = std::make_shared<std::vector<double>>(n * d);
  auto inv_std = std::make_shared<std::vector<double>>(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = xd.data() + i * d;
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += row[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(d);
    double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[i] = is;
    for (std::size_t j = 0; j < d; ++j) {
      double h = (row[j] - mu) * is;
      (*xhat)[i * d + j] = h;
      out[i * d + j] = h * gd[j] + bd[j];
    }
  }
  auto px = OpAccess::impl(x);
  auto pg = OpAccess::impl(gamma);
  auto pb = OpAccess::impl(beta);
  return OpAccess::make({n, d}, std::move(out), {&x, &gamma, &beta}, "layer_norm",
                        [px, pg, pb, xhat, inv_std, n, d](const std::vector<double>& g) {
                          auto* gx = OpAccess::grad_of(px);
                          auto* gg = OpAccess::grad_of(pg);
                          auto* gb = OpAccess::grad_of(pb);
                          const auto& gam = pg->data;
                          for (std::size_t i = 0; i < n; ++i) {
                            const double* gr = g.data() + i * d;
                            const double* hr = xhat->data() + i * d;
                            double s1 = 0.0, s2 = 0.0;
                            for (std::size_t j = 0; j < d; ++j) {
                              double dh = gr[j] * gam[j];
                              s1 += dh;
                              s2 += dh * hr[j];
                              if (gg) (*gg)[j] += gr[j] * hr[j];
                              if (gb) (*gb)[j] += gr[j];
                            }
                            if (!gx) continue;
                            double is = (*inv_std)[i];
                            double inv_d = 1.0 / static_cast<double>(d);
                            for (std::size_t j = 0; j < d; ++j) {
                              double dh = gr[j] * gam[j];
                              (*gx)[i * d + j] += is * (dh - inv_d * s1 - hr[j] * inv_d * s2);
                            }
                          }
                        });
}

Tensor embedding(const Tensor& table, std::span<const int> ids) {
  expect_rank(table, 2, "embedding");
  const std::size_t v = table.dim(0), d = table.dim(1);
  auto td = table.data();
  std::vector<double> out(ids.size() * d);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= v) {
      throw DimensionError("embedding: id " + std::to_string(ids[i]) + " outside table of " +
                           std::to_string(v));
    }
    std::copy_n(td.data() + static_cast<std::size_t>(ids[i]) * d, d, out.data() + i * d);
  }
  auto pt = OpAccess::impl(table);
  std::vector<int> idv(ids.begin(), ids.end());
  return OpAccess::make({ids.size(), d}, std::move(out), {&table}, "embedding",
                        [pt, idv = std::move(idv), d](const std::vector<double>& g) {
                          auto* gt = OpAccess::grad_of(pt);
                          if (!gt) return;
                          for (std::size_t i = 0; i < idv.size(); ++i) {
                            double* dst = gt->data() + static_cast<std::size_t>(idv[i]) * d;
                            for (std::size_t j = 0; j < d; ++j) dst[j] += g[i * d + j];
                          }
                        });
}

Tensor cross_entropy(const Tensor& logits, std::span<const int> targets,
                     std::span<const double> weights) {
  expect_rank(logits, 2, "cross_entropy");
  const std::size_t n = logits.dim(0), v = logits.dim(1);
  if (targets.size() != n || weights.size() != n) {
    throw DimensionError("cross_entropy: targets/weights length must equal logits rows");
  }
  auto ld = logits.data();
  auto probs = std::make_shared<std::vector<double>>(n * v);
  double total_w = 0.0;
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (targets[i] < 0 || static_cast<std::size_t>(targets[i]) >= v) {
      throw DimensionError("cross_entropy: target out of range");
    }
    const double* row = ld.data() + i * v;
    double mx = *std::max_element(row, row + v);
    double z = 0.0;
    for (std::size_t j = 0; j < v; ++j) {
      double e = std::exp(row[j] - mx);
      (*probs)[i * v + j] = e;
      z += e;
    }
    for (std::size_t j = 0; j < v; ++j) (*probs)[i * v + j] /= z;
    if (weights[i] != 0.0) {
      loss += weights[i] * (mx + std::log(z) - row[targets[i]]);
      total_w += weights[i];
    }
  }
  if (total_w <= 0.0) throw DimensionError("cross_entropy: all weights are zero");
  loss /= total_w;
  if (!std::isfinite(loss)) throw OverflowError("cross_entropy: non-finite loss");
  auto pl = OpAccess::impl(logits);
  std::vector<int> tv(targets.begin(), targets.end());
  std::vector<double> wv(weights.begin(), weights.end());
  return OpAccess::make({1}, {loss}, {&logits}, "cross_entropy",
                        [pl, probs, tv = std::move(tv), wv = std::move(wv), total_w, n,
                         v](const std::vector<double>& g) {
                          auto* gl = OpAccess::grad_of(pl);
                          if (!gl) return;
                          for (std::size_t i = 0; i < n; ++i) {
                            if (wv[i] == 0.0) continue;
                            double c = g[0] * wv[i] / total_w;
                            for (std::size_t j = 0; j < v; ++j) {
                              double p = (*probs)[i * v + j];
                              (*gl)[i * v + j] += c * (p - (static_cast<int>(j) == tv[i] ? 1.0 : 0.0));
                            }
                          }
                        });
}

Tensor split_heads(const Tensor& x, std::size_t batch, std::size_t heads) {
  expect_rank(x, 2, "split_heads");
  const std::size_t rows = x.dim(0), width = x.dim(1);
  if (batch == 0 || rows % batch != 0 || heads == 0 || width % heads != 0) {
    throw DimensionError("split_heads: " + shape_str(x.shape()) + " not divisible by batch " +
                         std::to_string(batch) + " / heads " + std::to_string(heads));
  }
  const std::size_t t = rows / batch, dk = width / heads;
  auto xd = x.data();
  std::vector<double> out(xd.size());
  auto src_index = [=](std::size_t b, std::size_t h, std::size_t i, std::size_t c) {
    return (b * t + i) * width + h * dk + c;
  };
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t h = 0; h < heads; ++h)
      for (std::size_t i = 0; i < t; ++i)
        for (std::size_t c = 0; c < dk; ++c)
          out[((b * heads + h) * t + i) * dk + c] = xd[src_index(b, h, i, c)];
  auto px = OpAccess::impl(x);
  return OpAccess::make({batch * heads, t, dk}, std::move(out), {&x}, "split_heads",
                        [px, batch, heads, t, dk, src_index](const std::vector<double>& g) {
                          auto* gx = OpAccess::grad_of(px);
                          if (!gx) return;
                          for (std::size_t b = 0; b < batch; ++b)
                            for (std::size_t h = 0; h < heads; ++h)
                              for (std::size_t i = 0; i < t; ++i)
                                for (std::size_t c = 0; c < dk; ++c)
                                  (*gx)[src_index(b, h, i, c)] +=
                                      g[((b * heads + h) * t + i) * dk + c];
                        });
}

Tensor merge_heads(const Tensor& x, std::size_t batch, std::size_t heads) {
  expect_rank(x, 3, "merge_heads");
  if (x.dim(0) != batch * heads) throw DimensionError("merge_heads: leading dimension");
  const std::size_t t = x.dim(1), dk = x.dim(2), width = heads * dk;
  auto xd = x.data();
  std::vector<double> out(xd.size());
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t h = 0; h < heads; ++h)
      for (std::size_t i = 0; i < t; ++i)
        for (std::size_t c = 0; c < dk; ++c)
          out[(b * t + i) * width + h * dk + c] = xd[((b * heads + h) * t + i) * dk + c];
  auto px = OpAccess::impl(x);
  return OpAccess::make({batch * t, width}, std::move(out), {&x}, "merge_heads",
                        [px, batch, heads, t, dk, width](const std::vector<double>& g) {
                          auto* gx = OpAccess::grad_of(px);
                          if (!gx) return;
                          for (std::size_t b = 0; b < batch; ++b)
                            for (std::size_t h = 0; h < heads; ++h)
                              for (std::size_t i = 0; i < t; ++i)
                                for (std::size_t c = 0; c < dk; ++c)
                                  (*gx)[((b * heads + h) * t + i) * dk + c] +=
                                      g[(b * t + i) * width + h * dk + c];
                        });
}

Tensor concat_prefix(const Tensor& prefix, const Tensor& x, std::size_t batch) {
  expect_rank(prefix, 2, "concat_prefix");
  expect_rank(x, 2, "concat_prefix");
  const std::size_t m = prefix.dim(0), d = prefix.dim(1);
  if (x.dim(1) != d || batch == 0 || x.dim(0) % batch != 0) {
    throw DimensionError("concat_prefix: " + shape_str(prefix.shape()) + " and " +
                         shape_str(x.shape()));
  }
  const std::size_t t = x.dim(0) / batch, rows = m + t;
  auto pd = prefix.data();
  auto xd = x.data();
  std::vector<double> out(batch * rows * d);
  for (std::size_t b = 0; b < batch; ++b) {
    std::copy_n(pd.data(), m * d, out.data() + b * rows * d);
    std::copy_n(xd.data() + b * t * d, t * d, out.data() + (b * rows + m) * d);
  }
  auto pp = OpAccess::impl(prefix);
  auto px = OpAccess::impl(x);
  return OpAccess::make({batch * rows, d}, std::move(out), {&prefix, &x}, "concat_prefix",
                        [pp, px, batch, m, t, rows, d](const std::vector<double>& g) {
                          auto* gp = OpAccess::grad_of(pp);
                          auto* gx = OpAccess::grad_of(px);
                          for (std::size_t b = 0; b < batch; ++b) {
                            const double* src = g.data() + b * rows * d;
                            if (gp)
                              for (std::size_t i = 0; i < m * d; ++i) (*gp)[i] += src[i];
                            if (gx)
                              for (std::size_t i = 0; i < t * d; ++i)
                                (*gx)[b * t * d + i] += src[m * d + i];
                          }
                        });
}

Tensor tile_rows(const Tensor& x, std::size_t batch) {
  expect_rank(x, 2, "tile_rows");
  const std::size_t n = x.numel();
  auto xd = x.data();
  std::vector<double> out(batch * n);
  for (std::size_t b = 0; b < batch; ++b) std::copy_n(xd.data(), n, out.data() + b * n);
  auto px = OpAccess::impl(x);
  return OpAccess::make({batch * x.dim(0), x.dim(1)}, std::move(out), {&x}, "tile_rows",
                        [px, batch, n](const std::vector<double>& g) {
                          auto* gx = OpAccess::grad_of(px);
                          if (!gx) return;
                          for (std::size_t b = 0; b < batch; ++b)
                            for (std::size_t i = 0; i < n; ++i) (*gx)[i] += g[b * n + i];
                        });
}

Tensor pairwise_sq_dist(const Tensor& q, const Tensor& k) {
  expect_rank(q, 3, "pairwise_sq_dist");
  expect_rank(k, 3, "pairwise_sq_dist");
  const std::size_t G = q.dim(0), tq = q.dim(1), d = q.dim(2), tk = k.dim(1);
  if (k.dim(0) != G || k.dim(2) != d) {
    throw DimensionError("pairwise_sq_dist: " + shape_str(q.shape()) + " vs " +
                         shape_str(k.shape()));
  }
  auto qd = q.data();
  auto kd = k.data();
  std::vector<double> out(G * tq * tk);
  for (std::size_t g = 0; g < G; ++g)
    for (std::size_t i = 0; i < tq; ++i)
      for (std::size_t j = 0; j < tk; ++j) {
        const double* a = qd.data() + (g * tq + i) * d;
        const double* b = kd.data() + (g * tk + j) * d;
        double s = 0.0;
        for (std::size_t c = 0; c < d; ++c) s += (a[c] - b[c]) * (a[c] - b[c]);
        out[(g * tq + i) * tk + j] = s;
      }
  auto pq = OpAccess::impl(q);
  auto pk = OpAccess::impl(k);
  return OpAccess::make({G, tq, tk}, std::move(out), {&q, &k}, "pairwise_sq_dist",
                        [pq, pk, G, tq, tk, d](const std::vector<double>& g) {
                          auto* gq = OpAccess::grad_of(pq);
                          auto* gk = OpAccess::grad_of(pk);
                          for (std::size_t b = 0; b < G; ++b)
                            for (std::size_t i = 0; i < tq; ++i)
                              for (std::size_t j = 0; j < tk; ++j) {
                                double w = 2.0 * g[(b * tq + i) * tk + j];
                                if (w == 0.0) continue;
                                const double* a = pq->data.data() + (b * tq + i) * d;
                                const double* c = pk->data.data() + (b * tk + j) * d;
                                for (std::size_t e = 0; e < d; ++e) {
                                  double diff = a[e] - c[e];
                                  if (gq) (*gq)[(b * tq + i) * d + e] += w * diff;
                                  if (gk) (*gk)[(b * tk + j) * d + e] -= w * diff;
                                }
                              }
                        });
}

Tensor relative_logits(const Tensor& q, const Tensor& table, std::size_t heads,
                       std::span<const std::size_t> index, std::size_t tk) {
  expect_rank(q, 3, "relative_logits");
  expect_rank(table, 2, "relative_logits");
  const std::size_t G = q.dim(0), tq = q.dim(1), dk = q.dim(2), rows = table.dim(0);
  if (heads == 0 || G % heads != 0 || table.dim(1) != heads * dk || index.size() != tq * tk) {
    throw DimensionError("relative_logits: q " + shape_str(q.shape()) + ", table " +
                         shape_str(table.shape()));
  }
  for (auto r : index) {
    if (r >= rows) throw PositionRangeError("relative_logits: offset index outside table");
  }
  const std::size_t width = heads * dk;
  auto qd = q.data();
  auto td = table.data();
  std::vector<double> out(G * tq * tk);
  for (std::size_t g = 0; g < G; ++g) {
    const std::size_t h = g % heads;
    for (std::size_t i = 0; i < tq; ++i) {
      const double* a = qd.data() + (g * tq + i) * dk;
      for (std::size_t j = 0; j < tk; ++j) {
        const double* r = td.data() + index[i * tk + j] * width + h * dk;
        double s = 0.0;
        for (std::size_t c = 0; c < dk; ++c) s += a[c] * r[c];
        out[(g * tq + i) * tk + j] = s;
      }
    }
  }
  auto pq = OpAccess::impl(q);
  auto pt = OpAccess::impl(table);
  std::vector<std::size_t> idx(index.begin(), index.end());
  return OpAccess::make({G, tq, tk}, std::move(out), {&q, &table}, "relative_logits",
                        [pq, pt, idx = std::move(idx), G, tq, tk, dk, heads,
                         width](const std::vector<double>& g) {
                          auto* gq = OpAccess::grad_of(pq);
                          auto* gt = OpAccess::grad_of(pt);
                          for (std::size_t b = 0; b < G; ++b) {
                            const std::size_t h = b % heads;
                            for (std::size_t i = 0; i < tq; ++i)
                              for (std::size_t j = 0; j < tk; ++j) {
                                double w = g[(b * tq + i) * tk + j];
                                if (w == 0.0) continue;
                                std::size_t roff = idx[i * tk + j] * width + h * dk;
                                std::size_t qoff = (b * tq + i) * dk;
                                for (std::size_t c = 0; c < dk; ++c) {
                                  if (gq) (*gq)[qoff + c] += w * pt->data[roff + c];
                                  if (gt) (*gt)[roff + c] += w * pq->data[qoff + c];
                                }
                              }
                          }
                        });
}

Tensor masked_normalize(const Tensor& scores, const VisibilityMask& mask, double eps) {
  if (!scores.defined() || (scores.rank() != 2 && scores.rank() != 3)) {
    throw DimensionError("masked_normalize: expected [tq x tk] or [g x tq x tk]");
  }
  const std::size_t G = scores.rank() == 3 ? scores.dim(0) : 1;
  const std::size_t tq = scores.dim(scores.rank() - 2), tk = scores.dim(scores.rank() - 1);
  if (mask.rows != tq || mask.cols != tk) {
    throw DimensionError("masked_normalize: mask " + std::to_string(mask.rows) + "x" +
                         std::to_string(mask.cols) + " vs scores " + shape_str(scores.shape()));
  }
  auto sd = scores.data();
  std::vector<double> out(sd.size(), 0.0);
  auto z = std::make_shared<std::vector<double>>(G * tq);
  for (std::size_t g = 0; g < G; ++g)
    for (std::size_t i = 0; i < tq; ++i) {
      const double* row = sd.data() + (g * tq + i) * tk;
      double total = 0.0;
      for (std::size_t j = 0; j < tk; ++j) {
        if (!mask(i, j)) continue;
        if (!(row[j] >= 0.0)) {
          if (std::isnan(row[j])) throw NonFiniteError("masked_normalize: NaN kernel score");
          throw InvalidKernelError("negative kernel score " + std::to_string(row[j]) +
                                   " at query " + std::to_string(i) + ", key " +
                                   std::to_string(j));
        }
        total += row[j];
      }
      if (!std::isfinite(total)) throw OverflowError("masked_normalize: infinite row sum");
      if (total < eps) {
        throw DegenerateDenominatorError("smoother denominator " + std::to_string(total) +
                                         " below threshold at query " + std::to_string(i));
      }
      (*z)[g * tq + i] = total;
      double* dst = out.data() + (g * tq + i) * tk;
      for (std::size_t j = 0; j < tk; ++j)
        if (mask(i, j)) dst[j] = row[j] / total;
    }
  auto ps = OpAccess::impl(scores);
  auto weights = std::make_shared<std::vector<double>>(out);
  return OpAccess::make(scores.shape(), std::move(out), {&scores}, "masked_normalize",
                        [ps, z, weights, mask, G, tq, tk](const std::vector<double>& g) {
                          auto* gs = OpAccess::grad_of(ps);
                          if (!gs) return;
                          for (std::size_t b = 0; b < G; ++b)
                            for (std::size_t i = 0; i < tq; ++i) {
                              std::size_t off = (b * tq + i) * tk;
                              double dot = 0.0;
                              for (std::size_t j = 0; j < tk; ++j) dot += g[off + j] * (*weights)[off + j];
                              double inv = 1.0 / (*z)[b * tq + i];
                              for (std::size_t j = 0; j < tk; ++j)
                                if (mask(i, j)) (*gs)[off + j] += (g[off + j] - dot) * inv;
                            }
                        });
}

Tensor masked_softmax(const Tensor& log_scores, const VisibilityMask& mask) {
  if (!log_scores.defined() || (log_scores.rank() != 2 && log_scores.rank() != 3)) {
    throw DimensionError("masked_softmax: expected [tq x tk] or [g x tq x tk]");
  }
  const std::size_t G = log_scores.rank() == 3 ? log_scores.dim(0) : 1;
  const std::size_t tq = log_scores.dim(log_scores.rank() - 2);
  const std::size_t tk = log_scores.dim(log_scores.rank() - 1);
  if (mask.rows != tq || mask.cols != tk) {
    throw DimensionError("masked_softmax: mask " + std::to_string(mask.rows) + "x" +
                         std::to_string(mask.cols) + " vs scores " +
                         shape_str(log_scores.shape()));
  }
  auto sd = log_scores.data();
  std::vector<double> out(sd.size(), 0.0);
  for (std::size_t g = 0; g < G; ++g)
    for (std::size_t i = 0; i < tq; ++i) {
      const double* row = sd.data() + (g * tq + i) * tk;
      double mx = -INFINITY;
      for (std::size_t j = 0; j < tk; ++j) {
        if (!mask(i, j)) continue;
        if (std::isnan(row[j])) throw NonFiniteError("masked_softmax: NaN log score");
        mx = std::max(mx, row[j]);
      }
      if (!std::isfinite(mx)) {
        throw NonFiniteError("masked_softmax: non-finite log score at query " + std::to_string(i));
      }
      double* dst = out.data() + (g * tq + i) * tk;
      double total = 0.0;
      for (std::size_t j = 0; j < tk; ++j)
        if (mask(i, j)) total += dst[j] = std::exp(row[j] - mx);
      for (std::size_t j = 0; j < tk; ++j) dst[j] /= total;
    }
  auto ps = OpAccess::impl(log_scores);
  auto weights = std::make_shared<std::vector<double>>(out);
  return OpAccess::make(log_scores.shape(), std::move(out), {&log_scores}, "masked_softmax",
                        [ps, weights, G, tq, tk](const std::vector<double>& g) {
                          auto* gs = OpAccess::grad_of(ps);
                          if (!gs) return;
                          const auto& w = *weights;
                          for (std::size_t b = 0; b < G; ++b)
                            for (std::size_t i = 0; i < tq; ++i) {
                              std::size_t off = (b * tq + i) * tk;
                              double dot = 0.0;
                              for (std::size_t j = 0; j < tk; ++j) dot += g[off + j] * w[off + j];
                              for (std::size_t j = 0; j < tk; ++j)
                                (*gs)[off + j] += w[off + j] * (g[off + j] - dot);
                            }
                        });
}

}  // namespace kernatt
