#include "editlab/autograd.hpp"

#include <cmath>
#include <utility>

namespace editlab {

const Tensor& Var::value() const { return tape->value_of(id); }

double Var::scalar() const {
  const Tensor& t = value();
  if (t.size() != 1) throw DimensionError("scalar() on tensor " + t.shape_str());
  return t.data[0];
}

Var Tape::make(Tensor value, bool needs_grad, std::function<void(Tape&, int)> pull) {
  Node n;
  n.value = std::move(value);
  n.needs_grad = needs_grad;
  n.pull = std::move(pull);
  nodes_.push_back(std::move(n));
  return Var{this, static_cast<int>(nodes_.size()) - 1};
}

void Tape::ensure_grad(int id) {
  Node& n = nodes_[static_cast<size_t>(id)];
  if (!n.grad_ready) {
    n.grad = Tensor::zeros(n.value.shape);
    n.grad_ready = true;
  }
}

Var Tape::leaf(Tensor value) { return make(std::move(value), false, nullptr); }

Var Tape::param(Parameter& p) {
  Var v = make(p.value, p.trainable, nullptr);
  nodes_[static_cast<size_t>(v.id)].param = &p;
  param_nodes_.push_back(v.id);
  return v;
}

Var Tape::matmul(Var a, Var b) {
  Tensor out = matmul_value(a.value(), b.value());
  int ia = a.id, ib = b.id;
  bool ng = needs(a) || needs(b);
  return make(std::move(out), ng, [ia, ib](Tape& t, int self) {
    const Tensor& g = t.nodes_[static_cast<size_t>(self)].grad;
    Node& na = t.nodes_[static_cast<size_t>(ia)];
    Node& nb = t.nodes_[static_cast<size_t>(ib)];
    if (na.needs_grad) {
      t.ensure_grad(ia);
      matmul_a_bt_accumulate(g, nb.value, na.grad);
    }
    if (nb.needs_grad) {
      t.ensure_grad(ib);
      matmul_at_b_accumulate(na.value, g, nb.grad);
    }
  });
}

Var Tape::add(Var a, Var b) {
  const Tensor& ta = a.value();
  const Tensor& tb = b.value();
  if (!ta.same_shape(tb)) {
    throw DimensionError("add shape mismatch " + ta.shape_str() + " vs " + tb.shape_str());
  }
  Tensor out = ta;
  for (size_t i = 0; i < out.data.size(); ++i) out.data[i] += tb.data[i];
  int ia = a.id, ib = b.id;
  return make(std::move(out), needs(a) || needs(b), [ia, ib](Tape& t, int self) {
    const Tensor& g = t.nodes_[static_cast<size_t>(self)].grad;
    for (int src : {ia, ib}) {
      Node& n = t.nodes_[static_cast<size_t>(src)];
      if (!n.needs_grad) continue;
      t.ensure_grad(src);
      for (size_t i = 0; i < g.data.size(); ++i) n.grad.data[i] += g.data[i];
    }
  });
}

Var Tape::sub(Var a, Var b) {
  const Tensor& ta = a.value();
  const Tensor& tb = b.value();
  if (!ta.same_shape(tb)) {
    throw DimensionError("sub shape mismatch " + ta.shape_str() + " vs " + tb.shape_str());
  }
  Tensor out = ta;
  for (size_t i = 0; i < out.data.size(); ++i) out.data[i] -= tb.data[i];
  int ia = a.id, ib = b.id;
  return make(std::move(out), needs(a) || needs(b), [ia, ib](Tape& t, int self) {
    const Tensor& g = t.nodes_[static_cast<size_t>(self)].grad;
    Node& na = t.nodes_[static_cast<size_t>(ia)];
    if (na.needs_grad) {
      t.ensure_grad(ia);
      for (size_t i = 0; i < g.data.size(); ++i) na.grad.data[i] += g.data[i];
    }
    Node& nb = t.nodes_[static_cast<size_t>(ib)];
    if (nb.needs_grad) {
      t.ensure_grad(ib);
      for (size_t i = 0; i < g.data.size(); ++i) nb.grad.data[i] -= g.data[i];
    }
  });
}

Var Tape::mul(Var a, Var b) {
  const Tensor& ta = a.value();
  const Tensor& tb = b.value();
  if (!ta.same_shape(tb)) {
    throw DimensionError("mul shape mismatch " + ta.shape_str() + " vs " + tb.shape_str());
  }
  Tensor out = ta;
  for (size_t i = 0; i < out.data.size(); ++i) out.data[i] *= tb.data[i];
  int ia = a.id, ib = b.id;
  return make(std::move(out), needs(a) || needs(b), [ia, ib](Tape& t, int self) {
    const Tensor& g = t.nodes_[static_cast<size_t>(self)].grad;
    Node& na = t.nodes_[static_cast<size_t>(ia)];
    Node& nb = t.nodes_[static_cast<size_t>(ib)];
    if (na.needs_grad) {
      t.ensure_grad(ia);
      for (size_t i = 0; i < g.data.size(); ++i) na.grad.data[i] += g.data[i] * nb.value.data[i];
    }
    if (nb.needs_grad) {
      t.ensure_grad(ib);
      for (size_t i = 0; i < g.data.size(); ++i) nb.grad.data[i] += g.data[i] * na.value.data[i];
    }
  });
}

Var Tape::scale(Var a, double c) {
  Tensor out = a.value();
  for (double& v : out.data) v *= c;
  int ia = a.id;
  return make(std::move(out), needs(a), [ia, c](Tape& t, int self) {
    const Tensor& g = t.nodes_[static_cast<size_t>(self)].grad;
    Node& na = t.nodes_[static_cast<size_t>(ia)];
    if (!na.needs_grad) return;
    t.ensure_grad(ia);
    for (size_t i = 0; i < g.data.size(); ++i) na.grad.data[i] += c * g.data[i];
  });
}

Var Tape::relu(Var a) {
  Tensor out = a.value();
  for (double& v : out.data) v = v > 0.0 ? v : 0.0;
  int ia = a.id;
  return make(std::move(out), needs(a), [ia](Tape& t, int self) {
    Node& ns = t.nodes_[static_cast<size_t>(self)];
    Node& na = t.nodes_[static_cast<size_t>(ia)];
    if (!na.needs_grad) return;
    t.ensure_grad(ia);
    for (size_t i = 0; i < ns.grad.data.size(); ++i) {
      if (na.value.data[i] > 0.0) na.grad.data[i] += ns.grad.data[i];
    }
  });
}

Var Tape::sigmoid(Var a) {
  Tensor out = a.value();
  for (double& v : out.data) v = 1.0 / (1.0 + std::exp(-v));
  int ia = a.id;
  return make(std::move(out), needs(a), [ia](Tape& t, int self) {
    Node& ns = t.nodes_[static_cast<size_t>(self)];
    Node& na = t.nodes_[static_cast<size_t>(ia)];
    if (!na.needs_grad) return;
    t.ensure_grad(ia);
    for (size_t i = 0; i < ns.grad.data.size(); ++i) {
      double s = ns.value.data[i];
      na.grad.data[i] += ns.grad.data[i] * s * (1.0 - s);
    }
  });
}

Var Tape::transpose(Var a) {
  const Tensor& ta = a.value();
  int64_t m = ta.rows(), n = ta.cols();
  Tensor out = Tensor::zeros({n, m});
  for (int64_t i = 0; i < m; ++i)
    for (int64_t j = 0; j < n; ++j) out.at(j, i) = ta.at(i, j);
  int ia = a.id;
  return make(std::move(out), needs(a), [ia, m, n](Tape& t, int self) {
    const Tensor& g = t.nodes_[static_cast<size_t>(self)].grad;
    Node& na = t.nodes_[static_cast<size_t>(ia)];
    if (!na.needs_grad) return;
    t.ensure_grad(ia);
    for (int64_t i = 0; i < m; ++i)
      for (int64_t j = 0; j < n; ++j) na.grad.at(i, j) += g.at(j, i);
  });
}

Var Tape::slice_cols(Var a, int64_t c0, int64_t c1) {
  const Tensor& ta = a.value();
  int64_t m = ta.rows(), n = ta.cols();
  if (c0 < 0 || c1 > n || c0 >= c1) throw DimensionError("slice_cols range invalid");
  Tensor out = Tensor::zeros({m, c1 - c0});
  for (int64_t i = 0; i < m; ++i)
    for (int64_t j = c0; j < c1; ++j) out.at(i, j - c0) = ta.at(i, j);
  int ia = a.id;
  return make(std::move(out), needs(a), [ia, c0, c1, m](Tape& t, int self) {
    const Tensor& g = t.nodes_[static_cast<size_t>(self)].grad;
    Node& na = t.nodes_[static_cast<size_t>(ia)];
    if (!na.needs_grad) return;
    t.ensure_grad(ia);
    for (int64_t i = 0; i < m; ++i)
      for (int64_t j = c0; j < c1; ++j) na.grad.at(i, j) += g.at(i, j - c0);
  });
}

Var Tape::concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw DimensionError("concat_cols over zero parts");
  int64_t m = parts[0].value().rows();
  int64_t total = 0;
  bool ng = false;
  for (const Var& p : parts) {
    if (p.value().rows() != m) throw DimensionError("concat_cols row mismatch");
    total += p.value().cols();
    ng = ng || needs(p);
  }
  Tensor out = Tensor::zeros({m, total});
  int64_t off = 0;
  std::vector<std::pair<int, int64_t>> spans;
  for (const Var& p : parts) {
    const Tensor& tp = p.value();
    for (int64_t i = 0; i < m; ++i)
      for (int64_t j = 0; j < tp.cols(); ++j) out.at(i, off + j) = tp.at(i, j);
    spans.emplace_back(p.id, off);
    off += tp.cols();
  }
  return make(std::move(out), ng, [spans, m](Tape& t, int self) {
    const Tensor& g = t.nodes_[static_cast<size_t>(self)].grad;
    for (auto [id, off2] : spans) {
      Node& n = t.nodes_[static_cast<size_t>(id)];
      if (!n.needs_grad) continue;
      t.ensure_grad(id);
      int64_t w = n.value.cols();
      for (int64_t i = 0; i < m; ++i)
        for (int64_t j = 0; j < w; ++j) n.grad.at(i, j) += g.at(i, off2 + j);
    }
  });
}

Var Tape::take_rows(Var a, std::vector<int64_t> indices) {
  const Tensor& ta = a.value();
  int64_t n = ta.cols();
  for (int64_t idx : indices) {
    if (idx < 0 || idx >= ta.rows()) {
      throw IndexError("take_rows index " + std::to_string(idx) + " out of range [0, " +
                       std::to_string(ta.rows()) + ")");
    }
  }
  Tensor out = Tensor::zeros({static_cast<int64_t>(indices.size()), n});
  for (size_t i = 0; i < indices.size(); ++i)
    for (int64_t j = 0; j < n; ++j) out.at(static_cast<int64_t>(i), j) = ta.at(indices[i], j);
  int ia = a.id;
  return make(std::move(out), needs(a), [ia, indices = std::move(indices), n](Tape& t, int self) {
    const Tensor& g = t.nodes_[static_cast<size_t>(self)].grad;
    Node& na = t.nodes_[static_cast<size_t>(ia)];
    if (!na.needs_grad) return;
    t.ensure_grad(ia);
    for (size_t i = 0; i < indices.size(); ++i)
      for (int64_t j = 0; j < n; ++j)
        na.grad.at(indices[i], j) += g.at(static_cast<int64_t>(i), j);
  });
}

Var Tape::mean_rows(Var a) {
  const Tensor& ta = a.value();
  int64_t m = ta.rows(), n = ta.cols();
  if (m < 1) throw DimensionError("mean_rows on empty tensor");
  Tensor out = Tensor::zeros({1, n});
  for (int64_t i = 0; i < m; ++i)
    for (int64_t j = 0; j < n; ++j) out.data[static_cast<size_t>(j)] += ta.at(i, j);
  for (double& v : out.data) v /= static_cast<double>(m);
  int ia = a.id;
  return make(std::move(out), needs(a), [ia, m, n](Tape& t, int self) {
    const Tensor& g = t.nodes_[static_cast<size_t>(self)].grad;
    Node& na = t.nodes_[static_cast<size_t>(ia)];
    if (!na.needs_grad) return;
    t.ensure_grad(ia);
    double inv = 1.0 / static_cast<double>(m);
    for (int64_t i = 0; i < m; ++i)
      for (int64_t j = 0; j < n; ++j) na.grad.at(i, j) += g.data[static_cast<size_t>(j)] * inv;
  });
}

namespace {

// softmax over a strided slice, numerically stabilized by max subtraction
void softmax_slice(const double* in, double* out, int64_t n, int64_t stride) {
  double mx = in[0];
  for (int64_t i = 1; i < n; ++i) mx = std::max(mx, in[i * stride]);
  double sum = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    double e = std::exp(in[i * stride] - mx);
    out[i * stride] = e;
    sum += e;
  }
  for (int64_t i = 0; i < n; ++i) out[i * stride] /= sum;
}

void softmax_slice_backward(const double* y, const double* gy, double* gx, int64_t n,
                            int64_t stride) {
  double dot = 0.0;
  for (int64_t i = 0; i < n; ++i) dot += y[i * stride] * gy[i * stride];
  for (int64_t i = 0; i < n; ++i)
    gx[i * stride] += y[i * stride] * (gy[i * stride] - dot);
}

}  // namespace

Var Tape::softmax(Var a, int axis) {
  const Tensor& ta = a.value();
  int64_t m = ta.rows(), n = ta.cols();
  if (axis != 0 && axis != 1) throw DimensionError("softmax axis must be 0 or 1");
  if (ta.shape.size() == 1 && axis == 1) axis = 0;
  bool along_cols = (ta.shape.size() == 1) || axis == 1;  // normalize each row
  if ((along_cols && n < 1) || (!along_cols && m < 1)) {
    throw DimensionError("softmax along empty axis");
  }
  Tensor out = Tensor::zeros(ta.shape);
  if (along_cols) {
    for (int64_t i = 0; i < m; ++i) softmax_slice(&ta.data[size_t(i * n)], &out.data[size_t(i * n)], n, 1);
  } else {
    for (int64_t j = 0; j < n; ++j) softmax_slice(&ta.data[size_t(j)], &out.data[size_t(j)], m, n);
  }
  int ia = a.id;
  return make(std::move(out), needs(a), [ia, m, n, along_cols](Tape& t, int self) {
    Node& ns = t.nodes_[static_cast<size_t>(self)];
    Node& na = t.nodes_[static_cast<size_t>(ia)];
    if (!na.needs_grad) return;
    t.ensure_grad(ia);
    if (along_cols) {
      for (int64_t i = 0; i < m; ++i)
        softmax_slice_backward(&ns.value.data[size_t(i * n)], &ns.grad.data[size_t(i * n)],
                               &na.grad.data[size_t(i * n)], n, 1);
    } else {
      for (int64_t j = 0; j < n; ++j)
        softmax_slice_backward(&ns.value.data[size_t(j)], &ns.grad.data[size_t(j)],
                               &na.grad.data[size_t(j)], m, n);
    }
  });
}

Var Tape::causal_softmax(Var scores) {
  const Tensor& ts = scores.value();
  int64_t m = ts.rows(), n = ts.cols();
  if (m != n) throw DimensionError("causal_softmax expects square scores");
  Tensor out = Tensor::zeros({m, n});
  for (int64_t i = 0; i < m; ++i) {
    softmax_slice(&ts.data[size_t(i * n)], &out.data[size_t(i * n)], i + 1, 1);
  }
  int ia = scores.id;
  return make(std::move(out), needs(scores), [ia, m, n](Tape& t, int self) {
    Node& ns = t.nodes_[static_cast<size_t>(self)];
    Node& na = t.nodes_[static_cast<size_t>(ia)];
    if (!na.needs_grad) return;
    t.ensure_grad(ia);
    for (int64_t i = 0; i < m; ++i)
      softmax_slice_backward(&ns.value.data[size_t(i * n)], &ns.grad.data[size_t(i * n)],
                             &na.grad.data[size_t(i * n)], i + 1, 1);
  });
}

Var Tape::layer_norm(Var x, Var gain, Var bias, double eps) {
  const Tensor& tx = x.value();
  int64_t m = tx.rows(), n = tx.cols();
  if (gain.value().size() != n || bias.value().size() != n) {
    throw DimensionError("layer_norm gain/bias must have width " + std::to_string(n));
  }
  if (eps <= 0.0) throw NumericError("layer_norm eps must be positive");
  Tensor normalized = Tensor::zeros({m, n});
  std::vector<double> rstd(static_cast<size_t>(m));
  Tensor out = Tensor::zeros({m, n});
  const double* pg = gain.value().data.data();
  const double* pb = bias.value().data.data();
  for (int64_t i = 0; i < m; ++i) {
    double mean = 0.0;
    for (int64_t j = 0; j < n; ++j) mean += tx.at(i, j);
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (int64_t j = 0; j < n; ++j) {
      double d = tx.at(i, j) - mean;
      var += d * d;
    }
    var /= static_cast<double>(n);
    double r = 1.0 / std::sqrt(var + eps);
    rstd[static_cast<size_t>(i)] = r;
    for (int64_t j = 0; j < n; ++j) {
      double xn = (tx.at(i, j) - mean) * r;
      normalized.at(i, j) = xn;
      out.at(i, j) = xn * pg[j] + pb[j];
    }
  }
  int ix = x.id, ig = gain.id, ib = bias.id;
  return make(std::move(out), needs(x) || needs(gain) || needs(bias),
              [ix, ig, ib, m, n, normalized = std::move(normalized),
               rstd = std::move(rstd)](Tape& t, int self) {
                Node& ns = t.nodes_[static_cast<size_t>(self)];
                Node& nx = t.nodes_[static_cast<size_t>(ix)];
                Node& ng = t.nodes_[static_cast<size_t>(ig)];
                Node& nb = t.nodes_[static_cast<size_t>(ib)];
                const double* pgain = ng.value.data.data();
                if (ng.needs_grad) t.ensure_grad(ig);
                if (nb.needs_grad) t.ensure_grad(ib);
                if (nx.needs_grad) t.ensure_grad(ix);
                for (int64_t i = 0; i < m; ++i) {
                  const double* go = &ns.grad.data[size_t(i * n)];
                  const double* xn = &normalized.data[size_t(i * n)];
                  if (ng.needs_grad)
                    for (int64_t j = 0; j < n; ++j) ng.grad.data[size_t(j)] += go[j] * xn[j];
                  if (nb.needs_grad)
                    for (int64_t j = 0; j < n; ++j) nb.grad.data[size_t(j)] += go[j];
                  if (nx.needs_grad) {
                    double r = rstd[static_cast<size_t>(i)];
                    double sum_dxn = 0.0, sum_dxn_xn = 0.0;
                    for (int64_t j = 0; j < n; ++j) {
                      double dxn = go[j] * pgain[j];
                      sum_dxn += dxn;
                      sum_dxn_xn += dxn * xn[j];
                    }
                    double invn = 1.0 / static_cast<double>(n);
                    for (int64_t j = 0; j < n; ++j) {
                      double dxn = go[j] * pgain[j];
                      t.nodes_[static_cast<size_t>(ix)].grad.data[size_t(i * n + j)] +=
                          r * (dxn - invn * sum_dxn - xn[j] * invn * sum_dxn_xn);
                    }
                  }
                }
              });
}

Var Tape::cross_entropy(Var logits, std::vector<int64_t> targets) {
  const Tensor& tl = logits.value();
  int64_t t_rows = tl.rows(), vocab = tl.cols();
  if (static_cast<int64_t>(targets.size()) != t_rows) {
    throw DimensionError("cross_entropy needs one target per logit row");
  }
  for (int64_t id : targets) {
    if (id < 0 || id >= vocab) {
      throw IndexError("cross_entropy target " + std::to_string(id) + " outside vocab " +
                       std::to_string(vocab));
    }
  }
  // mean over rows of logsumexp(row) - row[target]
  double loss = 0.0;
  Tensor probs = Tensor::zeros({t_rows, vocab});
  for (int64_t i = 0; i < t_rows; ++i) {
    const double* row = &tl.data[size_t(i * vocab)];
    double mx = row[0];
    for (int64_t j = 1; j < vocab; ++j) mx = std::max(mx, row[j]);
    double sum = 0.0;
    for (int64_t j = 0; j < vocab; ++j) sum += std::exp(row[j] - mx);
    double lse = mx + std::log(sum);
    loss += lse - row[targets[static_cast<size_t>(i)]];
    for (int64_t j = 0; j < vocab; ++j)
      probs.at(i, j) = std::exp(row[j] - lse);
  }
  loss /= static_cast<double>(t_rows);
  if (!std::isfinite(loss)) throw NumericError("cross_entropy produced non-finite loss");
  int il = logits.id;
  return make(Tensor::matrix(1, 1, {loss}), needs(logits),
              [il, t_rows, vocab, targets = std::move(targets),
               probs = std::move(probs)](Tape& t, int self) {
                double g = t.nodes_[static_cast<size_t>(self)].grad.data[0];
                Node& nl = t.nodes_[static_cast<size_t>(il)];
                if (!nl.needs_grad) return;
                t.ensure_grad(il);
                double scale = g / static_cast<double>(t_rows);
                for (int64_t i = 0; i < t_rows; ++i) {
                  for (int64_t j = 0; j < vocab; ++j)
                    nl.grad.at(i, j) += scale * probs.at(i, j);
                  nl.grad.at(i, targets[static_cast<size_t>(i)]) -= scale;
                }
              });
}

Var Tape::cosine(Var u, Var v) {
  const Tensor& tu = u.value();
  const Tensor& tv = v.value();
  if (tu.size() != tv.size()) throw DimensionError("cosine length mismatch");
  double dot = 0.0, nu = 0.0, nv = 0.0;
  for (size_t i = 0; i < tu.data.size(); ++i) {
    dot += tu.data[i] * tv.data[i];
    nu += tu.data[i] * tu.data[i];
    nv += tv.data[i] * tv.data[i];
  }
  nu = std::sqrt(nu);
  nv = std::sqrt(nv);
  if (nu == 0.0 || nv == 0.0) throw NumericError("cosine of zero-norm vector");
  double c = dot / (nu * nv);
  int iu = u.id, iv = v.id;
  return make(Tensor::matrix(1, 1, {c}), needs(u) || needs(v),
              [iu, iv, nu, nv, c](Tape& t, int self) {
                double g = t.nodes_[static_cast<size_t>(self)].grad.data[0];
                Node& nuN = t.nodes_[static_cast<size_t>(iu)];
                Node& nvN = t.nodes_[static_cast<size_t>(iv)];
                if (nuN.needs_grad) {
                  t.ensure_grad(iu);
                  for (size_t i = 0; i < nuN.value.data.size(); ++i) {
                    double du = nvN.value.data[i] / (nu * nv) - c * nuN.value.data[i] / (nu * nu);
                    nuN.grad.data[i] += g * du;
                  }
                }
                if (nvN.needs_grad) {
                  t.ensure_grad(iv);
                  for (size_t i = 0; i < nvN.value.data.size(); ++i) {
                    double dv = nuN.value.data[i] / (nu * nv) - c * nvN.value.data[i] / (nv * nv);
                    nvN.grad.data[i] += g * dv;
                  }
                }
              });
}

Var Tape::binary_cross_entropy(Var probs, std::vector<double> labels) {
  const Tensor& tp = probs.value();
  if (static_cast<size_t>(tp.size()) != labels.size()) {
    throw DimensionError("binary_cross_entropy needs one label per probability");
  }
  constexpr double kClamp = 1e-12;
  double loss = 0.0;
  for (size_t i = 0; i < labels.size(); ++i) {
    double p = std::min(std::max(tp.data[i], kClamp), 1.0 - kClamp);
    loss -= labels[i] * std::log(p) + (1.0 - labels[i]) * std::log(1.0 - p);
  }
  loss /= static_cast<double>(labels.size());
  if (!std::isfinite(loss)) throw NumericError("binary_cross_entropy non-finite loss");
  int ip = probs.id;
  return make(Tensor::matrix(1, 1, {loss}), needs(probs),
              [ip, labels = std::move(labels)](Tape& t, int self) {
                double g = t.nodes_[static_cast<size_t>(self)].grad.data[0];
                Node& np = t.nodes_[static_cast<size_t>(ip)];
                if (!np.needs_grad) return;
                t.ensure_grad(ip);
                double invn = 1.0 / static_cast<double>(labels.size());
                constexpr double kClamp = 1e-12;
                for (size_t i = 0; i < labels.size(); ++i) {
                  double p = std::min(std::max(np.value.data[i], kClamp), 1.0 - kClamp);
                  np.grad.data[i] += g * invn * (p - labels[i]) / (p * (1.0 - p));
                }
              });
}

void Tape::backward(Var root) {
  if (root.tape != this) throw PreconditionError("backward on foreign tape");
  Node& r = nodes_[static_cast<size_t>(root.id)];
  if (r.value.size() != 1) throw DimensionError("backward root must be scalar");
  ensure_grad(root.id);
  r.grad.data[0] = 1.0;
  for (int id = root.id; id >= 0; --id) {
    Node& n = nodes_[static_cast<size_t>(id)];
    if (n.grad_ready && n.pull) n.pull(*this, id);
  }
}

std::vector<Tape::ParamGrad> Tape::param_grads() const {
  std::vector<ParamGrad> out;
  out.reserve(param_nodes_.size());
  for (int id : param_nodes_) {
    const Node& n = nodes_[static_cast<size_t>(id)];
    if (n.grad_ready) out.push_back({n.param, &n.grad});
  }
  return out;
}

void Tape::apply_param_grads(double scale) {
  for (int id : param_nodes_) {
    Node& n = nodes_[static_cast<size_t>(id)];
    if (!n.grad_ready || !n.param) continue;
    for (size_t i = 0; i < n.grad.data.size(); ++i) {
      n.param->grad.data[i] += scale * n.grad.data[i];
    }
  }
}

}  // namespace editlab
