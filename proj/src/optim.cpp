#include "editlab/optim.hpp"

#include <cmath>
#include <unordered_map>

#include "editlab/autograd.hpp"
#include "editlab/errors.hpp"
#include "editlab/rng.hpp"
#include "editlab/threading.hpp"

namespace editlab {

AdamW::AdamW(std::vector<Parameter*> params, Options opts)
    : params_(std::move(params)), opts_(opts) {
  if (opts_.lr <= 0.0) throw ConfigError("learning rate must be positive");
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (Parameter* p : params_) {
    m_.push_back(Tensor::zeros(p->value.shape));
    v_.push_back(Tensor::zeros(p->value.shape));
  }
}

void AdamW::step() {
  ++t_;
  double bc1 = 1.0 - std::pow(opts_.beta1, static_cast<double>(t_));
  double bc2 = 1.0 - std::pow(opts_.beta2, static_cast<double>(t_));
  for (size_t pi = 0; pi < params_.size(); ++pi) {
    Parameter& p = *params_[pi];
    if (!p.trainable) continue;
    if (!p.grad.all_finite()) throw NumericError("non-finite gradient in optimizer step");
    Tensor& m = m_[pi];
    Tensor& v = v_[pi];
    for (size_t i = 0; i < p.value.data.size(); ++i) {
      double g = p.grad.data[i];
      m.data[i] = opts_.beta1 * m.data[i] + (1.0 - opts_.beta1) * g;
      v.data[i] = opts_.beta2 * v.data[i] + (1.0 - opts_.beta2) * g * g;
      double mhat = m.data[i] / bc1;
      double vhat = v.data[i] / bc2;
      p.value.data[i] -= opts_.lr * (mhat / (std::sqrt(vhat) + opts_.eps) +
                                     opts_.weight_decay * p.value.data[i]);
    }
  }
}

void AdamW::zero_grad() {
  for (Parameter* p : params_) p->zero_grad();
}

double batch_gradients(int64_t n_items, const std::function<Var(Tape&, int64_t)>& build_loss,
                       const std::vector<Parameter*>& params, int threads) {
  constexpr int64_t kChunk = 4;
  if (n_items <= 0) return 0.0;
  if (threads <= 0) threads = default_threads();
  std::unordered_map<Parameter*, size_t> index;
  index.reserve(params.size());
  for (size_t i = 0; i < params.size(); ++i) index[params[i]] = i;

  int64_t n_chunks = (n_items + kChunk - 1) / kChunk;
  std::vector<std::vector<Tensor>> chunk_grads(static_cast<size_t>(n_chunks));
  std::vector<double> chunk_loss(static_cast<size_t>(n_chunks), 0.0);

  parallel_for(n_chunks, threads, [&](int64_t c) {
    std::vector<Tensor> local(params.size());
    std::vector<bool> touched(params.size(), false);
    double loss_sum = 0.0;
    int64_t lo = c * kChunk, hi = std::min(n_items, lo + kChunk);
    for (int64_t i = lo; i < hi; ++i) {
      Tape tape;
      Var loss = build_loss(tape, i);
      loss_sum += loss.scalar();
      tape.backward(loss);
      for (const Tape::ParamGrad& pg : tape.param_grads()) {
        auto it = index.find(pg.param);
        if (it == index.end()) continue;
        size_t pi = it->second;
        if (!touched[pi]) {
          local[pi] = *pg.grad;
          touched[pi] = true;
        } else {
          for (size_t j = 0; j < local[pi].data.size(); ++j) {
            local[pi].data[j] += pg.grad->data[j];
          }
        }
      }
    }
    chunk_grads[static_cast<size_t>(c)] = std::move(local);
    chunk_loss[static_cast<size_t>(c)] = loss_sum;
  });

  double inv = 1.0 / static_cast<double>(n_items);
  double total_loss = 0.0;
  for (int64_t c = 0; c < n_chunks; ++c) {
    total_loss += chunk_loss[static_cast<size_t>(c)];
    const std::vector<Tensor>& local = chunk_grads[static_cast<size_t>(c)];
    for (size_t pi = 0; pi < params.size(); ++pi) {
      if (local[pi].data.empty()) continue;
      Tensor& g = params[pi]->grad;
      for (size_t j = 0; j < g.data.size(); ++j) g.data[j] += inv * local[pi].data[j];
    }
  }
  return total_loss * inv;
}

double grad_check(const std::function<double()>& loss, const std::function<void()>& grad,
                  const std::vector<Parameter*>& params, int samples_per_param, double step,
                  uint64_t seed) {
  grad();
  std::vector<Tensor> analytic;
  analytic.reserve(params.size());
  for (Parameter* p : params) analytic.push_back(p->grad);

  double max_rel = 0.0;
  for (size_t pi = 0; pi < params.size(); ++pi) {
    Parameter& p = *params[pi];
    int64_t n = p.value.size();
    Rng rng = Rng::fork(seed, 0x6d6f, pi);
    int samples = static_cast<int>(std::min<int64_t>(n, samples_per_param));
    for (int s = 0; s < samples; ++s) {
      int64_t idx = n <= samples_per_param ? s : static_cast<int64_t>(rng.uniform_int(uint64_t(n)));
      double saved = p.value.data[static_cast<size_t>(idx)];
      p.value.data[static_cast<size_t>(idx)] = saved + step;
      double lp = loss();
      p.value.data[static_cast<size_t>(idx)] = saved - step;
      double lm = loss();
      p.value.data[static_cast<size_t>(idx)] = saved;
      if (!std::isfinite(lp) || !std::isfinite(lm)) {
        throw NumericError("non-finite loss during finite-difference probe");
      }
      double fd = (lp - lm) / (2.0 * step);
      double an = analytic[pi].data[static_cast<size_t>(idx)];
      double denom = std::max(std::abs(fd), std::abs(an));
      if (denom < 1e-8) continue;  // both effectively zero
      max_rel = std::max(max_rel, std::abs(fd - an) / denom);
    }
  }
  return max_rel;
}

}  // namespace editlab
