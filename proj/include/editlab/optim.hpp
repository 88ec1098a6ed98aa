#pragma once

#include <functional>
#include <vector>

#include "editlab/tensor.hpp"

namespace editlab {

// Adam with decoupled weight decay. Fresh instances carry fresh moment state.
class AdamW {
 public:
  struct Options {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;
  };

  AdamW(std::vector<Parameter*> params, Options opts);
  AdamW(std::vector<Parameter*> params, double lr) : AdamW(std::move(params), Options{.lr = lr}) {}

  // Applies one update from the gradients currently held in each parameter.
  // Throws NumericError on non-finite gradients.
  void step();
  void zero_grad();

  const std::vector<Parameter*>& params() const { return params_; }

 private:
  std::vector<Parameter*> params_;
  Options opts_;
  std::vector<Tensor> m_;
  std::vector<Tensor> v_;
  int64_t t_ = 0;
};

class Tape;
struct Var;

// Mean gradient over n_items losses, accumulated into Parameter::grad.
// Items are grouped into fixed-size chunks; chunks may run on different
// threads but are reduced in index order, so the result is bit-identical
// for any thread count. Returns the mean loss.
double batch_gradients(int64_t n_items, const std::function<Var(Tape&, int64_t)>& build_loss,
                       const std::vector<Parameter*>& params, int threads);

// Central finite differences against the reverse-mode gradient.
//
// `loss` recomputes the scalar objective from the current parameter values;
// `grad` recomputes gradients into Parameter::grad (zeroing first). Samples up
// to `samples_per_param` coordinates per parameter and returns the maximum
// relative error. Non-finite losses raise NumericError.
double grad_check(const std::function<double()>& loss, const std::function<void()>& grad,
                  const std::vector<Parameter*>& params, int samples_per_param = 12,
                  double step = 1e-5, uint64_t seed = 17);

}  // namespace editlab
