#include "crackseg/optimizer.hpp"

#include <cmath>

#include "crackseg/errors.hpp"

namespace crackseg {

template <typename S>
AdamW<S>::AdamW(AdamWHyper hyper) : hyper_(hyper) {
  require<ConfigError>(hyper_.beta1 >= 0.0 && hyper_.beta1 < 1.0 && hyper_.beta2 >= 0.0 &&
                           hyper_.beta2 < 1.0,
                       "adamw: betas must lie in [0, 1)");
  require<ConfigError>(hyper_.eps > 0.0, "adamw: eps must be positive");
  require<ConfigError>(hyper_.weight_decay >= 0.0, "adamw: weight decay must be non-negative");
}

template <typename S>
void AdamW<S>::step(const std::vector<std::pair<Parameter<S>*, LayerGroup>>& params,
                    const GroupLrs& lrs) {
  ++t_;
  beta1_pow_ *= hyper_.beta1;
  beta2_pow_ *= hyper_.beta2;
  const S b1 = static_cast<S>(hyper_.beta1);
  const S b2 = static_cast<S>(hyper_.beta2);
  const S one_minus_b1 = S(1) - b1;
  const S one_minus_b2 = S(1) - b2;
  const S bc1 = S(1) - static_cast<S>(beta1_pow_);
  const S bc2 = S(1) - static_cast<S>(beta2_pow_);
  const S eps = static_cast<S>(hyper_.eps);
  const S lambda = static_cast<S>(hyper_.weight_decay);

  for (const auto& [p, group] : params) {
    if (!p->trainable) {
      continue;
    }
    require<ContractError>(p->grad.numel() == p->value.numel(),
                           "adamw: missing gradient for trainable parameter '", p->name, "'");
    Moments& mom = state_[p->name];
    if (mom.m.numel() == 0) {
      mom.m = Tensor<S>::zeros(p->value.shape());
      mom.v = Tensor<S>::zeros(p->value.shape());
    }
    require<ContractError>(mom.m.same_shape(p->value),
                           "adamw: state shape mismatch for parameter '", p->name, "'");
    const S lr = static_cast<S>(lrs[group]);
    S* theta = p->value.data();
    const S* g = p->grad.data();
    S* m = mom.m.data();
    S* v = mom.v.data();
    const std::int64_t n = p->value.numel();
    for (std::int64_t i = 0; i < n; ++i) {
      m[i] = b1 * m[i] + one_minus_b1 * g[i];
      v[i] = b2 * v[i] + one_minus_b2 * g[i] * g[i];
      const S mhat = m[i] / bc1;
      const S vhat = v[i] / bc2;
      const S update = mhat / std::sqrt(vhat + eps);
      if (hyper_.decay_scaled_by_lr) {
        theta[i] = theta[i] - lr * (update + lambda * theta[i]);
      } else {
        theta[i] = (S(1) - lambda) * theta[i] - lr * update;
      }
    }
  }
}

template <typename S>
void AdamW<S>::zero_grads(const std::vector<std::pair<Parameter<S>*, LayerGroup>>& params) {
  for (const auto& [p, group] : params) {
    (void)group;
    if (p->trainable) {
      p->zero_grad();
    }
  }
}

template <typename S>
std::map<std::string, Tensor<S>> AdamW<S>::export_state() const {
  std::map<std::string, Tensor<S>> out;
  for (const auto& [name, mom] : state_) {
    out.emplace("optim." + name + ".m", mom.m);
    out.emplace("optim." + name + ".v", mom.v);
  }
  out.emplace("optim.t", Tensor<S>::scalar(static_cast<S>(t_)));
  return out;
}

template <typename S>
void AdamW<S>::import_state(const std::map<std::string, Tensor<S>>& entries) {
  const auto t_it = entries.find("optim.t");
  require<CheckpointError>(t_it != entries.end(), "optimizer state is missing 'optim.t'");
  require<CheckpointError>(t_it->second.numel() == 1, "'optim.t' must be a scalar");
  t_ = static_cast<std::int64_t>(std::llround(static_cast<double>(t_it->second[0])));
  require<CheckpointError>(t_ >= 0, "'optim.t' must be non-negative");
  beta1_pow_ = 1.0;
  beta2_pow_ = 1.0;
  for (std::int64_t i = 0; i < t_; ++i) {
    beta1_pow_ *= hyper_.beta1;
    beta2_pow_ *= hyper_.beta2;
  }
  state_.clear();
  for (const auto& [key, tensor] : entries) {
    if (key.rfind("optim.", 0) != 0 || key == "optim.t") {
      continue;
    }
    const std::string rest = key.substr(6);
    if (rest.size() > 2 && rest.compare(rest.size() - 2, 2, ".m") == 0) {
      state_[rest.substr(0, rest.size() - 2)].m = tensor;
    } else if (rest.size() > 2 && rest.compare(rest.size() - 2, 2, ".v") == 0) {
      state_[rest.substr(0, rest.size() - 2)].v = tensor;
    } else {
      raise<CheckpointError>("unrecognized optimizer state entry '", key, "'");
    }
  }
  for (const auto& [name, mom] : state_) {
    require<CheckpointError>(mom.m.numel() > 0 && mom.v.numel() > 0 && mom.m.same_shape(mom.v),
                             "optimizer state for '", name, "' is incomplete");
  }
}

template class AdamW<float>;
template class AdamW<double>;

}  // namespace crackseg
