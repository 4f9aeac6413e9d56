#include "crackseg/loss.hpp"

#include "crackseg/errors.hpp"
#include "crackseg/ops.hpp"

namespace crackseg {

template <typename S>
Var<S> dice_loss(Var<S> pred, const Tensor<S>& target) {
  require<ContractError>(pred.tape != nullptr, "dice_loss: prediction is unbound");
  Tape<S>& t = *pred.tape;
  t.check(pred);
  const Tensor<S>& p = t.node(pred.id).value;
  require<DimensionError>(p.same_shape(target), "dice_loss: prediction shape ", p.shape_str(),
                          " does not match target shape ", target.shape_str());
  require<DimensionError>(p.rank() >= 1 && p.dim(0) >= 1,
                          "dice_loss: inputs need a batch axis");

  Var<S> y = t.leaf(target, false);
  Var<S> inter = sum_per_sample(mul(pred, y));
  Var<S> psum = sum_per_sample(pred);
  Var<S> tsum = sum_per_sample(y);
  Var<S> denom = affine(add(psum, tsum), S(1), static_cast<S>(kDiceEps));
  Var<S> ratio = divide(inter, denom);
  return mean_all(affine(ratio, S(-2), S(1)));
}

template Var<float> dice_loss<float>(Var<float>, const Tensor<float>&);
template Var<double> dice_loss<double>(Var<double>, const Tensor<double>&);

}  // namespace crackseg
