#include "ccgan/losses.hpp"

#include <cmath>

#include "ccgan/ops.hpp"

namespace ccgan {

namespace {

template <typename T>
constexpr T lo() {
  return static_cast<T>(kScoreClamp);
}
template <typename T>
constexpr T hi() {
  return T(1) - static_cast<T>(kScoreClamp);
}

}  // namespace

template <typename T>
Tensor<T> d_loss_unconditional(const Tensor<T>& rho_r, const Tensor<T>& rho_f) {
  Tensor<T> ll = add(log_clamped(rho_r, lo<T>(), hi<T>()), log1m_clamped(rho_f, lo<T>(), hi<T>()));
  return scale(mean(ll), T(-1));
}

template <typename T>
Tensor<T> d_loss_conditional(const Tensor<T>& s_r, const Tensor<T>& s_f, const Tensor<T>& s_w) {
  Tensor<T> negatives =
      add(log1m_clamped(s_f, lo<T>(), hi<T>()), log1m_clamped(s_w, lo<T>(), hi<T>()));
  Tensor<T> ll = add(log_clamped(s_r, lo<T>(), hi<T>()), scale(negatives, T(0.5)));
  return scale(mean(ll), T(-1));
}

template <typename T>
Tensor<T> cycle_loss(const Tensor<T>& x, const Tensor<T>& x_rec, const Tensor<T>& y,
                     const Tensor<T>& y_rec, T lambda1, T lambda2) {
  return add(scale(l1_distance(x_rec, x), lambda1), scale(l1_distance(y_rec, y), lambda2));
}

template <typename T>
Tensor<T> identity_loss(const Tensor<T>& emb_fake, const Tensor<T>& emb_target) {
  return l1_distance(emb_fake, emb_target);
}

template <typename T>
GeneratorLosses<T> g_losses(const Tensor<T>& rho_f, const Tensor<T>& s_f, const Tensor<T>& cycle,
                            const Tensor<T>& identity, T w_id) {
  GeneratorLosses<T> out;
  out.g_xy = add(scale(mean(log_clamped(rho_f, lo<T>(), hi<T>())), T(-1)), cycle);
  out.g_yx = add(scale(mean(log_clamped(s_f, lo<T>(), hi<T>())), T(-1)), cycle);
  if (identity.defined()) out.g_yx = add(out.g_yx, scale(identity, w_id));
  return out;
}

LossBundle LossBundle::from_values(const std::array<double, 11>& v) {
  return LossBundle{v[0], v[1], v[2], v[3], v[4], v[5], v[6], v[7], v[8], v[9], v[10]};
}

std::string LossBundle::first_non_finite() const {
  const auto v = values();
  for (std::size_t i = 0; i < v.size(); ++i)
    if (!std::isfinite(v[i])) return std::string(kColumns[i]);
  return {};
}

#define CCGAN_INSTANTIATE_LOSSES(T)                                                              \
  template Tensor<T> d_loss_unconditional(const Tensor<T>&, const Tensor<T>&);                   \
  template Tensor<T> d_loss_conditional(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);   \
  template Tensor<T> cycle_loss(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,            \
                                const Tensor<T>&, T, T);                                         \
  template Tensor<T> identity_loss(const Tensor<T>&, const Tensor<T>&);                          \
  template GeneratorLosses<T> g_losses(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,     \
                                       const Tensor<T>&, T);

CCGAN_INSTANTIATE_LOSSES(float)
CCGAN_INSTANTIATE_LOSSES(double)

#undef CCGAN_INSTANTIATE_LOSSES

}  // namespace ccgan
