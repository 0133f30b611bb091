#include "dclstm/baselines.hpp"

#include <cmath>
#include <stdexcept>

namespace dclstm {

double SfcParams::derived_a() const {
  return link_length_km * (1.0 / s2_kph - 1.0 / s0_kph) / std::pow(capacity_pcu, power);
}

SfcParams sfc_calibrate(double s0_kph, double s2_kph, double capacity_pcu, double power,
                        double link_length_km) {
  if (!(0.0 < s2_kph && s2_kph < s0_kph))
    throw std::invalid_argument("sfc_calibrate: need 0 < S2 < S0");
  if (capacity_pcu <= 0 || power <= 0 || link_length_km <= 0)
    throw std::invalid_argument("sfc_calibrate: capacity, power and length must be positive");
  SfcParams p;
  p.s0_kph = s0_kph;
  p.s2_kph = s2_kph;
  p.capacity_pcu = capacity_pcu;
  p.power = power;
  p.link_length_km = link_length_km;
  return p;
}

double sfc_speed_kph(const SfcParams& params, double hourly_pcu_flow) {
  const double t0 = params.link_length_km / params.s0_kph;
  const double t = t0 + params.derived_a() * std::pow(std::max(hourly_pcu_flow, 0.0), params.power);
  return params.link_length_km / t;
}

Tensor naive_forecast(const Sample& sample) {
  const Shape& s = sample.space.shape();
  const std::size_t p = s[0], n = s[1], c = s[2];
  if (c != kChannels)
    throw std::invalid_argument("naive_forecast: expects full 6-channel samples");
  Tensor pred(Shape{p, 1});
  for (std::size_t i = 0; i < p; ++i)
    pred[i] = sample.space[(i * n + (n - 1)) * c + kSpeedChannel];
  return pred;
}

double hourly_pcu_flow(const Sample& raw_sample, std::size_t site, double pcu_factor_hgv) {
  const Shape& s = raw_sample.space.shape();
  const std::size_t n = s[1], c = s[2];
  if (n < 4) throw std::invalid_argument("sfc: window must cover at least four slots");
  double v = 0.0;
  for (std::size_t k = n - 4; k < n; ++k) {
    const double* row = raw_sample.space.data() + (site * n + k) * c;
    v += row[0] + row[1] + row[2] + pcu_factor_hgv * row[3];
  }
  return v;
}

Tensor sfc_predict(const Sample& raw_sample, const std::vector<SfcParams>& per_site) {
  const std::size_t p = raw_sample.space.shape()[0];
  if (per_site.size() != p) throw std::invalid_argument("sfc_predict: one parameter set per site");
  if (raw_sample.space.shape()[2] != kChannels)
    throw std::invalid_argument("sfc_predict: expects full 6-channel raw samples");
  Tensor pred(Shape{p, 1});
  for (std::size_t i = 0; i < p; ++i) {
    const double v = hourly_pcu_flow(raw_sample, i, per_site[i].pcu_factor_hgv);
    pred[i] = sfc_speed_kph(per_site[i], v) / kKphPerMph;
  }
  return pred;
}

Tensor sfc_predict(const Sample& raw_sample, const SfcParams& params) {
  return sfc_predict(raw_sample,
                     std::vector<SfcParams>(raw_sample.space.shape()[0], params));
}

}  // namespace dclstm
