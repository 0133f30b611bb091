#pragma once

#include "dclstm/data.hpp"

namespace dclstm {

inline constexpr double kKphPerMph = 1.609344;

// COBA-style speed-flow curve t = t0 + A*V^n over one link.
struct SfcParams {
  double s0_kph = 113.0;       // free-flow speed
  double s2_kph = 81.0;        // speed at capacity
  double capacity_pcu = 9320.0;  // pcu per hour
  double power = 2.8;
  double link_length_km = 0.5;
  double pcu_factor_hgv = 2.3;  // 11.6m+ band weight

  // A chosen so that travel time at capacity equals L/S2.
  double derived_a() const;
};

SfcParams sfc_calibrate(double s0_kph, double s2_kph, double capacity_pcu, double power,
                        double link_length_km);

double sfc_speed_kph(const SfcParams& params, double hourly_pcu_flow);

// Both baselines run on full-channel samples (bands 0-3, total flow, speed).
// naive: every horizon step repeats the last observed speed, in whatever
// units the sample carries.
Tensor naive_forecast(const Sample& sample);  // [p,1]

// Speed-flow prediction needs raw (unscaled) band flows and a window of at
// least four slots; hourly pcu flow aggregates the last four slots with the
// HGV band weighted by the pcu factor. Output is mph.
Tensor sfc_predict(const Sample& raw_sample, const std::vector<SfcParams>& per_site);
Tensor sfc_predict(const Sample& raw_sample, const SfcParams& params);

double hourly_pcu_flow(const Sample& raw_sample, std::size_t site, double pcu_factor_hgv);

}  // namespace dclstm
