#pragma once

#include "dclstm/model.hpp"

namespace dclstm {

struct IncidentSpec {
  std::vector<std::size_t> sites;
  std::size_t slot_begin = 0;  // window-relative, inclusive
  std::size_t slot_end = 0;    // window-relative, inclusive
  double override_flow = 220.0;      // total vehicles per 15-minute slot
  double override_speed_mph = 5.0;
};

struct ImpactReport {
  std::vector<double> baseline_mph;   // per site
  std::vector<double> incident_mph;
  std::vector<double> delta_mph;      // incident minus baseline
  std::size_t upstream_extent = 0;    // contiguous upstream sites with delta <= threshold
  double propagation_speed_kmh = 0.0;
  double threshold_mph = -5.0;
};

// Raw-unit cell edit: at the named sites/slots, total flow is overridden with
// band flows rescaled to their original shares (all to band 0 when the
// original total is zero) and speed is overridden. Nothing else changes.
Sample inject_raw(const Sample& raw_sample, const IncidentSpec& incident);

// inject_raw followed by re-application of the existing scaler (never refit).
Sample inject(const Sample& raw_sample, const IncidentSpec& incident, const Scaler& scaler);

ImpactReport assess(Model& model, const Sample& raw_sample, const IncidentSpec& incident,
                    const Scaler& scaler, double threshold_mph = -5.0,
                    double site_spacing_km = 0.5);

IncidentSpec parse_incident_file(const std::string& path);
std::string impact_report_csv(const ImpactReport& report);

}  // namespace dclstm
