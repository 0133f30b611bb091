#include "dclstm/scenario.hpp"

#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace dclstm {

Sample inject_raw(const Sample& raw_sample, const IncidentSpec& incident) {
  const Shape& s = raw_sample.space.shape();
  const std::size_t p = s[0], n = s[1], c = s[2];
  if (c != kChannels) throw std::invalid_argument("inject: expects full 6-channel raw samples");
  if (incident.slot_begin > incident.slot_end || incident.slot_end >= n)
    throw std::invalid_argument("inject: incident slots outside the sample window");
  Sample out = raw_sample;
  for (std::size_t site : incident.sites) {
    if (site >= p) throw std::invalid_argument("inject: site index outside corridor");
    for (std::size_t k = incident.slot_begin; k <= incident.slot_end; ++k) {
      double* row = out.space.data() + (site * n + k) * c;
      const double orig_total = row[4];
      double bands[4];
      if (orig_total > 0.0) {
        for (int b = 0; b < 4; ++b) bands[b] = row[b] / orig_total * incident.override_flow;
      } else {
        bands[0] = incident.override_flow;
        bands[1] = bands[2] = bands[3] = 0.0;
      }
      double total = 0.0;
      for (int b = 0; b < 4; ++b) {
        row[b] = bands[b];
        total += bands[b];
      }
      row[4] = total;
      row[kSpeedChannel] = incident.override_speed_mph;
      // keep the transposed view consistent
      double* trow = out.time.data() + (k * p + site) * c;
      for (std::size_t ci = 0; ci < c; ++ci) trow[ci] = row[ci];
    }
  }
  return out;
}

Sample inject(const Sample& raw_sample, const IncidentSpec& incident, const Scaler& scaler) {
  Sample out = inject_raw(raw_sample, incident);
  scale_sample(out, scaler, all_channels());
  return out;
}

ImpactReport assess(Model& model, const Sample& raw_sample, const IncidentSpec& incident,
                    const Scaler& scaler, double threshold_mph, double site_spacing_km) {
  if (model.train_steps() == 0) throw std::runtime_error("assess: model has not been trained");
  Sample baseline = raw_sample;
  scale_sample(baseline, scaler, all_channels());
  Sample hit = inject(raw_sample, incident, scaler);

  const Tensor base_pred = model.forward(baseline, Mode::Infer);
  const Tensor inc_pred = model.forward(hit, Mode::Infer);

  ImpactReport report;
  report.threshold_mph = threshold_mph;
  const std::size_t p = base_pred.shape()[0];
  for (std::size_t i = 0; i < p; ++i) {
    const double b = base_pred[i] * scaler.speed_divisor;
    const double v = inc_pred[i] * scaler.speed_divisor;
    report.baseline_mph.push_back(b);
    report.incident_mph.push_back(v);
    report.delta_mph.push_back(v - b);
  }

  std::size_t origin = 0;
  for (std::size_t s : incident.sites) origin = std::max(origin, s);
  for (std::size_t s = origin + 1; s < p; ++s) {
    if (report.delta_mph[s] <= threshold_mph) ++report.upstream_extent;
    else break;
  }
  const double horizon_hours = model.spec().horizon * 0.25;
  report.propagation_speed_kmh =
      static_cast<double>(report.upstream_extent) * site_spacing_km / horizon_hours;
  return report;
}

IncidentSpec parse_incident_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open scenario file " + path);
  IncidentSpec spec;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw std::runtime_error("bad scenario line: " + line);
    const std::string key = line.substr(0, eq);
    const std::string val = line.substr(eq + 1);
    if (key == "sites") {
      std::istringstream is(val);
      std::string tok;
      while (std::getline(is, tok, ',')) spec.sites.push_back(std::stoul(tok));
    } else if (key == "slot_begin") {
      spec.slot_begin = std::stoul(val);
    } else if (key == "slot_end") {
      spec.slot_end = std::stoul(val);
    } else if (key == "flow") {
      spec.override_flow = std::stod(val);
    } else if (key == "speed_mph") {
      spec.override_speed_mph = std::stod(val);
    } else {
      throw std::runtime_error("unknown scenario key: " + key);
    }
  }
  if (spec.sites.empty()) throw std::runtime_error("scenario file names no sites");
  return spec;
}

std::string impact_report_csv(const ImpactReport& report) {
  std::ostringstream os;
  os << "site,baseline_mph,incident_mph,delta_mph\n";
  os.setf(std::ios::fixed);
  os.precision(4);
  for (std::size_t i = 0; i < report.baseline_mph.size(); ++i) {
    os << i << "," << report.baseline_mph[i] << "," << report.incident_mph[i] << ","
       << report.delta_mph[i] << "\n";
  }
  return os.str();
}

}  // namespace dclstm
