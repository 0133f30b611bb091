#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "dclstm/tensor.hpp"

namespace dclstm {

inline constexpr std::size_t kSlotsPerDay = 92;  // 24h at 15 min minus 00:00-01:00
inline constexpr std::size_t kChannels = 6;      // four band flows, total flow, speed
inline constexpr std::size_t kSpeedChannel = 5;
inline constexpr std::size_t kFlowChannels = 5;
inline constexpr std::size_t kMarkerDim = 8;

// -------- calendar --------

struct Date {
  int y = 1970;
  unsigned m = 1;  // 1..12
  unsigned d = 1;  // 1..31
  bool operator==(const Date&) const = default;
  auto operator<=>(const Date&) const = default;
};

long days_from_civil(const Date& date);
Date civil_from_days(long z);
int weekday(const Date& date);  // 0 = Monday .. 6 = Sunday
bool is_weekday(const Date& date);
Date add_days(const Date& date, int n);
Date next_weekday_on_or_after(const Date& date);
std::string date_str(const Date& date);           // YYYY-MM-DD
std::optional<Date> parse_date(const std::string& s);

// -------- raw site-day records --------

struct SiteDay {
  std::string site_id;
  Date date;
  std::array<std::array<double, kChannels>, kSlotsPerDay> values{};
  std::array<bool, kSlotsPerDay> valid{};

  std::size_t missing_count() const;
};

struct IngestStats {
  std::size_t rows = 0;
  std::size_t invalid_rows = 0;
  std::size_t consistency_warnings = 0;  // total flow vs band sum
  std::vector<std::string> warnings;
};

// CSV header: site_id,timestamp,flow_0_52,flow_52_66,flow_66_116,flow_116p,total_flow,avg_speed_mph
// Blank fields mark missing; bad rows are flagged invalid, not fatal.
std::vector<SiteDay> ingest_csv(const std::vector<std::string>& paths, IngestStats* stats = nullptr);

// -------- quality filter / QA report --------

struct QaRow {
  std::string label;  // YYYY-MM or "Total"
  std::size_t weekday_count = 0;
  std::size_t valid_records = 0;
  std::size_t expected_records = 0;
  double missing_rate = 0.0;
};

struct QaReport {
  std::vector<QaRow> months;
  QaRow total;
  std::vector<std::string> dropped_sites;
  std::vector<std::string> warnings;
};

std::string render_qa(const QaReport& report);

struct QualityResult {
  std::vector<SiteDay> kept;
  QaReport report;
};

QualityResult quality_filter(const std::vector<SiteDay>& sitedays, double max_missing_fraction);

// -------- assembled corridor --------

enum class Provenance : std::uint8_t {
  Observed = 0,
  InfilledSameDay = 1,
  InfilledPrevWeek = 2,
  Missing = 3,
};

struct CorridorDataset {
  std::vector<std::string> sites;  // index 0 = most downstream
  std::vector<Date> days;          // ascending weekdays
  std::vector<double> grid;        // [site][day][slot][channel]
  std::vector<std::uint8_t> provenance;  // [site][day][slot]

  std::size_t n_sites() const { return sites.size(); }
  std::size_t n_days() const { return days.size(); }

  std::size_t cell(std::size_t s, std::size_t d, std::size_t slot, std::size_t c) const {
    return ((s * days.size() + d) * kSlotsPerDay + slot) * kChannels + c;
  }
  double& at(std::size_t s, std::size_t d, std::size_t slot, std::size_t c) {
    return grid[cell(s, d, slot, c)];
  }
  double at(std::size_t s, std::size_t d, std::size_t slot, std::size_t c) const {
    return grid[cell(s, d, slot, c)];
  }
  Provenance prov(std::size_t s, std::size_t d, std::size_t slot) const {
    return static_cast<Provenance>(provenance[(s * days.size() + d) * kSlotsPerDay + slot]);
  }
  void set_prov(std::size_t s, std::size_t d, std::size_t slot, Provenance p) {
    provenance[(s * days.size() + d) * kSlotsPerDay + slot] = static_cast<std::uint8_t>(p);
  }
};

// Site order follows first appearance in the input (caller supplies files in
// downstream-to-upstream order); missing site-days become fully Missing.
CorridorDataset assemble(const std::vector<SiteDay>& sitedays);

// Gaps of 1-3 slots: carry the most recent valid same-day value forward.
// Gaps of 4+: copy the same slots from the same weekday one week earlier.
// Fallbacks recorded as warnings.
std::vector<std::string> infill(CorridorDataset& ds);

// -------- scaling --------

struct Scaler {
  std::array<double, kFlowChannels> mean{};
  std::array<double, kFlowChannels> stdev{};
  double speed_divisor = 100.0;

  double transform(std::size_t channel, double v) const;
  double invert(std::size_t channel, double v) const;
};

Scaler fit_scaler(const CorridorDataset& ds, const std::vector<std::size_t>& train_days);
void apply_scaler(CorridorDataset& ds, const Scaler& scaler);
void invert_scaler(CorridorDataset& ds, const Scaler& scaler);

// -------- samples --------

struct Sample {
  Tensor space;   // [p, n, c]
  Tensor time;    // [n, p, c]  axis transpose of space
  Tensor marker;  // [p, 8]
  Tensor target;  // [p, h] speeds for the slots following the window
  Date date;
  std::size_t anchor_slot = 0;  // last input slot
};

std::array<double, kMarkerDim> encode_marker(const Date& date, std::size_t slot);

// Windows never cross day boundaries: per selected day, 92 - n - h + 1 samples.
// channels selects raw channel indices for the input tensors (targets always
// read the speed channel).
std::vector<Sample> make_samples(const CorridorDataset& ds, std::size_t n, std::size_t h,
                                 const std::vector<std::size_t>& day_idx,
                                 const std::vector<std::size_t>& channels);

std::vector<std::size_t> all_channels();

// In-place scaling of samples built from a raw dataset. channels must match
// the set used by make_samples.
void scale_samples(std::vector<Sample>& samples, const Scaler& scaler,
                   const std::vector<std::size_t>& channels);
void scale_sample(Sample& sample, const Scaler& scaler, const std::vector<std::size_t>& channels);

// -------- synthetic corridor --------

struct CongestionEvent {
  std::size_t day = 0;
  std::size_t site = 0;       // origin (queue grows toward higher indices)
  std::size_t start_slot = 0;
  std::size_t duration = 6;   // slots at the origin
  double severity = 0.3;      // speed multiplier at the core, in (0,1)
};

struct SynthParams {
  std::size_t sites = 60;
  std::size_t days = 42;
  Date start{2017, 9, 4};  // a Monday
  double free_flow_mph = 70.0;
  double base_flow = 420.0;  // total vehicles per 15 min at the reference site
  double capacity_flow = 760.0;
  std::vector<std::size_t> ramp_sites{14, 38};  // flow step at and above these indices
  double ramp_step = 0.18;
  bool dow_modifiers = true;
  double dow_amplitude = 0.22;  // Monday AM / Friday PM extra demand
  double speed_noise_mph = 1.5;
  double flow_noise_frac = 0.04;
  double events_per_day = 2.0;
  double queue_speed_kmh = 12.0;
  double site_spacing_km = 0.5;
  std::vector<CongestionEvent> extra_events;  // deterministic injected events
};

CorridorDataset synthesize_corridor(std::uint64_t seed, const SynthParams& params);

}  // namespace dclstm
