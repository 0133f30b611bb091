#include "dclstm/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <random>
#include <set>
#include <sstream>
#include <stdexcept>

namespace dclstm {

// -------- calendar (Howard Hinnant's civil-date algorithms) --------

long days_from_civil(const Date& date) {
  int y = date.y;
  const unsigned m = date.m, d = date.d;
  y -= m <= 2;
  const long era = (y >= 0 ? y : y - 399) / 400;
  const unsigned yoe = static_cast<unsigned>(y - era * 400);
  const unsigned doy = (153 * (m + (m > 2 ? -3 : 9)) + 2) / 5 + d - 1;
  const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
  return era * 146097 + static_cast<long>(doe) - 719468;
}

Date civil_from_days(long z) {
  z += 719468;
  const long era = (z >= 0 ? z : z - 146096) / 146097;
  const unsigned doe = static_cast<unsigned>(z - era * 146097);
  const unsigned yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
  const long y = static_cast<long>(yoe) + era * 400;
  const unsigned doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
  const unsigned mp = (5 * doy + 2) / 153;
  const unsigned d = doy - (153 * mp + 2) / 5 + 1;
  const unsigned m = mp + (mp < 10 ? 3 : -9);
  return Date{static_cast<int>(y + (m <= 2)), m, d};
}

int weekday(const Date& date) {
  const long z = days_from_civil(date);
  return static_cast<int>(((z % 7) + 10) % 7);  // 1970-01-01 was a Thursday; 0 = Monday
}

bool is_weekday(const Date& date) { return weekday(date) < 5; }

Date add_days(const Date& date, int n) { return civil_from_days(days_from_civil(date) + n); }

Date next_weekday_on_or_after(const Date& date) {
  Date d = date;
  while (!is_weekday(d)) d = add_days(d, 1);
  return d;
}

std::string date_str(const Date& date) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%04d-%02u-%02u", date.y, date.m, date.d);
  return buf;
}

std::optional<Date> parse_date(const std::string& s) {
  int y;
  unsigned m, d;
  if (std::sscanf(s.c_str(), "%d-%u-%u", &y, &m, &d) != 3) return std::nullopt;
  if (m < 1 || m > 12 || d < 1 || d > 31) return std::nullopt;
  return Date{y, m, d};
}

std::size_t SiteDay::missing_count() const {
  std::size_t n = 0;
  for (bool v : valid)
    if (!v) ++n;
  return n;
}

// -------- CSV ingestion --------

namespace {

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur += ch;
    }
  }
  out.push_back(cur);
  return out;
}

bool parse_timestamp(const std::string& s, Date* date, int* minutes) {
  int y, hh, mm;
  unsigned mo, dd;
  int ss = 0;
  int n = std::sscanf(s.c_str(), "%d-%u-%u%*1[T ]%d:%d:%d", &y, &mo, &dd, &hh, &mm, &ss);
  if (n < 5) return false;
  if (mo < 1 || mo > 12 || dd < 1 || dd > 31 || hh < 0 || hh > 23 || mm < 0 || mm > 59) return false;
  *date = Date{y, mo, dd};
  *minutes = hh * 60 + mm;
  return true;
}

bool parse_field(const std::string& s, double* out) {
  if (s.empty()) return false;
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (end == s.c_str() || *end != '\0') return false;
  *out = v;
  return true;
}

double month_key(const Date& d) { return d.y * 100 + static_cast<int>(d.m); }

std::string month_label(const Date& d) {
  char buf[8];
  std::snprintf(buf, sizeof(buf), "%04d-%02u", d.y, d.m);
  return buf;
}

}  // namespace

std::vector<SiteDay> ingest_csv(const std::vector<std::string>& paths, IngestStats* stats) {
  IngestStats local;
  IngestStats& st = stats ? *stats : local;
  std::vector<SiteDay> out;
  std::map<std::pair<std::string, long>, std::size_t> index;  // (site, day number) -> out index
  std::vector<std::string> site_order;

  for (const auto& path : paths) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("ingest_csv: cannot open " + path);
    std::string line;
    bool first = true;
    while (std::getline(in, line)) {
      if (first) {
        first = false;
        if (line.find("site_id") != std::string::npos) continue;  // header
      }
      if (line.empty()) continue;
      ++st.rows;
      auto fields = split_csv(line);
      if (fields.size() != 8) {
        ++st.invalid_rows;
        continue;
      }
      Date date;
      int minutes;
      if (!parse_timestamp(fields[1], &date, &minutes) || minutes % 15 != 0) {
        ++st.invalid_rows;
        continue;
      }
      const int slot = minutes / 15 - 4;  // drop 00:00-01:00
      if (slot < 0) continue;

      auto key = std::make_pair(fields[0], days_from_civil(date));
      auto it = index.find(key);
      if (it == index.end()) {
        it = index.emplace(key, out.size()).first;
        SiteDay sd;
        sd.site_id = fields[0];
        sd.date = date;
        out.push_back(std::move(sd));
      }
      SiteDay& sd = out[it->second];

      double vals[6];
      bool blank = false;
      bool bad = false;
      for (int i = 0; i < 6; ++i) {
        if (fields[2 + i].empty()) {
          blank = true;
          continue;
        }
        if (!parse_field(fields[2 + i], &vals[i])) bad = true;
      }
      if (blank && !bad) continue;  // missing slot, stays invalid in the mask
      if (bad || vals[0] < 0 || vals[1] < 0 || vals[2] < 0 || vals[3] < 0 || vals[4] < 0 ||
          vals[5] < 0 || vals[5] > 120) {
        ++st.invalid_rows;
        continue;
      }
      const double band_sum = vals[0] + vals[1] + vals[2] + vals[3];
      if (std::fabs(band_sum - vals[4]) > 0.5) {
        ++st.consistency_warnings;
        st.warnings.push_back("total flow " + fields[6] + " != band sum at " + fields[0] + " " +
                              fields[1]);
      }
      for (int i = 0; i < 6; ++i) sd.values[slot][i] = vals[i];
      sd.valid[slot] = true;
    }
  }

  // keep site-major, day-ascending ordering by first appearance of each site
  std::map<std::string, std::size_t> site_rank;
  for (const auto& sd : out) {
    if (!site_rank.count(sd.site_id)) site_rank[sd.site_id] = site_rank.size();
  }
  std::stable_sort(out.begin(), out.end(), [&](const SiteDay& a, const SiteDay& b) {
    if (a.site_id != b.site_id) return site_rank[a.site_id] < site_rank[b.site_id];
    return a.date < b.date;
  });
  return out;
}

// -------- quality filter --------

QualityResult quality_filter(const std::vector<SiteDay>& sitedays, double max_missing_fraction) {
  QualityResult result;

  std::set<long> day_set;
  for (const auto& sd : sitedays) day_set.insert(days_from_civil(sd.date));
  const std::size_t n_days = day_set.size();
  if (n_days == 0) throw std::runtime_error("quality_filter: no input data");

  std::vector<std::string> site_order;
  std::map<std::string, std::size_t> valid_per_site;
  for (const auto& sd : sitedays) {
    if (!valid_per_site.count(sd.site_id)) site_order.push_back(sd.site_id);
    std::size_t v = 0;
    for (bool b : sd.valid)
      if (b) ++v;
    valid_per_site[sd.site_id] += v;
  }

  std::set<std::string> kept_sites;
  const std::size_t expected_per_site = n_days * kSlotsPerDay;
  for (const auto& site : site_order) {
    const std::size_t valid = valid_per_site[site];
    const double missing = 1.0 - static_cast<double>(valid) / static_cast<double>(expected_per_site);
    if (valid == 0 || missing > max_missing_fraction) {
      result.report.dropped_sites.push_back(site);
    } else {
      kept_sites.insert(site);
    }
  }
  if (kept_sites.empty()) throw std::runtime_error("quality_filter: all sites dropped");

  // QA table over kept sites, one row per calendar month
  std::map<double, QaRow> months;
  std::map<double, std::set<long>> month_days;
  for (const auto& sd : sitedays) {
    if (!kept_sites.count(sd.site_id)) continue;
    result.kept.push_back(sd);
    QaRow& row = months[month_key(sd.date)];
    if (row.label.empty()) row.label = month_label(sd.date);
    month_days[month_key(sd.date)].insert(days_from_civil(sd.date));
    for (bool v : sd.valid)
      if (v) ++row.valid_records;
  }
  for (auto& [key, row] : months) {
    row.weekday_count = month_days[key].size();
    row.expected_records = row.weekday_count * kept_sites.size() * kSlotsPerDay;
    row.missing_rate = 1.0 - static_cast<double>(row.valid_records) / row.expected_records;
    result.report.months.push_back(row);
    result.report.total.valid_records += row.valid_records;
    result.report.total.expected_records += row.expected_records;
    result.report.total.weekday_count += row.weekday_count;
  }
  result.report.total.label = "Total";
  result.report.total.missing_rate =
      1.0 - static_cast<double>(result.report.total.valid_records) / result.report.total.expected_records;
  return result;
}

std::string render_qa(const QaReport& report) {
  std::ostringstream os;
  os << "Month     Weekdays  Valid      Expected   Missing\n";
  auto row = [&os](const QaRow& r) {
    char buf[96];
    std::snprintf(buf, sizeof(buf), "%-9s %8zu  %-10zu %-10zu %.2f%%\n", r.label.c_str(),
                  r.weekday_count, r.valid_records, r.expected_records, r.missing_rate * 100.0);
    os << buf;
  };
  for (const auto& r : report.months) row(r);
  row(report.total);
  for (const auto& s : report.dropped_sites) os << "dropped site: " << s << "\n";
  return os.str();
}

// -------- assembly and infill --------

CorridorDataset assemble(const std::vector<SiteDay>& sitedays) {
  CorridorDataset ds;
  std::set<long> day_set;
  std::map<std::string, std::size_t> site_rank;
  for (const auto& sd : sitedays) {
    day_set.insert(days_from_civil(sd.date));
    if (!site_rank.count(sd.site_id)) {
      site_rank[sd.site_id] = ds.sites.size();
      ds.sites.push_back(sd.site_id);
    }
  }
  for (long z : day_set) ds.days.push_back(civil_from_days(z));
  ds.grid.assign(ds.sites.size() * ds.days.size() * kSlotsPerDay * kChannels, 0.0);
  ds.provenance.assign(ds.sites.size() * ds.days.size() * kSlotsPerDay,
                       static_cast<std::uint8_t>(Provenance::Missing));
  std::map<long, std::size_t> day_index;
  for (std::size_t i = 0; i < ds.days.size(); ++i) day_index[days_from_civil(ds.days[i])] = i;
  for (const auto& sd : sitedays) {
    const std::size_t s = site_rank[sd.site_id];
    const std::size_t d = day_index[days_from_civil(sd.date)];
    for (std::size_t slot = 0; slot < kSlotsPerDay; ++slot) {
      if (!sd.valid[slot]) continue;
      for (std::size_t c = 0; c < kChannels; ++c) ds.at(s, d, slot, c) = sd.values[slot][c];
      ds.set_prov(s, d, slot, Provenance::Observed);
    }
  }
  return ds;
}

namespace {

void copy_cell(CorridorDataset& ds, std::size_t s, std::size_t dst_d, std::size_t dst_slot,
               std::size_t src_d, std::size_t src_slot, Provenance p) {
  for (std::size_t c = 0; c < kChannels; ++c)
    ds.at(s, dst_d, dst_slot, c) = ds.at(s, src_d, src_slot, c);
  ds.set_prov(s, dst_d, dst_slot, p);
}

}  // namespace

std::vector<std::string> infill(CorridorDataset& ds) {
  std::vector<std::string> warnings;
  std::map<long, std::size_t> day_index;
  for (std::size_t i = 0; i < ds.days.size(); ++i) day_index[days_from_civil(ds.days[i])] = i;

  for (std::size_t s = 0; s < ds.n_sites(); ++s) {
    for (std::size_t d = 0; d < ds.n_days(); ++d) {
      std::size_t slot = 0;
      while (slot < kSlotsPerDay) {
        if (ds.prov(s, d, slot) != Provenance::Missing) {
          ++slot;
          continue;
        }
        std::size_t end = slot;
        while (end < kSlotsPerDay && ds.prov(s, d, end) == Provenance::Missing) ++end;
        const std::size_t gap = end - slot;

        auto same_day_fill = [&](bool warn_tag) {
          for (std::size_t t = slot; t < end; ++t) {
            if (t > 0 && ds.prov(s, d, t - 1) != Provenance::Missing) {
              copy_cell(ds, s, d, t, d, t - 1, Provenance::InfilledSameDay);
            } else if (end < kSlotsPerDay) {
              copy_cell(ds, s, d, t, d, end, Provenance::InfilledSameDay);
              warnings.push_back("backfill at " + ds.sites[s] + " " + date_str(ds.days[d]));
            } else {
              return false;  // whole day missing
            }
          }
          if (warn_tag)
            warnings.push_back("no prior-week donor at " + ds.sites[s] + " " + date_str(ds.days[d]));
          return true;
        };

        if (gap < 4) {
          same_day_fill(false);
        } else {
          const long donor_z = days_from_civil(ds.days[d]) - 7;
          auto it = day_index.find(donor_z);
          bool donor_ok = false;
          if (it != day_index.end()) {
            donor_ok = true;
            for (std::size_t t = slot; t < end; ++t) {
              if (ds.prov(s, it->second, t) == Provenance::Missing) donor_ok = false;
            }
          }
          if (donor_ok) {
            for (std::size_t t = slot; t < end; ++t)
              copy_cell(ds, s, d, t, it->second, t, Provenance::InfilledPrevWeek);
          } else if (!same_day_fill(true)) {
            // whole day with no donor: copy the nearest available day
            bool done = false;
            for (std::size_t off = 1; off < ds.n_days() && !done; ++off) {
              for (int sign : {-1, 1}) {
                const long dd = static_cast<long>(d) + sign * static_cast<long>(off);
                if (dd < 0 || dd >= static_cast<long>(ds.n_days())) continue;
                bool ok = true;
                for (std::size_t t = slot; t < end; ++t)
                  if (ds.prov(s, dd, t) == Provenance::Missing) ok = false;
                if (ok) {
                  for (std::size_t t = slot; t < end; ++t)
                    copy_cell(ds, s, d, t, dd, t, Provenance::InfilledPrevWeek);
                  warnings.push_back("whole-day fill from " + date_str(ds.days[dd]) + " at " +
                                     ds.sites[s] + " " + date_str(ds.days[d]));
                  done = true;
                  break;
                }
              }
            }
            if (!done)
              throw std::runtime_error("infill: no donor data for site " + ds.sites[s]);
          }
        }
        slot = end;
      }
    }
  }
  return warnings;
}

// -------- scaling --------

double Scaler::transform(std::size_t channel, double v) const {
  if (channel == kSpeedChannel) return v / speed_divisor;
  return (v - mean[channel]) / stdev[channel];
}

double Scaler::invert(std::size_t channel, double v) const {
  if (channel == kSpeedChannel) return v * speed_divisor;
  return v * stdev[channel] + mean[channel];
}

Scaler fit_scaler(const CorridorDataset& ds, const std::vector<std::size_t>& train_days) {
  Scaler sc;
  const std::size_t n = ds.n_sites() * train_days.size() * kSlotsPerDay;
  if (n == 0) throw std::runtime_error("fit_scaler: empty training split");
  for (std::size_t c = 0; c < kFlowChannels; ++c) {
    double sum = 0.0;
    for (std::size_t s = 0; s < ds.n_sites(); ++s)
      for (std::size_t d : train_days)
        for (std::size_t t = 0; t < kSlotsPerDay; ++t) sum += ds.at(s, d, t, c);
    const double mean = sum / n;
    double ss = 0.0;
    for (std::size_t s = 0; s < ds.n_sites(); ++s)
      for (std::size_t d : train_days)
        for (std::size_t t = 0; t < kSlotsPerDay; ++t) {
          const double diff = ds.at(s, d, t, c) - mean;
          ss += diff * diff;
        }
    const double sd = std::sqrt(ss / n);
    if (sd <= 0.0)
      throw std::runtime_error("fit_scaler: zero variance in flow channel " + std::to_string(c));
    sc.mean[c] = mean;
    sc.stdev[c] = sd;
  }
  return sc;
}

void apply_scaler(CorridorDataset& ds, const Scaler& scaler) {
  for (std::size_t i = 0; i < ds.grid.size(); ++i)
    ds.grid[i] = scaler.transform(i % kChannels, ds.grid[i]);
}

void invert_scaler(CorridorDataset& ds, const Scaler& scaler) {
  for (std::size_t i = 0; i < ds.grid.size(); ++i)
    ds.grid[i] = scaler.invert(i % kChannels, ds.grid[i]);
}

// -------- samples --------

std::array<double, kMarkerDim> encode_marker(const Date& date, std::size_t slot) {
  const int wd = weekday(date);
  if (wd >= 5) throw std::invalid_argument("encode_marker: weekend date " + date_str(date));
  if (slot >= kSlotsPerDay) throw std::invalid_argument("encode_marker: slot out of range");
  std::array<double, kMarkerDim> m{};
  m[wd] = 1.0;
  m[5] = static_cast<double>(slot) / 91.0;
  // phase includes the dropped midnight hour so the cycle is a true 24h period
  const double phase = 2.0 * std::numbers::pi * static_cast<double>(slot + 4) / 96.0;
  m[6] = std::sin(phase);
  m[7] = std::cos(phase);
  return m;
}

std::vector<std::size_t> all_channels() { return {0, 1, 2, 3, 4, 5}; }

std::vector<Sample> make_samples(const CorridorDataset& ds, std::size_t n, std::size_t h,
                                 const std::vector<std::size_t>& day_idx,
                                 const std::vector<std::size_t>& channels) {
  if (n < 2 || h < 1) throw std::invalid_argument("make_samples: need n >= 2, h >= 1");
  if (n + h > kSlotsPerDay) throw std::invalid_argument("make_samples: window n + horizon h > 92");
  const std::size_t p = ds.n_sites();
  const std::size_t c = channels.size();
  std::vector<Sample> samples;
  for (std::size_t d : day_idx) {
    for (std::size_t t = 0; t + n + h <= kSlotsPerDay; ++t) {
      Sample smp;
      smp.date = ds.days[d];
      smp.anchor_slot = t + n - 1;
      smp.space = Tensor(Shape{p, n, c});
      smp.time = Tensor(Shape{n, p, c});
      for (std::size_t s = 0; s < p; ++s)
        for (std::size_t k = 0; k < n; ++k)
          for (std::size_t ci = 0; ci < c; ++ci) {
            const double v = ds.at(s, d, t + k, channels[ci]);
            smp.space[(s * n + k) * c + ci] = v;
            smp.time[(k * p + s) * c + ci] = v;
          }
      smp.marker = Tensor(Shape{p, kMarkerDim});
      const auto mk = encode_marker(smp.date, smp.anchor_slot);
      for (std::size_t s = 0; s < p; ++s)
        for (std::size_t j = 0; j < kMarkerDim; ++j) smp.marker[s * kMarkerDim + j] = mk[j];
      smp.target = Tensor(Shape{p, h});
      for (std::size_t s = 0; s < p; ++s)
        for (std::size_t k = 0; k < h; ++k)
          smp.target[s * h + k] = ds.at(s, d, t + n + k, kSpeedChannel);
      samples.push_back(std::move(smp));
    }
  }
  return samples;
}

void scale_sample(Sample& sample, const Scaler& scaler, const std::vector<std::size_t>& channels) {
  const std::size_t c = channels.size();
  for (std::size_t i = 0; i < sample.space.size(); ++i)
    sample.space[i] = scaler.transform(channels[i % c], sample.space[i]);
  for (std::size_t i = 0; i < sample.time.size(); ++i)
    sample.time[i] = scaler.transform(channels[i % c], sample.time[i]);
  for (std::size_t i = 0; i < sample.target.size(); ++i)
    sample.target[i] = scaler.transform(kSpeedChannel, sample.target[i]);
}

void scale_samples(std::vector<Sample>& samples, const Scaler& scaler,
                   const std::vector<std::size_t>& channels) {
  for (auto& s : samples) scale_sample(s, scaler, channels);
}

// -------- synthetic corridor --------

namespace {

double gauss(double x, double mu, double sigma) {
  const double z = (x - mu) / sigma;
  return std::exp(-0.5 * z * z);
}

}  // namespace

CorridorDataset synthesize_corridor(std::uint64_t seed, const SynthParams& params) {
  CorridorDataset ds;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> stdnorm(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  for (std::size_t s = 0; s < params.sites; ++s) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "SYN/%04zuA", 4700 + s * 5);
    ds.sites.push_back(buf);
  }
  Date day = next_weekday_on_or_after(params.start);
  for (std::size_t d = 0; d < params.days; ++d) {
    ds.days.push_back(day);
    day = next_weekday_on_or_after(add_days(day, 1));
  }
  ds.grid.assign(params.sites * params.days * kSlotsPerDay * kChannels, 0.0);
  ds.provenance.assign(params.sites * params.days * kSlotsPerDay,
                       static_cast<std::uint8_t>(Provenance::Observed));

  // fixed per-site demand jitter
  std::vector<double> site_factor(params.sites);
  for (std::size_t s = 0; s < params.sites; ++s) site_factor[s] = 1.0 + 0.05 * stdnorm(rng);
  auto ramp_mult = [&](std::size_t s) {
    double m = 1.0;
    for (std::size_t i = 0; i < params.ramp_sites.size(); ++i) {
      if (s >= params.ramp_sites[i]) m *= (i % 2 == 0) ? (1.0 + params.ramp_step) : (1.0 - 0.8 * params.ramp_step);
    }
    return m;
  };

  const double slots_per_site = params.site_spacing_km / (params.queue_speed_kmh * 0.25);
  const std::array<double, 4> band_share{0.62, 0.20, 0.12, 0.06};

  for (std::size_t d = 0; d < params.days; ++d) {
    const int wd = weekday(ds.days[d]);
    double am_w = 1.0, pm_w = 1.0;
    if (params.dow_modifiers) {
      if (wd == 0) am_w += params.dow_amplitude;       // Monday morning
      if (wd == 4) pm_w += params.dow_amplitude;       // Friday afternoon
      if (wd == 2) { am_w -= 0.3 * params.dow_amplitude; pm_w -= 0.3 * params.dow_amplitude; }
    }

    for (std::size_t s = 0; s < params.sites; ++s) {
      for (std::size_t t = 0; t < kSlotsPerDay; ++t) {
        const double hour = (t + 4) * 0.25;
        const double demand =
            0.30 + 0.70 * (am_w * gauss(hour, 8.0, 1.4) + pm_w * gauss(hour, 17.5, 1.7));
        double flow = params.base_flow * demand * ramp_mult(s) * site_factor[s] *
                      (1.0 + params.flow_noise_frac * stdnorm(rng));
        flow = std::max(flow, 5.0);

        double total = 0.0;
        for (std::size_t b = 0; b < 4; ++b) {
          double share = band_share[b] * (1.0 + 0.05 * stdnorm(rng));
          const double band = std::max(share * flow, 0.0);
          ds.at(s, d, t, b) = band;
          total += band;
        }
        ds.at(s, d, t, 4) = total;

        // two-regime speed-flow relation
        const double vc = total / params.capacity_flow;
        double speed = params.free_flow_mph *
                       (1.0 - 0.15 * vc - 2.2 * std::pow(std::max(0.0, vc - 0.75), 2.0));
        speed += params.speed_noise_mph * stdnorm(rng);
        ds.at(s, d, t, kSpeedChannel) = std::clamp(speed, 3.0, 95.0);
      }
    }

    // congestion events propagating upstream (toward higher site indices)
    std::vector<CongestionEvent> events;
    if (params.events_per_day > 0.0) {
      std::poisson_distribution<int> n_events(params.events_per_day);
      const int k = n_events(rng);
      for (int e = 0; e < k; ++e) {
        CongestionEvent ev;
        ev.day = d;
        ev.site = static_cast<std::size_t>(unit(rng) * params.sites * 0.6);
        ev.start_slot = 16 + static_cast<std::size_t>(unit(rng) * 56);  // 05:00-19:00
        ev.duration = 4 + static_cast<std::size_t>(unit(rng) * 6);
        ev.severity = 0.25 + 0.3 * unit(rng);
        events.push_back(ev);
      }
    }
    for (const auto& ev : params.extra_events)
      if (ev.day == d) events.push_back(ev);

    for (const auto& ev : events) {
      for (std::size_t e = 0; e < ev.duration; ++e) {
        const std::size_t t = ev.start_slot + e;
        if (t >= kSlotsPerDay) break;
        const std::size_t reach =
            static_cast<std::size_t>(std::llround((e + 1) / std::max(slots_per_site, 1e-9)));
        const std::size_t front = std::min(params.sites - 1, ev.site + std::max<std::size_t>(reach, 1));
        for (std::size_t s = ev.site; s <= front; ++s) {
          const double rel = static_cast<double>(s - ev.site) / std::max<double>(front - ev.site, 1.0);
          const double factor = ev.severity + (1.0 - ev.severity) * 0.5 * rel;
          double& speed = ds.at(s, d, t, kSpeedChannel);
          speed = std::max(3.0, speed * factor);
          const double flow_factor = 0.5 + 0.5 * factor;
          double total = 0.0;
          for (std::size_t b = 0; b < 4; ++b) {
            ds.at(s, d, t, b) *= flow_factor;
            total += ds.at(s, d, t, b);
          }
          ds.at(s, d, t, 4) = total;
        }
      }
    }
  }
  return ds;
}

}  // namespace dclstm
