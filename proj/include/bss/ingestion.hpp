#pragma once

// Adapters for public data: GBFS station snapshots and periodic trip-rate
// series.

#include <filesystem>
#include <istream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "bss/measures.hpp"
#include "bss/model.hpp"

namespace bss {

/// Malformed input document; `path()` locates the offending element.
class ParseError : public std::runtime_error {
 public:
  ParseError(std::string path, const std::string& message)
      : std::runtime_error(path + ": " + message), path_(std::move(path)) {}
  const std::string& path() const noexcept { return path_; }

 private:
  std::string path_;
};

struct GbfsStation {
  std::string station_id;
  int bikes_available = 0;
  int capacity = 1;
};

struct GbfsSnapshot {
  std::vector<GbfsStation> stations;
  long long timestamp = 0;  // status last_updated, epoch seconds
  int dropped = 0;          // stations absent from one side of the join or with capacity < 1
  int clamped = 0;          // bikes_available reduced to capacity
};

/// Joins station_status and station_information on station_id (string or
/// number). Order follows the status document.
GbfsSnapshot parse_gbfs(std::string_view status_document, std::string_view information_document);

struct SnapshotHistograms {
  Vector counts;         // over 0..max capacity
  RatioHistogram ratio;  // over 0..k_max
};

/// k_max ≤ 0 selects the largest capacity in the snapshot.
SnapshotHistograms snapshot_histograms(const GbfsSnapshot& snapshot, int k_max = 0);

struct RateSeries {
  std::vector<double> times;  // hours
  std::vector<double> rates;
};

/// CSV with header `t_hours,rate`.
RateSeries read_rate_series(std::istream& in);
RateSeries load_rate_series(const std::filesystem::path& path);

struct FourierFit {
  FourierRateModel model;
  double r_squared = 0.0;
};

/// Least squares on {1, sin(2πjt/ω), cos(2πjt/ω)}_{j≤order} by normal
/// equations after a rank check of the design. R² is 1 when SS_tot = 0.
FourierFit fit_fourier(const RateSeries& series, int order, double period = 24.0);

}  // namespace bss
