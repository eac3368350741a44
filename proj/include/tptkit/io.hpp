#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "tptkit/core_model.hpp"

namespace tptkit::io {

namespace fs = std::filesystem;
using nlohmann::json;

std::vector<std::string_view> split_csv(std::string_view line);
double parse_double(std::string_view field, const std::string& context);

/// Writes through a temp file in the same directory, then renames.
void write_atomic(const fs::path& path,
                  const std::function<void(std::ostream&)>& writer,
                  bool binary = false);
void write_text_atomic(const fs::path& path, const std::string& text);
void write_json(const fs::path& path, const json& value);
json read_json(const fs::path& path);
std::string read_text(const fs::path& path);

/// Throws MissingArtifactError naming the subcommand that produces `path`.
void require_artifact(const fs::path& path, std::string_view producer);

/// Shortest round-trip decimal representation.
std::string format_double(double v);

void write_doubles_le(std::ostream& out, const double* data, std::size_t n);
void read_doubles_le(std::istream& in, double* data, std::size_t n);

/// Station-by-time matrix persisted as `<stem>.bin` (row-major [time][station]
/// little-endian doubles) plus a `<stem>.json` header.
struct StationMatrix {
  TimeGrid grid{TimePoint{}, 60, 1};
  std::vector<std::string> station_ids;
  std::vector<double> values;
  std::string quantity;

  double& at(std::int64_t t, std::size_t s) {
    return values[static_cast<std::size_t>(t) * station_ids.size() + s];
  }
  double at(std::int64_t t, std::size_t s) const {
    return values[static_cast<std::size_t>(t) * station_ids.size() + s];
  }
  std::vector<double> column(std::size_t s) const;
  void set_column(std::size_t s, const std::vector<double>& col);
};

void write_station_matrix(const fs::path& stem, const StationMatrix& m);
StationMatrix read_station_matrix(const fs::path& stem,
                                  std::string_view producer);

} // namespace tptkit::io
