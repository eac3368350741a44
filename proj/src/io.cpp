#include "tptkit/io.hpp"

#include <atomic>
#include <bit>
#include <charconv>
#include <cstring>
#include <sstream>

#include <unistd.h>

#include "tptkit/error.hpp"

namespace tptkit::io {

std::vector<std::string_view> split_csv(std::string_view line) {
  while (!line.empty() && (line.back() == '\r' || line.back() == '\n')) {
    line.remove_suffix(1);
  }
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    const auto comma = line.find(',', start);
    std::string_view field = line.substr(start, comma - start);
    while (!field.empty() && field.front() == ' ') {
      field.remove_prefix(1);
    }
    while (!field.empty() && field.back() == ' ') {
      field.remove_suffix(1);
    }
    out.push_back(field);
    if (comma == std::string_view::npos) {
      break;
    }
    start = comma + 1;
  }
  return out;
}

double parse_double(std::string_view field, const std::string& context) {
  double v = 0.0;
  auto [p, ec] = std::from_chars(field.data(), field.data() + field.size(), v);
  if (ec != std::errc() || p != field.data() + field.size()) {
    throw InputError(context + ": cannot parse number '" + std::string(field) +
                     "'");
  }
  return v;
}

void write_atomic(const fs::path& path,
                  const std::function<void(std::ostream&)>& writer,
                  bool binary) {
  static std::atomic<unsigned> counter{0};
  if (path.has_parent_path()) {
    fs::create_directories(path.parent_path());
  }
  fs::path tmp = path;
  tmp += ".tmp." + std::to_string(::getpid()) + "." +
         std::to_string(counter++);
  {
    std::ofstream out(tmp, binary ? std::ios::binary : std::ios::out);
    if (!out) {
      throw InputError("cannot write " + tmp.string());
    }
    writer(out);
    out.flush();
    if (!out) {
      throw InputError("write failed for " + tmp.string());
    }
  }
  fs::rename(tmp, path);
}

void write_text_atomic(const fs::path& path, const std::string& text) {
  write_atomic(path, [&](std::ostream& o) { o << text; });
}

void write_json(const fs::path& path, const json& value) {
  write_text_atomic(path, value.dump(2) + "\n");
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw InputError("cannot open " + path.string());
  }
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

json read_json(const fs::path& path) {
  try {
    return json::parse(read_text(path));
  } catch (const json::parse_error& e) {
    throw InputError("invalid JSON in " + path.string() + ": " + e.what());
  }
}

void require_artifact(const fs::path& path, std::string_view producer) {
  if (!fs::exists(path)) {
    throw MissingArtifactError("missing artifact " + path.string() +
                               " (run `tptkit " + std::string(producer) +
                               "` first)");
  }
}

std::string format_double(double v) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, p);
}

void write_doubles_le(std::ostream& out, const double* data, std::size_t n) {
  static_assert(std::endian::native == std::endian::little,
                "big-endian hosts need byte swapping here");
  out.write(reinterpret_cast<const char*>(data),
            static_cast<std::streamsize>(n * sizeof(double)));
}

void read_doubles_le(std::istream& in, double* data, std::size_t n) {
  in.read(reinterpret_cast<char*>(data),
          static_cast<std::streamsize>(n * sizeof(double)));
  if (!in || static_cast<std::size_t>(in.gcount()) != n * sizeof(double)) {
    throw InputError("truncated binary payload");
  }
}

std::vector<double> StationMatrix::column(std::size_t s) const {
  std::vector<double> col(static_cast<std::size_t>(grid.count()));
  for (std::int64_t t = 0; t < grid.count(); ++t) {
    col[static_cast<std::size_t>(t)] = at(t, s);
  }
  return col;
}

void StationMatrix::set_column(std::size_t s, const std::vector<double>& col) {
  for (std::int64_t t = 0; t < grid.count(); ++t) {
    at(t, s) = col[static_cast<std::size_t>(t)];
  }
}

void write_station_matrix(const fs::path& stem, const StationMatrix& m) {
  json header = {{"kind", "station_matrix"},
                 {"quantity", m.quantity},
                 {"start", format_timestamp(m.grid.start())},
                 {"step_minutes", m.grid.step_minutes()},
                 {"count", m.grid.count()},
                 {"stations", m.station_ids},
                 {"layout", "row-major [time][station] float64 little-endian"}};
  fs::path bin = stem;
  bin += ".bin";
  fs::path hdr = stem;
  hdr += ".json";
  write_atomic(
      bin,
      [&](std::ostream& o) {
        write_doubles_le(o, m.values.data(), m.values.size());
      },
      true);
  write_json(hdr, header);
}

StationMatrix read_station_matrix(const fs::path& stem,
                                  std::string_view producer) {
  fs::path bin = stem;
  bin += ".bin";
  fs::path hdr = stem;
  hdr += ".json";
  require_artifact(hdr, producer);
  require_artifact(bin, producer);
  const json h = read_json(hdr);
  StationMatrix m;
  m.grid = TimeGrid(parse_timestamp(h.at("start").get<std::string>()),
                    h.at("step_minutes").get<int>(),
                    h.at("count").get<std::int64_t>());
  m.station_ids = h.at("stations").get<std::vector<std::string>>();
  m.quantity = h.value("quantity", "");
  m.values.resize(static_cast<std::size_t>(m.grid.count()) *
                  m.station_ids.size());
  std::ifstream in(bin, std::ios::binary);
  read_doubles_le(in, m.values.data(), m.values.size());
  return m;
}

} // namespace tptkit::io
