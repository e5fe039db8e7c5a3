#pragma once

#include <charconv>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "cmtc/common.hpp"

namespace cmtc {

/// One event camera record: timestamp in microseconds, pixel position,
/// polarity of the brightness change.
struct EventRecord {
  std::uint64_t t = 0;
  std::uint16_t x = 0;
  std::uint16_t y = 0;
  std::int8_t p = 1;  // +1 or -1

  bool operator==(const EventRecord&) const = default;
};

struct EventStream {
  std::uint16_t sensor_width = 0;
  std::uint16_t sensor_height = 0;
  std::vector<EventRecord> records;  // non-decreasing t, stable for ties

  bool operator==(const EventStream&) const = default;
};

enum class EventFormat { Csv, Binary };

// File formats
//
// Binary: header magic "EVS1", width u16, height u16, count u64, then 16-byte
// little-endian records (t u64, x u16, y u16, p i8, 3 zero pad bytes).
//
// CSV: optional metadata comment "# width=W height=H", a "t,x,y,p" header
// line, then one record per line. Files without the metadata line infer the
// sensor size from the coordinate maxima.

namespace detail_ev {

constexpr char kBinaryMagic[4] = {'E', 'V', 'S', '1'};
constexpr std::size_t kRecordBytes = 16;

inline void put_u16(std::string& buf, std::uint16_t v) {
  buf.push_back(static_cast<char>(v & 0xFF));
  buf.push_back(static_cast<char>((v >> 8) & 0xFF));
}

inline void put_u64(std::string& buf, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline std::uint16_t get_u16(const std::uint8_t* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

inline std::uint64_t get_u64(const std::uint8_t* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return v;
}

template <typename Int>
bool parse_int(std::string_view field, Int& out) {
  const char* first = field.data();
  const char* last = field.data() + field.size();
  auto res = std::from_chars(first, last, out);
  return res.ec == std::errc{} && res.ptr == last;
}

inline void validate_record(const EventRecord& r, std::uint16_t w, std::uint16_t h,
                            std::size_t index, const std::string& path) {
  if (r.p != 1 && r.p != -1) {
    throw IoError(path + ": record " + std::to_string(index) + " (t=" + std::to_string(r.t) +
                  ", x=" + std::to_string(r.x) + ", y=" + std::to_string(r.y) +
                  ") has polarity " + std::to_string(static_cast<int>(r.p)) +
                  ", expected +1 or -1");
  }
  if (w > 0 && h > 0 && (r.x >= w || r.y >= h)) {
    throw IoError(path + ": record " + std::to_string(index) + " (t=" + std::to_string(r.t) +
                  ", x=" + std::to_string(r.x) + ", y=" + std::to_string(r.y) +
                  ") lies outside the " + std::to_string(w) + "x" + std::to_string(h) +
                  " sensor");
  }
}

inline void sort_records(EventStream& s) {
  std::stable_sort(s.records.begin(), s.records.end(),
                   [](const EventRecord& a, const EventRecord& b) { return a.t < b.t; });
}

}  // namespace detail_ev

inline void validate_stream(const EventStream& s, const std::string& context) {
  for (std::size_t i = 0; i < s.records.size(); ++i) {
    detail_ev::validate_record(s.records[i], s.sensor_width, s.sensor_height, i, context);
    if (i > 0 && s.records[i].t < s.records[i - 1].t) {
      throw ValueError(context + ": records not sorted by t at index " + std::to_string(i));
    }
  }
}

inline EventStream parse_events(const std::string& path, EventFormat format) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("parse_events: cannot open '" + path + "'");
  std::string data((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());

  EventStream s;
  if (format == EventFormat::Binary) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(data.data());
    if (data.size() < 16 || std::memcmp(p, detail_ev::kBinaryMagic, 4) != 0) {
      throw IoError(path + ": not an EVS1 event file (bad or short header)");
    }
    s.sensor_width = detail_ev::get_u16(p + 4);
    s.sensor_height = detail_ev::get_u16(p + 6);
    const std::uint64_t count = detail_ev::get_u64(p + 8);
    const std::size_t want = 16 + count * detail_ev::kRecordBytes;
    if (data.size() != want) {
      throw IoError(path + ": header counts " + std::to_string(count) + " records (" +
                    std::to_string(want) + " bytes) but file has " +
                    std::to_string(data.size()) + " bytes");
    }
    s.records.resize(count);
    for (std::uint64_t i = 0; i < count; ++i) {
      const std::uint8_t* r = p + 16 + i * detail_ev::kRecordBytes;
      EventRecord& e = s.records[i];
      e.t = detail_ev::get_u64(r);
      e.x = detail_ev::get_u16(r + 8);
      e.y = detail_ev::get_u16(r + 10);
      e.p = static_cast<std::int8_t>(r[12]);
      if (e.p != 1 && e.p != -1) {
        throw IoError(path + ": record " + std::to_string(i) + " at byte offset " +
                      std::to_string(16 + i * detail_ev::kRecordBytes) +
                      " has invalid polarity " + std::to_string(static_cast<int>(e.p)));
      }
      detail_ev::validate_record(e, s.sensor_width, s.sensor_height, i, path);
    }
    detail_ev::sort_records(s);
    return s;
  }

  // CSV
  std::size_t pos = 0, line_no = 0;
  bool saw_header = false;
  std::uint16_t max_x = 0, max_y = 0;
  while (pos < data.size()) {
    const std::size_t line_start = pos;
    std::size_t eol = data.find('\n', pos);
    if (eol == std::string::npos) eol = data.size();
    std::string_view line(data.data() + pos, eol - pos);
    pos = eol + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty()) continue;
    if (line[0] == '#') {
      unsigned w = 0, h = 0;
      if (std::sscanf(std::string(line).c_str(), "# width=%u height=%u", &w, &h) == 2) {
        s.sensor_width = static_cast<std::uint16_t>(w);
        s.sensor_height = static_cast<std::uint16_t>(h);
      }
      continue;
    }
    if (!saw_header) {
      if (line != "t,x,y,p") {
        throw IoError(path + ": line " + std::to_string(line_no) + " (byte offset " +
                      std::to_string(line_start) + "): expected header 't,x,y,p', got '" +
                      std::string(line) + "'");
      }
      saw_header = true;
      continue;
    }
    EventRecord e;
    std::string_view rest = line;
    auto take = [&](bool last) -> std::string_view {
      const auto comma = rest.find(',');
      if (!last && comma == std::string_view::npos) return {};
      std::string_view field = last ? rest : rest.substr(0, comma);
      rest = last ? std::string_view{} : rest.substr(comma + 1);
      return field;
    };
    const auto ft = take(false);
    const auto fx = take(false);
    const auto fy = take(false);
    const auto fp = rest;
    int pval = 0;
    if (ft.empty() || fx.empty() || fy.empty() || fp.empty() ||
        !detail_ev::parse_int(ft, e.t) || !detail_ev::parse_int(fx, e.x) ||
        !detail_ev::parse_int(fy, e.y) || !detail_ev::parse_int(fp, pval)) {
      throw IoError(path + ": line " + std::to_string(line_no) + " (byte offset " +
                    std::to_string(line_start) + "): malformed record '" + std::string(line) +
                    "'");
    }
    e.p = static_cast<std::int8_t>(pval);
    detail_ev::validate_record(e, s.sensor_width, s.sensor_height, s.records.size(), path);
    max_x = std::max(max_x, e.x);
    max_y = std::max(max_y, e.y);
    s.records.push_back(e);
  }
  if (!saw_header) {
    throw IoError(path + ": missing 't,x,y,p' header line");
  }
  if (s.sensor_width == 0 || s.sensor_height == 0) {
    s.sensor_width = static_cast<std::uint16_t>(max_x + 1);
    s.sensor_height = static_cast<std::uint16_t>(max_y + 1);
  }
  detail_ev::sort_records(s);
  return s;
}

inline void write_events(const EventStream& s, const std::string& path, EventFormat format) {
  validate_stream(s, "write_events");
  std::string buf;
  if (format == EventFormat::Binary) {
    buf.reserve(16 + s.records.size() * detail_ev::kRecordBytes);
    buf.append(detail_ev::kBinaryMagic, 4);
    detail_ev::put_u16(buf, s.sensor_width);
    detail_ev::put_u16(buf, s.sensor_height);
    detail_ev::put_u64(buf, s.records.size());
    for (const auto& e : s.records) {
      detail_ev::put_u64(buf, e.t);
      detail_ev::put_u16(buf, e.x);
      detail_ev::put_u16(buf, e.y);
      buf.push_back(static_cast<char>(e.p));
      buf.append(3, '\0');
    }
  } else {
    buf += "# width=" + std::to_string(s.sensor_width) +
           " height=" + std::to_string(s.sensor_height) + "\n";
    buf += "t,x,y,p\n";
    for (const auto& e : s.records) {
      buf += std::to_string(e.t) + ',' + std::to_string(e.x) + ',' + std::to_string(e.y) + ',' +
             std::to_string(static_cast<int>(e.p)) + '\n';
    }
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("write_events: cannot open '" + path + "' for writing");
  f.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!f) throw IoError("write_events: write failed for '" + path + "'");
}

}  // namespace cmtc
