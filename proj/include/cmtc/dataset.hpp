#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "cmtc/frames.hpp"
#include "cmtc/protocol.hpp"
#include "cmtc/synth.hpp"

namespace cmtc {

// On-disk dataset layout:
//   <dir>/manifest.json
//   <dir>/clips/id####_cam#_clip#.evs     binary event streams
//   <dir>/masks/id####_cam#_clip#.msk     per-frame silhouette masks
//
// Mask file: magic "MSK1", width u16, height u16, frames u16, pad u16, then
// frames*H*W bytes of {0,1}.

struct DatasetItem {
  std::string event_path;  // relative to the dataset dir
  std::string mask_path;
  int person_id = -1;
  int camera_id = -1;
  int clip_index = -1;
};

struct DatasetManifest {
  int sensor_width = 0;
  int sensor_height = 0;
  int clip_len = 0;
  std::uint64_t t_window_us = 0;
  std::vector<DatasetItem> items;
};

namespace detail_ds {

inline void write_mask_file(const std::string& path, int w, int h, int frames,
                            const std::vector<std::uint8_t>& data) {
  std::string buf;
  buf.append("MSK1", 4);
  detail_ev::put_u16(buf, static_cast<std::uint16_t>(w));
  detail_ev::put_u16(buf, static_cast<std::uint16_t>(h));
  detail_ev::put_u16(buf, static_cast<std::uint16_t>(frames));
  detail_ev::put_u16(buf, 0);
  buf.append(reinterpret_cast<const char*>(data.data()), data.size());
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("write_mask_file: cannot open '" + path + "'");
  f.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!f) throw IoError("write_mask_file: write failed for '" + path + "'");
}

inline std::vector<std::uint8_t> read_mask_file(const std::string& path, int* w, int* h,
                                                int* frames) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("read_mask_file: cannot open '" + path + "'");
  std::string data((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  if (data.size() < 12 || data.compare(0, 4, "MSK1") != 0) {
    throw IoError(path + ": not a MSK1 mask file");
  }
  const auto* p = reinterpret_cast<const std::uint8_t*>(data.data());
  *w = detail_ev::get_u16(p + 4);
  *h = detail_ev::get_u16(p + 6);
  *frames = detail_ev::get_u16(p + 8);
  const std::size_t want = 12 + static_cast<std::size_t>(*w) * *h * *frames;
  if (data.size() != want) throw IoError(path + ": mask payload size mismatch");
  return {p + 12, p + data.size()};
}

inline std::string clip_stem(int person_id, int camera_id, int clip_index) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "id%04d_cam%d_clip%d", person_id, camera_id, clip_index);
  return buf;
}

}  // namespace detail_ds

/// Writes clips, masks and the manifest. Refuses a non-empty directory
/// unless force is set.
inline void save_dataset(const std::vector<SynthClip>& clips, const SynthConfig& cfg,
                         const std::string& dir, bool force) {
  namespace fs = std::filesystem;
  if (fs::exists(dir) && !fs::is_empty(dir)) {
    if (!force) {
      throw ValueError("save_dataset: output directory '" + dir +
                       "' is not empty (use --force to overwrite)");
    }
    fs::remove_all(dir);
  }
  fs::create_directories(fs::path(dir) / "clips");
  fs::create_directories(fs::path(dir) / "masks");

  nlohmann::json j;
  j["sensor_width"] = cfg.sensor_width;
  j["sensor_height"] = cfg.sensor_height;
  j["clip_len"] = cfg.clip_len;
  j["t_window_us"] = cfg.t_window_us;
  j["clips"] = nlohmann::json::array();
  for (const auto& c : clips) {
    const std::string stem = detail_ds::clip_stem(c.person_id, c.camera_id, c.clip_index);
    const std::string ev_rel = "clips/" + stem + ".evs";
    const std::string mk_rel = "masks/" + stem + ".msk";
    write_events(c.stream, (fs::path(dir) / ev_rel).string(), EventFormat::Binary);
    detail_ds::write_mask_file((fs::path(dir) / mk_rel).string(), cfg.sensor_width,
                               cfg.sensor_height, cfg.clip_len, c.masks);
    nlohmann::json item;
    item["path"] = ev_rel;
    item["mask_path"] = mk_rel;
    item["person_id"] = c.person_id;
    item["camera_id"] = c.camera_id;
    item["clip_index"] = c.clip_index;
    j["clips"].push_back(item);
  }
  std::ofstream f((fs::path(dir) / "manifest.json").string(), std::ios::trunc);
  if (!f) throw IoError("save_dataset: cannot write manifest in '" + dir + "'");
  f << j.dump(2) << '\n';
}

inline DatasetManifest load_manifest(const std::string& dir) {
  namespace fs = std::filesystem;
  const std::string path = (fs::path(dir) / "manifest.json").string();
  std::ifstream f(path);
  if (!f) throw IoError("load_manifest: cannot open '" + path + "'");
  nlohmann::json j;
  try {
    f >> j;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("load_manifest: bad JSON in '" + path + "': " + e.what());
  }
  DatasetManifest m;
  m.sensor_width = j.at("sensor_width").get<int>();
  m.sensor_height = j.at("sensor_height").get<int>();
  m.clip_len = j.at("clip_len").get<int>();
  m.t_window_us = j.at("t_window_us").get<std::uint64_t>();
  for (const auto& item : j.at("clips")) {
    DatasetItem d;
    d.event_path = item.at("path").get<std::string>();
    d.mask_path = item.value("mask_path", "");
    d.person_id = item.at("person_id").get<int>();
    d.camera_id = item.at("camera_id").get<int>();
    d.clip_index = item.value("clip_index", -1);
    m.items.push_back(std::move(d));
  }
  return m;
}

/// One fully loaded clip: voxelized frames plus supervision masks.
template <typename T>
struct LoadedClip {
  FrameStack<T> frames;
  std::vector<std::uint8_t> masks;  // clip_len x H x W, may be empty
  int person_id = -1;
  int camera_id = -1;
};

template <typename T>
std::vector<LoadedClip<T>> load_dataset(const std::string& dir, std::int64_t clip_cap) {
  namespace fs = std::filesystem;
  const DatasetManifest m = load_manifest(dir);
  std::vector<LoadedClip<T>> out;
  out.reserve(m.items.size());
  for (const auto& item : m.items) {
    EventStream s = parse_events((fs::path(dir) / item.event_path).string(), EventFormat::Binary);
    LoadedClip<T> clip;
    clip.frames = voxelize<T>(s, m.clip_len, m.t_window_us, clip_cap);
    clip.frames.source_id = item.event_path;
    clip.frames.person_id = item.person_id;
    clip.frames.camera_id = item.camera_id;
    clip.person_id = item.person_id;
    clip.camera_id = item.camera_id;
    if (!item.mask_path.empty()) {
      int w = 0, h = 0, frames = 0;
      clip.masks = detail_ds::read_mask_file((fs::path(dir) / item.mask_path).string(), &w, &h,
                                             &frames);
      if (w != m.sensor_width || h != m.sensor_height || frames != m.clip_len) {
        throw IoError("load_dataset: mask dims disagree with manifest for '" + item.mask_path +
                      "'");
      }
    }
    out.push_back(std::move(clip));
  }
  return out;
}

template <typename T>
std::vector<ClipLabel> clip_labels(const std::vector<LoadedClip<T>>& clips) {
  std::vector<ClipLabel> out;
  out.reserve(clips.size());
  for (const auto& c : clips) out.push_back({c.person_id, c.camera_id});
  return out;
}

}  // namespace cmtc
