#pragma once

#include <json.hpp>

#include <Eigen/Dense>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include "mega/camera.hpp"
#include "mega/codec.hpp"
#include "mega/errors.hpp"
#include "mega/gaussian.hpp"
#include "mega/image.hpp"
#include "mega/render.hpp"
#include "mega/train.hpp"

namespace mega {

struct DatasetFrame {
  int camera_id = 0;
  double time = 0.0;
  std::string file;
};

/// Multi-view image sequence: rig cameras, per-frame (camera, time, file)
/// records, and the scene bounding box. Backed by a cameras.json manifest.
struct Dataset {
  std::vector<Camera> cameras;
  std::vector<DatasetFrame> frames;
  SceneBox box;
  std::string root;
  std::string gt_model_file;  // optional ground-truth archive

  int frame_count() const { return static_cast<int>(frames.size()); }

  Camera frame_camera(int idx) const {
    Camera cam = cameras.at(frames.at(idx).camera_id);
    cam.time = frames[idx].time;
    return cam;
  }

  std::string frame_path(int idx) const {
    return (std::filesystem::path(root) / frames.at(idx).file).string();
  }

  Image load_frame(int idx) const { return read_ppm(frame_path(idx)); }

  std::vector<TrainView> load_views() const {
    std::vector<TrainView> views;
    views.reserve(frames.size());
    for (int i = 0; i < frame_count(); ++i)
      views.push_back({frame_camera(i), load_frame(i)});
    return views;
  }
};

inline nlohmann::json camera_to_json(const Camera& cam) {
  nlohmann::json j;
  j["fx"] = cam.fx;
  j["fy"] = cam.fy;
  j["cx"] = cam.cx;
  j["cy"] = cam.cy;
  j["width"] = cam.width;
  j["height"] = cam.height;
  std::vector<double> r;
  for (int row = 0; row < 3; ++row)
    for (int col = 0; col < 3; ++col) r.push_back(cam.rot(row, col));
  j["R"] = r;
  j["t"] = {cam.trans[0], cam.trans[1], cam.trans[2]};
  return j;
}

inline Camera camera_from_json(const nlohmann::json& j) {
  Camera cam;
  cam.fx = j.at("fx").get<double>();
  cam.fy = j.at("fy").get<double>();
  cam.cx = j.at("cx").get<double>();
  cam.cy = j.at("cy").get<double>();
  cam.width = j.at("width").get<int>();
  cam.height = j.at("height").get<int>();
  const auto r = j.at("R").get<std::vector<double>>();
  const auto t = j.at("t").get<std::vector<double>>();
  if (r.size() != 9 || t.size() != 3) throw ManifestError("manifest: camera R/t shape");
  for (int row = 0; row < 3; ++row)
    for (int col = 0; col < 3; ++col) cam.rot(row, col) = r[row * 3 + col];
  for (int k = 0; k < 3; ++k) cam.trans[k] = t[k];
  return cam;
}

inline void save_dataset_manifest(const Dataset& ds) {
  nlohmann::json j;
  j["format"] = "mega-dataset-v1";
  j["scene_box"]["lo"] = {ds.box.lo[0], ds.box.lo[1], ds.box.lo[2]};
  j["scene_box"]["hi"] = {ds.box.hi[0], ds.box.hi[1], ds.box.hi[2]};
  j["cameras"] = nlohmann::json::array();
  for (const auto& cam : ds.cameras) j["cameras"].push_back(camera_to_json(cam));
  j["frames"] = nlohmann::json::array();
  for (const auto& f : ds.frames)
    j["frames"].push_back({{"camera", f.camera_id}, {"time", f.time}, {"file", f.file}});
  if (!ds.gt_model_file.empty()) j["gt_model"] = ds.gt_model_file;
  std::ofstream out(std::filesystem::path(ds.root) / "cameras.json");
  if (!out) throw IoError("cannot write manifest in " + ds.root);
  out << j.dump(2) << "\n";
}

/// Loads and validates a dataset: manifest schema, camera orthonormality,
/// frame times in [0,1], and every referenced image present with the declared
/// dimensions.
inline Dataset load_dataset(const std::string& dir) {
  const std::filesystem::path manifest = std::filesystem::path(dir) / "cameras.json";
  std::ifstream in(manifest);
  if (!in) throw ManifestError("manifest: cannot open " + manifest.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ManifestError("manifest: parse error: " + std::string(e.what()));
  }
  Dataset ds;
  ds.root = dir;
  try {
    if (j.at("format").get<std::string>() != "mega-dataset-v1")
      throw ManifestError("manifest: unknown format tag");
    for (int k = 0; k < 3; ++k) {
      ds.box.lo[k] = j.at("scene_box").at("lo").at(k).get<double>();
      ds.box.hi[k] = j.at("scene_box").at("hi").at(k).get<double>();
    }
    for (const auto& cj : j.at("cameras")) ds.cameras.push_back(camera_from_json(cj));
    for (const auto& fj : j.at("frames")) {
      DatasetFrame f;
      f.camera_id = fj.at("camera").get<int>();
      f.time = fj.at("time").get<double>();
      f.file = fj.at("file").get<std::string>();
      ds.frames.push_back(std::move(f));
    }
    if (j.contains("gt_model")) ds.gt_model_file = j["gt_model"].get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw ManifestError("manifest: missing or malformed field: " + std::string(e.what()));
  }
  for (const auto& cam : ds.cameras) cam.validate();
  for (int i = 0; i < ds.frame_count(); ++i) {
    const auto& f = ds.frames[i];
    if (f.camera_id < 0 || f.camera_id >= static_cast<int>(ds.cameras.size()))
      throw ManifestError("manifest: frame " + std::to_string(i) + " references missing camera");
    if (f.time < 0.0 || f.time > 1.0)
      throw ManifestError("manifest: frame " + std::to_string(i) + " time outside [0,1]");
    Image img;
    try {
      img = ds.load_frame(i);
    } catch (const IoError& e) {
      throw ManifestError("manifest: frame " + std::to_string(i) +
                          " image unreadable: " + e.what());
    }
    const Camera& cam = ds.cameras[f.camera_id];
    if (img.width != cam.width || img.height != cam.height)
      throw ManifestError("manifest: frame " + std::to_string(i) +
                          " image dimensions do not match its camera");
  }
  return ds;
}

// ---- Synthetic scene generation ---------------------------------------------

struct SynthConfig {
  int cameras = 3;
  int frames = 8;
  int resolution = 64;
  uint64_t seed = 0;
  int orbit_blobs = 6;        // nonlinear full-revolution movers
  int static_blobs = 10;      // persistent mid-scene content
  int transient_blobs = 6;    // appear-and-vanish elements
  int segments_per_orbit = 10;
  int backdrop_cols = 7;      // textured wall behind the action
  int backdrop_rows = 5;
  double arc_degrees = 80.0;  // camera arc span facing the wall
};

/// Parses "orbit[-<N>cam][-<M>frames][-<K>px]".
inline SynthConfig parse_preset(const std::string& name) {
  SynthConfig cfg;
  if (name.substr(0, 5) != "orbit")
    throw InvalidParameter("synth: unknown preset '" + name + "'");
  std::string rest = name.substr(5);
  while (!rest.empty()) {
    if (rest[0] != '-') throw InvalidParameter("synth: malformed preset '" + name + "'");
    rest = rest.substr(1);
    size_t pos = 0;
    const long v = std::stol(rest, &pos);
    const std::string unit = rest.substr(pos, rest.find('-', pos) - pos);
    if (unit == "cam")
      cfg.cameras = static_cast<int>(v);
    else if (unit == "frames")
      cfg.frames = static_cast<int>(v);
    else if (unit == "px")
      cfg.resolution = static_cast<int>(v);
    else
      throw InvalidParameter("synth: malformed preset '" + name + "'");
    const size_t next = rest.find('-', pos);
    rest = next == std::string::npos ? "" : rest.substr(next);
  }
  if (cfg.cameras < 1 || cfg.frames < 2 || cfg.resolution < 16)
    throw InvalidParameter("synth: preset out of range");
  return cfg;
}

/// Procedural ground-truth cloud: a textured backdrop wall that keeps every
/// pixel covered from the camera arc, static blobs with near-flat temporal
/// decay, orbiting blobs approximated by short-lived segments along the path,
/// and transient blobs that appear and vanish.
inline GaussianCloud synth_ground_truth(const SynthConfig& cfg, std::mt19937_64& gen) {
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  auto color_logit = [&]() { return -1.2 + 3.2 * uni(gen); };
  GaussianCloud cloud;

  if (cfg.backdrop_cols > 0 && cfg.backdrop_rows > 0) {
    GaussianCloud wall = GaussianCloud::sized(cfg.backdrop_cols * cfg.backdrop_rows);
    int idx = 0;
    for (int r = 0; r < cfg.backdrop_rows; ++r) {
      for (int c = 0; c < cfg.backdrop_cols; ++c) {
        Gaussian4D g;
        const double fx = cfg.backdrop_cols > 1
                              ? static_cast<double>(c) / (cfg.backdrop_cols - 1)
                              : 0.5;
        const double fy = cfg.backdrop_rows > 1
                              ? static_cast<double>(r) / (cfg.backdrop_rows - 1)
                              : 0.5;
        g.mu4 << -2.4 + 4.8 * fx + 0.15 * (uni(gen) - 0.5),
            -1.9 + 3.8 * fy + 0.15 * (uni(gen) - 0.5), 1.3 + 0.1 * uni(gen), 0.5;
        g.s4 << std::log(0.55), std::log(0.55), std::log(0.12), std::log(8.0);
        g.c_dc << color_logit(), color_logit(), color_logit();
        g.o_logit = logit(0.97);
        wall.set(idx++, g);
      }
    }
    cloud.append(wall);
  }

  GaussianCloud statics = GaussianCloud::sized(cfg.static_blobs);
  for (int i = 0; i < cfg.static_blobs; ++i) {
    Gaussian4D g;
    g.mu4 << -0.85 + 1.7 * uni(gen), -0.85 + 1.7 * uni(gen), -0.6 + 1.2 * uni(gen), 0.5;
    const double s = 0.08 + 0.10 * uni(gen);
    g.s4 << std::log(s), std::log(s * (0.6 + 0.8 * uni(gen))), std::log(s), std::log(8.0);
    g.c_dc << color_logit(), color_logit(), color_logit();
    g.o_logit = logit(0.75 + 0.2 * uni(gen));
    statics.set(i, g);
  }
  cloud.append(statics);

  for (int b = 0; b < cfg.orbit_blobs; ++b) {
    const double radius = 0.35 + 0.45 * uni(gen);
    const double height = -0.5 + 1.0 * uni(gen);
    const double phase = 2.0 * M_PI * uni(gen);
    const double direction = uni(gen) < 0.5 ? 1.0 : -1.0;
    const Eigen::Vector3d c_dc(color_logit(), color_logit(), color_logit());
    const double size = 0.07 + 0.06 * uni(gen);
    GaussianCloud segs = GaussianCloud::sized(cfg.segments_per_orbit);
    for (int k = 0; k < cfg.segments_per_orbit; ++k) {
      const double t = (k + 0.5) / cfg.segments_per_orbit;
      const double ang = phase + direction * 2.0 * M_PI * t;
      Gaussian4D g;
      g.mu4 << radius * std::cos(ang), height, radius * std::sin(ang), t;
      g.s4 << std::log(size), std::log(size), std::log(size),
          std::log(0.75 / cfg.segments_per_orbit);
      g.c_dc = c_dc;
      g.o_logit = logit(0.9);
      segs.set(k, g);
    }
    cloud.append(segs);
  }

  GaussianCloud transients = GaussianCloud::sized(cfg.transient_blobs);
  for (int i = 0; i < cfg.transient_blobs; ++i) {
    Gaussian4D g;
    g.mu4 << -0.8 + 1.6 * uni(gen), -0.7 + 1.4 * uni(gen), -0.5 + 1.0 * uni(gen),
        0.15 + 0.7 * uni(gen);
    const double s = 0.06 + 0.08 * uni(gen);
    g.s4 << std::log(s), std::log(s), std::log(s), std::log(0.04 + 0.06 * uni(gen));
    g.c_dc << color_logit(), color_logit(), color_logit();
    g.o_logit = logit(0.9);
    transients.set(i, g);
  }
  cloud.append(transients);
  return cloud;
}

/// Cameras on an arc facing the backdrop (a desk-scale stand-in for a planar
/// multi-view rig).
inline std::vector<Camera> synth_camera_arc(const SynthConfig& cfg) {
  std::vector<Camera> cams;
  const double half = 0.5 * cfg.arc_degrees * M_PI / 180.0;
  for (int c = 0; c < cfg.cameras; ++c) {
    const double f = cfg.cameras > 1 ? static_cast<double>(c) / (cfg.cameras - 1) : 0.5;
    const double ang = -half + 2.0 * half * f;
    const Eigen::Vector3d eye(4.0 * std::sin(ang), 0.45 * std::sin(3.1 * ang + 0.4),
                              -4.0 * std::cos(ang));
    cams.push_back(Camera::look_at(eye, {0, 0, 0}, {0, 1, 0}, cfg.resolution * 1.2,
                                   cfg.resolution, cfg.resolution));
  }
  return cams;
}

struct SynthResult {
  Dataset dataset;
  GaussianCloud ground_truth;
  int files_written = 0;
};

/// Generates a synthetic dataset on disk: ground-truth cloud, camera ring,
/// rendered PPM frames, manifest, and the ground-truth model archive.
inline SynthResult synth(const SynthConfig& cfg, const std::string& out_dir) {
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec || !std::filesystem::is_directory(out_dir))
    throw IoError("synth: cannot create output directory " + out_dir);

  std::mt19937_64 gen(cfg.seed);
  SynthResult res;
  res.ground_truth = synth_ground_truth(cfg, gen);
  res.dataset.root = out_dir;
  res.dataset.cameras = synth_camera_arc(cfg);
  if (cfg.backdrop_cols > 0 && cfg.backdrop_rows > 0) {
    res.dataset.box.lo = Eigen::Vector3d(-2.4, -1.9, -0.8);
    res.dataset.box.hi = Eigen::Vector3d(2.4, 1.9, 1.5);
  } else {
    res.dataset.box.lo = Eigen::Vector3d(-1.0, -1.0, -0.8);
    res.dataset.box.hi = Eigen::Vector3d(1.0, 1.0, 0.8);
  }

  RenderOptions opts;
  for (int c = 0; c < cfg.cameras; ++c) {
    for (int f = 0; f < cfg.frames; ++f) {
      const double t = static_cast<double>(f) / (cfg.frames - 1);
      Camera cam = res.dataset.cameras[c];
      cam.time = t;
      const Image img = rasterize(res.ground_truth, nullptr, nullptr, cam, opts);
      char name[64];
      std::snprintf(name, sizeof(name), "frame_c%02d_f%03d.ppm", c, f);
      write_ppm(img, (std::filesystem::path(out_dir) / name).string());
      res.dataset.frames.push_back({c, t, name});
      ++res.files_written;
    }
  }
  res.dataset.gt_model_file = "gt_model.meg4";
  save_model_file((std::filesystem::path(out_dir) / res.dataset.gt_model_file).string(),
                  res.ground_truth, nullptr, nullptr);
  save_dataset_manifest(res.dataset);
  return res;
}

}  // namespace mega
