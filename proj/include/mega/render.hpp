#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <optional>
#include <vector>

#include "mega/camera.hpp"
#include "mega/color.hpp"
#include "mega/deform.hpp"
#include "mega/errors.hpp"
#include "mega/gaussian.hpp"
#include "mega/image.hpp"
#include "mega/parallel.hpp"

namespace mega {

struct RenderOptions {
  double temporal_threshold = 0.05;  // sigma(t) filter
  double z_near = 0.01;
  double dilation = 0.3;        // px^2 added to the projected covariance diagonal
  double alpha_clamp = 0.99;
  double transmittance_min = 1e-4;
  int tile_size = 16;
  // Binning radius and contribution cutoff, in Mahalanobis sigmas. A splat
  // contributes to a pixel iff its Mahalanobis distance is below this, which
  // makes tile binning by the matching bounding box exact.
  double cutoff_sigma = 7.0;
  Eigen::Vector3d background = Eigen::Vector3d::Zero();
};

/// Projected splat, ready for compositing.
struct Splat2D {
  Eigen::Vector2d mean2;    // pixels
  Eigen::Matrix2d cov2;     // pixels^2, dilated
  double depth = 0.0;       // camera-space z
  double alpha_base = 0.0;  // spatial opacity * temporal opacity
  Eigen::Vector3d rgb = Eigen::Vector3d::Zero();
};

namespace detail {

struct ProjRecord {
  Eigen::Vector3d x_cam;
  Eigen::Vector2d mean2;
  Eigen::Matrix2d cov2;
  Eigen::Matrix2d cov2_inv;
  Eigen::Matrix<double, 2, 3> jac;  // perspective Jacobian at x_cam
  Eigen::Matrix<double, 2, 3> jw;   // jac * camera rotation
  double depth = 0.0;
  double radius_x = 0.0, radius_y = 0.0;  // cutoff_sigma box half-widths
};

// chi-square(2) quantile at 0.99; the 99%-mass ellipse radius in sigmas.
constexpr double kCull99Sigma = 3.0348542587702925;  // sqrt(9.210340371976182)

/// Returns false when the splat is culled (behind the near plane or with its
/// 99%-mass ellipse outside the viewport).
inline bool project_detail(const Sliced3D& s, const Camera& cam, const RenderOptions& opts,
                           ProjRecord& out) {
  out.x_cam = cam.rot * s.mu3_t + cam.trans;
  const double z = out.x_cam[2];
  if (z < opts.z_near) return false;
  out.depth = z;
  const double x = out.x_cam[0], y = out.x_cam[1];
  out.mean2 = {cam.fx * x / z + cam.cx, cam.fy * y / z + cam.cy};
  out.jac << cam.fx / z, 0.0, -cam.fx * x / (z * z),
             0.0, cam.fy / z, -cam.fy * y / (z * z);
  out.jw = out.jac * cam.rot;
  out.cov2 = out.jw * s.sigma3 * out.jw.transpose();
  out.cov2(0, 0) += opts.dilation;
  out.cov2(1, 1) += opts.dilation;
  const double det = out.cov2.determinant();
  if (!(det > 0.0)) return false;
  out.cov2_inv << out.cov2(1, 1) / det, -out.cov2(0, 1) / det,
                  -out.cov2(1, 0) / det, out.cov2(0, 0) / det;
  const double sx = std::sqrt(out.cov2(0, 0)), sy = std::sqrt(out.cov2(1, 1));
  if (out.mean2[0] + kCull99Sigma * sx < 0.0 || out.mean2[0] - kCull99Sigma * sx > cam.width ||
      out.mean2[1] + kCull99Sigma * sy < 0.0 || out.mean2[1] - kCull99Sigma * sy > cam.height)
    return false;
  out.radius_x = opts.cutoff_sigma * sx;
  out.radius_y = opts.cutoff_sigma * sy;
  return true;
}

}  // namespace detail

/// Perspective projection of one sliced Gaussian (EWA-style local affine
/// approximation). Returns nullopt when culled.
inline std::optional<Splat2D> project(const Sliced3D& s, const Eigen::Vector3d& rgb,
                                      double alpha_base, const Camera& cam,
                                      const RenderOptions& opts = {}) {
  detail::ProjRecord rec;
  if (!detail::project_detail(s, cam, opts, rec)) return std::nullopt;
  Splat2D out;
  out.mean2 = rec.mean2;
  out.cov2 = rec.cov2;
  out.depth = rec.depth;
  out.alpha_base = alpha_base;
  out.rgb = rgb;
  return out;
}

/// Captured stop-gradient inputs. Normally recomputed live each call; a
/// caller checking gradients against finite differences passes a frozen copy
/// so the perturbed forward matches what the backward pass differentiates.
struct SgInputs {
  Eigen::MatrixX4d deform_mu4;  // N x 4 encoder input
  Eigen::MatrixX3d deform_dv;   // N x 3 encoder input
  Eigen::MatrixX3d color_mu3;   // N x 3 (rows of temporal survivors are used)
  Eigen::MatrixX3d color_dv;    // N x 3
};

struct RenderStats {
  int deform_quat_clamps = 0;
  int coincident_views = 0;
  int temporal_survivors = 0;
  int projected = 0;
};

struct RenderCache {
  struct SplatRecord {
    int index = -1;  // row in the cloud
    Gaussian4D deformed;
    Deformation def;
    ApplyCache apply;
    SliceCache slice;
    double opacity = 0.0;     // sigmoid(o_logit)
    double alpha_base = 0.0;  // opacity * temporal opacity
    Eigen::Vector3d rgb = Eigen::Vector3d::Zero();
    detail::ProjRecord proj;
    bool visible = false;  // survived projection culling
  };

  Camera cam;
  RenderOptions opts;
  bool deform_enabled = false;
  bool color_enabled = false;

  std::vector<SplatRecord> splats;  // temporal survivors, cloud order
  DeformCache deform_cache;         // batched over the whole cloud
  ColorCache color_cache;           // batched over temporal survivors
  SgInputs sg;                      // captured stop-gradient inputs
  RenderStats stats;

  int tiles_x = 0, tiles_y = 0;
  std::vector<std::vector<int>> tile_splats;  // per tile, indices into splats
  std::vector<double> final_t;                // per pixel
  std::vector<int> examined;                  // per pixel, list entries visited
  Image image;
  bool valid = false;
};

/// Gradients of a scalar loss w.r.t. every learnable quantity. mean2 carries
/// the per-Gaussian view-space positional gradient used by densification.
struct RenderGrads {
  Eigen::MatrixX4d mu4, q_l, q_r, s4;
  Eigen::MatrixX3d c_dc;
  Eigen::VectorXd o_logit;
  Eigen::MatrixX2d mean2;
  std::optional<DeformGrads> deform;
  std::optional<MlpGrads> color;

  static RenderGrads zero(int n, const DeformPredictor* dp, const ColorPredictor* cp) {
    RenderGrads g;
    g.mu4.setZero(n, 4);
    g.q_l.setZero(n, 4);
    g.q_r.setZero(n, 4);
    g.s4.setZero(n, 4);
    g.c_dc.setZero(n, 3);
    g.o_logit.setZero(n);
    g.mean2.setZero(n, 2);
    if (dp) g.deform = DeformGrads::zero(*dp);
    if (cp) g.color = cp->phi.zero_grads();
    return g;
  }
};

/// Forward rasterization: per-Gaussian transformation, temporal slicing,
/// sigma(t) filtering, color prediction, projection, per-tile depth-sorted
/// alpha compositing. Deterministic for fixed inputs and any worker count.
inline Image rasterize(const GaussianCloud& cloud, const DeformPredictor* deform,
                       const ColorPredictor* color, const Camera& cam,
                       const RenderOptions& opts = {}, RenderCache* cache_out = nullptr,
                       const SgInputs* frozen_sg = nullptr) {
  cam.validate();
  RenderCache local;
  RenderCache& cache = cache_out ? *cache_out : local;
  cache = RenderCache{};
  cache.cam = cam;
  cache.opts = opts;
  cache.deform_enabled = deform != nullptr;
  cache.color_enabled = color != nullptr;

  const int n = cloud.count();
  const double t = cam.time;
  const Eigen::Vector3d p_v = cam.center();
  const Eigen::Vector3d fwd = cam.forward_axis();

  // Per-Gaussian transformation (applied before slicing).
  Eigen::MatrixXd raw;
  if (deform) {
    if (frozen_sg) {
      cache.sg.deform_mu4 = frozen_sg->deform_mu4;
      cache.sg.deform_dv = frozen_sg->deform_dv;
    } else {
      cache.sg.deform_mu4 = cloud.mu4;
      cache.sg.deform_dv.resize(n, 3);
      for (int i = 0; i < n; ++i)
        cache.sg.deform_dv.row(i) =
            view_direction(cloud.mu4.row(i).head<3>(), p_v, fwd, &cache.stats.coincident_views);
    }
    raw = deform_forward_batch(*deform, cache.sg.deform_mu4, cache.sg.deform_dv, t,
                               &cache.deform_cache);
  }

  // Deform + slice + temporal filter. Gaussians are processed in fixed chunks
  // and survivors concatenated in cloud order.
  const int grain = 256;
  const int chunks = (n + grain - 1) / grain;
  std::vector<std::vector<RenderCache::SplatRecord>> chunk_splats(chunks);
  std::vector<int> chunk_clamps(chunks, 0);
  ThreadPool::instance().run_chunks(chunks, [&](int c) {
    const int lo = c * grain, hi = std::min(n, lo + grain);
    for (int i = lo; i < hi; ++i) {
      RenderCache::SplatRecord rec;
      rec.index = i;
      const Gaussian4D g = cloud.get(i);
      if (deform) {
        rec.def = Deformation::from_raw(raw.row(i).transpose());
        rec.deformed = apply_deformation(g, rec.def, &chunk_clamps[c], &rec.apply);
      } else {
        rec.deformed = g;
      }
      rec.slice = slice_with_cache(rec.deformed, t);
      if (rec.slice.out.temporal_opacity <= opts.temporal_threshold) continue;
      rec.opacity = sigmoid(rec.deformed.o_logit);
      rec.alpha_base = rec.opacity * rec.slice.out.temporal_opacity;
      chunk_splats[c].push_back(std::move(rec));
    }
  });
  for (int c = 0; c < chunks; ++c) {
    cache.stats.deform_quat_clamps += chunk_clamps[c];
    for (auto& rec : chunk_splats[c]) cache.splats.push_back(std::move(rec));
  }
  const int m = static_cast<int>(cache.splats.size());
  cache.stats.temporal_survivors = m;

  // Color prediction for survivors (deformed positions, stop-gradient).
  cache.sg.color_mu3.setZero(n, 3);
  cache.sg.color_dv.setZero(n, 3);
  Eigen::MatrixX3d mu3_in(m, 3), dv_in(m, 3), cdc_in(m, 3);
  for (int k = 0; k < m; ++k) {
    const auto& rec = cache.splats[k];
    if (frozen_sg) {
      mu3_in.row(k) = frozen_sg->color_mu3.row(rec.index);
      dv_in.row(k) = frozen_sg->color_dv.row(rec.index);
    } else {
      mu3_in.row(k) = rec.deformed.mu4.head<3>();
      dv_in.row(k) =
          view_direction(rec.deformed.mu4.head<3>(), p_v, fwd, &cache.stats.coincident_views);
    }
    cache.sg.color_mu3.row(rec.index) = mu3_in.row(k);
    cache.sg.color_dv.row(rec.index) = dv_in.row(k);
    cdc_in.row(k) = rec.deformed.c_dc;
  }
  if (frozen_sg) {
    cache.sg.deform_mu4 = frozen_sg->deform_mu4;
    cache.sg.deform_dv = frozen_sg->deform_dv;
    cache.sg.color_mu3 = frozen_sg->color_mu3;
    cache.sg.color_dv = frozen_sg->color_dv;
  }
  if (color && m > 0) {
    const Eigen::MatrixX3d rgb = predict_color_batch(*color, mu3_in, dv_in, t, cdc_in,
                                                     &cache.color_cache);
    for (int k = 0; k < m; ++k) cache.splats[k].rgb = rgb.row(k);
  } else {
    for (int k = 0; k < m; ++k)
      for (int c = 0; c < 3; ++c)
        cache.splats[k].rgb[c] = sigmoid(cache.splats[k].deformed.c_dc[c]);
  }

  // Projection.
  parallel_chunks(m, 256, [&](int lo, int hi) {
    for (int k = lo; k < hi; ++k) {
      auto& rec = cache.splats[k];
      rec.visible = detail::project_detail(rec.slice.out, cam, opts, rec.proj);
    }
  });
  for (const auto& rec : cache.splats) cache.stats.projected += rec.visible ? 1 : 0;

  // Tile binning from the cutoff-sigma bounding box, depth-sorted per tile.
  const int ts = opts.tile_size;
  cache.tiles_x = (cam.width + ts - 1) / ts;
  cache.tiles_y = (cam.height + ts - 1) / ts;
  cache.tile_splats.assign(static_cast<size_t>(cache.tiles_x) * cache.tiles_y, {});
  for (int k = 0; k < m; ++k) {
    const auto& rec = cache.splats[k];
    if (!rec.visible) continue;
    const int tx0 = std::max(0, static_cast<int>(std::floor((rec.proj.mean2[0] - rec.proj.radius_x) / ts)));
    const int tx1 = std::min(cache.tiles_x - 1, static_cast<int>(std::floor((rec.proj.mean2[0] + rec.proj.radius_x) / ts)));
    const int ty0 = std::max(0, static_cast<int>(std::floor((rec.proj.mean2[1] - rec.proj.radius_y) / ts)));
    const int ty1 = std::min(cache.tiles_y - 1, static_cast<int>(std::floor((rec.proj.mean2[1] + rec.proj.radius_y) / ts)));
    for (int ty = ty0; ty <= ty1; ++ty)
      for (int tx = tx0; tx <= tx1; ++tx)
        cache.tile_splats[static_cast<size_t>(ty) * cache.tiles_x + tx].push_back(k);
  }
  const int n_tiles = cache.tiles_x * cache.tiles_y;
  ThreadPool::instance().run_chunks(n_tiles, [&](int tile) {
    auto& list = cache.tile_splats[tile];
    std::sort(list.begin(), list.end(), [&](int a, int b) {
      const double da = cache.splats[a].proj.depth, db = cache.splats[b].proj.depth;
      if (da != db) return da < db;
      return cache.splats[a].index < cache.splats[b].index;  // stable tie-break
    });
  });

  // Front-to-back compositing, one tile per chunk.
  cache.image = Image(cam.width, cam.height);
  cache.final_t.assign(static_cast<size_t>(cam.width) * cam.height, 1.0);
  cache.examined.assign(static_cast<size_t>(cam.width) * cam.height, 0);
  const double power_cut = 0.5 * opts.cutoff_sigma * opts.cutoff_sigma;
  ThreadPool::instance().run_chunks(n_tiles, [&](int tile) {
    const int tx = tile % cache.tiles_x, ty = tile / cache.tiles_x;
    const auto& list = cache.tile_splats[tile];
    for (int py = ty * ts; py < std::min(cam.height, (ty + 1) * ts); ++py) {
      for (int px = tx * ts; px < std::min(cam.width, (tx + 1) * ts); ++px) {
        const Eigen::Vector2d p(px + 0.5, py + 0.5);
        double trans = 1.0;
        Eigen::Vector3d acc = Eigen::Vector3d::Zero();
        int seen = 0;
        for (int li = 0; li < static_cast<int>(list.size()); ++li) {
          const auto& rec = cache.splats[list[li]];
          const Eigen::Vector2d d = p - rec.proj.mean2;
          const double power = 0.5 * d.dot(rec.proj.cov2_inv * d);
          seen = li + 1;
          if (power > power_cut) continue;
          const double alpha = std::min(opts.alpha_clamp, rec.alpha_base * std::exp(-power));
          acc += (trans * alpha) * rec.rgb;
          trans *= 1.0 - alpha;
          if (trans < opts.transmittance_min) break;
        }
        acc += trans * opts.background;
        const size_t pix = static_cast<size_t>(py) * cam.width + px;
        cache.final_t[pix] = trans;
        cache.examined[pix] = seen;
        for (int c = 0; c < 3; ++c) cache.image.at(px, py, c) = acc[c];
      }
    }
  });

  cache.valid = true;
  return cache.image;
}

/// Backward pass: distributes dL/dImage to every Gaussian attribute and the
/// predictor weights. Requires the forward cache. Output is independent of
/// the worker count (per-tile partials are reduced in tile order).
inline RenderGrads rasterize_backward(const GaussianCloud& cloud, const DeformPredictor* deform,
                                      const ColorPredictor* color, const Image& d_image,
                                      const RenderCache& cache) {
  if (!cache.valid) throw StateError("rasterize_backward: missing forward cache");
  if (static_cast<bool>(deform) != cache.deform_enabled ||
      static_cast<bool>(color) != cache.color_enabled)
    throw StateError("rasterize_backward: predictor set differs from the forward pass");
  const Camera& cam = cache.cam;
  const RenderOptions& opts = cache.opts;
  if (d_image.width != cam.width || d_image.height != cam.height)
    throw ConfigError("rasterize_backward: gradient image dimensions mismatch");

  const int n = cloud.count();
  const int m = static_cast<int>(cache.splats.size());
  RenderGrads grads = RenderGrads::zero(n, deform, color);

  // Per-splat upstream accumulators, filled tile by tile.
  struct SplatGrad {
    Eigen::Vector2d mean2 = Eigen::Vector2d::Zero();
    Eigen::Matrix2d cov2 = Eigen::Matrix2d::Zero();
    double alpha_base = 0.0;
    Eigen::Vector3d rgb = Eigen::Vector3d::Zero();
  };
  const int n_tiles = cache.tiles_x * cache.tiles_y;
  std::vector<std::vector<SplatGrad>> tile_grads(n_tiles);
  const int ts = opts.tile_size;
  const double power_cut = 0.5 * opts.cutoff_sigma * opts.cutoff_sigma;

  ThreadPool::instance().run_chunks(n_tiles, [&](int tile) {
    const auto& list = cache.tile_splats[tile];
    if (list.empty()) return;
    auto& local = tile_grads[tile];
    local.assign(list.size(), SplatGrad{});
    const int tx = tile % cache.tiles_x, ty = tile / cache.tiles_x;
    for (int py = ty * ts; py < std::min(cam.height, (ty + 1) * ts); ++py) {
      for (int px = tx * ts; px < std::min(cam.width, (tx + 1) * ts); ++px) {
        const size_t pix = static_cast<size_t>(py) * cam.width + px;
        const Eigen::Vector2d p(px + 0.5, py + 0.5);
        const Eigen::Vector3d d_pix(d_image.at(px, py, 0), d_image.at(px, py, 1),
                                    d_image.at(px, py, 2));
        if (d_pix.isZero(0.0)) continue;
        // Walk composited splats back to front, rebuilding transmittance.
        double trans_after = cache.final_t[pix];
        Eigen::Vector3d suffix = trans_after * opts.background;
        for (int li = cache.examined[pix] - 1; li >= 0; --li) {
          const auto& rec = cache.splats[list[li]];
          const Eigen::Vector2d d = p - rec.proj.mean2;
          const Eigen::Vector2d v = rec.proj.cov2_inv * d;
          const double power = 0.5 * d.dot(v);
          if (power > power_cut) continue;
          const double g_exp = std::exp(-power);
          const double a_raw = rec.alpha_base * g_exp;
          const double alpha = std::min(opts.alpha_clamp, a_raw);
          const double trans_before = trans_after / (1.0 - alpha);
          const double weight = trans_before * alpha;
          auto& sg = local[li];
          sg.rgb += weight * d_pix;
          const double d_alpha =
              d_pix.dot(trans_before * rec.rgb - suffix / (1.0 - alpha));
          if (a_raw < opts.alpha_clamp) {
            sg.alpha_base += d_alpha * g_exp;
            const double d_power = -d_alpha * a_raw;
            sg.mean2 -= d_power * v;  // d(power)/d(mean2) = -cov2_inv * d
            sg.cov2 += (-0.5 * d_power) * (v * v.transpose());
          }
          suffix += weight * rec.rgb;
          trans_after = trans_before;
        }
      }
    }
  });

  // Reduce in tile order for determinism.
  std::vector<SplatGrad> up(m);
  for (int tile = 0; tile < n_tiles; ++tile) {
    const auto& list = cache.tile_splats[tile];
    for (size_t li = 0; li < tile_grads[tile].size(); ++li) {
      auto& dst = up[list[li]];
      const auto& src = tile_grads[tile][li];
      dst.mean2 += src.mean2;
      dst.cov2 += src.cov2;
      dst.alpha_base += src.alpha_base;
      dst.rgb += src.rgb;
    }
  }

  // Geometry backward per splat; rows of the outputs are disjoint.
  Eigen::MatrixX3d d_rgb_rows = Eigen::MatrixX3d::Zero(m, 3);
  Eigen::MatrixXd d_raw_rows;
  if (deform) d_raw_rows = Eigen::MatrixXd::Zero(n, 16);
  parallel_chunks(m, 256, [&](int lo, int hi) {
    for (int k = lo; k < hi; ++k) {
      const auto& rec = cache.splats[k];
      if (!rec.visible) continue;
      const auto& g_up = up[k];
      d_rgb_rows.row(k) = g_up.rgb;
      grads.mean2.row(rec.index) = g_up.mean2;

      // alpha_base = opacity * temporal_opacity
      const double g_opacity = g_up.alpha_base * rec.slice.out.temporal_opacity;
      const double g_sigma_t = g_up.alpha_base * rec.opacity;
      const double o = rec.opacity;
      double g_o_logit = g_opacity * o * (1.0 - o);

      // cov2 = A sigma3 A^T + dilation, A = J R
      const Eigen::Matrix2d& g_cov2 = g_up.cov2;
      const Eigen::Matrix<double, 2, 3>& a = rec.proj.jw;
      const Eigen::Matrix3d g_sigma3 = a.transpose() * g_cov2 * a;
      const Eigen::Matrix<double, 2, 3> g_a =
          (g_cov2 + g_cov2.transpose()) * a * rec.slice.out.sigma3;
      const Eigen::Matrix<double, 2, 3> g_jac = g_a * cam.rot.transpose();

      // mean2 = (fx x / z + cx, fy y / z + cy)
      const double x = rec.proj.x_cam[0], y = rec.proj.x_cam[1], z = rec.proj.x_cam[2];
      Eigen::Vector3d g_xcam = Eigen::Vector3d::Zero();
      g_xcam[0] += g_up.mean2[0] * cam.fx / z;
      g_xcam[1] += g_up.mean2[1] * cam.fy / z;
      g_xcam[2] += -g_up.mean2[0] * cam.fx * x / (z * z) - g_up.mean2[1] * cam.fy * y / (z * z);
      // Jacobian entries also depend on the camera-space mean.
      g_xcam[0] += g_jac(0, 2) * (-cam.fx / (z * z));
      g_xcam[1] += g_jac(1, 2) * (-cam.fy / (z * z));
      g_xcam[2] += g_jac(0, 0) * (-cam.fx / (z * z)) + g_jac(1, 1) * (-cam.fy / (z * z)) +
                   g_jac(0, 2) * (2.0 * cam.fx * x / (z * z * z)) +
                   g_jac(1, 2) * (2.0 * cam.fy * y / (z * z * z));
      const Eigen::Vector3d g_mu3t = cam.rot.transpose() * g_xcam;

      GaussianGrads attr;
      slice_backward(rec.deformed, rec.slice, g_sigma3, g_mu3t, g_sigma_t, attr);

      if (deform) {
        GaussianGrads orig;
        Deformation g_def;
        apply_deformation_backward(cloud.get(rec.index), rec.def, rec.apply, attr, orig, g_def);
        grads.mu4.row(rec.index) = orig.mu4;
        grads.s4.row(rec.index) = orig.s4;
        grads.q_l.row(rec.index) = orig.q_l;
        grads.q_r.row(rec.index) = orig.q_r;
        d_raw_rows.row(rec.index) << g_def.m_mu4.transpose(), g_def.m_s4.transpose(),
            g_def.m_ql.transpose(), g_def.m_qr.transpose();
      } else {
        grads.mu4.row(rec.index) = attr.mu4;
        grads.s4.row(rec.index) = attr.s4;
        grads.q_l.row(rec.index) = attr.q_l;
        grads.q_r.row(rec.index) = attr.q_r;
      }
      grads.o_logit[rec.index] = g_o_logit;
    }
  });

  // Color backward, batched over survivors.
  if (m > 0) {
    if (color) {
      Eigen::MatrixX3d g_cdc_rows = Eigen::MatrixX3d::Zero(m, 3);
      predict_color_backward(*color, cache.color_cache, d_rgb_rows, *grads.color, g_cdc_rows);
      for (int k = 0; k < m; ++k) grads.c_dc.row(cache.splats[k].index) = g_cdc_rows.row(k);
    } else {
      for (int k = 0; k < m; ++k) {
        const auto& rec = cache.splats[k];
        const Eigen::Array3d rgb = rec.rgb.array();
        grads.c_dc.row(rec.index) =
            (d_rgb_rows.row(k).transpose().array() * rgb * (1.0 - rgb)).matrix();
      }
    }
  }
  if (deform) deform_backward(*deform, cache.deform_cache, d_raw_rows, *grads.deform);
  return grads;
}

/// Fraction of Gaussians whose temporal opacity exceeds the threshold at each
/// query time, after deformation when a predictor (and camera) is supplied.
inline std::vector<double> participation_ratio(const GaussianCloud& cloud,
                                               const std::vector<double>& times, double threshold,
                                               const DeformPredictor* deform = nullptr,
                                               const Camera* cam = nullptr) {
  if (cloud.count() == 0) throw InvalidParameter("participation_ratio: empty cloud");
  std::vector<double> out;
  out.reserve(times.size());
  const int n = cloud.count();
  for (double t : times) {
    int pass = 0;
    if (deform && cam) {
      const Eigen::Vector3d p_v = cam->center();
      const Eigen::Vector3d fwd = cam->forward_axis();
      Eigen::MatrixX3d dv(n, 3);
      for (int i = 0; i < n; ++i)
        dv.row(i) = view_direction(cloud.mu4.row(i).head<3>(), p_v, fwd);
      const Eigen::MatrixXd raw = deform_forward_batch(*deform, cloud.mu4, dv, t);
      for (int i = 0; i < n; ++i) {
        const Gaussian4D g = apply_deformation(
            cloud.get(i), Deformation::from_raw(raw.row(i).transpose()));
        if (slice(g, t).temporal_opacity > threshold) ++pass;
      }
    } else {
      pass = static_cast<int>(temporal_filter(cloud, t, threshold).size());
    }
    out.push_back(static_cast<double>(pass) / n);
  }
  return out;
}

}  // namespace mega
