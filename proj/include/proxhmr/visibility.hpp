#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <nlohmann/json.hpp>
#include <unordered_map>
#include <vector>

#include "proxhmr/camera.hpp"

namespace proxhmr {

struct VisibilityOptions {
  double depth_tolerance = 1e-4;  // meters; a surface closer than depth - tol occludes
};

struct VisibilityMask {
  std::vector<bool> visible;      // f_visible
  std::vector<bool> occluded;     // Occ; only meaningful for projectable vertices
  std::vector<bool> projectable;  // in front of the near plane
  Eigen::Matrix2Xd pixels;        // projected (x, y); NaN when not projectable
  int degenerate_faces = 0;       // zero-area faces skipped

  int visible_count() const { return static_cast<int>(std::count(visible.begin(), visible.end(), true)); }
};

namespace detail {

struct CamMesh {
  Eigen::Matrix3Xd points;  // camera frame
  VisibilityMask mask;
};

inline CamMesh prepare(const Eigen::Matrix3Xd& v, const Camera& cam) {
  cam.validate();
  CamMesh out;
  out.points = cam.to_camera(v);
  const auto n = v.cols();
  out.mask.visible.assign(n, false);
  out.mask.occluded.assign(n, false);
  out.mask.projectable.assign(n, false);
  out.mask.pixels = Eigen::Matrix2Xd::Constant(2, n, std::numeric_limits<double>::quiet_NaN());
  for (Eigen::Index i = 0; i < n; ++i) {
    if (const auto p = project_camera_point(out.points.col(i), cam)) {
      out.mask.projectable[i] = true;
      out.mask.pixels.col(i) = Eigen::Vector2d(p->x, p->y);
    }
  }
  return out;
}

inline bool degenerate(const Eigen::Vector3d& a, const Eigen::Vector3d& b, const Eigen::Vector3d& c) {
  return (b - a).cross(c - a).squaredNorm() <= 1e-24;
}

// Möller–Trumbore with a ray from the origin. Returns the ray parameter of
// the hit or a negative value. Edges are inclusive.
inline double ray_triangle(const Eigen::Vector3d& dir, const Eigen::Vector3d& a, const Eigen::Vector3d& b,
                           const Eigen::Vector3d& c) {
  constexpr double kEdge = 1e-12;
  const Eigen::Vector3d e1 = b - a;
  const Eigen::Vector3d e2 = c - a;
  const Eigen::Vector3d p = dir.cross(e2);
  const double det = e1.dot(p);
  if (std::abs(det) < 1e-18) return -1.0;
  const double inv = 1.0 / det;
  const Eigen::Vector3d s = -a;
  const double u = s.dot(p) * inv;
  if (u < -kEdge || u > 1.0 + kEdge) return -1.0;
  const Eigen::Vector3d q = s.cross(e1);
  const double v = dir.dot(q) * inv;
  if (v < -kEdge || u + v > 1.0 + kEdge) return -1.0;
  return e2.dot(q) * inv;
}

// Closest hit parameter along `dir` (from the camera center) over all faces
// except the ones listed in `skip`, counting only hits in front of the near
// plane. Infinity when nothing is hit.
inline double nearest_hit(const Eigen::Matrix3Xd& pts, const std::vector<Eigen::Vector3i>& faces,
                          const Eigen::Vector3d& dir, const std::vector<int>* skip = nullptr) {
  double best = std::numeric_limits<double>::infinity();
  for (int f = 0; f < static_cast<int>(faces.size()); ++f) {
    if (skip && std::find(skip->begin(), skip->end(), f) != skip->end()) continue;
    const auto& fc = faces[f];
    const Eigen::Vector3d a = pts.col(fc[0]), b = pts.col(fc[1]), c = pts.col(fc[2]);
    if (degenerate(a, b, c)) continue;
    const double t = ray_triangle(dir, a, b, c);
    if (t > 0.0 && t * dir.z() >= kNearPlane && t < best) best = t;
  }
  return best;
}

// Splits a camera-frame triangle at the near plane; returns 0, 1 or 2 triangles.
inline int clip_near(const std::array<Eigen::Vector3d, 3>& tri, std::array<std::array<Eigen::Vector3d, 3>, 2>& out) {
  std::array<Eigen::Vector3d, 4> poly;
  int n = 0;
  for (int k = 0; k < 3; ++k) {
    const Eigen::Vector3d& cur = tri[k];
    const Eigen::Vector3d& nxt = tri[(k + 1) % 3];
    const bool cin = cur.z() >= kNearPlane;
    const bool nin = nxt.z() >= kNearPlane;
    if (cin) poly[n++] = cur;
    if (cin != nin) {
      const double s = (kNearPlane - cur.z()) / (nxt.z() - cur.z());
      poly[n++] = cur + s * (nxt - cur);
    }
  }
  if (n < 3) return 0;
  out[0] = {poly[0], poly[1], poly[2]};
  if (n == 3) return 1;
  out[1] = {poly[0], poly[2], poly[3]};
  return 2;
}

}  // namespace detail

// Z-buffer visibility. The depth buffer lives on the full-resolution pixel
// grid but is only resolved at the pixels that contain a projected vertex;
// every face is depth-tested there with the usual pixel-center edge
// functions. A vertex is visible when it lies in the image and the front-most
// face at its pixel does not lie in front of it along its own ray by more
// than the depth tolerance (an incident face always passes).
inline VisibilityMask zbuffer_visibility(const Eigen::Matrix3Xd& v, const std::vector<Eigen::Vector3i>& faces,
                                         const Camera& cam, const VisibilityOptions& opt = {}) {
  auto cm = detail::prepare(v, cam);
  auto& mask = cm.mask;
  const auto nv = v.cols();
  constexpr int kCell = 16;
  const int cells_x = (cam.width + kCell - 1) / kCell;

  struct Query {
    int px, py;
    double inv_depth = 0.0;
    int face = -1;
  };
  std::vector<Query> queries;
  std::vector<int> query_of(nv, -1);
  std::unordered_map<long long, std::vector<int>> cells;
  std::unordered_map<long long, int> pixel_query;
  for (Eigen::Index i = 0; i < nv; ++i) {
    if (!mask.projectable[i]) continue;
    const Projection p{mask.pixels(0, i), mask.pixels(1, i), cm.points(2, i)};
    if (!in_frame(p, cam)) continue;
    const int px = std::min(static_cast<int>(std::floor(p.x)), cam.width - 1);
    const int py = std::min(static_cast<int>(std::floor(p.y)), cam.height - 1);
    const long long key = static_cast<long long>(py) * cam.width + px;
    auto [it, inserted] = pixel_query.try_emplace(key, static_cast<int>(queries.size()));
    if (inserted) {
      queries.push_back({px, py});
      cells[static_cast<long long>(py / kCell) * cells_x + px / kCell].push_back(it->second);
    }
    query_of[i] = it->second;
  }

  std::array<std::array<Eigen::Vector3d, 3>, 2> clipped;
  for (int f = 0; f < static_cast<int>(faces.size()) && !queries.empty(); ++f) {
    const auto& fc = faces[f];
    const std::array<Eigen::Vector3d, 3> tri = {cm.points.col(fc[0]), cm.points.col(fc[1]), cm.points.col(fc[2])};
    if (detail::degenerate(tri[0], tri[1], tri[2])) {
      ++mask.degenerate_faces;
      continue;
    }
    const int pieces = detail::clip_near(tri, clipped);
    for (int piece = 0; piece < pieces; ++piece) {
      std::array<double, 3> sx, sy, iz;
      for (int k = 0; k < 3; ++k) {
        const auto& q = clipped[piece][k];
        iz[k] = 1.0 / q.z();
        sx[k] = cam.focal * q.x() * iz[k] + cam.cx();
        sy[k] = cam.focal * q.y() * iz[k] + cam.cy();
      }
      const double area = (sx[1] - sx[0]) * (sy[2] - sy[0]) - (sy[1] - sy[0]) * (sx[2] - sx[0]);
      if (std::abs(area) < 1e-12) continue;
      const double minx = std::max(0.0, *std::min_element(sx.begin(), sx.end()));
      const double maxx = std::min(cam.width - 1.0, *std::max_element(sx.begin(), sx.end()));
      const double miny = std::max(0.0, *std::min_element(sy.begin(), sy.end()));
      const double maxy = std::min(cam.height - 1.0, *std::max_element(sy.begin(), sy.end()));
      if (minx > maxx || miny > maxy) continue;
      const int cx0 = static_cast<int>(minx) / kCell, cx1 = static_cast<int>(maxx) / kCell;
      const int cy0 = static_cast<int>(miny) / kCell, cy1 = static_cast<int>(maxy) / kCell;
      for (int cyi = cy0; cyi <= cy1; ++cyi) {
        for (int cxi = cx0; cxi <= cx1; ++cxi) {
          const auto it = cells.find(static_cast<long long>(cyi) * cells_x + cxi);
          if (it == cells.end()) continue;
          for (const int qi : it->second) {
            auto& q = queries[qi];
            const double px = q.px + 0.5, py = q.py + 0.5;
            const double w0 = (sx[2] - sx[1]) * (py - sy[1]) - (sy[2] - sy[1]) * (px - sx[1]);
            const double w1 = (sx[0] - sx[2]) * (py - sy[2]) - (sy[0] - sy[2]) * (px - sx[2]);
            const double w2 = (sx[1] - sx[0]) * (py - sy[0]) - (sy[1] - sy[0]) * (px - sx[0]);
            const bool inside = area > 0.0 ? (w0 >= 0.0 && w1 >= 0.0 && w2 >= 0.0)
                                           : (w0 <= 0.0 && w1 <= 0.0 && w2 <= 0.0);
            if (!inside) continue;
            const double inv_depth = (w0 * iz[0] + w1 * iz[1] + w2 * iz[2]) / area;
            if (inv_depth > q.inv_depth) {
              q.inv_depth = inv_depth;
              q.face = f;
            }
          }
        }
      }
    }
  }

  for (Eigen::Index i = 0; i < nv; ++i) {
    if (query_of[i] < 0) continue;
    const auto& q = queries[query_of[i]];
    const Eigen::Vector3d dir = cm.points.col(i);
    bool occluded = false;
    if (q.face >= 0) {
      // Depth of the front-most face's plane along this vertex's exact ray.
      const auto& fc = faces[q.face];
      const Eigen::Vector3d a = cm.points.col(fc[0]);
      const Eigen::Vector3d n = (cm.points.col(fc[1]) - a).cross(cm.points.col(fc[2]) - a);
      const double denom = n.dot(dir);
      if (std::abs(denom) > 1e-15) {
        const double t = n.dot(a) / denom;
        occluded = t > 0.0 && t * dir.z() < dir.z() - opt.depth_tolerance;
      }
    }
    mask.occluded[i] = occluded;
    mask.visible[i] = !occluded;
  }
  return mask;
}

// Exact per-vertex ray cast against every face; validation oracle for the
// Z-buffer path with the same visibility semantics.
inline VisibilityMask raycast_visibility_oracle(const Eigen::Matrix3Xd& v, const std::vector<Eigen::Vector3i>& faces,
                                                const Camera& cam, const VisibilityOptions& opt = {}) {
  auto cm = detail::prepare(v, cam);
  auto& mask = cm.mask;
  for (const auto& fc : faces) {
    if (detail::degenerate(cm.points.col(fc[0]), cm.points.col(fc[1]), cm.points.col(fc[2]))) ++mask.degenerate_faces;
  }
  for (Eigen::Index i = 0; i < v.cols(); ++i) {
    if (!mask.projectable[i]) continue;
    const Eigen::Vector3d dir = cm.points.col(i);
    const double t = detail::nearest_hit(cm.points, faces, dir);
    mask.occluded[i] = t * dir.z() < dir.z() - opt.depth_tolerance;
    const Projection p{mask.pixels(0, i), mask.pixels(1, i), dir.z()};
    mask.visible[i] = in_frame(p, cam) && !mask.occluded[i];
  }
  return mask;
}

// Marks vertices whose occlusion state is ambiguous at pixel scale: casting
// rays through points up to `radius_px` away from the projection (ignoring
// the vertex's own faces) does not give a consistent answer. Z-buffer and
// ray-cast results may legitimately differ only at such vertices.
inline std::vector<bool> silhouette_adjacent(const Eigen::Matrix3Xd& v, const std::vector<Eigen::Vector3i>& faces,
                                             const Camera& cam, double radius_px = 1.0,
                                             const VisibilityOptions& opt = {}) {
  auto cm = detail::prepare(v, cam);
  std::vector<std::vector<int>> incident(v.cols());
  for (int f = 0; f < static_cast<int>(faces.size()); ++f) {
    for (int c = 0; c < 3; ++c) incident[faces[f][c]].push_back(f);
  }
  std::vector<bool> out(v.cols(), false);
  constexpr std::array<std::array<double, 2>, 9> kOffsets = {{{0, 0}, {1, 0}, {-1, 0}, {0, 1}, {0, -1},
                                                             {0.7071, 0.7071}, {-0.7071, 0.7071},
                                                             {0.7071, -0.7071}, {-0.7071, -0.7071}}};
  for (Eigen::Index i = 0; i < v.cols(); ++i) {
    if (!cm.mask.projectable[i]) continue;
    const double z = cm.points(2, i);
    int occluded = 0;
    for (const auto& o : kOffsets) {
      const double x = cm.mask.pixels(0, i) + radius_px * o[0];
      const double y = cm.mask.pixels(1, i) + radius_px * o[1];
      const Eigen::Vector3d dir((x - cam.cx()) / cam.focal * z, (y - cam.cy()) / cam.focal * z, z);
      const double t = detail::nearest_hit(cm.points, faces, dir, &incident[i]);
      if (t * z < z - opt.depth_tolerance) ++occluded;
    }
    out[i] = occluded != 0 && occluded != static_cast<int>(kOffsets.size());
  }
  return out;
}

inline nlohmann::json visibility_to_json(const VisibilityMask& m) {
  nlohmann::json j;
  j["format"] = "proxhmr-visibility";
  j["version"] = 1;
  j["degenerate_faces"] = m.degenerate_faces;
  nlohmann::json verts = nlohmann::json::array();
  for (std::size_t i = 0; i < m.visible.size(); ++i) {
    nlohmann::json e = {{"index", i}, {"visible", static_cast<bool>(m.visible[i])},
                        {"occluded", static_cast<bool>(m.occluded[i])}};
    if (m.projectable[i]) e["pixel"] = {m.pixels(0, i), m.pixels(1, i)};
    verts.push_back(e);
  }
  j["vertices"] = verts;
  return j;
}

}  // namespace proxhmr
