// SPDX-FileCopyrightText: Copyright (c) 2026 The molflow Authors.
// SPDX-License-Identifier: Apache-2.0

#include "molflow/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>

#include "molflow/error.hpp"

namespace molflow {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Alignment

SymmetricEigen3 jacobi_eigen3(const Mat3& input, double tol, int max_sweeps) {
  Mat3 a = input;
  Mat3 v{};
  for (int i = 0; i < 3; ++i) v[i][i] = 1.0;
  for (int sweep = 0; sweep < max_sweeps; ++sweep) {
    const double off = a[0][1] * a[0][1] + a[0][2] * a[0][2] + a[1][2] * a[1][2];
    double scale = 0.0;
    for (int i = 0; i < 3; ++i) scale += a[i][i] * a[i][i];
    if (off <= tol * tol * std::max(scale, 1e-300)) break;
    for (int p = 0; p < 2; ++p) {
      for (int q = p + 1; q < 3; ++q) {
        if (a[p][q] == 0.0) continue;
        const double theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
        const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (int k = 0; k < 3; ++k) {
          const double akp = a[k][p], akq = a[k][q];
          a[k][p] = c * akp - s * akq;
          a[k][q] = s * akp + c * akq;
        }
        for (int k = 0; k < 3; ++k) {
          const double apk = a[p][k], aqk = a[q][k];
          a[p][k] = c * apk - s * aqk;
          a[q][k] = s * apk + c * aqk;
        }
        for (int k = 0; k < 3; ++k) {
          const double vkp = v[k][p], vkq = v[k][q];
          v[k][p] = c * vkp - s * vkq;
          v[k][q] = s * vkp + c * vkq;
        }
      }
    }
  }
  std::array<int, 3> idx = {0, 1, 2};
  std::sort(idx.begin(), idx.end(), [&](int x, int y) { return a[x][x] > a[y][y]; });
  SymmetricEigen3 out;
  for (int j = 0; j < 3; ++j) {
    out.values[j] = a[idx[j]][idx[j]];
    for (int k = 0; k < 3; ++k) out.vectors[k][j] = v[k][idx[j]];
  }
  return out;
}

namespace {

Vec3d cross3(const Vec3d& a, const Vec3d& b) {
  return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]};
}

double norm3(const Vec3d& a) { return std::sqrt(a[0] * a[0] + a[1] * a[1] + a[2] * a[2]); }

double det3(const Mat3& m) {
  return m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) -
         m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0]) +
         m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
}

// Any unit vector orthogonal to unit u.
Vec3d orthogonal_to(const Vec3d& u) {
  const Vec3d axis = std::abs(u[0]) < 0.9 ? Vec3d{1, 0, 0} : Vec3d{0, 1, 0};
  Vec3d w = cross3(u, axis);
  const double n = norm3(w);
  return {w[0] / n, w[1] / n, w[2] / n};
}

}  // namespace

AlignmentResult kabsch_rmsd(const Conformation& a, const Conformation& b, bool heavy_only) {
  if (a.atom_count() != b.atom_count()) {
    throw ShapeError("kabsch_rmsd: atom counts differ (" + std::to_string(a.atom_count()) + " vs " +
                     std::to_string(b.atom_count()) + ")");
  }
  std::vector<std::size_t> sel;
  for (std::size_t i = 0; i < a.atom_count(); ++i) {
    if (!heavy_only || a.heavy_mask.empty() || a.heavy_mask[i]) sel.push_back(i);
  }
  if (sel.empty()) throw ValidationError("kabsch_rmsd: no atoms selected");
  const double n = static_cast<double>(sel.size());
  Vec3d ca{}, cb{};
  for (std::size_t i : sel) {
    for (int d = 0; d < 3; ++d) {
      ca[d] += a.coords(i, d) / n;
      cb[d] += b.coords(i, d) / n;
    }
  }
  // H = sum_k a_k b_k^T over centered points.
  Mat3 h{};
  for (std::size_t i : sel) {
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 3; ++c) h[r][c] += (a.coords(i, r) - ca[r]) * (b.coords(i, c) - cb[c]);
    }
  }
  Mat3 hth{};
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) {
      for (int k = 0; k < 3; ++k) hth[r][c] += h[k][r] * h[k][c];
    }
  }
  const SymmetricEigen3 eig = jacobi_eigen3(hth);
  const Mat3& v = eig.vectors;
  // u_j = H v_j / sigma_j for the two leading directions, orthogonalized.
  // Small eigenvalues of H^T H carry absolute error ~eps*sigma_1^2, so the
  // third column is always u1 x u2; the det correction below absorbs its sign.
  std::array<Vec3d, 3> u{};
  auto hv = [&](int j) {
    Vec3d out{};
    for (int r = 0; r < 3; ++r) out[r] = h[r][0] * v[0][j] + h[r][1] * v[1][j] + h[r][2] * v[2][j];
    return out;
  };
  u[0] = hv(0);
  const double s1 = norm3(u[0]);
  if (s1 > 0.0) {
    for (double& x : u[0]) x /= s1;
  } else {
    u[0] = {1, 0, 0};
  }
  u[1] = hv(1);
  const double proj = u[1][0] * u[0][0] + u[1][1] * u[0][1] + u[1][2] * u[0][2];
  for (int r = 0; r < 3; ++r) u[1][r] -= proj * u[0][r];
  const double s2 = norm3(u[1]);
  if (s2 > 1e-8 * s1 && s2 > 0.0) {
    for (double& x : u[1]) x /= s2;
  } else {
    u[1] = orthogonal_to(u[0]);
  }
  u[2] = cross3(u[0], u[1]);
  Mat3 um{};
  for (int r = 0; r < 3; ++r) {
    for (int j = 0; j < 3; ++j) um[r][j] = u[j][r];
  }
  const double d = det3(v) * det3(um) < 0 ? -1.0 : 1.0;
  AlignmentResult res;
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) {
      res.rotation[r][c] = v[r][0] * um[c][0] + v[r][1] * um[c][1] + d * v[r][2] * um[c][2];
    }
  }
  for (int r = 0; r < 3; ++r) {
    res.translation[r] = cb[r];
    for (int c = 0; c < 3; ++c) res.translation[r] -= res.rotation[r][c] * ca[c];
  }
  double sq = 0.0;
  for (std::size_t i : sel) {
    for (int r = 0; r < 3; ++r) {
      double x = res.translation[r];
      for (int c = 0; c < 3; ++c) x += res.rotation[r][c] * a.coords(i, c);
      const double diff = x - b.coords(i, r);
      sq += diff * diff;
    }
  }
  res.rmsd = std::sqrt(sq / n);
  return res;
}

// ---------------------------------------------------------------------------
// Ensemble scores

EnsembleScores score_matrix(const std::vector<std::vector<double>>& rmsd, double delta) {
  const std::size_t g = rmsd.size();
  if (g == 0 || rmsd[0].empty()) throw ValidationError("score_ensembles: empty ensemble");
  const std::size_t r = rmsd[0].size();
  for (const auto& row : rmsd) {
    if (row.size() != r) throw ShapeError("score_ensembles: ragged RMSD matrix");
  }
  EnsembleScores s;
  std::size_t covered = 0;
  double mat = 0.0;
  for (std::size_t j = 0; j < r; ++j) {
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < g; ++i) best = std::min(best, rmsd[i][j]);
    if (best < delta) ++covered;
    mat += best;
  }
  std::size_t missed = 0;
  for (std::size_t i = 0; i < g; ++i) {
    bool all_far = true;
    for (std::size_t j = 0; j < r; ++j) all_far = all_far && rmsd[i][j] > delta;
    if (all_far) ++missed;
  }
  s.cov = static_cast<double>(covered) / static_cast<double>(r);
  s.mat = mat / static_cast<double>(r);
  s.mis = static_cast<double>(missed) / static_cast<double>(g);
  return s;
}

std::vector<std::vector<double>> rmsd_matrix(const std::vector<Conformation>& generated,
                                             const std::vector<Conformation>& reference,
                                             bool heavy_only) {
  std::vector<std::vector<double>> m(generated.size(), std::vector<double>(reference.size()));
  for (std::size_t i = 0; i < generated.size(); ++i) {
    for (std::size_t j = 0; j < reference.size(); ++j) {
      m[i][j] = kabsch_rmsd(generated[i], reference[j], heavy_only).rmsd;
    }
  }
  return m;
}

EnsembleScores score_ensembles(const std::vector<Conformation>& generated,
                               const std::vector<Conformation>& reference, double delta,
                               bool heavy_only) {
  if (generated.empty() || reference.empty()) {
    throw ValidationError("score_ensembles: empty ensemble");
  }
  return score_matrix(rmsd_matrix(generated, reference, heavy_only), delta);
}

Summary summarize(std::vector<double> values) {
  if (values.empty()) throw ValidationError("summarize: no values");
  Summary s;
  s.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  s.median = n % 2 == 1 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
  return s;
}

ScoreReport score_dataset(std::vector<MoleculeScore> molecules, double delta, bool heavy_only) {
  if (molecules.empty()) throw ValidationError("score_dataset: no molecules");
  ScoreReport r;
  std::vector<double> cov, mat, mis;
  for (const MoleculeScore& m : molecules) {
    cov.push_back(m.scores.cov);
    mat.push_back(m.scores.mat);
    mis.push_back(m.scores.mis);
  }
  r.cov = summarize(cov);
  r.mat = summarize(mat);
  r.mis = summarize(mis);
  r.molecules = std::move(molecules);
  r.delta = delta;
  r.heavy_only = heavy_only;
  return r;
}

// ---------------------------------------------------------------------------
// MMD

DistanceSamples distance_samples(const MolecularGraph& graph,
                                 const std::vector<Conformation>& conformers, bool with_hydrogen) {
  const MolecularGraph ext = graph.has_auxiliary_edges() ? graph : augment_edges(graph);
  auto is_h = [&](std::size_t i) {
    return ext.atoms[i].atomic_number && *ext.atoms[i].atomic_number == 1;
  };
  DistanceSamples s;
  for (const Edge& e : ext.edges) {
    if (!with_hydrogen && (is_h(e.i) || is_h(e.j))) continue;
    s.edges.emplace_back(e.i, e.j);
  }
  for (const Conformation& c : conformers) {
    if (c.atom_count() != graph.atom_count()) {
      throw ShapeError("distance_samples: conformer atom count does not match '" + graph.id + "'");
    }
    std::vector<double> row;
    row.reserve(s.edges.size());
    for (auto [i, j] : s.edges) {
      double sq = 0.0;
      for (std::size_t d = 0; d < 3; ++d) {
        const double x = c.coords(i, d) - c.coords(j, d);
        sq += x * x;
      }
      row.push_back(std::sqrt(sq));
    }
    s.rows.push_back(std::move(row));
  }
  return s;
}

namespace {

double sq_dist(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) s += (a[k] - b[k]) * (a[k] - b[k]);
  return s;
}

std::vector<std::vector<double>> project(const DistanceSamples& s,
                                         const std::vector<std::size_t>& cols) {
  std::vector<std::vector<double>> out;
  out.reserve(s.rows.size());
  for (const auto& row : s.rows) {
    std::vector<double> p;
    p.reserve(cols.size());
    for (std::size_t c : cols) p.push_back(row[c]);
    out.push_back(std::move(p));
  }
  // Sorting makes every estimate independent of sample order, bit for bit.
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace

double median_bandwidth(const std::vector<std::vector<double>>& points) {
  std::vector<double> d;
  for (std::size_t i = 0; i < points.size(); ++i) {
    for (std::size_t j = i + 1; j < points.size(); ++j) {
      const double v = std::sqrt(sq_dist(points[i], points[j]));
      if (v > 0.0) d.push_back(v);
    }
  }
  if (d.empty()) return 1.0;
  return summarize(std::move(d)).median;
}

double mmd2_unbiased(const std::vector<std::vector<double>>& x,
                     const std::vector<std::vector<double>>& y, double bandwidth) {
  const std::size_t m = x.size(), n = y.size();
  if (m < 2 || n < 2) throw ValidationError("mmd: each side needs at least 2 samples");
  const double gamma = 1.0 / (2.0 * bandwidth * bandwidth);
  auto k = [&](const std::vector<double>& a, const std::vector<double>& b) {
    return std::exp(-gamma * sq_dist(a, b));
  };
  double kxx = 0.0, kyy = 0.0, kxy = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      if (i != j) kxx += k(x[i], x[j]);
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (i != j) kyy += k(y[i], y[j]);
    }
  }
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) kxy += k(x[i], y[j]);
  }
  const double dm = static_cast<double>(m), dn = static_cast<double>(n);
  return kxx / (dm * (dm - 1.0)) + kyy / (dn * (dn - 1.0)) - 2.0 * kxy / (dm * dn);
}

MmdResult mmd(const DistanceSamples& generated, const DistanceSamples& reference,
              MmdVariant variant, std::uint64_t seed, std::size_t max_pairs) {
  if (generated.edges != reference.edges) throw ValidationError("mmd: edge sets differ");
  if (generated.rows.size() < 2 || reference.rows.size() < 2) {
    throw ValidationError("mmd: each side needs at least 2 samples");
  }
  const std::size_t ne = generated.edges.size();
  std::vector<std::vector<std::size_t>> groups;
  switch (variant) {
    case MmdVariant::Single:
      for (std::size_t e = 0; e < ne; ++e) groups.push_back({e});
      break;
    case MmdVariant::Pair: {
      std::vector<std::vector<std::size_t>> pairs;
      for (std::size_t e = 0; e < ne; ++e) {
        for (std::size_t f = e + 1; f < ne; ++f) pairs.push_back({e, f});
      }
      if (pairs.size() > max_pairs) {
        std::mt19937_64 rng(seed);
        std::shuffle(pairs.begin(), pairs.end(), rng);
        pairs.resize(max_pairs);
        std::sort(pairs.begin(), pairs.end());
      }
      groups = std::move(pairs);
      break;
    }
    case MmdVariant::All: {
      std::vector<std::size_t> all(ne);
      std::iota(all.begin(), all.end(), 0);
      groups.push_back(std::move(all));
      break;
    }
  }
  MmdResult r;
  if (groups.empty()) return r;
  double total = 0.0;
  for (const auto& cols : groups) {
    const auto x = project(generated, cols);
    const auto y = project(reference, cols);
    std::vector<std::vector<double>> pooled = x;
    pooled.insert(pooled.end(), y.begin(), y.end());
    std::sort(pooled.begin(), pooled.end());
    const double h = median_bandwidth(pooled);
    r.bandwidths.push_back(h);
    total += mmd2_unbiased(x, y, h);
  }
  r.estimate = std::max(total / static_cast<double>(groups.size()), 0.0);
  return r;
}

const char* to_string(MmdVariant v) {
  switch (v) {
    case MmdVariant::Single: return "single";
    case MmdVariant::Pair: return "pair";
    case MmdVariant::All: return "all";
  }
  return "?";
}

// ---------------------------------------------------------------------------
// Reports

namespace {

json summary_json(const Summary& s) { return {{"mean", s.mean}, {"median", s.median}}; }

json mmd_json(const MmdResult& r) {
  return {{"estimate", r.estimate}, {"bandwidths", r.bandwidths}};
}

}  // namespace

json report_json(const ScoreReport& report, const std::vector<MmdSection>& mmd_sections) {
  json mols = json::array();
  for (const MoleculeScore& m : report.molecules) {
    mols.push_back({{"id", m.id},
                    {"generated", m.generated},
                    {"reference", m.reference},
                    {"masked_atoms", m.masked_atoms},
                    {"cov", m.scores.cov},
                    {"mat", m.scores.mat},
                    {"mis", m.scores.mis}});
  }
  json j = {{"delta", report.delta},
            {"heavy_only", report.heavy_only},
            {"cov", summary_json(report.cov)},
            {"mat", summary_json(report.mat)},
            {"mis", summary_json(report.mis)},
            {"molecules", std::move(mols)}};
  if (!mmd_sections.empty()) {
    json arr = json::array();
    for (const MmdSection& s : mmd_sections) {
      arr.push_back({{"id", s.id},
                     {"single", mmd_json(s.single)},
                     {"pair", mmd_json(s.pair)},
                     {"all", mmd_json(s.all)}});
    }
    j["mmd"] = std::move(arr);
  }
  return j;
}

std::string report_text(const ScoreReport& report, const std::vector<MmdSection>& mmd_sections) {
  std::ostringstream out;
  char buf[256];
  std::snprintf(buf, sizeof buf, "delta %.3f A   atoms %s   molecules %zu\n", report.delta,
                report.heavy_only ? "heavy" : "all", report.molecules.size());
  out << buf;
  std::snprintf(buf, sizeof buf, "%-24s %9s %9s %9s %9s %9s %9s\n", "", "COV-mean", "COV-med",
                "MAT-mean", "MAT-med", "MIS-mean", "MIS-med");
  out << buf;
  std::snprintf(buf, sizeof buf, "%-24s %8.2f%% %8.2f%% %9.4f %9.4f %8.2f%% %8.2f%%\n", "dataset",
                100 * report.cov.mean, 100 * report.cov.median, report.mat.mean,
                report.mat.median, 100 * report.mis.mean, 100 * report.mis.median);
  out << buf;
  for (const MoleculeScore& m : report.molecules) {
    std::snprintf(buf, sizeof buf, "%-24s %8.2f%% %9s %9.4f %9s %8.2f%% %9s\n", m.id.c_str(),
                  100 * m.scores.cov, "", m.scores.mat, "", 100 * m.scores.mis, "");
    out << buf;
  }
  if (!mmd_sections.empty()) {
    std::snprintf(buf, sizeof buf, "\n%-24s %12s %12s %12s\n", "MMD", "single", "pair", "all");
    out << buf;
    for (const MmdSection& s : mmd_sections) {
      std::snprintf(buf, sizeof buf, "%-24s %12.6f %12.6f %12.6f\n", s.id.c_str(),
                    s.single.estimate, s.pair.estimate, s.all.estimate);
      out << buf;
    }
  }
  return out.str();
}

}  // namespace molflow
