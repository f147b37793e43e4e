// SPDX-FileCopyrightText: Copyright (c) 2026 The molflow Authors.
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <numbers>
#include <random>
#include <string>

#include "molflow/error.hpp"
#include "molflow/molgraph.hpp"

namespace molflow {

namespace {

using Vec3 = std::array<double, 3>;

constexpr double kBondLength = 1.53;
constexpr double kBondAngleDeg = 111.0;
constexpr double kTorsionNoiseDeg = 10.0;

double deg(double d) { return d * std::numbers::pi / 180.0; }

Vec3 sub(const Vec3& a, const Vec3& b) { return {a[0] - b[0], a[1] - b[1], a[2] - b[2]}; }
Vec3 cross(const Vec3& a, const Vec3& b) {
  return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]};
}
Vec3 normalized(const Vec3& a) {
  const double n = std::sqrt(a[0] * a[0] + a[1] * a[1] + a[2] * a[2]);
  return {a[0] / n, a[1] / n, a[2] / n};
}

// Places d so that |cd| = length, angle(b, c, d) = angle, dihedral(a, b, c, d) = torsion.
Vec3 place(const Vec3& a, const Vec3& b, const Vec3& c, double length, double angle,
           double torsion) {
  const Vec3 bc = normalized(sub(c, b));
  const Vec3 n = normalized(cross(sub(b, a), bc));
  const Vec3 m = cross(n, bc);
  const double x = -length * std::cos(angle);
  const double y = length * std::sin(angle) * std::cos(torsion);
  const double z = length * std::sin(angle) * std::sin(torsion);
  return {c[0] + x * bc[0] + y * m[0] + z * n[0], c[1] + x * bc[1] + y * m[1] + z * n[1],
          c[2] + x * bc[2] + y * m[2] + z * n[2]};
}

enum class Kind { Chain, Ring, Branched };

struct Template {
  Kind kind;
  std::size_t n;
};

Template parse_template(const std::string& name) {
  const auto dash = name.find('-');
  if (dash == std::string::npos) throw ConfigError("unknown toy template '" + name + "'");
  const std::string kind = name.substr(0, dash);
  std::size_t n = 0;
  try {
    std::size_t used = 0;
    n = std::stoul(name.substr(dash + 1), &used);
    if (used != name.size() - dash - 1) throw std::invalid_argument("trailing");
  } catch (const std::exception&) {
    throw ConfigError("unknown toy template '" + name + "'");
  }
  if (kind == "chain" && n >= 4 && n <= 12) return {Kind::Chain, n};
  if (kind == "ring" && n >= 3 && n <= 9) return {Kind::Ring, n};
  if (kind == "branched" && n >= 5 && n <= 12) return {Kind::Branched, n};
  throw ConfigError("unknown toy template '" + name + "'");
}

void add_bond(MolecularGraph& g, std::size_t i, std::size_t j, std::size_t ring_size) {
  Edge e;
  e.i = std::min(i, j);
  e.j = std::max(i, j);
  e.attributes.bond_type = BondType::Single;
  e.attributes.shortest_path = 1;
  if (ring_size != 0) {
    e.attributes.is_same_ring = true;
    e.attributes.in_ring_size[ring_size - kRingSizeMin] = true;
  }
  g.edges.push_back(e);
}

MolecularGraph build_graph(const Template& t, const std::string& id) {
  MolecularGraph g;
  g.id = id;
  std::size_t atoms = t.n;
  std::vector<int> element;
  std::vector<bool> in_ring;
  switch (t.kind) {
    case Kind::Chain:
      element.assign(t.n, 6);
      element[0] = 8;
      in_ring.assign(t.n, false);
      for (std::size_t k = 1; k < t.n; ++k) add_bond(g, k - 1, k, 0);
      break;
    case Kind::Branched:
      element.assign(t.n, 6);
      element[0] = 7;
      in_ring.assign(t.n, false);
      for (std::size_t k = 1; k + 1 < t.n; ++k) add_bond(g, k - 1, k, 0);
      add_bond(g, 1, t.n - 1, 0);
      break;
    case Kind::Ring:
      atoms = t.n + 2;
      element.assign(atoms, 6);
      element[atoms - 1] = 8;
      in_ring.assign(atoms, false);
      for (std::size_t k = 0; k < t.n; ++k) {
        in_ring[k] = true;
        add_bond(g, k, (k + 1) % t.n, t.n);
      }
      add_bond(g, 0, t.n, 0);
      add_bond(g, t.n, t.n + 1, 0);
      break;
  }
  std::sort(g.edges.begin(), g.edges.end(), [](const Edge& a, const Edge& b) {
    return std::pair(a.i, a.j) < std::pair(b.i, b.j);
  });
  std::vector<int> degree(atoms, 0);
  for (const Edge& e : g.edges) {
    ++degree[e.i];
    ++degree[e.j];
  }
  for (std::size_t a = 0; a < atoms; ++a) {
    AtomAttributes attr;
    attr.atomic_number = element[a];
    attr.hybridization = Hybridization::SP3;
    attr.degree = degree[a];
    attr.formal_charge = 0;
    const int valence = element[a] == 6 ? 4 : (element[a] == 7 ? 3 : 2);
    const int h = std::max(0, valence - degree[a]);
    attr.total_h = h;
    if (h >= 1) attr.implicit_valence = h;
    attr.total_valence = valence;
    attr.radical_electrons = 0;
    attr.is_in_ring = in_ring[a];
    g.atoms.push_back(attr);
  }
  return g;
}

ad::Tensor build_coords(const Template& t, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> mode(0, 2);
  std::normal_distribution<double> noise(0.0, deg(kTorsionNoiseDeg));
  auto torsion = [&]() { return deg(60.0 + 120.0 * mode(rng)) + noise(rng); };
  const double angle = deg(kBondAngleDeg);
  std::vector<Vec3> pos;
  if (t.kind == Kind::Ring) {
    const double radius = kBondLength / (2.0 * std::sin(std::numbers::pi / t.n));
    for (std::size_t k = 0; k < t.n; ++k) {
      const double phi = 2.0 * std::numbers::pi * k / t.n;
      pos.push_back({radius * std::cos(phi), radius * std::sin(phi), 0.0});
    }
    const Vec3 out = normalized(pos[0]);
    pos.push_back({pos[0][0] + kBondLength * out[0], pos[0][1] + kBondLength * out[1],
                   pos[0][2] + kBondLength * out[2]});
    pos.push_back(place(pos[1], pos[0], pos[t.n], kBondLength, angle, torsion()));
  } else {
    const std::size_t chain = t.kind == Kind::Chain ? t.n : t.n - 1;
    pos.push_back({0.0, 0.0, 0.0});
    pos.push_back({kBondLength, 0.0, 0.0});
    pos.push_back(
        {kBondLength - kBondLength * std::cos(angle), kBondLength * std::sin(angle), 0.0});
    double first_torsion = 0.0;
    for (std::size_t k = 3; k < chain; ++k) {
      const double tau = torsion();
      if (k == 3) first_torsion = tau;
      pos.push_back(place(pos[k - 3], pos[k - 2], pos[k - 1], kBondLength, angle, tau));
    }
    if (t.kind == Kind::Branched) {
      pos.push_back(
          place(pos[3], pos[2], pos[1], kBondLength, angle, first_torsion + deg(120.0)));
    }
  }
  ad::Tensor coords(pos.size(), 3);
  for (std::size_t a = 0; a < pos.size(); ++a) {
    for (std::size_t d = 0; d < 3; ++d) coords(a, d) = pos[a][d];
  }
  return coords;
}

}  // namespace

MolecularGraph toy_graph(const std::string& name) {
  return build_graph(parse_template(name), name);
}

Dataset generate_toy_dataset(const ToySpec& spec, std::uint64_t seed) {
  if (spec.conformers < 2) throw ConfigError("toy dataset: need at least 2 conformers per molecule");
  std::vector<Template> templates;
  for (const std::string& name : spec.templates) templates.push_back(parse_template(name));
  std::map<std::string, std::size_t> seen;
  std::mt19937_64 rng(seed);
  Dataset out;
  for (std::size_t k = 0; k < templates.size(); ++k) {
    const std::string& name = spec.templates[k];
    const std::size_t repeat = seen[name]++;
    Molecule m;
    m.graph = build_graph(templates[k], repeat == 0 ? name : name + "#" + std::to_string(repeat));
    for (std::size_t c = 0; c < spec.conformers; ++c) {
      m.conformers.push_back(make_conformation(m.graph, build_coords(templates[k], rng)));
    }
    out.push_back(std::move(m));
  }
  return out;
}

}  // namespace molflow
