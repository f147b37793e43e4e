// SPDX-FileCopyrightText: Copyright (c) 2026 The molflow Authors.
// SPDX-License-Identifier: Apache-2.0

#include <array>
#include <fstream>
#include <string_view>

#include "molflow/error.hpp"
#include "molflow/molgraph.hpp"

namespace molflow {

namespace {

using nlohmann::json;

// Lowercase names; the enum's trailing None value maps to JSON null.
constexpr std::array<std::string_view, 6> kHybridizationNames = {"s",   "sp",   "sp2",
                                                                 "sp3", "sp3d", "sp3d2"};
constexpr std::array<std::string_view, 3> kChiralityNames = {"cw", "ccw", "other"};
constexpr std::array<std::string_view, 4> kBondTypeNames = {"single", "double", "triple",
                                                            "aromatic"};
constexpr std::array<std::string_view, 5> kStereoNames = {"z", "e", "cis", "trans", "any"};

class SchemaError : public Error {
 public:
  using Error::Error;
};

template <class Enum, std::size_t N>
json enum_to_json(Enum value, const std::array<std::string_view, N>& names) {
  const auto raw = static_cast<std::size_t>(value);
  if (raw >= N) return nullptr;
  return std::string(names[raw]);
}

template <class Enum, std::size_t N>
Enum enum_from_json(const json& j, const char* key, const std::array<std::string_view, N>& names) {
  auto it = j.find(key);
  if (it == j.end() || it->is_null()) return static_cast<Enum>(N);
  if (!it->is_string()) throw SchemaError(std::string(key) + ": expected string or null");
  const auto s = it->get<std::string>();
  for (std::size_t k = 0; k < N; ++k) {
    if (names[k] == s) return static_cast<Enum>(k);
  }
  throw SchemaError(std::string(key) + ": unknown value '" + s + "'");
}

json optional_to_json(const std::optional<int>& v) { return v ? json(*v) : json(nullptr); }

std::optional<int> optional_from_json(const json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end() || it->is_null()) return std::nullopt;
  if (!it->is_number_integer()) throw SchemaError(std::string(key) + ": expected integer or null");
  return it->get<int>();
}

bool bool_from_json(const json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end() || it->is_null()) return false;
  if (!it->is_boolean()) throw SchemaError(std::string(key) + ": expected boolean");
  return it->get<bool>();
}

json atom_to_json(const AtomAttributes& a) {
  return {{"atomic_number", optional_to_json(a.atomic_number)},
          {"hybridization", enum_to_json(a.hybridization, kHybridizationNames)},
          {"degree", optional_to_json(a.degree)},
          {"formal_charge", optional_to_json(a.formal_charge)},
          {"total_h", optional_to_json(a.total_h)},
          {"implicit_valence", optional_to_json(a.implicit_valence)},
          {"total_valence", optional_to_json(a.total_valence)},
          {"radical_electrons", optional_to_json(a.radical_electrons)},
          {"chirality", enum_to_json(a.chirality, kChiralityNames)},
          {"is_aromatic", a.is_aromatic},
          {"is_in_ring", a.is_in_ring}};
}

AtomAttributes atom_from_json(const json& j) {
  if (!j.is_object()) throw SchemaError("atom: expected object");
  AtomAttributes a;
  a.atomic_number = optional_from_json(j, "atomic_number");
  a.hybridization = enum_from_json<Hybridization>(j, "hybridization", kHybridizationNames);
  a.degree = optional_from_json(j, "degree");
  a.formal_charge = optional_from_json(j, "formal_charge");
  a.total_h = optional_from_json(j, "total_h");
  a.implicit_valence = optional_from_json(j, "implicit_valence");
  a.total_valence = optional_from_json(j, "total_valence");
  a.radical_electrons = optional_from_json(j, "radical_electrons");
  a.chirality = enum_from_json<Chirality>(j, "chirality", kChiralityNames);
  a.is_aromatic = bool_from_json(j, "is_aromatic");
  a.is_in_ring = bool_from_json(j, "is_in_ring");
  return a;
}

json edge_to_json(const Edge& e) {
  const EdgeAttributes& a = e.attributes;
  json attrs = {{"bond_type", enum_to_json(a.bond_type, kBondTypeNames)},
                {"stereo", enum_to_json(a.stereo, kStereoNames)},
                {"is_conjugated", a.is_conjugated},
                {"is_same_ring", a.is_same_ring},
                {"shortest_path", optional_to_json(a.shortest_path)},
                {"in_ring_size", a.in_ring_size}};
  return json::array({e.i, e.j, std::move(attrs)});
}

Edge edge_from_json(const json& j) {
  if (!j.is_array() || j.size() != 3 || !j[0].is_number_integer() || !j[1].is_number_integer()) {
    throw SchemaError("edge: expected [i, j, attributes]");
  }
  if (j[0].get<long long>() < 0 || j[1].get<long long>() < 0) {
    throw SchemaError("edge: negative atom index");
  }
  Edge e;
  e.i = j[0].get<std::size_t>();
  e.j = j[1].get<std::size_t>();
  const json& attrs = j[2];
  if (!attrs.is_object()) throw SchemaError("edge attributes: expected object");
  e.attributes.bond_type = enum_from_json<BondType>(attrs, "bond_type", kBondTypeNames);
  e.attributes.stereo = enum_from_json<BondStereo>(attrs, "stereo", kStereoNames);
  e.attributes.is_conjugated = bool_from_json(attrs, "is_conjugated");
  e.attributes.is_same_ring = bool_from_json(attrs, "is_same_ring");
  e.attributes.shortest_path = optional_from_json(attrs, "shortest_path");
  if (auto it = attrs.find("in_ring_size"); it != attrs.end() && !it->is_null()) {
    if (!it->is_array() || it->size() != kRingSizeCount) {
      throw SchemaError("in_ring_size: expected 7 booleans");
    }
    for (std::size_t r = 0; r < kRingSizeCount; ++r) {
      if (!(*it)[r].is_boolean()) throw SchemaError("in_ring_size: expected 7 booleans");
      e.attributes.in_ring_size[r] = (*it)[r].get<bool>();
    }
  }
  return e;
}

}  // namespace

json molecule_to_json(const Molecule& molecule) {
  json atoms = json::array();
  for (const AtomAttributes& a : molecule.graph.atoms) atoms.push_back(atom_to_json(a));
  json edges = json::array();
  for (const Edge& e : molecule.graph.edges) edges.push_back(edge_to_json(e));
  json conformers = json::array();
  for (const Conformation& c : molecule.conformers) {
    json rows = json::array();
    for (std::size_t a = 0; a < c.coords.rows(); ++a) {
      rows.push_back({c.coords(a, 0), c.coords(a, 1), c.coords(a, 2)});
    }
    conformers.push_back(std::move(rows));
  }
  return {{"id", molecule.graph.id},
          {"atoms", std::move(atoms)},
          {"edges", std::move(edges)},
          {"conformers", std::move(conformers)}};
}

Molecule molecule_from_json(const json& j) {
  if (!j.is_object()) throw SchemaError("record: expected object");
  Molecule m;
  if (!j.contains("id") || !j["id"].is_string()) throw SchemaError("id: expected string");
  m.graph.id = j["id"].get<std::string>();
  if (!j.contains("atoms") || !j["atoms"].is_array()) throw SchemaError("atoms: expected array");
  for (const json& a : j["atoms"]) m.graph.atoms.push_back(atom_from_json(a));
  if (!j.contains("edges") || !j["edges"].is_array()) throw SchemaError("edges: expected array");
  for (const json& e : j["edges"]) m.graph.edges.push_back(edge_from_json(e));
  if (!j.contains("conformers") || !j["conformers"].is_array()) {
    throw SchemaError("conformers: expected array");
  }
  m.graph.validate();
  if (j["conformers"].empty()) {
    throw ValidationError("molecule '" + m.graph.id + "': conformer list is empty");
  }
  for (const json& conf : j["conformers"]) {
    if (!conf.is_array()) throw SchemaError("conformer: expected array of [x, y, z]");
    std::vector<double> data;
    data.reserve(conf.size() * 3);
    for (const json& row : conf) {
      if (!row.is_array() || row.size() != 3) throw SchemaError("conformer row: expected [x, y, z]");
      for (const json& v : row) {
        if (!v.is_number()) throw SchemaError("conformer row: expected numbers");
        data.push_back(v.get<double>());
      }
    }
    m.conformers.push_back(make_conformation(m.graph, ad::Tensor(conf.size(), 3, std::move(data))));
  }
  return m;
}

Dataset parse_dataset(std::istream& in) {
  Dataset out;
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw ParseError(number, std::string("malformed JSON: ") + e.what());
    }
    try {
      out.push_back(molecule_from_json(j));
    } catch (const SchemaError& e) {
      throw ParseError(number, e.what());
    } catch (const json::exception& e) {
      throw ParseError(number, e.what());
    }
  }
  return out;
}

Dataset parse_dataset(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open dataset '" + path.string() + "'");
  return parse_dataset(in);
}

void write_dataset(std::ostream& out, const Dataset& dataset) {
  for (const Molecule& m : dataset) out << molecule_to_json(m).dump() << '\n';
}

void write_dataset(const std::filesystem::path& path, const Dataset& dataset) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write dataset '" + path.string() + "'");
  write_dataset(out, dataset);
  if (!out) throw ConfigError("error writing dataset '" + path.string() + "'");
}

}  // namespace molflow
