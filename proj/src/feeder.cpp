#include "feeder_envelope/feeder.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <queue>
#include <set>
#include <sstream>

#include <json.hpp>

namespace feeder_envelope {

using nlohmann::json;

namespace {

void reject_unknown(const json& obj, std::initializer_list<std::string_view> allowed,
                    const std::string& where) {
  for (const auto& [key, _] : obj.items()) {
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
      throw FeederError("unknown field '" + key + "' in " + where);
    }
  }
}

double number(const json& obj, const char* key, const std::string& where) {
  auto it = obj.find(key);
  if (it == obj.end()) throw FeederError("missing field '" + std::string(key) + "' in " + where);
  if (!it->is_number()) throw FeederError("field '" + std::string(key) + "' in " + where + " is not a number");
  double v = it->get<double>();
  if (!std::isfinite(v)) throw FeederError("field '" + std::string(key) + "' in " + where + " is not finite");
  return v;
}

int integer(const json& obj, const char* key, const std::string& where) {
  auto it = obj.find(key);
  if (it == obj.end()) throw FeederError("missing field '" + std::string(key) + "' in " + where);
  if (!it->is_number_integer()) throw FeederError("field '" + std::string(key) + "' in " + where + " is not an integer");
  return it->get<int>();
}

// Rejects cycles and disconnected graphs. Assumes exactly n edges on n+1 nodes.
void check_tree(int node_count, const std::vector<Branch>& branches) {
  std::vector<int> root(node_count);
  for (int i = 0; i < node_count; ++i) root[i] = i;
  auto find = [&](int a) {
    while (root[a] != a) a = root[a] = root[root[a]];
    return a;
  };
  for (const auto& b : branches) {
    int ra = find(b.from), rb = find(b.to);
    if (ra == rb) throw FeederError("non-radial feeder: branch closes a cycle");
    root[ra] = rb;
  }
  int r0 = find(0);
  for (int i = 1; i < node_count; ++i) {
    if (find(i) != r0) throw FeederError("non-radial feeder: node graph is disconnected");
  }
}

}  // namespace

int FeederModel::index_of(int node_id) const {
  auto it = std::find(node_ids.begin(), node_ids.end(), node_id);
  if (it == node_ids.end()) throw FeederError("unknown node id " + std::to_string(node_id));
  return static_cast<int>(it - node_ids.begin());
}

FeederModel load_feeder(std::string_view source) {
  json doc;
  try {
    doc = json::parse(source);
  } catch (const json::parse_error& e) {
    throw FeederError(std::string("feeder parse error: ") + e.what());
  }
  if (!doc.is_object()) throw FeederError("feeder document must be a JSON object");
  reject_unknown(doc, {"base", "nodes", "branches"}, "feeder");
  if (!doc.contains("base") || !doc.contains("nodes") || !doc.contains("branches")) {
    throw FeederError("feeder requires 'base', 'nodes' and 'branches'");
  }
  const json& base = doc["base"];
  if (!base.is_object()) throw FeederError("'base' must be an object");
  reject_unknown(base, {"v0_pu2"}, "base");

  FeederModel model;
  model.v0 = number(base, "v0_pu2", "base");
  if (model.v0 <= 0.0) throw FeederError("substation voltage v0_pu2 must be positive");

  const json& nodes = doc["nodes"];
  const json& branches = doc["branches"];
  if (!nodes.is_array() || !branches.is_array()) throw FeederError("'nodes' and 'branches' must be arrays");

  std::map<int, int> index;
  std::vector<std::pair<double, double>> limits;
  std::vector<int> ids;
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    const json& nd = nodes[i];
    std::string where = "nodes[" + std::to_string(i) + "]";
    if (!nd.is_object()) throw FeederError(where + " must be an object");
    reject_unknown(nd, {"id", "vmin_pu2", "vmax_pu2"}, where);
    int id = integer(nd, "id", where);
    double lo = number(nd, "vmin_pu2", where);
    double hi = number(nd, "vmax_pu2", where);
    if (!(lo < hi)) throw FeederError(where + ": vmin_pu2 must be below vmax_pu2");
    if (lo <= 0.0) throw FeederError(where + ": vmin_pu2 must be positive");
    if (index.contains(id)) throw FeederError("duplicate node id " + std::to_string(id));
    index[id] = static_cast<int>(ids.size());
    ids.push_back(id);
    limits.emplace_back(lo, hi);
  }
  if (!index.contains(0)) throw FeederError("missing substation: no node with id 0");

  // Substation goes to index 0, the rest keep file order.
  model.node_ids.push_back(0);
  model.vmin.push_back(limits[index[0]].first);
  model.vmax.push_back(limits[index[0]].second);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] == 0) continue;
    model.node_ids.push_back(ids[i]);
    model.vmin.push_back(limits[i].first);
    model.vmax.push_back(limits[i].second);
  }
  std::map<int, int> pos;
  for (std::size_t i = 0; i < model.node_ids.size(); ++i) pos[model.node_ids[i]] = static_cast<int>(i);

  for (std::size_t i = 0; i < branches.size(); ++i) {
    const json& br = branches[i];
    std::string where = "branches[" + std::to_string(i) + "]";
    if (!br.is_object()) throw FeederError(where + " must be an object");
    reject_unknown(br, {"from", "to", "r_pu", "x_pu", "lmax_pu2", "pmin_pu", "pmax_pu", "qmin_pu", "qmax_pu"},
                   where);
    Branch b;
    int from = integer(br, "from", where);
    int to = integer(br, "to", where);
    if (!pos.contains(from) || !pos.contains(to)) throw FeederError(where + " references an unknown node");
    if (from == to) throw FeederError(where + " is a self loop");
    b.from = pos[from];
    b.to = pos[to];
    b.r = number(br, "r_pu", where);
    b.x = number(br, "x_pu", where);
    b.lmax = number(br, "lmax_pu2", where);
    b.pmin = number(br, "pmin_pu", where);
    b.pmax = number(br, "pmax_pu", where);
    b.qmin = number(br, "qmin_pu", where);
    b.qmax = number(br, "qmax_pu", where);
    if (b.r < 0.0 || b.x < 0.0) throw FeederError(where + ": negative impedance");
    if (b.lmax <= 0.0) throw FeederError(where + ": lmax_pu2 must be positive");
    if (b.pmin > b.pmax || b.qmin > b.qmax) throw FeederError(where + ": flow bounds are inverted");
    model.branches.push_back(b);
  }

  int node_count = static_cast<int>(model.node_ids.size());
  if (node_count < 2) throw FeederError("feeder needs at least one branch");
  if (static_cast<int>(model.branches.size()) != node_count - 1) {
    throw FeederError("non-radial feeder: " + std::to_string(model.branches.size()) + " branches for " +
                      std::to_string(node_count) + " nodes (a tree needs one fewer branch than nodes)");
  }
  check_tree(node_count, model.branches);
  return model;
}

FeederModel load_feeder_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FeederError("cannot open feeder file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return load_feeder(ss.str());
}

FeederModel order_radial(const FeederModel& model) {
  const int count = static_cast<int>(model.node_ids.size());
  std::vector<std::vector<int>> incident(count);
  for (int e = 0; e < static_cast<int>(model.branches.size()); ++e) {
    incident[model.branches[e].from].push_back(e);
    incident[model.branches[e].to].push_back(e);
  }
  auto other = [&](int e, int node) {
    const Branch& b = model.branches[e];
    return b.from == node ? b.to : b.from;
  };
  // Neighbors in ascending external id so the order is reproducible.
  for (int v = 0; v < count; ++v) {
    std::sort(incident[v].begin(), incident[v].end(), [&](int a, int b) {
      return model.node_ids[other(a, v)] < model.node_ids[other(b, v)];
    });
  }

  std::vector<int> new_index(count, -1);
  std::vector<int> order;
  std::vector<int> via(count, -1);
  std::queue<int> frontier;
  frontier.push(0);
  new_index[0] = 0;
  order.push_back(0);
  while (!frontier.empty()) {
    int v = frontier.front();
    frontier.pop();
    for (int e : incident[v]) {
      int w = other(e, v);
      if (new_index[w] >= 0) continue;
      new_index[w] = static_cast<int>(order.size());
      order.push_back(w);
      via[w] = e;
      frontier.push(w);
    }
  }
  if (static_cast<int>(order.size()) != count) throw FeederError("non-radial feeder: disconnected");

  FeederModel out;
  out.v0 = model.v0;
  out.warnings = model.warnings;
  out.ordered = true;
  out.node_ids.resize(count);
  out.vmin.resize(count);
  out.vmax.resize(count);
  out.branches.resize(count - 1);
  for (int old = 0; old < count; ++old) {
    int k = new_index[old];
    out.node_ids[k] = model.node_ids[old];
    out.vmin[k] = model.vmin[old];
    out.vmax[k] = model.vmax[old];
  }
  for (int k = 1; k < count; ++k) {
    int old = order[k];
    Branch b = model.branches[via[old]];
    int parent = new_index[b.from == old ? b.to : b.from];
    if (b.to != old) {
      out.warnings.push_back("branch " + std::to_string(model.node_ids[b.from]) + "->" +
                             std::to_string(model.node_ids[b.to]) + " reoriented away from the substation");
    }
    b.from = parent;
    b.to = k;
    out.branches[k - 1] = b;
  }
  return out;
}

FeederModel load_ordered_feeder_file(const std::string& path) {
  return order_radial(load_feeder_file(path));
}

std::vector<int> leaf_ids(const FeederModel& model) {
  std::vector<bool> has_child(model.node_ids.size(), false);
  for (const auto& b : model.branches) has_child[b.from] = true;
  std::vector<int> leaves;
  for (std::size_t k = 1; k < model.node_ids.size(); ++k) {
    if (!has_child[k]) leaves.push_back(model.node_ids[k]);
  }
  std::sort(leaves.begin(), leaves.end());
  return leaves;
}

}  // namespace feeder_envelope
