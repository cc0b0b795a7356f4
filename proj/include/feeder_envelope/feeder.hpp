#pragma once

#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace feeder_envelope {

/// Raised for malformed or physically invalid feeder descriptions.
class FeederError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A line segment between two node indices. After ordering, `to` is the child
/// node and the branch is identified with it: branch k has to == k.
struct Branch {
  int from = 0;
  int to = 0;
  double r = 0.0;  // pu
  double x = 0.0;  // pu
  double lmax = 0.0;  // squared current limit, pu^2
  double pmin = 0.0;
  double pmax = 0.0;
  double qmin = 0.0;
  double qmax = 0.0;

  double z2() const { return r * r + x * x; }
};

/// Radial feeder in per-unit. Node index 0 is the substation. Voltages are
/// squared magnitudes (pu^2), currents are squared magnitudes (pu^2).
///
/// Branch flows P_j, Q_j follow the branch-flow convention used throughout
/// the library: the power leaving node j toward its parent, measured at j.
/// A feeder serving load therefore carries negative flows.
struct FeederModel {
  double v0 = 1.0;
  std::vector<int> node_ids;  // external id of each node index; node_ids[0] == 0
  std::vector<double> vmin;   // per node index, entry 0 unused
  std::vector<double> vmax;
  std::vector<Branch> branches;
  std::vector<std::string> warnings;
  bool ordered = false;

  /// Number of non-substation nodes, which equals the number of branches.
  int size() const { return static_cast<int>(branches.size()); }

  /// Node index of an external id; throws FeederError if unknown.
  int index_of(int node_id) const;

  /// Parent of node k (1..n). Requires an ordered model.
  int parent(int k) const { return branches[k - 1].from; }
};

/// Parse and validate a feeder JSON document. The result keeps file order
/// (substation first); call order_radial before building matrices.
FeederModel load_feeder(std::string_view source);
FeederModel load_feeder_file(const std::string& path);

/// Renumber nodes breadth-first from the substation so that every parent has
/// a smaller index than its children, orient each branch parent->child, and
/// store branch k at position k-1 with to == k. node_ids carries the
/// permutation back to user numbering.
FeederModel order_radial(const FeederModel& model);

/// Convenience: load_feeder followed by order_radial.
FeederModel load_ordered_feeder_file(const std::string& path);

/// Leaves of an ordered model, as external ids in ascending order.
std::vector<int> leaf_ids(const FeederModel& model);

}  // namespace feeder_envelope
