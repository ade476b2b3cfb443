#include "emo/scan/topology.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

#include "emo/error.hpp"
#include "emo/numerics/ops.hpp"

namespace emo::scan {

std::vector<std::vector<std::size_t>> SkeletonTopology::children() const {
  std::vector<std::vector<std::size_t>> ch(parent.size());
  for (std::size_t j = 1; j < parent.size(); ++j) ch[static_cast<std::size_t>(parent[j])].push_back(j);
  return ch;
}

void SkeletonTopology::validate() const {
  EMO_CHECK(!parent.empty(), TopologyError, "topology has no joints");
  EMO_CHECK(names.empty() || names.size() == parent.size(), TopologyError, "joint name count mismatch");
  EMO_CHECK(parent[0] == kRootParent, TopologyError, "joint 0 must be the root");
  for (std::size_t j = 1; j < parent.size(); ++j) {
    EMO_CHECK(parent[j] != kRootParent, TopologyError, "joint " + std::to_string(j) + " is a second root");
    EMO_CHECK(parent[j] >= 0 && static_cast<std::size_t>(parent[j]) < j, TopologyError,
              "joint " + std::to_string(j) + " has parent " + std::to_string(parent[j]) +
                  "; parents must precede children (cycle or out-of-order tree)");
  }
}

SkeletonTopology SkeletonTopology::from_parents(std::vector<int> parent) {
  SkeletonTopology t;
  t.parent = std::move(parent);
  for (std::size_t j = 0; j < t.parent.size(); ++j) t.names.push_back("j" + std::to_string(j));
  t.validate();
  return t;
}

SkeletonTopology SkeletonTopology::parse(const std::string& text) {
  std::map<long, std::pair<long, std::string>> rows;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    std::istringstream ls(line);
    long idx, par;
    std::string name;
    if (!(ls >> idx)) continue;
    EMO_CHECK(static_cast<bool>(ls >> par >> name), TopologyError,
              "topology line " + std::to_string(lineno) + ": expected `joint_index parent_index name`");
    EMO_CHECK(rows.emplace(idx, std::make_pair(par, name)).second, TopologyError,
              "topology line " + std::to_string(lineno) + ": duplicate joint index " + std::to_string(idx));
  }
  SkeletonTopology t;
  long expect = 0;
  for (const auto& [idx, row] : rows) {
    EMO_CHECK(idx == expect, TopologyError, "topology joint indices must be 0..J-1 without gaps");
    t.parent.push_back(static_cast<int>(row.first));
    t.names.push_back(row.second);
    ++expect;
  }
  t.validate();
  return t;
}

SkeletonTopology SkeletonTopology::load(const std::filesystem::path& path) {
  std::ifstream f(path);
  EMO_CHECK(f.good(), IoError, "cannot open topology file " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return parse(ss.str());
}

std::string SkeletonTopology::serialize() const {
  std::ostringstream os;
  os << "# joint_index parent_index name\n";
  for (std::size_t j = 0; j < parent.size(); ++j)
    os << j << ' ' << parent[j] << ' ' << (names.empty() ? "j" + std::to_string(j) : names[j]) << '\n';
  return os.str();
}

SkeletonTopology default_topology() {
  // Index order interleaves left/right limbs, so sequential neighbours are
  // often not skeletal neighbours.
  static const std::vector<std::pair<int, const char*>> joints = {
      {-1, "pelvis"},       {0, "spine"},         {1, "neck"},          {2, "head"},
      {0, "l_hip"},         {0, "r_hip"},         {4, "l_knee"},        {5, "r_knee"},
      {6, "l_ankle"},       {7, "r_ankle"},       {2, "l_shoulder"},    {2, "r_shoulder"},
      {10, "l_elbow"},      {11, "r_elbow"},      {12, "l_wrist"},      {13, "r_wrist"},
      {3, "nose"},          {14, "l_index"},      {15, "r_index"},      {14, "l_thumb"},
      {15, "r_thumb"},      {16, "l_eye"},        {16, "r_eye"},
  };
  SkeletonTopology t;
  for (const auto& [p, name] : joints) {
    t.parent.push_back(p);
    t.names.emplace_back(name);
  }
  t.validate();
  return t;
}

ScanOrder ScanOrder::identity(std::size_t n) {
  ScanOrder o;
  o.perm.resize(n);
  std::iota(o.perm.begin(), o.perm.end(), 0);
  return o;
}

ScanOrder ScanOrder::reversed(std::size_t n) {
  ScanOrder o;
  o.perm.resize(n);
  std::iota(o.perm.rbegin(), o.perm.rend(), 0);
  return o;
}

bool ScanOrder::is_valid() const {
  std::vector<char> seen(perm.size(), 0);
  for (auto p : perm) {
    if (p >= perm.size() || seen[p]) return false;
    seen[p] = 1;
  }
  return true;
}

ScanOrder skeleton_order(const SkeletonTopology& topo) {
  topo.validate();
  const auto ch = topo.children();  // already ascending by construction
  ScanOrder o;
  std::vector<std::size_t> stack = {0};
  while (!stack.empty()) {
    const std::size_t j = stack.back();
    stack.pop_back();
    o.perm.push_back(j);
    for (auto it = ch[j].rbegin(); it != ch[j].rend(); ++it) stack.push_back(*it);
  }
  return o;
}

ScanOrder inverse_order(const ScanOrder& order) {
  EMO_CHECK(order.is_valid(), ShapeError, "inverse_order: not a permutation");
  ScanOrder inv;
  inv.perm.resize(order.perm.size());
  for (std::size_t i = 0; i < order.perm.size(); ++i) inv.perm[order.perm[i]] = i;
  return inv;
}

Tensor apply_order(const Tensor& x, const ScanOrder& order) {
  EMO_CHECK(x.rank() == 2 && x.dim(0) == order.perm.size(), ShapeError,
            "apply_order: " + std::to_string(order.perm.size()) + "-element order for tensor " +
                num::shape_str(x.shape()));
  const std::size_t n = x.dim(1);
  Tensor out(x.shape());
  for (std::size_t i = 0; i < order.perm.size(); ++i)
    std::copy_n(x.data().data() + order.perm[i] * n, n, out.data().data() + i * n);
  return out;
}

Var apply_order(const Var& x, const ScanOrder& order) {
  EMO_CHECK(x.value().rank() == 2 && x.value().dim(0) == order.perm.size(), ShapeError,
            "apply_order: " + std::to_string(order.perm.size()) + "-element order for tensor " +
                num::shape_str(x.shape()));
  return num::gather_rows(x, order.perm);
}

Var ordered_bidirectional_scan(const ssm::SsmParams& params, const ScanOrder& order, const Var& x) {
  const ScanOrder inv = inverse_order(order);
  const Var seq = apply_order(x, order);
  return apply_order(ssm::bidirectional_scan(params, params, seq), inv);
}

namespace {
void check_joints(const SkeletonTopology& topo, const Var& x) {
  EMO_CHECK(x.value().rank() == 2 && x.value().dim(0) == topo.size(), ShapeError,
            "local scan: " + std::to_string(x.value().rows()) + " tokens for a " + std::to_string(topo.size()) +
                "-joint topology");
}
}  // namespace

Var local_bidirectional_scan(const ssm::SsmParams& params, const SkeletonTopology& topo, const Var& x) {
  check_joints(topo, x);
  const Var sequential = ssm::bidirectional_scan(params, params, x);
  const Var skeletal = ordered_bidirectional_scan(params, skeleton_order(topo), x);
  return num::scale(num::add(sequential, skeletal), 0.5);
}

Var local_unidirectional_scan(const ssm::SsmParams& params, const SkeletonTopology& topo, const Var& x) {
  check_joints(topo, x);
  const ScanOrder order = skeleton_order(topo);
  const Var sequential = ssm::selective_scan(params, x);
  const Var skeletal = apply_order(ssm::selective_scan(params, apply_order(x, order)), inverse_order(order));
  return num::scale(num::add(sequential, skeletal), 0.5);
}

}  // namespace emo::scan
