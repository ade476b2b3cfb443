#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

#include "emo/numerics/autograd.hpp"
#include "emo/ssm/ssm.hpp"

namespace emo::scan {

using num::Tensor;
using num::Var;

inline constexpr int kRootParent = -1;

// Joint tree with parent[0] == kRootParent and parent[j] < j otherwise.
struct SkeletonTopology {
  std::vector<int> parent;
  std::vector<std::string> names;

  std::size_t size() const { return parent.size(); }
  std::vector<std::vector<std::size_t>> children() const;

  // Throws TopologyError on multiple roots, cycles or out-of-order parents.
  void validate() const;

  static SkeletonTopology from_parents(std::vector<int> parent);
  // Lines of `joint_index parent_index name`; `#` starts a comment.
  static SkeletonTopology load(const std::filesystem::path& path);
  static SkeletonTopology parse(const std::string& text);
  std::string serialize() const;
};

// 23 joints: 17 body joints, 2 per hand, 2 on the face.
SkeletonTopology default_topology();

// A permutation of 0..J-1; row i of a reordered tensor is row perm[i] of the source.
struct ScanOrder {
  std::vector<std::size_t> perm;

  static ScanOrder identity(std::size_t n);
  static ScanOrder reversed(std::size_t n);
  bool is_valid() const;
};

// Depth-first pre-order from the root, children in ascending index order.
ScanOrder skeleton_order(const SkeletonTopology& topo);
ScanOrder inverse_order(const ScanOrder& order);
Tensor apply_order(const Tensor& x, const ScanOrder& order);
Var apply_order(const Var& x, const ScanOrder& order);

// Bidirectional selective scan over the rows of x taken in `order`, with the
// result restored to canonical row order. Both directions share `params`.
Var ordered_bidirectional_scan(const ssm::SsmParams& params, const ScanOrder& order, const Var& x);

// One person's J joint tokens: mean of sequential-forward, sequential-backward,
// skeleton-forward and skeleton-backward scans, all sharing one parameter set.
Var local_bidirectional_scan(const ssm::SsmParams& params, const SkeletonTopology& topo, const Var& x);
// Forward-only variant: mean of the sequential and skeleton forward passes.
Var local_unidirectional_scan(const ssm::SsmParams& params, const SkeletonTopology& topo, const Var& x);

}  // namespace emo::scan
