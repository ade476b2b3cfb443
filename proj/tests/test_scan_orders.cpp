#include <doctest.h>

#include <algorithm>
#include <fstream>

#include "emo/error.hpp"
#include "emo/numerics/flops.hpp"
#include "emo/numerics/grad_check.hpp"
#include "emo/numerics/ops.hpp"
#include "emo/numerics/rng.hpp"
#include "emo/scan/topology.hpp"

using namespace emo;
using num::Rng;
using num::Tensor;
using num::Var;

namespace {

scan::SkeletonTopology random_tree(Rng& rng, std::size_t n) {
  std::vector<int> parent = {scan::kRootParent};
  for (std::size_t j = 1; j < n; ++j) parent.push_back(static_cast<int>(rng.below(j)));
  return scan::SkeletonTopology::from_parents(parent);
}

// Random relabeling that keeps parents before children and siblings in their
// original relative order. Returns new_index[old_joint].
std::vector<std::size_t> sibling_preserving_relabel(Rng& rng, const scan::SkeletonTopology& topo) {
  const auto ch = topo.children();
  std::vector<std::size_t> frontier = {0}, new_index(topo.size());
  std::size_t counter = 0;
  while (!frontier.empty()) {
    const std::size_t pick = rng.below(frontier.size());
    const std::size_t node = frontier[pick];
    frontier.erase(frontier.begin() + static_cast<std::ptrdiff_t>(pick));
    new_index[node] = counter++;
    // Only the next unvisited sibling becomes available after this one.
    if (!ch[node].empty()) frontier.push_back(ch[node][0]);
    if (node != 0) {
      const auto& sib = ch[static_cast<std::size_t>(topo.parent[node])];
      const auto pos = static_cast<std::size_t>(std::find(sib.begin(), sib.end(), node) - sib.begin());
      if (pos + 1 < sib.size()) frontier.push_back(sib[pos + 1]);
    }
  }
  return new_index;
}

bool parents_precede_children(const scan::SkeletonTopology& topo, const scan::ScanOrder& order) {
  std::vector<std::size_t> pos(order.perm.size());
  for (std::size_t i = 0; i < order.perm.size(); ++i) pos[order.perm[i]] = i;
  for (std::size_t j = 1; j < topo.size(); ++j)
    if (pos[static_cast<std::size_t>(topo.parent[j])] >= pos[j]) return false;
  return true;
}

}  // namespace

TEST_CASE("skeleton order examples") {
  using scan::SkeletonTopology;
  CHECK(scan::skeleton_order(SkeletonTopology::from_parents({-1, 0, 1, 2})).perm ==
        std::vector<std::size_t>{0, 1, 2, 3});
  CHECK(scan::skeleton_order(SkeletonTopology::from_parents({-1, 0, 0, 0})).perm ==
        std::vector<std::size_t>{0, 1, 2, 3});
  CHECK(scan::skeleton_order(SkeletonTopology::from_parents({-1, 0, 0, 1})).perm ==
        std::vector<std::size_t>{0, 1, 3, 2});
  CHECK(scan::skeleton_order(scan::default_topology()).perm ==
        std::vector<std::size_t>{0, 1, 2, 3, 16, 21, 22, 10, 12, 14, 17, 19, 11, 13, 15, 18, 20, 4, 6, 8, 5, 7, 9});
}

TEST_CASE("invalid topologies are rejected") {
  using scan::SkeletonTopology;
  CHECK_THROWS_AS(SkeletonTopology::from_parents({-1, 0, -1}), TopologyError);
  CHECK_THROWS_AS(SkeletonTopology::from_parents({-1, 2, 1}), TopologyError);
  CHECK_THROWS_AS(SkeletonTopology::from_parents({0, 0}), TopologyError);
  CHECK_THROWS_AS(SkeletonTopology::from_parents({}), TopologyError);
  CHECK_THROWS_AS(SkeletonTopology::parse("0 -1 a\n2 0 b\n"), TopologyError);
  CHECK_THROWS_AS(SkeletonTopology::parse("0 -1 a\n1 x\n"), TopologyError);
}

TEST_CASE("topology file round trip and shipped default") {
  const auto topo = scan::default_topology();
  CHECK(topo.size() == 23);
  const auto again = scan::SkeletonTopology::parse(topo.serialize());
  CHECK(again.parent == topo.parent);
  CHECK(again.names == topo.names);
  const auto shipped = scan::SkeletonTopology::load(EMO_SOURCE_DIR "/configs/topology_default.txt");
  CHECK(shipped.parent == topo.parent);
  CHECK(shipped.names == topo.names);
}

TEST_CASE("skeleton orders are valid pre-orders on random trees") {
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    Rng rng(seed);
    const auto topo = random_tree(rng, 1 + rng.below(32));
    const auto order = scan::skeleton_order(topo);
    REQUIRE(order.is_valid());
    CHECK(order.perm.size() == topo.size());
    CHECK(parents_precede_children(topo, order));
  }
}

TEST_CASE("apply_order and inverse_order") {
  const Tensor x = Tensor::from_rows({{1, 1}, {2, 2}, {3, 3}});
  CHECK(scan::apply_order(x, scan::ScanOrder::identity(3)) == x);
  CHECK(scan::apply_order(x, scan::ScanOrder{{2, 0, 1}}) == Tensor::from_rows({{3, 3}, {1, 1}, {2, 2}}));
  CHECK_THROWS_AS(scan::apply_order(x, scan::ScanOrder::identity(4)), ShapeError);
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    Rng rng(seed);
    const std::size_t n = 1 + rng.below(32);
    const Tensor t = rng.normal_tensor({n, 3}, 1.0);
    const scan::ScanOrder o{rng.permutation(n)};
    CHECK(scan::apply_order(scan::apply_order(t, o), scan::inverse_order(o)) == t);
  }
}

TEST_CASE("local bidirectional scan") {
  Rng rng(31);
  const auto params = ssm::SsmParams::init(rng, 4, 6);

  const auto single = scan::SkeletonTopology::from_parents({-1});
  const Var one = Var::constant(rng.normal_tensor({1, 4}, 1.0));
  CHECK(num::max_abs_diff(scan::local_bidirectional_scan(params, single, one).value(),
                          ssm::selective_scan(params, one).value()) <= 1e-15);

  const auto chain = scan::SkeletonTopology::from_parents({-1, 0, 1, 2, 3, 4});
  const Var x = Var::constant(rng.normal_tensor({6, 4}, 1.0));
  CHECK(num::max_abs_diff(scan::local_bidirectional_scan(params, chain, x).value(),
                          ssm::bidirectional_scan(params, params, x).value()) == 0.0);

  CHECK(scan::local_bidirectional_scan(params, chain, Var::constant(Tensor({6, 4}))).value() == Tensor({6, 4}));
  CHECK_THROWS_AS(scan::local_bidirectional_scan(params, chain, Var::constant(Tensor({5, 4}))), ShapeError);
}

TEST_CASE("skeleton-order passes are equivariant under sibling-preserving relabeling") {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    Rng rng(700 + seed);
    const auto topo = random_tree(rng, 2 + rng.below(15));
    const auto params = ssm::SsmParams::init(rng, 3, 4);
    const Tensor x = rng.normal_tensor({topo.size(), 3}, 1.0);
    const auto new_index = sibling_preserving_relabel(rng, topo);

    std::vector<int> parent2(topo.size());
    Tensor x2(x.shape());
    for (std::size_t j = 0; j < topo.size(); ++j) {
      parent2[new_index[j]] = j == 0 ? scan::kRootParent : static_cast<int>(new_index[topo.parent[j]]);
      for (std::size_t d = 0; d < 3; ++d) x2.at(new_index[j], d) = x.at(j, d);
    }
    const auto topo2 = scan::SkeletonTopology::from_parents(parent2);

    const Tensor y = scan::ordered_bidirectional_scan(params, scan::skeleton_order(topo), Var::constant(x)).value();
    const Tensor y2 =
        scan::ordered_bidirectional_scan(params, scan::skeleton_order(topo2), Var::constant(x2)).value();
    for (std::size_t j = 0; j < topo.size(); ++j)
      for (std::size_t d = 0; d < 3; ++d) CHECK(y2.at(new_index[j], d) == y.at(j, d));
  }
}

TEST_CASE("local scan gradients and cost") {
  double worst = 0.0;
  const auto topo = scan::SkeletonTopology::from_parents({-1, 0, 0, 1, 1, 2});
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(900 + seed);
    auto params = ssm::SsmParams::init(rng, 3, 4);
    params.w_b = Var::parameter(rng.normal_tensor({3, 4}, 0.7));
    params.w_delta = Var::parameter(rng.normal_tensor({3, 1}, 0.5));
    Var x = Var::parameter(rng.normal_tensor({6, 3}, 1.0));
    const Var w = Var::constant(rng.normal_tensor({6, 3}, 1.0));
    auto f = [&] { return num::sum(num::mul(scan::local_bidirectional_scan(params, topo, x), w)); };
    worst = std::max(worst,
                     num::grad_check_params(f, {x, params.w_b, params.w_c, params.w_delta, params.a_log}, 1e-3)
                         .max_rel_error);
  }
  CHECK(worst <= 1e-4);

  // Four scans plus the mean bookkeeping (three adds/scales over J*D).
  Rng rng(1);
  const auto params = ssm::SsmParams::init(rng, 4, 8);
  for (std::size_t n : {5u, 10u, 20u}) {
    std::vector<int> parent = {scan::kRootParent};
    for (std::size_t j = 1; j < n; ++j) parent.push_back(static_cast<int>(j / 2));
    const auto t = scan::SkeletonTopology::from_parents(parent);
    num::FlopScope scope;
    scan::local_bidirectional_scan(params, t, Var::constant(rng.normal_tensor({n, 4}, 1.0)));
    CHECK(scope.elapsed() == 4 * num::cost::selective_scan(n, 4, 8) + 6 * n * 4);
  }
}
