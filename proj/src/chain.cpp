#include "dynchain/chain.hpp"

#include <algorithm>

#include <fmt/format.h>

namespace dynchain {

std::string to_string(const BlockId& id) {
  if (id.is_genesis()) return "genesis";
  return fmt::format("{}:{}:{}", id.round, id.miner, id.seq);
}

BlockTree::BlockTree() {
  blocks_.push_back(Block{BlockId::genesis(), std::nullopt, 0});
  parent_.push_back(0);
  children_.emplace_back();
  index_.emplace(BlockId::genesis(), 0);
}

BlockTree::Index BlockTree::require(const BlockId& id) const {
  auto it = index_.find(id);
  if (it == index_.end()) {
    throw ChainError(ChainError::Code::unknown_block, "unknown block " + to_string(id));
  }
  return it->second;
}

const Block& BlockTree::at(const BlockId& id) const { return blocks_[require(id)]; }

std::optional<BlockTree::Index> BlockTree::index_of(const BlockId& id) const {
  auto it = index_.find(id);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

BlockTree::Index BlockTree::append(const Block& block, Index parent) {
  const auto idx = static_cast<Index>(blocks_.size());
  blocks_.push_back(block);
  parent_.push_back(parent);
  children_.emplace_back();
  index_.emplace(block.id, idx);

  auto& siblings = children_[parent];
  auto pos = std::lower_bound(siblings.begin(), siblings.end(), block.id,
                              [this](Index a, const BlockId& id) { return blocks_[a].id < id; });
  siblings.insert(pos, idx);

  const Block& tip = blocks_[tip_];
  if (block.depth > tip.depth || (block.depth == tip.depth && block.id < tip.id)) tip_ = idx;
  return idx;
}

const Block& BlockTree::add_block(const BlockId& parent, const BlockId& id) {
  auto pit = index_.find(parent);
  if (pit == index_.end()) {
    throw ChainError(ChainError::Code::unknown_parent,
                     fmt::format("parent {} of {} not in tree", to_string(parent), to_string(id)));
  }
  if (index_.contains(id)) {
    throw ChainError(ChainError::Code::duplicate_id, "duplicate block " + to_string(id));
  }
  const Index p = pit->second;
  return blocks_[append(Block{id, parent, blocks_[p].depth + 1}, p)];
}

bool BlockTree::insert(const Block& block) {
  if (auto it = index_.find(block.id); it != index_.end()) {
    if (blocks_[it->second].parent != block.parent) {
      throw ChainError(ChainError::Code::conflicting_parent,
                       "conflicting parent for " + to_string(block.id));
    }
    return false;
  }
  if (!block.parent) {
    throw ChainError(ChainError::Code::conflicting_parent,
                     "second root " + to_string(block.id));
  }
  add_block(*block.parent, block.id);
  return true;
}

std::vector<BlockId> BlockTree::children(const BlockId& id) const {
  std::vector<BlockId> out;
  for (Index c : children_[require(id)]) out.push_back(blocks_[c].id);
  return out;
}

bool BlockTree::is_leaf(const BlockId& id) const { return children_[require(id)].empty(); }

std::size_t BlockTree::max_arity() const {
  std::size_t arity = 0;
  for (const auto& c : children_) arity = std::max(arity, c.size());
  return arity;
}

std::vector<BlockId> BlockTree::leaves() const {
  std::vector<BlockId> out;
  for (Index i = 0; i < blocks_.size(); ++i) {
    if (children_[i].empty()) out.push_back(blocks_[i].id);
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<BlockId> BlockTree::longest_leaves() const {
  std::vector<BlockId> out;
  const auto deepest = max_depth();
  for (Index i = 0; i < blocks_.size(); ++i) {
    if (blocks_[i].depth == deepest) out.push_back(blocks_[i].id);
  }
  std::sort(out.begin(), out.end());
  return out;
}

bool BlockTree::is_ancestor(const BlockId& a, const BlockId& b) const {
  const Index ia = require(a);
  Index ib = require(b);
  const auto target_depth = blocks_[ia].depth;
  if (blocks_[ib].depth <= target_depth) return false;
  while (blocks_[ib].depth > target_depth) ib = parent_[ib];
  return ib == ia;
}

std::vector<BlockId> BlockTree::ancestors(const BlockId& b) const {
  std::vector<BlockId> out;
  Index i = require(b);
  while (i != 0) {
    i = parent_[i];
    out.push_back(blocks_[i].id);
  }
  std::reverse(out.begin(), out.end());
  return out;
}

std::vector<BlockId> BlockTree::descendants(const BlockId& b) const {
  std::vector<BlockId> out;
  std::vector<Index> stack(children_[require(b)].begin(), children_[require(b)].end());
  while (!stack.empty()) {
    Index i = stack.back();
    stack.pop_back();
    out.push_back(blocks_[i].id);
    stack.insert(stack.end(), children_[i].begin(), children_[i].end());
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<BlockId> BlockTree::cousins(const BlockId& b) const {
  const Index root = require(b);
  std::vector<char> related(blocks_.size(), 0);
  for (Index i = root;; i = parent_[i]) {
    related[i] = 1;
    if (i == 0) break;
  }
  SubtreeIndex sub(*this);
  std::vector<BlockId> out;
  for (Index i = 0; i < blocks_.size(); ++i) {
    if (!related[i] && !sub.in_subtree(root, i)) out.push_back(blocks_[i].id);
  }
  std::sort(out.begin(), out.end());
  return out;
}

Branch BlockTree::branch_to(const BlockId& leaf) const {
  Branch br;
  br.path = ancestors(leaf);
  br.path.push_back(leaf);
  return br;
}

std::vector<Branch> BlockTree::branches_through(const BlockId& b) const {
  const Index root = require(b);
  SubtreeIndex sub(*this);
  std::vector<Branch> out;
  for (Index leaf : sub.leaves_under(root)) out.push_back(branch_to(blocks_[leaf].id));
  std::sort(out.begin(), out.end());
  return out;
}

bool operator==(const BlockTree& a, const BlockTree& b) {
  if (a.size() != b.size()) return false;
  for (const Block& blk : a.blocks_) {
    auto idx = b.index_of(blk.id);
    if (!idx || b.blocks_[*idx] != blk) return false;
  }
  return true;
}

std::size_t merge_into(BlockTree& into, const BlockTree& from) {
  std::size_t added = 0;
  for (const Block& blk : from.blocks()) {
    if (blk.id.is_genesis()) continue;
    if (into.insert(blk)) ++added;
  }
  return added;
}

BlockTree merge(const BlockTree& a, const BlockTree& b) {
  BlockTree out = a;
  merge_into(out, b);
  return out;
}

SubtreeIndex::SubtreeIndex(const BlockTree& tree)
    : tree_(&tree),
      enter_(tree.size()),
      exit_(tree.size()),
      max_inside_(tree.size()) {
  const auto n = tree.size();
  order_.reserve(n);
  // Iterative preorder; children visited in BlockId order.
  std::vector<std::pair<BlockTree::Index, std::size_t>> stack{{0, 0}};
  enter_[0] = 0;
  order_.push_back(0);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    auto kids = tree.child_indices(node);
    if (next < kids.size()) {
      const auto child = kids[next++];
      enter_[child] = static_cast<std::uint32_t>(order_.size());
      order_.push_back(child);
      stack.emplace_back(child, 0);
    } else {
      exit_[node] = static_cast<std::uint32_t>(order_.size());
      max_inside_[node] = std::max(max_inside_[node], tree.at_index(node).depth);
      const auto done = node;
      stack.pop_back();
      if (!stack.empty()) {
        auto parent = stack.back().first;
        max_inside_[parent] = std::max(max_inside_[parent], max_inside_[done]);
      }
    }
  }
  auto depth_at = [&](std::int64_t k) { return tree.at_index(order_[k]).depth; };
  prefix_arg_.assign(n + 1, -1);
  suffix_arg_.assign(n + 1, -1);
  for (std::size_t k = 0; k < n; ++k) {
    const auto best = prefix_arg_[k];
    prefix_arg_[k + 1] = (best < 0 || depth_at(k) > depth_at(best)) ? static_cast<std::int64_t>(k) : best;
  }
  for (std::size_t k = n; k-- > 0;) {
    const auto best = suffix_arg_[k + 1];
    suffix_arg_[k] = (best < 0 || depth_at(k) >= depth_at(best)) ? static_cast<std::int64_t>(k) : best;
  }
}

std::optional<BlockTree::Index> SubtreeIndex::deepest_outside(BlockTree::Index i) const {
  const auto before = prefix_arg_[enter_[i]];
  const auto after = suffix_arg_[exit_[i]];
  if (before < 0 && after < 0) return std::nullopt;
  if (after < 0) return order_[before];
  if (before < 0) return order_[after];
  const auto db = tree_->at_index(order_[before]).depth;
  const auto da = tree_->at_index(order_[after]).depth;
  return order_[da > db ? after : before];
}

std::int64_t SubtreeIndex::max_depth_outside(BlockTree::Index i) const {
  auto w = deepest_outside(i);
  return w ? static_cast<std::int64_t>(tree_->at_index(*w).depth) : -1;
}

std::vector<BlockTree::Index> SubtreeIndex::leaves_under(BlockTree::Index i) const {
  std::vector<BlockTree::Index> out;
  for (auto k = enter_[i]; k < exit_[i]; ++k) {
    if (tree_->child_indices(order_[k]).empty()) out.push_back(order_[k]);
  }
  return out;
}

}  // namespace dynchain
