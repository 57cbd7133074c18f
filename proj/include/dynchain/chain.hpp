#pragma once

#include <compare>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace dynchain {

using Round = std::int64_t;
using MinerId = std::int32_t;

/// Miner id carried by genesis, which nobody mines.
inline constexpr MinerId kNoMiner = -1;

/// Identity of a block: the round it was minted, who minted it and a small
/// disambiguator. Ordered lexicographically; the order is the tie-break used
/// everywhere a deterministic choice among blocks is needed.
struct BlockId {
  Round round = 0;
  MinerId miner = kNoMiner;
  std::uint32_t seq = 0;

  static constexpr BlockId genesis() { return {}; }
  constexpr bool is_genesis() const { return *this == genesis(); }

  friend constexpr auto operator<=>(const BlockId&, const BlockId&) = default;
};

std::string to_string(const BlockId& id);

struct BlockIdHash {
  std::size_t operator()(const BlockId& id) const noexcept {
    std::uint64_t h = static_cast<std::uint64_t>(id.round) * 0x9E3779B97F4A7C15ULL;
    h ^= (static_cast<std::uint64_t>(static_cast<std::uint32_t>(id.miner)) << 20) ^ id.seq;
    h *= 0xBF58476D1CE4E5B9ULL;
    return static_cast<std::size_t>(h ^ (h >> 31));
  }
};

struct Block {
  BlockId id;
  std::optional<BlockId> parent;
  std::uint32_t depth = 0;

  friend bool operator==(const Block&, const Block&) = default;
};

/// Genesis-to-leaf path.
struct Branch {
  std::vector<BlockId> path;

  BlockId leaf() const { return path.back(); }
  std::size_t length() const { return path.size() - 1; }
  friend auto operator<=>(const Branch&, const Branch&) = default;
};

class ChainError : public std::runtime_error {
 public:
  enum class Code { unknown_parent, duplicate_id, conflicting_parent, unknown_block };

  ChainError(Code code, const std::string& what) : std::runtime_error(what), code_(code) {}
  Code code() const noexcept { return code_; }

 private:
  Code code_;
};

/// Tree of blocks rooted at genesis. Blocks are append-only; a block can only
/// be inserted once its parent is present, so the tree never holds orphans.
/// Children are kept sorted by BlockId.
class BlockTree {
 public:
  using Index = std::uint32_t;

  BlockTree();

  /// Inserts `id` as a child of `parent`. Throws ChainError on an unknown
  /// parent or a duplicate id.
  const Block& add_block(const BlockId& parent, const BlockId& id);

  /// Inserts `block` unless already present. Returns true if inserted.
  /// Throws if the parent is unknown or the id exists with another parent.
  bool insert(const Block& block);

  bool contains(const BlockId& id) const { return index_.contains(id); }
  const Block& at(const BlockId& id) const;
  std::optional<Index> index_of(const BlockId& id) const;
  const Block& at_index(Index i) const { return blocks_[i]; }
  Index parent_index(Index i) const { return parent_[i]; }
  std::span<const Index> child_indices(Index i) const { return children_[i]; }

  std::size_t size() const { return blocks_.size(); }
  /// Blocks in insertion order; every parent precedes its children.
  std::span<const Block> blocks() const { return blocks_; }

  std::uint32_t depth(const BlockId& id) const { return at(id).depth; }
  std::vector<BlockId> children(const BlockId& id) const;
  bool is_leaf(const BlockId& id) const;

  /// Deepest leaf, smallest BlockId among equals. This is the mining position.
  const BlockId& tip() const { return blocks_[tip_].id; }
  std::uint32_t max_depth() const { return blocks_[tip_].depth; }
  std::size_t max_arity() const;

  std::vector<BlockId> leaves() const;
  std::vector<BlockId> longest_leaves() const;

  /// True if `a` is a proper ancestor of `b`.
  bool is_ancestor(const BlockId& a, const BlockId& b) const;
  std::vector<BlockId> ancestors(const BlockId& b) const;
  std::vector<BlockId> descendants(const BlockId& b) const;
  /// Blocks that are neither ancestors nor descendants of `b`, nor `b`.
  std::vector<BlockId> cousins(const BlockId& b) const;
  std::vector<Branch> branches_through(const BlockId& b) const;
  Branch branch_to(const BlockId& leaf) const;

  friend bool operator==(const BlockTree& a, const BlockTree& b);

 private:
  Index require(const BlockId& id) const;
  Index append(const Block& block, Index parent);

  std::vector<Block> blocks_;
  std::vector<Index> parent_;
  std::vector<std::vector<Index>> children_;
  std::unordered_map<BlockId, Index, BlockIdHash> index_;
  Index tip_ = 0;
};

/// Union of two trees sharing genesis. Throws ChainError::conflicting_parent
/// if the same id appears with different parents.
BlockTree merge(const BlockTree& a, const BlockTree& b);

/// Merges `from` into `into` in place. Returns the number of new blocks.
std::size_t merge_into(BlockTree& into, const BlockTree& from);

/// Preorder layout of a tree for O(1) subtree queries. Rebuilt from scratch;
/// invalid once the tree grows.
class SubtreeIndex {
 public:
  explicit SubtreeIndex(const BlockTree& tree);

  /// Preorder position of block index `i`; the subtree of `i` occupies
  /// [enter(i), exit(i)).
  std::uint32_t enter(BlockTree::Index i) const { return enter_[i]; }
  std::uint32_t exit(BlockTree::Index i) const { return exit_[i]; }
  bool in_subtree(BlockTree::Index root, BlockTree::Index i) const {
    return enter_[root] <= enter_[i] && enter_[i] < exit_[root];
  }
  /// Deepest block outside the subtree of `i`, or -1 when there is none.
  std::int64_t max_depth_outside(BlockTree::Index i) const;
  /// A deepest block outside the subtree of `i`; the earliest in preorder
  /// among equals. Empty when the subtree is the whole tree.
  std::optional<BlockTree::Index> deepest_outside(BlockTree::Index i) const;
  /// Deepest block inside the subtree of `i`.
  std::uint32_t max_depth_inside(BlockTree::Index i) const { return max_inside_[i]; }
  /// Block indices in preorder.
  std::span<const BlockTree::Index> order() const { return order_; }
  /// Leaves in the subtree of `i`, as block indices.
  std::vector<BlockTree::Index> leaves_under(BlockTree::Index i) const;

 private:
  const BlockTree* tree_;
  std::vector<BlockTree::Index> order_;
  std::vector<std::uint32_t> enter_;
  std::vector<std::uint32_t> exit_;
  std::vector<std::uint32_t> max_inside_;
  // Preorder positions of the deepest block in order_[0, k) and order_[k, n).
  std::vector<std::int64_t> prefix_arg_;
  std::vector<std::int64_t> suffix_arg_;
};

}  // namespace dynchain

template <>
struct std::hash<dynchain::BlockId> : dynchain::BlockIdHash {};
