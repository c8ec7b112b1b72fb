#pragma once

#include <cstdint>
#include <deque>
#include <limits>
#include <memory>
#include <span>
#include <vector>

#include "mpcn/voxel.hpp"

namespace mpcn {

struct MemorySlot {
  std::vector<double> key;
  std::shared_ptr<const VoxelGrid> value;
  std::uint64_t insert_tick = 0;
};

/// One retrieval result. slot == -1 marks a zero-padding entry (zero key,
/// empty voxel value, infinite distance).
struct Neighbor {
  int slot = -1;
  std::uint64_t tick = 0;
  double distance = std::numeric_limits<double>::infinity();

  bool padded() const { return slot < 0; }
};

/// Squared Euclidean distances |q_i|^2 + |k_j|^2 - 2 q_i.k_j, clamped at 0.
/// queries: b x dim, keys: m x dim, both row-major. Returns b x m.
std::vector<double> distance_matrix(std::span<const double> queries, int b, std::span<const double> keys, int m,
                                    int dim);

/// Bounded FIFO key-value store of (image feature, voxel) slots.
/// Single writer: store/insert/flush must not overlap with readers.
class MemoryBank {
 public:
  MemoryBank(std::size_t capacity, int key_dim, int resolution);

  /// Inserts iff shape_distance(pred, gt) > delta. Returns whether it did.
  bool store_if_hard(std::span<const double> key, std::shared_ptr<const VoxelGrid> value, const ProbVolume& pred,
                     const VoxelGrid& gt, double delta);
  /// Unconditional insert; evicts the oldest slot when full.
  void insert(std::span<const double> key, std::shared_ptr<const VoxelGrid> value);
  void flush();

  /// Per query (rows of `queries`, b x key_dim): the k nearest slots
  /// ascending by (distance, insert tick), zero-padded to exactly k.
  std::vector<std::vector<Neighbor>> retrieve(std::span<const double> queries, int b, int k) const;

  std::span<const double> key_of(const Neighbor& n) const;
  const VoxelGrid& value_of(const Neighbor& n) const;

  std::size_t size() const { return slots_.size(); }
  bool empty() const { return slots_.empty(); }
  std::size_t capacity() const { return capacity_; }
  int key_dim() const { return key_dim_; }
  int resolution() const { return resolution_; }
  std::uint64_t next_tick() const { return next_tick_; }
  const MemorySlot& slot(std::size_t i) const { return slots_.at(i); }
  const std::deque<MemorySlot>& slots() const { return slots_; }

  /// Restores a slot with an explicit tick (checkpoint loading). Ticks must
  /// arrive in ascending order.
  void restore(MemorySlot slot, std::uint64_t next_tick);

 private:
  void push(MemorySlot slot);

  std::size_t capacity_;
  int key_dim_;
  int resolution_;
  std::uint64_t next_tick_ = 1;
  std::deque<MemorySlot> slots_;
  std::vector<double> keys_;  // row-major mirror of slot keys, oldest first
  std::vector<double> zero_key_;
  VoxelGrid empty_value_;
};

}  // namespace mpcn
