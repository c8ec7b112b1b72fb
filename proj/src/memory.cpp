#include "mpcn/memory.hpp"

#include <algorithm>
#include <numeric>

#include "mpcn/errors.hpp"
#include "mpcn/kernels.hpp"

namespace mpcn {

std::vector<double> distance_matrix(std::span<const double> queries, int b, std::span<const double> keys, int m,
                                    int dim) {
  if (b < 0 || m < 1 || dim < 1) throw ShapeError("distance_matrix: needs at least one key and positive dimension");
  if (queries.size() != static_cast<std::size_t>(b) * dim || keys.size() != static_cast<std::size_t>(m) * dim)
    throw ShapeError("distance_matrix: inner dimension mismatch");
  std::vector<double> out(static_cast<std::size_t>(b) * m);
  kernels::gemm<double>(false, true, b, m, dim, -2.0, queries.data(), dim, keys.data(), dim, 0.0, out.data(), m);
  std::vector<double> qn(static_cast<std::size_t>(b)), kn(static_cast<std::size_t>(m));
  for (int i = 0; i < b; ++i)
    for (int d = 0; d < dim; ++d) qn[i] += queries[static_cast<std::size_t>(i) * dim + d] * queries[static_cast<std::size_t>(i) * dim + d];
  for (int j = 0; j < m; ++j)
    for (int d = 0; d < dim; ++d) kn[j] += keys[static_cast<std::size_t>(j) * dim + d] * keys[static_cast<std::size_t>(j) * dim + d];
  for (int i = 0; i < b; ++i)
    for (int j = 0; j < m; ++j) {
      double& v = out[static_cast<std::size_t>(i) * m + j];
      v = std::max(0.0, qn[i] + kn[j] + v);
    }
  return out;
}

MemoryBank::MemoryBank(std::size_t capacity, int key_dim, int resolution)
    : capacity_(capacity),
      key_dim_(key_dim),
      resolution_(resolution),
      zero_key_(static_cast<std::size_t>(std::max(key_dim, 0)), 0.0),
      empty_value_(resolution > 0 ? VoxelGrid(resolution) : VoxelGrid()) {
  if (capacity == 0 || key_dim <= 0 || resolution <= 0)
    throw ConfigError("MemoryBank: capacity, key dimension and resolution must be positive");
}

bool MemoryBank::store_if_hard(std::span<const double> key, std::shared_ptr<const VoxelGrid> value,
                               const ProbVolume& pred, const VoxelGrid& gt, double delta) {
  if (key.size() != static_cast<std::size_t>(key_dim_)) throw ShapeError("store_if_hard: key dimension mismatch");
  if (shape_distance(pred, gt) <= delta) return false;
  insert(key, std::move(value));
  return true;
}

void MemoryBank::insert(std::span<const double> key, std::shared_ptr<const VoxelGrid> value) {
  if (key.size() != static_cast<std::size_t>(key_dim_)) throw ShapeError("MemoryBank: key dimension mismatch");
  if (!value || value->resolution() != resolution_) throw ShapeError("MemoryBank: value resolution mismatch");
  push(MemorySlot{std::vector<double>(key.begin(), key.end()), std::move(value), next_tick_++});
}

void MemoryBank::push(MemorySlot slot) {
  if (slots_.size() == capacity_) {
    slots_.pop_front();
    keys_.erase(keys_.begin(), keys_.begin() + key_dim_);
  }
  keys_.insert(keys_.end(), slot.key.begin(), slot.key.end());
  slots_.push_back(std::move(slot));
}

void MemoryBank::restore(MemorySlot slot, std::uint64_t next_tick) {
  if (slot.key.size() != static_cast<std::size_t>(key_dim_) || !slot.value || slot.value->resolution() != resolution_)
    throw ShapeError("MemoryBank::restore: slot does not match bank geometry");
  if (!slots_.empty() && slot.insert_tick <= slots_.back().insert_tick)
    throw ConfigError("MemoryBank::restore: ticks must be ascending");
  if (slot.insert_tick >= next_tick) throw ConfigError("MemoryBank::restore: tick beyond next tick");
  push(std::move(slot));
  next_tick_ = next_tick;
}

void MemoryBank::flush() {
  slots_.clear();
  keys_.clear();
}

std::vector<std::vector<Neighbor>> MemoryBank::retrieve(std::span<const double> queries, int b, int k) const {
  if (k < 1) throw ConfigError("retrieve: k must be at least 1");
  if (queries.size() != static_cast<std::size_t>(b) * key_dim_) throw ShapeError("retrieve: query dimension mismatch");
  std::vector<std::vector<Neighbor>> out(static_cast<std::size_t>(b), std::vector<Neighbor>(static_cast<std::size_t>(k)));
  const int m = static_cast<int>(slots_.size());
  if (m == 0) return out;
  const std::vector<double> dist = distance_matrix(queries, b, keys_, m, key_dim_);
  const int take = std::min(k, m);
  std::vector<int> order(static_cast<std::size_t>(m));
  for (int i = 0; i < b; ++i) {
    const double* row = dist.data() + static_cast<std::size_t>(i) * m;
    std::iota(order.begin(), order.end(), 0);
    // Slots are stored oldest first, so index order is insert-tick order.
    std::partial_sort(order.begin(), order.begin() + take, order.end(), [row](int x, int y) {
      return row[x] < row[y] || (row[x] == row[y] && x < y);
    });
    for (int j = 0; j < take; ++j) {
      const int s = order[static_cast<std::size_t>(j)];
      out[i][j] = Neighbor{s, slots_[static_cast<std::size_t>(s)].insert_tick, row[s]};
    }
  }
  return out;
}

std::span<const double> MemoryBank::key_of(const Neighbor& n) const {
  if (n.padded()) return zero_key_;
  return slots_.at(static_cast<std::size_t>(n.slot)).key;
}

const VoxelGrid& MemoryBank::value_of(const Neighbor& n) const {
  if (n.padded()) return empty_value_;
  return *slots_.at(static_cast<std::size_t>(n.slot)).value;
}

}  // namespace mpcn
