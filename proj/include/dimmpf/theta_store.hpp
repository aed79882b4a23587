#pragma once

#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "dimmpf/tape.hpp"
#include "dimmpf/tensor.hpp"

namespace dimmpf {

// Flat, ordered collection of named parameter arrays with shape-congruent
// gradient accumulators. Parameter order is the registration order; flat
// offsets and slot ids are stable for the lifetime of the store.
class ThetaStore {
 public:
  int add(const std::string& name, Tensor init);
  int find(const std::string& name) const;  // -1 when absent
  int count() const { return static_cast<int>(entries_.size()); }

  const std::string& name(int slot) const { return entries_[slot].name; }
  Tensor& value(int slot) { return entries_[slot].value; }
  const Tensor& value(int slot) const { return entries_[slot].value; }
  Tensor& value(const std::string& name) { return entries_[must_find(name)].value; }
  const Tensor& value(const std::string& name) const { return entries_[must_find(name)].value; }
  Tensor& grad(int slot) { return entries_[slot].grad; }
  const Tensor& grad(int slot) const { return entries_[slot].grad; }

  size_t flat_size() const { return total_; }
  size_t offset(int slot) const { return offsets_[slot]; }
  std::span<const size_t> offsets() const { return offsets_; }

  void zero_grads();
  void flatten_values(std::span<double> out) const;
  void unflatten_values(std::span<const double> in);
  void flatten_grads(std::span<double> out) const;
  void set_grads(std::span<const double> in);

  bool all_finite() const;

  // Binds every parameter onto a tape, in slot order. bound[slot] is the leaf.
  std::vector<Var> bind_all(Tape& tape) const;

  // File format: "DMPF" magic, u32 version, u32 count, then per parameter
  // {u32 name length, name bytes, u32 rank, u64 dims..., row-major f64 data}.
  void save(const std::string& path) const;
  static ThetaStore load(const std::string& path);

 private:
  struct Entry {
    std::string name;
    Tensor value;
    Tensor grad;
  };
  int must_find(const std::string& name) const;

  std::vector<Entry> entries_;
  std::vector<size_t> offsets_;
  std::unordered_map<std::string, int> by_name_;
  size_t total_ = 0;
};

}  // namespace dimmpf
