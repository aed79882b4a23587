#include "dimmpf/theta_store.hpp"

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <stdexcept>

namespace dimmpf {

int ThetaStore::add(const std::string& name, Tensor init) {
  if (by_name_.count(name)) throw std::invalid_argument("ThetaStore: duplicate name " + name);
  Entry e;
  e.name = name;
  e.grad = Tensor(init.rows, init.cols);
  e.value = std::move(init);
  entries_.push_back(std::move(e));
  offsets_.push_back(total_);
  total_ += static_cast<size_t>(entries_.back().value.size());
  int slot = static_cast<int>(entries_.size()) - 1;
  by_name_[name] = slot;
  return slot;
}

int ThetaStore::find(const std::string& name) const {
  auto it = by_name_.find(name);
  return it == by_name_.end() ? -1 : it->second;
}

int ThetaStore::must_find(const std::string& name) const {
  int s = find(name);
  if (s < 0) throw std::invalid_argument("ThetaStore: unknown parameter " + name);
  return s;
}

void ThetaStore::zero_grads() {
  for (auto& e : entries_) std::fill(e.grad.d.begin(), e.grad.d.end(), 0.0);
}

void ThetaStore::flatten_values(std::span<double> out) const {
  size_t p = 0;
  for (const auto& e : entries_)
    for (double v : e.value.d) out[p++] = v;
}

void ThetaStore::unflatten_values(std::span<const double> in) {
  size_t p = 0;
  for (auto& e : entries_)
    for (double& v : e.value.d) v = in[p++];
}

void ThetaStore::flatten_grads(std::span<double> out) const {
  size_t p = 0;
  for (const auto& e : entries_)
    for (double v : e.grad.d) out[p++] = v;
}

void ThetaStore::set_grads(std::span<const double> in) {
  size_t p = 0;
  for (auto& e : entries_)
    for (double& v : e.grad.d) v = in[p++];
}

bool ThetaStore::all_finite() const {
  for (const auto& e : entries_)
    for (double v : e.value.d)
      if (!std::isfinite(v)) return false;
  return true;
}

std::vector<Var> ThetaStore::bind_all(Tape& tape) const {
  std::vector<Var> out;
  out.reserve(entries_.size());
  for (int s = 0; s < count(); ++s) out.push_back(tape.param(entries_[s].value, s));
  return out;
}

namespace {
constexpr uint32_t kVersion = 1;

void write_u32(FILE* f, uint32_t v) { std::fwrite(&v, sizeof v, 1, f); }
void write_u64(FILE* f, uint64_t v) { std::fwrite(&v, sizeof v, 1, f); }
uint32_t read_u32(FILE* f) {
  uint32_t v = 0;
  if (std::fread(&v, sizeof v, 1, f) != 1) throw std::runtime_error("theta file: truncated");
  return v;
}
uint64_t read_u64(FILE* f) {
  uint64_t v = 0;
  if (std::fread(&v, sizeof v, 1, f) != 1) throw std::runtime_error("theta file: truncated");
  return v;
}
}  // namespace

void ThetaStore::save(const std::string& path) const {
  FILE* f = std::fopen(path.c_str(), "wb");
  if (!f) throw std::runtime_error("ThetaStore: cannot open " + path);
  std::fwrite("DMPF", 1, 4, f);
  write_u32(f, kVersion);
  write_u32(f, static_cast<uint32_t>(entries_.size()));
  for (const auto& e : entries_) {
    write_u32(f, static_cast<uint32_t>(e.name.size()));
    std::fwrite(e.name.data(), 1, e.name.size(), f);
    write_u32(f, 2);
    write_u64(f, static_cast<uint64_t>(e.value.rows));
    write_u64(f, static_cast<uint64_t>(e.value.cols));
    std::fwrite(e.value.d.data(), sizeof(double), e.value.d.size(), f);
  }
  std::fclose(f);
}

ThetaStore ThetaStore::load(const std::string& path) {
  FILE* f = std::fopen(path.c_str(), "rb");
  if (!f) throw std::runtime_error("ThetaStore: cannot open " + path);
  char magic[4];
  if (std::fread(magic, 1, 4, f) != 4 || std::string(magic, 4) != "DMPF") {
    std::fclose(f);
    throw std::runtime_error("ThetaStore: bad magic in " + path);
  }
  uint32_t version = read_u32(f);
  if (version != kVersion) {
    std::fclose(f);
    throw std::runtime_error("ThetaStore: unsupported version");
  }
  uint32_t count = read_u32(f);
  ThetaStore store;
  for (uint32_t i = 0; i < count; ++i) {
    uint32_t len = read_u32(f);
    std::string name(len, '\0');
    if (std::fread(name.data(), 1, len, f) != len) throw std::runtime_error("theta: truncated");
    uint32_t rank = read_u32(f);
    if (rank != 2) throw std::runtime_error("ThetaStore: expected rank-2 shapes");
    int rows = static_cast<int>(read_u64(f));
    int cols = static_cast<int>(read_u64(f));
    Tensor t(rows, cols);
    if (std::fread(t.d.data(), sizeof(double), t.d.size(), f) != t.d.size())
      throw std::runtime_error("theta: truncated data");
    store.add(name, std::move(t));
  }
  std::fclose(f);
  return store;
}

}  // namespace dimmpf
