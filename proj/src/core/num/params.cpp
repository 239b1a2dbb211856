#include "core/num/params.hpp"

#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

namespace mmr::num {

Param& ParamStore::create(const std::string& name, int rows, int cols) {
  MMR_REQUIRE(!has(name), "ParamStore: duplicate parameter '" + name + "'");
  MMR_REQUIRE(rows > 0 && cols > 0, "ParamStore: nonpositive dims for '" + name + "'");
  params_.push_back(std::make_unique<Param>(name, rows, cols));
  return *params_.back();
}

Param& ParamStore::get(const std::string& name) {
  for (auto& p : params_)
    if (p->name == name) return *p;
  throw ContractError("ParamStore: unknown parameter '" + name + "'");
}

const Param& ParamStore::get(const std::string& name) const {
  for (auto& p : params_)
    if (p->name == name) return *p;
  throw ContractError("ParamStore: unknown parameter '" + name + "'");
}

bool ParamStore::has(const std::string& name) const {
  for (auto& p : params_)
    if (p->name == name) return true;
  return false;
}

std::vector<Param*> ParamStore::all() {
  std::vector<Param*> out;
  out.reserve(params_.size());
  for (auto& p : params_) out.push_back(p.get());
  return out;
}

std::vector<const Param*> ParamStore::all() const {
  std::vector<const Param*> out;
  out.reserve(params_.size());
  for (auto& p : params_) out.push_back(p.get());
  return out;
}

size_t ParamStore::total_size() const {
  size_t n = 0;
  for (auto& p : params_) n += static_cast<size_t>(p->value.size());
  return n;
}

void ParamStore::zero_grads() {
  for (auto& p : params_) p->grad.setZero();
}

std::vector<float> ParamStore::flatten() const {
  std::vector<float> flat;
  flat.reserve(total_size());
  for (auto& p : params_)
    flat.insert(flat.end(), p->value.data(), p->value.data() + p->value.size());
  return flat;
}

void ParamStore::unflatten(const std::vector<float>& flat) {
  MMR_REQUIRE(flat.size() == total_size(), "ParamStore: flat size mismatch");
  size_t off = 0;
  for (auto& p : params_) {
    std::memcpy(p->value.data(), flat.data() + off, p->value.size() * sizeof(float));
    off += static_cast<size_t>(p->value.size());
  }
}

std::string ParamStore::manifest() const {
  std::ostringstream os;
  for (auto& p : params_)
    os << p->name << ' ' << p->value.rows() << ' ' << p->value.cols() << '\n';
  return os.str();
}

namespace {
void write_le_floats(std::ofstream& f, const std::vector<float>& v) {
  // Little-endian hosts only; asserted once at save time.
  static_assert(sizeof(float) == 4);
  const uint32_t probe = 1;
  MMR_REQUIRE(*reinterpret_cast<const uint8_t*>(&probe) == 1,
              "checkpoint format requires a little-endian host");
  f.write(reinterpret_cast<const char*>(v.data()),
          static_cast<std::streamsize>(v.size() * sizeof(float)));
}
}  // namespace

void ParamStore::save(const std::string& bin_path, const std::string& manifest_path) const {
  std::ofstream bin(bin_path, std::ios::binary | std::ios::trunc);
  if (!bin) throw IoError("cannot open for write: " + bin_path);
  write_le_floats(bin, flatten());
  if (!bin) throw IoError("write failed: " + bin_path);

  std::ofstream man(manifest_path, std::ios::trunc);
  if (!man) throw IoError("cannot open for write: " + manifest_path);
  man << manifest();
  if (!man) throw IoError("write failed: " + manifest_path);
}

void ParamStore::load(const std::string& bin_path, const std::string& manifest_path) {
  std::ifstream man(manifest_path);
  if (!man) throw IoError("cannot open: " + manifest_path);
  std::string name;
  long rows = 0, cols = 0;
  size_t idx = 0;
  while (man >> name >> rows >> cols) {
    MMR_REQUIRE(idx < params_.size(), "checkpoint manifest has extra entries");
    Param& p = *params_[idx];
    if (p.name != name || p.value.rows() != rows || p.value.cols() != cols)
      throw IoError("checkpoint layout mismatch at '" + name + "' (expected '" + p.name + "')");
    ++idx;
  }
  MMR_REQUIRE(idx == params_.size(), "checkpoint manifest is incomplete");

  std::ifstream bin(bin_path, std::ios::binary);
  if (!bin) throw IoError("cannot open: " + bin_path);
  std::vector<float> flat(total_size());
  bin.read(reinterpret_cast<char*>(flat.data()),
           static_cast<std::streamsize>(flat.size() * sizeof(float)));
  if (bin.gcount() != static_cast<std::streamsize>(flat.size() * sizeof(float)))
    throw IoError("checkpoint truncated: " + bin_path);
  unflatten(flat);
}

void ParamStore::copy_values_from(const ParamStore& other) {
  MMR_REQUIRE(params_.size() == other.params_.size(), "copy_values_from: store shape mismatch");
  for (size_t i = 0; i < params_.size(); ++i) {
    MMR_REQUIRE(params_[i]->value.rows() == other.params_[i]->value.rows() &&
                    params_[i]->value.cols() == other.params_[i]->value.cols(),
                "copy_values_from: param shape mismatch");
    params_[i]->value = other.params_[i]->value;
  }
}

}  // namespace mmr::num
