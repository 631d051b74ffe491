#include "enres/lab/checkpoint.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "enres/common/error.hpp"

namespace enres::lab {

namespace {

constexpr char magic[4] = {'E', 'N', 'R', 'N'};
constexpr std::uint8_t dtype_f32 = 0;
constexpr std::uint8_t dtype_f64 = 1;

template <typename T>
void put(std::ostream& out, T v) {
  for (std::size_t i = 0; i < sizeof(T); ++i) out.put(static_cast<char>((static_cast<std::uint64_t>(v) >> (8 * i)) & 0xFF));
}

class Reader {
 public:
  explicit Reader(std::istream& in) : in_(in) {}

  template <typename T>
  T get(const std::string& field) {
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) {
      const int c = in_.get();
      if (c == std::char_traits<char>::eof()) throw FormatError("checkpoint truncated while reading " + field);
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(c)) << (8 * i);
    }
    return static_cast<T>(v);
  }

  std::string bytes(std::size_t n, const std::string& field) {
    std::string s(n, '\0');
    if (n && !in_.read(s.data(), static_cast<std::streamsize>(n))) {
      throw FormatError("checkpoint truncated while reading " + field);
    }
    return s;
  }

 private:
  std::istream& in_;
};

std::string member_prefix(std::size_t k) { return "m" + std::to_string(k) + "."; }

std::string record_for(const Checkpoint& ckpt) {
  std::string record = net::spec_record(ckpt.model);
  if (ckpt.best_val_accuracy) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "best_val %.17g\n", *ckpt.best_val_accuracy);
    record += buf;
  }
  return record;
}

/// Copies `values` into the state slot `name` of member `m`.
void assign(net::TinyResNet& m, const std::string& name, const std::vector<double>& values) {
  const auto set_stats = [&](ad::BatchNormStats& s, bool mean) { (mean ? s.mean : s.var) = values; };
  for (std::size_t i = 0; i < m.blocks.size(); ++i) {
    const std::string p = "block" + std::to_string(i) + ".";
    if (name == p + "bn1.mean") return set_stats(m.blocks[i].stats1, true);
    if (name == p + "bn1.var") return set_stats(m.blocks[i].stats1, false);
    if (name == p + "bn2.mean") return set_stats(m.blocks[i].stats2, true);
    if (name == p + "bn2.var") return set_stats(m.blocks[i].stats2, false);
  }
  for (auto& [n, t] : m.named_state()) {
    if (n == name) {
      std::copy(values.begin(), values.end(), t.mutable_values().begin());
      return;
    }
  }
  throw FormatError("checkpoint tensor '" + name + "' does not belong to the model");
}

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, std::ostream& out) {
  ckpt.model.validate();
  const std::string record = record_for(ckpt);
  out.write(magic, 4);
  put<std::uint32_t>(out, checkpoint_version);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(record.size()));
  out.write(record.data(), static_cast<std::streamsize>(record.size()));

  std::vector<std::pair<std::string, ad::Tensor>> tensors;
  for (std::size_t k = 0; k < ckpt.model.members.size(); ++k) {
    for (auto& [name, t] : ckpt.model.members[k].named_state()) tensors.emplace_back(member_prefix(k) + name, t);
  }
  put<std::uint32_t>(out, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) {
    put<std::uint16_t>(out, static_cast<std::uint16_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    put<std::uint8_t>(out, dtype_f64);
    put<std::uint8_t>(out, static_cast<std::uint8_t>(t.rank()));
    for (std::size_t d : t.shape()) put<std::uint64_t>(out, d);
    for (double v : t.values()) put<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
  }
  if (!out) throw FormatError("failed to write checkpoint");
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot open " + path.string() + " for writing");
  save_checkpoint(ckpt, out);
}

Checkpoint load_checkpoint(std::istream& in) {
  Reader r(in);
  const std::string m = r.bytes(4, "magic");
  if (std::memcmp(m.data(), magic, 4) != 0) throw FormatError("checkpoint has bad magic");
  const auto version = r.get<std::uint32_t>("version");
  if (version != checkpoint_version) {
    throw FormatError("checkpoint has unsupported version " + std::to_string(version));
  }
  const auto record_len = r.get<std::uint32_t>("spec record length");
  const std::string record = r.bytes(record_len, "spec record");

  Checkpoint ckpt;
  ckpt.model = net::model_from_spec_record(record);
  if (const auto pos = record.find("\nbest_val "); pos != std::string::npos) {
    ckpt.best_val_accuracy = std::stod(record.substr(pos + 10));
  }

  std::map<std::string, std::pair<std::size_t, ad::Shape>> expected;
  for (std::size_t k = 0; k < ckpt.model.members.size(); ++k) {
    for (auto& [name, t] : ckpt.model.members[k].named_state()) expected[member_prefix(k) + name] = {k, t.shape()};
  }
  const auto count = r.get<std::uint32_t>("tensor count");
  if (count != expected.size()) {
    throw FormatError("checkpoint tensor count " + std::to_string(count) + " does not match the spec record (" +
                      std::to_string(expected.size()) + ")");
  }
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::string where = "tensor " + std::to_string(i);
    const auto name_len = r.get<std::uint16_t>(where + " name length");
    const std::string name = r.bytes(name_len, where + " name");
    const auto it = expected.find(name);
    if (it == expected.end()) throw FormatError("checkpoint has unexpected tensor '" + name + "'");
    const auto dtype = r.get<std::uint8_t>(name + " dtype");
    if (dtype != dtype_f32 && dtype != dtype_f64) {
      throw FormatError("checkpoint tensor '" + name + "' has unknown dtype " + std::to_string(dtype));
    }
    const auto rank = r.get<std::uint8_t>(name + " rank");
    ad::Shape shape(rank);
    for (auto& d : shape) d = r.get<std::uint64_t>(name + " dims");
    if (shape != it->second.second) {
      throw FormatError("checkpoint tensor '" + name + "' has shape " + ad::shape_str(shape) + ", expected " +
                        ad::shape_str(it->second.second));
    }
    std::vector<double> values(ad::shape_numel(shape));
    for (double& v : values) {
      v = dtype == dtype_f64 ? std::bit_cast<double>(r.get<std::uint64_t>(name + " values"))
                             : static_cast<double>(std::bit_cast<float>(r.get<std::uint32_t>(name + " values")));
    }
    const std::size_t k = it->second.first;
    assign(ckpt.model.members[k], name.substr(member_prefix(k).size()), values);
    expected.erase(it);
  }
  return ckpt;
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open checkpoint " + path.string());
  return load_checkpoint(in);
}

}  // namespace enres::lab
