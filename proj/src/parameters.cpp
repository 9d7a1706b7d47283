#include "ibt/parameters.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <random>
#include <stdexcept>

namespace ibt {

Tensor ParameterSet::add(std::string name, Tensor tensor) {
  if (index_.contains(name)) throw std::invalid_argument("parameter set: duplicate name " + name);
  index_.emplace(name, entries_.size());
  entries_.push_back({std::move(name), std::move(tensor)});
  return entries_.back().tensor;
}

bool ParameterSet::contains(const std::string& name) const { return index_.contains(name); }

const Tensor& ParameterSet::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("parameter set: no parameter " + name);
  return entries_[it->second].tensor;
}

Tensor& ParameterSet::get(const std::string& name) {
  return const_cast<Tensor&>(std::as_const(*this).get(name));
}

std::size_t ParameterSet::element_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.tensor.size();
  return n;
}

void ParameterSet::zero_grad() {
  for (auto& e : entries_) e.tensor.zero_grad();
}

ParameterSet ParameterSet::clone() const {
  ParameterSet copy;
  for (const auto& e : entries_) copy.add(e.name, e.tensor.clone());
  return copy;
}

std::size_t ParameterSet::import_values(const ParameterSet& source) {
  std::size_t copied = 0;
  for (auto& e : entries_) {
    if (!source.contains(e.name)) continue;
    const Tensor& src = source.get(e.name);
    if (src.shape() != e.tensor.shape()) {
      throw std::invalid_argument("import: shape mismatch for " + e.name + ": " + shape_str(src.shape()) + " vs " +
                                  shape_str(e.tensor.shape()));
    }
    std::ranges::copy(src.values(), e.tensor.mutable_values().begin());
    ++copied;
  }
  return copied;
}

bool ParameterSet::identical_to(const ParameterSet& other) const {
  if (size() != other.size()) return false;
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    const auto& a = entries_[i];
    const auto& b = other.entries_[i];
    if (a.name != b.name || a.tensor.shape() != b.tensor.shape()) return false;
    if (std::memcmp(a.tensor.values().data(), b.tensor.values().data(), a.tensor.size() * sizeof(Real)) != 0)
      return false;
  }
  return true;
}

void backward(const Tensor& loss, ParameterSet& params) {
  backward(loss);
  for (auto& e : params) e.tensor.grad();
}

namespace {

constexpr char kMagic[4] = {'I', 'B', 'T', '1'};

void put_u32(std::ostream& out, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xFFu);
  out.write(reinterpret_cast<const char*>(b), 4);
}

void put_f64(std::ostream& out, double v) {
  const auto bits = std::bit_cast<std::uint64_t>(v);
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((bits >> (8 * i)) & 0xFFu);
  out.write(reinterpret_cast<const char*>(b), 8);
}

void read_exact(std::istream& in, unsigned char* dst, std::size_t n) {
  in.read(reinterpret_cast<char*>(dst), static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(in.gcount()) != n) throw std::runtime_error("checkpoint: truncated file");
}

std::uint32_t get_u32(std::istream& in) {
  unsigned char b[4];
  read_exact(in, b, 4);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}

double get_f64(std::istream& in) {
  unsigned char b[8];
  read_exact(in, b, 8);
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return std::bit_cast<double>(bits);
}

}  // namespace

void write_checkpoint(const ParameterSet& params, std::ostream& out) {
  out.write(kMagic, 4);
  put_u32(out, kCheckpointVersion);
  put_u32(out, static_cast<std::uint32_t>(params.size()));
  for (const auto& e : params) {
    put_u32(out, static_cast<std::uint32_t>(e.name.size()));
    out.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
    const auto& shape = e.tensor.shape();
    put_u32(out, static_cast<std::uint32_t>(shape.size()));
    for (auto d : shape) put_u32(out, static_cast<std::uint32_t>(d));
    for (Real v : e.tensor.values()) put_f64(out, static_cast<double>(v));
  }
  if (!out) throw std::runtime_error("checkpoint: write failed");
}

ParameterSet read_checkpoint(std::istream& in) {
  unsigned char magic[4];
  read_exact(in, magic, 4);
  if (std::memcmp(magic, kMagic, 4) != 0) throw std::runtime_error("checkpoint: bad magic");
  const auto version = get_u32(in);
  if (version != kCheckpointVersion) {
    throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));
  }
  const auto count = get_u32(in);
  ParameterSet params;
  for (std::uint32_t p = 0; p < count; ++p) {
    const auto len = get_u32(in);
    std::string name(len, '\0');
    read_exact(in, reinterpret_cast<unsigned char*>(name.data()), len);
    const auto rank = get_u32(in);
    Shape shape(rank);
    for (auto& d : shape) d = get_u32(in);
    std::vector<Real> values(shape_size(shape));
    for (auto& v : values) v = static_cast<Real>(get_f64(in));
    params.add(std::move(name), Tensor::parameter(std::move(shape), std::move(values)));
  }
  return params;
}

void save_checkpoint(const ParameterSet& params, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("checkpoint: cannot open " + path.string());
  write_checkpoint(params, out);
}

ParameterSet load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("checkpoint: cannot open " + path.string());
  return read_checkpoint(in);
}

const GradCheckSample& GradCheckReport::worst() const {
  if (samples.empty()) throw std::logic_error("gradcheck: no samples");
  return *std::ranges::max_element(samples, {}, &GradCheckSample::rel_error);
}

GradCheckReport finite_diff_check(const std::function<Tensor()>& loss_fn, ParameterSet& params,
                                  const GradCheckOptions& options) {
  params.zero_grad();
  backward(loss_fn(), params);

  std::vector<ParameterSet::Entry*> entries;
  for (auto& e : params) entries.push_back(&e);

  std::mt19937_64 rng(options.seed);
  GradCheckReport report;
  for (std::size_t s = 0; s < options.sample_count && !entries.empty(); ++s) {
    auto& entry = *entries[s % entries.size()];
    std::uniform_int_distribution<std::size_t> pick(0, entry.tensor.size() - 1);
    const std::size_t idx = pick(rng);
    auto values = entry.tensor.mutable_values();
    const Real original = values[idx];
    Real numeric;
    {
      NoGradGuard no_grad;
      values[idx] = original + options.step;
      const Real up = loss_fn().item();
      values[idx] = original - options.step;
      const Real down = loss_fn().item();
      values[idx] = original;
      numeric = (up - down) / (2 * options.step);
    }
    const Real analytic = entry.tensor.grad()[idx];
    const Real denom = std::max({std::abs(analytic), std::abs(numeric), Real{1e-8}});
    const Real rel = std::abs(analytic - numeric) / denom;
    report.samples.push_back({entry.name, idx, analytic, numeric, rel});
    report.max_rel_error = std::max(report.max_rel_error, rel);
  }
  return report;
}

}  // namespace ibt
