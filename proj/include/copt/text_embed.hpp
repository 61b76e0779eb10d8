#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <set>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "copt/binio.hpp"
#include "copt/builtin_templates.hpp"
#include "copt/covariance.hpp"
#include "copt/errors.hpp"
#include "copt/ops.hpp"
#include "copt/rng.hpp"

namespace copt {

// ---------------------------------------------------------------------------
// Prompt formatting
// ---------------------------------------------------------------------------

/// "A {domain} of a {class}"
inline std::string format_handcrafted(std::string_view domain, std::string_view cls) {
  if (domain.empty() || cls.empty()) throw ValidationError("format_handcrafted: domain and class must be non-empty");
  std::string s = "A ";
  s.append(domain).append(" of a ").append(cls);
  return s;
}

/// "A {class} with {attribute}"
inline std::string format_llm(std::string_view cls, std::string_view attribute) {
  if (cls.empty() || attribute.empty()) throw ValidationError("format_llm: class and attribute must be non-empty");
  std::string s = "A ";
  s.append(cls).append(" with ").append(attribute);
  return s;
}

enum class TemplateMode { handcrafted, llm };

inline std::string_view to_string(TemplateMode m) { return m == TemplateMode::handcrafted ? "handcrafted" : "llm"; }

inline TemplateMode parse_template_mode(std::string_view s) {
  if (s == "handcrafted") return TemplateMode::handcrafted;
  if (s == "llm") return TemplateMode::llm;
  throw ConfigError("unknown template mode '" + std::string(s) + "' (expected handcrafted|llm)");
}

// ---------------------------------------------------------------------------
// Template sets and class lists
// ---------------------------------------------------------------------------

struct DomainTemplateSet {
  std::string domain_name;
  std::vector<std::string> attributes;

  void validate() const {
    if (domain_name.empty()) throw ValidationError("template set: empty domain name");
    if (attributes.empty()) throw ValidationError("template set '" + domain_name + "': needs at least one attribute");
    std::set<std::string_view> seen;
    for (const auto& a : attributes) {
      if (a.empty()) throw ValidationError("template set '" + domain_name + "': empty attribute");
      if (!seen.insert(a).second) throw ValidationError("template set '" + domain_name + "': duplicate attribute '" + a + "'");
    }
  }
};

namespace detail {
inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}
}  // namespace detail

/// Parses a template data file: first line "domain: <name>", then one
/// attribute per line. Blank lines are skipped.
inline DomainTemplateSet parse_template_text(std::string_view text, std::string_view origin = "<memory>") {
  DomainTemplateSet set;
  std::size_t pos = 0;
  bool header = false;
  while (pos <= text.size()) {
    auto nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    const std::string line = detail::trim(text.substr(pos, nl - pos));
    pos = nl + 1;
    if (line.empty()) continue;
    if (!header) {
      constexpr std::string_view key = "domain:";
      if (line.rfind(key, 0) != 0)
        throw ValidationError(std::string(origin) + ": first line must be 'domain: <name>'");
      set.domain_name = detail::trim(std::string_view(line).substr(key.size()));
      header = true;
      continue;
    }
    set.attributes.push_back(line);
  }
  if (!header) throw ValidationError(std::string(origin) + ": missing 'domain: <name>' header");
  set.validate();
  return set;
}

inline DomainTemplateSet load_template_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open template file " + path.string());
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_template_text(text, path.string());
}

inline std::string serialize_template_set(const DomainTemplateSet& set) {
  std::string s = "domain: " + set.domain_name + "\n";
  for (const auto& a : set.attributes) s += a + "\n";
  return s;
}

inline DomainTemplateSet builtin_template_set(std::string_view name) {
  for (const auto& d : builtin_domains()) {
    if (d.name == name) {
      DomainTemplateSet set{std::string(d.name), {}};
      for (auto a : d.attributes) set.attributes.emplace_back(a);
      return set;
    }
  }
  throw LookupError("no built-in template set named '" + std::string(name) + "'");
}

/// Resolves "builtin:<name>" or a file path.
inline DomainTemplateSet resolve_template_set(std::string_view spec) {
  constexpr std::string_view prefix = "builtin:";
  if (spec.rfind(prefix, 0) == 0) return builtin_template_set(spec.substr(prefix.size()));
  return load_template_file(std::filesystem::path(std::string(spec)));
}

/// Class names; the position of a name is the class id used in masks.
class ClassList {
 public:
  ClassList() = default;
  explicit ClassList(std::vector<std::string> names) : names_(std::move(names)) {
    std::set<std::string_view> seen;
    for (const auto& n : names_) {
      if (n.empty()) throw ValidationError("class list: empty class name");
      if (!seen.insert(n).second) throw ValidationError("class list: duplicate class '" + n + "'");
    }
  }

  std::size_t size() const noexcept { return names_.size(); }
  const std::string& operator[](std::size_t i) const { return names_.at(i); }
  const std::vector<std::string>& names() const noexcept { return names_; }

 private:
  std::vector<std::string> names_;
};

// ---------------------------------------------------------------------------
// Embedding providers
// ---------------------------------------------------------------------------

/// Maps a prompt string to a fixed-width text embedding.
class EmbeddingProvider {
 public:
  virtual ~EmbeddingProvider() = default;
  virtual std::size_t dim() const = 0;
  virtual std::vector<float> embed(std::string_view prompt) const = 0;
};

/// Dependency-free stand-in for a frozen text encoder: FNV-1a of the UTF-8
/// bytes seeds a counter-based stream of standard normals, then the vector is
/// L2-normalized.
class HashEmbedder final : public EmbeddingProvider {
 public:
  explicit HashEmbedder(std::size_t dim) : dim_(dim) {
    if (dim < 2) throw ValidationError("hash embedder: dim must be at least 2");
  }

  std::size_t dim() const override { return dim_; }

  std::vector<float> embed(std::string_view prompt) const override {
    CounterRng rng(fnv1a64(prompt));
    std::vector<double> v(dim_);
    double norm2 = 0.0;
    for (auto& x : v) {
      x = rng.normal();
      norm2 += x * x;
    }
    const double inv = 1.0 / std::sqrt(norm2);
    std::vector<float> out(dim_);
    for (std::size_t i = 0; i < dim_; ++i) out[i] = static_cast<float>(v[i] * inv);
    return out;
  }

 private:
  std::size_t dim_;
};

/// Prompt-keyed embedding table, in file order.
class EmbeddingTable final : public EmbeddingProvider {
 public:
  explicit EmbeddingTable(std::size_t dim) : dim_(dim) {}

  void add(std::string prompt, std::vector<float> vec) {
    if (vec.size() != dim_)
      throw DimensionError("embedding for '" + prompt + "' has " + std::to_string(vec.size()) + " values, table dim " +
                           std::to_string(dim_));
    if (index_.count(prompt)) throw ValidationError("duplicate prompt '" + prompt + "'");
    index_.emplace(prompt, entries_.size());
    entries_.emplace_back(std::move(prompt), std::move(vec));
  }

  std::size_t dim() const override { return dim_; }

  std::vector<float> embed(std::string_view prompt) const override {
    auto it = index_.find(std::string(prompt));
    if (it == index_.end()) throw LookupError("no embedding for prompt \"" + std::string(prompt) + "\"");
    return entries_[it->second].second;
  }

  const std::vector<std::pair<std::string, std::vector<float>>>& entries() const noexcept { return entries_; }

 private:
  std::size_t dim_;
  std::vector<std::pair<std::string, std::vector<float>>> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

// CTEF: "CTE1" | u32 version=1 | u32 dim | u32 count | count x (u32 len, bytes, dim x f32)
inline constexpr std::uint32_t kCtefVersion = 1;

inline std::vector<std::uint8_t> encode_ctef(const EmbeddingTable& table) {
  binio::Writer w;
  w.magic("CTE1");
  w.u32(kCtefVersion);
  w.u32(static_cast<std::uint32_t>(table.dim()));
  w.u32(static_cast<std::uint32_t>(table.entries().size()));
  for (const auto& [name, vec] : table.entries()) {
    w.str(name);
    w.f32s(vec.data(), vec.size());
  }
  return w.take();
}

inline EmbeddingTable decode_ctef(const std::vector<std::uint8_t>& bytes, std::string context = "ctef") {
  binio::Reader r(bytes, std::move(context));
  r.expect_magic("CTE1");
  const auto version = r.u32("version");
  if (version != kCtefVersion) r.fail("unsupported version " + std::to_string(version));
  const auto dim = r.u32("dim");
  if (dim == 0) r.fail("dim must be positive");
  const auto count = r.u32("entry count");
  EmbeddingTable table(dim);
  for (std::uint32_t e = 0; e < count; ++e) {
    std::string name = r.str("entry name");
    std::vector<float> vec(dim);
    r.f32s(vec.data(), dim, "entry vector");
    try {
      table.add(std::move(name), std::move(vec));
    } catch (const Error& ex) {
      r.fail(ex.what());
    }
  }
  if (!r.at_end()) r.fail("trailing bytes after " + std::to_string(count) + " entries");
  return table;
}

inline void save_ctef(const std::filesystem::path& path, const EmbeddingTable& table) {
  binio::write_file(path, encode_ctef(table));
}

inline EmbeddingTable load_ctef(const std::filesystem::path& path) {
  return decode_ctef(binio::read_file(path), path.string());
}

// ---------------------------------------------------------------------------
// Text bank
// ---------------------------------------------------------------------------

/// Prompts for one (domain, class) pair, sorted so the mean is independent of
/// attribute order at the bit level.
inline std::vector<std::string> domain_prompts(const DomainTemplateSet& templates, std::string_view cls,
                                               TemplateMode mode) {
  std::vector<std::string> prompts;
  if (mode == TemplateMode::handcrafted) {
    prompts.push_back(format_handcrafted(templates.domain_name, cls));
  } else {
    templates.validate();
    for (const auto& a : templates.attributes) prompts.push_back(format_llm(cls, a));
    std::sort(prompts.begin(), prompts.end());
  }
  return prompts;
}

/// Mean embedding over the domain's prompts for `cls`.
inline std::vector<float> domain_class_embedding(const EmbeddingProvider& provider, const DomainTemplateSet& templates,
                                                 std::string_view cls, TemplateMode mode = TemplateMode::llm) {
  const auto prompts = domain_prompts(templates, cls, mode);
  std::vector<double> acc(provider.dim(), 0.0);
  for (const auto& p : prompts) {
    const auto v = provider.embed(p);
    if (v.size() != provider.dim())
      throw DimensionError("provider returned " + std::to_string(v.size()) + " values for dim " +
                           std::to_string(provider.dim()));
    for (std::size_t i = 0; i < v.size(); ++i) acc[i] += v[i];
  }
  std::vector<float> out(acc.size());
  const double k = static_cast<double>(prompts.size());
  for (std::size_t i = 0; i < acc.size(); ++i) out[i] = static_cast<float>(acc[i] / k);
  return out;
}

/// Immutable per-class text embeddings. The domain-agnostic vector of each
/// class is the midpoint of its source and target embeddings.
class TextBank {
 public:
  struct Entry {
    std::vector<float> source;
    std::vector<float> target;
    std::vector<float> agnostic;
  };

  /// Builds the bank from per-class (source, target) pairs.
  static TextBank from_domain_embeddings(ClassList classes,
                                         std::vector<std::pair<std::vector<float>, std::vector<float>>> pairs) {
    if (pairs.size() != classes.size())
      throw ValidationError("text bank: " + std::to_string(pairs.size()) + " embeddings for " +
                            std::to_string(classes.size()) + " classes");
    TextBank bank;
    bank.classes_ = std::move(classes);
    bank.dim_ = pairs.empty() ? 0 : pairs.front().first.size();
    for (auto& [s, t] : pairs) {
      if (s.size() != bank.dim_ || t.size() != bank.dim_) throw DimensionError("text bank: inconsistent embedding width");
      Entry e{std::move(s), std::move(t), std::vector<float>(bank.dim_)};
      for (std::size_t i = 0; i < bank.dim_; ++i) e.agnostic[i] = 0.5f * (e.source[i] + e.target[i]);
      bank.entries_.push_back(std::move(e));
    }
    return bank;
  }

  std::size_t dim() const noexcept { return dim_; }
  std::size_t size() const noexcept { return entries_.size(); }
  const ClassList& classes() const noexcept { return classes_; }
  const Entry& entry(std::size_t class_id) const { return entries_.at(class_id); }
  const std::vector<float>& agnostic(std::size_t class_id) const { return entries_.at(class_id).agnostic; }

 private:
  TextBank() = default;
  ClassList classes_;
  std::size_t dim_ = 0;
  std::vector<Entry> entries_;
};

inline TextBank build_text_bank(const EmbeddingProvider& provider, const DomainTemplateSet& source,
                                const DomainTemplateSet& target, const ClassList& classes, TemplateMode mode) {
  std::vector<std::pair<std::vector<float>, std::vector<float>>> pairs;
  for (const auto& cls : classes.names())
    pairs.emplace_back(domain_class_embedding(provider, source, cls, mode),
                       domain_class_embedding(provider, target, cls, mode));
  return TextBank::from_domain_embeddings(classes, std::move(pairs));
}

/// Every prompt the bank construction will look up, in a stable order.
inline std::vector<std::string> all_prompts(const DomainTemplateSet& source, const DomainTemplateSet& target,
                                            const ClassList& classes, TemplateMode mode) {
  std::vector<std::string> out;
  std::set<std::string> seen;
  for (const auto& cls : classes.names())
    for (const auto* set : {&source, &target})
      for (auto& p : domain_prompts(*set, cls, mode))
        if (seen.insert(p).second) out.push_back(std::move(p));
  return out;
}

/// Cosine-similarity matrix of the agnostic text embeddings of `present`.
/// Diagonal entries are exactly 1 for non-zero embeddings.
template <typename T = float>
CovarianceMatrix<T> text_covariance(const TextBank& bank, const std::vector<int>& present) {
  const std::size_t m = present.size();
  if (m < 2) throw DegenerateBatchError("text_covariance: need at least 2 classes, got " + std::to_string(m));
  std::set<int> unique(present.begin(), present.end());
  if (unique.size() != m) throw ContractError("text_covariance: duplicate class ids");
  for (int id : present)
    if (id < 0 || static_cast<std::size_t>(id) >= bank.size())
      throw ContractError("text_covariance: class id " + std::to_string(id) + " not in bank");
  std::vector<double> norms(m);
  for (std::size_t i = 0; i < m; ++i) {
    double n2 = 0.0;
    for (float x : bank.agnostic(static_cast<std::size_t>(present[i]))) n2 += static_cast<double>(x) * x;
    norms[i] = std::sqrt(n2);
  }
  constexpr double eps = 1e-8;
  std::vector<T> values(m * m);
  for (std::size_t i = 0; i < m; ++i) {
    const auto& a = bank.agnostic(static_cast<std::size_t>(present[i]));
    for (std::size_t j = i; j < m; ++j) {
      const auto& b = bank.agnostic(static_cast<std::size_t>(present[j]));
      double ab = 0.0;
      for (std::size_t d = 0; d < a.size(); ++d) ab += static_cast<double>(a[d]) * b[d];
      double c = ab / (std::max(norms[i], eps) * std::max(norms[j], eps));
      if (i == j && norms[i] > 0.0) c = 1.0;
      c = std::clamp(c, -1.0, 1.0);
      values[i * m + j] = values[j * m + i] = static_cast<T>(c);
    }
  }
  return {present, BasicTensor<T>(Shape{m, m}, std::move(values))};
}

}  // namespace copt
