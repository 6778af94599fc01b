#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "cei/tensor.hpp"

namespace cei {

inline constexpr std::uint32_t kArchiveFormatVersion = 1;

struct ParamMeta {
  std::uint32_t format_version = kArchiveFormatVersion;
  /// Feature width c of the owning architecture; 0 when unknown (e.g. freshly loaded).
  std::size_t channel_width = 0;

  friend bool operator==(const ParamMeta&, const ParamMeta&) = default;
};

/// Ordered, uniquely named parameter tensors of one model.
template <typename T>
class BasicParamSet {
 public:
  struct Entry {
    std::string name;
    BasicTensor<T> tensor;

    friend bool operator==(const Entry&, const Entry&) = default;
  };

  /// Appends an entry and returns its index. Duplicate names are rejected.
  std::size_t add(std::string name, BasicTensor<T> tensor);

  [[nodiscard]] std::size_t size() const noexcept { return entries_.size(); }
  [[nodiscard]] const std::vector<Entry>& entries() const noexcept { return entries_; }
  [[nodiscard]] const Entry& operator[](std::size_t i) const { return entries_.at(i); }
  [[nodiscard]] Entry& operator[](std::size_t i) { return entries_.at(i); }

  [[nodiscard]] std::optional<std::size_t> find(std::string_view name) const;
  [[nodiscard]] const BasicTensor<T>& at(std::string_view name) const;

  /// Total number of scalars.
  [[nodiscard]] std::size_t scalar_count() const noexcept;

  [[nodiscard]] ParamMeta& meta() noexcept { return meta_; }
  [[nodiscard]] const ParamMeta& meta() const noexcept { return meta_; }

  template <typename U>
  [[nodiscard]] BasicParamSet<U> cast() const {
    BasicParamSet<U> out;
    for (const auto& e : entries_) out.add(e.name, e.tensor.template cast<U>());
    out.meta() = meta_;
    return out;
  }

  friend bool operator==(const BasicParamSet&, const BasicParamSet&) = default;

 private:
  std::vector<Entry> entries_;
  ParamMeta meta_;
};

using ParamSet = BasicParamSet<float>;
using ParamSet64 = BasicParamSet<double>;

extern template class BasicParamSet<float>;
extern template class BasicParamSet<double>;

/// One position at which two parameter sets disagree.
struct EntryDiff {
  std::size_t index = 0;
  std::string left_name;
  std::string right_name;
  std::optional<Shape> left_shape;
  std::optional<Shape> right_shape;
  std::string reason;
};

struct CompatReport {
  bool compatible = true;
  std::vector<EntryDiff> diffs;

  /// "" when compatible, else a one-line description of the first mismatching entry.
  [[nodiscard]] std::string first_mismatch() const;
  /// Tab-separated listing of every difference.
  [[nodiscard]] std::string describe() const;
};

/// Blend-compatible iff names, order and shapes all match.
template <typename T>
CompatReport compat_check(const BasicParamSet<T>& a, const BasicParamSet<T>& b);

class IncompatibleModels : public std::invalid_argument {
 public:
  explicit IncompatibleModels(CompatReport report);
  [[nodiscard]] const CompatReport& report() const noexcept { return report_; }

 private:
  CompatReport report_;
};

}  // namespace cei
