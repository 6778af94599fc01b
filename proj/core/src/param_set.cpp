#include "cei/param_set.hpp"

#include <algorithm>
#include <sstream>

namespace cei {

template <typename T>
std::size_t BasicParamSet<T>::add(std::string name, BasicTensor<T> tensor) {
  if (find(name)) throw std::invalid_argument("parameter set: duplicate entry '" + name + "'");
  entries_.push_back(Entry{std::move(name), std::move(tensor)});
  return entries_.size() - 1;
}

template <typename T>
std::optional<std::size_t> BasicParamSet<T>::find(std::string_view name) const {
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    if (entries_[i].name == name) return i;
  }
  return std::nullopt;
}

template <typename T>
const BasicTensor<T>& BasicParamSet<T>::at(std::string_view name) const {
  auto i = find(name);
  if (!i) throw std::out_of_range("parameter set: no entry '" + std::string(name) + "'");
  return entries_[*i].tensor;
}

template <typename T>
std::size_t BasicParamSet<T>::scalar_count() const noexcept {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.tensor.size();
  return n;
}

template class BasicParamSet<float>;
template class BasicParamSet<double>;

std::string CompatReport::first_mismatch() const {
  if (diffs.empty()) return {};
  const EntryDiff& d = diffs.front();
  std::ostringstream os;
  os << "entry " << d.index << " ";
  if (d.left_name == d.right_name) {
    os << "'" << d.left_name << "'";
  } else {
    os << "'" << (d.left_name.empty() ? "<missing>" : d.left_name) << "' vs '"
       << (d.right_name.empty() ? "<missing>" : d.right_name) << "'";
  }
  os << ": " << d.reason;
  return os.str();
}

std::string CompatReport::describe() const {
  std::ostringstream os;
  os << "compatible\t" << (compatible ? "yes" : "no") << "\n";
  for (const EntryDiff& d : diffs) {
    os << d.index << "\t" << (d.left_name.empty() ? "<missing>" : d.left_name) << "\t"
       << (d.left_shape ? to_string(*d.left_shape) : "-") << "\t"
       << (d.right_name.empty() ? "<missing>" : d.right_name) << "\t"
       << (d.right_shape ? to_string(*d.right_shape) : "-") << "\t" << d.reason << "\n";
  }
  return os.str();
}

template <typename T>
CompatReport compat_check(const BasicParamSet<T>& a, const BasicParamSet<T>& b) {
  CompatReport report;
  const std::size_t n = std::max(a.size(), b.size());
  for (std::size_t i = 0; i < n; ++i) {
    EntryDiff d;
    d.index = i;
    if (i < a.size()) {
      d.left_name = a[i].name;
      d.left_shape = a[i].tensor.shape();
    }
    if (i < b.size()) {
      d.right_name = b[i].name;
      d.right_shape = b[i].tensor.shape();
    }
    if (i >= a.size() || i >= b.size()) {
      d.reason = "entry count differs (" + std::to_string(a.size()) + " vs " + std::to_string(b.size()) + ")";
    } else if (d.left_name != d.right_name) {
      d.reason = "name differs";
    } else if (*d.left_shape != *d.right_shape) {
      d.reason = "shape differs " + to_string(*d.left_shape) + " vs " + to_string(*d.right_shape);
    } else {
      continue;
    }
    report.diffs.push_back(std::move(d));
  }
  report.compatible = report.diffs.empty();
  return report;
}

template CompatReport compat_check(const BasicParamSet<float>&, const BasicParamSet<float>&);
template CompatReport compat_check(const BasicParamSet<double>&, const BasicParamSet<double>&);

IncompatibleModels::IncompatibleModels(CompatReport report)
    : std::invalid_argument("models are not blend-compatible: " + report.first_mismatch()),
      report_(std::move(report)) {}

}  // namespace cei
