#include "cei/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

namespace cei {

namespace fs = std::filesystem;

Image apply_effect(const EffectDescriptor& effect, const Image& input) {
  if (effect.name == "gaussian") return gaussian_blur(input, effect.strength);
  if (effect.name == "identity") return input;
  throw DatasetError("unknown effect '" + effect.name + "' (known: gaussian, identity)");
}

std::string_view split_name(Split s) { return s == Split::Train ? "train" : "val"; }

fs::path DatasetManifest::resolve(const fs::path& p) const { return p.is_absolute() ? p : base_dir / p; }

std::size_t DatasetManifest::count(Split s) const {
  return static_cast<std::size_t>(
      std::count_if(records.begin(), records.end(), [s](const ManifestRecord& r) { return r.split == s; }));
}

DatasetManifest parse_manifest(const std::string& text, const fs::path& base_dir) {
  DatasetManifest m;
  m.base_dir = base_dir;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  bool have_effect = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line.rfind("#effect", 0) == 0) {
      std::istringstream hs(line.substr(7));
      if (!(hs >> m.effect.name >> m.effect.strength)) {
        throw DatasetError("manifest line " + std::to_string(lineno) + ": expected '#effect <name> <strength>'");
      }
      have_effect = true;
      continue;
    }
    if (line[0] == '#') continue;
    const auto t1 = line.find('\t');
    const auto t2 = t1 == std::string::npos ? std::string::npos : line.find('\t', t1 + 1);
    if (t2 == std::string::npos) {
      throw DatasetError("manifest line " + std::to_string(lineno) + ": expected input<TAB>label<TAB>split");
    }
    ManifestRecord r;
    r.input = line.substr(0, t1);
    r.label = line.substr(t1 + 1, t2 - t1 - 1);
    const std::string split = line.substr(t2 + 1);
    if (split == "train") {
      r.split = Split::Train;
    } else if (split == "val") {
      r.split = Split::Val;
    } else {
      throw DatasetError("manifest line " + std::to_string(lineno) + ": unknown split '" + split + "'");
    }
    m.records.push_back(std::move(r));
  }
  if (!have_effect) throw DatasetError("manifest has no '#effect' header line");
  return m;
}

std::string format_manifest(const DatasetManifest& m) {
  std::ostringstream os;
  char strength[32];
  std::snprintf(strength, sizeof strength, "%.17g", m.effect.strength);
  os << "#effect " << m.effect.name << ' ' << strength << '\n';
  for (const auto& r : m.records) {
    os << r.input.generic_string() << '\t' << r.label.generic_string() << '\t' << split_name(r.split) << '\n';
  }
  return os.str();
}

DatasetManifest read_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DatasetError(path.string() + ": cannot open manifest");
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return parse_manifest(ss.str(), path.parent_path());
  } catch (const DatasetError& e) {
    throw DatasetError(path.string() + ": " + e.what());
  }
}

void write_manifest(const DatasetManifest& m, const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DatasetError(path.string() + ": cannot open manifest for writing");
  out << format_manifest(m);
  if (!out) throw DatasetError(path.string() + ": write failed");
}

std::vector<std::string> validate_manifest(const DatasetManifest& m) {
  std::vector<std::string> problems;
  if (m.records.empty()) problems.push_back("manifest has no records");
  for (std::size_t i = 0; i < m.records.size(); ++i) {
    const auto& r = m.records[i];
    const std::string where = "record " + std::to_string(i + 1) + ": ";
    Shape in_shape{}, label_shape{};
    bool ok = true;
    for (const auto& [path, shape] : {std::pair{r.input, &in_shape}, std::pair{r.label, &label_shape}}) {
      const fs::path full = m.resolve(path);
      if (!fs::exists(full)) {
        problems.push_back(where + "missing file " + full.string());
        ok = false;
        continue;
      }
      try {
        *shape = read_image(full).shape();
      } catch (const std::exception& e) {
        problems.push_back(where + e.what());
        ok = false;
      }
    }
    if (ok && !(in_shape == label_shape)) {
      problems.push_back(where + "input " + to_string(in_shape) + " and label " + to_string(label_shape) +
                         " differ in size");
    }
  }
  return problems;
}

std::vector<fs::path> write_synthetic_corpus(const fs::path& dir, std::size_t count, std::size_t height,
                                             std::size_t width, std::uint64_t seed) {
  fs::create_directories(dir);
  Rng root(seed);
  std::vector<fs::path> out;
  for (std::size_t i = 0; i < count; ++i) {
    Rng rng = root.fork(i);
    char name[32];
    std::snprintf(name, sizeof name, "img_%03zu.pgm", i);
    const fs::path p = dir / name;
    write_image(synthetic_image(height, width, rng), p);
    out.push_back(p);
  }
  return out;
}

MakeDatasetResult make_dataset(const fs::path& inputs_dir, const EffectDescriptor& effect, const fs::path& out_dir,
                               std::uint64_t seed) {
  if (!fs::is_directory(inputs_dir)) throw DatasetError(inputs_dir.string() + ": not a directory");
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(inputs_dir)) {
    if (!e.is_regular_file()) continue;
    const auto ext = e.path().extension().string();
    if (ext == ".pgm" || ext == ".ppm") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());

  MakeDatasetResult res;
  res.manifest.effect = effect;
  res.manifest.base_dir = out_dir;
  const fs::path label_dir = out_dir / "labels";
  fs::create_directories(label_dir);
  const fs::path anchor = fs::absolute(out_dir);

  char tag[48];
  std::snprintf(tag, sizeof tag, "_%s%g", effect.name.c_str(), effect.strength);
  for (const auto& f : files) {
    Image img;
    try {
      img = read_image(f);
    } catch (const std::exception& e) {
      res.warnings.push_back(std::string("skipped ") + e.what());
      continue;
    }
    const fs::path label_path = label_dir / (f.stem().string() + tag + f.extension().string());
    write_image(apply_effect(effect, img), label_path);
    ManifestRecord r;
    r.input = fs::proximate(fs::absolute(f), anchor);
    r.label = fs::proximate(fs::absolute(label_path), anchor);
    res.manifest.records.push_back(std::move(r));
  }
  if (res.manifest.records.empty()) throw DatasetError(inputs_dir.string() + ": no decodable images");

  const std::size_t n = res.manifest.records.size();
  const std::size_t n_val = n < 2 ? 0 : std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(0.1 * n)));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(seed);
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.index(i)]);
  for (std::size_t i = 0; i < n_val; ++i) res.manifest.records[order[i]].split = Split::Val;

  res.manifest_path = out_dir / "manifest.tsv";
  write_manifest(res.manifest, res.manifest_path);
  return res;
}

std::vector<ImagePair> load_pairs(const DatasetManifest& m, Split split) {
  std::vector<ImagePair> out;
  for (const auto& r : m.records) {
    if (r.split != split) continue;
    ImagePair p;
    try {
      p.input = read_image(m.resolve(r.input));
      p.label = read_image(m.resolve(r.label));
    } catch (const std::exception& e) {
      throw DatasetError(std::string("invalid dataset: ") + e.what());
    }
    if (!(p.input.shape() == p.label.shape())) {
      throw DatasetError("invalid dataset: " + r.input.string() + " and " + r.label.string() + " differ in size");
    }
    out.push_back(std::move(p));
  }
  return out;
}

std::vector<ImagePair> identity_pairs(const std::vector<ImagePair>& pairs) {
  std::vector<ImagePair> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs) out.push_back({p.input, p.input});
  return out;
}

void check_patch_size(const std::vector<ImagePair>& pairs, std::size_t patch) {
  if (pairs.empty()) throw std::invalid_argument("no image pairs to sample from");
  if (patch == 0 || patch % 2 != 0) {
    throw std::invalid_argument("patch size must be even and positive, got " + std::to_string(patch));
  }
  const Shape& first = pairs.front().input.shape();
  for (const auto& p : pairs) {
    const Shape& s = p.input.shape();
    if (s.c != first.c) throw std::invalid_argument("image pairs mix channel counts");
    if (patch > s.h || patch > s.w) {
      throw std::invalid_argument("patch size " + std::to_string(patch) + " exceeds image " + std::to_string(s.h) +
                                  "x" + std::to_string(s.w));
    }
  }
}

PatchBatch sample_patches(const std::vector<ImagePair>& pairs, std::size_t patch, std::size_t batch, Rng& rng) {
  check_patch_size(pairs, patch);
  const std::size_t c = pairs.front().input.shape().c;
  PatchBatch out{Tensor(Shape{batch, c, patch, patch}), Tensor(Shape{batch, c, patch, patch})};
  for (std::size_t b = 0; b < batch; ++b) {
    const auto& p = pairs[rng.index(pairs.size())];
    const Shape& s = p.input.shape();
    const std::size_t y0 = rng.index(s.h - patch + 1);
    const std::size_t x0 = rng.index(s.w - patch + 1);
    for (std::size_t ch = 0; ch < c; ++ch) {
      for (std::size_t y = 0; y < patch; ++y) {
        const float* si = &p.input.at(0, ch, y0 + y, x0);
        const float* sl = &p.label.at(0, ch, y0 + y, x0);
        std::copy(si, si + patch, &out.input.at(b, ch, y, 0));
        std::copy(sl, sl + patch, &out.label.at(b, ch, y, 0));
      }
    }
  }
  return out;
}

}  // namespace cei
