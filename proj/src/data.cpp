#include "phytnet/data.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <cmath>
#include <fstream>
#include <map>
#include <thread>

namespace phytnet {

using nlohmann::json;
namespace fs = std::filesystem;

json DatasetManifest::to_json() const {
  json samples_json = json::array();
  for (const Sample& s : samples)
    samples_json.push_back({{"source_id", s.source_id}, {"label", s.label}});
  json j{{"class_names", class_names}, {"samples", samples_json}, {"seed", seed}};
  if (norm) {
    j["norm"] = {{"mean", std::vector<double>(norm->mean.begin(), norm->mean.end())},
                 {"std", std::vector<double>(norm->std.begin(), norm->std.end())}};
  }
  return j;
}

DatasetManifest DatasetManifest::from_json(const json& j, const fs::path& root) {
  DatasetManifest m;
  m.root = root;
  try {
    m.class_names = j.at("class_names").get<std::vector<std::string>>();
    m.seed = j.at("seed").get<uint64_t>();
    for (const json& s : j.at("samples"))
      m.samples.push_back(Sample{s.at("source_id").get<std::string>(),
                                 s.at("label").get<int>()});
    if (j.contains("norm")) {
      NormStats norm;
      const auto mean = j.at("norm").at("mean").get<std::vector<double>>();
      const auto std_v = j.at("norm").at("std").get<std::vector<double>>();
      if (mean.size() != 3 || std_v.size() != 3)
        throw DataError("manifest norm stats must have 3 channels");
      std::copy(mean.begin(), mean.end(), norm.mean.begin());
      std::copy(std_v.begin(), std_v.end(), norm.std.begin());
      m.norm = norm;
    }
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed manifest: ") + e.what());
  }
  for (const Sample& s : m.samples)
    if (s.label < 0 || s.label >= m.num_classes())
      throw DataError("manifest label " + std::to_string(s.label) + " out of range");
  return m;
}

void DatasetManifest::save(const fs::path& file) const {
  std::ofstream os(file);
  if (!os) throw IoError("cannot write manifest " + file.string());
  os << to_json().dump(2) << "\n";
}

DatasetManifest DatasetManifest::load(const fs::path& file) {
  std::ifstream is(file);
  if (!is) throw IoError("cannot open manifest " + file.string());
  json j;
  try {
    j = json::parse(is);
  } catch (const json::parse_error& e) {
    throw DataError(std::string("manifest is not valid JSON: ") + e.what());
  }
  return from_json(j, file.parent_path());
}

DatasetManifest load_dataset(const fs::path& root, std::vector<std::string>* rejects) {
  if (!fs::exists(root)) throw IoError("dataset root does not exist: " + root.string());
  if (!fs::is_directory(root))
    throw IoError("dataset root is not a directory: " + root.string());

  std::vector<std::string> class_dirs;
  for (const auto& entry : fs::directory_iterator(root))
    if (entry.is_directory()) class_dirs.push_back(entry.path().filename().string());
  std::sort(class_dirs.begin(), class_dirs.end());
  if (class_dirs.empty())
    throw DataError("dataset root has no class directories: " + root.string());

  DatasetManifest m;
  m.root = root;
  m.class_names = class_dirs;
  for (size_t label = 0; label < class_dirs.size(); ++label) {
    std::vector<std::string> files;
    for (const auto& entry : fs::directory_iterator(root / class_dirs[label])) {
      if (!entry.is_regular_file()) continue;
      std::string ext = entry.path().extension().string();
      std::transform(ext.begin(), ext.end(), ext.begin(),
                     [](unsigned char c) { return std::tolower(c); });
      if (ext == ".png" || ext == ".jpg" || ext == ".jpeg")
        files.push_back(entry.path().filename().string());
    }
    std::sort(files.begin(), files.end());
    if (files.empty())
      throw DataError("class directory is empty: " + (root / class_dirs[label]).string());
    for (const std::string& f : files) {
      const std::string source_id = class_dirs[label] + "/" + f;
      try {
        decode_image(root / source_id);
      } catch (const DataError&) {
        if (rejects) rejects->push_back(source_id);
        continue;
      }
      m.samples.push_back(Sample{source_id, static_cast<int>(label)});
    }
  }
  return m;
}

FoldPlan kfold_split(const DatasetManifest& manifest, int k, uint64_t seed) {
  if (k < 2) throw ConfigError("k must be >= 2, got " + std::to_string(k));
  std::vector<std::vector<int>> by_class(static_cast<size_t>(manifest.num_classes()));
  for (size_t i = 0; i < manifest.samples.size(); ++i)
    by_class[static_cast<size_t>(manifest.samples[i].label)].push_back(
        static_cast<int>(i));
  for (size_t c = 0; c < by_class.size(); ++c)
    if (static_cast<int>(by_class[c].size()) < k)
      throw DataError("class '" + manifest.class_names[c] + "' has " +
                      std::to_string(by_class[c].size()) +
                      " samples, fewer than k=" + std::to_string(k) +
                      "; stratified split impossible");

  FoldPlan plan;
  plan.k = k;
  int next_fold = 0;
  for (size_t c = 0; c < by_class.size(); ++c) {
    std::vector<int>& idx = by_class[c];
    Rng rng(derive_seed(seed, "kfold", {static_cast<uint64_t>(c)}));
    for (size_t i = idx.size(); i > 1; --i)
      std::swap(idx[i - 1],
                idx[static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(i) - 1))]);
    for (int sample_idx : idx) {
      plan.assignment[manifest.samples[static_cast<size_t>(sample_idx)].source_id] =
          next_fold;
      next_fold = (next_fold + 1) % k;
    }
  }
  return plan;
}

namespace {

void draw_synthetic(Image& img, int label, Rng& rng) {
  const int h = img.height, w = img.width;
  const float bg = static_cast<float>(rng.uniform(0.15, 0.45));
  std::array<float, 3> tint;
  for (float& t : tint) t = static_cast<float>(rng.uniform(-0.05, 0.05));
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) img.at(c, y, x) = bg + tint[static_cast<size_t>(c)];

  const float fg = static_cast<float>(rng.uniform(0.65, 0.95));
  switch (label) {
    case 0: {  // blob: one bright Gaussian spot
      const double cy = rng.uniform(h * 0.25, h * 0.75);
      const double cx = rng.uniform(w * 0.25, w * 0.75);
      const double r = rng.uniform(h * 0.12, h * 0.2);
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
          const double d2 = (y - cy) * (y - cy) + (x - cx) * (x - cx);
          const float v = static_cast<float>(fg * std::exp(-d2 / (2.0 * r * r)));
          for (int c = 0; c < 3; ++c) img.at(c, y, x) += v;
        }
      break;
    }
    case 1: {  // ring: bright annulus
      const double cy = rng.uniform(h * 0.35, h * 0.65);
      const double cx = rng.uniform(w * 0.35, w * 0.65);
      const double r = rng.uniform(h * 0.18, h * 0.3);
      const double thick = rng.uniform(1.5, 3.0);
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
          const double d = std::sqrt((y - cy) * (y - cy) + (x - cx) * (x - cx));
          const double band = std::abs(d - r) / thick;
          if (band < 3.0) {
            const float v = static_cast<float>(fg * std::exp(-0.5 * band * band));
            for (int c = 0; c < 3; ++c) img.at(c, y, x) += v;
          }
        }
      break;
    }
    case 2: {  // speckle: many small dots
      const int dots = static_cast<int>(rng.uniform_int(40, 70));
      for (int d = 0; d < dots; ++d) {
        const int cy = static_cast<int>(rng.uniform_int(1, h - 2));
        const int cx = static_cast<int>(rng.uniform_int(1, w - 2));
        for (int dy = -1; dy <= 1; ++dy)
          for (int dx = -1; dx <= 1; ++dx) {
            const float v = (dy == 0 && dx == 0) ? fg : fg * 0.5f;
            for (int c = 0; c < 3; ++c)
              img.at(c, cy + dy, cx + dx) =
                  std::min(1.0f, img.at(c, cy + dy, cx + dx) + v);
          }
      }
      break;
    }
    default: {  // stripe: oriented sinusoidal grating
      const double period = rng.uniform(6.0, 12.0);
      const double phi = rng.uniform(0.0, 3.14159265358979323846);
      const double phase = rng.uniform(0.0, period);
      const double cp = std::cos(phi), sp = std::sin(phi);
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
          const double t = (cp * x + sp * y + phase) / period;
          const float v = static_cast<float>(
              fg * 0.5 * (1.0 + std::sin(2.0 * 3.14159265358979323846 * t)));
          for (int c = 0; c < 3; ++c) img.at(c, y, x) += v * 0.8f;
        }
      break;
    }
  }
  for (float& v : img.data) {
    v += static_cast<float>(rng.uniform(-0.02, 0.02));
    v = std::min(1.0f, std::max(0.0f, v));
  }
}

}  // namespace

DatasetManifest synthesize_dataset(int n_per_class, uint64_t seed, const fs::path& out) {
  if (n_per_class < 1) throw ConfigError("n_per_class must be >= 1");
  const std::vector<std::string> classes = {"blob", "ring", "speckle", "stripe"};
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec) throw IoError("cannot create output directory " + out.string());

  DatasetManifest m;
  m.root = out;
  m.class_names = classes;
  m.seed = seed;
  constexpr int kSide = 64;
  for (size_t label = 0; label < classes.size(); ++label) {
    fs::create_directories(out / classes[label], ec);
    if (ec) throw IoError("cannot create class directory " + classes[label]);
    for (int i = 0; i < n_per_class; ++i) {
      Rng rng(derive_seed(seed, "synth", {static_cast<uint64_t>(label),
                                          static_cast<uint64_t>(i)}));
      Image img(kSide, kSide);
      draw_synthetic(img, static_cast<int>(label), rng);
      char name[32];
      std::snprintf(name, sizeof(name), "img_%04d.png", i);
      const std::string source_id = classes[label] + "/" + name;
      write_png(out / source_id, img);
      m.samples.push_back(Sample{source_id, static_cast<int>(label)});
    }
  }
  m.save(out / "manifest.json");
  return m;
}

void parallel_for(int n, int workers, const std::function<void(int)>& fn) {
  if (n <= 0) return;
  const int threads = std::min(workers, n);
  if (threads <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::vector<std::thread> pool;
  pool.reserve(static_cast<size_t>(threads));
  for (int t = 0; t < threads; ++t) {
    pool.emplace_back([&]() {
      for (int i = next.fetch_add(1); i < n; i = next.fetch_add(1)) fn(i);
    });
  }
  for (std::thread& t : pool) t.join();
}

DecodedCache::DecodedCache(const DatasetManifest& manifest, int workers) {
  images_.resize(manifest.samples.size());
  parallel_for(static_cast<int>(manifest.samples.size()), workers,
               [&](int i) { images_[static_cast<size_t>(i)] = decode_image(manifest.file_of(i)); });
}

NormStats compute_norm_stats(const DecodedCache& cache, const std::vector<int>& indices) {
  if (indices.empty()) throw ConfigError("cannot compute stats over zero samples");
  std::array<double, 3> sum{0, 0, 0}, sum_sq{0, 0, 0};
  int64_t count = 0;
  for (int idx : indices) {
    const Image& img = cache.get(idx);
    const size_t hw = static_cast<size_t>(img.height) * img.width;
    for (int c = 0; c < 3; ++c) {
      const float* src = img.data.data() + c * hw;
      double s = 0.0, s2 = 0.0;
      for (size_t i = 0; i < hw; ++i) {
        s += src[i];
        s2 += static_cast<double>(src[i]) * src[i];
      }
      sum[static_cast<size_t>(c)] += s;
      sum_sq[static_cast<size_t>(c)] += s2;
    }
    count += static_cast<int64_t>(hw);
  }
  NormStats norm;
  for (int c = 0; c < 3; ++c) {
    const double mean = sum[static_cast<size_t>(c)] / static_cast<double>(count);
    const double var =
        sum_sq[static_cast<size_t>(c)] / static_cast<double>(count) - mean * mean;
    norm.mean[static_cast<size_t>(c)] = mean;
    norm.std[static_cast<size_t>(c)] = std::sqrt(std::max(var, 1e-12));
  }
  return norm;
}

Batch make_batch(const DecodedCache& cache, const DatasetManifest& manifest,
                 const std::vector<int>& indices, const NormStats& norm, int size,
                 bool do_augment, uint64_t base_seed, int epoch, int workers) {
  const int n = static_cast<int>(indices.size());
  Batch batch;
  batch.x = Tensor::zeros({n, 3, size, size});
  batch.labels.resize(static_cast<size_t>(n));
  const size_t sample_elems = static_cast<size_t>(3) * size * size;
  float* dst_base = batch.x.ptr();
  parallel_for(n, workers, [&](int i) {
    const int idx = indices[static_cast<size_t>(i)];
    Image img = cache.get(idx);
    if (do_augment) {
      Rng rng(derive_seed(base_seed, "augment",
                          {static_cast<uint64_t>(epoch), static_cast<uint64_t>(idx)}));
      img = augment(img, rng);
    }
    img = resize_bilinear(img, size, size);
    Tensor t = image_to_tensor(img, norm);
    std::copy(t.data().begin(), t.data().end(),
              dst_base + static_cast<size_t>(i) * sample_elems);
    batch.labels[static_cast<size_t>(i)] = manifest.samples[static_cast<size_t>(idx)].label;
  });
  return batch;
}

}  // namespace phytnet
