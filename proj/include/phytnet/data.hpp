#pragma once

#include <filesystem>
#include <optional>
#include <unordered_map>

#include <json.hpp>

#include "phytnet/image.hpp"

namespace phytnet {

struct Sample {
  std::string source_id;  // "<class_dir>/<file_name>", unique
  int label = 0;
};

struct DatasetManifest {
  std::filesystem::path root;
  std::vector<std::string> class_names;  // sorted lexicographically
  std::vector<Sample> samples;
  uint64_t seed = 42;
  std::optional<NormStats> norm;  // dataset-wide stats, when computed

  int num_classes() const { return static_cast<int>(class_names.size()); }
  std::filesystem::path file_of(int idx) const { return root / samples[idx].source_id; }
  nlohmann::json to_json() const;
  static DatasetManifest from_json(const nlohmann::json& j,
                                   const std::filesystem::path& root);
  void save(const std::filesystem::path& file) const;
  static DatasetManifest load(const std::filesystem::path& file);
};

// Walks root/<class_dir>/*.png|jpg|jpeg. Undecodable files are reported in
// rejects rather than silently dropped; an empty class directory is an error.
DatasetManifest load_dataset(const std::filesystem::path& root,
                             std::vector<std::string>* rejects = nullptr);

struct FoldPlan {
  int k = 0;
  std::unordered_map<std::string, int> assignment;  // source_id -> fold
  std::vector<NormStats> fold_norm;  // train-portion stats, filled by CV

  int fold_of(const std::string& source_id) const { return assignment.at(source_id); }
};

// Deterministic stratified k-fold: per-class seeded shuffle, then round-robin
// assignment continuing a global counter so fold sizes differ by at most 1.
FoldPlan kfold_split(const DatasetManifest& manifest, int k, uint64_t seed);

// Four procedurally distinct texture classes (blob/ring/speckle/stripe) with
// nuisance brightness, position, and noise variation. Writes PNGs plus a
// manifest.json under out.
DatasetManifest synthesize_dataset(int n_per_class, uint64_t seed,
                                   const std::filesystem::path& out);

// Runs fn(0..n-1) on up to `workers` threads; with workers <= 1 runs inline.
// Results must be written to per-index slots so the schedule is invisible.
void parallel_for(int n, int workers, const std::function<void(int)>& fn);

// Every image of the manifest decoded once, shared across folds and epochs.
class DecodedCache {
 public:
  DecodedCache(const DatasetManifest& manifest, int workers = 1);
  const Image& get(int idx) const { return images_.at(static_cast<size_t>(idx)); }

 private:
  std::vector<Image> images_;
};

// Per-channel mean/std (double accumulation) over the listed samples.
NormStats compute_norm_stats(const DecodedCache& cache, const std::vector<int>& indices);

struct Batch {
  Tensor x;  // [B,3,S,S]
  std::vector<int> labels;
};

// Augmentation draws are seeded per (base_seed, epoch, manifest index), so
// batches are identical for any worker count.
Batch make_batch(const DecodedCache& cache, const DatasetManifest& manifest,
                 const std::vector<int>& indices, const NormStats& norm, int size,
                 bool do_augment, uint64_t base_seed, int epoch, int workers);

}  // namespace phytnet
