#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

namespace sslattn {

// Indexed labelled images. image(i) returns uint8 [3,H,W] (RGB).
class Dataset {
 public:
  virtual ~Dataset() = default;
  virtual std::int64_t size() const = 0;
  virtual torch::Tensor image(std::int64_t index) const = 0;
  virtual std::int64_t label(std::int64_t index) const = 0;
  virtual std::int64_t num_classes() const = 0;

  std::vector<std::int64_t> labels() const;
};

// Fully in-memory dataset: images uint8 [N,3,H,W], labels int64 [N].
class TensorDataset final : public Dataset {
 public:
  TensorDataset(torch::Tensor images, torch::Tensor labels, std::int64_t num_classes);

  std::int64_t size() const override { return images_.size(0); }
  torch::Tensor image(std::int64_t index) const override;
  std::int64_t label(std::int64_t index) const override;
  std::int64_t num_classes() const override { return num_classes_; }

  const torch::Tensor& images() const { return images_; }
  const torch::Tensor& label_tensor() const { return labels_; }

 private:
  torch::Tensor images_;
  torch::Tensor labels_;
  std::int64_t num_classes_;
};

// root/<class>/<file>; decoding happens on access. Files whose header no
// decoder recognises are skipped with a log line when the index is built.
class ImageFolderDataset final : public Dataset {
 public:
  explicit ImageFolderDataset(const std::filesystem::path& root);

  std::int64_t size() const override { return static_cast<std::int64_t>(files_.size()); }
  torch::Tensor image(std::int64_t index) const override;
  std::int64_t label(std::int64_t index) const override;
  std::int64_t num_classes() const override { return static_cast<std::int64_t>(classes_.size()); }

  const std::vector<std::string>& classes() const { return classes_; }

 private:
  std::vector<std::string> classes_;
  std::vector<std::filesystem::path> files_;
  std::vector<std::int64_t> labels_;
};

class SubsetDataset final : public Dataset {
 public:
  SubsetDataset(std::shared_ptr<const Dataset> base, std::vector<std::int64_t> indices);

  std::int64_t size() const override { return static_cast<std::int64_t>(indices_.size()); }
  torch::Tensor image(std::int64_t index) const override;
  std::int64_t label(std::int64_t index) const override;
  std::int64_t num_classes() const override { return base_->num_classes(); }

  const std::vector<std::int64_t>& indices() const { return indices_; }

 private:
  std::shared_ptr<const Dataset> base_;
  std::vector<std::int64_t> indices_;
};

// CIFAR-10 binary format: records of 1 label byte + 3072 bytes (R, G, B planes, 32x32).
enum class Split { train, test };
std::shared_ptr<TensorDataset> load_cifar10(const std::filesystem::path& dir, Split split);
void write_cifar10_batch(const std::filesystem::path& file, const TensorDataset& data);
bool looks_like_cifar10(const std::filesystem::path& dir);

// Procedural 10-class 32x32 image set: each class is a shape family drawn at a
// random position/scale over a noisy textured background. Deterministic in seed.
std::shared_ptr<TensorDataset> make_synthetic_dataset(std::int64_t count, std::int64_t num_classes,
                                                      std::int64_t image_size, std::uint64_t seed);

// Writes a synthetic set in CIFAR-10 binary layout (5 train batches + test batch).
void write_synthetic_cifar10(const std::filesystem::path& dir, std::int64_t train_count,
                             std::int64_t test_count, std::uint64_t seed);

struct DataSplits {
  std::shared_ptr<const Dataset> train;
  std::shared_ptr<const Dataset> test;
  std::string kind;
};

// Detects the layout at `root`: CIFAR-10 binary batches, or an image folder
// with train/ and val/ subdirectories. Subsets (0 = all) are seeded random
// index draws, returned in ascending order.
DataSplits open_dataset(const std::filesystem::path& root, std::int64_t train_subset,
                        std::int64_t test_subset, std::uint64_t seed);

std::vector<std::int64_t> random_subset(std::int64_t population, std::int64_t count, std::uint64_t seed);

}  // namespace sslattn
