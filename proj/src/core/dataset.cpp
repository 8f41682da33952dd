#include "sslattn/dataset.hpp"

#include "sslattn/errors.hpp"
#include "sslattn/log.hpp"
#include "sslattn/rng.hpp"

#include <opencv2/imgcodecs.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <numeric>

namespace sslattn {

namespace fs = std::filesystem;

namespace {

constexpr std::int64_t kCifarSide = 32;
constexpr std::int64_t kCifarPixels = 3 * kCifarSide * kCifarSide;
constexpr std::int64_t kCifarRecord = 1 + kCifarPixels;

void append_cifar_file(const fs::path& file, std::vector<std::uint8_t>& pixels,
                       std::vector<std::int64_t>& labels) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw DatasetError("cannot open CIFAR batch " + file.string());
  std::vector<char> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (buf.empty() || buf.size() % kCifarRecord != 0) {
    throw DatasetError("CIFAR batch " + file.string() + " has a size that is not a multiple of 3073 bytes");
  }
  const auto records = static_cast<std::int64_t>(buf.size()) / kCifarRecord;
  for (std::int64_t r = 0; r < records; ++r) {
    const auto* rec = reinterpret_cast<const std::uint8_t*>(buf.data()) + r * kCifarRecord;
    if (rec[0] > 9) throw DatasetError("CIFAR batch " + file.string() + " has a label outside [0,10)");
    labels.push_back(rec[0]);
    pixels.insert(pixels.end(), rec + 1, rec + kCifarRecord);
  }
}

// Smooth pseudo-random field in [0,1], used for backgrounds and textures.
float smooth_noise(double x, double y, const std::array<double, 6>& phase) {
  const double v = std::sin(x * phase[0] + phase[1]) * std::cos(y * phase[2] + phase[3]) +
                   0.5 * std::sin((x + y) * phase[4] + phase[5]);
  return static_cast<float>(0.5 + v / 3.0);
}

// Shape membership for class `cls` at normalised coords (u,v) in [-1,1].
bool inside_shape(std::int64_t cls, double u, double v) {
  const double r = std::sqrt(u * u + v * v);
  switch (cls % 10) {
    case 0: return r < 0.8;                                                // disk
    case 1: return std::abs(u) < 0.7 && std::abs(v) < 0.7;                 // square
    case 2: return v > -0.7 && v < 0.7 && std::abs(u) < (0.7 - v) * 0.6;   // triangle
    case 3: return std::abs(u) < 0.85 && std::abs(v) < 0.85 &&
                   static_cast<int>(std::floor((v + 1.0) * 3.0)) % 2 == 0;  // horizontal bars
    case 4: return std::abs(u) < 0.85 && std::abs(v) < 0.85 &&
                   static_cast<int>(std::floor((u + 1.0) * 3.0)) % 2 == 0;  // vertical bars
    case 5: return (std::abs(u) < 0.25 && std::abs(v) < 0.85) ||
                   (std::abs(v) < 0.25 && std::abs(u) < 0.85);              // plus
    case 6: return r < 0.85 && r > 0.5;                                     // ring
    case 7: return std::abs(u) < 0.85 && std::abs(v) < 0.85 &&
                   (static_cast<int>(std::floor((u + 1.0) * 2.5)) +
                    static_cast<int>(std::floor((v + 1.0) * 2.5))) % 2 == 0;  // checker
    case 8: return std::abs(u) < 0.85 && std::abs(v) < 0.85 &&
                   static_cast<int>(std::floor((u + v + 2.0) * 2.0)) % 2 == 0;  // diagonal bars
    default: {
      const double a = std::hypot(u + 0.45, v + 0.45), b = std::hypot(u - 0.45, v - 0.45);
      return a < 0.4 || b < 0.4;                                            // two dots
    }
  }
}

}  // namespace

std::vector<std::int64_t> Dataset::labels() const {
  std::vector<std::int64_t> out(static_cast<std::size_t>(size()));
  for (std::int64_t i = 0; i < size(); ++i) out[static_cast<std::size_t>(i)] = label(i);
  return out;
}

TensorDataset::TensorDataset(torch::Tensor images, torch::Tensor labels, std::int64_t num_classes)
    : images_(std::move(images)), labels_(std::move(labels)), num_classes_(num_classes) {
  if (images_.dim() != 4 || images_.size(1) != 3 || images_.scalar_type() != torch::kByte) {
    throw DatasetError("TensorDataset expects uint8 images [N,3,H,W]");
  }
  labels_ = labels_.to(torch::kLong).contiguous();
  if (labels_.dim() != 1 || labels_.size(0) != images_.size(0)) {
    throw DatasetError("TensorDataset: label count does not match image count");
  }
  if (labels_.numel() > 0 && (labels_.min().item<std::int64_t>() < 0 ||
                              labels_.max().item<std::int64_t>() >= num_classes_)) {
    throw DatasetError("TensorDataset: label outside [0, num_classes)");
  }
}

torch::Tensor TensorDataset::image(std::int64_t index) const {
  if (index < 0 || index >= size()) throw DatasetError("image index out of range");
  return images_[index];
}

std::int64_t TensorDataset::label(std::int64_t index) const {
  if (index < 0 || index >= size()) throw DatasetError("label index out of range");
  return labels_.data_ptr<std::int64_t>()[index];
}

ImageFolderDataset::ImageFolderDataset(const fs::path& root) {
  if (!fs::is_directory(root)) throw DatasetError("image folder " + root.string() + " does not exist");
  for (const auto& entry : fs::directory_iterator(root)) {
    if (entry.is_directory()) classes_.push_back(entry.path().filename().string());
  }
  std::sort(classes_.begin(), classes_.end());
  if (classes_.empty()) throw DatasetError("image folder " + root.string() + " has no class directories");
  for (std::size_t c = 0; c < classes_.size(); ++c) {
    std::vector<fs::path> class_files;
    for (const auto& entry : fs::directory_iterator(root / classes_[c])) {
      if (entry.is_regular_file()) class_files.push_back(entry.path());
    }
    std::sort(class_files.begin(), class_files.end());
    for (auto& f : class_files) {
      if (!cv::haveImageReader(f.string())) {
        log::warn("skipping undecodable file ", f.string());
        continue;
      }
      files_.push_back(f);
      labels_.push_back(static_cast<std::int64_t>(c));
    }
  }
  if (files_.empty()) throw DatasetError("image folder " + root.string() + " contains no decodable images");
}

torch::Tensor ImageFolderDataset::image(std::int64_t index) const {
  if (index < 0 || index >= size()) throw DatasetError("image index out of range");
  const auto& file = files_[static_cast<std::size_t>(index)];
  cv::Mat bgr = cv::imread(file.string(), cv::IMREAD_COLOR);
  if (bgr.empty()) throw DatasetError("failed to decode " + file.string());
  auto hwc = torch::from_blob(bgr.data, {bgr.rows, bgr.cols, 3}, torch::kByte).clone();
  // BGR -> RGB, HWC -> CHW.
  return hwc.flip({2}).permute({2, 0, 1}).contiguous();
}

std::int64_t ImageFolderDataset::label(std::int64_t index) const {
  if (index < 0 || index >= size()) throw DatasetError("label index out of range");
  return labels_[static_cast<std::size_t>(index)];
}

SubsetDataset::SubsetDataset(std::shared_ptr<const Dataset> base, std::vector<std::int64_t> indices)
    : base_(std::move(base)), indices_(std::move(indices)) {
  for (auto i : indices_) {
    if (i < 0 || i >= base_->size()) throw DatasetError("subset index out of range");
  }
}

torch::Tensor SubsetDataset::image(std::int64_t index) const {
  if (index < 0 || index >= size()) throw DatasetError("image index out of range");
  return base_->image(indices_[static_cast<std::size_t>(index)]);
}

std::int64_t SubsetDataset::label(std::int64_t index) const {
  if (index < 0 || index >= size()) throw DatasetError("label index out of range");
  return base_->label(indices_[static_cast<std::size_t>(index)]);
}

bool looks_like_cifar10(const fs::path& dir) {
  return fs::is_regular_file(dir / "data_batch_1.bin") && fs::is_regular_file(dir / "test_batch.bin");
}

std::shared_ptr<TensorDataset> load_cifar10(const fs::path& dir, Split split) {
  std::vector<fs::path> files;
  if (split == Split::train) {
    for (int b = 1; b <= 5; ++b) {
      auto f = dir / ("data_batch_" + std::to_string(b) + ".bin");
      if (fs::exists(f)) files.push_back(f);
    }
  } else {
    files.push_back(dir / "test_batch.bin");
  }
  if (files.empty() || !fs::exists(files.front())) {
    throw DatasetError("no CIFAR-10 binary batches under " + dir.string());
  }
  std::vector<std::uint8_t> pixels;
  std::vector<std::int64_t> labels;
  for (const auto& f : files) append_cifar_file(f, pixels, labels);
  const auto n = static_cast<std::int64_t>(labels.size());
  auto images = torch::from_blob(pixels.data(), {n, 3, kCifarSide, kCifarSide}, torch::kByte).clone();
  auto label_t = torch::tensor(labels, torch::kLong);
  return std::make_shared<TensorDataset>(images, label_t, 10);
}

void write_cifar10_batch(const fs::path& file, const TensorDataset& data) {
  if (data.images().size(2) != kCifarSide || data.images().size(3) != kCifarSide) {
    throw DatasetError("CIFAR-10 batches hold 32x32 images only");
  }
  if (data.num_classes() > 256) throw DatasetError("CIFAR-10 labels are single bytes");
  std::ofstream out(file, std::ios::binary);
  if (!out) throw DatasetError("cannot write " + file.string());
  auto images = data.images().contiguous();
  const auto* px = images.data_ptr<std::uint8_t>();
  for (std::int64_t i = 0; i < data.size(); ++i) {
    const auto label = static_cast<char>(data.label(i));
    out.put(label);
    out.write(reinterpret_cast<const char*>(px + i * kCifarPixels), kCifarPixels);
  }
  if (!out) throw DatasetError("short write to " + file.string());
}

std::shared_ptr<TensorDataset> make_synthetic_dataset(std::int64_t count, std::int64_t num_classes,
                                                      std::int64_t image_size, std::uint64_t seed) {
  if (count < 1 || num_classes < 1 || num_classes > 10 || image_size < 4) {
    throw ConfigError("synthetic dataset needs count >= 1, 1..10 classes and image_size >= 4");
  }
  auto images = torch::empty({count, 3, image_size, image_size}, torch::kByte);
  auto labels = torch::empty({count}, torch::kLong);
  auto* px = images.data_ptr<std::uint8_t>();
  auto* lb = labels.data_ptr<std::int64_t>();
  const auto plane = image_size * image_size;
  for (std::int64_t n = 0; n < count; ++n) {
    auto rng = Rng::derive({seed, static_cast<std::uint64_t>(n), 0x5157});
    const auto cls = static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(num_classes)));
    lb[n] = cls;
    // Class-tinted foreground colour, random background colour and texture.
    const double hue = (static_cast<double>(cls) + rng.uniform(-0.15, 0.15)) / 10.0;
    std::array<double, 3> fg{};
    for (int c = 0; c < 3; ++c) {
      fg[c] = 0.55 + 0.4 * std::cos(2.0 * M_PI * (hue + c / 3.0));
    }
    std::array<double, 3> bg{rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.9)};
    std::array<double, 6> phase{};
    for (auto& p : phase) p = rng.uniform(0.05, 0.6);
    const double scale = rng.uniform(0.3, 0.48) * image_size;
    const double cx = rng.uniform(scale, image_size - scale);
    const double cy = rng.uniform(scale, image_size - scale);
    const double angle = rng.uniform(-0.3, 0.3);
    const double ca = std::cos(angle), sa = std::sin(angle);
    for (std::int64_t y = 0; y < image_size; ++y) {
      for (std::int64_t x = 0; x < image_size; ++x) {
        const double dx = (x + 0.5 - cx) / scale, dy = (y + 0.5 - cy) / scale;
        const double u = ca * dx + sa * dy, v = -sa * dx + ca * dy;
        const bool fore = std::abs(u) <= 1.0 && std::abs(v) <= 1.0 && inside_shape(cls, u, v);
        const float tex = smooth_noise(static_cast<double>(x), static_cast<double>(y), phase);
        for (int c = 0; c < 3; ++c) {
          double val = fore ? fg[c] : bg[c] * (0.6 + 0.4 * tex);
          val += rng.uniform(-0.06, 0.06);
          val = std::clamp(val, 0.0, 1.0);
          px[n * 3 * plane + c * plane + y * image_size + x] = static_cast<std::uint8_t>(std::lround(val * 255.0));
        }
      }
    }
  }
  return std::make_shared<TensorDataset>(images, labels, num_classes);
}

void write_synthetic_cifar10(const fs::path& dir, std::int64_t train_count, std::int64_t test_count,
                             std::uint64_t seed) {
  if (train_count < 5 || test_count < 1) throw ConfigError("synthetic CIFAR needs >= 5 train and >= 1 test images");
  fs::create_directories(dir);
  auto train = make_synthetic_dataset(train_count, 10, kCifarSide, seed);
  auto test = make_synthetic_dataset(test_count, 10, kCifarSide, seed ^ 0x7e57ULL);
  const auto per_batch = (train_count + 4) / 5;
  for (int b = 0; b < 5; ++b) {
    const auto lo = std::min<std::int64_t>(train_count, b * per_batch);
    const auto hi = std::min<std::int64_t>(train_count, lo + per_batch);
    TensorDataset part(train->images().slice(0, lo, hi), train->label_tensor().slice(0, lo, hi), 10);
    write_cifar10_batch(dir / ("data_batch_" + std::to_string(b + 1) + ".bin"), part);
  }
  write_cifar10_batch(dir / "test_batch.bin", *test);
  std::ofstream(dir / "batches.meta.txt") << "shape_0\nshape_1\nshape_2\nshape_3\nshape_4\n"
                                             "shape_5\nshape_6\nshape_7\nshape_8\nshape_9\n";
}

std::vector<std::int64_t> random_subset(std::int64_t population, std::int64_t count, std::uint64_t seed) {
  std::vector<std::int64_t> idx(static_cast<std::size_t>(population));
  std::iota(idx.begin(), idx.end(), 0);
  if (count <= 0 || count >= population) return idx;
  auto rng = Rng::derive({seed, static_cast<std::uint64_t>(Stream::subset)});
  // Partial Fisher-Yates.
  for (std::int64_t i = 0; i < count; ++i) {
    const auto j = i + static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(population - i)));
    std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(j)]);
  }
  idx.resize(static_cast<std::size_t>(count));
  std::sort(idx.begin(), idx.end());
  return idx;
}

DataSplits open_dataset(const fs::path& root, std::int64_t train_subset, std::int64_t test_subset,
                        std::uint64_t seed) {
  if (!fs::is_directory(root)) throw DatasetError("dataset directory " + root.string() + " does not exist");
  DataSplits out;
  std::shared_ptr<const Dataset> train, test;
  if (looks_like_cifar10(root)) {
    train = load_cifar10(root, Split::train);
    test = load_cifar10(root, Split::test);
    out.kind = "cifar10";
  } else if (fs::is_directory(root / "train") && fs::is_directory(root / "val")) {
    train = std::make_shared<ImageFolderDataset>(root / "train");
    test = std::make_shared<ImageFolderDataset>(root / "val");
    out.kind = "imagefolder";
  } else {
    throw DatasetError("unrecognised dataset layout at " + root.string() +
                       " (expected CIFAR-10 binary batches or train/ and val/ folders)");
  }
  if (train_subset > 0 && train_subset < train->size()) {
    train = std::make_shared<SubsetDataset>(train, random_subset(train->size(), train_subset, seed));
  }
  if (test_subset > 0 && test_subset < test->size()) {
    test = std::make_shared<SubsetDataset>(test, random_subset(test->size(), test_subset, seed + 1));
  }
  out.train = std::move(train);
  out.test = std::move(test);
  return out;
}

}  // namespace sslattn
