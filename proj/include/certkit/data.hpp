#pragma once

// Datasets held in memory as one flattened row per sample in [0, 1].

#include "certkit/types.hpp"

#include <cstdint>
#include <random>
#include <string>

namespace certkit {

struct Dataset {
    std::string name;
    Shape shape;
    Index num_classes = 10;
    Mat<double> images;  // N x C*H*W
    Labels labels;

    Index size() const { return images.rows(); }
    bool empty() const { return images.rows() == 0; }

    Dataset select(const std::vector<Index>& indices) const;
    /// Selected rows cast to T.
    template <class T>
    Mat<T> batch(const std::vector<Index>& indices) const;
};

/// IDX image/label pair (MNIST layout); pixels scaled by 1/255.
Dataset load_mnist_idx(const std::string& images_path, const std::string& labels_path);

/// CIFAR-10 binary batches: 1 label byte then 3072 pixel bytes per record.
Dataset load_cifar_binary(const std::vector<std::string>& paths);

/// `count` samples drawn without replacement by seed, kept in ascending index
/// order; count < 0 or >= size keeps everything.
Dataset subset(const Dataset& data, Index count, std::uint64_t seed);

enum class Corruption { gaussian_noise, brightness, contrast, stripe, pixel_shuffle };

const char* to_string(Corruption c);
Corruption corruption_from_string(const std::string& name);
std::vector<Corruption> all_corruptions();

/// Deterministic per-sample transform clipped to [0, 1]; severity in [0, 1].
Dataset corrupt(const Dataset& data, Corruption kind, double severity, std::uint64_t seed);

/// Random crop after zero padding plus horizontal flip, per sample.
template <class T>
void augment_crop_flip(Mat<T>& batch, Shape shape, Index pad, std::mt19937_64& gen);

/// Per-channel mean and standard deviation over the dataset.
void channel_moments(const Dataset& data, std::vector<double>& mean, std::vector<double>& std);

}  // namespace certkit
