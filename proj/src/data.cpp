#include "certkit/data.hpp"

#include "certkit/attacks.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>

namespace certkit {

Dataset Dataset::select(const std::vector<Index>& indices) const {
    Dataset out;
    out.name = name;
    out.shape = shape;
    out.num_classes = num_classes;
    out.images.resize(static_cast<Index>(indices.size()), images.cols());
    out.labels.resize(indices.size());
    for (std::size_t i = 0; i < indices.size(); ++i) {
        out.images.row(static_cast<Index>(i)) = images.row(indices[i]);
        out.labels[i] = labels[static_cast<std::size_t>(indices[i])];
    }
    return out;
}

template <class T>
Mat<T> Dataset::batch(const std::vector<Index>& indices) const {
    Mat<T> out(static_cast<Index>(indices.size()), images.cols());
    for (std::size_t i = 0; i < indices.size(); ++i) out.row(static_cast<Index>(i)) = images.row(indices[i]).cast<T>();
    return out;
}

template Mat<float> Dataset::batch<float>(const std::vector<Index>&) const;
template Mat<double> Dataset::batch<double>(const std::vector<Index>&) const;

namespace {

std::vector<unsigned char> read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("io_error", "cannot open " + path);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t be32(const std::vector<unsigned char>& b, std::size_t at) {
    return (std::uint32_t(b[at]) << 24) | (std::uint32_t(b[at + 1]) << 16) | (std::uint32_t(b[at + 2]) << 8) |
           std::uint32_t(b[at + 3]);
}

}  // namespace

Dataset load_mnist_idx(const std::string& images_path, const std::string& labels_path) {
    const auto img = read_file(images_path);
    const auto lab = read_file(labels_path);
    if (img.size() < 16 || be32(img, 0) != 0x00000803) throw Error("bad_magic", images_path + ": not an IDX image file");
    if (lab.size() < 8 || be32(lab, 0) != 0x00000801) throw Error("bad_magic", labels_path + ": not an IDX label file");
    const std::size_t n = be32(img, 4), rows = be32(img, 8), cols = be32(img, 12);
    if (be32(lab, 4) != n) throw Error("count_mismatch", "image and label counts differ");
    if (img.size() < 16 + n * rows * cols) throw Error("truncated", images_path + " is truncated");
    if (lab.size() < 8 + n) throw Error("truncated", labels_path + " is truncated");

    Dataset d;
    d.name = "mnist";
    d.shape = Shape{1, static_cast<Index>(rows), static_cast<Index>(cols)};
    d.images.resize(static_cast<Index>(n), static_cast<Index>(rows * cols));
    d.labels.resize(n);
    const unsigned char* px = img.data() + 16;
    for (Index i = 0; i < d.images.size(); ++i) d.images.data()[i] = px[i] / 255.0;
    for (std::size_t i = 0; i < n; ++i) {
        d.labels[i] = lab[8 + i];
        if (d.labels[i] > 9) throw Error("bad_label", "label out of range in " + labels_path);
    }
    return d;
}

Dataset load_cifar_binary(const std::vector<std::string>& paths) {
    constexpr std::size_t record = 1 + 3072;
    Dataset d;
    d.name = "cifar10";
    d.shape = Shape{3, 32, 32};
    std::vector<std::vector<unsigned char>> files;
    std::size_t total = 0;
    for (const auto& p : paths) {
        files.push_back(read_file(p));
        if (files.back().size() % record != 0) throw Error("truncated", p + " is not a whole number of records");
        total += files.back().size() / record;
    }
    d.images.resize(static_cast<Index>(total), 3072);
    d.labels.resize(total);
    Index row = 0;
    for (const auto& f : files)
        for (std::size_t r = 0; r < f.size() / record; ++r, ++row) {
            const unsigned char* rec = f.data() + r * record;
            if (rec[0] > 9) throw Error("bad_label", "label out of range in CIFAR batch");
            d.labels[static_cast<std::size_t>(row)] = rec[0];
            for (Index j = 0; j < 3072; ++j) d.images(row, j) = rec[1 + j] / 255.0;
        }
    return d;
}

Dataset subset(const Dataset& data, Index count, std::uint64_t seed) {
    if (count < 0 || count >= data.size()) return data;
    std::vector<Index> idx(static_cast<std::size_t>(data.size()));
    std::iota(idx.begin(), idx.end(), Index(0));
    std::mt19937_64 gen(seed);
    std::shuffle(idx.begin(), idx.end(), gen);
    idx.resize(static_cast<std::size_t>(count));
    std::sort(idx.begin(), idx.end());
    return data.select(idx);
}

const char* to_string(Corruption c) {
    switch (c) {
        case Corruption::gaussian_noise: return "gaussian_noise";
        case Corruption::brightness: return "brightness";
        case Corruption::contrast: return "contrast";
        case Corruption::stripe: return "stripe";
        case Corruption::pixel_shuffle: return "pixel_shuffle";
    }
    return "unknown";
}

std::vector<Corruption> all_corruptions() {
    return {Corruption::gaussian_noise, Corruption::brightness, Corruption::contrast, Corruption::stripe,
            Corruption::pixel_shuffle};
}

Corruption corruption_from_string(const std::string& name) {
    for (auto c : all_corruptions())
        if (name == to_string(c)) return c;
    throw Error("bad_corruption", "unknown corruption '" + name + "'");
}

Dataset corrupt(const Dataset& data, Corruption kind, double s, std::uint64_t seed) {
    if (!(s >= 0 && s <= 1)) throw Error("bad_severity", "severity must lie in [0, 1]");
    Dataset out = data;
    if (s == 0) return out;
    const Index h = data.shape.height, w = data.shape.width, hw = h * w;
    for (Index i = 0; i < out.size(); ++i) {
        auto row = out.images.row(i);
        auto gen = sample_rng(seed, static_cast<std::uint64_t>(i), static_cast<std::uint64_t>(kind));
        switch (kind) {
            case Corruption::gaussian_noise: {
                std::normal_distribution<double> n(0.0, 0.3 * s);
                for (Index j = 0; j < row.size(); ++j) row(j) += n(gen);
                break;
            }
            case Corruption::brightness: row.array() += s; break;
            case Corruption::contrast: {
                const double m = row.mean();
                row = ((row.array() - m) * (1 - s) + m).matrix();
                break;
            }
            case Corruption::stripe:
                // Every fourth row of every channel is pushed toward white.
                for (Index c = 0; c < data.shape.channels; ++c)
                    for (Index y = 0; y < h; y += 4)
                        for (Index x = 0; x < w; ++x) {
                            double& v = row(c * hw + y * w + x);
                            v += s * (1 - v);
                        }
                break;
            case Corruption::pixel_shuffle: {
                const Index swaps = static_cast<Index>(s * static_cast<double>(hw) / 2);
                std::uniform_int_distribution<Index> pick(0, hw - 1);
                for (Index k = 0; k < swaps; ++k) {
                    const Index a = pick(gen), b = pick(gen);
                    for (Index c = 0; c < data.shape.channels; ++c) std::swap(row(c * hw + a), row(c * hw + b));
                }
                break;
            }
        }
        row = row.cwiseMax(0.0).cwiseMin(1.0);
    }
    return out;
}

template <class T>
void augment_crop_flip(Mat<T>& batch, Shape shape, Index pad, std::mt19937_64& gen) {
    const Index h = shape.height, w = shape.width, hw = h * w;
    std::uniform_int_distribution<Index> shift(-pad, pad);
    std::bernoulli_distribution flip(0.5);
    Mat<T> src;
    for (Index i = 0; i < batch.rows(); ++i) {
        const Index dy = shift(gen), dx = shift(gen);
        const bool f = flip(gen);
        src = batch.row(i);
        for (Index c = 0; c < shape.channels; ++c)
            for (Index y = 0; y < h; ++y)
                for (Index x = 0; x < w; ++x) {
                    const Index sy = y + dy, sx0 = x + dx;
                    const Index sx = f ? w - 1 - sx0 : sx0;
                    const bool inside = sy >= 0 && sy < h && sx0 >= 0 && sx0 < w;
                    batch(i, c * hw + y * w + x) = inside ? src(0, c * hw + sy * w + sx) : T(0);
                }
    }
}

template void augment_crop_flip<float>(Mat<float>&, Shape, Index, std::mt19937_64&);
template void augment_crop_flip<double>(Mat<double>&, Shape, Index, std::mt19937_64&);

void channel_moments(const Dataset& data, std::vector<double>& mean, std::vector<double>& std) {
    const Index c = data.shape.channels, hw = data.shape.spatial();
    mean.assign(static_cast<std::size_t>(c), 0.0);
    std.assign(static_cast<std::size_t>(c), 1.0);
    if (data.empty()) return;
    for (Index k = 0; k < c; ++k) {
        const auto block = data.images.middleCols(k * hw, hw);
        const double m = block.mean();
        const double v = (block.array() - m).square().mean();
        mean[static_cast<std::size_t>(k)] = m;
        std[static_cast<std::size_t>(k)] = v > 0 ? std::sqrt(v) : 1.0;
    }
}

}  // namespace certkit
