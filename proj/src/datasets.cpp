#include "sca/datasets.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>

#include "sca/rng.hpp"

namespace sca {

namespace fs = std::filesystem;

// ---- Dataset ----

Tensor Dataset::gather_x(const std::vector<std::size_t>& idx) const {
    const std::size_t d = x.cols();
    Tensor out(Shape{idx.size(), d});
    for (std::size_t i = 0; i < idx.size(); ++i) {
        if (idx[i] >= x.rows()) throw ValueError("Dataset::gather_x: index out of range");
        std::copy(x.data() + idx[i] * d, x.data() + (idx[i] + 1) * d, out.data() + i * d);
    }
    return out;
}

std::vector<int> Dataset::gather_y(const std::vector<std::size_t>& idx) const {
    std::vector<int> out(idx.size());
    for (std::size_t i = 0; i < idx.size(); ++i) {
        if (idx[i] >= y.size()) throw ValueError("Dataset::gather_y: index out of range");
        out[i] = y[idx[i]];
    }
    return out;
}

DataSplit Dataset::train_val_split() const {
    if (train_idx.empty() || val_idx.empty()) {
        throw ValueError("Dataset: no train/val split present; call split_dataset first");
    }
    DataSplit split;
    split.train_x = gather_x(train_idx);
    split.train_y = gather_y(train_idx);
    split.val_x = gather_x(val_idx);
    split.val_y = gather_y(val_idx);
    return split;
}

Tensor Dataset::test_x() const {
    if (test_idx.empty()) throw ValueError("Dataset: no test indices present");
    return gather_x(test_idx);
}

std::vector<int> Dataset::test_y() const {
    if (test_idx.empty()) throw ValueError("Dataset: no test indices present");
    return gather_y(test_idx);
}

void Dataset::validate() const {
    if (x.rank() != 2 || x.rows() == 0 || x.rows() != y.size()) {
        throw DataError("Dataset '" + name + "': inputs and labels are inconsistent");
    }
    if (n_classes < 2) throw DataError("Dataset '" + name + "': needs at least 2 classes");
    for (std::size_t i = 0; i < y.size(); ++i) {
        if (y[i] < 0 || y[i] >= n_classes) {
            throw DataError("Dataset '" + name + "': label " + std::to_string(y[i]) +
                            " outside [0, " + std::to_string(n_classes) + ") at row " +
                            std::to_string(i));
        }
    }
}

// ---- gzip / IDX ----

std::string gunzip_bytes(const std::string& bytes) {
    const bool is_gzip =
        bytes.size() >= 2 && static_cast<unsigned char>(bytes[0]) == 0x1F &&
        static_cast<unsigned char>(bytes[1]) == 0x8B;
    if (!is_gzip) return bytes;

    z_stream zs;
    std::memset(&zs, 0, sizeof(zs));
    // 15 + 32: accept both zlib and gzip framing with automatic detection.
    if (inflateInit2(&zs, 15 + 32) != Z_OK) throw DataError("gunzip: inflateInit failed");
    zs.next_in = reinterpret_cast<Bytef*>(const_cast<char*>(bytes.data()));
    zs.avail_in = static_cast<uInt>(bytes.size());

    std::string out;
    char buf[1 << 16];
    int rc = Z_OK;
    do {
        zs.next_out = reinterpret_cast<Bytef*>(buf);
        zs.avail_out = sizeof(buf);
        rc = inflate(&zs, Z_NO_FLUSH);
        if (rc != Z_OK && rc != Z_STREAM_END) {
            inflateEnd(&zs);
            throw DataError("gunzip: corrupt compressed stream (zlib error " +
                            std::to_string(rc) + ")");
        }
        out.append(buf, sizeof(buf) - zs.avail_out);
    } while (rc != Z_STREAM_END);
    inflateEnd(&zs);
    return out;
}

std::string read_file_maybe_gz(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open '" + path + "'");
    std::string bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    return gunzip_bytes(bytes);
}

IdxArray parse_idx(const std::string& raw, const std::string& what) {
    auto need = [&](std::size_t n, const char* part) {
        if (raw.size() < n) {
            throw DataError(what + ": truncated IDX file (while reading " + part + ")");
        }
    };
    auto read_u32 = [&](std::size_t off) {
        return (static_cast<std::uint32_t>(static_cast<unsigned char>(raw[off])) << 24) |
               (static_cast<std::uint32_t>(static_cast<unsigned char>(raw[off + 1])) << 16) |
               (static_cast<std::uint32_t>(static_cast<unsigned char>(raw[off + 2])) << 8) |
               static_cast<std::uint32_t>(static_cast<unsigned char>(raw[off + 3]));
    };

    need(4, "magic");
    IdxArray out;
    out.magic = read_u32(0);
    if (out.magic != kIdxImagesMagic && out.magic != kIdxLabelsMagic) {
        throw DataError(what + ": unexpected IDX magic 0x" + [&] {
            char buf[16];
            std::snprintf(buf, sizeof(buf), "%08x", out.magic);
            return std::string(buf);
        }());
    }
    const std::size_t ndims = out.magic == kIdxImagesMagic ? 3 : 1;
    need(4 + 4 * ndims, "dimensions");
    std::size_t total = 1;
    for (std::size_t i = 0; i < ndims; ++i) {
        out.dims.push_back(read_u32(4 + 4 * i));
        total *= out.dims.back();
    }
    if (total == 0) throw DataError(what + ": IDX file declares an empty array");
    if (raw.size() != 4 + 4 * ndims + total) {
        throw DataError(what + ": IDX payload has " + std::to_string(raw.size() - 4 - 4 * ndims) +
                        " bytes but the header declares " + std::to_string(total));
    }
    out.bytes.assign(raw.begin() + static_cast<std::ptrdiff_t>(4 + 4 * ndims), raw.end());
    return out;
}

void load_idx_pair(const std::string& images_path, const std::string& labels_path, Tensor* x_out,
                   std::vector<int>* y_out) {
    IdxArray images = parse_idx(read_file_maybe_gz(images_path), images_path);
    IdxArray labels = parse_idx(read_file_maybe_gz(labels_path), labels_path);
    if (images.magic != kIdxImagesMagic) {
        throw DataError(images_path + ": not an IDX image file");
    }
    if (labels.magic != kIdxLabelsMagic) {
        throw DataError(labels_path + ": not an IDX label file");
    }
    if (images.dims[0] != labels.dims[0]) {
        throw DataError("IDX pair mismatch: " + std::to_string(images.dims[0]) + " images vs " +
                        std::to_string(labels.dims[0]) + " labels");
    }
    const std::size_t n = images.dims[0];
    const std::size_t d = images.dims[1] * images.dims[2];
    Tensor x(Shape{n, d});
    for (std::size_t i = 0; i < n * d; ++i) {
        x.at(i) = static_cast<double>(images.bytes[i]) / 255.0;
    }
    std::vector<int> y(n);
    for (std::size_t i = 0; i < n; ++i) y[i] = static_cast<int>(labels.bytes[i]);
    *x_out = std::move(x);
    *y_out = std::move(y);
}

namespace {

std::string find_idx_file(const fs::path& dir, const std::string& base) {
    const fs::path plain = dir / base;
    if (fs::exists(plain)) return plain.string();
    const fs::path gz = dir / (base + ".gz");
    if (fs::exists(gz)) return gz.string();
    throw DataError("dataset file '" + plain.string() +
                    "' not found (nor a .gz variant); run the fetch-data command first");
}

} // namespace

Dataset load_image_dataset(const std::string& name, const std::string& data_dir) {
    if (name != "mnist" && name != "fmnist") {
        throw DataError("load_image_dataset: unknown dataset '" + name + "'");
    }
    const fs::path dir = fs::path(data_dir) / name;

    Tensor train_x, test_x;
    std::vector<int> train_y, test_y;
    load_idx_pair(find_idx_file(dir, "train-images-idx3-ubyte"),
                  find_idx_file(dir, "train-labels-idx1-ubyte"), &train_x, &train_y);
    load_idx_pair(find_idx_file(dir, "t10k-images-idx3-ubyte"),
                  find_idx_file(dir, "t10k-labels-idx1-ubyte"), &test_x, &test_y);

    if (train_x.rows() != 60000 || test_x.rows() != 10000) {
        throw DataError(name + ": expected the official 60000/10000 example arms, got " +
                        std::to_string(train_x.rows()) + "/" + std::to_string(test_x.rows()));
    }
    if (train_x.cols() != test_x.cols()) {
        throw DataError(name + ": train and test image dimensions disagree");
    }

    Dataset ds;
    ds.name = name;
    ds.source_train = train_x.rows();
    const std::size_t d = train_x.cols();
    ds.x = Tensor(Shape{train_x.rows() + test_x.rows(), d});
    std::copy(train_x.data(), train_x.data() + train_x.size(), ds.x.data());
    std::copy(test_x.data(), test_x.data() + test_x.size(), ds.x.data() + train_x.size());
    ds.y = std::move(train_y);
    ds.y.insert(ds.y.end(), test_y.begin(), test_y.end());
    ds.n_classes = 10;
    ds.lo = 0.0;
    ds.hi = 1.0;
    ds.norm_offset = 0.5;
    ds.norm_scale = 0.5;
    ds.provenance = name + " IDX files from " + dir.string();
    ds.validate();
    return ds;
}

void split_dataset(Dataset& ds, std::uint64_t seed, std::size_t train_n, std::size_t val_n) {
    if (ds.source_train == 0) {
        throw ValueError("split_dataset: dataset has no train arm to split");
    }
    if (train_n == 0 || val_n == 0 || train_n + val_n > ds.source_train) {
        throw ValueError("split_dataset: requested " + std::to_string(train_n) + "+" +
                         std::to_string(val_n) + " examples from a train arm of " +
                         std::to_string(ds.source_train));
    }
    Rng rng(derive_seed(seed, 2));
    std::vector<std::size_t> perm = rng.permutation(ds.source_train);
    ds.train_idx.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(train_n));
    ds.val_idx.assign(perm.begin() + static_cast<std::ptrdiff_t>(train_n),
                      perm.begin() + static_cast<std::ptrdiff_t>(train_n + val_n));
    ds.test_idx.resize(ds.x.rows() - ds.source_train);
    for (std::size_t i = 0; i < ds.test_idx.size(); ++i) {
        ds.test_idx[i] = ds.source_train + i;
    }
}

Dataset make_blobs(std::size_t n, std::size_t dim, int k, double margin, std::uint64_t seed) {
    if (k < 2) throw ValueError("make_blobs: need at least 2 classes");
    if (dim == 0) throw ValueError("make_blobs: dimension must be positive");
    if (k > 2 && static_cast<std::size_t>(k) > dim) {
        throw ValueError("make_blobs: need dim >= k to place " + std::to_string(k) +
                         " centers " + std::to_string(margin) + " apart");
    }
    if (n < static_cast<std::size_t>(3 * k)) {
        throw ValueError("make_blobs: need at least 3 examples per class");
    }
    if (!(margin >= 0.0)) throw ValueError("make_blobs: margin must be non-negative");

    // Class centers: k = 2 sits at -margin/2 and +margin/2 on axis 0; larger k
    // uses margin/sqrt(2) along distinct axes (pairwise distance = margin).
    std::vector<std::vector<double>> centers(static_cast<std::size_t>(k),
                                             std::vector<double>(dim, 0.0));
    if (k == 2) {
        centers[0][0] = -margin / 2.0;
        centers[1][0] = margin / 2.0;
    } else {
        for (int c = 0; c < k; ++c) {
            centers[static_cast<std::size_t>(c)][static_cast<std::size_t>(c)] =
                margin / std::sqrt(2.0);
        }
    }

    Rng rng(derive_seed(seed, 3));
    Dataset ds;
    ds.name = "blobs";
    ds.x = Tensor(Shape{n, dim});
    ds.y.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        const int label = static_cast<int>(i % static_cast<std::size_t>(k)); // balanced
        ds.y[i] = label;
        const auto& c = centers[static_cast<std::size_t>(label)];
        for (std::size_t j = 0; j < dim; ++j) {
            ds.x.at2(i, j) = c[j] + rng.normal();
        }
    }
    ds.n_classes = k;
    ds.lo = -std::numeric_limits<double>::infinity();
    ds.hi = std::numeric_limits<double>::infinity();
    ds.norm_offset = 0.0;
    ds.norm_scale = 1.0;
    ds.source_train = n; // the whole set is one arm; the split below partitions it
    ds.provenance = "synthetic blobs n=" + std::to_string(n) + " dim=" + std::to_string(dim) +
                    " k=" + std::to_string(k) + " margin=" + std::to_string(margin) +
                    " seed=" + std::to_string(seed);

    std::vector<std::size_t> perm = rng.permutation(n);
    const std::size_t n_train = (n * 70) / 100;
    const std::size_t n_val = (n * 15) / 100;
    ds.train_idx.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(n_train));
    ds.val_idx.assign(perm.begin() + static_cast<std::ptrdiff_t>(n_train),
                      perm.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
    ds.test_idx.assign(perm.begin() + static_cast<std::ptrdiff_t>(n_train + n_val), perm.end());
    ds.validate();
    return ds;
}

Dataset load_dataset_by_name(const std::string& name, const std::string& data_dir,
                             std::size_t blob_n, std::size_t blob_dim, int blob_k,
                             double blob_margin, std::uint64_t blob_seed) {
    if (name == "blobs") return make_blobs(blob_n, blob_dim, blob_k, blob_margin, blob_seed);
    return load_image_dataset(name, data_dir);
}

} // namespace sca
