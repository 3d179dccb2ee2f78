#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "sca/nn.hpp"
#include "sca/tensor.hpp"

namespace sca {

// A dataset with its attack-relevant metadata. For image datasets `x` holds
// the train arm followed by the test arm; `source_train` marks the boundary.
// Pixels are stored in [0, 1] (raw bytes divided by 255).
struct Dataset {
    std::string name;
    Tensor x; // n x d
    std::vector<int> y;
    int n_classes = 0;
    double lo = 0.0, hi = 1.0;                  // valid input range for attacks
    double norm_offset = 0.5, norm_scale = 0.5; // model input normalization
    std::size_t source_train = 0;               // rows [0, source_train) are the train arm
    std::vector<std::size_t> train_idx, val_idx, test_idx;
    std::string provenance;

    Tensor gather_x(const std::vector<std::size_t>& idx) const;
    std::vector<int> gather_y(const std::vector<std::size_t>& idx) const;
    DataSplit train_val_split() const; // materializes train/val for train()
    Tensor test_x() const;
    std::vector<int> test_y() const;
    void validate() const;
};

// ---- IDX container handling ----

// Parsed IDX array: big-endian magic + dims, then the raw byte payload.
struct IdxArray {
    std::uint32_t magic = 0;
    std::vector<std::size_t> dims;
    std::vector<unsigned char> bytes;
};

inline constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;

// Parses an in-memory IDX file (already decompressed); `what` names the file
// in error messages.
IdxArray parse_idx(const std::string& raw, const std::string& what);

// Reads a file, transparently gunzipping when it starts with the gzip magic.
std::string read_file_maybe_gz(const std::string& path);

// Decompresses a gzip/zlib stream from memory; returns the input unchanged
// when it is not compressed.
std::string gunzip_bytes(const std::string& bytes);

// Loads one images/labels IDX pair into a [n, rows*cols] tensor in [0,1] and
// an int label vector; validates magics, dimensions, and that the example
// counts of the two files agree.
void load_idx_pair(const std::string& images_path, const std::string& labels_path, Tensor* x_out,
                   std::vector<int>* y_out);

// Loads the four canonical IDX files of `name` ("mnist" or "fmnist") from
// <data_dir>/<name>/, accepting .gz variants, and validates the official
// 60000/10000 arm sizes. The result has no train/val split yet.
Dataset load_image_dataset(const std::string& name, const std::string& data_dir);

// Draws `train_n` training and `val_n` validation indices from the train arm
// by a seeded shuffle; test indices cover the whole test arm.
void split_dataset(Dataset& ds, std::uint64_t seed, std::size_t train_n = 45000,
                   std::size_t val_n = 5000);

// Synthetic k-class Gaussian blobs (unit variance) in d dimensions with the
// class centers `margin` apart; k = 2 places them at -margin/2 and +margin/2
// on the first axis. Labels are balanced. Comes pre-split 70/15/15.
Dataset make_blobs(std::size_t n, std::size_t dim, int k, double margin, std::uint64_t seed);

// Builds the dataset selected by a config "dataset" value: "mnist"/"fmnist"
// load from data_dir, "blobs" synthesizes (options taken from `blob_*`).
Dataset load_dataset_by_name(const std::string& name, const std::string& data_dir,
                             std::size_t blob_n = 4000, std::size_t blob_dim = 20,
                             int blob_k = 2, double blob_margin = 3.0,
                             std::uint64_t blob_seed = 0);

// ---- downloading / verification ----

struct RemoteFile {
    std::string filename; // decompressed name on disk
    std::string url_path; // path on the host (usually the .gz)
    std::string sha256;   // pinned digest of the decompressed payload; empty = unpinned
    bool images = false;  // expected IDX kind
    std::size_t count = 0; // expected leading dimension
};

struct DataSource {
    std::string dataset;
    std::string host;
    bool tls = true;
    std::vector<RemoteFile> files;
};

const std::vector<DataSource>& known_sources();

struct FetchResult {
    std::vector<std::string> files;
    std::vector<std::string> notes;
    bool all_digests_pinned = true;
};

// Ensures the four files of `name` exist under <data_dir>/<name>/, verified.
// Existing files are verified in place; otherwise .gz siblings are
// decompressed; otherwise (unless `offline`) the file is downloaded. Files
// with a pinned digest must match it exactly; unpinned files get structural
// IDX validation and a provenance note.
FetchResult fetch_dataset(const std::string& name, const std::string& data_dir,
                          bool offline = false);

// $SCA_DATA_DIR if set, else ~/.cache/sca/data.
std::string default_data_dir();

std::string sha256_hex(const std::string& bytes);

} // namespace sca
