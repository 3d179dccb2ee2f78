#include <openssl/evp.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>

#include <httplib.h>

#include "sca/datasets.hpp"

namespace sca {

namespace fs = std::filesystem;

std::string sha256_hex(const std::string& bytes) {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
        throw Error("sha256: digest computation failed");
    }
    static const char* hex = "0123456789abcdef";
    std::string out;
    out.reserve(2 * len);
    for (unsigned int i = 0; i < len; ++i) {
        out.push_back(hex[digest[i] >> 4]);
        out.push_back(hex[digest[i] & 0xF]);
    }
    return out;
}

const std::vector<DataSource>& known_sources() {
    // Digests are SHA-256 of the *decompressed* IDX payloads. The first
    // dataset's digests are pinned to the canonical files; the second
    // publisher provides only MD5 sums upstream, so those entries stay
    // unpinned and rely on structural validation.
    static const std::vector<DataSource> sources = {
        {"mnist",
         "ossci-datasets.s3.amazonaws.com",
         true,
         {
             {"train-images-idx3-ubyte", "/mnist/train-images-idx3-ubyte.gz",
              "ba891046e6505d7aadcbbe25680a0738ad16aec93bde7f9b65e87a2fc25776db", true, 60000},
             {"train-labels-idx1-ubyte", "/mnist/train-labels-idx1-ubyte.gz",
              "65a50cbbf4e906d70832878ad85ccda5333a97f0f4c3dd2ef09a8a9eef7101c5", false, 60000},
             {"t10k-images-idx3-ubyte", "/mnist/t10k-images-idx3-ubyte.gz",
              "0fa7898d509279e482958e8ce81c8e77db3f2f8254e26661ceb7762c4d494ce7", true, 10000},
             {"t10k-labels-idx1-ubyte", "/mnist/t10k-labels-idx1-ubyte.gz",
              "ff7bcfd416de33731a308c3f266cc351222c34898ecbeaf847f06e48f7ec33f2", false, 10000},
         }},
        {"fmnist",
         "fashion-mnist.s3-website.eu-central-1.amazonaws.com",
         false,
         {
             {"train-images-idx3-ubyte", "/train-images-idx3-ubyte.gz", "", true, 60000},
             {"train-labels-idx1-ubyte", "/train-labels-idx1-ubyte.gz", "", false, 60000},
             {"t10k-images-idx3-ubyte", "/t10k-images-idx3-ubyte.gz", "", true, 10000},
             {"t10k-labels-idx1-ubyte", "/t10k-labels-idx1-ubyte.gz", "", false, 10000},
         }},
    };
    return sources;
}

std::string default_data_dir() {
    if (const char* env = std::getenv("SCA_DATA_DIR")) return env;
    if (const char* home = std::getenv("HOME")) {
        return (fs::path(home) / ".cache" / "sca" / "data").string();
    }
    return "data";
}

namespace {

// Structural sanity of a decompressed payload against its catalog entry.
void validate_structure(const std::string& payload, const RemoteFile& file) {
    IdxArray idx = parse_idx(payload, file.filename);
    if (file.images && idx.magic != kIdxImagesMagic) {
        throw DataError(file.filename + ": expected an IDX image file");
    }
    if (!file.images && idx.magic != kIdxLabelsMagic) {
        throw DataError(file.filename + ": expected an IDX label file");
    }
    if (idx.dims[0] != file.count) {
        throw DataError(file.filename + ": expected " + std::to_string(file.count) +
                        " examples, found " + std::to_string(idx.dims[0]));
    }
    if (file.images && (idx.dims[1] != 28 || idx.dims[2] != 28)) {
        throw DataError(file.filename + ": expected 28x28 images");
    }
    if (!file.images) {
        for (unsigned char b : idx.bytes) {
            if (b > 9) throw DataError(file.filename + ": label value outside [0, 9]");
        }
    }
}

void verify_payload(const std::string& payload, const RemoteFile& file, FetchResult* result) {
    validate_structure(payload, file);
    if (file.sha256.empty()) {
        result->all_digests_pinned = false;
        result->notes.push_back(file.filename +
                                ": no upstream sha256 available; structural checks only "
                                "(sha256 of payload: " +
                                sha256_hex(payload) + ")");
        return;
    }
    const std::string actual = sha256_hex(payload);
    if (actual != file.sha256) {
        throw DataError(file.filename + ": sha256 mismatch; expected " + file.sha256 + ", got " +
                        actual);
    }
    result->notes.push_back(file.filename + ": sha256 verified");
}

std::string download(const DataSource& source, const RemoteFile& file) {
    const std::string origin =
        (source.tls ? std::string("https://") : std::string("http://")) + source.host;
    httplib::Client client(origin);
    client.set_connection_timeout(30, 0);
    client.set_read_timeout(300, 0);
    client.set_follow_location(true);
    auto res = client.Get(file.url_path);
    if (!res) {
        throw DataError("download of " + origin + file.url_path + " failed: " +
                        httplib::to_string(res.error()));
    }
    if (res->status != 200) {
        throw DataError("download of " + origin + file.url_path + " failed with HTTP status " +
                        std::to_string(res->status));
    }
    return res->body;
}

} // namespace

FetchResult fetch_dataset(const std::string& name, const std::string& data_dir, bool offline) {
    const DataSource* source = nullptr;
    for (const auto& s : known_sources()) {
        if (s.dataset == name) source = &s;
    }
    if (!source) throw DataError("fetch_dataset: no source catalog entry for '" + name + "'");

    const fs::path dir = fs::path(data_dir) / name;
    fs::create_directories(dir);

    FetchResult result;
    for (const RemoteFile& file : source->files) {
        const fs::path dest = dir / file.filename;
        const fs::path gz = dir / (file.filename + ".gz");
        std::string payload;
        if (fs::exists(dest)) {
            payload = read_file_maybe_gz(dest.string());
            verify_payload(payload, file, &result);
        } else if (fs::exists(gz)) {
            payload = read_file_maybe_gz(gz.string());
            verify_payload(payload, file, &result);
            std::ofstream os(dest, std::ios::binary);
            os.write(payload.data(), static_cast<std::streamsize>(payload.size()));
            if (!os) throw DataError("fetch: cannot write '" + dest.string() + "'");
        } else if (offline) {
            throw DataError("fetch: '" + dest.string() +
                            "' is missing and offline mode forbids downloading");
        } else {
            payload = gunzip_bytes(download(*source, file));
            verify_payload(payload, file, &result);
            std::ofstream os(dest, std::ios::binary);
            os.write(payload.data(), static_cast<std::streamsize>(payload.size()));
            if (!os) throw DataError("fetch: cannot write '" + dest.string() + "'");
            result.notes.push_back(file.filename + ": downloaded from " + source->host);
        }
        result.files.push_back(dest.string());
    }
    return result;
}

} // namespace sca
