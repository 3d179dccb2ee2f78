#include <cstdint>
#include <cstring>
#include <fstream>

#include "sca/nn.hpp"

namespace sca {

namespace {

constexpr char kMagic[8] = {'S', 'C', 'A', 'C', 'K', 'P', 'T', '1'};

void write_u64(std::ostream& os, std::uint64_t v) {
    unsigned char buf[8];
    for (int i = 0; i < 8; ++i) buf[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xFF);
    os.write(reinterpret_cast<const char*>(buf), 8);
}

std::uint64_t read_u64(std::istream& is) {
    unsigned char buf[8];
    is.read(reinterpret_cast<char*>(buf), 8);
    if (!is) throw DataError("checkpoint: truncated file while reading length field");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
    return v;
}

} // namespace

void save_checkpoint(const std::string& path, const Model& model, const nlohmann::json& metadata) {
    nlohmann::json header = {
        {"format_version", 1}, {"model", model.describe()}, {"metadata", metadata}};
    const std::string header_text = header.dump();

    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw DataError("checkpoint: cannot open '" + path + "' for writing");
    os.write(kMagic, sizeof(kMagic));
    write_u64(os, header_text.size());
    os.write(header_text.data(), static_cast<std::streamsize>(header_text.size()));

    auto& mutable_model = const_cast<Model&>(model);
    auto params = mutable_model.params();
    write_u64(os, params.size());
    for (Tensor* p : params) {
        const Shape& shape = p->shape();
        write_u64(os, shape.size());
        for (std::size_t d : shape) write_u64(os, d);
        // Little-endian float64 payload; this artifact targets little-endian
        // hosts and the loader re-reads with the same convention.
        os.write(reinterpret_cast<const char*>(p->data()),
                 static_cast<std::streamsize>(p->size() * sizeof(double)));
    }
    if (!os) throw DataError("checkpoint: write to '" + path + "' failed");
}

LoadedModel load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("checkpoint: cannot open '" + path + "'");
    char magic[8];
    is.read(magic, sizeof(magic));
    if (!is || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
        throw DataError("checkpoint: '" + path + "' is not a checkpoint file");
    }
    const std::uint64_t header_len = read_u64(is);
    std::string header_text(header_len, '\0');
    is.read(header_text.data(), static_cast<std::streamsize>(header_len));
    if (!is) throw DataError("checkpoint: truncated header in '" + path + "'");

    nlohmann::json header;
    try {
        header = nlohmann::json::parse(header_text);
    } catch (const nlohmann::json::exception& e) {
        throw DataError("checkpoint: invalid header in '" + path + "': " + e.what());
    }
    if (header.value("format_version", 0) != 1) {
        throw DataError("checkpoint: unsupported format version in '" + path + "'");
    }

    LoadedModel out{Model::from_json(header.at("model")), header.value("metadata", nlohmann::json::object())};
    auto params = out.model.params();
    const std::uint64_t n_tensors = read_u64(is);
    if (n_tensors != params.size()) {
        throw DataError("checkpoint: '" + path + "' holds " + std::to_string(n_tensors) +
                        " tensors but the architecture expects " + std::to_string(params.size()));
    }
    for (Tensor* p : params) {
        const std::uint64_t rank = read_u64(is);
        Shape shape(rank);
        for (std::uint64_t i = 0; i < rank; ++i) shape[i] = read_u64(is);
        if (shape != p->shape()) {
            throw DataError("checkpoint: tensor shape " + shape_str(shape) +
                            " does not match architecture shape " + shape_str(p->shape()));
        }
        is.read(reinterpret_cast<char*>(p->data()),
                static_cast<std::streamsize>(p->size() * sizeof(double)));
        if (!is) throw DataError("checkpoint: truncated tensor payload in '" + path + "'");
    }
    return out;
}

} // namespace sca
