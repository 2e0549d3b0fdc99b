#include "certkit/archive.hpp"

#include "json.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace certkit {

static_assert(std::endian::native == std::endian::little, "archives are written little-endian");

Index ArchiveTensor::count() const {
    Index n = 1;
    for (Index d : shape) n *= d;
    return n;
}

namespace {

std::size_t width_of(const std::string& dtype) {
    if (dtype == "f32" || dtype == "i32") return 4;
    if (dtype == "f64") return 8;
    throw Error("bad_archive", "unknown dtype '" + dtype + "'");
}

void encode(const ArchiveTensor& t, std::string& blob) {
    for (double v : t.values) {
        char buf[8];
        if (t.dtype == "f32") {
            const float f = static_cast<float>(v);
            std::memcpy(buf, &f, 4);
        } else if (t.dtype == "i32") {
            const std::int32_t k = static_cast<std::int32_t>(v);
            std::memcpy(buf, &k, 4);
        } else {
            std::memcpy(buf, &v, 8);
        }
        blob.append(buf, width_of(t.dtype));
    }
}

double decode(const std::string& dtype, const char* p) {
    if (dtype == "f32") {
        float f;
        std::memcpy(&f, p, 4);
        return f;
    }
    if (dtype == "i32") {
        std::int32_t k;
        std::memcpy(&k, p, 4);
        return k;
    }
    double d;
    std::memcpy(&d, p, 8);
    return d;
}

}  // namespace

void write_archive(const std::string& path, const TensorArchive& archive) {
    nlohmann::json manifest = nlohmann::json::array();
    std::string blob;
    for (const auto& [name, t] : archive) {
        if (t.count() != static_cast<Index>(t.values.size()))
            throw Error("shape_mismatch", "archive entry '" + name + "' does not match its shape");
        const std::size_t offset = blob.size();
        encode(t, blob);
        manifest.push_back({{"name", name},
                            {"shape", t.shape},
                            {"dtype", t.dtype},
                            {"offset", offset},
                            {"bytes", blob.size() - offset}});
    }
    const std::string header = nlohmann::json{{"entries", manifest}, {"blob_bytes", blob.size()}}.dump();
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("io_error", "cannot write " + path);
    const std::uint64_t len = header.size();
    out.write(reinterpret_cast<const char*>(&len), 8);
    out << header << blob;
    if (!out) throw Error("io_error", "write failed for " + path);
}

TensorArchive read_archive(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("io_error", "cannot open " + path);
    std::uint64_t len = 0;
    in.read(reinterpret_cast<char*>(&len), 8);
    std::string header(len, '\0');
    in.read(header.data(), static_cast<std::streamsize>(len));
    if (!in) throw Error("bad_archive", path + ": truncated manifest");
    const std::string blob{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
    const auto manifest = nlohmann::json::parse(header);
    if (manifest.at("blob_bytes").get<std::size_t>() != blob.size())
        throw Error("bad_archive", path + ": blob length does not match the manifest");

    TensorArchive out;
    std::size_t expected = 0;
    for (const auto& e : manifest.at("entries")) {
        ArchiveTensor t;
        t.shape = e.at("shape").get<std::vector<Index>>();
        t.dtype = e.at("dtype").get<std::string>();
        const std::size_t offset = e.at("offset"), bytes = e.at("bytes");
        const std::size_t w = width_of(t.dtype);
        if (offset != expected || bytes != static_cast<std::size_t>(t.count()) * w || offset + bytes > blob.size())
            throw Error("bad_archive", path + ": overlapping or out-of-range entry");
        expected = offset + bytes;
        t.values.resize(static_cast<std::size_t>(t.count()));
        for (std::size_t i = 0; i < t.values.size(); ++i) t.values[i] = decode(t.dtype, blob.data() + offset + i * w);
        out.emplace(e.at("name").get<std::string>(), std::move(t));
    }
    if (expected != blob.size()) throw Error("bad_archive", path + ": unused blob bytes");
    return out;
}

}  // namespace certkit
