#include "certkit/checkpoint.hpp"

#include "json.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace certkit {

static_assert(std::endian::native == std::endian::little, "checkpoints are written little-endian");

namespace {

using nlohmann::json;

template <class T>
constexpr const char* dtype_name() {
    return sizeof(T) == 4 ? "float32" : "float64";
}

template <class T>
json describe(const Network<T>& net) {
    json layers = json::array();
    for (const auto& l : net.layers) {
        json d{{"kind", to_string(l.kind)}, {"out", {l.out_shape.channels, l.out_shape.height, l.out_shape.width}}};
        if (l.kind == LayerKind::conv2d) {
            d["kernel"] = l.kernel;
            d["stride"] = l.stride;
            d["padding"] = l.padding;
        }
        if (l.kind == LayerKind::batchnorm) {
            d["momentum"] = static_cast<double>(l.momentum);
            d["epsilon"] = static_cast<double>(l.epsilon);
        }
        layers.push_back(d);
    }
    return layers;
}

template <class S, class T>
void read_tensor(std::istream& in, Mat<T>& dst, const std::string& path) {
    std::uint64_t bytes = 0;
    in.read(reinterpret_cast<char*>(&bytes), 8);
    if (!in || bytes != static_cast<std::uint64_t>(dst.size()) * sizeof(S))
        throw Error("bad_checkpoint", path + ": tensor length does not match the architecture");
    std::vector<S> buf(static_cast<std::size_t>(dst.size()));
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(bytes));
    if (!in) throw Error("bad_checkpoint", path + ": truncated tensor data");
    for (Index i = 0; i < dst.size(); ++i) dst.data()[i] = static_cast<T>(buf[static_cast<std::size_t>(i)]);
}

}  // namespace

template <class T>
void save_checkpoint(const std::string& path, const Network<T>& net, const Metadata& meta) {
    json header{{"format_version", kCheckpointFormat},
                {"architecture", net.architecture},
                {"input_shape", {net.input_shape.channels, net.input_shape.height, net.input_shape.width}},
                {"num_classes", net.num_classes},
                {"dtype", dtype_name<T>()},
                {"layers", describe(net)},
                {"metadata", meta}};
    if (!net.norm.identity()) header["input_norm"] = {{"mean", net.norm.mean}, {"std", net.norm.std}};
    json shapes = json::array();
    for (const Mat<T>* m : net.state()) shapes.push_back({m->rows(), m->cols()});
    header["tensors"] = shapes;

    const std::string text = header.dump();
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("io_error", "cannot write " + path);
    const std::uint64_t len = text.size();
    out.write(reinterpret_cast<const char*>(&len), 8);
    out << text;
    for (const Mat<T>* m : net.state()) {
        const std::uint64_t bytes = static_cast<std::uint64_t>(m->size()) * sizeof(T);
        out.write(reinterpret_cast<const char*>(&bytes), 8);
        out.write(reinterpret_cast<const char*>(m->data()), static_cast<std::streamsize>(bytes));
    }
    if (!out) throw Error("io_error", "write failed for " + path);
}

template <class T>
Network<T> load_checkpoint(const std::string& path, Metadata* meta) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("io_error", "cannot open " + path);
    std::uint64_t len = 0;
    in.read(reinterpret_cast<char*>(&len), 8);
    if (!in || len > (1u << 26)) throw Error("bad_checkpoint", path + ": not a checkpoint");
    std::string text(len, '\0');
    in.read(text.data(), static_cast<std::streamsize>(len));
    if (!in) throw Error("bad_checkpoint", path + ": truncated header");
    json header;
    try {
        header = json::parse(text);
    } catch (const json::exception&) {
        throw Error("bad_checkpoint", path + ": header is not JSON");
    }
    if (header.value("format_version", 0) != kCheckpointFormat)
        throw Error("bad_checkpoint", path + ": unsupported format version");

    const auto in_shape = header.at("input_shape").get<std::vector<Index>>();
    Network<T> net(Shape{in_shape.at(0), in_shape.at(1), in_shape.at(2)}, header.at("num_classes").get<Index>());
    net.architecture = header.at("architecture").get<std::string>();
    if (header.contains("input_norm")) {
        net.norm.mean = header["input_norm"].at("mean").get<std::vector<double>>();
        net.norm.std = header["input_norm"].at("std").get<std::vector<double>>();
    }
    for (const auto& d : header.at("layers")) {
        const auto kind = layer_kind_from_string(d.at("kind").get<std::string>());
        const auto out = d.at("out").get<std::vector<Index>>();
        switch (kind) {
            case LayerKind::linear: net.linear(out.at(0)); break;
            case LayerKind::conv2d:
                net.conv2d(out.at(0), d.at("kernel").get<Index>(), d.at("stride").get<Index>(),
                           d.at("padding").get<Index>());
                break;
            case LayerKind::relu: net.relu(); break;
            case LayerKind::flatten: net.flatten(); break;
            case LayerKind::batchnorm:
                net.batchnorm();
                net.layers.back().momentum = static_cast<T>(d.at("momentum").get<double>());
                net.layers.back().epsilon = static_cast<T>(d.at("epsilon").get<double>());
                break;
        }
        const Shape& s = net.layers.back().out_shape;
        if (s.channels != out.at(0) || s.height != out.at(1) || s.width != out.at(2))
            throw Error("bad_checkpoint", path + ": layer shapes do not compose");
    }
    net.validate();
    const std::string dtype = header.at("dtype").get<std::string>();
    for (Mat<T>* m : net.state()) {
        if (dtype == "float32") {
            read_tensor<float>(in, *m, path);
        } else if (dtype == "float64") {
            read_tensor<double>(in, *m, path);
        } else {
            throw Error("bad_checkpoint", path + ": unknown dtype " + dtype);
        }
    }
    if (in.peek() != std::char_traits<char>::eof()) throw Error("bad_checkpoint", path + ": trailing bytes");
    if (meta) *meta = header.at("metadata").get<Metadata>();
    return net;
}

template void save_checkpoint<float>(const std::string&, const Network<float>&, const Metadata&);
template void save_checkpoint<double>(const std::string&, const Network<double>&, const Metadata&);
template Network<float> load_checkpoint<float>(const std::string&, Metadata*);
template Network<double> load_checkpoint<double>(const std::string&, Metadata*);

}  // namespace certkit
