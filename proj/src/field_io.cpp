#include "momshoot/field_io.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include "momshoot/errors.hpp"

namespace momshoot {

std::string join_ints(const std::vector<int> &v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) s += ',';
        s += std::to_string(v[i]);
    }
    return s;
}

std::vector<int> parse_ints(const std::string &s) {
    std::vector<int> out;
    std::stringstream ss(s);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        try {
            std::size_t used = 0;
            out.push_back(std::stoi(tok, &used));
            if (used != tok.size()) throw InvalidArgument("bad integer list '" + s + "'");
        } catch (const std::logic_error &) {
            throw InvalidArgument("bad integer list '" + s + "'");
        }
    }
    return out;
}

void write_f32(std::ostream &os, std::span<const double> values) {
    std::vector<char> buf(values.size() * 4);
    for (std::size_t i = 0; i < values.size(); ++i) {
        std::uint32_t bits = std::bit_cast<std::uint32_t>(static_cast<float>(values[i]));
        if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap32(bits);
        std::memcpy(&buf[i * 4], &bits, 4);
    }
    os.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!os) throw Error("write failed");
}

void read_f32(std::istream &is, std::span<double> values) {
    std::vector<char> buf(values.size() * 4);
    is.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (is.gcount() != static_cast<std::streamsize>(buf.size())) throw InvalidArgument("truncated f32 payload");
    for (std::size_t i = 0; i < values.size(); ++i) {
        std::uint32_t bits;
        std::memcpy(&bits, &buf[i * 4], 4);
        if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap32(bits);
        values[i] = static_cast<double>(std::bit_cast<float>(bits));
    }
}

void write_field(std::ostream &os, const GridGeometry &geometry, int channels, std::span<const double> values) {
    os << "MOMSHOOT-FIELD v1 dtype=f32 dims=" << join_ints(geometry.dims()) << " channels=" << channels
       << " boundary=" << to_string(geometry.boundary()) << '\n';
    write_f32(os, values);
}

HeaderTokens parse_header_tokens(const std::string &line, const std::string &magic) {
    std::istringstream ss(line);
    std::string m, version;
    ss >> m >> version;
    if (m != magic || version != "v1") throw InvalidArgument("not a " + magic + " v1 file");
    std::map<std::string, std::string> kv;
    std::string tok;
    while (ss >> tok) {
        const auto eq = tok.find('=');
        if (eq == std::string::npos) throw InvalidArgument("malformed header token '" + tok + "'");
        kv[tok.substr(0, eq)] = tok.substr(eq + 1);
    }
    return kv;
}

const std::string &header_value(const HeaderTokens &kv, const std::string &key) {
    const auto it = kv.find(key);
    if (it == kv.end()) throw InvalidArgument("header is missing '" + key + "'");
    return it->second;
}

std::ofstream open_output(const std::string &path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw InvalidArgument("cannot open '" + path + "' for writing");
    return os;
}

std::ifstream open_input(const std::string &path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw InvalidArgument("cannot open '" + path + "'");
    return is;
}

RawField read_raw_field(std::istream &is) {
    std::string line;
    if (!std::getline(is, line)) throw InvalidArgument("empty field file");
    const auto kv = parse_header_tokens(line, "MOMSHOOT-FIELD");
    if (header_value(kv, "dtype") != "f32") throw InvalidArgument("unsupported dtype");
    GridGeometry g(parse_ints(header_value(kv, "dims")), boundary_from_string(header_value(kv, "boundary").c_str()));
    const int channels = parse_ints(header_value(kv, "channels")).at(0);
    if (channels != 1 && channels != g.rank()) throw InvalidArgument("channels must be 1 or the grid rank");
    RawField raw{g, channels, std::vector<double>(g.node_count() * channels)};
    read_f32(is, raw.values);
    for (double v : raw.values)
        if (!std::isfinite(v)) throw InvalidArgument("field contains non-finite values");
    return raw;
}

void write_field(const std::string &path, const ScalarField &field) {
    auto os = open_output(path);
    write_field(os, field.geometry(), 1, field.values());
}

void write_field(const std::string &path, const VectorField &field) {
    auto os = open_output(path);
    write_field(os, field.geometry(), field.components(), field.values());
}

void write_field(const std::string &path, const DeformationMap &map) { write_field(path, map.displacement()); }

RawField read_raw_field(const std::string &path) {
    auto is = open_input(path);
    return read_raw_field(is);
}

ScalarField read_scalar_field(const std::string &path) {
    RawField raw = read_raw_field(path);
    if (raw.channels != 1) throw InvalidArgument("'" + path + "' is not a scalar field");
    return ScalarField(raw.geometry, std::move(raw.values));
}

VectorField read_vector_field(const std::string &path) {
    RawField raw = read_raw_field(path);
    if (raw.channels != raw.geometry.rank()) throw InvalidArgument("'" + path + "' is not a vector field");
    return VectorField(raw.geometry, std::move(raw.values));
}

DeformationMap read_deformation_map(const std::string &path) { return DeformationMap(read_vector_field(path)); }

ScalarField read_pgm(const std::string &path) {
    auto is = open_input(path);
    auto next_token = [&]() {
        std::string tok;
        while (is >> tok) {
            if (tok[0] == '#') {
                std::string rest;
                std::getline(is, rest);
                continue;
            }
            return tok;
        }
        throw InvalidArgument("truncated PGM header");
    };
    if (next_token() != "P5") throw InvalidArgument("only binary P5 PGM is supported");
    const int w = std::stoi(next_token());
    const int h = std::stoi(next_token());
    const int maxval = std::stoi(next_token());
    if (maxval <= 0 || maxval > 255) throw InvalidArgument("only 8-bit PGM is supported");
    is.get();
    std::vector<unsigned char> px(static_cast<std::size_t>(w) * h);
    is.read(reinterpret_cast<char *>(px.data()), static_cast<std::streamsize>(px.size()));
    if (is.gcount() != static_cast<std::streamsize>(px.size())) throw InvalidArgument("truncated PGM payload");
    ScalarField f(GridGeometry({h, w}, Boundary::clamp));
    for (std::size_t i = 0; i < px.size(); ++i) f[i] = px[i] / static_cast<double>(maxval);
    return f;
}

void write_pgm(const std::string &path, const ScalarField &field, double lo, double hi) {
    const GridGeometry &g = field.geometry();
    if (g.rank() != 2) throw InvalidArgument("PGM output requires a 2D field");
    auto os = open_output(path);
    os << "P5\n" << g.dim(1) << ' ' << g.dim(0) << "\n255\n";
    const double span = hi > lo ? hi - lo : 1.0;
    std::vector<unsigned char> px(field.size());
    for (std::size_t i = 0; i < px.size(); ++i) {
        const double t = std::clamp((field[i] - lo) / span, 0.0, 1.0);
        px[i] = static_cast<unsigned char>(std::lround(255.0 * t));
    }
    os.write(reinterpret_cast<const char *>(px.data()), static_cast<std::streamsize>(px.size()));
}

} // namespace momshoot
