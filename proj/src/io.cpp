#include "fogflow/io.hpp"

#include <algorithm>
#include <bit>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

#include "fogflow/errors.hpp"

namespace fogflow {

namespace {

constexpr int kMaxSide = 1 << 16;  // dimension overflow guard

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot open '" + path + "' for reading");
    std::ostringstream ss;
    ss << in.rdbuf();
    return std::move(ss).str();
}

void spill(const std::string& path, const std::string& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw ValidationError("cannot open '" + path + "' for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw ValidationError("short write to '" + path + "'");
}

std::uint32_t bswap32(std::uint32_t x) {
    return ((x >> 24) & 0xffu) | ((x >> 8) & 0xff00u) | ((x << 8) & 0xff0000u) | (x << 24);
}

void put_u32le(std::string& buf, std::uint32_t v) {
    if constexpr (std::endian::native == std::endian::big) v = bswap32(v);
    char b[4];
    std::memcpy(b, &v, 4);
    buf.append(b, 4);
}

void put_f32le(std::string& buf, double v) {
    const float f = static_cast<float>(v);
    std::uint32_t u;
    std::memcpy(&u, &f, 4);
    put_u32le(buf, u);
}

std::uint32_t get_u32(const std::string& buf, std::size_t off, bool file_little) {
    std::uint32_t u;
    std::memcpy(&u, buf.data() + off, 4);
    if ((std::endian::native == std::endian::little) != file_little) u = bswap32(u);
    return u;
}

double get_f32(const std::string& buf, std::size_t off, bool file_little) {
    const std::uint32_t u = get_u32(buf, off, file_little);
    float f;
    std::memcpy(&f, &u, 4);
    return static_cast<double>(f);
}

void check_extent(long long w, long long h, const std::string& what) {
    if (w <= 0 || h <= 0 || w > kMaxSide || h > kMaxSide)
        throw ValidationError(what + ": bad dimensions " + std::to_string(w) + "x" + std::to_string(h));
}

// Whitespace/comment-skipping header tokenizer for netpbm-style headers.
std::string next_token(const std::string& buf, std::size_t& pos) {
    while (pos < buf.size()) {
        if (std::isspace(static_cast<unsigned char>(buf[pos]))) {
            ++pos;
        } else if (buf[pos] == '#') {
            while (pos < buf.size() && buf[pos] != '\n') ++pos;
        } else {
            break;
        }
    }
    const std::size_t start = pos;
    while (pos < buf.size() && !std::isspace(static_cast<unsigned char>(buf[pos]))) ++pos;
    if (start == pos) throw ValidationError("malformed header: unexpected end of file");
    return buf.substr(start, pos - start);
}

long long parse_int(const std::string& tok, const std::string& what) {
    try {
        std::size_t used = 0;
        const long long v = std::stoll(tok, &used);
        if (used != tok.size()) throw std::invalid_argument(tok);
        return v;
    } catch (const std::exception&) {
        throw ValidationError(what + ": malformed integer '" + tok + "'");
    }
}

}  // namespace

FlowField read_flo(const std::string& path) {
    const std::string buf = slurp(path);
    if (buf.size() < 12) throw ValidationError("flo: truncated header in '" + path + "'");
    if (buf.compare(0, 4, "PIEH") != 0) throw ValidationError("flo: bad magic in '" + path + "'");
    const long long w = get_u32(buf, 4, true);
    const long long h = get_u32(buf, 8, true);
    check_extent(w, h, "flo");
    const std::size_t need = 12 + static_cast<std::size_t>(w) * h * 2 * 4;
    if (buf.size() < need) throw ValidationError("flo: truncated payload in '" + path + "'");
    FlowField f(static_cast<int>(h), static_cast<int>(w));
    for (std::size_t i = 0; i < f.uv.size(); ++i) f.uv[i] = get_f32(buf, 12 + i * 4, true);
    return f;
}

void write_flo(const std::string& path, const FlowField& f) {
    check_extent(f.width, f.height, "flo");
    if (!f.all_finite()) throw ValidationError("flo: refusing to write non-finite flow");
    std::string buf;
    buf.reserve(12 + f.uv.size() * 4);
    buf.append("PIEH");
    put_u32le(buf, static_cast<std::uint32_t>(f.width));
    put_u32le(buf, static_cast<std::uint32_t>(f.height));
    for (double v : f.uv) put_f32le(buf, v);
    spill(path, buf);
}

ImageGrid read_pfm(const std::string& path) {
    const std::string buf = slurp(path);
    std::size_t pos = 0;
    const std::string magic = next_token(buf, pos);
    int channels = 0;
    if (magic == "Pf")
        channels = 1;
    else if (magic == "PF")
        channels = 3;
    else
        throw ValidationError("pfm: bad magic '" + magic + "' in '" + path + "'");
    const long long w = parse_int(next_token(buf, pos), "pfm");
    const long long h = parse_int(next_token(buf, pos), "pfm");
    check_extent(w, h, "pfm");
    const std::string scale_tok = next_token(buf, pos);
    double scale = 0.0;
    try {
        scale = std::stod(scale_tok);
    } catch (const std::exception&) {
        throw ValidationError("pfm: malformed scale '" + scale_tok + "'");
    }
    if (scale == 0.0) throw ValidationError("pfm: zero scale");
    const bool file_little = scale < 0.0;
    ++pos;  // single whitespace byte separates header from raster
    const std::size_t count = static_cast<std::size_t>(w) * h * channels;
    if (buf.size() < pos + count * 4) throw ValidationError("pfm: truncated payload in '" + path + "'");
    ImageGrid g(static_cast<int>(h), static_cast<int>(w), channels);
    // rows are stored bottom-up
    for (int y = 0; y < g.height; ++y) {
        const int src_row = g.height - 1 - y;
        for (int x = 0; x < g.width; ++x)
            for (int c = 0; c < channels; ++c) {
                const std::size_t i = (static_cast<std::size_t>(src_row) * g.width + x) * channels + c;
                g.at(y, x, c) = get_f32(buf, pos + i * 4, file_little);
            }
    }
    return g;
}

void write_pfm(const std::string& path, const ImageGrid& g) {
    check_extent(g.width, g.height, "pfm");
    if (g.channels != 1 && g.channels != 3)
        throw ValidationError("pfm: only 1- or 3-channel grids supported");
    if (!g.all_finite()) throw ValidationError("pfm: refusing to write non-finite grid");
    std::string buf;
    buf.append(g.channels == 1 ? "Pf\n" : "PF\n");
    buf.append(std::to_string(g.width) + " " + std::to_string(g.height) + "\n");
    buf.append("-1.0\n");  // negative scale: little-endian payload
    for (int y = g.height - 1; y >= 0; --y)
        for (int x = 0; x < g.width; ++x)
            for (int c = 0; c < g.channels; ++c) put_f32le(buf, g.at(y, x, c));
    spill(path, buf);
}

ImageGrid read_ppm(const std::string& path) {
    const std::string buf = slurp(path);
    std::size_t pos = 0;
    if (next_token(buf, pos) != "P6") throw ValidationError("ppm: bad magic in '" + path + "'");
    const long long w = parse_int(next_token(buf, pos), "ppm");
    const long long h = parse_int(next_token(buf, pos), "ppm");
    check_extent(w, h, "ppm");
    const long long maxval = parse_int(next_token(buf, pos), "ppm");
    if (maxval != 255) throw ValidationError("ppm: unsupported maxval " + std::to_string(maxval));
    ++pos;  // single whitespace byte before raster
    const std::size_t count = static_cast<std::size_t>(w) * h * 3;
    if (buf.size() < pos + count) throw ValidationError("ppm: truncated payload in '" + path + "'");
    ImageGrid g(static_cast<int>(h), static_cast<int>(w), 3);
    for (std::size_t i = 0; i < count; ++i)
        g.data[i] = static_cast<unsigned char>(buf[pos + i]) / 255.0;
    return g;
}

void write_ppm(const std::string& path, const ImageGrid& g) {
    check_extent(g.width, g.height, "ppm");
    if (g.channels != 1 && g.channels != 3)
        throw ValidationError("ppm: only 1- or 3-channel grids supported");
    if (!g.all_finite()) throw ValidationError("ppm: refusing to write non-finite grid");
    std::string buf;
    buf.append("P6\n" + std::to_string(g.width) + " " + std::to_string(g.height) + "\n255\n");
    for (int y = 0; y < g.height; ++y)
        for (int x = 0; x < g.width; ++x)
            for (int c = 0; c < 3; ++c) {
                const double v = g.at(y, x, g.channels == 1 ? 0 : c);
                const double q = std::round(std::clamp(v, 0.0, 1.0) * 255.0);
                buf.push_back(static_cast<char>(static_cast<unsigned char>(q)));
            }
    spill(path, buf);
}

}  // namespace fogflow
