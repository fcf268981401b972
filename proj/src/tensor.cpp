#include "zfn/tensor.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <memory>
#include <stdexcept>

namespace zfn {

ImageTensor make_tensor(int height, int width, int channels, float fill) {
    if (height <= 0 || width <= 0 || (channels != 1 && channels != 3))
        throw std::invalid_argument("make_tensor: bad dimensions");
    ImageTensor t;
    t.height = height;
    t.width = width;
    t.channels = channels;
    t.data.assign(static_cast<std::size_t>(height) * width * channels, fill);
    return t;
}

void validate_tensor(const ImageTensor& t) {
    if (t.height <= 0 || t.width <= 0 || (t.channels != 1 && t.channels != 3))
        throw std::invalid_argument("tensor: bad dimensions");
    const std::size_t expect = static_cast<std::size_t>(t.height) * t.width * t.channels;
    if (t.data.size() != expect) throw std::invalid_argument("tensor: data length mismatch");
    for (float v : t.data) {
        if (!std::isfinite(v) || v < 0.0f || v > 1.0f)
            throw std::invalid_argument("tensor: value outside [0,1] in " + t.source);
    }
}

// ---------------------------------------------------------------------------
// Native tensor format: "ZFNT", u16 version=1, u8 dtype (0=f32), u8 ndim,
// ndim x u32 dims, row-major little-endian payload.

namespace {

constexpr char kMagic[4] = {'Z', 'F', 'N', 'T'};

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

void put_u16(std::FILE* f, std::uint16_t v) {
    unsigned char b[2] = {static_cast<unsigned char>(v & 0xff), static_cast<unsigned char>(v >> 8)};
    std::fwrite(b, 1, 2, f);
}

void put_u32(std::FILE* f, std::uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    std::fwrite(b, 1, 4, f);
}

std::uint16_t get_u16(std::FILE* f) {
    unsigned char b[2];
    if (std::fread(b, 1, 2, f) != 2) throw std::runtime_error("tensor file: truncated header");
    return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
}

std::uint32_t get_u32(std::FILE* f) {
    unsigned char b[4];
    if (std::fread(b, 1, 4, f) != 4) throw std::runtime_error("tensor file: truncated header");
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
    return v;
}

bool is_little_endian() {
    const std::uint16_t probe = 1;
    return *reinterpret_cast<const unsigned char*>(&probe) == 1;
}

void write_f32_payload(std::FILE* f, const float* data, std::size_t count) {
    if (is_little_endian()) {
        if (std::fwrite(data, sizeof(float), count, f) != count)
            throw std::runtime_error("tensor file: short write");
        return;
    }
    for (std::size_t i = 0; i < count; ++i) {
        std::uint32_t bits;
        std::memcpy(&bits, &data[i], 4);
        put_u32(f, bits);
    }
}

void read_f32_payload(std::FILE* f, float* data, std::size_t count) {
    if (is_little_endian()) {
        if (std::fread(data, sizeof(float), count, f) != count)
            throw std::runtime_error("tensor file: truncated payload");
        return;
    }
    for (std::size_t i = 0; i < count; ++i) {
        const std::uint32_t bits = get_u32(f);
        std::memcpy(&data[i], &bits, 4);
    }
}

void write_zfnt(const std::string& path, const std::vector<std::uint32_t>& dims,
                const float* data, std::size_t count) {
    FilePtr f(std::fopen(path.c_str(), "wb"));
    if (!f) throw std::runtime_error("cannot write tensor file: " + path);
    std::fwrite(kMagic, 1, 4, f.get());
    put_u16(f.get(), 1);
    std::fputc(0, f.get());  // dtype f32
    std::fputc(static_cast<int>(dims.size()), f.get());
    for (auto d : dims) put_u32(f.get(), d);
    write_f32_payload(f.get(), data, count);
    if (std::ferror(f.get())) throw std::runtime_error("tensor file: write error: " + path);
}

struct RawTensor {
    std::vector<std::uint32_t> dims;
    std::vector<float> data;
};

RawTensor read_zfnt(const std::string& path) {
    FilePtr f(std::fopen(path.c_str(), "rb"));
    if (!f) throw std::runtime_error("cannot open tensor file: " + path);
    char magic[4];
    if (std::fread(magic, 1, 4, f.get()) != 4 || std::memcmp(magic, kMagic, 4) != 0)
        throw std::runtime_error("not a ZFNT tensor file: " + path);
    const std::uint16_t version = get_u16(f.get());
    if (version != 1) throw std::runtime_error("unsupported ZFNT version in " + path);
    const int dtype = std::fgetc(f.get());
    if (dtype != 0) throw std::runtime_error("unsupported ZFNT dtype in " + path);
    const int ndim = std::fgetc(f.get());
    if (ndim <= 0 || ndim > 4) throw std::runtime_error("bad ZFNT ndim in " + path);
    RawTensor raw;
    std::size_t count = 1;
    for (int i = 0; i < ndim; ++i) {
        const std::uint32_t d = get_u32(f.get());
        if (d == 0) throw std::runtime_error("zero ZFNT dim in " + path);
        raw.dims.push_back(d);
        count *= d;
    }
    if (count > (1u << 30)) throw std::runtime_error("ZFNT tensor too large: " + path);
    raw.data.resize(count);
    read_f32_payload(f.get(), raw.data.data(), count);
    return raw;
}

bool has_png_signature(const std::string& path) {
    FilePtr f(std::fopen(path.c_str(), "rb"));
    if (!f) throw std::runtime_error("cannot open file: " + path);
    unsigned char sig[8];
    const std::size_t got = std::fread(sig, 1, 8, f.get());
    return got == 8 && png_sig_cmp(sig, 0, 8) == 0;
}

ImageTensor load_png(const std::string& path) {
    FilePtr f(std::fopen(path.c_str(), "rb"));
    if (!f) throw std::runtime_error("cannot open file: " + path);

    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw std::runtime_error("libpng init failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        throw std::runtime_error("libpng init failed");
    }
    std::vector<png_bytep> row_ptrs;
    std::vector<unsigned char> pixels;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw std::runtime_error("unreadable PNG: " + path);
    }
    png_init_io(png, f.get());
    png_read_info(png, info);

    const png_uint_32 w = png_get_image_width(png, info);
    const png_uint_32 h = png_get_image_height(png, info);
    const int color = png_get_color_type(png, info);
    int depth = png_get_bit_depth(png, info);

    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (color & PNG_COLOR_MASK_ALPHA) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw std::runtime_error("unsupported channel count (alpha) in " + path);
    }
    if (depth == 16) png_set_swap(png);  // PNG stores big-endian samples
    png_read_update_info(png, info);

    depth = png_get_bit_depth(png, info);
    const int channels = png_get_channels(png, info);
    if (channels != 1 && channels != 3) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw std::runtime_error("unsupported channel count in " + path);
    }

    const std::size_t row_bytes = png_get_rowbytes(png, info);
    pixels.resize(row_bytes * h);
    row_ptrs.resize(h);
    for (png_uint_32 r = 0; r < h; ++r) row_ptrs[r] = pixels.data() + r * row_bytes;
    png_read_image(png, row_ptrs.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);

    ImageTensor t = make_tensor(static_cast<int>(h), static_cast<int>(w), channels);
    t.source = path;
    const std::size_t n = t.data.size();
    if (depth == 16) {
        const auto* src = reinterpret_cast<const std::uint16_t*>(pixels.data());
        for (std::size_t i = 0; i < n; ++i) t.data[i] = static_cast<float>(src[i]) / 65535.0f;
    } else {
        for (std::size_t i = 0; i < n; ++i) t.data[i] = static_cast<float>(pixels[i]) / 255.0f;
    }
    return t;
}

}  // namespace

ImageTensor load_image(const std::string& path) {
    if (has_png_signature(path)) return load_png(path);

    RawTensor raw = read_zfnt(path);
    ImageTensor t;
    if (raw.dims.size() == 2) {
        t = make_tensor(static_cast<int>(raw.dims[0]), static_cast<int>(raw.dims[1]), 1);
    } else if (raw.dims.size() == 3 && (raw.dims[2] == 1 || raw.dims[2] == 3)) {
        t = make_tensor(static_cast<int>(raw.dims[0]), static_cast<int>(raw.dims[1]),
                        static_cast<int>(raw.dims[2]));
    } else {
        throw std::runtime_error("tensor file is not an image: " + path);
    }
    t.data = std::move(raw.data);
    t.source = path;
    validate_tensor(t);  // rejects NaN / out-of-range payloads
    return t;
}

void save_png(const ImageTensor& t, const std::string& path, int bit_depth) {
    if (bit_depth != 8 && bit_depth != 16) throw std::invalid_argument("save_png: bit depth must be 8 or 16");
    FilePtr f(std::fopen(path.c_str(), "wb"));
    if (!f) throw std::runtime_error("cannot write file: " + path);

    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw std::runtime_error("libpng init failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_write_struct(&png, nullptr);
        throw std::runtime_error("libpng init failed");
    }
    std::vector<unsigned char> rowbuf;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw std::runtime_error("PNG write failed: " + path);
    }
    png_init_io(png, f.get());
    const int color = t.channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB;
    png_set_IHDR(png, info, static_cast<png_uint_32>(t.width), static_cast<png_uint_32>(t.height),
                 bit_depth, color, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    if (bit_depth == 16) png_set_swap(png);

    const std::size_t samples_per_row = static_cast<std::size_t>(t.width) * t.channels;
    rowbuf.resize(samples_per_row * (bit_depth / 8));
    for (int r = 0; r < t.height; ++r) {
        if (bit_depth == 8) {
            for (std::size_t i = 0; i < samples_per_row; ++i) {
                const float v = t.data[static_cast<std::size_t>(r) * samples_per_row + i];
                rowbuf[i] = static_cast<unsigned char>(std::lround(v * 255.0f));
            }
        } else {
            auto* out = reinterpret_cast<std::uint16_t*>(rowbuf.data());
            for (std::size_t i = 0; i < samples_per_row; ++i) {
                const float v = t.data[static_cast<std::size_t>(r) * samples_per_row + i];
                out[i] = static_cast<std::uint16_t>(std::lround(v * 65535.0f));
            }
        }
        png_write_row(png, rowbuf.data());
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

void save_tensor(const ImageTensor& t, const std::string& path) {
    validate_tensor(t);
    const std::vector<std::uint32_t> dims = {static_cast<std::uint32_t>(t.height),
                                             static_cast<std::uint32_t>(t.width),
                                             static_cast<std::uint32_t>(t.channels)};
    write_zfnt(path, dims, t.data.data(), t.data.size());
}

void save_matrix(const std::vector<std::vector<double>>& rows, const std::string& path) {
    if (rows.empty() || rows[0].empty()) throw std::invalid_argument("save_matrix: empty matrix");
    const std::size_t cols = rows[0].size();
    std::vector<float> flat;
    flat.reserve(rows.size() * cols);
    for (const auto& row : rows) {
        if (row.size() != cols) throw std::invalid_argument("save_matrix: ragged rows");
        for (double v : row) flat.push_back(static_cast<float>(v));
    }
    write_zfnt(path, {static_cast<std::uint32_t>(rows.size()), static_cast<std::uint32_t>(cols)},
               flat.data(), flat.size());
}

std::vector<std::vector<double>> load_matrix(const std::string& path) {
    const RawTensor raw = read_zfnt(path);
    if (raw.dims.size() != 2) throw std::runtime_error("tensor file is not a matrix: " + path);
    std::vector<std::vector<double>> rows(raw.dims[0], std::vector<double>(raw.dims[1]));
    std::size_t i = 0;
    for (auto& row : rows)
        for (auto& v : row) v = raw.data[i++];
    return rows;
}

// ---------------------------------------------------------------------------

DiffMap abs_diff(const ImageTensor& a, const ImageTensor& b) {
    if (!a.same_dims(b)) throw std::invalid_argument("abs_diff: dimension mismatch");
    DiffMap d;
    d.height = a.height;
    d.width = a.width;
    d.values.resize(static_cast<std::size_t>(a.height) * a.width);
    const float inv_c = 1.0f / static_cast<float>(a.channels);
    const std::size_t pixels = d.values.size();
    for (std::size_t p = 0; p < pixels; ++p) {
        float acc = 0.0f;
        const std::size_t base = p * a.channels;
        for (int ch = 0; ch < a.channels; ++ch)
            acc += std::fabs(a.data[base + ch] - b.data[base + ch]);
        d.values[p] = acc * inv_c;
    }
    return d;
}

Aggregates aggregate(const std::vector<double>& values) {
    if (values.empty()) throw std::invalid_argument("aggregate: empty input");
    for (double v : values) {
        if (!std::isfinite(v)) throw std::invalid_argument("aggregate: non-finite element");
    }
    std::vector<double> sorted = values;
    std::sort(sorted.begin(), sorted.end());

    const std::size_t n = sorted.size();
    auto quantile = [&](double p) {
        const double pos = static_cast<double>(n - 1) * p;
        const std::size_t lo = static_cast<std::size_t>(pos);
        const double frac = pos - static_cast<double>(lo);
        if (lo + 1 >= n) return sorted[n - 1];
        return sorted[lo] + frac * (sorted[lo + 1] - sorted[lo]);
    };

    Aggregates a;
    double sum = 0.0;
    for (double v : sorted) sum += v;  // sorted order: permutation invariant
    a.sum = sum;
    a.min = sorted.front();
    a.max = sorted.back();
    a.mean = sum / static_cast<double>(n);
    a.q1 = quantile(0.25);
    a.median = quantile(0.5);
    a.q3 = quantile(0.75);
    return a;
}

double mse(const ImageTensor& a, const ImageTensor& b) {
    if (!a.same_dims(b)) throw std::invalid_argument("mse: dimension mismatch");
    double acc = 0.0;
    const std::size_t n = a.data.size();
    for (std::size_t i = 0; i < n; ++i) {
        const double d = static_cast<double>(a.data[i]) - static_cast<double>(b.data[i]);
        acc += d * d;
    }
    return acc / static_cast<double>(n);
}

double mse(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size() || a.empty()) throw std::invalid_argument("mse: dimension mismatch");
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        acc += d * d;
    }
    return acc / static_cast<double>(a.size());
}

}  // namespace zfn
