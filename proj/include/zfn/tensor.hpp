#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace zfn {

// H x W x C float image in [0,1], row-major (row, column, channel).
struct ImageTensor {
    int height = 0;
    int width = 0;
    int channels = 1;  // 1 or 3
    std::vector<float> data;
    std::string source;  // provenance: originating path or synthetic id

    float at(int r, int c, int ch = 0) const {
        return data[(static_cast<std::size_t>(r) * width + c) * channels + ch];
    }
    float& at(int r, int c, int ch = 0) {
        return data[(static_cast<std::size_t>(r) * width + c) * channels + ch];
    }
    std::size_t size() const { return data.size(); }
    bool same_dims(const ImageTensor& o) const {
        return height == o.height && width == o.width && channels == o.channels;
    }
};

ImageTensor make_tensor(int height, int width, int channels, float fill = 0.0f);
void validate_tensor(const ImageTensor& t);

// Channel-reduced absolute difference, one value >= 0 per pixel.
struct DiffMap {
    int height = 0;
    int width = 0;
    std::vector<float> values;

    float at(int r, int c) const { return values[static_cast<std::size_t>(r) * width + c]; }
    float& at(int r, int c) { return values[static_cast<std::size_t>(r) * width + c]; }
    std::size_t size() const { return values.size(); }
};

struct Aggregates {
    double sum = 0, max = 0, min = 0, mean = 0, q1 = 0, median = 0, q3 = 0;
};

// PNG (8/16-bit gray or RGB) or native ZFNT tensor, by file content.
ImageTensor load_image(const std::string& path);

void save_png(const ImageTensor& t, const std::string& path, int bit_depth = 8);
void save_tensor(const ImageTensor& t, const std::string& path);

// Native tensor files also carry arbitrary 2-D matrices (.feat, masks).
void save_matrix(const std::vector<std::vector<double>>& rows, const std::string& path);
std::vector<std::vector<double>> load_matrix(const std::string& path);

DiffMap abs_diff(const ImageTensor& a, const ImageTensor& b);

// Quartiles by linear interpolation at position (n-1)*p. The input is
// sorted internally and summed in sorted order, so any permutation of the
// same values produces bit-identical aggregates.
Aggregates aggregate(const std::vector<double>& values);

double mse(const ImageTensor& a, const ImageTensor& b);
double mse(const std::vector<double>& a, const std::vector<double>& b);

}  // namespace zfn
