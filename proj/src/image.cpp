#include "pointbox/image.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <string>
#include <vector>

#include "pointbox/error.hpp"

namespace pointbox {

GrayImage resize_bilinear(const GrayImage& src, int out_width, int out_height) {
    GrayImage out(out_height, out_width);
    const int in_h = static_cast<int>(src.rows());
    const int in_w = static_cast<int>(src.cols());
    const double sy = static_cast<double>(in_h) / out_height;
    const double sx = static_cast<double>(in_w) / out_width;
    for (int y = 0; y < out_height; ++y) {
        const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, in_h - 1.0);
        const int y0 = static_cast<int>(fy);
        const int y1 = std::min(y0 + 1, in_h - 1);
        const float wy = static_cast<float>(fy - y0);
        for (int x = 0; x < out_width; ++x) {
            const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, in_w - 1.0);
            const int x0 = static_cast<int>(fx);
            const int x1 = std::min(x0 + 1, in_w - 1);
            const float wx = static_cast<float>(fx - x0);
            const float top = src(y0, x0) * (1 - wx) + src(y0, x1) * wx;
            const float bottom = src(y1, x0) * (1 - wx) + src(y1, x1) * wx;
            out(y, x) = top * (1 - wy) + bottom * wy;
        }
    }
    return out;
}

GrayImage pad_to(const GrayImage& src, int width, int height) {
    GrayImage out = GrayImage::Zero(height, width);
    const auto rows = std::min<Eigen::Index>(height, src.rows());
    const auto cols = std::min<Eigen::Index>(width, src.cols());
    out.topLeftCorner(rows, cols) = src.topLeftCorner(rows, cols);
    return out;
}

void quantize_to_u8(GrayImage& image) {
    image = image.unaryExpr([](float v) {
        return std::round(std::clamp(v, 0.0f, 1.0f) * 255.0f) / 255.0f;
    });
}

GrayImage standardize(const GrayImage& image) {
    if (image.size() == 0) {
        return image;
    }
    const double mean = image.cast<double>().mean();
    const double var = (image.cast<double>().array() - mean).square().mean();
    if (!(var > 1e-12)) {
        return GrayImage::Zero(image.rows(), image.cols());
    }
    const double inv = 1.0 / std::sqrt(var);
    return ((image.cast<double>().array() - mean) * inv).cast<float>().matrix();
}

void write_pgm(const std::filesystem::path& path, const GrayImage& image) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw IoError("cannot open for writing: " + path.string());
    }
    out << "P5\n" << image.cols() << ' ' << image.rows() << "\n255\n";
    std::vector<unsigned char> bytes(static_cast<std::size_t>(image.size()));
    for (Eigen::Index i = 0; i < image.size(); ++i) {
        const float v = std::clamp(image.data()[i], 0.0f, 1.0f);
        bytes[static_cast<std::size_t>(i)] = static_cast<unsigned char>(std::lround(v * 255.0f));
    }
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) {
        throw IoError("write failed: " + path.string());
    }
}

namespace {

// Next header token, skipping whitespace and '#' comments.
std::string next_token(std::istream& in) {
    std::string token;
    int c = in.get();
    while (c != EOF) {
        if (c == '#') {
            while (c != EOF && c != '\n') {
                c = in.get();
            }
        } else if (std::isspace(c)) {
            if (!token.empty()) {
                break;
            }
        } else {
            token.push_back(static_cast<char>(c));
        }
        c = in.get();
    }
    return token;
}

} // namespace

GrayImage read_pgm(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open: " + path.string());
    }
    if (next_token(in) != "P5") {
        throw FormatError(path.string() + ": byte 0: not a binary PGM (P5)");
    }
    int width = 0;
    int height = 0;
    int maxval = 0;
    try {
        width = std::stoi(next_token(in));
        height = std::stoi(next_token(in));
        maxval = std::stoi(next_token(in));
    } catch (const std::exception&) {
        throw FormatError(path.string() + ": byte " + std::to_string(static_cast<long long>(in.tellg())) +
                          ": malformed PGM header");
    }
    if (width <= 0 || height <= 0 || maxval != 255) {
        throw FormatError(path.string() + ": unsupported PGM geometry or maxval");
    }
    std::vector<unsigned char> bytes(static_cast<std::size_t>(width) * height);
    in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (in.gcount() != static_cast<std::streamsize>(bytes.size())) {
        throw IoError(path.string() + ": truncated image data (" + std::to_string(in.gcount()) + " of " +
                      std::to_string(bytes.size()) + " bytes)");
    }
    GrayImage image(height, width);
    for (std::size_t i = 0; i < bytes.size(); ++i) {
        image.data()[i] = static_cast<float>(bytes[i]) / 255.0f;
    }
    return image;
}

} // namespace pointbox
