#include "egoface/render/image.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>
#include <string>

namespace egoface::render {

Image::Image(int width, int height, const Eigen::Vector3d& fill) : width_(width), height_(height)
{
    if (width <= 0 || height <= 0) {
        throw std::invalid_argument("image dimensions must be positive, got " + std::to_string(width) + "x" +
                                    std::to_string(height));
    }
    pixels_.resize(3 * pixel_count());
    const Eigen::Vector3d c = fill.cwiseMax(0.0).cwiseMin(1.0);
    for (std::size_t i = 0; i < pixel_count(); ++i) {
        pixels_[3 * i] = c.x();
        pixels_[3 * i + 1] = c.y();
        pixels_[3 * i + 2] = c.z();
    }
}

void Image::set(int x, int y, const Eigen::Vector3d& rgb)
{
    const std::size_t i = index(x, y);
    for (int c = 0; c < 3; ++c) {
        pixels_[i + static_cast<std::size_t>(c)] = std::clamp(rgb[c], 0.0, 1.0);
    }
}

void Image::set(int x, int y, int c, double v)
{
    pixels_[index(x, y) + static_cast<std::size_t>(c)] = std::clamp(v, 0.0, 1.0);
}

Image downsample_box(const Image& image, int factor)
{
    if (factor < 1 || image.width() % factor != 0 || image.height() % factor != 0) {
        throw std::invalid_argument("image " + std::to_string(image.width()) + "x" + std::to_string(image.height()) +
                                    " is not divisible by " + std::to_string(factor));
    }
    Image out(image.width() / factor, image.height() / factor);
    const double inv = 1.0 / (factor * factor);
    for (int y = 0; y < out.height(); ++y) {
        for (int x = 0; x < out.width(); ++x) {
            Eigen::Vector3d acc = Eigen::Vector3d::Zero();
            for (int dy = 0; dy < factor; ++dy) {
                for (int dx = 0; dx < factor; ++dx) {
                    acc += image.pixel(x * factor + dx, y * factor + dy);
                }
            }
            out.set(x, y, acc * inv);
        }
    }
    return out;
}

Image resize_area(const Image& image, int width, int height)
{
    if (width == image.width() && height == image.height()) {
        return image;
    }
    if (width <= 0 || height <= 0 || image.width() % width != 0 || image.height() % height != 0 ||
        image.width() / width != image.height() / height) {
        throw std::invalid_argument("area resize from " + std::to_string(image.width()) + "x" +
                                    std::to_string(image.height()) + " to " + std::to_string(width) + "x" +
                                    std::to_string(height) + " needs one integer factor");
    }
    return downsample_box(image, image.width() / width);
}

namespace {

void check_same_size(const Image& a, const Image& b)
{
    if (a.width() != b.width() || a.height() != b.height()) {
        throw std::invalid_argument("image sizes differ");
    }
}

} // namespace

double mean_abs_diff(const Image& a, const Image& b)
{
    check_same_size(a, b);
    double s = 0;
    for (std::size_t i = 0; i < a.data().size(); ++i) {
        s += std::abs(a.data()[i] - b.data()[i]);
    }
    return s / static_cast<double>(a.data().size());
}

double mean_squared_diff(const Image& a, const Image& b)
{
    check_same_size(a, b);
    double s = 0;
    for (std::size_t i = 0; i < a.data().size(); ++i) {
        const double d = a.data()[i] - b.data()[i];
        s += d * d;
    }
    return s / static_cast<double>(a.data().size());
}

std::vector<std::uint8_t> to_bytes(const Image& image)
{
    std::vector<std::uint8_t> out(image.data().size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = static_cast<std::uint8_t>(std::lround(std::clamp(image.data()[i], 0.0, 1.0) * 255.0));
    }
    return out;
}

Image from_bytes(int width, int height, const std::vector<std::uint8_t>& bytes)
{
    if (bytes.size() != 3 * static_cast<std::size_t>(width) * static_cast<std::size_t>(height)) {
        throw std::invalid_argument("byte buffer does not match image size");
    }
    Image img(width, height);
    for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x) {
            const std::size_t i = 3 * (static_cast<std::size_t>(y) * static_cast<std::size_t>(width) + static_cast<std::size_t>(x));
            img.set(x, y, Eigen::Vector3d(bytes[i], bytes[i + 1], bytes[i + 2]) / 255.0);
        }
    }
    return img;
}

void write_ppm(const Image& image, const std::filesystem::path& path)
{
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    std::ofstream os(path, std::ios::binary);
    if (!os) {
        throw std::runtime_error("cannot write " + path.string());
    }
    os << "P6\n" << image.width() << ' ' << image.height() << "\n255\n";
    const auto bytes = to_bytes(image);
    os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!os) {
        throw std::runtime_error("failed writing " + path.string());
    }
}

Image read_ppm(const std::filesystem::path& path)
{
    std::ifstream is(path, std::ios::binary);
    if (!is) {
        throw std::runtime_error("cannot open " + path.string());
    }
    std::string magic;
    int w = 0, h = 0, maxval = 0;
    is >> magic >> w >> h >> maxval;
    if (magic != "P6" || w <= 0 || h <= 0 || maxval != 255) {
        throw std::runtime_error(path.string() + " is not an 8-bit binary PPM");
    }
    is.get();
    std::vector<std::uint8_t> bytes(3 * static_cast<std::size_t>(w) * static_cast<std::size_t>(h));
    if (!is.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()))) {
        throw std::runtime_error("truncated PPM " + path.string());
    }
    return from_bytes(w, h, bytes);
}

Image hstack(const std::vector<Image>& images)
{
    if (images.empty()) {
        throw std::invalid_argument("hstack needs at least one image");
    }
    int w = 0;
    for (const Image& im : images) {
        if (im.height() != images[0].height()) {
            throw std::invalid_argument("hstack needs equal heights");
        }
        w += im.width();
    }
    Image out(w, images[0].height());
    int x0 = 0;
    for (const Image& im : images) {
        for (int y = 0; y < im.height(); ++y) {
            for (int x = 0; x < im.width(); ++x) {
                out.set(x0 + x, y, im.pixel(x, y));
            }
        }
        x0 += im.width();
    }
    return out;
}

} // namespace egoface::render
