#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <filesystem>
#include <vector>

namespace egoface::render {

/// Row-major interleaved RGB raster. Writes through set() clamp to [0, 1].
class Image
{
public:
    Image() = default;
    Image(int width, int height, const Eigen::Vector3d& fill = Eigen::Vector3d::Zero());

    int width() const { return width_; }
    int height() const { return height_; }
    bool empty() const { return pixels_.empty(); }
    std::size_t pixel_count() const { return static_cast<std::size_t>(width_) * height_; }

    double at(int x, int y, int c) const { return pixels_[index(x, y) + static_cast<std::size_t>(c)]; }
    Eigen::Vector3d pixel(int x, int y) const
    {
        const std::size_t i = index(x, y);
        return {pixels_[i], pixels_[i + 1], pixels_[i + 2]};
    }
    void set(int x, int y, const Eigen::Vector3d& rgb);
    void set(int x, int y, int c, double v);

    const std::vector<double>& data() const { return pixels_; }

    friend bool operator==(const Image&, const Image&) = default;

private:
    std::size_t index(int x, int y) const
    {
        return 3 * (static_cast<std::size_t>(y) * static_cast<std::size_t>(width_) + static_cast<std::size_t>(x));
    }

    int width_ = 0;
    int height_ = 0;
    std::vector<double> pixels_;
};

/// Mean of each factor x factor block. Dimensions must be divisible by factor.
Image downsample_box(const Image& image, int factor);

/// Area-average resize to (width, height); source dimensions must be integer multiples.
Image resize_area(const Image& image, int width, int height);

/// Mean absolute difference over all channels.
double mean_abs_diff(const Image& a, const Image& b);

/// Mean squared difference over all channels.
double mean_squared_diff(const Image& a, const Image& b);

/// 8-bit quantization, round(v * 255), and back.
std::vector<std::uint8_t> to_bytes(const Image& image);
Image from_bytes(int width, int height, const std::vector<std::uint8_t>& bytes);

/// Binary PPM (P6, maxval 255).
void write_ppm(const Image& image, const std::filesystem::path& path);
Image read_ppm(const std::filesystem::path& path);

/// Side-by-side concatenation of equal-height images.
Image hstack(const std::vector<Image>& images);

} // namespace egoface::render
