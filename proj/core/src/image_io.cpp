#include "sketchcolour/image_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>

#include <png.h>
#include <torch/torch.h>

#include "sketchcolour/errors.hpp"

namespace sketchcolour::io {

namespace fs = std::filesystem;

torch::Tensor read_png(const fs::path& path) {
    png_image image;
    std::memset(&image, 0, sizeof image);
    image.version = PNG_IMAGE_VERSION;
    if (png_image_begin_read_from_file(&image, path.c_str()) == 0) {
        throw IoError("cannot read PNG " + path.string() + ": " + image.message);
    }
    image.format = PNG_FORMAT_RGB;
    std::vector<png_byte> buffer(PNG_IMAGE_SIZE(image));
    if (png_image_finish_read(&image, nullptr, buffer.data(), 0, nullptr) == 0) {
        png_image_free(&image);
        throw IoError("cannot decode PNG " + path.string() + ": " + image.message);
    }
    const auto h = static_cast<int64_t>(image.height);
    const auto w = static_cast<int64_t>(image.width);
    auto bytes = torch::from_blob(buffer.data(), {h, w, 3}, torch::kUInt8);
    return bytes.to(torch::kFloat32).div_(255.0f);
}

void write_png(const fs::path& path, const torch::Tensor& image) {
    if (image.dim() != 3 || (image.size(2) != 1 && image.size(2) != 3)) {
        throw DimensionError("write_png expects H x W x 1 or H x W x 3");
    }
    auto bytes = image.to(torch::kFloat32)
                     .clamp(0.0, 1.0)
                     .mul(255.0f)
                     .round()
                     .to(torch::kUInt8)
                     .contiguous();
    png_image out;
    std::memset(&out, 0, sizeof out);
    out.version = PNG_IMAGE_VERSION;
    out.width = static_cast<png_uint_32>(image.size(1));
    out.height = static_cast<png_uint_32>(image.size(0));
    out.format = image.size(2) == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
    if (path.has_parent_path()) {
        fs::create_directories(path.parent_path());
    }
    if (png_image_write_to_file(&out, path.c_str(), 0, bytes.data_ptr<uint8_t>(), 0, nullptr) == 0) {
        throw IoError("cannot write PNG " + path.string() + ": " + out.message);
    }
}

std::string frame_filename(int64_t index) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "frame_%05lld.png", static_cast<long long>(index));
    return buf;
}

std::vector<fs::path> list_frames(const fs::path& dir) {
    if (!fs::is_directory(dir)) {
        throw IoError("frame directory " + dir.string() + " does not exist");
    }
    std::vector<fs::path> frames;
    for (const auto& entry : fs::directory_iterator(dir)) {
        const auto name = entry.path().filename().string();
        if (entry.is_regular_file() && name.starts_with("frame_") && name.ends_with(".png")) {
            frames.push_back(entry.path());
        }
    }
    std::sort(frames.begin(), frames.end());
    return frames;
}

VideoTensor read_frame_dir(const fs::path& dir) {
    const auto files = list_frames(dir);
    if (files.empty()) {
        throw IoError("no frame_*.png files in " + dir.string());
    }
    std::vector<torch::Tensor> frames;
    frames.reserve(files.size());
    for (const auto& f : files) {
        frames.push_back(read_png(f));
        if (frames.back().sizes() != frames.front().sizes()) {
            throw DimensionError("frame " + f.string() + " differs in size from the first frame");
        }
    }
    return VideoTensor(torch::stack(frames));
}

void write_frames(const fs::path& dir, const torch::Tensor& frames, int64_t first, const std::string& prefix) {
    fs::create_directories(dir);
    for (int64_t t = 0; t < frames.size(0); ++t) {
        auto name = frame_filename(first + t);
        name.replace(0, 6, prefix);
        write_png(dir / name, frames[t]);
    }
}

void write_frame_dir(const fs::path& dir, const VideoTensor& video) {
    write_frames(dir, video.data());
}

}  // namespace sketchcolour::io
