#include "sketchcolour/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>

#include <torch/torch.h>

#include "sketchcolour/errors.hpp"
#include "sketchcolour/image_io.hpp"
#include "sketchcolour/random.hpp"
#include "sketchcolour/sketcher.hpp"

namespace sketchcolour::data {

namespace fs = std::filesystem;
using nlohmann::json;

double Rgb::distance(const Rgb& other) const {
    return std::sqrt((r - other.r) * (r - other.r) + (g - other.g) * (g - other.g) + (b - other.b) * (b - other.b));
}

namespace {

Rgb hsv_to_rgb(double h, double s, double v) {
    h = h - std::floor(h);
    const double c = v * s;
    const double hp = h * 6.0;
    const double x = c * (1.0 - std::abs(std::fmod(hp, 2.0) - 1.0));
    double r = 0, g = 0, b = 0;
    switch (static_cast<int>(hp)) {
        case 0: r = c; g = x; break;
        case 1: r = x; g = c; break;
        case 2: g = c; b = x; break;
        case 3: g = x; b = c; break;
        case 4: r = x; b = c; break;
        default: r = c; b = x; break;
    }
    const double m = v - c;
    return {r + m, g + m, b + m};
}

struct Placement {
    int64_t cx;
    int64_t cy;
    double rx;
    double ry;
};

// Integer-snapped centre so translated masks keep an identical pixel count.
Placement place(const ShapeSpec& s, int64_t t) {
    double cx = s.centreX;
    double cy = s.centreY;
    double rx = s.radiusX;
    double ry = s.radiusY;
    const double tt = static_cast<double>(t);
    switch (s.motion) {
        case MotionKind::linear:
            cx += s.speed * tt * std::cos(s.heading);
            cy += s.speed * tt * std::sin(s.heading);
            break;
        case MotionKind::circular: {
            const double omega = s.orbitRadius > 0.0 ? s.speed / s.orbitRadius : 0.0;
            cx += s.orbitRadius * (std::cos(s.heading + omega * tt) - std::cos(s.heading));
            cy += s.orbitRadius * (std::sin(s.heading + omega * tt) - std::sin(s.heading));
            break;
        }
        case MotionKind::scale: {
            const double base = std::max(1.0, std::min(rx, ry));
            const double f = 1.0 + 0.4 * std::sin(s.speed * tt / base);
            rx *= f;
            ry *= f;
            break;
        }
    }
    return {static_cast<int64_t>(std::lround(cx)), static_cast<int64_t>(std::lround(cy)), rx, ry};
}

bool covers(ShapeKind kind, const Placement& p, int64_t x, int64_t y) {
    const double dx = static_cast<double>(x - p.cx);
    const double dy = static_cast<double>(y - p.cy);
    switch (kind) {
        case ShapeKind::ellipse:
            return (dx * dx) / (p.rx * p.rx) + (dy * dy) / (p.ry * p.ry) <= 1.0;
        case ShapeKind::rectangle:
            return std::abs(dx) <= p.rx && std::abs(dy) <= p.ry;
        case ShapeKind::triangle: {
            if (dy < -p.ry || dy > p.ry) {
                return false;
            }
            const double halfWidth = p.rx * (dy + p.ry) / (2.0 * p.ry);
            return std::abs(dx) <= halfWidth;
        }
    }
    return false;
}

void check_geometry(int64_t frames, int64_t height, int64_t width) {
    if (frames < 1 || height < 1 || width < 1) {
        throw DimensionError("clip geometry must be positive");
    }
}

}  // namespace

double inside_fraction(const ShapeSpec& shape, int64_t t, int64_t height, int64_t width) {
    const Placement p = place(shape, t);
    const int64_t ex = static_cast<int64_t>(std::ceil(p.rx)) + 1;
    const int64_t ey = static_cast<int64_t>(std::ceil(p.ry)) + 1;
    int64_t total = 0;
    int64_t inside = 0;
    for (int64_t y = p.cy - ey; y <= p.cy + ey; ++y) {
        for (int64_t x = p.cx - ex; x <= p.cx + ex; ++x) {
            if (covers(shape.kind, p, x, y)) {
                ++total;
                if (x >= 0 && x < width && y >= 0 && y < height) {
                    ++inside;
                }
            }
        }
    }
    return total == 0 ? 0.0 : static_cast<double>(inside) / static_cast<double>(total);
}

void validate_scene(const SceneSpec& spec, int64_t frames, int64_t height, int64_t width) {
    check_geometry(frames, height, width);
    if (spec.num_shapes() < 2 || spec.num_shapes() > 6) {
        throw GenerationError("scene must hold 2 to 6 shapes, got " + std::to_string(spec.num_shapes()));
    }
    for (size_t i = 0; i < spec.palette.size(); ++i) {
        if (spec.palette[i].distance(spec.background) < kMinPaletteDistance) {
            throw GenerationError("palette colour " + std::to_string(i) + " is too close to the background");
        }
        for (size_t j = i + 1; j < spec.palette.size(); ++j) {
            if (spec.palette[i].distance(spec.palette[j]) < kMinPaletteDistance) {
                throw GenerationError("palette colours " + std::to_string(i) + " and " + std::to_string(j) +
                                      " are closer than " + std::to_string(kMinPaletteDistance));
            }
        }
    }
    for (size_t i = 0; i < spec.shapes.size(); ++i) {
        const auto& s = spec.shapes[i];
        if (s.colourIndex < 0 || s.colourIndex >= static_cast<int64_t>(spec.palette.size())) {
            throw GenerationError("shape " + std::to_string(i) + " references a missing palette entry");
        }
        if (!(s.radiusX > 0.0 && s.radiusY > 0.0)) {
            throw GenerationError("shape " + std::to_string(i) + " has a non-positive radius");
        }
        for (int64_t t = 0; t < frames; ++t) {
            if (inside_fraction(s, t, height, width) < kMinInsideFraction) {
                throw GenerationError("shape " + std::to_string(i) + " leaves the frame at frame " + std::to_string(t));
            }
        }
    }
}

SceneSpec sample_scene(uint64_t seed, int64_t frames, int64_t height, int64_t width, const SceneOptions& options) {
    check_geometry(frames, height, width);
    Rng rng(seed);
    SceneSpec spec;
    spec.seed = seed;
    const bool lightBackground = rng.uniform() < 0.5;
    spec.background = hsv_to_rgb(rng.uniform(), rng.uniform(0.0, 0.3),
                                 lightBackground ? rng.uniform(0.85, 1.0) : rng.uniform(0.05, 0.2));
    const int64_t count = rng.range(2, 6);
    const double scale = static_cast<double>(std::min(height, width));

    while (static_cast<int64_t>(spec.palette.size()) < count) {
        Rgb c = hsv_to_rgb(rng.uniform(options.hueMin, options.hueMax), rng.uniform(0.55, 1.0), rng.uniform(0.4, 1.0));
        bool ok = std::abs(c.luminance() - spec.background.luminance()) >= 0.3 &&
                  c.distance(spec.background) >= kMinPaletteDistance;
        for (const auto& other : spec.palette) {
            ok = ok && c.distance(other) >= kMinPaletteDistance;
        }
        if (ok) {
            spec.palette.push_back(c);
        }
    }

    for (int64_t i = 0; i < count; ++i) {
        for (int attempt = 0;; ++attempt) {
            if (attempt > 1000) {
                throw GenerationError("could not place shape " + std::to_string(i) + " inside the frame");
            }
            ShapeSpec s;
            s.kind = static_cast<ShapeKind>(rng.below(3));
            s.colourIndex = i;
            s.radiusX = scale * rng.uniform(0.1, 0.22);
            s.radiusY = s.radiusX * rng.uniform(0.7, 1.3);
            s.centreX = rng.uniform(0.0, static_cast<double>(width - 1));
            s.centreY = rng.uniform(0.0, static_cast<double>(height - 1));
            s.motion = static_cast<MotionKind>(rng.below(3));
            s.speed = scale / 32.0 * rng.uniform(0.3, 1.2);
            s.heading = rng.uniform(0.0, 2.0 * std::numbers::pi);
            s.orbitRadius = scale * rng.uniform(0.1, 0.25);
            bool ok = true;
            for (int64_t t = 0; t < frames && ok; ++t) {
                ok = inside_fraction(s, t, height, width) >= kMinInsideFraction;
            }
            if (ok) {
                spec.shapes.push_back(s);
                break;
            }
        }
    }
    validate_scene(spec, frames, height, width);
    return spec;
}

VideoTensor generate_synthetic_clip(const SceneSpec& spec, int64_t frames, int64_t height, int64_t width) {
    validate_scene(spec, frames, height, width);
    auto video = torch::empty({frames, height, width, 3}, torch::kFloat32);
    auto acc = video.accessor<float, 4>();
    for (int64_t t = 0; t < frames; ++t) {
        for (int64_t y = 0; y < height; ++y) {
            for (int64_t x = 0; x < width; ++x) {
                acc[t][y][x][0] = static_cast<float>(spec.background.r);
                acc[t][y][x][1] = static_cast<float>(spec.background.g);
                acc[t][y][x][2] = static_cast<float>(spec.background.b);
            }
        }
        for (const auto& shape : spec.shapes) {
            const Placement p = place(shape, t);
            const Rgb& c = spec.palette[shape.colourIndex];
            const int64_t ex = static_cast<int64_t>(std::ceil(p.rx)) + 1;
            const int64_t ey = static_cast<int64_t>(std::ceil(p.ry)) + 1;
            for (int64_t y = std::max<int64_t>(0, p.cy - ey); y <= std::min(height - 1, p.cy + ey); ++y) {
                for (int64_t x = std::max<int64_t>(0, p.cx - ex); x <= std::min(width - 1, p.cx + ex); ++x) {
                    if (covers(shape.kind, p, x, y)) {
                        acc[t][y][x][0] = static_cast<float>(c.r);
                        acc[t][y][x][1] = static_cast<float>(c.g);
                        acc[t][y][x][2] = static_cast<float>(c.b);
                    }
                }
            }
        }
    }
    return VideoTensor(video);
}

void to_json(json& j, const ClipRecord& r) {
    j = json{{"clipId", r.clipId}, {"frameCount", r.frameCount}, {"path", r.path},
             {"split", r.split == Split::train ? "train" : "test"}};
}

void from_json(const json& j, ClipRecord& r) {
    j.at("clipId").get_to(r.clipId);
    j.at("frameCount").get_to(r.frameCount);
    j.at("path").get_to(r.path);
    const auto split = j.at("split").get<std::string>();
    if (split != "train" && split != "test") {
        throw IoError("manifest split must be train or test, got '" + split + "'");
    }
    r.split = split == "train" ? Split::train : Split::test;
    if (r.frameCount < 1) {
        throw IoError("manifest clip " + r.clipId + " has frameCount < 1");
    }
}

void write_manifest(const fs::path& path, const std::vector<ClipRecord>& records) {
    if (path.has_parent_path()) {
        fs::create_directories(path.parent_path());
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw IoError("cannot write manifest " + path.string());
    }
    for (const auto& r : records) {
        out << json(r).dump() << "\n";
    }
}

std::vector<ClipRecord> read_manifest(const fs::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot open manifest " + path.string());
    }
    std::vector<ClipRecord> records;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) {
            continue;
        }
        auto j = json::parse(line, nullptr, false);
        if (j.is_discarded()) {
            throw IoError("manifest line is not valid JSON: " + line);
        }
        try {
            records.push_back(j.get<ClipRecord>());
        } catch (const json::exception& e) {
            throw IoError(std::string("malformed manifest record: ") + e.what());
        }
    }
    return records;
}

Selection select_clips(const std::vector<ClipRecord>& manifest, int64_t count, int64_t minFrames) {
    if (manifest.empty()) {
        throw ContractError("select_clips requires a nonempty manifest");
    }
    Selection sel;
    for (const auto& r : manifest) {
        if (r.frameCount >= minFrames) {
            sel.clips.push_back(r);
        }
    }
    std::sort(sel.clips.begin(), sel.clips.end(), [](const ClipRecord& a, const ClipRecord& b) {
        if (a.frameCount != b.frameCount) {
            return a.frameCount < b.frameCount;
        }
        return a.clipId < b.clipId;
    });
    if (static_cast<int64_t>(sel.clips.size()) < count) {
        sel.insufficient = true;
    } else {
        sel.clips.resize(static_cast<size_t>(count));
    }
    return sel;
}

int64_t window_start(int64_t frames, int64_t windowLen, uint64_t seed) {
    if (windowLen < 1 || frames < windowLen) {
        throw ContractError("clip of " + std::to_string(frames) + " frames is shorter than the " +
                            std::to_string(windowLen) + "-frame window");
    }
    Rng rng(seed);
    return static_cast<int64_t>(rng.below(static_cast<uint64_t>(frames - windowLen + 1)));
}

VideoTensor sample_window(const VideoTensor& clip, int64_t windowLen, uint64_t seed) {
    const int64_t start = window_start(clip.frames(), windowLen, seed);
    if (start == 0 && windowLen == clip.frames()) {
        return clip;
    }
    return clip.slice(start, windowLen);
}

torch::Tensor resize_bilinear(const torch::Tensor& image, int64_t outHeight, int64_t outWidth) {
    if (image.dim() != 3 || image.size(0) < 1 || image.size(1) < 1) {
        throw DimensionError("resize expects a nonempty h x w x C tensor");
    }
    const int64_t h = image.size(0);
    const int64_t w = image.size(1);
    const int64_t c = image.size(2);
    if (h == outHeight && w == outWidth) {
        return image.clone();
    }
    auto src = image.to(torch::kFloat64).contiguous();
    auto out = torch::empty({outHeight, outWidth, c}, torch::kFloat64);
    const double* in = src.data_ptr<double>();
    double* dst = out.data_ptr<double>();
    const double sy = static_cast<double>(h) / static_cast<double>(outHeight);
    const double sx = static_cast<double>(w) / static_cast<double>(outWidth);
    for (int64_t y = 0; y < outHeight; ++y) {
        const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, static_cast<double>(h - 1));
        const int64_t y0 = static_cast<int64_t>(std::floor(fy));
        const int64_t y1 = std::min(y0 + 1, h - 1);
        const double wy = fy - static_cast<double>(y0);
        for (int64_t x = 0; x < outWidth; ++x) {
            const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, static_cast<double>(w - 1));
            const int64_t x0 = static_cast<int64_t>(std::floor(fx));
            const int64_t x1 = std::min(x0 + 1, w - 1);
            const double wx = fx - static_cast<double>(x0);
            for (int64_t k = 0; k < c; ++k) {
                const double top = in[(y0 * w + x0) * c + k] * (1.0 - wx) + in[(y0 * w + x1) * c + k] * wx;
                const double bottom = in[(y1 * w + x0) * c + k] * (1.0 - wx) + in[(y1 * w + x1) * c + k] * wx;
                dst[(y * outWidth + x) * c + k] = top * (1.0 - wy) + bottom * wy;
            }
        }
    }
    return out.to(image.scalar_type());
}

torch::Tensor fill_and_crop(const torch::Tensor& frame, int64_t targetHeight, int64_t targetWidth) {
    if (frame.dim() != 3 || frame.size(0) < 1 || frame.size(1) < 1) {
        throw DimensionError("fill_and_crop expects a nonempty h x w x C frame");
    }
    if (targetHeight < 1 || targetWidth < 1) {
        throw DimensionError("fill_and_crop target must be positive");
    }
    const double h = static_cast<double>(frame.size(0));
    const double w = static_cast<double>(frame.size(1));
    const double s = std::max(targetHeight / h, targetWidth / w);
    const int64_t sh = std::max<int64_t>(targetHeight, std::llround(h * s));
    const int64_t sw = std::max<int64_t>(targetWidth, std::llround(w * s));
    auto scaled = resize_bilinear(frame, sh, sw);
    const int64_t y0 = (sh - targetHeight) / 2;
    const int64_t x0 = (sw - targetWidth) / 2;
    return scaled.narrow(0, y0, targetHeight).narrow(1, x0, targetWidth).contiguous();
}

VideoTensor fill_and_crop(const VideoTensor& video, int64_t targetHeight, int64_t targetWidth) {
    if (video.height() == targetHeight && video.width() == targetWidth) {
        return video;
    }
    std::vector<torch::Tensor> frames;
    for (int64_t t = 0; t < video.frames(); ++t) {
        frames.push_back(fill_and_crop(video.data()[t], targetHeight, targetWidth).clamp(0.0, 1.0));
    }
    return VideoTensor(torch::stack(frames));
}

TrainingExample make_training_example(const VideoTensor& clip, const SketchConfig& sketchConfig) {
    return {clip.frame(0), sketch::sketch_video(clip, sketchConfig), clip};
}

fs::path manifest_path(const fs::path& dataRoot) { return dataRoot / "manifest.jsonl"; }

std::vector<ClipRecord> write_corpus(const ExperimentConfig& config, const fs::path& dataRoot) {
    const auto& d = config.data;
    const int64_t srcH = d.sourceHeight > 0 ? d.sourceHeight : d.height;
    const int64_t srcW = d.sourceWidth > 0 ? d.sourceWidth : d.width;
    std::vector<ClipRecord> records;
    for (Split split : {Split::train, Split::test}) {
        const std::string splitName = split == Split::train ? "train" : "test";
        const int64_t count = split == Split::train ? d.trainClips : d.testClips;
        for (int64_t i = 0; i < count; ++i) {
            char id[64];
            std::snprintf(id, sizeof id, "%s_%05lld", splitName.c_str(), static_cast<long long>(i));
            const uint64_t seed = derive_seed(config.rootSeed, id);
            Rng lengthRng(derive_seed(seed, "length"));
            const int64_t frames = lengthRng.range(d.minClipFrames, d.maxClipFrames);
            const auto spec = sample_scene(derive_seed(seed, "scene"), frames, srcH, srcW);
            const auto clip = generate_synthetic_clip(spec, frames, srcH, srcW);
            const std::string rel = splitName + "/" + id;
            io::write_frame_dir(dataRoot / rel, clip);
            records.push_back({id, frames, rel, split});
        }
    }
    write_manifest(manifest_path(dataRoot), records);
    return records;
}

std::vector<LoadedClip> load_split(const ExperimentConfig& config, const fs::path& dataRoot, Split split,
                                   int64_t count) {
    std::vector<ClipRecord> pool;
    for (auto& r : read_manifest(manifest_path(dataRoot))) {
        if (r.split == split) {
            pool.push_back(std::move(r));
        }
    }
    if (pool.empty()) {
        throw ContractError("manifest has no clips in the requested split");
    }
    const auto sel = select_clips(pool, count > 0 ? count : static_cast<int64_t>(pool.size()), config.data.frames);
    std::vector<LoadedClip> out;
    out.reserve(sel.clips.size());
    for (const auto& r : sel.clips) {
        auto video = io::read_frame_dir(dataRoot / r.path);
        if (video.frames() != r.frameCount) {
            throw IoError("clip " + r.clipId + " has " + std::to_string(video.frames()) +
                          " frames on disk, manifest says " + std::to_string(r.frameCount));
        }
        video = sample_window(video, config.data.frames, derive_seed(config.rootSeed, "window/" + r.clipId));
        video = fill_and_crop(video, config.data.height, config.data.width);
        out.push_back({r, std::move(video)});
    }
    return out;
}

}  // namespace sketchcolour::data
