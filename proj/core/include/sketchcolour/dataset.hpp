#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>
#include <torch/types.h>

#include "sketchcolour/config.hpp"
#include "sketchcolour/tensor_types.hpp"

namespace sketchcolour::data {

struct Rgb {
    double r = 0.0;
    double g = 0.0;
    double b = 0.0;

    double luminance() const { return 0.299 * r + 0.587 * g + 0.114 * b; }
    double distance(const Rgb& other) const;
    bool operator==(const Rgb&) const = default;
};

enum class ShapeKind { ellipse, rectangle, triangle };
enum class MotionKind { linear, circular, scale };

struct ShapeSpec {
    ShapeKind kind = ShapeKind::ellipse;
    int64_t colourIndex = 0;
    double centreX = 0.0;
    double centreY = 0.0;
    double radiusX = 4.0;
    double radiusY = 4.0;
    MotionKind motion = MotionKind::linear;
    double speed = 0.0;    // pixels per frame
    double heading = 0.0;  // radians; start phase for circular motion
    double orbitRadius = 6.0;
};

/// Flat-shaded moving-shape scene. Shapes are painted in order.
struct SceneSpec {
    uint64_t seed = 0;
    std::vector<Rgb> palette;
    Rgb background{1.0, 1.0, 1.0};
    std::vector<ShapeSpec> shapes;

    int64_t num_shapes() const { return static_cast<int64_t>(shapes.size()); }
};

struct SceneOptions {
    // Hue window for shape colours, in turns [0,1).
    double hueMin = 0.0;
    double hueMax = 1.0;
};

inline constexpr double kMinPaletteDistance = 0.15;
inline constexpr double kMinInsideFraction = 0.6;

/// Deterministically draws a valid scene for the given clip geometry.
SceneSpec sample_scene(uint64_t seed, int64_t frames, int64_t height, int64_t width, const SceneOptions& options = {});

/// Throws GenerationError when the scene breaks the palette or stay-in-frame rules.
void validate_scene(const SceneSpec& spec, int64_t frames, int64_t height, int64_t width);

/// Fraction of the shape's rasterised area that lies inside the frame at frame t.
double inside_fraction(const ShapeSpec& shape, int64_t t, int64_t height, int64_t width);

VideoTensor generate_synthetic_clip(const SceneSpec& spec, int64_t frames, int64_t height, int64_t width);

enum class Split { train, test };

struct ClipRecord {
    std::string clipId;
    int64_t frameCount = 0;
    std::string path;
    Split split = Split::train;

    bool operator==(const ClipRecord&) const = default;
};

void to_json(nlohmann::json& j, const ClipRecord& r);
void from_json(const nlohmann::json& j, ClipRecord& r);

/// JSON-lines manifest, one ClipRecord per line.
void write_manifest(const std::filesystem::path& path, const std::vector<ClipRecord>& records);
std::vector<ClipRecord> read_manifest(const std::filesystem::path& path);

struct Selection {
    std::vector<ClipRecord> clips;
    bool insufficient = false;  // fewer eligible clips than requested
};

/// Keeps clips with at least minFrames frames, shortest first (clipId breaks ties),
/// and returns the first `count`.
Selection select_clips(const std::vector<ClipRecord>& manifest, int64_t count, int64_t minFrames = 17);

/// Uniform start index in [0, frames - windowLen] drawn from `seed`.
int64_t window_start(int64_t frames, int64_t windowLen, uint64_t seed);
VideoTensor sample_window(const VideoTensor& clip, int64_t windowLen, uint64_t seed);

/// Bilinear resize with half-pixel centres of an h x w x C tensor.
torch::Tensor resize_bilinear(const torch::Tensor& image, int64_t outHeight, int64_t outWidth);

/// Scale to cover the target (aspect preserved), then centre-crop.
torch::Tensor fill_and_crop(const torch::Tensor& frame, int64_t targetHeight, int64_t targetWidth);
VideoTensor fill_and_crop(const VideoTensor& video, int64_t targetHeight, int64_t targetWidth);

struct TrainingExample {
    VideoTensor reference;    // 1 x H x W x 3, coloured first frame
    VideoTensor sketches;     // T x H x W x 3, binary
    VideoTensor groundTruth;  // T x H x W x 3
};

TrainingExample make_training_example(const VideoTensor& clip, const SketchConfig& sketchConfig);

/// Corpus layout under a data root: <root>/<split>/<clipId>/frame_*.png and <root>/manifest.jsonl.
std::filesystem::path manifest_path(const std::filesystem::path& dataRoot);

/// Renders the synthetic train/test corpus and its manifest. Returns the records written.
std::vector<ClipRecord> write_corpus(const ExperimentConfig& config, const std::filesystem::path& dataRoot);

struct LoadedClip {
    ClipRecord record;
    VideoTensor video;  // windowed and brought to target resolution
};

/// Applies clip selection, seeded windowing and fill-and-crop to one split.
/// count <= 0 loads every clip in the split.
std::vector<LoadedClip> load_split(const ExperimentConfig& config, const std::filesystem::path& dataRoot, Split split,
                                   int64_t count);

}  // namespace sketchcolour::data
