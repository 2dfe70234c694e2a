#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "tvp/dataset.hpp"

namespace tvp {

struct SyntheticSpec {
    int n_samples = 1000;
    int min_frames = 24;
    int max_frames = 48;
    int height = 24;
    int width = 32;
    int classes = 8;
    double min_duration = 0.1;  // event length as a fraction of the video
    double max_duration = 0.5;
    int vocab = 64;
    int min_query = 4;  // including BOS and EOS
    int max_query = 8;
    double background = 0.1;
    double noise = 0.02;  // per-pixel uniform noise amplitude
    double fps = 8.0;
    std::uint64_t seed = 0;

    /// Throws std::invalid_argument on inconsistent settings.
    void validate() const;
    bool operator==(const SyntheticSpec&) const = default;
};

nlohmann::json to_json(const SyntheticSpec& s);
/// Fills fields present in j; unknown keys throw std::invalid_argument.
SyntheticSpec synthetic_spec_from_json(const nlohmann::json& j, SyntheticSpec base = {});

/// Solid block drawn while the event is active.
struct ClassPattern {
    int row = 0;
    int col = 0;
    int rows = 0;
    int cols = 0;
    std::array<float, 3> color{};
};

/// Per-class block table; positions stay clear of an 8-pixel prompt ring at the desk canvas.
std::vector<ClassPattern> class_table(const SyntheticSpec& spec);

struct GeneratedSample {
    SampleRecord record;
    RawVideo video;
};

/// Draws sample `index`; its stream depends only on (spec.seed, index).
GeneratedSample generate_sample(const SyntheticSpec& spec, int index);

/// Split of each id: 8:1:1 by rank of a seeded hash of the id.
std::vector<std::string> assign_splits(const std::vector<std::string>& ids, std::uint64_t seed);

/// Writes manifest.json and all frame files; returns the manifest document.
nlohmann::json gen_dataset(const SyntheticSpec& spec, const std::filesystem::path& out_dir);

struct SelfCheck {
    int samples = 0;
    int intensity_failures = 0;  // gap between event and background frames < 3x noise
    int class_failures = 0;      // query class token differs from the rendered class
    int duration_failures = 0;
    double min_intensity_gap = 0.0;
};

/// Verifies generator guarantees on in-memory samples.
SelfCheck self_check(const SyntheticSpec& spec, const std::vector<GeneratedSample>& samples);

/// Thresholds per-frame mean intensity halfway between background and event
/// levels and returns the span of frames above it.
TimeInterval intensity_oracle(const RawVideo& video, double threshold);
double oracle_threshold(const SyntheticSpec& spec);

}  // namespace tvp
