#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "tvp/frame_pipeline.hpp"
#include "tvp/interval_loss.hpp"

namespace tvp {

inline constexpr int kPadToken = 0;
inline constexpr int kBosToken = 1;
inline constexpr int kEosToken = 2;
inline constexpr int kReservedTokens = 3;  // class tokens start here

/// One (video, query, ground truth) triple as listed in manifest.json.
struct SampleRecord {
    std::string id;
    std::string frames_file;  // relative to the dataset root
    std::vector<int> tokens;
    TimeInterval gt;
    int n_vid = 0;
    double duration_s = 0.0;
    int event_class = -1;  // analysis only, never fed to the model
    std::string split;

    bool operator==(const SampleRecord&) const = default;
};

/// A dataset directory: manifest.json plus one <id>.frames file per sample.
struct Dataset {
    std::filesystem::path root;
    nlohmann::json spec;  // generator echo, kept verbatim
    std::vector<SampleRecord> records;

    /// Parses manifest.json; rejects degenerate ground truths and unknown splits.
    static Dataset load(const std::filesystem::path& root);
    std::vector<const SampleRecord*> split(const std::string& name) const;
};

/// A sample whose clip holds only the frames selected by uniform sampling, so
/// preprocess(clip, {n_sam, S}) equals preprocess(full video, {n_sam, S}).
struct LoadedSample {
    SampleRecord record;
    RawVideo clip;
};

/// Loads the sampled frames of every record in the split ("all" for every record).
std::vector<LoadedSample> load_samples(const Dataset& data, const std::string& split, int n_sam);

/// Binary frame file: "TVPFRM1\0", u32 LE n_frames, channels, height, width, then f32 LE pixels.
void write_frames(const std::filesystem::path& path, const RawVideo& video);
RawVideo read_frames(const std::filesystem::path& path);
/// Reads only the listed frame indices (in order) from a frame file.
RawVideo read_frames(const std::filesystem::path& path, std::span<const int> indices);

nlohmann::json to_json(const SampleRecord& r);
SampleRecord record_from_json(const nlohmann::json& j);

}  // namespace tvp
