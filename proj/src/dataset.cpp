#include "tvp/dataset.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <set>
#include <stdexcept>

namespace tvp {

namespace {

constexpr std::array<char, 8> kFrameMagic{'T', 'V', 'P', 'F', 'R', 'M', '1', '\0'};
constexpr std::size_t kFrameHeader = 8 + 4 * 4;

void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) {
        out.push_back(static_cast<char>((v >> (8 * i)) & 0xffU));
    }
}

std::uint32_t get_u32(const unsigned char* p) {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

struct FrameHeader {
    int n_frames, channels, height, width;
};

FrameHeader read_header(std::ifstream& in, const std::filesystem::path& path) {
    unsigned char buf[kFrameHeader];
    if (!in.read(reinterpret_cast<char*>(buf), kFrameHeader)) {
        throw std::runtime_error("truncated frame file: " + path.string());
    }
    if (std::memcmp(buf, kFrameMagic.data(), kFrameMagic.size()) != 0) {
        throw std::runtime_error("bad frame file magic: " + path.string());
    }
    FrameHeader h{static_cast<int>(get_u32(buf + 8)), static_cast<int>(get_u32(buf + 12)),
                  static_cast<int>(get_u32(buf + 16)), static_cast<int>(get_u32(buf + 20))};
    if (h.n_frames < 1 || h.channels < 1 || h.height < 1 || h.width < 1) {
        throw std::runtime_error("frame file with empty dimensions: " + path.string());
    }
    return h;
}

void decode_floats(const unsigned char* src, std::size_t n, float* dst) {
    for (std::size_t i = 0; i < n; ++i) {
        dst[i] = std::bit_cast<float>(get_u32(src + 4 * i));
    }
}

}  // namespace

void write_frames(const std::filesystem::path& path, const RawVideo& video) {
    video.validate();
    std::string bytes(kFrameMagic.begin(), kFrameMagic.end());
    put_u32(bytes, static_cast<std::uint32_t>(video.n_frames));
    put_u32(bytes, static_cast<std::uint32_t>(video.channels));
    put_u32(bytes, static_cast<std::uint32_t>(video.height));
    put_u32(bytes, static_cast<std::uint32_t>(video.width));
    bytes.reserve(bytes.size() + 4 * video.pixels.size());
    for (float v : video.pixels) {
        put_u32(bytes, std::bit_cast<std::uint32_t>(v));
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out || !out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()))) {
        throw std::runtime_error("cannot write frame file: " + path.string());
    }
}

RawVideo read_frames(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw std::runtime_error("cannot open frame file: " + path.string());
    }
    const FrameHeader h = read_header(in, path);
    std::vector<int> all(static_cast<std::size_t>(h.n_frames));
    for (int i = 0; i < h.n_frames; ++i) {
        all[static_cast<std::size_t>(i)] = i;
    }
    in.close();
    return read_frames(path, all);
}

RawVideo read_frames(const std::filesystem::path& path, std::span<const int> indices) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw std::runtime_error("cannot open frame file: " + path.string());
    }
    const FrameHeader h = read_header(in, path);
    RawVideo v;
    v.n_frames = static_cast<int>(indices.size());
    v.channels = h.channels;
    v.height = h.height;
    v.width = h.width;
    const std::size_t frame = v.frame_size();
    v.pixels.resize(frame * indices.size());
    std::vector<unsigned char> buf(frame * 4);
    for (std::size_t k = 0; k < indices.size(); ++k) {
        const int i = indices[k];
        if (i < 0 || i >= h.n_frames) {
            throw std::out_of_range("frame index outside " + path.string());
        }
        in.seekg(static_cast<std::streamoff>(kFrameHeader + frame * 4 * static_cast<std::size_t>(i)));
        if (!in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()))) {
            throw std::runtime_error("truncated frame file: " + path.string());
        }
        decode_floats(buf.data(), frame, v.pixels.data() + frame * k);
    }
    return v;
}

nlohmann::json to_json(const SampleRecord& r) {
    return {{"id", r.id},
            {"frames", r.frames_file},
            {"tokens", r.tokens},
            {"gt", {r.gt.start, r.gt.end}},
            {"n_vid", r.n_vid},
            {"duration_s", r.duration_s},
            {"class", r.event_class}};
}

SampleRecord record_from_json(const nlohmann::json& j) {
    SampleRecord r;
    r.id = j.at("id").get<std::string>();
    r.frames_file = j.at("frames").get<std::string>();
    r.tokens = j.at("tokens").get<std::vector<int>>();
    const auto gt = j.at("gt").get<std::vector<double>>();
    if (gt.size() != 2) {
        throw std::invalid_argument("record " + r.id + ": gt must be [start, end]");
    }
    r.gt = {gt[0], gt[1]};
    r.n_vid = j.at("n_vid").get<int>();
    r.duration_s = j.value("duration_s", 0.0);
    r.event_class = j.value("class", -1);
    return r;
}

Dataset Dataset::load(const std::filesystem::path& root) {
    std::ifstream in(root / "manifest.json");
    if (!in) {
        throw std::runtime_error("no manifest.json in " + root.string());
    }
    const nlohmann::json m = nlohmann::json::parse(in);
    Dataset d;
    d.root = root;
    d.spec = m.value("spec", nlohmann::json::object());
    std::map<std::string, std::string> split_of;
    if (m.contains("splits")) {
        for (const auto& [name, ids] : m.at("splits").items()) {
            if (name != "train" && name != "val" && name != "test") {
                throw std::invalid_argument("unknown split '" + name + "'");
            }
            for (const auto& id : ids) {
                split_of[id.get<std::string>()] = name;
            }
        }
    }
    std::set<std::string> seen;
    for (const auto& rj : m.at("records")) {
        SampleRecord r = record_from_json(rj);
        try {
            validate_ground_truth(r.gt);
        } catch (const std::invalid_argument& e) {
            throw std::invalid_argument("record " + r.id + ": " + e.what());
        }
        if (!seen.insert(r.id).second) {
            throw std::invalid_argument("duplicate record id " + r.id);
        }
        auto it = split_of.find(r.id);
        r.split = it == split_of.end() ? "train" : it->second;
        d.records.push_back(std::move(r));
    }
    if (d.records.empty()) {
        throw std::invalid_argument("dataset has no records: " + root.string());
    }
    return d;
}

std::vector<const SampleRecord*> Dataset::split(const std::string& name) const {
    if (name != "all" && name != "train" && name != "val" && name != "test") {
        throw std::invalid_argument("unknown split '" + name + "'");
    }
    std::vector<const SampleRecord*> out;
    for (const auto& r : records) {
        if (name == "all" || r.split == name) {
            out.push_back(&r);
        }
    }
    return out;
}

std::vector<LoadedSample> load_samples(const Dataset& data, const std::string& split, int n_sam) {
    std::vector<LoadedSample> out;
    for (const SampleRecord* r : data.split(split)) {
        LoadedSample s;
        s.record = *r;
        const auto idx = uniform_sample(r->n_vid, n_sam);
        s.clip = read_frames(data.root / r->frames_file, idx);
        s.clip.duration_s = r->duration_s;
        out.push_back(std::move(s));
    }
    return out;
}

}  // namespace tvp
