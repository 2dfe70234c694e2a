#include "tvp/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

#include "tvp/rng.hpp"

namespace tvp {

namespace {

constexpr std::array<std::array<float, 3>, 8> kPalette{{{0.9F, 0.3F, 0.3F},
                                                        {0.3F, 0.9F, 0.3F},
                                                        {0.3F, 0.3F, 0.9F},
                                                        {0.9F, 0.9F, 0.3F},
                                                        {0.9F, 0.3F, 0.9F},
                                                        {0.3F, 0.9F, 0.9F},
                                                        {0.9F, 0.6F, 0.2F},
                                                        {0.6F, 0.6F, 0.6F}}};

std::uint64_t fnv1a(const std::string& s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h = (h ^ c) * 0x100000001b3ULL;
    }
    return h;
}

std::string sample_id(int index) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "s%05d", index);
    return buf;
}

// Source pixels hidden by a ring of width canvas/8 once the longer side is scaled to the canvas.
int ring_margin(const SyntheticSpec& s) { return (std::max(s.height, s.width) + 7) / 8; }

double frame_mean(const RawVideo& v, int f) {
    double sum = 0.0;
    for (float x : v.frame(f)) {
        sum += x;
    }
    return sum / static_cast<double>(v.frame_size());
}

}  // namespace

void SyntheticSpec::validate() const {
    if (n_samples < 1) {
        throw std::invalid_argument("synthetic spec: n_samples must be >= 1");
    }
    if (height < 16 || width < 16) {
        throw std::invalid_argument("synthetic spec: frames must be at least 16x16");
    }
    if (min_frames < 2 || max_frames < min_frames) {
        throw std::invalid_argument("synthetic spec: need 2 <= min_frames <= max_frames");
    }
    if (!(min_duration > 0.0 && min_duration <= max_duration && max_duration <= 1.0)) {
        throw std::invalid_argument("synthetic spec: need 0 < min_duration <= max_duration <= 1");
    }
    if (std::ceil(min_duration * min_frames) > std::floor(max_duration * min_frames)) {
        throw std::invalid_argument("synthetic spec: shortest video cannot hold an event in range");
    }
    if (classes < 1 || classes > vocab - kReservedTokens - 1) {
        throw std::invalid_argument(
            "synthetic spec: classes must leave at least one filler token in the vocabulary");
    }
    if (min_query < 3 || max_query < min_query) {
        throw std::invalid_argument("synthetic spec: need 3 <= min_query <= max_query");
    }
    if (!(noise >= 0.0) || !(background >= 0.0) || background + noise > 1.0 || !(fps > 0.0)) {
        throw std::invalid_argument("synthetic spec: bad intensity or fps settings");
    }
}

nlohmann::json to_json(const SyntheticSpec& s) {
    return {{"n_samples", s.n_samples},     {"min_frames", s.min_frames},
            {"max_frames", s.max_frames},   {"height", s.height},
            {"width", s.width},             {"classes", s.classes},
            {"min_duration", s.min_duration}, {"max_duration", s.max_duration},
            {"vocab", s.vocab},             {"min_query", s.min_query},
            {"max_query", s.max_query},     {"background", s.background},
            {"noise", s.noise},             {"fps", s.fps},
            {"seed", s.seed}};
}

SyntheticSpec synthetic_spec_from_json(const nlohmann::json& j, SyntheticSpec s) {
    for (const auto& [key, v] : j.items()) {
        if (key == "n_samples") s.n_samples = v.get<int>();
        else if (key == "min_frames") s.min_frames = v.get<int>();
        else if (key == "max_frames") s.max_frames = v.get<int>();
        else if (key == "height") s.height = v.get<int>();
        else if (key == "width") s.width = v.get<int>();
        else if (key == "classes") s.classes = v.get<int>();
        else if (key == "min_duration") s.min_duration = v.get<double>();
        else if (key == "max_duration") s.max_duration = v.get<double>();
        else if (key == "vocab") s.vocab = v.get<int>();
        else if (key == "min_query") s.min_query = v.get<int>();
        else if (key == "max_query") s.max_query = v.get<int>();
        else if (key == "background") s.background = v.get<double>();
        else if (key == "noise") s.noise = v.get<double>();
        else if (key == "fps") s.fps = v.get<double>();
        else if (key == "seed") s.seed = v.get<std::uint64_t>();
        else throw std::invalid_argument("unknown key 'data." + key + "'");
    }
    return s;
}

std::vector<ClassPattern> class_table(const SyntheticSpec& spec) {
    const int m = ring_margin(spec);
    const int inner_rows = spec.height - 2 * m;
    const int inner_cols = spec.width - 2 * m;
    const int rows = std::max(1, inner_rows * 3 / 4);
    const int cols = std::max(1, inner_cols * 2 / 3);
    const int slack_r = std::max(0, inner_rows - rows);
    const int slack_c = std::max(0, inner_cols - cols);
    std::vector<ClassPattern> table;
    for (int k = 0; k < spec.classes; ++k) {
        ClassPattern p;
        p.rows = rows;
        p.cols = cols;
        p.row = m + (k % 2) * slack_r;
        p.col = m + ((k / 2) % 4) * slack_c / 3;
        p.color = kPalette[static_cast<std::size_t>(k) % kPalette.size()];
        // Beyond the palette, dim successive cycles so every class stays distinct.
        const float scale = 1.0F - 0.1F * static_cast<float>((k / 8) % 4);
        for (float& c : p.color) {
            c *= scale;
        }
        table.push_back(p);
    }
    return table;
}

GeneratedSample generate_sample(const SyntheticSpec& spec, int index) {
    Rng rng(derive_seed(spec.seed, static_cast<std::uint64_t>(index) + 1));
    GeneratedSample s;
    SampleRecord& r = s.record;
    r.id = sample_id(index);
    r.frames_file = r.id + ".frames";
    const int n = uniform_int(rng, spec.min_frames, spec.max_frames);
    const int len_lo = static_cast<int>(std::ceil(spec.min_duration * n - 1e-9));
    const int len_hi = static_cast<int>(std::floor(spec.max_duration * n + 1e-9));
    const int len = uniform_int(rng, std::max(1, len_lo), std::max(1, len_hi));
    const int f0 = uniform_int(rng, 0, n - len);
    const int k = uniform_int(rng, 0, spec.classes - 1);
    r.n_vid = n;
    r.duration_s = n / spec.fps;
    r.gt = {static_cast<double>(f0) / n, static_cast<double>(f0 + len) / n};
    r.event_class = k;

    const int q = uniform_int(rng, spec.min_query, spec.max_query);
    const int filler_lo = kReservedTokens + spec.classes;
    r.tokens.push_back(kBosToken);
    r.tokens.push_back(kReservedTokens + k);
    for (int i = 0; i < q - 3; ++i) {
        r.tokens.push_back(uniform_int(rng, filler_lo, spec.vocab - 1));
    }
    r.tokens.push_back(kEosToken);

    RawVideo& v = s.video;
    v.n_frames = n;
    v.channels = 3;
    v.height = spec.height;
    v.width = spec.width;
    v.duration_s = r.duration_s;
    v.pixels.resize(v.frame_size() * static_cast<std::size_t>(n));
    for (float& x : v.pixels) {
        x = static_cast<float>(spec.background + uniform(rng, -spec.noise, spec.noise));
    }
    const ClassPattern pat = class_table(spec)[static_cast<std::size_t>(k)];
    const std::size_t plane = static_cast<std::size_t>(spec.height) * spec.width;
    for (int f = f0; f < f0 + len; ++f) {
        for (int c = 0; c < 3; ++c) {
            float* p = v.pixels.data() + v.frame_size() * f + plane * c;
            for (int y = pat.row; y < pat.row + pat.rows; ++y) {
                for (int x = pat.col; x < pat.col + pat.cols; ++x) {
                    const double val = pat.color[static_cast<std::size_t>(c)] +
                                       uniform(rng, -spec.noise, spec.noise);
                    p[y * spec.width + x] = static_cast<float>(std::clamp(val, 0.0, 1.0));
                }
            }
        }
    }
    return s;
}

std::vector<std::string> assign_splits(const std::vector<std::string>& ids, std::uint64_t seed) {
    const std::size_t n = ids.size();
    std::vector<std::size_t> order(n);
    std::vector<std::uint64_t> key(n);
    for (std::size_t i = 0; i < n; ++i) {
        order[i] = i;
        key[i] = derive_seed(seed ^ 0x73706c6974ULL, fnv1a(ids[i]));
    }
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return key[a] != key[b] ? key[a] < key[b] : ids[a] < ids[b];
    });
    const auto n_train = static_cast<std::size_t>(std::llround(0.8 * static_cast<double>(n)));
    const auto n_val = static_cast<std::size_t>(std::llround(0.1 * static_cast<double>(n)));
    std::vector<std::string> split(n);
    for (std::size_t rank = 0; rank < n; ++rank) {
        split[order[rank]] = rank < n_train ? "train" : rank < n_train + n_val ? "val" : "test";
    }
    return split;
}

nlohmann::json gen_dataset(const SyntheticSpec& spec, const std::filesystem::path& out_dir) {
    spec.validate();
    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    if (ec || !std::filesystem::is_directory(out_dir)) {
        throw std::runtime_error("cannot create output directory " + out_dir.string());
    }
    std::vector<SampleRecord> records;
    std::vector<std::string> ids;
    for (int i = 0; i < spec.n_samples; ++i) {
        GeneratedSample s = generate_sample(spec, i);
        write_frames(out_dir / s.record.frames_file, s.video);
        ids.push_back(s.record.id);
        records.push_back(std::move(s.record));
    }
    const auto split = assign_splits(ids, spec.seed);
    nlohmann::json m;
    m["format"] = "tvp-dataset";
    m["version"] = 1;
    m["spec"] = to_json(spec);
    m["records"] = nlohmann::json::array();
    nlohmann::json splits = {{"train", nlohmann::json::array()},
                             {"val", nlohmann::json::array()},
                             {"test", nlohmann::json::array()}};
    for (std::size_t i = 0; i < records.size(); ++i) {
        m["records"].push_back(to_json(records[i]));
        splits[split[i]].push_back(records[i].id);
    }
    m["splits"] = splits;
    std::ofstream out(out_dir / "manifest.json", std::ios::trunc);
    out << m.dump(1) << '\n';
    if (!out) {
        throw std::runtime_error("cannot write manifest in " + out_dir.string());
    }
    return m;
}

double oracle_threshold(const SyntheticSpec& spec) {
    const auto table = class_table(spec);
    double weakest = 1.0;
    for (const auto& p : table) {
        const double area = static_cast<double>(p.rows * p.cols) / (spec.height * spec.width);
        const double level = (p.color[0] + p.color[1] + p.color[2]) / 3.0;
        weakest = std::min(weakest, area * (level - spec.background));
    }
    return spec.background + 0.5 * weakest;
}

TimeInterval intensity_oracle(const RawVideo& video, double threshold) {
    int first = -1;
    int last = -1;
    for (int f = 0; f < video.n_frames; ++f) {
        if (frame_mean(video, f) > threshold) {
            if (first < 0) {
                first = f;
            }
            last = f;
        }
    }
    if (first < 0) {
        return {0.0, 0.0};
    }
    return {static_cast<double>(first) / video.n_frames,
            static_cast<double>(last + 1) / video.n_frames};
}

SelfCheck self_check(const SyntheticSpec& spec, const std::vector<GeneratedSample>& samples) {
    SelfCheck out;
    out.min_intensity_gap = 1e300;
    for (const auto& s : samples) {
        ++out.samples;
        const auto& r = s.record;
        const int f0 = static_cast<int>(std::lround(r.gt.start * r.n_vid));
        const int f1 = static_cast<int>(std::lround(r.gt.end * r.n_vid));
        double in_sum = 0.0;
        double out_sum = 0.0;
        for (int f = 0; f < r.n_vid; ++f) {
            (f >= f0 && f < f1 ? in_sum : out_sum) += frame_mean(s.video, f);
        }
        const int n_in = f1 - f0;
        const int n_out = r.n_vid - n_in;
        if (n_out > 0) {
            const double gap = std::abs(in_sum / n_in - out_sum / n_out);
            out.min_intensity_gap = std::min(out.min_intensity_gap, gap);
            if (gap < 3.0 * spec.noise) {
                ++out.intensity_failures;
            }
        }
        if (r.tokens.size() < 2 || r.tokens[1] != kReservedTokens + r.event_class) {
            ++out.class_failures;
        }
        const double d = r.gt.duration();
        if (d < spec.min_duration - 1e-12 || d > spec.max_duration + 1e-12) {
            ++out.duration_failures;
        }
    }
    return out;
}

}  // namespace tvp
