#include "tvp/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>
#include <stdexcept>

#include "tvp/run_config.hpp"

namespace tvp {

namespace {

using nlohmann::json;

constexpr char kMagic[8] = {'T', 'V', 'P', 'C', 'K', 'P', 'T', '1'};
constexpr int kFormatVersion = 1;

// Every tensor the state carries, in a fixed order. Empty tensors are skipped.
template <class State, class Fn>
void each_tensor(State& s, Fn&& fn) {
    s.params.visit([&](const std::string& n, auto& t) { fn("model." + n, t.shape, t.data); });
    auto& vp = s.prompts.visual;
    fn(std::string("prompt.visual"), std::vector<int>{vp.n_sam, vp.channels, vp.canvas, vp.canvas},
       vp.patterns);
    auto& tp = s.prompts.text;
    fn(std::string("prompt.text"), std::vector<int>{tp.count, tp.width}, tp.vectors);
    s.opt.m.visit([&](const std::string& n, auto& t) { fn("opt.m." + n, t.shape, t.data); });
    s.opt.v.visit([&](const std::string& n, auto& t) { fn("opt.v." + n, t.shape, t.data); });
    const auto flat = [](const auto& v) { return std::vector<int>{static_cast<int>(v.size())}; };
    fn(std::string("opt.visual_m"), flat(s.opt.visual_m), s.opt.visual_m);
    fn(std::string("opt.visual_v"), flat(s.opt.visual_v), s.opt.visual_v);
    fn(std::string("opt.text_m"), flat(s.opt.text_m), s.opt.text_m);
    fn(std::string("opt.text_v"), flat(s.opt.text_v), s.opt.text_v);
}

void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) {
        out.push_back(static_cast<char>((v >> (8 * i)) & 0xffU));
    }
}

std::uint64_t get_u64(const unsigned char* p) {
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) {
        v = (v << 8) | p[i];
    }
    return v;
}

json prompt_meta(const PromptBundle& b) {
    return {{"mode", to_string(b.visual.mode)},
            {"visual_width", b.visual.width},
            {"text_count", b.text.count},
            {"text_width", b.text.width}};
}

}  // namespace

std::string serialize_checkpoint(const TrainState& state) {
    json dir = json::array();
    std::uint64_t offset = 0;
    std::vector<const std::vector<double>*> payloads;
    each_tensor(state, [&](const std::string& name, const std::vector<int>& shape,
                           const std::vector<double>& data) {
        if (data.empty()) {
            return;
        }
        if (Tensor::count(shape) != data.size()) {
            throw std::logic_error("checkpoint: tensor " + name + " does not match its shape");
        }
        dir.push_back({{"name", name}, {"dtype", "f32"}, {"shape", shape}, {"offset", offset}});
        offset += 4 * data.size();
        payloads.push_back(&data);
    });
    const json header = {{"format", "tvp-checkpoint"},
                         {"format_version", kFormatVersion},
                         {"stage", to_string(state.stage)},
                         {"step", state.step},
                         {"rng_state", state.rng_state},
                         {"model", to_json(state.model)},
                         {"prompt_config", to_json(state.prompt_cfg)},
                         {"prompts", prompt_meta(state.prompts)},
                         {"optimizer", {{"t", state.opt.t}}},
                         {"config", state.config_echo},
                         {"tensors", dir}};
    const std::string text = header.dump();
    std::string out(kMagic, kMagic + 8);
    put_u64(out, text.size());
    out += text;
    out.reserve(out.size() + offset);
    for (const auto* p : payloads) {
        for (double x : *p) {
            const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(x));
            for (int i = 0; i < 4; ++i) {
                out.push_back(static_cast<char>((bits >> (8 * i)) & 0xffU));
            }
        }
    }
    return out;
}

TrainState parse_checkpoint(const std::string& bytes) {
    const auto* raw = reinterpret_cast<const unsigned char*>(bytes.data());
    if (bytes.size() < 16 || std::memcmp(bytes.data(), kMagic, 8) != 0) {
        throw std::runtime_error("not a checkpoint (bad magic)");
    }
    const std::uint64_t hlen = get_u64(raw + 8);
    if (hlen > bytes.size() - 16) {
        throw std::runtime_error("checkpoint header length exceeds file size");
    }
    json h;
    try {
        h = json::parse(bytes.begin() + 16, bytes.begin() + 16 + static_cast<std::ptrdiff_t>(hlen));
    } catch (const json::parse_error& e) {
        throw std::runtime_error(std::string("checkpoint header is not JSON: ") + e.what());
    }
    if (h.value("format_version", 0) != kFormatVersion) {
        throw std::runtime_error("unsupported checkpoint format version");
    }
    const std::size_t payload_start = 16 + hlen;
    const std::size_t payload_size = bytes.size() - payload_start;

    TrainState s;
    s.model = model_config_from_json(h.at("model"));
    s.model.validate();
    s.prompt_cfg = prompt_config_from_json(h.at("prompt_config"));
    s.stage = stage_from_string(h.at("stage").get<std::string>());
    s.step = h.at("step").get<long>();
    s.rng_state = h.at("rng_state").get<std::string>();
    s.config_echo = h.at("config");
    s.opt.t = h.at("optimizer").at("t").get<long>();

    const json& pm = h.at("prompts");
    s.params = ModelParams::zeros(s.model);
    s.prompts = identity_prompts(s.model.n_sam, s.model.channels, s.model.canvas,
                                 pm.at("text_width").get<int>());
    s.prompts.visual.mode = prompt_mode_from_string(pm.at("mode").get<std::string>());
    s.prompts.visual.width = pm.at("visual_width").get<int>();
    s.prompts.text.count = pm.at("text_count").get<int>();
    s.prompts.text.vectors.assign(
        static_cast<std::size_t>(s.prompts.text.count) * s.prompts.text.width, 0.0);

    std::map<std::string, json> dir;
    for (const auto& e : h.at("tensors")) {
        if (e.at("dtype").get<std::string>() != "f32") {
            throw std::runtime_error("checkpoint tensor with unsupported dtype");
        }
        dir[e.at("name").get<std::string>()] = e;
    }
    const bool has_model_moments = dir.count("opt.m.head_b2") > 0;
    if (has_model_moments) {
        s.opt.m = ModelParams::zeros(s.model);
        s.opt.v = s.opt.m;
    }
    for (const char* k : {"opt.visual_m", "opt.visual_v", "opt.text_m", "opt.text_v"}) {
        if (dir.count(k)) {
            auto shape = dir[k].at("shape").get<std::vector<int>>();
            auto& vec = std::string(k) == "opt.visual_m"   ? s.opt.visual_m
                        : std::string(k) == "opt.visual_v" ? s.opt.visual_v
                        : std::string(k) == "opt.text_m"   ? s.opt.text_m
                                                           : s.opt.text_v;
            vec.assign(Tensor::count(shape), 0.0);
        }
    }
    std::size_t filled = 0;
    each_tensor(s, [&](const std::string& name, const std::vector<int>& shape,
                       std::vector<double>& data) {
        if (data.empty()) {
            return;
        }
        auto it = dir.find(name);
        if (it == dir.end()) {
            throw std::runtime_error("checkpoint is missing tensor " + name);
        }
        const auto stored = it->second.at("shape").get<std::vector<int>>();
        if (stored != shape) {
            throw std::runtime_error("checkpoint tensor " + name + " has shape " +
                                     shape_string(stored) + ", expected " + shape_string(shape));
        }
        const auto off = it->second.at("offset").get<std::uint64_t>();
        if (off > payload_size || 4 * data.size() > payload_size - off) {
            throw std::runtime_error("checkpoint tensor " + name + " runs past the end of file");
        }
        const unsigned char* p = raw + payload_start + off;
        for (std::size_t i = 0; i < data.size(); ++i) {
            const std::uint32_t bits = static_cast<std::uint32_t>(p[4 * i]) |
                                       (static_cast<std::uint32_t>(p[4 * i + 1]) << 8) |
                                       (static_cast<std::uint32_t>(p[4 * i + 2]) << 16) |
                                       (static_cast<std::uint32_t>(p[4 * i + 3]) << 24);
            data[i] = static_cast<double>(std::bit_cast<float>(bits));
        }
        ++filled;
    });
    if (filled != dir.size()) {
        throw std::runtime_error("checkpoint holds tensors this model does not use");
    }
    return s;
}

void save_checkpoint(const TrainState& state, const std::filesystem::path& path) {
    const std::string bytes = serialize_checkpoint(state);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out || !out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()))) {
        throw std::runtime_error("cannot write checkpoint " + path.string());
    }
}

TrainState load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw std::runtime_error("cannot open checkpoint " + path.string());
    }
    const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return parse_checkpoint(bytes);
}

TrainState round_to_storage(const TrainState& state) {
    TrainState s = state;
    each_tensor(s, [](const std::string&, const std::vector<int>&, std::vector<double>& data) {
        for (double& x : data) {
            x = static_cast<double>(static_cast<float>(x));
        }
    });
    return s;
}

}  // namespace tvp
