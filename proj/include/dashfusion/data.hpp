#pragma once

// Synthetic three-modality sentiment data and its on-disk layout.
//
// Each sample carries a label y in [-scale, scale]. Text tokens come from a
// vocabulary split into positive words [0, V/8), negative words [V/8, V/4)
// and neutral words [V/4, V); the positive share rises and the negative share
// falls linearly with y. Audio and vision frames have "signal" dimensions
// whose time-mean is shifted by informativeness * y / scale, and nuisance
// dimensions carrying a label-free sinusoid; both get Gaussian noise.
//
// <dir>/{train,valid,test}/ holds manifest.json plus text.dfts (uint32),
// audio.dfts, vision.dfts and labels.dfts (float32).

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dashfusion/dfts.hpp"
#include "dashfusion/errors.hpp"
#include "dashfusion/modality.hpp"
#include "dashfusion/rng.hpp"
#include "dashfusion/tensor.hpp"

namespace dashfusion {

inline constexpr int kDatasetFormatVersion = 1;

struct SynthConfig {
    std::size_t n_samples = 2000;
    std::size_t text_len = 24;
    std::size_t audio_len = 96;
    std::size_t vision_len = 48;
    std::size_t audio_dim = 20;
    std::size_t vision_dim = 35;
    std::size_t vocab_size = 256;
    double label_scale = 3.0;
    double text_noise = 0.2;    // probability a token is replaced by a uniformly random id
    double audio_noise = 1.0;   // Gaussian sigma
    double vision_noise = 1.0;
    double informativeness = 1.0;
    std::array<double, 3> modality_weights{1.0 / 3, 1.0 / 3, 1.0 / 3};  // text, audio, vision
    std::size_t signal_dims = 4;
    double sentiment_rate = 0.5;  // share of non-noise tokens that are sentiment words
    std::uint64_t seed = 0;

    void validate() const {
        if (n_samples == 0 || text_len == 0 || audio_len == 0 || vision_len == 0 || audio_dim == 0 || vision_dim == 0) {
            throw ConfigError("synth: sample count, lengths and dims must be positive");
        }
        if (vocab_size < 8) throw ConfigError("synth: vocabulary needs at least 8 ids");
        if (!(label_scale > 0)) throw ConfigError("synth: label_scale must be positive");
        for (double p : {text_noise, sentiment_rate}) {
            if (!(p >= 0 && p <= 1)) throw ConfigError("synth: text_noise and sentiment_rate must lie in [0, 1]");
        }
        if (!(audio_noise >= 0) || !(vision_noise >= 0)) throw ConfigError("synth: noise levels must be non-negative");
        if (!(informativeness >= 0)) throw ConfigError("synth: informativeness must be non-negative");
        double total = 0;
        for (double w : modality_weights) {
            if (!(w >= 0)) throw ConfigError("synth: modality weights must be non-negative");
            total += w;
        }
        if (std::abs(total - 1.0) > 1e-9) throw ConfigError("synth: modality weights must sum to 1");
        if (signal_dims == 0 || signal_dims > std::min(audio_dim, vision_dim)) {
            throw ConfigError("synth: signal_dims must be in [1, min(audio_dim, vision_dim)]");
        }
    }

    /// Global informativeness times the modality weight relative to the largest weight.
    double modality_informativeness(Modality m) const {
        const double top = *std::max_element(modality_weights.begin(), modality_weights.end());
        return top > 0 ? informativeness * modality_weights[static_cast<std::size_t>(m)] / top : 0.0;
    }

    std::size_t seq_len(Modality m) const {
        return m == Modality::text ? text_len : m == Modality::audio ? audio_len : vision_len;
    }
};

inline void to_json(nlohmann::json& j, const SynthConfig& c) {
    j = nlohmann::json{{"n_samples", c.n_samples},
                       {"text_len", c.text_len},
                       {"audio_len", c.audio_len},
                       {"vision_len", c.vision_len},
                       {"audio_dim", c.audio_dim},
                       {"vision_dim", c.vision_dim},
                       {"vocab_size", c.vocab_size},
                       {"label_scale", c.label_scale},
                       {"text_noise", c.text_noise},
                       {"audio_noise", c.audio_noise},
                       {"vision_noise", c.vision_noise},
                       {"informativeness", c.informativeness},
                       {"modality_weights", c.modality_weights},
                       {"signal_dims", c.signal_dims},
                       {"sentiment_rate", c.sentiment_rate},
                       {"seed", c.seed}};
}

/// Missing keys keep their defaults; unknown keys are rejected.
inline void from_json(const nlohmann::json& j, SynthConfig& c) {
    static const std::array<const char*, 16> keys{"n_samples",  "text_len",     "audio_len",       "vision_len",
                                                  "audio_dim",  "vision_dim",   "vocab_size",      "label_scale",
                                                  "text_noise", "audio_noise",  "vision_noise",    "informativeness",
                                                  "modality_weights", "signal_dims", "sentiment_rate", "seed"};
    for (const auto& [k, v] : j.items()) {
        if (std::find_if(keys.begin(), keys.end(), [&](const char* s) { return k == s; }) == keys.end()) {
            throw ConfigError("synth: unknown key '" + k + "'");
        }
    }
    auto get = [&](const char* key, auto& field) {
        if (j.contains(key)) j.at(key).get_to(field);
    };
    get("n_samples", c.n_samples);
    get("text_len", c.text_len);
    get("audio_len", c.audio_len);
    get("vision_len", c.vision_len);
    get("audio_dim", c.audio_dim);
    get("vision_dim", c.vision_dim);
    get("vocab_size", c.vocab_size);
    get("label_scale", c.label_scale);
    get("text_noise", c.text_noise);
    get("audio_noise", c.audio_noise);
    get("vision_noise", c.vision_noise);
    get("informativeness", c.informativeness);
    get("modality_weights", c.modality_weights);
    get("signal_dims", c.signal_dims);
    get("sentiment_rate", c.sentiment_rate);
    get("seed", c.seed);
}

struct Sample {
    std::vector<std::uint32_t> tokens;  // [T_t]
    Tensor<double> audio;               // [T_a x d_a]
    Tensor<double> vision;              // [T_v x d_v]
    double label = 0;
};

enum class TokenKind { positive, negative, neutral };

inline TokenKind token_kind(std::uint32_t id, std::size_t vocab_size) {
    const std::size_t block = vocab_size / 8;
    if (id < block) return TokenKind::positive;
    if (id < 2 * block) return TokenKind::negative;
    return TokenKind::neutral;
}

/// Per-token probabilities of a positive and a negative word for label y,
/// before random replacement.
inline std::array<double, 2> sentiment_word_rates(double y, const SynthConfig& cfg) {
    const double u = std::clamp(cfg.modality_informativeness(Modality::text) * y / cfg.label_scale, -1.0, 1.0);
    return {cfg.sentiment_rate * (1 + u) / 2, cfg.sentiment_rate * (1 - u) / 2};
}

/// Frames per cycle differ by modality so the streams are not aligned in time.
inline std::size_t signal_cycles(Modality m) { return m == Modality::audio ? 3 : 2; }

namespace detail {

inline Tensor<double> synth_frames(double y, const SynthConfig& cfg, Modality m, Rng& rng) {
    const std::size_t len = cfg.seq_len(m);
    const std::size_t dim = m == Modality::audio ? cfg.audio_dim : cfg.vision_dim;
    const double sigma = m == Modality::audio ? cfg.audio_noise : cfg.vision_noise;
    const double shift = cfg.modality_informativeness(m) * y / cfg.label_scale;
    const double two_pi = 2 * std::numbers::pi;

    std::vector<double> phase(dim);
    std::vector<double> freq(dim);
    for (std::size_t j = 0; j < dim; ++j) {
        phase[j] = two_pi * uniform01(rng);
        freq[j] = j < cfg.signal_dims ? static_cast<double>(signal_cycles(m)) : static_cast<double>(1 + uniform_index(rng, 4));
    }
    std::vector<double> v(len * dim);
    for (std::size_t t = 0; t < len; ++t) {
        const double tt = static_cast<double>(t) / static_cast<double>(len);
        for (std::size_t j = 0; j < dim; ++j) {
            const double wave = std::sin(two_pi * freq[j] * tt + phase[j]);
            const double base = j < cfg.signal_dims ? shift * (1 + 0.5 * wave) : wave;
            v[t * dim + j] = base + sigma * standard_normal(rng);
        }
    }
    return Tensor<double>::matrix(len, dim, std::move(v));
}

}  // namespace detail

inline Sample generate_sample(double y, const SynthConfig& cfg, Rng& rng) {
    if (!(std::abs(y) <= cfg.label_scale)) {
        throw std::invalid_argument("generate_sample: label " + std::to_string(y) + " outside [-scale, scale]");
    }
    Sample s;
    s.label = y;
    const auto [p_pos, p_neg] = sentiment_word_rates(y, cfg);
    const std::uint64_t block = cfg.vocab_size / 8;
    const std::uint64_t neutral = cfg.vocab_size - 2 * block;
    s.tokens.resize(cfg.text_len);
    for (auto& id : s.tokens) {
        if (uniform01(rng) < cfg.text_noise) {
            id = static_cast<std::uint32_t>(uniform_index(rng, cfg.vocab_size));
            continue;
        }
        const double r = uniform01(rng);
        if (r < p_pos) {
            id = static_cast<std::uint32_t>(uniform_index(rng, block));
        } else if (r < p_pos + p_neg) {
            id = static_cast<std::uint32_t>(block + uniform_index(rng, block));
        } else {
            id = static_cast<std::uint32_t>(2 * block + uniform_index(rng, neutral));
        }
    }
    s.audio = detail::synth_frames(y, cfg, Modality::audio, rng);
    s.vision = detail::synth_frames(y, cfg, Modality::vision, rng);
    return s;
}

/// Sample `index` of a dataset: label uniform in [-scale, scale], then generate_sample.
inline Sample generate_indexed_sample(const SynthConfig& cfg, std::size_t index) {
    Rng rng = derive_rng(cfg.seed, index);
    const double y = uniform(rng, -cfg.label_scale, cfg.label_scale);
    return generate_sample(y, cfg, rng);
}

// ---------------------------------------------------------------------------

/// Columnar storage for one split, at the on-disk precision.
struct DatasetSplit {
    std::string name;
    std::size_t text_len = 0, audio_len = 0, audio_dim = 0, vision_len = 0, vision_dim = 0;
    std::vector<std::uint32_t> tokens;
    std::vector<float> audio;
    std::vector<float> vision;
    std::vector<float> labels;

    std::size_t size() const noexcept { return labels.size(); }

    std::span<const std::uint32_t> tokens_of(std::size_t i) const { return {tokens.data() + i * text_len, text_len}; }

    template <std::floating_point T>
    Tensor<T> audio_of(std::size_t i) const {
        return frames<T>(audio, i, audio_len, audio_dim);
    }
    template <std::floating_point T>
    Tensor<T> vision_of(std::size_t i) const {
        return frames<T>(vision, i, vision_len, vision_dim);
    }
    std::vector<double> labels_as_double() const { return {labels.begin(), labels.end()}; }

    void append(const Sample& s) {
        tokens.insert(tokens.end(), s.tokens.begin(), s.tokens.end());
        for (double v : s.audio.values()) audio.push_back(static_cast<float>(v));
        for (double v : s.vision.values()) vision.push_back(static_cast<float>(v));
        labels.push_back(static_cast<float>(s.label));
    }

    bool operator==(const DatasetSplit&) const = default;

private:
    template <std::floating_point T>
    static Tensor<T> frames(const std::vector<float>& src, std::size_t i, std::size_t len, std::size_t dim) {
        const auto* p = src.data() + i * len * dim;
        return Tensor<T>::matrix(len, dim, std::vector<T>(p, p + len * dim));
    }
};

struct Dataset {
    SynthConfig config;
    DatasetSplit train, valid, test;

    const DatasetSplit& split(std::string_view name) const {
        if (name == "train") return train;
        if (name == "valid") return valid;
        if (name == "test") return test;
        throw std::invalid_argument("unknown split '" + std::string(name) + "'");
    }
    bool operator==(const Dataset& o) const { return train == o.train && valid == o.valid && test == o.test; }
};

inline constexpr std::array<const char*, 3> kSplitNames{"train", "valid", "test"};

/// Indices assigned to train/valid/test: order by a seed-dependent hash of the
/// index, take floor(0.6 n), floor(0.2 n) and the rest; each part is returned in
/// ascending index order.
inline std::array<std::vector<std::size_t>, 3> split_indices(std::size_t n, std::uint64_t seed) {
    std::vector<std::pair<std::uint64_t, std::size_t>> keyed(n);
    for (std::size_t i = 0; i < n; ++i) keyed[i] = {splitmix64(seed ^ splitmix64(0x73706c6974ULL + i)), i};
    std::sort(keyed.begin(), keyed.end());
    const std::size_t n_train = n * 6 / 10;
    const std::size_t n_valid = n * 2 / 10;
    std::array<std::vector<std::size_t>, 3> out;
    for (std::size_t r = 0; r < n; ++r) {
        const std::size_t part = r < n_train ? 0 : r < n_train + n_valid ? 1 : 2;
        out[part].push_back(keyed[r].second);
    }
    for (auto& part : out) std::sort(part.begin(), part.end());
    return out;
}

inline Dataset generate_dataset(const SynthConfig& cfg) {
    cfg.validate();
    Dataset ds;
    ds.config = cfg;
    const auto parts = split_indices(cfg.n_samples, cfg.seed);
    std::array<DatasetSplit*, 3> targets{&ds.train, &ds.valid, &ds.test};
    for (std::size_t s = 0; s < 3; ++s) {
        auto& out = *targets[s];
        out.name = kSplitNames[s];
        out.text_len = cfg.text_len;
        out.audio_len = cfg.audio_len;
        out.audio_dim = cfg.audio_dim;
        out.vision_len = cfg.vision_len;
        out.vision_dim = cfg.vision_dim;
        for (auto i : parts[s]) out.append(generate_indexed_sample(cfg, i));
    }
    return ds;
}

// ---------------------------------------------------------------------------
// Persistence.

struct LabelStats {
    double min = 0, max = 0, mean = 0, stddev = 0;
};

inline LabelStats label_stats(std::span<const float> labels) {
    LabelStats st;
    if (labels.empty()) return st;
    st.min = st.max = labels[0];
    double total = 0;
    for (float v : labels) {
        st.min = std::min<double>(st.min, v);
        st.max = std::max<double>(st.max, v);
        total += v;
    }
    st.mean = total / static_cast<double>(labels.size());
    double ss = 0;
    for (float v : labels) ss += (v - st.mean) * (v - st.mean);
    st.stddev = std::sqrt(ss / static_cast<double>(labels.size()));
    return st;
}

namespace detail {

inline std::vector<std::uint32_t> dims_u32(std::initializer_list<std::size_t> dims) {
    std::vector<std::uint32_t> out;
    for (auto d : dims) {
        if (d > 0xffffffffULL) throw FormatError("dimension does not fit in u32");
        out.push_back(static_cast<std::uint32_t>(d));
    }
    return out;
}

inline std::string hex32(std::uint32_t v) {
    static const char* digits = "0123456789abcdef";
    std::string s(8, '0');
    for (int i = 7; i >= 0; --i, v >>= 4) s[static_cast<std::size_t>(i)] = digits[v & 0xf];
    return s;
}

inline nlohmann::json read_json(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw FormatError("cannot open " + path.string());
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(path.filename().string() + ": " + e.what());
    }
}

inline void write_json(const std::filesystem::path& path, const nlohmann::json& j) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw FormatError("cannot write " + path.string());
    out << j.dump(2) << '\n';
    if (!out) throw FormatError("short write to " + path.string());
}

}  // namespace detail

inline void save_split(const DatasetSplit& split, const SynthConfig& cfg, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    const std::size_t n = split.size();
    struct Entry {
        const char* file;
        TensorFile t;
    };
    std::vector<Entry> files;
    files.push_back({"text.dfts", {DType::uint32, detail::dims_u32({n, split.text_len}), {}, split.tokens}});
    files.push_back({"audio.dfts", {DType::float32, detail::dims_u32({n, split.audio_len, split.audio_dim}), split.audio, {}}});
    files.push_back(
        {"vision.dfts", {DType::float32, detail::dims_u32({n, split.vision_len, split.vision_dim}), split.vision, {}}});
    files.push_back({"labels.dfts", {DType::float32, detail::dims_u32({n}), split.labels, {}}});

    nlohmann::json shapes = nlohmann::json::object();
    nlohmann::json checksums = nlohmann::json::object();
    for (const auto& e : files) {
        const auto crc = write_dfts(dir / e.file, e.t);
        shapes[std::string(e.file).substr(0, std::string(e.file).find('.'))] = e.t.dims;
        checksums[e.file] = detail::hex32(crc);
    }
    const auto st = label_stats(split.labels);
    const nlohmann::json manifest{
        {"format", "dashfusion-dataset"},
        {"format_version", kDatasetFormatVersion},
        {"split", split.name},
        {"count", n},
        {"shapes", shapes},
        {"label_stats", {{"min", st.min}, {"max", st.max}, {"mean", st.mean}, {"std", st.stddev}}},
        {"label_scale", cfg.label_scale},
        {"vocab_size", cfg.vocab_size},
        {"generator_seed", cfg.seed},
        {"generator", cfg},
        {"checksums", checksums},
    };
    detail::write_json(dir / "manifest.json", manifest);
}

inline void save_dataset(const Dataset& ds, const std::filesystem::path& dir) {
    save_split(ds.train, ds.config, dir / "train");
    save_split(ds.valid, ds.config, dir / "valid");
    save_split(ds.test, ds.config, dir / "test");
}

/// Reads one split and its manifest. `cfg_out`, when given, receives the generator config.
inline DatasetSplit load_split(const std::filesystem::path& dir, SynthConfig* cfg_out = nullptr) {
    const auto manifest = detail::read_json(dir / "manifest.json");
    const std::string where = (dir.filename() / "manifest.json").string();
    try {
        if (manifest.value("format", std::string()) != "dashfusion-dataset") throw FormatError(where + ": not a dataset manifest");
        const int version = manifest.at("format_version").get<int>();
        if (version != kDatasetFormatVersion) {
            throw FormatError(where + ": format version " + std::to_string(version) + " is not supported (expected " +
                              std::to_string(kDatasetFormatVersion) + ")");
        }
        DatasetSplit split;
        split.name = manifest.at("split").get<std::string>();
        const auto count = manifest.at("count").get<std::size_t>();
        const auto& shapes = manifest.at("shapes");
        const auto& checksums = manifest.at("checksums");

        auto load = [&](const char* file, const char* key, DType dtype) {
            const auto bytes = read_bytes(dir / file);
            auto t = decode_dfts(bytes, file);
            const std::string expected = checksums.at(file).get<std::string>();
            const auto actual = crc32_of(bytes.data(), bytes.size());
            if (expected != detail::hex32(actual)) {
                throw ChecksumError(file, static_cast<std::uint32_t>(std::stoul(expected, nullptr, 16)), actual);
            }
            const auto want = shapes.at(key).get<std::vector<std::uint32_t>>();
            if (want != t.dims || t.dtype != dtype) {
                throw FormatError(std::string(file) + ": payload header disagrees with manifest shape " +
                                  nlohmann::json(want).dump() + " (payload " + nlohmann::json(t.dims).dump() + ")");
            }
            if (t.dims.empty() || t.dims[0] != count) {
                throw FormatError(std::string(file) + ": leading dimension disagrees with manifest count " + std::to_string(count));
            }
            return t;
        };
        auto text = load("text.dfts", "text", DType::uint32);
        auto audio = load("audio.dfts", "audio", DType::float32);
        auto vision = load("vision.dfts", "vision", DType::float32);
        auto labels = load("labels.dfts", "labels", DType::float32);
        if (text.dims.size() != 2 || audio.dims.size() != 3 || vision.dims.size() != 3 || labels.dims.size() != 1) {
            throw FormatError(where + ": unexpected tensor ranks");
        }
        split.text_len = text.dims[1];
        split.audio_len = audio.dims[1];
        split.audio_dim = audio.dims[2];
        split.vision_len = vision.dims[1];
        split.vision_dim = vision.dims[2];
        split.tokens = std::move(text.u32);
        split.audio = std::move(audio.f32);
        split.vision = std::move(vision.f32);
        split.labels = std::move(labels.f32);
        if (cfg_out) *cfg_out = manifest.at("generator").get<SynthConfig>();
        return split;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(where + ": " + e.what());
    }
}

inline Dataset load_dataset(const std::filesystem::path& dir) {
    Dataset ds;
    ds.train = load_split(dir / "train", &ds.config);
    ds.valid = load_split(dir / "valid");
    ds.test = load_split(dir / "test");
    return ds;
}

}  // namespace dashfusion
