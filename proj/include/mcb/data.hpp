#pragma once

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "mcb/model.hpp"
#include "mcb/tensor.hpp"

namespace mcb {

// ---------------------------------------------------------------- tokenizer

/// Lowercases, splits on whitespace, and splits the punctuation marks
/// . , ! ? ; : " ( ) into standalone tokens. Rejects invalid UTF-8.
inline std::vector<std::string> tokenize(const std::string& line) {
    // UTF-8 validation
    const unsigned char* s = reinterpret_cast<const unsigned char*>(line.data());
    for (std::size_t i = 0; i < line.size();) {
        unsigned char c = s[i];
        std::size_t len = c < 0x80 ? 1 : (c >> 5) == 0x6 ? 2 : (c >> 4) == 0xE ? 3 : (c >> 3) == 0x1E ? 4 : 0;
        if (len == 0 || i + len > line.size()) throw std::invalid_argument("tokenize: invalid UTF-8");
        for (std::size_t j = 1; j < len; ++j)
            if ((s[i + j] >> 6) != 0x2) throw std::invalid_argument("tokenize: invalid UTF-8");
        i += len;
    }
    static const std::string punct = ".,!?;:\"()";
    std::vector<std::string> out;
    std::string cur;
    auto flush = [&] {
        if (!cur.empty()) {
            out.push_back(cur);
            cur.clear();
        }
    };
    for (char ch : line) {
        if (ch == ' ' || ch == '\t' || ch == '\r' || ch == '\n') {
            flush();
        } else if (punct.find(ch) != std::string::npos) {
            flush();
            out.emplace_back(1, ch);
        } else {
            if (ch >= 'A' && ch <= 'Z') ch = char(ch - 'A' + 'a');
            cur.push_back(ch);
        }
    }
    flush();
    return out;
}

// -------------------------------------------------------------------- vocab

/// Token/id bijection with fixed reserved ids 0..3 (PAD, BOS, EOS, UNK).
struct Vocab {
    std::map<std::string, int> to_id;
    std::vector<std::string> tokens;

    Vocab() {
        tokens = {"<pad>", "<bos>", "<eos>", "<unk>"};
        for (int i = 0; i < 4; ++i) to_id[tokens[std::size_t(i)]] = i;
    }

    std::size_t size() const { return tokens.size(); }

    int encode(const std::string& tok) const {
        auto it = to_id.find(tok);
        return it == to_id.end() ? kUnk : it->second;
    }

    const std::string& decode(int id) const {
        if (id < 0 || std::size_t(id) >= tokens.size()) throw std::out_of_range("Vocab: id out of range");
        return tokens[std::size_t(id)];
    }

    std::vector<int> encode_line(const std::vector<std::string>& toks) const {
        std::vector<int> ids;
        for (const auto& t : toks) ids.push_back(encode(t));
        return ids;
    }
};

/// Tokens with count >= min_count, ordered by (count desc, token asc) after
/// the reserved slots.
inline Vocab build_vocab(const std::vector<std::vector<std::string>>& corpus, int min_count = 1) {
    if (corpus.empty()) throw std::invalid_argument("build_vocab: empty corpus");
    std::map<std::string, long long> counts;
    for (const auto& line : corpus)
        for (const auto& tok : line) counts[tok] += 1;
    std::vector<std::pair<long long, std::string>> order;
    for (const auto& [tok, c] : counts)
        if (c >= min_count) order.emplace_back(-c, tok);
    std::sort(order.begin(), order.end());
    Vocab v;
    for (const auto& [negc, tok] : order) {
        v.to_id[tok] = int(v.tokens.size());
        v.tokens.push_back(tok);
    }
    return v;
}

// ----------------------------------------------------------- binary helpers

namespace io {

inline void put_bytes(std::ostream& os, const void* p, std::size_t n) {
    os.write(reinterpret_cast<const char*>(p), std::streamsize(n));
}
template <typename T>
void put(std::ostream& os, T v) {
    put_bytes(os, &v, sizeof(T));
}
inline void get_bytes(std::istream& is, void* p, std::size_t n, const char* what) {
    is.read(reinterpret_cast<char*>(p), std::streamsize(n));
    if (std::size_t(is.gcount()) != n) throw std::runtime_error(std::string("truncated payload reading ") + what);
}
template <typename T>
T get(std::istream& is, const char* what) {
    T v;
    get_bytes(is, &v, sizeof(T), what);
    return v;
}

/// write-temp-then-rename so a failed write never leaves a partial file
inline void atomic_write(const std::string& path, const std::string& payload) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
        if (!os) throw std::runtime_error("cannot open for write: " + tmp);
        os.write(payload.data(), std::streamsize(payload.size()));
        if (!os) throw std::runtime_error("write failed: " + tmp);
    }
    std::filesystem::rename(tmp, path);
}

}  // namespace io

// ------------------------------------------------------------- MMFM format

/// MMFM: magic "MMFM", version u16 LE = 1, count N u32 LE, then per item
/// G u32, C u32, G*C float32 LE row-major.
inline void save_feature_maps(const std::vector<Tensor>& maps, const std::string& path) {
    std::ostringstream os(std::ios::binary);
    os.write("MMFM", 4);
    io::put<std::uint16_t>(os, 1);
    io::put<std::uint32_t>(os, std::uint32_t(maps.size()));
    for (const Tensor& m : maps) {
        if (m.rank() != 2) throw std::invalid_argument("save_feature_maps: rank-2 maps required");
        io::put<std::uint32_t>(os, std::uint32_t(m.rows()));
        io::put<std::uint32_t>(os, std::uint32_t(m.cols()));
        for (real v : m.data) io::put<float>(os, float(v));
    }
    io::atomic_write(path, os.str());
}

inline std::vector<Tensor> load_feature_maps(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open feature map file: " + path);
    char magic[4];
    io::get_bytes(is, magic, 4, "magic");
    if (std::memcmp(magic, "MMFM", 4) != 0) throw std::runtime_error("bad magic in feature map file");
    const auto version = io::get<std::uint16_t>(is, "version");
    if (version != 1) throw std::runtime_error("unsupported MMFM version");
    const auto n = io::get<std::uint32_t>(is, "count");
    std::vector<Tensor> maps;
    maps.reserve(n);
    for (std::uint32_t i = 0; i < n; ++i) {
        const auto g = io::get<std::uint32_t>(is, "grid size");
        const auto c = io::get<std::uint32_t>(is, "channels");
        if (g == 0 || c == 0 || std::uint64_t(g) * c > (1ull << 31))
            throw std::runtime_error("feature map dimension overflow");
        Tensor t = Tensor::zeros({g, c});
        for (std::size_t j = 0; j < t.size(); ++j) t[j] = real(io::get<float>(is, "payload"));
        maps.push_back(std::move(t));
    }
    return maps;
}

// -------------------------------------------------------------- checkpoints

struct Checkpoint {
    ModelParams params;
    Vocab src_vocab;
    Vocab tgt_vocab;
};

namespace io {

inline void put_sketch(std::ostream& os, const SketchParams& p) {
    io::put<std::uint64_t>(os, p.seed);
    io::put<std::uint64_t>(os, p.n);
    io::put<std::uint64_t>(os, p.d);
    for (auto h : p.h) io::put<std::uint32_t>(os, h);
    for (auto s : p.s) io::put<std::int8_t>(os, s);
}

inline SketchParams get_sketch(std::istream& is) {
    SketchParams p;
    p.seed = io::get<std::uint64_t>(is, "sketch seed");
    p.n = io::get<std::uint64_t>(is, "sketch n");
    p.d = io::get<std::uint64_t>(is, "sketch d");
    p.h.resize(p.n);
    p.s.resize(p.n);
    for (auto& h : p.h) h = io::get<std::uint32_t>(is, "sketch h");
    for (auto& s : p.s) s = io::get<std::int8_t>(is, "sketch s");
    return p;
}

inline const char* fusion_name(FusionKind k) {
    switch (k) {
        case FusionKind::Concat: return "concat";
        case FusionKind::Sum: return "sum";
        case FusionKind::Product: return "product";
        case FusionKind::Mcb: return "mcb";
    }
    throw std::logic_error("unknown fusion kind");
}

inline FusionKind fusion_from_name(const std::string& s) {
    if (s == "concat") return FusionKind::Concat;
    if (s == "sum") return FusionKind::Sum;
    if (s == "product") return FusionKind::Product;
    if (s == "mcb") return FusionKind::Mcb;
    throw std::runtime_error("unknown fusion strategy: " + s);
}

}  // namespace io

inline nlohmann::json config_to_json(const ModelConfig& c) {
    return nlohmann::json{{"L", c.L},
                          {"E", c.E},
                          {"src_vocab", c.src_vocab},
                          {"tgt_vocab", c.tgt_vocab},
                          {"fusion", io::fusion_name(c.fusion)},
                          {"pre_attention", c.pre_attention},
                          {"d", c.d},
                          {"G", c.G},
                          {"C", c.C},
                          {"pre_hidden", c.pre_hidden},
                          {"max_decode_len", c.max_decode_len},
                          {"text_only", c.text_only},
                          {"mcb_normalize", c.mcb_normalize}};
}

inline ModelConfig config_from_json(const nlohmann::json& j) {
    ModelConfig c;
    c.L = j.at("L");
    c.E = j.at("E");
    c.src_vocab = j.at("src_vocab");
    c.tgt_vocab = j.at("tgt_vocab");
    c.fusion = io::fusion_from_name(j.at("fusion"));
    c.pre_attention = j.at("pre_attention");
    c.d = j.at("d");
    c.G = j.at("G");
    c.C = j.at("C");
    c.pre_hidden = j.at("pre_hidden");
    c.max_decode_len = j.at("max_decode_len");
    c.text_only = j.at("text_only");
    c.mcb_normalize = j.at("mcb_normalize");
    return c;
}

/// Versioned binary checkpoint: magic "MCBC", version u16 = 1, a JSON blob
/// (config + vocab token lists), the frozen sketch tables, then a
/// self-describing named-tensor table (name length u16, name bytes, rank u8,
/// dims u32 each, binary64 payload).
inline void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
    std::ostringstream os(std::ios::binary);
    os.write("MCBC", 4);
    io::put<std::uint16_t>(os, 1);
    nlohmann::json meta = config_to_json(ckpt.params.config);
    meta["src_tokens"] = ckpt.src_vocab.tokens;
    meta["tgt_tokens"] = ckpt.tgt_vocab.tokens;
    const std::string blob = meta.dump();
    io::put<std::uint32_t>(os, std::uint32_t(blob.size()));
    os.write(blob.data(), std::streamsize(blob.size()));
    const ModelConfig& c = ckpt.params.config;
    const bool has_fusion = !c.text_only && c.fusion == FusionKind::Mcb;
    const bool has_pre = !c.text_only && c.pre_attention;
    io::put<std::uint8_t>(os, has_fusion ? 1 : 0);
    if (has_fusion) {
        io::put_sketch(os, ckpt.params.fusion_pooler.params_text);
        io::put_sketch(os, ckpt.params.fusion_pooler.params_vis);
        io::put<std::uint8_t>(os, ckpt.params.fusion_pooler.normalize ? 1 : 0);
    }
    io::put<std::uint8_t>(os, has_pre ? 1 : 0);
    if (has_pre) {
        io::put_sketch(os, ckpt.params.pre_pooler.params_text);
        io::put_sketch(os, ckpt.params.pre_pooler.params_vis);
    }
    io::put<std::uint32_t>(os, std::uint32_t(ckpt.params.tensors.size()));
    for (const auto& [name, t] : ckpt.params.tensors) {
        io::put<std::uint16_t>(os, std::uint16_t(name.size()));
        os.write(name.data(), std::streamsize(name.size()));
        io::put<std::uint8_t>(os, std::uint8_t(t.rank()));
        for (std::size_t dim : t.shape) io::put<std::uint32_t>(os, std::uint32_t(dim));
        for (real v : t.data) io::put<double>(os, double(v));
    }
    io::atomic_write(path, os.str());
}

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open checkpoint: " + path);
    char magic[4];
    io::get_bytes(is, magic, 4, "magic");
    if (std::memcmp(magic, "MCBC", 4) != 0) throw std::runtime_error("bad magic in checkpoint");
    const auto version = io::get<std::uint16_t>(is, "version");
    if (version != 1) throw std::runtime_error("unsupported checkpoint version");
    const auto blob_len = io::get<std::uint32_t>(is, "metadata length");
    std::string blob(blob_len, '\0');
    io::get_bytes(is, blob.data(), blob_len, "metadata");
    nlohmann::json meta;
    try {
        meta = nlohmann::json::parse(blob);
    } catch (const nlohmann::json::exception&) {
        throw std::runtime_error("corrupt checkpoint metadata");
    }
    Checkpoint ckpt;
    ckpt.params.config = config_from_json(meta);
    ckpt.src_vocab.tokens = meta.at("src_tokens").get<std::vector<std::string>>();
    ckpt.tgt_vocab.tokens = meta.at("tgt_tokens").get<std::vector<std::string>>();
    for (auto* v : {&ckpt.src_vocab, &ckpt.tgt_vocab}) {
        v->to_id.clear();
        for (std::size_t i = 0; i < v->tokens.size(); ++i) v->to_id[v->tokens[i]] = int(i);
    }
    if (io::get<std::uint8_t>(is, "fusion pooler flag")) {
        ckpt.params.fusion_pooler.params_text = io::get_sketch(is);
        ckpt.params.fusion_pooler.params_vis = io::get_sketch(is);
        ckpt.params.fusion_pooler.normalize = io::get<std::uint8_t>(is, "normalize flag") != 0;
        ckpt.params.fusion_pooler.d = ckpt.params.fusion_pooler.params_text.d;
    }
    if (io::get<std::uint8_t>(is, "pre pooler flag")) {
        ckpt.params.pre_pooler.params_text = io::get_sketch(is);
        ckpt.params.pre_pooler.params_vis = io::get_sketch(is);
        ckpt.params.pre_pooler.d = ckpt.params.pre_pooler.params_text.d;
    }
    const auto count = io::get<std::uint32_t>(is, "tensor count");
    for (std::uint32_t i = 0; i < count; ++i) {
        const auto name_len = io::get<std::uint16_t>(is, "tensor name length");
        std::string name(name_len, '\0');
        io::get_bytes(is, name.data(), name_len, "tensor name");
        const auto rank = io::get<std::uint8_t>(is, "tensor rank");
        std::vector<std::size_t> shape;
        for (std::uint8_t r = 0; r < rank; ++r) shape.push_back(io::get<std::uint32_t>(is, "tensor dim"));
        Tensor t = Tensor::zeros(shape);
        for (std::size_t j = 0; j < t.size(); ++j) t[j] = real(io::get<double>(is, "tensor payload"));
        ckpt.params.tensors.emplace(std::move(name), std::move(t));
    }
    return ckpt;
}

// -------------------------------------------------------- synthetic dataset

/// Desk-scale grounded translation task. Each scene places one object (a
/// shape/color pair) at a grid cell; the source sentence describes it in
/// language A and the target in language B. With probability `ambiguity` the
/// source replaces the attribute words with a generic token, so the correct
/// target attribute words are recoverable only from the feature map.
struct SyntheticTaskSpec {
    std::size_t G = 16;
    std::size_t C = 8;
    std::vector<std::pair<std::string, std::string>> shapes = {
        {"circle", "kreis"}, {"square", "quadrat"}, {"triangle", "dreieck"}, {"star", "stern"}};
    std::vector<std::pair<std::string, std::string>> colors = {
        {"red", "rot"}, {"green", "gruen"}, {"blue", "blau"}, {"yellow", "gelb"}};
    double ambiguity = 0.5;
    std::size_t train_size = 2000;
    std::size_t val_size = 300;
    std::size_t test_size = 300;
    std::uint64_t seed = 0;

    void validate() const {
        if (shapes.empty() || colors.empty() || G == 0)
            throw std::invalid_argument("SyntheticTaskSpec: inventory too small");
        if (C < shapes.size() + colors.size())
            throw std::invalid_argument("SyntheticTaskSpec: inventory too small for channel budget");
        if (ambiguity < 0.0 || ambiguity > 1.0)
            throw std::invalid_argument("SyntheticTaskSpec: ambiguity rate must be in [0,1]");
    }
};

struct SyntheticData {
    Vocab src_vocab;
    Vocab tgt_vocab;
    std::vector<Example> train, val, test;
};

namespace detail {

struct RawScene {
    std::vector<std::string> src, tgt;
    std::size_t cell = 0, shape = 0, color = 0;
    bool ambiguous = false;
    std::vector<int> img_dep;  // target positions naming the attributes
};

inline RawScene gen_scene(const SyntheticTaskSpec& spec, Rng& rng) {
    RawScene sc;
    sc.cell = rng.below(spec.G);
    sc.shape = rng.below(spec.shapes.size());
    sc.color = rng.below(spec.colors.size());
    sc.ambiguous = rng.uniform() < spec.ambiguity;
    const std::size_t tmpl = rng.below(2);
    const std::string cell_src = "p" + std::to_string(sc.cell);
    const std::string cell_tgt = "q" + std::to_string(sc.cell);
    const auto& sh = spec.shapes[sc.shape];
    const auto& co = spec.colors[sc.color];
    if (tmpl == 0) {
        sc.src = sc.ambiguous ? std::vector<std::string>{"a", "thing", "at", cell_src}
                              : std::vector<std::string>{"a", co.first, sh.first, "at", cell_src};
        sc.tgt = {"ein", co.second, sh.second, "bei", cell_tgt};
        if (sc.ambiguous) sc.img_dep = {1, 2};
    } else {
        sc.src = sc.ambiguous ? std::vector<std::string>{"the", "thing", "at", cell_src, "is", "odd"}
                              : std::vector<std::string>{"the", sh.first, "at", cell_src, "is", co.first};
        sc.tgt = {"das", sh.second, "bei", cell_tgt, "ist", co.second};
        if (sc.ambiguous) sc.img_dep = {1, 5};
    }
    return sc;
}

inline Tensor scene_fmap(const SyntheticTaskSpec& spec, const RawScene& sc) {
    Tensor f = Tensor::zeros({spec.G, spec.C});
    f(sc.cell, sc.shape) = real(1.0);
    f(sc.cell, spec.shapes.size() + sc.color) = real(1.0);
    return f;
}

}  // namespace detail

inline SyntheticData gen_synthetic(const SyntheticTaskSpec& spec) {
    spec.validate();
    Rng rng(spec.seed * 2654435761ull + 17);
    const std::size_t total = spec.train_size + spec.val_size + spec.test_size;
    std::vector<detail::RawScene> scenes;
    scenes.reserve(total);
    std::vector<std::vector<std::string>> src_corpus, tgt_corpus;
    for (std::size_t i = 0; i < total; ++i) {
        scenes.push_back(detail::gen_scene(spec, rng));
        src_corpus.push_back(scenes.back().src);
        tgt_corpus.push_back(scenes.back().tgt);
    }
    SyntheticData data;
    data.src_vocab = build_vocab(src_corpus, 1);
    data.tgt_vocab = build_vocab(tgt_corpus, 1);
    for (std::size_t i = 0; i < total; ++i) {
        Example ex;
        ex.src = data.src_vocab.encode_line(scenes[i].src);
        ex.tgt = data.tgt_vocab.encode_line(scenes[i].tgt);
        ex.tgt.push_back(kEos);
        ex.fmap = detail::scene_fmap(spec, scenes[i]);
        ex.img_dep = scenes[i].img_dep;
        auto& split = i < spec.train_size ? data.train
                      : i < spec.train_size + spec.val_size ? data.val
                                                            : data.test;
        split.push_back(std::move(ex));
    }
    return data;
}

/// Exhaustive label-consistency audit: every image-dependent target token
/// must name the attribute encoded at the scene's grid cell.
inline bool audit_synthetic(const SyntheticData& data, const SyntheticTaskSpec& spec) {
    auto check = [&](const std::vector<Example>& split) {
        for (const Example& ex : split) {
            // locate the single nonzero cell
            std::size_t cell = spec.G, shape = 0, color = 0;
            for (std::size_t g = 0; g < spec.G; ++g)
                for (std::size_t c = 0; c < spec.C; ++c)
                    if (ex.fmap(g, c) != 0) {
                        cell = g;
                        if (c < spec.shapes.size())
                            shape = c;
                        else
                            color = c - spec.shapes.size();
                    }
            if (cell == spec.G) return false;
            for (int pos : ex.img_dep) {
                const std::string& tok = data.tgt_vocab.decode(ex.tgt[std::size_t(pos)]);
                if (tok != spec.shapes[shape].second && tok != spec.colors[color].second) return false;
            }
        }
        return true;
    };
    return check(data.train) && check(data.val) && check(data.test);
}

// ---------------------------------------------------------- plain-text I/O

inline std::vector<std::string> read_lines(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open: " + path);
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(is, line)) lines.push_back(line);
    return lines;
}

inline void write_lines(const std::vector<std::string>& lines, const std::string& path) {
    std::ostringstream os;
    for (const auto& l : lines) os << l << '\n';
    io::atomic_write(path, os.str());
}

}  // namespace mcb
