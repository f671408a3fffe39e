#include "attncap/data.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <nlohmann/json.hpp>
#include <sstream>

#include "attncap/decoders.hpp"
#include "attncap/errors.hpp"
#include "attncap/rng.hpp"

namespace attncap {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Scenes

std::string_view shape_name(ShapeKind s) {
    switch (s) {
    case ShapeKind::circle: return "circle";
    case ShapeKind::square: return "square";
    case ShapeKind::triangle: return "triangle";
    }
    return "?";
}

std::string_view color_name(Color c) {
    switch (c) {
    case Color::red: return "red";
    case Color::green: return "green";
    case Color::blue: return "blue";
    case Color::yellow: return "yellow";
    }
    return "?";
}

SyntheticScene make_scene(std::uint64_t corpus_seed, std::uint64_t scene_id) {
    Rng rng(mix_seed(corpus_seed, scene_id));
    SyntheticScene scene;
    scene.id = scene_id;
    const std::size_t count = 1 + static_cast<std::size_t>(rng.below(3));
    std::vector<int> cells{0, 1, 2, 3, 4, 5, 6, 7, 8};
    rng.shuffle(cells);
    for (std::size_t i = 0; i < count; ++i) {
        const auto shape = static_cast<ShapeKind>(rng.below(3));
        const auto color = static_cast<Color>(rng.below(4));
        scene.objects.push_back(SceneObject{shape, color, cells[i]});
    }
    std::sort(scene.objects.begin(), scene.objects.end(),
              [](const SceneObject& a, const SceneObject& b) { return a.cell < b.cell; });
    return scene;
}

namespace {

std::string describe(const SceneObject& o) {
    return std::string(color_name(o.color)) + " " + std::string(shape_name(o.shape));
}

std::string location(int cell) {
    static constexpr std::array<std::string_view, 3> rows{"top", "middle", "bottom"};
    static constexpr std::array<std::string_view, 3> cols{"left", "center", "right"};
    if (cell == 4) {
        return "center";
    }
    return std::string(rows[static_cast<std::size_t>(cell / 3)]) + " " + std::string(cols[static_cast<std::size_t>(cell % 3)]);
}

struct Relation {
    std::string plain;   // "above" / "left of"
    std::string variant; // "over" / "to the left of"
    std::string inverse; // "below" / "right of"
};

// a precedes b in row-major order.
Relation relate(const SceneObject& a, const SceneObject& b) {
    if (a.cell / 3 < b.cell / 3) {
        return {"above", "over", "below"};
    }
    return {"left of", "to the left of", "right of"};
}

} // namespace

std::array<std::string, 5> scene_captions(const SyntheticScene& scene) {
    const auto& o = scene.objects;
    if (o.size() == 1) {
        const std::string a = describe(o[0]);
        const std::string where = location(o[0].cell);
        return {"a " + a,
                "a " + a + " in the " + where,
                "there is a " + a + " in the " + where,
                "an image of a " + a,
                "a " + a + " is in the " + where};
    }
    if (o.size() == 2) {
        const std::string a = describe(o[0]), b = describe(o[1]);
        const Relation r = relate(o[0], o[1]);
        return {"a " + a + " " + r.plain + " a " + b,
                "there is a " + a + " " + r.variant + " a " + b,
                "a " + b + " " + r.inverse + " a " + a,
                "a " + a + " and a " + b,
                "an image with a " + a + " " + r.plain + " a " + b};
    }
    if (o.size() == 3) {
        const std::string a = describe(o[0]), b = describe(o[1]), c = describe(o[2]);
        const Relation r1 = relate(o[0], o[1]), r2 = relate(o[1], o[2]);
        return {"a " + a + " " + r1.plain + " a " + b + " " + r2.plain + " a " + c,
                "a " + a + " " + r1.plain + " a " + b + " and a " + c,
                "a " + c + " " + r2.inverse + " a " + b + " " + r1.inverse + " a " + a,
                "a " + a + " and a " + b + " and a " + c,
                "there is a " + a + " a " + b + " and a " + c};
    }
    throw ContractError("scene " + std::to_string(scene.id) + " has " + std::to_string(o.size()) +
                        " objects; captions exist for 1 to 3");
}

// ---------------------------------------------------------------------------
// Rendering and image files

namespace {

constexpr std::array<std::uint8_t, 3> kBackground{24, 24, 24};

std::array<std::uint8_t, 3> rgb(Color c) {
    switch (c) {
    case Color::red: return {230, 30, 30};
    case Color::green: return {30, 200, 40};
    case Color::blue: return {40, 70, 235};
    case Color::yellow: return {240, 220, 30};
    }
    return {255, 255, 255};
}

bool covers(ShapeKind shape, long dx, long dy, long r) {
    switch (shape) {
    case ShapeKind::circle: return dx * dx + dy * dy <= r * r;
    case ShapeKind::square: return std::labs(dx) < r && std::labs(dy) < r;
    case ShapeKind::triangle: return dy >= -r && dy <= r && 2 * std::labs(dx) <= dy + r;
    }
    return false;
}

} // namespace

RgbImage render_scene(const SyntheticScene& scene, std::size_t side) {
    if (side < kMinRenderSide) {
        throw ContractError("render: image side " + std::to_string(side) + " is below the minimum of " +
                            std::to_string(kMinRenderSide));
    }
    RgbImage img{side, side, std::vector<std::uint8_t>(side * side * 3)};
    for (std::size_t i = 0; i < side * side; ++i) {
        std::copy(kBackground.begin(), kBackground.end(), img.pixels.begin() + static_cast<std::ptrdiff_t>(3 * i));
    }
    const long cell = static_cast<long>(side / 3);
    const long radius = cell * 3 / 8;
    for (const SceneObject& o : scene.objects) {
        const long cx = (o.cell % 3) * cell + cell / 2;
        const long cy = (o.cell / 3) * cell + cell / 2;
        const auto color = rgb(o.color);
        for (long y = cy - radius; y <= cy + radius; ++y) {
            for (long x = cx - radius; x <= cx + radius; ++x) {
                if (x < 0 || y < 0 || x >= static_cast<long>(side) || y >= static_cast<long>(side)) {
                    continue;
                }
                if (covers(o.shape, x - cx, y - cy, radius)) {
                    const std::size_t p = (static_cast<std::size_t>(y) * side + static_cast<std::size_t>(x)) * 3;
                    std::copy(color.begin(), color.end(), img.pixels.begin() + static_cast<std::ptrdiff_t>(p));
                }
            }
        }
    }
    return img;
}

namespace {

void write_bytes(const fs::path& path, const std::string& header, const std::vector<std::uint8_t>& body) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw DataError("cannot write " + path.string());
    }
    out.write(header.data(), static_cast<std::streamsize>(header.size()));
    out.write(reinterpret_cast<const char*>(body.data()), static_cast<std::streamsize>(body.size()));
    if (!out) {
        throw DataError("write failed for " + path.string());
    }
}

std::string read_bytes(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw DataError("cannot read " + path.string());
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// Netpbm header: magic, then width, height, maxval separated by whitespace
// (with '#' comments), then exactly one whitespace byte before the raster.
struct NetpbmHeader {
    std::size_t width, height, offset;
};

NetpbmHeader parse_netpbm(std::string_view bytes, std::string_view magic) {
    if (bytes.substr(0, 2) != magic) {
        throw FormatError("expected " + std::string(magic) + " image");
    }
    std::size_t pos = 2;
    std::array<std::size_t, 3> fields{};
    for (std::size_t& field : fields) {
        while (pos < bytes.size()) {
            if (bytes[pos] == '#') {
                while (pos < bytes.size() && bytes[pos] != '\n') {
                    ++pos;
                }
            } else if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
                ++pos;
            } else {
                break;
            }
        }
        if (pos >= bytes.size() || !std::isdigit(static_cast<unsigned char>(bytes[pos]))) {
            throw FormatError("truncated or malformed " + std::string(magic) + " header");
        }
        std::size_t v = 0;
        while (pos < bytes.size() && std::isdigit(static_cast<unsigned char>(bytes[pos]))) {
            v = v * 10 + static_cast<std::size_t>(bytes[pos] - '0');
            if (v > 1u << 20) {
                throw FormatError(std::string(magic) + " header value too large");
            }
            ++pos;
        }
        field = v;
    }
    if (pos >= bytes.size() || !std::isspace(static_cast<unsigned char>(bytes[pos]))) {
        throw FormatError("missing separator after " + std::string(magic) + " header");
    }
    if (fields[2] != 255) {
        throw FormatError("only maxval 255 is supported, got " + std::to_string(fields[2]));
    }
    if (fields[0] == 0 || fields[1] == 0) {
        throw FormatError("zero image extent");
    }
    return {fields[0], fields[1], pos + 1};
}

} // namespace

void write_ppm(const fs::path& path, const RgbImage& image) {
    write_bytes(path, "P6\n" + std::to_string(image.width) + " " + std::to_string(image.height) + "\n255\n",
                image.pixels);
}

RgbImage parse_ppm(std::string_view bytes) {
    const NetpbmHeader h = parse_netpbm(bytes, "P6");
    const std::size_t n = h.width * h.height * 3;
    if (bytes.size() - h.offset != n) {
        throw FormatError("PPM raster has " + std::to_string(bytes.size() - h.offset) + " bytes, expected " +
                          std::to_string(n));
    }
    RgbImage img{h.width, h.height, {}};
    img.pixels.assign(bytes.begin() + static_cast<std::ptrdiff_t>(h.offset), bytes.end());
    return img;
}

RgbImage read_ppm(const fs::path& path) {
    try {
        return parse_ppm(read_bytes(path));
    } catch (const FormatError& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
}

void write_pgm(const fs::path& path, const GrayImage& image) {
    write_bytes(path, "P5\n" + std::to_string(image.width) + " " + std::to_string(image.height) + "\n255\n",
                image.pixels);
}

GrayImage parse_pgm(std::string_view bytes) {
    const NetpbmHeader h = parse_netpbm(bytes, "P5");
    const std::size_t n = h.width * h.height;
    if (bytes.size() - h.offset != n) {
        throw FormatError("PGM raster has " + std::to_string(bytes.size() - h.offset) + " bytes, expected " +
                          std::to_string(n));
    }
    GrayImage img{h.width, h.height, {}};
    img.pixels.assign(bytes.begin() + static_cast<std::ptrdiff_t>(h.offset), bytes.end());
    return img;
}

GrayImage read_pgm(const fs::path& path) {
    try {
        return parse_pgm(read_bytes(path));
    } catch (const FormatError& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
}

Tensor image_to_tensor(const RgbImage& image) {
    const std::size_t hw = image.width * image.height;
    Buffer v(3 * hw);
    for (std::size_t i = 0; i < hw; ++i) {
        for (std::size_t c = 0; c < 3; ++c) {
            v[c * hw + i] = image.pixels[3 * i + c] / 255.0;
        }
    }
    return Tensor({3, image.height, image.width}, std::move(v));
}

// ---------------------------------------------------------------------------
// Manifests

void write_manifest(const fs::path& path, const DatasetManifest& manifest) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) {
        throw DataError("cannot write manifest " + path.string());
    }
    for (const ManifestRecord& r : manifest.records) {
        nlohmann::ordered_json j;
        j["id"] = r.id;
        j["image"] = r.image;
        j["captions"] = r.captions;
        out << j.dump() << '\n';
    }
    if (!out) {
        throw DataError("write failed for manifest " + path.string());
    }
}

DatasetManifest read_manifest(const fs::path& path, const std::string& split) {
    std::ifstream in(path);
    if (!in) {
        throw DataError("cannot read manifest " + path.string());
    }
    DatasetManifest m;
    m.split = split.empty() ? path.stem().string() : split;
    m.root = path.parent_path();
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) {
            continue;
        }
        try {
            const auto j = nlohmann::json::parse(line);
            ManifestRecord r;
            r.id = j.at("id").get<std::int64_t>();
            r.image = j.at("image").get<std::string>();
            r.captions = j.at("captions").get<std::vector<std::string>>();
            if (r.captions.size() != 5) {
                throw FormatError("record " + std::to_string(r.id) + " has " + std::to_string(r.captions.size()) +
                                  " captions, expected 5");
            }
            m.records.push_back(std::move(r));
        } catch (const nlohmann::json::exception& e) {
            throw FormatError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
        } catch (const FormatError& e) {
            throw FormatError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    return m;
}

fs::path manifest_path(const fs::path& data_dir, const std::string& split) { return data_dir / (split + ".jsonl"); }

DatasetManifest load_split(const fs::path& data_dir, const std::string& split) {
    return read_manifest(manifest_path(data_dir, split), split);
}

std::map<std::string, DatasetManifest> generate_dataset(std::uint64_t corpus_seed, const SplitCounts& counts,
                                                        std::size_t side, const fs::path& out_dir) {
    if (counts.train == 0 || counts.val == 0 || counts.test == 0) {
        throw ContractError("generate_dataset: every split needs at least one scene");
    }
    if (side < kMinRenderSide) {
        throw ContractError("generate_dataset: image side " + std::to_string(side) + " is below the minimum of " +
                            std::to_string(kMinRenderSide));
    }
    std::error_code ec;
    fs::create_directories(out_dir / "images", ec);
    if (ec) {
        throw DataError("cannot create " + (out_dir / "images").string() + ": " + ec.message());
    }
    const std::array<std::pair<std::string, std::size_t>, 3> splits{
        {{"train", counts.train}, {"val", counts.val}, {"test", counts.test}}};
    std::map<std::string, DatasetManifest> out;
    std::uint64_t next_id = 0;
    for (const auto& [split, count] : splits) {
        DatasetManifest m;
        m.split = split;
        m.root = out_dir;
        for (std::size_t i = 0; i < count; ++i, ++next_id) {
            const SyntheticScene scene = make_scene(corpus_seed, next_id);
            char name[32];
            std::snprintf(name, sizeof name, "images/%06llu.ppm", static_cast<unsigned long long>(next_id));
            write_ppm(out_dir / name, render_scene(scene, side));
            const auto caps = scene_captions(scene);
            m.records.push_back(ManifestRecord{static_cast<std::int64_t>(next_id), name, {caps.begin(), caps.end()}});
        }
        write_manifest(manifest_path(out_dir, split), m);
        out.emplace(split, std::move(m));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Text

std::vector<std::string> tokenize(std::string_view text) {
    std::vector<std::string> out;
    std::string cur;
    auto flush = [&] {
        if (!cur.empty()) {
            out.push_back(std::move(cur));
            cur.clear();
        }
    };
    for (char ch : text) {
        const auto u = static_cast<unsigned char>(ch);
        if (u < 0x80 && std::isspace(u)) {
            flush();
            continue;
        }
        const char lower = (u >= 'A' && u <= 'Z') ? static_cast<char>(u - 'A' + 'a') : ch;
        if ((lower >= 'a' && lower <= 'z') || (lower >= '0' && lower <= '9')) {
            cur.push_back(lower);
        }
    }
    flush();
    return out;
}

Vocabulary Vocabulary::build(const std::vector<std::string>& captions, std::size_t k) {
    if (k == 0) {
        throw ContractError("build_vocabulary: cap k must be at least 1");
    }
    std::map<std::string, std::size_t> freq;
    for (const std::string& c : captions) {
        for (std::string& t : tokenize(c)) {
            ++freq[std::move(t)];
        }
    }
    if (freq.empty()) {
        throw ContractError("build_vocabulary: training captions contain no tokens");
    }
    std::vector<std::pair<std::string, std::size_t>> ranked(freq.begin(), freq.end());
    std::stable_sort(ranked.begin(), ranked.end(),
                     [](const auto& a, const auto& b) { return a.second > b.second; }); // map order = lexicographic
    Vocabulary v;
    v.cap_ = k;
    for (std::string_view r : kReserved) {
        v.tokens_.emplace_back(r);
    }
    for (std::size_t i = 0; i < ranked.size() && i < k; ++i) {
        if (std::find(kReserved.begin(), kReserved.end(), ranked[i].first) != kReserved.end()) {
            continue;
        }
        v.tokens_.push_back(ranked[i].first);
    }
    for (std::size_t i = 0; i < v.tokens_.size(); ++i) {
        v.ids_.emplace(v.tokens_[i], static_cast<int>(i));
    }
    return v;
}

void Vocabulary::save(const fs::path& path) const {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw DataError("cannot write vocabulary " + path.string());
    }
    for (std::size_t i = 0; i < tokens_.size(); ++i) {
        out << tokens_[i] << '\t' << i << '\n';
    }
}

Vocabulary Vocabulary::load(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw DataError("cannot read vocabulary " + path.string());
    }
    Vocabulary v;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) {
            continue;
        }
        const auto tab = line.find('\t');
        if (tab == std::string::npos) {
            throw FormatError("vocabulary line without a tab: '" + line + "'");
        }
        const std::string token = line.substr(0, tab);
        std::size_t value = 0;
        try {
            value = std::stoul(line.substr(tab + 1));
        } catch (const std::exception&) {
            throw FormatError("vocabulary line with a bad id: '" + line + "'");
        }
        if (value != v.tokens_.size()) {
            throw FormatError("vocabulary ids must be consecutive from 0; '" + token + "' has " + std::to_string(value));
        }
        if (value < kReserved.size() && token != kReserved[value]) {
            throw FormatError("vocabulary id " + std::to_string(value) + " must be " + std::string(kReserved[value]));
        }
        if (!v.ids_.emplace(token, static_cast<int>(value)).second) {
            throw FormatError("duplicate vocabulary token '" + token + "'");
        }
        v.tokens_.push_back(token);
    }
    if (v.tokens_.size() < kReserved.size()) {
        throw FormatError("vocabulary " + path.string() + " lacks the reserved tokens");
    }
    v.cap_ = v.tokens_.size() - kReserved.size();
    return v;
}

int Vocabulary::id(const std::string& token) const {
    const auto it = ids_.find(token);
    return it == ids_.end() ? kUnkId : it->second;
}

const std::string& Vocabulary::token(int id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
        throw IndexError("token id " + std::to_string(id) + " outside vocabulary of size " +
                         std::to_string(tokens_.size()));
    }
    return tokens_[static_cast<std::size_t>(id)];
}

std::uint64_t Vocabulary::fingerprint() const {
    std::uint64_t h = 1469598103934665603ULL;
    auto feed = [&h](std::string_view s) {
        for (char c : s) {
            h ^= static_cast<unsigned char>(c);
            h *= 1099511628211ULL;
        }
    };
    for (std::size_t i = 0; i < tokens_.size(); ++i) {
        feed(tokens_[i]);
        feed("\t" + std::to_string(i) + "\n");
    }
    return h;
}

std::vector<int> encode_caption(const Vocabulary& vocab, std::string_view text, std::size_t t_max) {
    if (t_max < 3) {
        throw ContractError("encode_caption: t_max must be at least 3");
    }
    std::vector<int> row(t_max, kPadId);
    row[0] = kStartId;
    const auto toks = tokenize(text);
    const std::size_t keep = std::min(toks.size(), t_max - 2);
    for (std::size_t i = 0; i < keep; ++i) {
        row[i + 1] = vocab.id(toks[i]);
    }
    row[keep + 1] = kEndId;
    return row;
}

std::vector<std::string> decode_caption(const Vocabulary& vocab, std::span<const int> ids) {
    std::vector<std::string> out;
    for (int id : ids) {
        if (id == kEndId) {
            break;
        }
        if (id == kPadId || id == kStartId) {
            continue;
        }
        out.push_back(vocab.token(id));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Batching

std::size_t Batch::max_length() const {
    return lengths.empty() ? 0 : *std::max_element(lengths.begin(), lengths.end());
}

ImageStore::ImageStore(const DatasetManifest& manifest) {
    for (const ManifestRecord& r : manifest.records) {
        const RgbImage img = read_ppm(manifest.image_path(r));
        if (img.width != img.height) {
            throw FormatError(manifest.image_path(r).string() + " is not square");
        }
        if (side_ == 0) {
            side_ = img.width;
        } else if (img.width != side_) {
            throw DataError("manifest " + manifest.split + " mixes image sides " + std::to_string(side_) + " and " +
                                std::to_string(img.width));
        }
        const Tensor t = image_to_tensor(img);
        pixels_.emplace_back(t.values().begin(), t.values().end());
    }
}

Tensor ImageStore::batch(std::span<const std::size_t> records) const {
    const std::size_t per = 3 * side_ * side_;
    std::vector<double> v;
    v.reserve(records.size() * per);
    for (std::size_t r : records) {
        const auto& p = pixels_.at(r);
        v.insert(v.end(), p.begin(), p.end());
    }
    return Tensor({records.size(), 3, side_, side_}, std::move(v));
}

std::vector<std::vector<Example>> plan_batches(const DatasetManifest& manifest, std::size_t batch_size,
                                               std::uint64_t shuffle_seed) {
    if (batch_size == 0) {
        throw ContractError("make_batches: batch size must be at least 1");
    }
    std::vector<Example> all;
    for (std::size_t r = 0; r < manifest.records.size(); ++r) {
        for (std::size_t c = 0; c < manifest.records[r].captions.size(); ++c) {
            all.push_back(Example{r, c});
        }
    }
    Rng rng(shuffle_seed);
    rng.shuffle(all);
    std::vector<std::vector<Example>> batches;
    for (std::size_t i = 0; i < all.size(); i += batch_size) {
        batches.emplace_back(all.begin() + static_cast<std::ptrdiff_t>(i),
                             all.begin() + static_cast<std::ptrdiff_t>(std::min(all.size(), i + batch_size)));
    }
    return batches;
}

Batch assemble_batch(const DatasetManifest& manifest, const ImageStore& images, const Vocabulary& vocab,
                     std::span<const Example> examples, std::size_t t_max) {
    Batch b;
    b.t_max = t_max;
    for (const Example& e : examples) {
        const auto row = encode_caption(vocab, manifest.records.at(e.record).captions.at(e.caption), t_max);
        b.tokens.insert(b.tokens.end(), row.begin(), row.end());
        b.lengths.push_back(static_cast<std::size_t>(std::find(row.begin(), row.end(), kEndId) - row.begin()) + 1);
        b.records.push_back(e.record);
    }
    b.images = images.batch(b.records);
    return b;
}

std::vector<Batch> make_batches(const DatasetManifest& manifest, const Vocabulary& vocab, std::size_t batch_size,
                                std::size_t t_max, std::uint64_t shuffle_seed) {
    const auto plan = plan_batches(manifest, batch_size, shuffle_seed);
    bool any_known = false;
    for (const ManifestRecord& r : manifest.records) {
        for (const std::string& c : r.captions) {
            for (const std::string& t : tokenize(c)) {
                any_known = any_known || vocab.contains(t);
            }
        }
    }
    if (!manifest.records.empty() && !any_known) {
        throw ContractError("make_batches: no caption token of manifest '" + manifest.split +
                            "' is in the vocabulary; manifest and vocabulary do not belong together");
    }
    const ImageStore images(manifest);
    std::vector<Batch> out;
    for (const auto& examples : plan) {
        out.push_back(assemble_batch(manifest, images, vocab, examples, t_max));
    }
    return out;
}

std::vector<std::string> all_captions(const DatasetManifest& manifest) {
    std::vector<std::string> out;
    for (const ManifestRecord& r : manifest.records) {
        out.insert(out.end(), r.captions.begin(), r.captions.end());
    }
    return out;
}

} // namespace attncap
