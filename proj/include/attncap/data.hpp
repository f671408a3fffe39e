#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "attncap/tensor.hpp"

namespace attncap {

// ---------------------------------------------------------------------------
// Synthetic scenes

enum class ShapeKind { circle, square, triangle };
enum class Color { red, green, blue, yellow };

std::string_view shape_name(ShapeKind s);
std::string_view color_name(Color c);

struct SceneObject {
    ShapeKind shape;
    Color color;
    int cell; // 0..8 on a 3x3 placement grid, row-major
};

struct SyntheticScene {
    std::uint64_t id = 0;
    std::vector<SceneObject> objects; // 1..3, distinct cells, sorted by cell
};

// Deterministic in (corpus_seed, scene_id).
SyntheticScene make_scene(std::uint64_t corpus_seed, std::uint64_t scene_id);

// Five paraphrases. Every caption names the color and shape of every object.
std::array<std::string, 5> scene_captions(const SyntheticScene& scene);

// ---------------------------------------------------------------------------
// Images

struct RgbImage {
    std::size_t width = 0;
    std::size_t height = 0;
    std::vector<std::uint8_t> pixels; // RGB interleaved, row-major
};

struct GrayImage {
    std::size_t width = 0;
    std::size_t height = 0;
    std::vector<std::uint8_t> pixels;
};

inline constexpr std::size_t kMinRenderSide = 16;

// Filled shapes on a flat background, integer arithmetic only.
RgbImage render_scene(const SyntheticScene& scene, std::size_t side);

// Binary PPM ("P6") / PGM ("P5") with maxval 255.
void write_ppm(const std::filesystem::path& path, const RgbImage& image);
RgbImage read_ppm(const std::filesystem::path& path);
RgbImage parse_ppm(std::string_view bytes);
void write_pgm(const std::filesystem::path& path, const GrayImage& image);
GrayImage read_pgm(const std::filesystem::path& path);
GrayImage parse_pgm(std::string_view bytes);

// [3 x H x W], values scaled to [0, 1].
Tensor image_to_tensor(const RgbImage& image);

// ---------------------------------------------------------------------------
// Manifests

struct ManifestRecord {
    std::int64_t id = 0;
    std::string image; // relative to the manifest's directory
    std::vector<std::string> captions;
};

struct DatasetManifest {
    std::string split;
    std::filesystem::path root; // directory image paths are relative to
    std::vector<ManifestRecord> records;

    std::filesystem::path image_path(const ManifestRecord& r) const { return root / r.image; }
};

// JSON lines: {"id": int, "image": "relative/path", "captions": [5 strings]}.
void write_manifest(const std::filesystem::path& path, const DatasetManifest& manifest);
DatasetManifest read_manifest(const std::filesystem::path& path, const std::string& split = "");

// <data_dir>/<split>.jsonl
std::filesystem::path manifest_path(const std::filesystem::path& data_dir, const std::string& split);
DatasetManifest load_split(const std::filesystem::path& data_dir, const std::string& split);

struct SplitCounts {
    std::size_t train = 500;
    std::size_t val = 100;
    std::size_t test = 100;
};

// Renders every scene to <out_dir>/images/<id>.ppm and writes train/val/test
// manifests. Scene ids are consecutive across splits, so splits are disjoint.
std::map<std::string, DatasetManifest> generate_dataset(std::uint64_t corpus_seed, const SplitCounts& counts,
                                                        std::size_t side, const std::filesystem::path& out_dir);

// ---------------------------------------------------------------------------
// Text

// Lowercase, split on whitespace, drop characters outside [a-z0-9], drop empties.
std::vector<std::string> tokenize(std::string_view text);

class Vocabulary {
  public:
    static constexpr std::array<std::string_view, 4> kReserved{"<pad>", "<start>", "<end>", "<unk>"};

    // Keeps the k most frequent tokens (ties broken lexicographically) and
    // numbers them from 4 in that order.
    static Vocabulary build(const std::vector<std::string>& captions, std::size_t k);

    // "token<TAB>id" per line, reserved tokens first.
    void save(const std::filesystem::path& path) const;
    static Vocabulary load(const std::filesystem::path& path);

    std::size_t size() const { return tokens_.size(); }
    std::size_t cap() const { return cap_; }
    int id(const std::string& token) const; // kUnkId when absent
    bool contains(const std::string& token) const { return ids_.count(token) != 0; }
    const std::string& token(int id) const;
    const std::vector<std::string>& tokens() const { return tokens_; }

    // FNV-1a over the saved file contents; ties checkpoints to vocabularies.
    std::uint64_t fingerprint() const;

    bool operator==(const Vocabulary& other) const { return tokens_ == other.tokens_; }

  private:
    std::vector<std::string> tokens_;
    std::unordered_map<std::string, int> ids_;
    std::size_t cap_ = 0;
};

// [START] ids... [END] then PAD up to t_max; long captions lose their tail
// before END. t_max >= 3.
std::vector<int> encode_caption(const Vocabulary& vocab, std::string_view text, std::size_t t_max);

// Tokens between START and END (PAD and START skipped, stops at END).
std::vector<std::string> decode_caption(const Vocabulary& vocab, std::span<const int> ids);

// ---------------------------------------------------------------------------
// Batching

struct Batch {
    Tensor images;                   // [B x 3 x H x W]
    std::vector<int> tokens;         // [B x t_max] row-major
    std::size_t t_max = 0;
    std::vector<std::size_t> lengths; // START..END inclusive
    std::vector<std::size_t> records; // manifest record index per row

    std::size_t size() const { return lengths.size(); }
    std::size_t max_length() const;
};

struct Example {
    std::size_t record;
    std::size_t caption;
};

// Decoded images of a manifest, kept in memory as [3 x H x W] pixel arrays.
class ImageStore {
  public:
    explicit ImageStore(const DatasetManifest& manifest);
    std::size_t side() const { return side_; }
    std::size_t size() const { return pixels_.size(); }
    const std::vector<double>& pixels(std::size_t record) const { return pixels_.at(record); }
    Tensor batch(std::span<const std::size_t> records) const;

  private:
    std::size_t side_ = 0;
    std::vector<std::vector<double>> pixels_;
};

// Every (record, caption) pair is one example; shuffled with the seed and cut
// into batches of `batch_size`, the last one possibly partial.
std::vector<std::vector<Example>> plan_batches(const DatasetManifest& manifest, std::size_t batch_size,
                                               std::uint64_t shuffle_seed);

Batch assemble_batch(const DatasetManifest& manifest, const ImageStore& images, const Vocabulary& vocab,
                     std::span<const Example> examples, std::size_t t_max);

std::vector<Batch> make_batches(const DatasetManifest& manifest, const Vocabulary& vocab, std::size_t batch_size,
                                std::size_t t_max, std::uint64_t shuffle_seed);

// All captions of a manifest, in record order.
std::vector<std::string> all_captions(const DatasetManifest& manifest);

} // namespace attncap
