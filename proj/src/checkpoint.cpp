#include "attncap/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include "attncap/errors.hpp"

namespace attncap {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[4] = {'A', 'T', 'N', 'C'};

template <class T>
void put(std::string& out, T v) {
    char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    out.append(buf, sizeof(T));
}

void put_bytes(std::string& out, const std::string& s) {
    put<std::uint64_t>(out, s.size());
    out += s;
}

class Reader {
  public:
    explicit Reader(std::string_view bytes) : bytes_(bytes) {}

    template <class T>
    T get(const char* what) {
        need(sizeof(T), what);
        T v;
        std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
        pos_ += sizeof(T);
        return v;
    }

    std::string take(std::size_t n, const char* what) {
        need(n, what);
        std::string s(bytes_.substr(pos_, n));
        pos_ += n;
        return s;
    }

    bool done() const { return pos_ == bytes_.size(); }

  private:
    void need(std::size_t n, const char* what) const {
        if (n > bytes_.size() - pos_) {
            throw FormatError(std::string("checkpoint truncated while reading ") + what);
        }
    }

    std::string_view bytes_;
    std::size_t pos_ = 0;
};

} // namespace

std::string serialize_checkpoint(const Checkpoint& ckpt) {
    std::string out(kMagic, 4);
    put<std::uint32_t>(out, kCheckpointVersion);
    put_bytes(out, ckpt.config.dump());
    put<std::uint64_t>(out, ckpt.epoch);
    put_bytes(out, ckpt.rng_state);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(ckpt.tensors.size()));
    for (const auto& [name, t] : ckpt.tensors) {
        put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
        out += name;
        put<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
        for (std::size_t d : t.shape()) {
            put<std::uint64_t>(out, d);
        }
        for (double v : t.values()) {
            put<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
        }
    }
    return out;
}

Checkpoint parse_checkpoint(std::string_view bytes) {
    Reader in(bytes);
    if (in.take(4, "magic") != std::string(kMagic, 4)) {
        throw FormatError("not a checkpoint: bad magic bytes");
    }
    auto version = in.get<std::uint32_t>("version");
    if (version != kCheckpointVersion) {
        throw FormatError("unsupported checkpoint version " + std::to_string(version) + " (this build reads version " +
                          std::to_string(kCheckpointVersion) + ")");
    }
    Checkpoint ckpt;
    auto config_len = in.get<std::uint64_t>("config length");
    std::string config_text = in.take(config_len, "config");
    try {
        ckpt.config = nlohmann::ordered_json::parse(config_text);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("checkpoint config is not valid JSON: ") + e.what());
    }
    ckpt.epoch = in.get<std::uint64_t>("epoch");
    auto rng_len = in.get<std::uint64_t>("rng state length");
    ckpt.rng_state = in.take(rng_len, "rng state");
    auto count = in.get<std::uint32_t>("tensor count");
    for (std::uint32_t i = 0; i < count; ++i) {
        auto name_len = in.get<std::uint32_t>("tensor name length");
        std::string name = in.take(name_len, "tensor name");
        auto rank = in.get<std::uint32_t>("tensor rank");
        if (rank > 8) {
            throw FormatError("tensor '" + name + "' has implausible rank " + std::to_string(rank));
        }
        Shape shape(rank);
        std::size_t n = 1;
        for (auto& d : shape) {
            d = in.get<std::uint64_t>("tensor extents");
            if (d != 0 && n > bytes.size() / d) {
                throw FormatError("tensor '" + name + "' extents exceed the file size");
            }
            n *= d;
        }
        Buffer values(n);
        for (auto& v : values) {
            v = std::bit_cast<double>(in.get<std::uint64_t>("tensor values"));
        }
        ckpt.tensors.emplace_back(std::move(name), Tensor(std::move(shape), std::move(values)));
    }
    if (!in.done()) {
        throw FormatError("trailing bytes after checkpoint tensors");
    }
    return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
    std::string bytes = serialize_checkpoint(ckpt);
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) {
            throw DataError("cannot write checkpoint " + tmp.string());
        }
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!out) {
            throw DataError("failed writing checkpoint " + tmp.string());
        }
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) {
        throw DataError("cannot move checkpoint into place at " + path.string() + ": " + ec.message());
    }
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw DataError("cannot open checkpoint " + path.string());
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    try {
        return parse_checkpoint(ss.str());
    } catch (const FormatError& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
}

nlohmann::ordered_json checkpoint_config(const TrainConfig& config, std::size_t vocab_size,
                                         std::uint64_t vocab_fingerprint) {
    nlohmann::ordered_json j;
    j["train"] = config.to_json();
    j["vocab_size"] = vocab_size;
    j["vocab_fingerprint"] = vocab_fingerprint;
    return j;
}

Checkpoint make_checkpoint(const CaptionModel& model, const TrainConfig& config, std::uint64_t vocab_fingerprint,
                           std::uint64_t epoch, const std::string& rng_state) {
    Checkpoint ckpt;
    ckpt.config = checkpoint_config(config, model.config.vocab_size, vocab_fingerprint);
    ckpt.epoch = epoch;
    ckpt.rng_state = rng_state;
    for (const auto& [name, t] : model.named_parameters()) {
        ckpt.tensors.emplace_back(name, t.detach());
    }
    return ckpt;
}

LoadedModel model_from_checkpoint(const Checkpoint& ckpt) {
    LoadedModel out;
    try {
        out.config = TrainConfig::from_json(ckpt.config.at("train"));
        out.vocab_fingerprint = ckpt.config.at("vocab_fingerprint").get<std::uint64_t>();
        auto vocab_size = ckpt.config.at("vocab_size").get<std::size_t>();
        out.config.validate();
        out.model = CaptionModel::init(out.config.model_config(vocab_size), out.config.param_seed);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("checkpoint config incomplete: ") + e.what());
    } catch (const ContractError& e) {
        throw FormatError(std::string("checkpoint config invalid: ") + e.what());
    }
    out.epoch = ckpt.epoch;

    std::map<std::string, const Tensor*> stored;
    for (const auto& [name, t] : ckpt.tensors) {
        stored[name] = &t;
    }
    auto params = out.model.named_parameters();
    if (params.size() != stored.size()) {
        throw FormatError("checkpoint holds " + std::to_string(stored.size()) + " tensors, model expects " +
                          std::to_string(params.size()));
    }
    for (auto& [name, t] : params) {
        auto it = stored.find(name);
        if (it == stored.end()) {
            throw FormatError("checkpoint lacks parameter '" + name + "'");
        }
        if (it->second->shape() != t.shape()) {
            throw FormatError("parameter '" + name + "' stored as " + shape_string(it->second->shape()) +
                              ", model expects " + shape_string(t.shape()));
        }
        auto src = it->second->values();
        std::copy(src.begin(), src.end(), t.mutable_values().begin());
    }
    return out;
}

LoadedModel load_model(const std::filesystem::path& path) { return model_from_checkpoint(load_checkpoint(path)); }

} // namespace attncap
