#include "comics/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace comics {

namespace {

constexpr char kMagic[8] = {'C', 'O', 'M', 'I', 'C', 'S', 'C', 'K'};

template <typename T>
void put(std::ostream& os, T v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& is, const std::filesystem::path& path) {
    T v{};
    if (!is.read(reinterpret_cast<char*>(&v), sizeof(T)))
        throw std::runtime_error("checkpoint " + path.string() + ": truncated");
    return v;
}

CheckpointHeader read_header(std::istream& is, const std::filesystem::path& path) {
    char magic[8];
    if (!is.read(magic, 8) || std::memcmp(magic, kMagic, 8) != 0)
        throw std::runtime_error("checkpoint " + path.string() + ": bad magic");
    const auto len = get<uint32_t>(is, path);
    std::string text(len, '\0');
    if (!is.read(text.data(), len)) throw std::runtime_error("checkpoint " + path.string() + ": truncated header");
    CheckpointHeader h;
    try {
        const auto j = nlohmann::json::parse(text);
        h.format_version = j.at("format_version").get<int>();
        h.config_hash = std::stoull(j.at("config_hash").get<std::string>(), nullptr, 16);
        h.step = j.at("step").get<int64_t>();
    } catch (const std::exception& e) {
        throw std::runtime_error("checkpoint " + path.string() + ": bad header: " + e.what());
    }
    if (h.format_version != kCheckpointFormatVersion)
        throw std::runtime_error("checkpoint " + path.string() + ": unsupported format_version " +
                                 std::to_string(h.format_version));
    return h;
}

}  // namespace

void write_checkpoint(const std::filesystem::path& path, const CheckpointHeader& header,
                      torch::serialize::OutputArchive& archive) {
    std::ostringstream payload;
    archive.save_to(payload);
    const std::string body = payload.str();

    char hash[17];
    std::snprintf(hash, sizeof(hash), "%016llx", static_cast<unsigned long long>(header.config_hash));
    const std::string json =
        nlohmann::json{{"format_version", header.format_version}, {"config_hash", hash}, {"step", header.step}}.dump();

    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
        if (!os) throw std::runtime_error("cannot write checkpoint " + tmp.string());
        os.write(kMagic, 8);
        put<uint32_t>(os, uint32_t(json.size()));
        os.write(json.data(), std::streamsize(json.size()));
        put<uint64_t>(os, uint64_t(body.size()));
        os.write(body.data(), std::streamsize(body.size()));
        if (!os) throw std::runtime_error("failed writing checkpoint " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

CheckpointHeader read_checkpoint_header(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open checkpoint " + path.string());
    return read_header(is, path);
}

CheckpointHeader read_checkpoint(const std::filesystem::path& path, torch::serialize::InputArchive& archive) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open checkpoint " + path.string());
    const auto header = read_header(is, path);
    const auto len = get<uint64_t>(is, path);
    std::string body(len, '\0');
    if (!is.read(body.data(), std::streamsize(len)))
        throw std::runtime_error("checkpoint " + path.string() + ": truncated payload");
    std::istringstream ps(body);
    archive.load_from(ps);
    return header;
}

}  // namespace comics
