#include "iseg/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "iseg/errors.hpp"

namespace iseg {
namespace {

constexpr char kMagic[5] = {'C', 'P', 'K', 'T', '1'};

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

class Reader {
  public:
    explicit Reader(const std::vector<std::uint8_t>& bytes) : bytes_(bytes) {}

    std::uint64_t u64() {
        need(8, "u64");
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes_[pos_ + i]) << (8 * i);
        pos_ += 8;
        return v;
    }
    std::uint32_t u32() {
        need(4, "u32");
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_ + i]) << (8 * i);
        pos_ += 4;
        return v;
    }
    std::string str(std::size_t n) {
        need(n, "name");
        std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
        pos_ += n;
        return s;
    }
    void need(std::size_t n, const char* what) const {
        if (bytes_.size() - pos_ < n) {
            throw FormatError(std::string("checkpoint truncated while reading ") + what + " at offset " +
                              std::to_string(pos_));
        }
    }
    std::size_t remaining() const { return bytes_.size() - pos_; }

  private:
    const std::vector<std::uint8_t>& bytes_;
    std::size_t pos_ = 0;
};

} // namespace

std::vector<std::uint8_t> encode_checkpoint(const NamedTensors& tensors) {
    std::vector<std::uint8_t> out(kMagic, kMagic + 5);
    put_u32(out, kCheckpointVersion);
    put_u64(out, tensors.size());
    for (const auto& [name, t] : tensors) {
        put_u64(out, name.size());
        out.insert(out.end(), name.begin(), name.end());
        put_u64(out, t.rank());
        for (auto e : t.shape()) put_u64(out, e);
        for (double v : t.data()) put_u64(out, std::bit_cast<std::uint64_t>(v));
    }
    return out;
}

NamedTensors decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
    if (bytes.size() < 5 || std::memcmp(bytes.data(), kMagic, 5) != 0) {
        throw FormatError("not a CPKT1 checkpoint (bad magic)");
    }
    std::vector<std::uint8_t> body(bytes.begin() + 5, bytes.end());
    Reader r(body);
    const auto version = r.u32();
    if (version != kCheckpointVersion) {
        throw FormatError("unsupported checkpoint version " + std::to_string(version));
    }
    const auto count = r.u64();
    NamedTensors out;
    for (std::uint64_t i = 0; i < count; ++i) {
        const auto name_len = r.u64();
        auto name = r.str(static_cast<std::size_t>(name_len));
        const auto rank = r.u64();
        if (rank > 8) throw FormatError("checkpoint tensor '" + name + "' has implausible rank");
        Shape shape;
        for (std::uint64_t d = 0; d < rank; ++d) shape.push_back(static_cast<std::size_t>(r.u64()));
        const auto n = shape_numel(shape);
        if (r.remaining() / 8 < n) throw FormatError("checkpoint truncated in data of '" + name + "'");
        std::vector<double> values(n);
        for (auto& v : values) v = std::bit_cast<double>(r.u64());
        out.emplace_back(std::move(name), Tensor(std::move(shape), std::move(values)));
    }
    if (r.remaining() != 0) throw FormatError("trailing bytes after checkpoint payload");
    return out;
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open file: " + path.string());
    return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), {});
}

void write_file_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write file: " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed: " + path.string());
}

void save_checkpoint(const std::filesystem::path& path, const NamedTensors& tensors) {
    write_file_bytes(path, encode_checkpoint(tensors));
}

NamedTensors load_checkpoint(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) throw IoError("checkpoint not found: " + path.string());
    try {
        return decode_checkpoint(read_file_bytes(path));
    } catch (const FormatError& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
}

std::uint64_t fnv1a(const std::uint8_t* data, std::size_t size) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (std::size_t i = 0; i < size; ++i) {
        h ^= data[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::string hex64(std::uint64_t value) {
    std::ostringstream os;
    os << std::hex << std::setw(16) << std::setfill('0') << value;
    return os.str();
}

} // namespace iseg
