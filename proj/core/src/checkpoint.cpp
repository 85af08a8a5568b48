#include "ilm/checkpoint.hpp"

#include "ilm/errors.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>

namespace ilm {

namespace {

constexpr char kMagic[8] = {'I', 'L', 'M', 'C', 'K', 'P', 'T', '\0'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::string& buf, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_u64(std::string& buf, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_f64(std::string& buf, double v) {
    put_u64(buf, std::bit_cast<std::uint64_t>(v));
}

class Reader {
public:
    explicit Reader(std::string bytes) : bytes_(std::move(bytes)) {}

    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) {
            v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes_[pos_ + static_cast<std::size_t>(i)]))
                 << (8 * i);
        }
        pos_ += 4;
        return v;
    }

    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) {
            v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + static_cast<std::size_t>(i)]))
                 << (8 * i);
        }
        pos_ += 8;
        return v;
    }

    double f64() { return std::bit_cast<double>(u64()); }

    std::string str(std::size_t len) {
        need(len);
        std::string s = bytes_.substr(pos_, len);
        pos_ += len;
        return s;
    }

    bool done() const { return pos_ == bytes_.size(); }

private:
    std::string bytes_;
    std::size_t pos_ = 0;

    void need(std::size_t n) {
        if (pos_ + n > bytes_.size()) throw ConfigError("checkpoint: truncated file");
    }
};

} // namespace

void save_checkpoint(const std::filesystem::path& path, std::span<const NamedArray> arrays) {
    std::string buf;
    buf.append(kMagic, sizeof(kMagic));
    put_u32(buf, kVersion);
    put_u32(buf, static_cast<std::uint32_t>(arrays.size()));
    for (const auto& a : arrays) {
        std::size_t numel = 1;
        for (std::size_t d : a.shape) numel *= d;
        if (numel != a.data.size()) {
            throw ConfigError("checkpoint: array '" + a.name + "' shape inconsistent with data");
        }
        put_u32(buf, static_cast<std::uint32_t>(a.name.size()));
        buf.append(a.name);
        put_u32(buf, static_cast<std::uint32_t>(a.shape.size()));
        for (std::size_t d : a.shape) put_u64(buf, d);
        for (double v : a.data) put_f64(buf, v);
    }
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw InputError("checkpoint: cannot open " + path.string() + " for writing");
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!out) throw InputError("checkpoint: write failed for " + path.string());
}

std::vector<NamedArray> load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError("checkpoint: cannot open " + path.string());
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    Reader r(std::move(bytes));
    const std::string magic = r.str(sizeof(kMagic));
    if (std::memcmp(magic.data(), kMagic, sizeof(kMagic)) != 0) {
        throw ConfigError("checkpoint: bad magic in " + path.string());
    }
    const std::uint32_t version = r.u32();
    if (version != kVersion) {
        throw ConfigError("checkpoint: unsupported version " + std::to_string(version));
    }
    const std::uint32_t count = r.u32();
    std::vector<NamedArray> arrays;
    arrays.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        NamedArray a;
        const std::uint32_t name_len = r.u32();
        a.name = r.str(name_len);
        const std::uint32_t ndim = r.u32();
        std::size_t numel = 1;
        for (std::uint32_t d = 0; d < ndim; ++d) {
            a.shape.push_back(static_cast<std::size_t>(r.u64()));
            numel *= a.shape.back();
        }
        a.data.resize(numel);
        for (std::size_t v = 0; v < numel; ++v) a.data[v] = r.f64();
        arrays.push_back(std::move(a));
    }
    if (!r.done()) throw ConfigError("checkpoint: trailing bytes in " + path.string());
    return arrays;
}

} // namespace ilm
