#include "fedcpc/federation/weights.hpp"

#include <zlib.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <limits>

namespace fedcpc::federation {

namespace {

static_assert(std::endian::native == std::endian::little, "payloads are copied as little-endian");

constexpr char kMagic[4] = {'F', 'C', 'W', '1'};

template <class T>
void put(std::vector<std::uint8_t>& out, T v) {
    std::uint8_t b[sizeof(T)];
    std::memcpy(b, &v, sizeof(T));
    out.insert(out.end(), b, b + sizeof(T));
}

class Reader {
public:
    explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

    template <class T>
    T get() {
        T v;
        std::memcpy(&v, take(sizeof(T)).data(), sizeof(T));
        return v;
    }
    std::span<const std::uint8_t> take(std::size_t n) {
        if (n > bytes_.size() - pos_) throw DecodeError(DecodeFailure::truncated, "weights buffer is truncated");
        auto s = bytes_.subspan(pos_, n);
        pos_ += n;
        return s;
    }
    std::size_t remaining() const { return bytes_.size() - pos_; }

private:
    std::span<const std::uint8_t> bytes_;
    std::size_t pos_ = 0;
};

} // namespace

std::uint32_t crc32_of(std::span<const std::uint8_t> bytes) {
    uLong crc = crc32(0L, Z_NULL, 0);
    // zlib takes a uInt length; feed large buffers in pieces.
    std::size_t pos = 0;
    while (pos < bytes.size()) {
        const auto n = static_cast<uInt>(std::min<std::size_t>(bytes.size() - pos, 1u << 30));
        crc = crc32(crc, bytes.data() + pos, n);
        pos += n;
    }
    return static_cast<std::uint32_t>(crc);
}

std::vector<std::uint8_t> serialize_weights(const ParameterSet& params) {
    std::vector<std::uint8_t> out(kMagic, kMagic + 4);
    put<std::uint32_t>(out, kWeightsVersion);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(params.size()));
    for (const auto& [name, t] : params.entries()) {
        if (name.size() > std::numeric_limits<std::uint16_t>::max())
            throw ContractViolation("parameter name too long for the weights format: " + name);
        if (t.rank() > 255) throw ContractViolation("tensor rank too large for the weights format");
        put<std::uint16_t>(out, static_cast<std::uint16_t>(name.size()));
        out.insert(out.end(), name.begin(), name.end());
        put<std::uint8_t>(out, static_cast<std::uint8_t>(t.dtype()));
        put<std::uint8_t>(out, static_cast<std::uint8_t>(t.rank()));
        for (std::size_t d : t.shape()) {
            if (d > std::numeric_limits<std::uint32_t>::max()) throw ContractViolation("tensor extent exceeds u32");
            put<std::uint32_t>(out, static_cast<std::uint32_t>(d));
        }
        dispatch(t.dtype(), [&]<class T>() {
            auto data = t.data<T>();
            const auto* p = reinterpret_cast<const std::uint8_t*>(data.data());
            out.insert(out.end(), p, p + data.size_bytes());
        });
    }
    put<std::uint32_t>(out, crc32_of(std::span(out).subspan(4)));
    return out;
}

ParameterSet deserialize_weights(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < 4) throw DecodeError(DecodeFailure::truncated, "weights buffer shorter than its magic");
    if (std::memcmp(bytes.data(), kMagic, 4) != 0) throw DecodeError(DecodeFailure::bad_magic, "not an FCW1 buffer");
    if (bytes.size() < 16) throw DecodeError(DecodeFailure::truncated, "weights buffer is truncated");

    // Structure is parsed before the checksum so truncation and trailing bytes get their own errors.
    Reader r(bytes.subspan(4, bytes.size() - 8));
    const auto version = r.get<std::uint32_t>();
    if (version != kWeightsVersion)
        throw DecodeError(DecodeFailure::unsupported_version, "unsupported weights version " + std::to_string(version));
    const auto count = r.get<std::uint32_t>();
    ParameterSet out;
    for (std::uint32_t i = 0; i < count; ++i) {
        const auto name_len = r.get<std::uint16_t>();
        auto name_bytes = r.take(name_len);
        std::string name(name_bytes.begin(), name_bytes.end());
        const auto code = r.get<std::uint8_t>();
        if (code > 1) throw DecodeError(DecodeFailure::malformed, "unknown dtype code " + std::to_string(code));
        const auto dtype = static_cast<DType>(code);
        const auto rank = r.get<std::uint8_t>();
        Shape shape(rank);
        for (auto& d : shape) d = r.get<std::uint32_t>();
        if (rank == 0) throw DecodeError(DecodeFailure::malformed, "tensor '" + name + "' has rank 0");
        // Bound the allocation by what the buffer can still hold.
        std::size_t limit = r.remaining() / (dtype == DType::f32 ? 4 : 8), numel = 1;
        for (std::size_t d : shape) {
            if (d == 0) throw DecodeError(DecodeFailure::malformed, "tensor '" + name + "' has a zero extent");
            if (numel > limit / d) throw DecodeError(DecodeFailure::truncated, "weights buffer is truncated");
            numel *= d;
        }
        Tensor t(shape, dtype);
        dispatch(dtype, [&]<class T>() {
            auto data = t.data<T>();
            auto payload = r.take(data.size_bytes());
            std::memcpy(data.data(), payload.data(), payload.size());
        });
        if (out.contains(name)) throw DecodeError(DecodeFailure::malformed, "duplicate tensor name '" + name + "'");
        out.add(std::move(name), std::move(t));
    }
    if (r.remaining() != 0) throw DecodeError(DecodeFailure::trailing_bytes, "trailing bytes after the last tensor");

    std::uint32_t stored;
    std::memcpy(&stored, bytes.data() + bytes.size() - 4, 4);
    if (stored != crc32_of(bytes.subspan(4, bytes.size() - 8)))
        throw DecodeError(DecodeFailure::checksum_mismatch, "weights checksum mismatch");
    return out;
}

void save_weights(const std::filesystem::path& path, const ParameterSet& params) {
    const auto bytes = serialize_weights(params);
    std::error_code ec;
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path(), ec);
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot write " + path.string());
    os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!os) throw IoError("failed writing " + path.string());
}

ParameterSet load_weights(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot read checkpoint " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    return deserialize_weights(bytes);
}

} // namespace fedcpc::federation
