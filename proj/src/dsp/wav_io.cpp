#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>

#include "fedcpc/core/error.hpp"
#include "fedcpc/dsp/waveform.hpp"

namespace fedcpc::dsp {

namespace {

constexpr float kPcmScale = 32767.0f;

std::int16_t to_pcm(float x) {
    const float c = std::clamp(x, -1.0f, 1.0f);
    return static_cast<std::int16_t>(std::lround(c * kPcmScale));
}

void put_u32(std::vector<char>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
void put_u16(std::vector<char>& out, std::uint16_t v) {
    out.push_back(static_cast<char>(v & 0xff));
    out.push_back(static_cast<char>(v >> 8));
}
std::uint32_t get_u32(const unsigned char* p) { return p[0] | (p[1] << 8) | (p[2] << 16) | (std::uint32_t(p[3]) << 24); }
std::uint16_t get_u16(const unsigned char* p) { return static_cast<std::uint16_t>(p[0] | (p[1] << 8)); }

} // namespace

std::vector<float> quantize_pcm16(const std::vector<float>& samples) {
    std::vector<float> out(samples.size());
    for (std::size_t i = 0; i < samples.size(); ++i) out[i] = static_cast<float>(to_pcm(samples[i])) / kPcmScale;
    return out;
}

void write_wav(const std::filesystem::path& path, const Waveform& wave) {
    const std::uint32_t data_bytes = static_cast<std::uint32_t>(wave.samples.size() * 2);
    std::vector<char> buf;
    buf.reserve(44 + data_bytes);
    buf.insert(buf.end(), {'R', 'I', 'F', 'F'});
    put_u32(buf, 36 + data_bytes);
    buf.insert(buf.end(), {'W', 'A', 'V', 'E', 'f', 'm', 't', ' '});
    put_u32(buf, 16);
    put_u16(buf, 1); // PCM
    put_u16(buf, 1); // mono
    put_u32(buf, static_cast<std::uint32_t>(wave.sample_rate));
    put_u32(buf, static_cast<std::uint32_t>(wave.sample_rate) * 2);
    put_u16(buf, 2);
    put_u16(buf, 16);
    buf.insert(buf.end(), {'d', 'a', 't', 'a'});
    put_u32(buf, data_bytes);
    for (float s : wave.samples) put_u16(buf, static_cast<std::uint16_t>(to_pcm(s)));

    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open " + path.string() + " for writing");
    f.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!f) throw IoError("failed writing " + path.string());
}

Waveform read_wav(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open " + path.string());
    std::vector<unsigned char> buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    if (buf.size() < 12 || std::memcmp(buf.data(), "RIFF", 4) != 0 || std::memcmp(buf.data() + 8, "WAVE", 4) != 0)
        throw IoError(path.string() + ": not a RIFF/WAVE file");

    Waveform w;
    bool have_fmt = false;
    std::size_t pos = 12;
    while (pos + 8 <= buf.size()) {
        const unsigned char* chunk = buf.data() + pos;
        const std::uint32_t size = get_u32(chunk + 4);
        const std::size_t body = pos + 8;
        if (body + size > buf.size()) throw IoError(path.string() + ": truncated chunk");
        if (std::memcmp(chunk, "fmt ", 4) == 0) {
            if (size < 16) throw IoError(path.string() + ": short fmt chunk");
            const std::uint16_t format = get_u16(buf.data() + body), channels = get_u16(buf.data() + body + 2);
            const std::uint16_t bits = get_u16(buf.data() + body + 14);
            if (format != 1 || channels != 1 || bits != 16)
                throw IoError(path.string() + ": only mono 16-bit PCM is supported");
            w.sample_rate = static_cast<int>(get_u32(buf.data() + body + 4));
            have_fmt = true;
        } else if (std::memcmp(chunk, "data", 4) == 0) {
            if (!have_fmt) throw IoError(path.string() + ": data chunk before fmt chunk");
            w.samples.resize(size / 2);
            for (std::size_t i = 0; i < w.samples.size(); ++i)
                w.samples[i] = static_cast<float>(static_cast<std::int16_t>(get_u16(buf.data() + body + 2 * i))) /
                               kPcmScale;
            return w;
        }
        pos = body + size + (size & 1);
    }
    throw IoError(path.string() + ": no data chunk");
}

} // namespace fedcpc::dsp
