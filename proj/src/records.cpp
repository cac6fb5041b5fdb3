#include "pros/records.hpp"

#include <zlib.h>

#include <cstring>
#include <fstream>

namespace pros {

namespace {

constexpr char kMagic[8] = {'P', 'R', 'O', 'S', 'C', 'K', 'P', 'T'};

void append_u32(std::string& out, uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void append_u64(std::string& out, uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::string section_payload(const RecordSection& s) {
    std::string payload;
    append_u32(payload, static_cast<uint32_t>(s.name.size()));
    payload += s.name;
    append_u32(payload, static_cast<uint32_t>(s.shape.size()));
    for (int d : s.shape) append_u64(payload, static_cast<uint64_t>(d));
    const size_t off = payload.size();
    payload.resize(off + s.data.size() * sizeof(float));
    float* dst = reinterpret_cast<float*>(payload.data() + off);
    for (size_t i = 0; i < s.data.size(); ++i) dst[i] = static_cast<float>(s.data[i]);
    return payload;
}

uint32_t payload_crc(const std::string& payload) {
    return static_cast<uint32_t>(crc32(
        0L, reinterpret_cast<const Bytef*>(payload.data()), static_cast<uInt>(payload.size())));
}

class Reader {
   public:
    explicit Reader(std::ifstream& f) : f_(f) {}

    void bytes(void* dst, size_t n, const std::string& what) {
        f_.read(static_cast<char*>(dst), static_cast<std::streamsize>(n));
        if (!f_) throw IoError("checkpoint: truncated while reading " + what);
    }

    uint32_t u32(const std::string& what) {
        unsigned char b[4];
        bytes(b, 4, what);
        uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(b[i]) << (8 * i);
        return v;
    }

    uint64_t u64(const std::string& what) {
        unsigned char b[8];
        bytes(b, 8, what);
        uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(b[i]) << (8 * i);
        return v;
    }

   private:
    std::ifstream& f_;
};

}  // namespace

void write_record_file(const std::string& path, const RecordFile& file) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("checkpoint: cannot open " + path + " for writing");
    f.write(kMagic, 8);
    std::string head;
    append_u32(head, file.version);
    append_u64(head, file.config_text.size());
    head += file.config_text;
    append_u32(head, static_cast<uint32_t>(file.sections.size()));
    f.write(head.data(), static_cast<std::streamsize>(head.size()));
    for (const RecordSection& s : file.sections) {
        if (numel(s.shape) != static_cast<int64_t>(s.data.size()))
            throw ShapeError("checkpoint: section " + s.name + " size mismatch on save");
        const std::string payload = section_payload(s);
        f.write(payload.data(), static_cast<std::streamsize>(payload.size()));
        std::string crc;
        append_u32(crc, payload_crc(payload));
        f.write(crc.data(), 4);
    }
    if (!f) throw IoError("checkpoint: write failed for " + path);
}

RecordFile read_record_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("checkpoint: cannot open " + path);
    char magic[8];
    f.read(magic, 8);
    if (!f || std::memcmp(magic, kMagic, 8) != 0)
        throw IoError("checkpoint: bad magic in " + path);
    Reader r(f);
    RecordFile out;
    out.version = r.u32("version");
    const uint64_t cfg_len = r.u64("config length");
    if (cfg_len > (1ull << 24)) throw IoError("checkpoint: absurd config length");
    out.config_text.resize(cfg_len);
    r.bytes(out.config_text.data(), cfg_len, "config text");
    const uint32_t n_sections = r.u32("section count");
    if (n_sections > 100000) throw IoError("checkpoint: absurd section count");
    out.sections.reserve(n_sections);
    for (uint32_t i = 0; i < n_sections; ++i) {
        RecordSection s;
        const uint32_t name_len = r.u32("section name length");
        if (name_len > 4096) throw IoError("checkpoint: absurd section name length");
        s.name.resize(name_len);
        r.bytes(s.name.data(), name_len, "section name");
        const uint32_t ndims = r.u32("shape of " + s.name);
        if (ndims > 8) throw IoError("checkpoint: absurd rank in section " + s.name);
        int64_t count = 1;
        for (uint32_t j = 0; j < ndims; ++j) {
            const uint64_t d = r.u64("shape of " + s.name);
            if (d == 0 || d > (1ull << 32))
                throw IoError("checkpoint: bad dim in section " + s.name);
            s.shape.push_back(static_cast<int>(d));
            count *= static_cast<int64_t>(d);
        }
        std::vector<float> raw(static_cast<size_t>(count));
        r.bytes(raw.data(), raw.size() * sizeof(float), "data of " + s.name);
        s.data.assign(raw.begin(), raw.end());
        const uint32_t stored = r.u32("checksum of " + s.name);
        if (stored != payload_crc(section_payload(s)))
            throw IoError("checkpoint: checksum mismatch in section " + s.name);
        out.sections.push_back(std::move(s));
    }
    return out;
}

}  // namespace pros
