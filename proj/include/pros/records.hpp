#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pros/tensor.hpp"

namespace pros {

// Shared binary container: magic PROSCKPT, u32 version, length-prefixed
// UTF-8 config text, u32 section count, then per-section records of
// (name, shape, f32 little-endian data, crc32 of the record payload).
struct RecordSection {
    std::string name;
    Shape shape;
    std::vector<double> data;  // stored as f32
};

struct RecordFile {
    uint32_t version = 1;
    std::string config_text;
    std::vector<RecordSection> sections;
};

void write_record_file(const std::string& path, const RecordFile& file);
RecordFile read_record_file(const std::string& path);

}  // namespace pros
