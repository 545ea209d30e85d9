#pragma once

// Checkpoint container file I/O.
//
// Layout:
//   bytes 0..7    u64 little-endian N = JSON header length
//   bytes 8..8+N  UTF-8 JSON object: tensor name -> {"dtype": "F32"|"F64",
//                 "shape": [ints], "data_offsets": [begin, end]}, plus an
//                 optional "__metadata__" string map
//   remainder     raw little-endian tensor payloads at the declared offsets
//                 (relative to the end of the header), contiguous and
//                 non-overlapping
//
// Canonical form, produced by save_checkpoint: "__metadata__" first when
// present, tensor names sorted lexicographically, offsets assigned in name
// order starting at 0, no padding, compact JSON. The same Checkpoint always
// serializes to identical bytes.

#include <bit>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "fusemerge/tensor.hpp"

namespace fusemerge {

namespace detail {

inline void append_u64le(std::vector<std::uint8_t>& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

inline void append_u32le(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

inline std::uint64_t read_u64le(const std::uint8_t* p) {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
    return v;
}

inline std::uint32_t read_u32le(const std::uint8_t* p) {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[i]) << (8 * i);
    return v;
}

// parse() has already accepted the header, so only string/brace tracking is
// needed to find object keys at depth 1 (tensor names and "__metadata__").
inline std::optional<std::string> duplicate_top_level_key(std::string_view js) {
    std::set<std::string> seen;
    int depth = 0;
    bool in_string = false, escaped = false, expecting_key = false;
    std::string current;
    bool capturing = false;
    for (char c : js) {
        if (in_string) {
            if (escaped) {
                escaped = false;
                if (capturing) current.push_back(c);
            } else if (c == '\\') {
                escaped = true;
                if (capturing) current.push_back(c);
            } else if (c == '"') {
                in_string = false;
                if (capturing) {
                    if (!seen.insert(current).second) return current;
                    capturing = false;
                }
            } else if (capturing) {
                current.push_back(c);
            }
            continue;
        }
        switch (c) {
            case '"':
                in_string = true;
                if (depth == 1 && expecting_key) {
                    capturing = true;
                    current.clear();
                }
                break;
            case '{':
                ++depth;
                expecting_key = (depth == 1);
                break;
            case '}': --depth; break;
            case '[': ++depth; break;
            case ']': --depth; break;
            case ',':
                if (depth == 1) expecting_key = true;
                break;
            case ':':
                if (depth == 1) expecting_key = false;
                break;
            default: break;
        }
    }
    return std::nullopt;
}

}  // namespace detail

inline std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ckpt) {
    if (ckpt.tensors.count("__metadata__"))
        throw std::invalid_argument("'__metadata__' is reserved and cannot name a tensor");

    nlohmann::ordered_json header = nlohmann::ordered_json::object();
    if (!ckpt.metadata.empty()) {
        nlohmann::ordered_json meta = nlohmann::ordered_json::object();
        for (const auto& [k, v] : ckpt.metadata) meta[k] = v;
        header["__metadata__"] = std::move(meta);
    }
    std::size_t offset = 0;
    for (const auto& [name, t] : ckpt.tensors) {
        if (t.size() != t.data.size())
            throw std::invalid_argument("tensor '" + name + "': shape does not match data length");
        nlohmann::ordered_json entry;
        entry["dtype"] = dtype_name(t.dtype);
        entry["shape"] = t.shape;
        std::size_t bytes = t.size() * dtype_size(t.dtype);
        entry["data_offsets"] = {offset, offset + bytes};
        header[name] = std::move(entry);
        offset += bytes;
    }
    const std::string hs = header.dump();

    std::vector<std::uint8_t> out;
    out.reserve(8 + hs.size() + offset);
    detail::append_u64le(out, hs.size());
    out.insert(out.end(), hs.begin(), hs.end());
    for (const auto& [name, t] : ckpt.tensors) {
        for (double d : t.data) {
            if (!std::isfinite(d))
                throw FormatError(FormatError::Kind::NonFinite,
                                  "tensor '" + name + "' holds a non-finite value");
            if (t.dtype == Dtype::F32)
                detail::append_u32le(out, std::bit_cast<std::uint32_t>(static_cast<float>(d)));
            else
                detail::append_u64le(out, std::bit_cast<std::uint64_t>(d));
        }
    }
    return out;
}

inline Checkpoint parse_checkpoint(const std::uint8_t* data, std::size_t size) {
    using Kind = FormatError::Kind;
    if (size < 8)
        throw FormatError(Kind::TruncatedPayload, "file shorter than the 8-byte header length");
    const std::uint64_t header_len = detail::read_u64le(data);
    if (header_len > size - 8)
        throw FormatError(Kind::TruncatedPayload, "declared header length exceeds file size");

    const std::string_view header_text(reinterpret_cast<const char*>(data) + 8,
                                       static_cast<std::size_t>(header_len));
    nlohmann::json header = nlohmann::json::parse(header_text, nullptr, false);
    if (header.is_discarded() || !header.is_object())
        throw FormatError(Kind::MalformedHeader, "header is not a JSON object");
    if (auto dup = detail::duplicate_top_level_key(header_text))
        throw FormatError(Kind::DuplicateName, "duplicate name in header: '" + *dup + "'");

    const std::uint8_t* payload = data + 8 + header_len;
    const std::size_t payload_size = size - 8 - static_cast<std::size_t>(header_len);

    Checkpoint ckpt;
    struct Extent {
        std::size_t begin, end;
        std::string name;
    };
    std::vector<Extent> extents;

    for (const auto& [key, value] : header.items()) {
        if (key == "__metadata__") {
            if (!value.is_object())
                throw FormatError(Kind::MalformedHeader, "__metadata__ is not an object");
            for (const auto& [mk, mv] : value.items()) {
                if (!mv.is_string())
                    throw FormatError(Kind::MalformedHeader, "metadata value for '" + mk + "' is not a string");
                ckpt.metadata[mk] = mv.get<std::string>();
            }
            continue;
        }
        if (!value.is_object())
            throw FormatError(Kind::MalformedHeader, "tensor entry '" + key + "' is not an object");
        for (const auto& [fk, fv] : value.items()) {
            (void)fv;
            if (fk != "dtype" && fk != "shape" && fk != "data_offsets")
                throw FormatError(Kind::MalformedHeader, "tensor entry '" + key + "': unknown field '" + fk + "'");
        }
        if (!value.contains("dtype") || !value.contains("shape") || !value.contains("data_offsets"))
            throw FormatError(Kind::MalformedHeader, "tensor entry '" + key + "': missing field");

        Tensor t;
        const auto& dt = value["dtype"];
        if (!dt.is_string())
            throw FormatError(Kind::MalformedHeader, "tensor entry '" + key + "': dtype is not a string");
        const std::string dts = dt.get<std::string>();
        if (dts == "F32") t.dtype = Dtype::F32;
        else if (dts == "F64") t.dtype = Dtype::F64;
        else throw FormatError(Kind::MalformedHeader, "tensor entry '" + key + "': unsupported dtype '" + dts + "'");

        const auto& shape = value["shape"];
        if (!shape.is_array())
            throw FormatError(Kind::MalformedHeader, "tensor entry '" + key + "': shape is not an array");
        std::size_t count = 1;
        for (const auto& dim : shape) {
            if (!dim.is_number_unsigned())
                throw FormatError(Kind::MalformedHeader, "tensor entry '" + key + "': shape holds a non-integer");
            const std::uint64_t d = dim.get<std::uint64_t>();
            if (d != 0 && count > std::numeric_limits<std::size_t>::max() / d)
                throw FormatError(Kind::MalformedHeader, "tensor entry '" + key + "': shape overflows");
            count *= static_cast<std::size_t>(d);
            t.shape.push_back(static_cast<std::size_t>(d));
        }

        const auto& offs = value["data_offsets"];
        if (!offs.is_array() || offs.size() != 2 || !offs[0].is_number_unsigned() || !offs[1].is_number_unsigned())
            throw FormatError(Kind::MalformedHeader, "tensor entry '" + key + "': bad data_offsets");
        const std::uint64_t begin = offs[0].get<std::uint64_t>();
        const std::uint64_t end = offs[1].get<std::uint64_t>();
        if (end < begin)
            throw FormatError(Kind::MalformedHeader, "tensor entry '" + key + "': data_offsets end before begin");
        if (end - begin != count * dtype_size(t.dtype))
            throw FormatError(Kind::MalformedHeader, "tensor entry '" + key + "': data_offsets do not match shape");
        if (end > payload_size)
            throw FormatError(Kind::TruncatedPayload, "tensor entry '" + key + "': payload ends beyond file");

        extents.push_back({static_cast<std::size_t>(begin), static_cast<std::size_t>(end), key});
        t.data.reserve(count);
        const std::uint8_t* p = payload + begin;
        for (std::size_t i = 0; i < count; ++i) {
            double d;
            if (t.dtype == Dtype::F32) {
                d = static_cast<double>(std::bit_cast<float>(detail::read_u32le(p)));
                p += 4;
            } else {
                d = std::bit_cast<double>(detail::read_u64le(p));
                p += 8;
            }
            if (!std::isfinite(d))
                throw FormatError(Kind::NonFinite,
                                  "tensor '" + key + "' holds a non-finite value at index " + std::to_string(i));
            t.data.push_back(d);
        }
        ckpt.tensors.emplace(key, std::move(t));
    }

    std::sort(extents.begin(), extents.end(), [](const Extent& a, const Extent& b) {
        return a.begin != b.begin ? a.begin < b.begin : a.end < b.end;
    });
    std::size_t cursor = 0;
    for (const Extent& e : extents) {
        if (e.begin < cursor)
            throw FormatError(Kind::MalformedHeader, "tensor '" + e.name + "': data_offsets overlap");
        if (e.begin > cursor)
            throw FormatError(Kind::MalformedHeader, "tensor '" + e.name + "': gap before payload");
        cursor = e.end;
    }
    if (cursor != payload_size)
        throw FormatError(Kind::MalformedHeader, "payload has trailing bytes not claimed by any tensor");

    return ckpt;
}

inline Checkpoint parse_checkpoint(const std::vector<std::uint8_t>& bytes) {
    return parse_checkpoint(bytes.data(), bytes.size());
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (in.bad()) throw IoError("read failure on '" + path.string() + "'");
    return parse_checkpoint(bytes.data(), bytes.size());
}

inline void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
    const std::vector<std::uint8_t> bytes = serialize_checkpoint(ckpt);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failure on '" + path.string() + "'");
}

}  // namespace fusemerge
