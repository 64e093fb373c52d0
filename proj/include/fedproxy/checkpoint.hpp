#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "fedproxy/errors.hpp"
#include "fedproxy/flat_params.hpp"

namespace fedproxy {

// Checkpoint envelope: magic "FPXY", u32 format version, segment table
// (u32 count; per segment u32 name length + bytes, u64 offset, u64 length),
// then total_dim raw little-endian f64 values.
inline constexpr char kCheckpointMagic[4] = {'F', 'P', 'X', 'Y'};
inline constexpr std::uint32_t kCheckpointVersion = 1;
// Written where a checkpoint stores its segment count; marks a
// correspondence file so the two loaders reject each other's files.
inline constexpr std::uint32_t kCorrespondenceSentinel = 0xFFFFFFFFu;

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline void put_f64(std::string& out, double d) {
  put_u64(out, std::bit_cast<std::uint64_t>(d));
}

inline void put_str(std::string& out, const std::string& s) {
  put_u32(out, static_cast<std::uint32_t>(s.size()));
  out.append(s);
}

class Reader {
 public:
  Reader(const std::string& bytes, std::string path)
      : bytes_(bytes), path_(std::move(path)) {}

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }

  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i)
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += 8;
    return v;
  }

  double f64() { return std::bit_cast<double>(u64()); }

  std::string str() {
    const std::uint32_t n = u32();
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  void expect_magic() {
    need(4);
    if (std::memcmp(bytes_.data() + pos_, kCheckpointMagic, 4) != 0)
      throw IoError(path_ + ": bad magic bytes (not a FPXY file)");
    pos_ += 4;
  }

  bool at_end() const { return pos_ == bytes_.size(); }
  std::size_t pos() const { return pos_; }
  const std::string& path() const { return path_; }

 private:
  void need(std::size_t n) {
    if (pos_ + n > bytes_.size())
      throw IoError(path_ + ": truncated file (needed " + std::to_string(n) +
                    " bytes at offset " + std::to_string(pos_) + ")");
  }

  const std::string& bytes_;
  std::size_t pos_ = 0;
  std::string path_;
};

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "' for reading");
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("read failure on '" + path + "'");
  return bytes;
}

inline void write_file(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failure on '" + path + "'");
}

}  // namespace detail

inline std::string encode_checkpoint(const FlatParams& params) {
  std::string out;
  out.append(kCheckpointMagic, 4);
  detail::put_u32(out, kCheckpointVersion);
  const auto& segs = params.layout()->segments();
  detail::put_u32(out, static_cast<std::uint32_t>(segs.size()));
  for (const auto& s : segs) {
    detail::put_str(out, s.name);
    detail::put_u64(out, s.offset);
    detail::put_u64(out, s.length);
  }
  for (double v : params.values()) detail::put_f64(out, v);
  return out;
}

inline void save_checkpoint(const FlatParams& params, const std::string& path) {
  detail::write_file(path, encode_checkpoint(params));
}

inline FlatParams decode_checkpoint(const std::string& bytes, const std::string& path) {
  detail::Reader r(bytes, path);
  r.expect_magic();
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion)
    throw IoError(path + ": unsupported checkpoint version " + std::to_string(version) +
                  " (expected " + std::to_string(kCheckpointVersion) + ")");
  const std::uint32_t nseg = r.u32();
  if (nseg == kCorrespondenceSentinel)
    throw IoError(path + ": this is a correspondence file, not a parameter checkpoint");
  std::vector<ParamLayout::Segment> segs;
  segs.reserve(nseg);
  for (std::uint32_t i = 0; i < nseg; ++i) {
    ParamLayout::Segment s;
    s.name = r.str();
    s.offset = static_cast<std::size_t>(r.u64());
    s.length = static_cast<std::size_t>(r.u64());
    segs.push_back(std::move(s));
  }
  LayoutPtr layout;
  try {
    layout = ParamLayout::from_segments(std::move(segs));
  } catch (const DimError& e) {
    throw IoError(path + ": invalid segment table: " + e.what());
  }
  std::vector<double> values(layout->total_dim());
  for (auto& v : values) v = r.f64();
  if (!r.at_end()) throw IoError(path + ": trailing bytes after values");
  return FlatParams(std::move(layout), std::move(values));
}

inline FlatParams load_checkpoint(const std::string& path) {
  return decode_checkpoint(detail::read_file(path), path);
}

}  // namespace fedproxy
