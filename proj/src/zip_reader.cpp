#include "zip_reader.hpp"

#include <zlib.h>

#include <algorithm>
#include <fstream>
#include <iterator>

namespace warden::zip {

namespace {

constexpr std::uint32_t kEndOfCentralDir = 0x06054b50;
constexpr std::uint32_t kCentralDirEntry = 0x02014b50;
constexpr std::uint32_t kLocalHeader = 0x04034b50;

std::uint16_t u16(const std::vector<unsigned char>& b, std::size_t at) {
  if (at + 2 > b.size()) throw ZipError("truncated archive");
  return static_cast<std::uint16_t>(b[at] | (b[at + 1] << 8));
}

std::uint32_t u32(const std::vector<unsigned char>& b, std::size_t at) {
  if (at + 4 > b.size()) throw ZipError("truncated archive");
  return static_cast<std::uint32_t>(b[at]) | (static_cast<std::uint32_t>(b[at + 1]) << 8) |
         (static_cast<std::uint32_t>(b[at + 2]) << 16) |
         (static_cast<std::uint32_t>(b[at + 3]) << 24);
}

}  // namespace

Archive Archive::open(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ZipError("cannot open " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  return Archive(std::move(bytes));
}

Archive::Archive(std::vector<unsigned char> bytes) : bytes_(std::move(bytes)) {
  if (bytes_.size() < 22) throw ZipError("not a zip archive");
  // The end-of-central-directory record sits within the last 64 KiB + 22.
  std::size_t lowest = bytes_.size() > 65557 ? bytes_.size() - 65557 : 0;
  std::optional<std::size_t> eocd;
  for (std::size_t at = bytes_.size() - 22 + 1; at-- > lowest;) {
    if (u32(bytes_, at) == kEndOfCentralDir) {
      eocd = at;
      break;
    }
  }
  if (!eocd) throw ZipError("end of central directory not found");

  const std::uint16_t count = u16(bytes_, *eocd + 10);
  std::size_t at = u32(bytes_, *eocd + 16);
  for (std::uint16_t i = 0; i < count; ++i) {
    if (u32(bytes_, at) != kCentralDirEntry) throw ZipError("corrupt central directory");
    Entry e;
    e.method = u16(bytes_, at + 10);
    e.compressed_size = u32(bytes_, at + 20);
    e.uncompressed_size = u32(bytes_, at + 24);
    const std::uint16_t name_len = u16(bytes_, at + 28);
    const std::uint16_t extra_len = u16(bytes_, at + 30);
    const std::uint16_t comment_len = u16(bytes_, at + 32);
    e.local_header_offset = u32(bytes_, at + 42);
    if (at + 46 + name_len > bytes_.size()) throw ZipError("truncated archive");
    e.name.assign(reinterpret_cast<const char*>(bytes_.data() + at + 46), name_len);
    entries_.push_back(std::move(e));
    at += 46 + name_len + extra_len + comment_len;
  }
}

std::optional<Entry> Archive::find(const std::string& name) const {
  auto it = std::find_if(entries_.begin(), entries_.end(),
                         [&](const Entry& e) { return e.name == name; });
  if (it == entries_.end()) return std::nullopt;
  return *it;
}

std::string Archive::read(const Entry& entry, std::size_t max_size) const {
  if (entry.uncompressed_size > max_size) throw ZipError(entry.name + " is too large");
  const std::size_t header = entry.local_header_offset;
  if (u32(bytes_, header) != kLocalHeader) throw ZipError("corrupt local header");
  const std::size_t data = header + 30 + u16(bytes_, header + 26) + u16(bytes_, header + 28);
  if (data + entry.compressed_size > bytes_.size()) throw ZipError("truncated entry");

  if (entry.method == 0) {
    if (entry.compressed_size != entry.uncompressed_size) throw ZipError("size mismatch");
    return std::string(reinterpret_cast<const char*>(bytes_.data() + data),
                       entry.compressed_size);
  }
  if (entry.method != 8) throw ZipError("unsupported compression method");

  std::string out(entry.uncompressed_size, '\0');
  z_stream stream{};
  if (inflateInit2(&stream, -MAX_WBITS) != Z_OK) throw ZipError("inflate init failed");
  stream.next_in = const_cast<Bytef*>(bytes_.data() + data);
  stream.avail_in = entry.compressed_size;
  stream.next_out = reinterpret_cast<Bytef*>(out.data());
  stream.avail_out = static_cast<uInt>(out.size());
  const int rc = inflate(&stream, Z_FINISH);
  const auto produced = stream.total_out;
  inflateEnd(&stream);
  if (rc != Z_STREAM_END || produced != entry.uncompressed_size)
    throw ZipError("corrupt deflate stream");
  return out;
}

}  // namespace warden::zip
