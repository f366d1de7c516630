#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace warden::zip {

class ZipError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Entry {
  std::string name;
  std::uint16_t method = 0;
  std::uint32_t compressed_size = 0;
  std::uint32_t uncompressed_size = 0;
  std::uint32_t local_header_offset = 0;
};

// Read-only view over a ZIP archive held in memory. Supports stored and
// deflated entries; no ZIP64, no encryption.
class Archive {
 public:
  static Archive open(const std::filesystem::path& path);
  explicit Archive(std::vector<unsigned char> bytes);

  const std::vector<Entry>& entries() const { return entries_; }
  std::optional<Entry> find(const std::string& name) const;
  std::string read(const Entry& entry, std::size_t max_size) const;

 private:
  std::vector<unsigned char> bytes_;
  std::vector<Entry> entries_;
};

}  // namespace warden::zip
