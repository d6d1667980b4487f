#pragma once

#include <filesystem>
#include <string>
#include <string_view>

namespace ufw {

std::string read_file(const std::filesystem::path& path);

// Inflates gzip data (concatenated members allowed). Throws Error(kIo).
std::string gunzip(std::string_view compressed);
std::string gzip(std::string_view data);

// Appends `data` and fsyncs before returning.
void append_durable(const std::filesystem::path& path, std::string_view data);

// Write to a sibling temp file, then rename over `path`.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);

// Exclusive advisory lock (flock) held for the object's lifetime. Released
// by the kernel if the process dies.
class FileLock {
 public:
  // Throws Error(kLocked) when another holder exists and `wait` is false.
  explicit FileLock(const std::filesystem::path& path, bool wait = false);
  ~FileLock();
  FileLock(const FileLock&) = delete;
  FileLock& operator=(const FileLock&) = delete;

 private:
  int fd_ = -1;
};

}  // namespace ufw
