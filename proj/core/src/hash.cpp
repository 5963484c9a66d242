#include "preflab/hash.hpp"

#include <cstdio>
#include <fstream>
#include <iterator>

#include "preflab/error.hpp"

namespace preflab {

std::string hex_digest(std::uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string file_digest(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return "fnv1a64:" + hex_digest(fnv1a(bytes));
}

}  // namespace preflab
