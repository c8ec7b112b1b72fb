#include "mpcn/binvox.hpp"

#include <charconv>
#include <fstream>
#include <iterator>
#include <string>
#include <string_view>

#include "mpcn/errors.hpp"

namespace mpcn {
namespace {

struct Cursor {
  std::span<const std::uint8_t> bytes;
  std::size_t pos = 0;

  bool done() const { return pos >= bytes.size(); }

  std::string_view line() {
    const std::size_t start = pos;
    while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
    if (pos >= bytes.size()) throw ParseError("binvox: unterminated header line", start);
    std::string_view s(reinterpret_cast<const char*>(bytes.data()) + start, pos - start);
    ++pos;
    if (!s.empty() && s.back() == '\r') s.remove_suffix(1);
    return s;
  }
};

std::vector<std::string_view> split(std::string_view s) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && s[i] == ' ') ++i;
    std::size_t j = i;
    while (j < s.size() && s[j] != ' ') ++j;
    if (j > i) out.push_back(s.substr(i, j - i));
    i = j;
  }
  return out;
}

int parse_int(std::string_view s, std::size_t offset) {
  int v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) throw ParseError("binvox: bad integer '" + std::string(s) + "'", offset);
  return v;
}

}  // namespace

VoxelGrid read_binvox(std::span<const std::uint8_t> bytes) {
  Cursor cur{bytes};
  const std::string_view magic = cur.line();
  if (magic.substr(0, 8) != "#binvox " || magic.size() < 9) throw ParseError("binvox: bad magic line", 0);

  int dim = 0;
  for (;;) {
    const std::size_t offset = cur.pos;
    if (cur.done()) throw ParseError("binvox: header ended before 'data'", offset);
    const std::string_view l = cur.line();
    const auto tok = split(l);
    if (tok.empty()) continue;
    if (tok[0] == "data") break;
    if (tok[0] == "dim") {
      if (tok.size() != 4) throw ParseError("binvox: dim needs three values", offset);
      const int d = parse_int(tok[1], offset), h = parse_int(tok[2], offset), w = parse_int(tok[3], offset);
      if (d <= 0 || d != h || d != w) throw ParseError("binvox: only positive cubic dims are supported", offset);
      dim = d;
    } else if (tok[0] == "translate" || tok[0] == "scale") {
      // Accepted and ignored.
    } else {
      throw ParseError("binvox: unknown header field '" + std::string(tok[0]) + "'", offset);
    }
  }
  if (dim == 0) throw ParseError("binvox: missing dim line", cur.pos);

  const std::size_t total = static_cast<std::size_t>(dim) * dim * dim;
  std::vector<std::uint8_t> data;
  data.reserve(total);
  while (data.size() < total) {
    if (cur.pos + 1 >= bytes.size())
      throw ParseError("binvox: truncated payload (" + std::to_string(data.size()) + " of " + std::to_string(total) +
                           " voxels)",
                       cur.pos);
    const std::uint8_t value = bytes[cur.pos];
    const std::uint8_t count = bytes[cur.pos + 1];
    if (value > 1) throw ParseError("binvox: run value must be 0 or 1", cur.pos);
    if (count == 0) throw ParseError("binvox: zero-length run", cur.pos + 1);
    if (data.size() + count > total) throw ParseError("binvox: payload longer than dim implies", cur.pos);
    data.insert(data.end(), count, value);
    cur.pos += 2;
  }
  if (!cur.done()) throw ParseError("binvox: trailing bytes after payload", cur.pos);
  return VoxelGrid(dim, std::move(data));
}

std::vector<std::uint8_t> write_binvox(const VoxelGrid& g) {
  const std::string header = "#binvox 1\ndim " + std::to_string(g.resolution()) + " " + std::to_string(g.resolution()) +
                             " " + std::to_string(g.resolution()) + "\ntranslate 0 0 0\nscale 1\ndata\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  const auto& d = g.data();
  std::size_t i = 0;
  while (i < d.size()) {
    const std::uint8_t v = d[i];
    std::size_t run = 1;
    while (i + run < d.size() && d[i + run] == v && run < 255) ++run;
    out.push_back(v);
    out.push_back(static_cast<std::uint8_t>(run));
    i += run;
  }
  return out;
}

VoxelGrid read_binvox_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return read_binvox(bytes);
}

void write_binvox_file(const VoxelGrid& g, const std::filesystem::path& path) {
  const auto bytes = write_binvox(g);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace mpcn
