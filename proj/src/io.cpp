#include "fader/io.hpp"

#include <zlib.h>

#include <fstream>
#include <sstream>
#include <stdexcept>

#include "fader/hashing.hpp"

namespace fader::io {

namespace {

bool is_gzip_path(const std::filesystem::path& path) { return path.extension() == ".gz"; }

}  // namespace

std::string read_file(const std::filesystem::path& path) {
  if (is_gzip_path(path)) {
    gzFile f = gzopen(path.c_str(), "rb");
    if (!f) throw std::runtime_error("cannot open " + path.string());
    std::string out;
    char buf[1 << 15];
    int n = 0;
    while ((n = gzread(f, buf, sizeof(buf))) > 0) out.append(buf, static_cast<std::size_t>(n));
    const bool failed = n < 0;
    gzclose(f);
    if (failed) throw std::runtime_error("corrupt gzip stream in " + path.string());
    return out;
  }
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& path, std::string_view content) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  if (is_gzip_path(path)) {
    // gzopen writes a zero mtime, so identical content compresses identically.
    gzFile f = gzopen(tmp.c_str(), "wb9");
    if (!f) throw std::runtime_error("cannot write " + tmp.string());
    const bool ok = content.empty() ||
                    gzwrite(f, content.data(), static_cast<unsigned>(content.size())) ==
                        static_cast<int>(content.size());
    gzclose(f);
    if (!ok) throw std::runtime_error("gzip write failed for " + path.string());
  } else {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) throw std::runtime_error("write failed for " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

void for_each_line(std::string_view content,
                   const std::function<void(std::string_view, std::size_t)>& fn) {
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < content.size()) {
    auto nl = content.find('\n', pos);
    if (nl == std::string_view::npos) nl = content.size();
    std::string_view line = content.substr(pos, nl - pos);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    fn(line, ++line_no);
    pos = nl + 1;
  }
}

std::string file_sha256(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return sha256_hex(ss.str());
}

}  // namespace fader::io
