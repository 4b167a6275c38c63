#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "citecat/error.hpp"

namespace citecat::io {

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open file: " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  if (in.bad()) throw Error("read failed: " + path.string());
  return buf.str();
}

inline void write_file(const std::filesystem::path& path, std::string_view content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open file for writing: " + path.string());
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!out) throw Error("write failed: " + path.string());
}

// Validates that `data` is well-formed UTF-8. Returns the byte offset of the
// first invalid sequence, or npos if the whole buffer is valid.
inline size_t utf8_invalid_at(std::string_view data) {
  constexpr size_t npos = std::string_view::npos;
  size_t i = 0;
  const size_t n = data.size();
  while (i < n) {
    unsigned char c = static_cast<unsigned char>(data[i]);
    size_t len;
    uint32_t cp;
    if (c < 0x80) {
      i += 1;
      continue;
    } else if ((c & 0xE0) == 0xC0) {
      len = 2;
      cp = c & 0x1F;
    } else if ((c & 0xF0) == 0xE0) {
      len = 3;
      cp = c & 0x0F;
    } else if ((c & 0xF8) == 0xF0) {
      len = 4;
      cp = c & 0x07;
    } else {
      return i;
    }
    if (i + len > n) return i;
    for (size_t k = 1; k < len; ++k) {
      unsigned char cc = static_cast<unsigned char>(data[i + k]);
      if ((cc & 0xC0) != 0x80) return i;
      cp = (cp << 6) | (cc & 0x3F);
    }
    // overlongs, surrogates, out of range
    if (len == 2 && cp < 0x80) return i;
    if (len == 3 && (cp < 0x800 || (cp >= 0xD800 && cp <= 0xDFFF))) return i;
    if (len == 4 && (cp < 0x10000 || cp > 0x10FFFF)) return i;
    i += len;
  }
  return npos;
}

inline bool is_valid_utf8(std::string_view data) {
  return utf8_invalid_at(data) == std::string_view::npos;
}

// Splits into lines on '\n', dropping a trailing '\r' from each line.
// A trailing final newline does not produce an extra empty line.
inline std::vector<std::string> split_lines(std::string_view data) {
  std::vector<std::string> lines;
  size_t start = 0;
  while (start <= data.size()) {
    size_t nl = data.find('\n', start);
    if (nl == std::string_view::npos) {
      if (start < data.size()) lines.emplace_back(data.substr(start));
      break;
    }
    std::string_view line = data.substr(start, nl - start);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    lines.emplace_back(line);
    start = nl + 1;
  }
  return lines;
}

// ---- CSV (RFC-4180 style quoting) ----

// Parses one CSV record. Quoted fields may contain commas, doubled quotes
// and newlines are not supported inside fields (inputs here are one row per
// line).
inline std::vector<std::string> csv_parse_line(std::string_view line, size_t line_no) {
  std::vector<std::string> fields;
  std::string cur;
  bool in_quotes = false;
  size_t i = 0;
  const size_t n = line.size();
  while (i <= n) {
    if (i == n) {
      if (in_quotes) throw Error("line " + std::to_string(line_no) + ": unterminated quoted field");
      fields.push_back(cur);
      break;
    }
    char c = line[i];
    if (in_quotes) {
      if (c == '"') {
        if (i + 1 < n && line[i + 1] == '"') {
          cur.push_back('"');
          ++i;
        } else {
          in_quotes = false;
        }
      } else {
        cur.push_back(c);
      }
    } else if (c == '"' && cur.empty()) {
      in_quotes = true;
    } else if (c == ',') {
      fields.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
    ++i;
  }
  return fields;
}

inline std::string csv_quote(std::string_view field) {
  bool needs = field.find_first_of(",\"\n\r") != std::string_view::npos;
  if (!needs) return std::string(field);
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out += "\"\"";
    else out.push_back(c);
  }
  out.push_back('"');
  return out;
}

inline std::string csv_join(const std::vector<std::string>& fields) {
  std::string out;
  for (size_t i = 0; i < fields.size(); ++i) {
    if (i) out.push_back(',');
    out += csv_quote(fields[i]);
  }
  return out;
}

// FNV-1a 64-bit; used to stamp artifacts with a config fingerprint.
inline uint64_t fnv1a64(std::string_view data) {
  uint64_t h = 14695981039346656037ull;
  for (unsigned char c : data) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

inline std::string fnv1a64_hex(std::string_view data) {
  static const char* digits = "0123456789abcdef";
  uint64_t h = fnv1a64(data);
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<size_t>(i)] = digits[h & 0xF];
    h >>= 4;
  }
  return out;
}

}  // namespace citecat::io
