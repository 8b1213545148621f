#pragma once

// Output formatting shared by every experiment file: floats with 17
// significant digits, LF line endings, files written through a temporary and
// renamed into place.

#include <cmath>
#include <concepts>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <string_view>

#include <json.hpp>

namespace rlvr::io {

using json = nlohmann::ordered_json;

/// "%.17g", with inf / -inf / nan spelled out.
inline std::string format_double(double x) {
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

namespace detail {

inline void write_string(std::string& out, std::string_view s) {
  out += json(s).dump();
}

inline void newline(std::string& out, int indent, int depth) {
  if (indent < 0) return;
  out += '\n';
  out.append(static_cast<std::size_t>(indent * depth), ' ');
}

inline void write(std::string& out, const json& v, int indent, int depth) {
  switch (v.type()) {
    case json::value_t::object: {
      if (v.empty()) {
        out += "{}";
        return;
      }
      out += '{';
      bool first = true;
      for (const auto& [key, item] : v.items()) {
        if (!first) out += ',';
        first = false;
        newline(out, indent, depth + 1);
        write_string(out, key);
        out += indent < 0 ? ":" : ": ";
        write(out, item, indent, depth + 1);
      }
      newline(out, indent, depth);
      out += '}';
      return;
    }
    case json::value_t::array: {
      out += '[';
      bool first = true;
      for (const auto& item : v) {
        if (!first) out += indent < 0 ? "," : ", ";
        first = false;
        write(out, item, indent, depth + 1);
      }
      out += ']';
      return;
    }
    case json::value_t::number_float: {
      const double x = v.get<double>();
      if (std::isfinite(x)) {
        out += format_double(x);
      } else {
        write_string(out, format_double(x));  // JSON has no literal for these
      }
      return;
    }
    default:
      out += v.dump();
  }
}

}  // namespace detail

/// Serializes like json::dump but with every float at 17 significant digits.
/// Non-finite floats become the strings "inf", "-inf" and "nan". indent < 0
/// produces a single line; arrays always stay on one line.
inline std::string to_json_text(const json& v, int indent = -1) {
  std::string out;
  detail::write(out, v, indent, 0);
  return out;
}

/// Writes `text` to `path` atomically (temporary file, then rename).
inline void write_file(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot open " + tmp.string() + " for writing");
    f << text;
    if (!f) throw std::runtime_error("failed writing " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

/// Accumulates CSV text. Cells must not contain commas or newlines; strings
/// passed through cell(std::string_view) have them replaced.
class CsvWriter {
 public:
  /// First line: "# " + the single-line JSON header.
  explicit CsvWriter(const json& header) { text_ = "# " + to_json_text(header) + "\n"; }

  CsvWriter& cell(double x) { return raw(format_double(x)); }
  template <std::integral I>
    requires(!std::same_as<I, bool>)
  CsvWriter& cell(I x) {
    return raw(std::to_string(x));
  }
  CsvWriter& cell(bool b) { return raw(b ? "1" : "0"); }
  CsvWriter& cell(std::string_view s) {
    std::string clean(s);
    for (char& c : clean) {
      if (c == ',' || c == '\n' || c == '\r') c = ';';
    }
    return raw(clean);
  }
  CsvWriter& cell(const char* s) { return cell(std::string_view(s)); }

  void end_row() {
    text_ += '\n';
    fresh_ = true;
  }
  void comment(std::string_view line) {
    text_ += "# ";
    text_ += line;
    text_ += '\n';
  }

  const std::string& text() const noexcept { return text_; }

 private:
  CsvWriter& raw(std::string_view s) {
    if (!fresh_) text_ += ',';
    fresh_ = false;
    text_ += s;
    return *this;
  }

  std::string text_;
  bool fresh_ = true;
};

}  // namespace rlvr::io
