#pragma once

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

#include "mocap/errors.hpp"

namespace mocap::json_util {

using nlohmann::json;

inline std::string read_text(const std::filesystem::path& path)
{
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw ParseError("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_text(const std::filesystem::path& path, const std::string& text)
{
  if (path.has_parent_path())
    std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out)
    throw ParseError("cannot write '" + path.string() + "'");
  out << text;
}

/// Parses a document, translating the byte offset of a syntax error into a
/// line/column pair.
inline json parse(const std::string& text, const std::string& source)
{
  try
  {
    return json::parse(text);
  }
  catch (const json::parse_error& e)
  {
    std::size_t line = 1, col = 1;
    for (std::size_t i = 0; i + 1 < e.byte && i < text.size(); ++i)
    {
      if (text[i] == '\n')
      {
        ++line;
        col = 1;
      }
      else
        ++col;
    }
    throw ParseError(
        source + ":" + std::to_string(line) + ":" + std::to_string(col) + ": "
        + e.what());
  }
}

inline json read_file(const std::filesystem::path& path)
{
  return parse(read_text(path), path.string());
}

inline void write_file(const std::filesystem::path& path, const json& doc)
{
  write_text(path, doc.dump(1) + "\n");
}

inline const json& field(const json& obj, const char* key, const std::string& ctx)
{
  if (!obj.is_object())
    throw ParseError(ctx + ": expected an object");
  auto it = obj.find(key);
  if (it == obj.end())
    throw ParseError(ctx + ": missing field '" + key + "'");
  return *it;
}

template <typename T>
T get(const json& obj, const char* key, const std::string& ctx)
{
  const json& v = field(obj, key, ctx);
  try
  {
    return v.get<T>();
  }
  catch (const json::exception& e)
  {
    throw ParseError(ctx + ": field '" + key + "': " + e.what());
  }
}

template <typename T>
T get_or(const json& obj, const char* key, T fallback, const std::string& ctx)
{
  if (!obj.contains(key))
    return fallback;
  return get<T>(obj, key, ctx);
}

template <int N>
Eigen::Matrix<double, N, 1> vec(const json& obj, const char* key, const std::string& ctx)
{
  auto values = get<std::vector<double>>(obj, key, ctx);
  if (values.size() != static_cast<std::size_t>(N))
    throw ParseError(
        ctx + ": field '" + key + "' must have " + std::to_string(N)
        + " entries, got " + std::to_string(values.size()));
  Eigen::Matrix<double, N, 1> out;
  for (int i = 0; i < N; ++i)
    out[i] = values[i];
  return out;
}

template <typename Derived>
json to_array(const Eigen::MatrixBase<Derived>& v)
{
  json out = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i)
    out.push_back(v(i));
  return out;
}

} // namespace mocap::json_util
