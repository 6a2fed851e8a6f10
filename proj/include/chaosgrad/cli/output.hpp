#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <mutex>
#include <string>
#include <string_view>
#include <thread>
#include <type_traits>
#include <vector>

#include <json.hpp>

#include "chaosgrad/core/error.hpp"

namespace chaosgrad::cli {

inline constexpr std::string_view kLibraryVersion = "0.1.0";

/// 17 significant digits; non-finite values as nan, inf, -inf.
inline std::string format_double(double x) {
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

class CsvWriter {
 public:
  CsvWriter(std::filesystem::path path, std::vector<std::string> header)
      : path_(std::move(path)), columns_(header.size()) {
    out_.open(path_, std::ios::binary | std::ios::trunc);
    if (!out_) throw IoError("cannot open '" + path_.string() + "' for writing");
    write_fields(header);
  }

  template <class... Fields>
  void row(const Fields&... fields) {
    static_assert(sizeof...(Fields) > 0);
    std::vector<std::string> cells{render(fields)...};
    if (cells.size() != columns_) {
      throw Error("csv row has " + std::to_string(cells.size()) + " fields, header has " +
                  std::to_string(columns_));
    }
    write_fields(cells);
  }

  void close() {
    out_.close();
    if (!out_) throw IoError("failed writing '" + path_.string() + "'");
  }

  const std::filesystem::path& path() const noexcept { return path_; }

 private:
  std::filesystem::path path_;
  std::size_t columns_;
  std::ofstream out_;

  template <class F>
  static std::string render(const F& f) {
    if constexpr (std::is_same_v<F, bool>) {
      return f ? "true" : "false";
    } else if constexpr (std::is_floating_point_v<F>) {
      return format_double(static_cast<double>(f));
    } else if constexpr (std::is_integral_v<F>) {
      return std::to_string(f);
    } else {
      return std::string(f);
    }
  }

  void write_fields(const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i) out_ << ',';
      out_ << cells[i];
    }
    out_ << '\n';
    if (!out_) throw IoError("failed writing '" + path_.string() + "'");
  }
};

/// Runs fn(i) for i in [0, count) on up to `threads` workers. Results must be
/// written to per-index slots; the first exception is rethrown after all
/// workers stop.
inline void parallel_for(std::size_t count, std::size_t threads,
                         const std::function<void(std::size_t)>& fn) {
  threads = std::max<std::size_t>(1, std::min(threads, count));
  if (threads == 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::atomic<bool> stop{false};
  std::exception_ptr first;
  std::mutex mu;
  std::vector<std::thread> pool;
  pool.reserve(threads);
  for (std::size_t w = 0; w < threads; ++w) {
    pool.emplace_back([&] {
      while (!stop.load()) {
        const std::size_t i = next.fetch_add(1);
        if (i >= count) break;
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(mu);
          if (!first) first = std::current_exception();
          stop = true;
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (first) std::rethrow_exception(first);
}

struct RunManifest {
  std::string experiment;
  std::uint64_t config_hash = 0;
  std::uint64_t seed = 0;
  std::size_t threads = 1;
  std::vector<std::string> artifacts;
  double duration_seconds = 0.0;
  std::string status = "running";
  std::string error;

  nlohmann::json to_json() const {
    char hash[17];
    std::snprintf(hash, sizeof hash, "%016llx", static_cast<unsigned long long>(config_hash));
    nlohmann::json j;
    j["experiment"] = experiment;
    j["config_hash"] = hash;
    j["seed"] = seed;
    j["threads"] = threads;
    j["artifacts"] = artifacts;
    j["duration_seconds"] = duration_seconds;
    j["library_version"] = std::string(kLibraryVersion);
    j["status"] = status;
    if (!error.empty()) j["error"] = error;
    return j;
  }

  void write(const std::filesystem::path& dir) const {
    const auto path = dir / "manifest.json";
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot write '" + path.string() + "'");
    out << to_json().dump(2) << '\n';
    if (!out) throw IoError("failed writing '" + path.string() + "'");
  }
};

}  // namespace chaosgrad::cli
