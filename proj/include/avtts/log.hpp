// Copyright (c) 2026 The avtts Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <atomic>
#include <iostream>
#include <mutex>
#include <string>

namespace avtts {

enum class LogLevel { debug = 0, info = 1, warning = 2, error = 3, off = 4 };

inline std::atomic<LogLevel>& log_threshold() {
  static std::atomic<LogLevel> level{LogLevel::info};
  return level;
}

inline void log_message(LogLevel level, const std::string& msg) {
  if (level < log_threshold().load()) return;
  static std::mutex mu;
  static constexpr const char* names[] = {"debug", "info", "warning", "error"};
  std::lock_guard<std::mutex> lock(mu);
  std::clog << "[" << names[static_cast<int>(level)] << "] " << msg << '\n';
}

inline void log_info(const std::string& msg) { log_message(LogLevel::info, msg); }
inline void log_warning(const std::string& msg) { log_message(LogLevel::warning, msg); }

}  // namespace avtts
