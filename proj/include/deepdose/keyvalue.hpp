#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace deepdose {

// Ordered "key=value" lines. Keys may repeat; blank lines and lines
// starting with '#' are skipped on parse.
using KeyValues = std::vector<std::pair<std::string, std::string>>;

KeyValues parse_key_values(const std::string& text, const std::string& what);
std::string format_key_values(const KeyValues& kv);

// First value for `key`, or nullptr.
const std::string* find_value(const KeyValues& kv, const std::string& key);
// Throws FormatError naming `what` when the key is missing.
const std::string& require_value(const KeyValues& kv, const std::string& key, const std::string& what);
std::vector<std::string> all_values(const KeyValues& kv, const std::string& key);

// Value codecs. Doubles print in shortest round-trip form; parse failures
// throw InvalidConfig naming the key.
std::string format_double(double v);
double parse_double(const std::string& key, const std::string& text);
std::uint64_t parse_uint(const std::string& key, const std::string& text);
bool parse_bool(const std::string& key, const std::string& text);

}  // namespace deepdose
