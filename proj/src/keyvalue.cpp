#include "deepdose/keyvalue.hpp"

#include <charconv>
#include <sstream>

#include "deepdose/error.hpp"

namespace deepdose {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

}  // namespace

KeyValues parse_key_values(const std::string& text, const std::string& what) {
    KeyValues kv;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        line = trim(line);
        if (line.empty() || line[0] == '#') continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos || eq == 0) {
            throw FormatError(what + ":" + std::to_string(lineno) + ": expected key=value, got '" + line + "'");
        }
        kv.emplace_back(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
    return kv;
}

std::string format_key_values(const KeyValues& kv) {
    std::string out;
    for (const auto& [k, v] : kv) out += k + "=" + v + "\n";
    return out;
}

const std::string* find_value(const KeyValues& kv, const std::string& key) {
    for (const auto& [k, v] : kv) {
        if (k == key) return &v;
    }
    return nullptr;
}

const std::string& require_value(const KeyValues& kv, const std::string& key, const std::string& what) {
    const std::string* v = find_value(kv, key);
    if (!v) throw FormatError(what + ": missing key '" + key + "'");
    return *v;
}

std::vector<std::string> all_values(const KeyValues& kv, const std::string& key) {
    std::vector<std::string> out;
    for (const auto& [k, v] : kv) {
        if (k == key) out.push_back(v);
    }
    return out;
}

std::string format_double(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

double parse_double(const std::string& key, const std::string& text) {
    double v = 0;
    const auto res = std::from_chars(text.data(), text.data() + text.size(), v);
    if (res.ec != std::errc() || res.ptr != text.data() + text.size() || text.empty()) {
        throw InvalidConfig(key + ": expected a number, got '" + text + "'");
    }
    return v;
}

std::uint64_t parse_uint(const std::string& key, const std::string& text) {
    std::uint64_t v = 0;
    const auto res = std::from_chars(text.data(), text.data() + text.size(), v);
    if (res.ec != std::errc() || res.ptr != text.data() + text.size() || text.empty()) {
        throw InvalidConfig(key + ": expected a non-negative integer, got '" + text + "'");
    }
    return v;
}

bool parse_bool(const std::string& key, const std::string& text) {
    if (text == "true" || text == "1") return true;
    if (text == "false" || text == "0") return false;
    throw InvalidConfig(key + ": expected true or false, got '" + text + "'");
}

}  // namespace deepdose
