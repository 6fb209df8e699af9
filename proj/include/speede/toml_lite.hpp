#pragma once

// Minimal TOML subset reader: top-level and [table] sections, [[array-of-
// table]] sections, and key = value lines with integer, float, boolean,
// string, or flat-array values. Comments and blank lines are skipped.
// Covers the scene-spec files this project reads; nested tables, dotted
// keys, dates, and multiline strings are out of scope.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace speede::toml_lite {

struct Value {
    enum class Kind { Integer, Float, Boolean, String, Array };
    Kind kind = Kind::Integer;
    std::int64_t integer = 0;
    double real = 0.0;
    bool boolean = false;
    std::string text;
    std::vector<Value> array;

    // Typed accessors; throw ConfigError naming the expected type.
    std::int64_t as_int() const;
    double as_double() const;  // accepts integers
    bool as_bool() const;
    const std::string& as_string() const;
    std::vector<double> as_double_array() const;
};

using Table = std::map<std::string, Value>;

struct Document {
    Table root;
    std::map<std::string, Table> tables;
    std::map<std::string, std::vector<Table>> table_arrays;

    bool has(const std::string& key) const { return root.count(key) > 0; }
    const Value& at(const std::string& key) const;
};

// Throws ConfigError with a line number on malformed input.
Document parse(const std::string& text, const std::string& origin = "<memory>");
Document parse_file(const std::string& path);

}  // namespace speede::toml_lite
