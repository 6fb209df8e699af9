#include "speede/toml_lite.hpp"

#include <algorithm>
#include <cctype>
#include <cstdlib>
#include <stdexcept>
#include <string_view>

#include "speede/binio.hpp"
#include "speede/errors.hpp"

namespace speede::toml_lite {

namespace {

[[noreturn]] void fail(const std::string& origin, std::size_t line, const std::string& what) {
    throw ConfigError(origin + ":" + std::to_string(line) + ": " + what);
}

bool is_bare_key_char(char c) {
    return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-';
}

std::string_view trim(std::string_view s) {
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
    return s;
}

// Cuts a trailing comment, respecting quoted strings.
std::string_view strip_comment(std::string_view s) {
    bool in_string = false;
    for (std::size_t i = 0; i < s.size(); ++i) {
        const char c = s[i];
        if (in_string) {
            if (c == '\\') ++i;
            else if (c == '"') in_string = false;
        } else if (c == '"') {
            in_string = true;
        } else if (c == '#') {
            return s.substr(0, i);
        }
    }
    return s;
}

struct Cursor {
    std::string_view text;
    std::size_t pos = 0;
    const std::string& origin;
    std::size_t line;

    bool done() const { return pos >= text.size(); }
    char peek() const { return text[pos]; }
    void skip_ws() {
        while (!done() && std::isspace(static_cast<unsigned char>(text[pos]))) ++pos;
    }
};

Value parse_value(Cursor& c);

Value parse_string(Cursor& c) {
    ++c.pos;  // opening quote
    std::string out;
    while (true) {
        if (c.done()) fail(c.origin, c.line, "unterminated string");
        const char ch = c.text[c.pos++];
        if (ch == '"') break;
        if (ch == '\\') {
            if (c.done()) fail(c.origin, c.line, "dangling escape in string");
            const char esc = c.text[c.pos++];
            switch (esc) {
                case '"': out.push_back('"'); break;
                case '\\': out.push_back('\\'); break;
                case 'n': out.push_back('\n'); break;
                case 't': out.push_back('\t'); break;
                case 'r': out.push_back('\r'); break;
                default:
                    fail(c.origin, c.line, std::string("unsupported escape \\") + esc);
            }
        } else {
            out.push_back(ch);
        }
    }
    Value v;
    v.kind = Value::Kind::String;
    v.text = std::move(out);
    return v;
}

Value parse_array(Cursor& c) {
    ++c.pos;  // opening bracket
    Value v;
    v.kind = Value::Kind::Array;
    c.skip_ws();
    while (true) {
        if (c.done()) fail(c.origin, c.line, "unterminated array");
        if (c.peek() == ']') {
            ++c.pos;
            break;
        }
        v.array.push_back(parse_value(c));
        c.skip_ws();
        if (c.done()) fail(c.origin, c.line, "unterminated array");
        if (c.peek() == ',') {
            ++c.pos;
            c.skip_ws();
        } else if (c.peek() != ']') {
            fail(c.origin, c.line, "expected ',' or ']' in array");
        }
    }
    return v;
}

Value parse_scalar(Cursor& c) {
    const std::size_t start = c.pos;
    while (!c.done() && c.peek() != ',' && c.peek() != ']' &&
           !std::isspace(static_cast<unsigned char>(c.peek())))
        ++c.pos;
    const std::string token(c.text.substr(start, c.pos - start));
    if (token.empty()) fail(c.origin, c.line, "expected a value");

    Value v;
    if (token == "true" || token == "false") {
        v.kind = Value::Kind::Boolean;
        v.boolean = token == "true";
        return v;
    }

    bool integral = true;
    for (std::size_t i = 0; i < token.size(); ++i) {
        const char ch = token[i];
        if (i == 0 && (ch == '+' || ch == '-')) continue;
        if (!std::isdigit(static_cast<unsigned char>(ch))) {
            integral = false;
            break;
        }
    }
    if (integral && token != "+" && token != "-") {
        try {
            v.kind = Value::Kind::Integer;
            v.integer = std::stoll(token);
            return v;
        } catch (const std::out_of_range&) {
            fail(c.origin, c.line, "integer out of range: " + token);
        }
    }

    // strtod is the fallback, but it is more permissive than TOML floats
    // (hex floats, "inf", "nan"); restrict to decimal digit/sign/dot/exponent.
    const bool decimal_only =
        token.find_first_not_of("0123456789+-.eE_") == std::string::npos;
    char* end = nullptr;
    const double d = std::strtod(token.c_str(), &end);
    if (!decimal_only || end != token.c_str() + token.size())
        fail(c.origin, c.line, "cannot parse value: " + token);
    v.kind = Value::Kind::Float;
    v.real = d;
    return v;
}

Value parse_value(Cursor& c) {
    c.skip_ws();
    if (c.done()) fail(c.origin, c.line, "expected a value");
    if (c.peek() == '"') return parse_string(c);
    if (c.peek() == '[') return parse_array(c);
    return parse_scalar(c);
}

std::string parse_section_name(std::string_view inner, const std::string& origin,
                               std::size_t line) {
    const std::string_view name = trim(inner);
    if (name.empty()) fail(origin, line, "empty table name");
    for (const char ch : name)
        if (!is_bare_key_char(ch)) fail(origin, line, "unsupported table name character");
    return std::string(name);
}

}  // namespace

std::int64_t Value::as_int() const {
    if (kind != Kind::Integer) throw ConfigError("expected an integer value");
    return integer;
}

double Value::as_double() const {
    if (kind == Kind::Integer) return static_cast<double>(integer);
    if (kind != Kind::Float) throw ConfigError("expected a numeric value");
    return real;
}

bool Value::as_bool() const {
    if (kind != Kind::Boolean) throw ConfigError("expected a boolean value");
    return boolean;
}

const std::string& Value::as_string() const {
    if (kind != Kind::String) throw ConfigError("expected a string value");
    return text;
}

std::vector<double> Value::as_double_array() const {
    if (kind != Kind::Array) throw ConfigError("expected an array value");
    std::vector<double> out;
    out.reserve(array.size());
    for (const Value& v : array) out.push_back(v.as_double());
    return out;
}

const Value& Document::at(const std::string& key) const {
    const auto it = root.find(key);
    if (it == root.end()) throw ConfigError("missing key: " + key);
    return it->second;
}

Document parse(const std::string& text, const std::string& origin) {
    Document doc;
    Table* current = &doc.root;

    std::size_t line_no = 0;
    std::size_t begin = 0;
    while (begin <= text.size()) {
        const std::size_t end = std::min(text.find('\n', begin), text.size());
        ++line_no;
        const std::string_view raw(text.data() + begin, end - begin);
        begin = end + 1;

        const std::string_view line = trim(strip_comment(raw));
        if (line.empty()) continue;

        if (line.front() == '[') {
            const bool is_array = line.size() >= 2 && line[1] == '[';
            const std::string_view closer = is_array ? "]]" : "]";
            if (line.substr(line.size() - closer.size()) != closer)
                fail(origin, line_no, "unterminated table header");
            const std::string name = parse_section_name(
                line.substr(is_array ? 2 : 1, line.size() - 2 * (is_array ? 2 : 1)), origin,
                line_no);
            if (is_array) {
                doc.table_arrays[name].emplace_back();
                current = &doc.table_arrays[name].back();
            } else {
                if (doc.tables.count(name)) fail(origin, line_no, "duplicate table: " + name);
                current = &doc.tables[name];
            }
            continue;
        }

        const std::size_t eq = line.find('=');
        if (eq == std::string_view::npos) fail(origin, line_no, "expected 'key = value'");
        const std::string_view key = trim(line.substr(0, eq));
        if (key.empty()) fail(origin, line_no, "empty key");
        for (const char ch : key)
            if (!is_bare_key_char(ch)) fail(origin, line_no, "unsupported key character");

        Cursor cursor{line.substr(eq + 1), 0, origin, line_no};
        const Value value = parse_value(cursor);
        cursor.skip_ws();
        if (!cursor.done()) fail(origin, line_no, "trailing characters after value");

        if (!current->emplace(std::string(key), value).second)
            fail(origin, line_no, "duplicate key: " + std::string(key));
    }
    return doc;
}

Document parse_file(const std::string& path) {
    return parse(read_binary_file(path), path);
}

}  // namespace speede::toml_lite
