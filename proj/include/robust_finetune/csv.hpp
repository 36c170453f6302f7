#pragma once

#include <cstddef>
#include <istream>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "tensor.hpp"

namespace rft::csv {

/// One parsed record and the physical line it started on (1-based).
struct Record {
    std::vector<std::string> fields;
    std::size_t line = 0;
};

/// RFC-4180 style reader: quoted fields may contain the delimiter, doubled quotes and newlines.
class Reader {
public:
    Reader(std::istream& in, char delimiter = ',') : in_(in), delimiter_(delimiter) {}

    std::optional<Record> next()
    {
        Record rec;
        std::string field;
        bool in_quotes = false;
        bool field_was_quoted = false;
        bool any = false;
        rec.line = line_ + 1;
        int ch;
        while ((ch = in_.get()) != std::char_traits<char>::eof()) {
            any = true;
            const char c = static_cast<char>(ch);
            if (in_quotes) {
                if (c == '"') {
                    if (in_.peek() == '"') {
                        in_.get();
                        field += '"';
                    } else {
                        in_quotes = false;
                    }
                } else {
                    if (c == '\n') ++line_;
                    field += c;
                }
                continue;
            }
            if (c == '"') {
                if (!field.empty() || field_was_quoted)
                    throw Error("line " + std::to_string(rec.line) + ": stray quote inside unquoted field");
                in_quotes = true;
                field_was_quoted = true;
            } else if (c == delimiter_) {
                rec.fields.push_back(std::move(field));
                field.clear();
                field_was_quoted = false;
            } else if (c == '\n') {
                ++line_;
                rec.fields.push_back(std::move(field));
                return rec;
            } else if (c == '\r' && in_.peek() == '\n') {
                // CRLF; the '\n' ends the record on the next iteration
            } else {
                if (field_was_quoted)
                    throw Error("line " + std::to_string(rec.line) + ": text after closing quote");
                field += c;
            }
        }
        if (in_quotes) throw Error("line " + std::to_string(rec.line) + ": unterminated quoted field");
        if (!any) return std::nullopt;
        ++line_;
        rec.fields.push_back(std::move(field));
        return rec;
    }

private:
    std::istream& in_;
    char delimiter_;
    std::size_t line_ = 0;
};

inline std::string quote(std::string_view field, char delimiter = ',')
{
    if (field.find_first_of(std::string{delimiter} + "\"\r\n") == std::string_view::npos)
        return std::string(field);
    std::string out = "\"";
    for (char c : field) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + "\"";
}

} // namespace rft::csv
