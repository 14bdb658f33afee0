// Streaming reader for the MeSH DescriptorRecordSet format. Only the fields
// the ontology needs are extracted; everything else is skipped without
// building a tree, so full-size descriptor files parse in a single pass.

#include <istream>
#include <string>
#include <vector>

#include "biodistill/error.hpp"
#include "biodistill/mesh.hpp"

namespace biodistill {

namespace {

class XmlScanner {
 public:
  enum class Event { start, end, text, eof };

  explicit XmlScanner(std::istream& in) : buf_(in.rdbuf()) {}

  Event next() {
    while (true) {
      int c = peek();
      if (c == EOF) return Event::eof;
      if (c != '<') {
        read_text();
        return Event::text;
      }
      get();
      c = peek();
      if (c == '?') {
        skip_until("?>");
      } else if (c == '!') {
        get();
        if (try_consume("--")) {
          skip_until("-->");
        } else if (try_consume("[CDATA[")) {
          text_.clear();
          read_until("]]>", text_);
          return Event::text;
        } else {
          skip_declaration();
        }
      } else if (c == '/') {
        get();
        name_ = read_name();
        skip_ws();
        expect('>');
        return Event::end;
      } else {
        name_ = read_name();
        self_closing_ = skip_attributes();
        return Event::start;
      }
    }
  }

  const std::string& name() const { return name_; }
  const std::string& text() const { return text_; }
  bool self_closing() const { return self_closing_; }
  std::size_t line() const { return line_; }

  [[noreturn]] void fail(const std::string& what) const {
    throw Error(ErrorKind::parse, "xml line " + std::to_string(line_) + ": " + what);
  }

 private:
  int peek() { return buf_->sgetc(); }

  int get() {
    int c = buf_->sbumpc();
    if (c == '\n') ++line_;
    return c;
  }

  void expect(char want) {
    int c = get();
    if (c != want) fail(std::string("expected '") + want + "'");
  }

  bool try_consume(const char* lit) {
    // Literals here only follow "<!", so a mismatch on the first byte is the
    // common case and nothing has been consumed yet.
    if (peek() != lit[0]) return false;
    for (const char* p = lit; *p; ++p) {
      if (get() != *p) fail(std::string("malformed markup, expected '") + lit + "'");
    }
    return true;
  }

  void skip_ws() {
    while (true) {
      int c = peek();
      if (c == ' ' || c == '\t' || c == '\r' || c == '\n') get();
      else break;
    }
  }

  std::string read_name() {
    std::string out;
    while (true) {
      int c = peek();
      if (c == EOF) fail("unexpected end of input in tag name");
      if (c == ' ' || c == '\t' || c == '\r' || c == '\n' || c == '>' || c == '/') break;
      out.push_back(static_cast<char>(get()));
    }
    if (out.empty()) fail("empty tag name");
    return out;
  }

  // Returns true for "<tag/>".
  bool skip_attributes() {
    while (true) {
      int c = get();
      if (c == EOF) fail("unexpected end of input in tag <" + name_ + ">");
      if (c == '>') return false;
      if (c == '/') {
        skip_ws();
        expect('>');
        return true;
      }
      if (c == '"' || c == '\'') {
        int q = c;
        while ((c = get()) != q) {
          if (c == EOF) fail("unterminated attribute value");
        }
      }
    }
  }

  void skip_until(const std::string& terminator) {
    std::string sink;
    read_until(terminator, sink);
  }

  void read_until(const std::string& terminator, std::string& out) {
    while (true) {
      int c = get();
      if (c == EOF) fail("unterminated markup, expected '" + terminator + "'");
      out.push_back(static_cast<char>(c));
      if (out.size() >= terminator.size() &&
          out.compare(out.size() - terminator.size(), terminator.size(), terminator) == 0) {
        out.resize(out.size() - terminator.size());
        return;
      }
    }
  }

  // <!DOCTYPE ...> with an optional [internal subset].
  void skip_declaration() {
    int depth = 0;
    while (true) {
      int c = get();
      if (c == EOF) fail("unterminated declaration");
      if (c == '[') ++depth;
      else if (c == ']') --depth;
      else if (c == '>' && depth <= 0) return;
    }
  }

  void read_text() {
    text_.clear();
    while (true) {
      int c = peek();
      if (c == EOF || c == '<') return;
      get();
      if (c == '&') {
        decode_entity();
      } else {
        text_.push_back(static_cast<char>(c));
      }
    }
  }

  void decode_entity() {
    std::string ent;
    while (true) {
      int c = get();
      if (c == EOF) fail("unterminated entity");
      if (c == ';') break;
      ent.push_back(static_cast<char>(c));
      if (ent.size() > 12) fail("malformed entity");
    }
    if (ent == "lt") text_ += '<';
    else if (ent == "gt") text_ += '>';
    else if (ent == "amp") text_ += '&';
    else if (ent == "quot") text_ += '"';
    else if (ent == "apos") text_ += '\'';
    else if (!ent.empty() && ent[0] == '#') {
      unsigned long cp = 0;
      try {
        cp = ent.size() > 1 && (ent[1] == 'x' || ent[1] == 'X') ? std::stoul(ent.substr(2), nullptr, 16)
                                                                : std::stoul(ent.substr(1), nullptr, 10);
      } catch (const std::exception&) {
        fail("malformed character reference &" + ent + ";");
      }
      append_utf8(static_cast<char32_t>(cp));
    } else {
      fail("unknown entity &" + ent + ";");
    }
  }

  void append_utf8(char32_t cp) {
    if (cp < 0x80) {
      text_ += static_cast<char>(cp);
    } else if (cp < 0x800) {
      text_ += static_cast<char>(0xC0 | (cp >> 6));
      text_ += static_cast<char>(0x80 | (cp & 0x3F));
    } else if (cp < 0x10000) {
      text_ += static_cast<char>(0xE0 | (cp >> 12));
      text_ += static_cast<char>(0x80 | ((cp >> 6) & 0x3F));
      text_ += static_cast<char>(0x80 | (cp & 0x3F));
    } else {
      text_ += static_cast<char>(0xF0 | (cp >> 18));
      text_ += static_cast<char>(0x80 | ((cp >> 12) & 0x3F));
      text_ += static_cast<char>(0x80 | ((cp >> 6) & 0x3F));
      text_ += static_cast<char>(0x80 | (cp & 0x3F));
    }
  }

  std::streambuf* buf_;
  std::string name_;
  std::string text_;
  bool self_closing_ = false;
  std::size_t line_ = 1;
};

bool is_blank(const std::string& s) { return s.find_first_not_of(" \t\r\n") == std::string::npos; }

std::string trimmed(const std::string& s) {
  auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

}  // namespace

std::vector<MeshDescriptor> parse_mesh_xml(std::istream& in) {
  XmlScanner xml(in);
  std::vector<MeshDescriptor> out;
  std::vector<std::string> stack;

  // Path of the current element relative to the open DescriptorRecord.
  std::size_t record_depth = 0;
  std::size_t record_line = 0;
  MeshDescriptor current;
  std::string field;

  auto record_locator = [&] {
    return "DescriptorRecord #" + std::to_string(out.size() + 1) + " (line " + std::to_string(record_line) + ")";
  };
  auto rel_is = [&](std::initializer_list<const char*> path) {
    if (record_depth == 0 || stack.size() != record_depth + path.size()) return false;
    std::size_t i = record_depth;
    for (const char* p : path) {
      if (stack[i++] != p) return false;
    }
    return true;
  };

  while (true) {
    auto ev = xml.next();
    if (ev == XmlScanner::Event::eof) break;

    switch (ev) {
      case XmlScanner::Event::start:
        if (stack.empty() && xml.name() != "DescriptorRecordSet") {
          xml.fail("expected root element DescriptorRecordSet, found " + xml.name());
        }
        if (xml.self_closing()) break;
        stack.push_back(xml.name());
        if (xml.name() == "DescriptorRecord") {
          if (record_depth != 0) xml.fail("nested DescriptorRecord");
          record_depth = stack.size();
          record_line = xml.line();
          current = MeshDescriptor{};
        }
        field.clear();
        break;

      case XmlScanner::Event::text:
        if (stack.empty()) {
          if (!is_blank(xml.text())) xml.fail("text outside the root element");
          break;
        }
        field += xml.text();
        break;

      case XmlScanner::Event::end: {
        if (stack.empty() || stack.back() != xml.name()) {
          xml.fail("mismatched closing tag </" + xml.name() + ">");
        }
        if (rel_is({"DescriptorUI"})) {
          current.id = trimmed(field);
        } else if (rel_is({"DescriptorName", "String"})) {
          current.name = trimmed(field);
        } else if (rel_is({"TreeNumberList", "TreeNumber"})) {
          try {
            current.tree_numbers.push_back(TreeNumber::parse(field));
          } catch (const Error& e) {
            throw Error(ErrorKind::parse, record_locator() + ": " + e.what());
          }
        }
        if (record_depth != 0 && stack.size() == record_depth) {
          if (current.id.empty()) throw Error(ErrorKind::parse, record_locator() + ": missing DescriptorUI");
          out.push_back(std::move(current));
          current = MeshDescriptor{};
          record_depth = 0;
        }
        stack.pop_back();
        field.clear();
        break;
      }

      case XmlScanner::Event::eof:
        break;
    }
  }
  if (!stack.empty()) xml.fail("unexpected end of input inside <" + stack.back() + ">");
  return out;
}

}  // namespace biodistill
