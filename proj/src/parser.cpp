#include <charconv>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>

#include "cfprot/asm_text.hpp"
#include "cfprot/errors.hpp"

namespace cfprot {

namespace {

bool ident_char(char c) {
  return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '.';
}

// One source line, tokenized on demand.
class Line {
 public:
  Line(std::string_view text, int lineno) : text_(text), lineno_(lineno) {}

  int lineno() const { return lineno_; }
  int col() const { return static_cast<int>(pos_) + 1; }

  [[noreturn]] void fail(const std::string& msg) const {
    throw ParseError(lineno_, col(), msg);
  }

  void skip_ws() {
    while (pos_ < text_.size() &&
           (text_[pos_] == ' ' || text_[pos_] == '\t'))
      ++pos_;
  }

  bool at_end() {
    skip_ws();
    return pos_ >= text_.size();
  }

  char peek() {
    skip_ws();
    return pos_ < text_.size() ? text_[pos_] : '\0';
  }

  bool consume(char c) {
    skip_ws();
    if (pos_ < text_.size() && text_[pos_] == c) {
      ++pos_;
      return true;
    }
    return false;
  }

  void expect(char c) {
    if (!consume(c)) fail(std::string("expected '") + c + "'");
  }

  std::string ident() {
    skip_ws();
    size_t start = pos_;
    while (pos_ < text_.size() && ident_char(text_[pos_])) ++pos_;
    if (pos_ == start) fail("expected identifier");
    return std::string(text_.substr(start, pos_ - start));
  }

  int64_t immediate() {
    consume('#');
    skip_ws();
    size_t start = pos_;
    bool neg = consume('-');
    skip_ws();
    uint64_t value = 0;
    int base = 10;
    if (pos_ + 1 < text_.size() && text_[pos_] == '0' &&
        (text_[pos_ + 1] == 'x' || text_[pos_ + 1] == 'X')) {
      pos_ += 2;
      base = 16;
    }
    size_t digits = pos_;
    auto [p, ec] = std::from_chars(text_.data() + pos_,
                                   text_.data() + text_.size(), value, base);
    if (ec != std::errc() || p == text_.data() + digits) {
      pos_ = start;
      fail("expected immediate");
    }
    pos_ = p - text_.data();
    return neg ? -static_cast<int64_t>(value) : static_cast<int64_t>(value);
  }

  // x0..x30 or sp; w-registers when allow_w is set (reported via *is_w).
  RegIdx reg(bool allow_sp = false, bool allow_w = false, bool* is_w = nullptr) {
    skip_ws();
    size_t start = pos_;
    std::string name = ident();
    for (char& c : name) c = static_cast<char>(std::tolower(c));
    if (is_w) *is_w = false;
    if (name == "sp") {
      if (!allow_sp) {
        pos_ = start;
        fail("sp is not valid here");
      }
      return kRegSp;
    }
    if (name.size() >= 2 && (name[0] == 'x' || name[0] == 'w')) {
      if (name[0] == 'w' && !allow_w) {
        pos_ = start;
        fail("w register is not valid here");
      }
      unsigned idx = 0;
      auto [p, ec] = std::from_chars(name.data() + 1, name.data() + name.size(),
                                     idx);
      if (ec == std::errc() && p == name.data() + name.size() && idx <= 30) {
        if (is_w && name[0] == 'w') *is_w = true;
        return static_cast<RegIdx>(idx);
      }
    }
    pos_ = start;
    fail("bad register name '" + name + "'");
  }

 private:
  std::string_view text_;
  size_t pos_ = 0;
  int lineno_;
};

std::optional<Cond> cond_from_name(std::string_view s) {
  static constexpr std::pair<const char*, Cond> kNames[] = {
      {"eq", Cond::Eq}, {"ne", Cond::Ne}, {"hs", Cond::Hs}, {"cs", Cond::Hs},
      {"lo", Cond::Lo}, {"cc", Cond::Lo}, {"mi", Cond::Mi}, {"pl", Cond::Pl},
      {"vs", Cond::Vs}, {"vc", Cond::Vc}, {"hi", Cond::Hi}, {"ls", Cond::Ls},
      {"ge", Cond::Ge}, {"lt", Cond::Lt}, {"gt", Cond::Gt}, {"le", Cond::Le},
      {"al", Cond::Al},
  };
  for (const auto& [name, cond] : kNames)
    if (s == name) return cond;
  return std::nullopt;
}

// [xN], [xN, #imm], [xN, #imm]! or [xN], #imm
struct Address {
  RegIdx base;
  int32_t offset = 0;
  AddrMode mode = AddrMode::Offset;
};

Address parse_address(Line& line) {
  Address a;
  line.expect('[');
  a.base = line.reg(/*allow_sp=*/true);
  if (line.consume(',')) a.offset = static_cast<int32_t>(line.immediate());
  line.expect(']');
  if (line.consume('!')) {
    a.mode = AddrMode::PreIndex;
  } else if (line.consume(',')) {
    a.offset = static_cast<int32_t>(line.immediate());
    a.mode = AddrMode::PostIndex;
  }
  return a;
}

class Parser {
 public:
  explicit Parser(std::string_view text, std::string source)
      : text_(text) {
    program_.source_name = std::move(source);
  }

  Program run() {
    std::istringstream is{std::string(text_)};
    std::string raw;
    int lineno = 0;
    while (std::getline(is, raw)) {
      ++lineno;
      if (auto comment = raw.find("//"); comment != std::string::npos)
        raw.erase(comment);
      parse_line(raw, lineno);
    }
    if (in_function_)
      throw ParseError(lineno, 1, "missing .endfn at end of input");
    resolve();
    return std::move(program_);
  }

 private:
  void parse_line(std::string_view raw, int lineno) {
    Line line(raw, lineno);
    if (line.at_end()) return;

    if (line.peek() == '.') {
      line.consume('.');
      std::string directive = line.ident();
      if (directive == "fn") {
        if (in_function_) line.fail("nested .fn");
        Function f;
        f.name = line.ident();
        if (!line.at_end()) {
          std::string attr = line.ident();
          if (attr != "address_taken") line.fail("unknown attribute " + attr);
          f.address_taken = true;
        }
        if (program_.find_function(f.name))
          line.fail("duplicate function '" + f.name + "'");
        program_.functions.push_back(std::move(f));
        in_function_ = true;
        block_open_ = false;
        after_terminator_ = false;
        return;
      }
      if (directive == "endfn") {
        if (!in_function_) line.fail(".endfn outside a function");
        if (current().blocks.empty()) line.fail("function has no body");
        in_function_ = false;
        return;
      }
      if (directive == "word") {
        int64_t v = line.immediate();
        append(ins::word(static_cast<uint32_t>(v)), line);
        end_line(line);
        return;
      }
      line.fail("unknown directive ." + directive);
    }

    if (!in_function_) line.fail("code outside of a .fn block");

    // Label?
    std::string first = line.ident();
    if (line.consume(':')) {
      start_block(first, line);
      if (!line.at_end()) line.fail("unexpected text after label");
      return;
    }
    parse_instruction(first, line);
    end_line(line);
  }

  void end_line(Line& line) {
    if (!line.at_end()) line.fail("unexpected trailing text");
  }

  Function& current() { return program_.functions.back(); }

  void start_block(const std::string& label, Line& line) {
    for (const Block& b : current().blocks)
      if (b.label == label) line.fail("duplicate label '" + label + "'");
    current().blocks.push_back(Block{label, {}});
    block_open_ = true;
    after_terminator_ = false;
  }

  void append(Instr instr, Line& line) {
    if (after_terminator_)
      line.fail("instruction after a terminator needs a label");
    if (!block_open_) start_block("entry", line);
    bool terminator = instr.is_terminator();
    current().blocks.back().instrs.push_back(std::move(instr));
    if (terminator) after_terminator_ = true;
  }

  void parse_instruction(std::string mnemonic, Line& line) {
    for (char& c : mnemonic) c = static_cast<char>(std::tolower(c));

    // b.<cond>
    if (mnemonic.size() > 2 && mnemonic[0] == 'b' && mnemonic[1] == '.') {
      auto cond = cond_from_name(mnemonic.substr(2));
      if (!cond) line.fail("unknown condition '" + mnemonic.substr(2) + "'");
      append(ins::b_cond(*cond, line.ident()), line);
      return;
    }

    if (mnemonic == "nop") { append(ins::nop(), line); return; }
    if (mnemonic == "bti") {
      BtiKind kind = BtiKind::None;
      if (!line.at_end()) {
        std::string k = line.ident();
        for (char& c : k) c = static_cast<char>(std::tolower(c));
        if (k == "c") kind = BtiKind::C;
        else if (k == "j") kind = BtiKind::J;
        else if (k == "jc") kind = BtiKind::JC;
        else line.fail("bad bti kind '" + k + "'");
      }
      append(ins::bti(kind), line);
      return;
    }
    if (mnemonic == "mov" || mnemonic == "movz" || mnemonic == "movk") {
      RegIdx rd = line.reg();
      line.expect(',');
      if (mnemonic == "mov" && line.peek() != '#') {
        append(ins::mov_reg(rd, line.reg()), line);
        return;
      }
      int64_t imm = line.immediate();
      uint8_t shift = 0;
      if (line.consume(',')) {
        std::string lsl = line.ident();
        if (lsl != "lsl") line.fail("expected lsl");
        int64_t sh = line.immediate();
        if (sh != 0 && sh != 16 && sh != 32 && sh != 48)
          line.fail("mov shift must be 0/16/32/48");
        shift = static_cast<uint8_t>(sh);
      }
      if (imm < 0 || imm > 0xFFFF) line.fail("mov immediate out of range");
      Instr i = ins::movz(rd, static_cast<uint16_t>(imm), shift);
      if (mnemonic == "movk") i.op = Op::Movk;
      append(i, line);
      return;
    }
    if (mnemonic == "add" || mnemonic == "sub") {
      RegIdx rd = line.reg(/*allow_sp=*/true);
      line.expect(',');
      RegIdx rn = line.reg(/*allow_sp=*/true);
      line.expect(',');
      if (line.peek() == '#') {
        int64_t imm = line.immediate();
        if (imm < 0 || imm > 4095) line.fail("add/sub immediate out of range");
        Instr i = ins::add_imm(rd, rn, static_cast<uint32_t>(imm));
        if (mnemonic == "sub") i.op = Op::SubImm;
        append(i, line);
      } else {
        RegIdx rm = line.reg();
        Instr i;
        i.op = mnemonic == "add" ? Op::AddReg : Op::SubReg;
        i.rd = rd;
        i.rn = rn;
        i.rm = rm;
        append(i, line);
      }
      return;
    }
    if (mnemonic == "cmp") {
      RegIdx rn = line.reg(/*allow_sp=*/true);
      line.expect(',');
      Instr i;
      if (line.peek() == '#') {
        int64_t imm = line.immediate();
        if (imm < 0 || imm > 4095) line.fail("cmp immediate out of range");
        i.op = Op::CmpImm;
        i.rn = rn;
        i.imm = static_cast<uint64_t>(imm);
      } else {
        i.op = Op::CmpReg;
        i.rn = rn;
        i.rm = line.reg();
      }
      append(i, line);
      return;
    }
    if (mnemonic == "mul") {
      RegIdx rd = line.reg();
      line.expect(',');
      RegIdx rn = line.reg();
      line.expect(',');
      RegIdx rm = line.reg();
      append(ins::mul(rd, rn, rm), line);
      return;
    }
    if (mnemonic == "and") {
      RegIdx rd = line.reg();
      line.expect(',');
      RegIdx rn = line.reg();
      line.expect(',');
      int64_t imm = line.immediate();
      append(ins::and_imm(rd, rn, static_cast<uint64_t>(imm)), line);
      return;
    }
    if (mnemonic == "adr") {
      RegIdx rd = line.reg();
      line.expect(',');
      append(ins::adr(rd, line.ident()), line);
      return;
    }
    if (mnemonic == "ldr" || mnemonic == "str") {
      bool is_w = false;
      RegIdx rt = line.reg(false, /*allow_w=*/true, &is_w);
      line.expect(',');
      Address a = parse_address(line);
      if (is_w) {
        if (mnemonic == "str") line.fail("32-bit stores are not supported");
        if (a.mode != AddrMode::Offset || a.offset < 0 || a.offset % 4)
          line.fail("ldr w needs a non-negative word-aligned offset");
        append(ins::ldr_w(rt, a.base, a.offset), line);
        return;
      }
      if (a.offset % 8)
        line.fail("64-bit load/store offset must be 8-byte aligned");
      Instr i = mnemonic == "ldr" ? ins::ldr(rt, a.base, a.offset, a.mode)
                                  : ins::str(rt, a.base, a.offset, a.mode);
      append(i, line);
      return;
    }
    if (mnemonic == "ldtr" || mnemonic == "sttr") {
      RegIdx rt = line.reg();
      line.expect(',');
      Address a = parse_address(line);
      if (a.mode != AddrMode::Offset)
        line.fail("ldtr/sttr have no writeback addressing");
      if (a.offset < -256 || a.offset > 255)
        line.fail("ldtr/sttr offset out of range");
      append(mnemonic == "ldtr" ? ins::ldtr(rt, a.base, a.offset)
                                : ins::sttr(rt, a.base, a.offset),
             line);
      return;
    }
    if (mnemonic == "ldp" || mnemonic == "stp") {
      RegIdx rt = line.reg();
      line.expect(',');
      RegIdx rt2 = line.reg();
      line.expect(',');
      Address a = parse_address(line);
      if (a.offset % 8) line.fail("ldp/stp offset must be 8-byte aligned");
      Instr i;
      i.op = mnemonic == "ldp" ? Op::Ldp : Op::Stp;
      i.rd = rt;
      i.rt2 = rt2;
      i.rn = a.base;
      i.offset = a.offset;
      i.mode = a.mode;
      append(i, line);
      return;
    }
    if (mnemonic == "b") { append(ins::b(line.ident()), line); return; }
    if (mnemonic == "bl") { append(ins::bl(line.ident()), line); return; }
    if (mnemonic == "blr") { append(ins::blr(line.reg()), line); return; }
    if (mnemonic == "br") {
      RegIdx rn = line.reg();
      Instr i;
      i.rn = rn;
      if (line.consume(',')) {
        if (line.peek() == '[') {
          line.expect('[');
          i.op = Op::BrTable;
          if (!line.consume(']')) {
            do {
              i.targets.push_back(line.ident());
            } while (line.consume(','));
            line.expect(']');
          }
          if (i.targets.empty()) line.fail("empty br target set");
        } else {
          std::string word = line.ident();
          if (word != "tail") line.fail("expected 'tail' or '[targets]'");
          i.op = Op::BrTail;
        }
      } else {
        i.op = Op::BrUncon;
      }
      append(i, line);
      return;
    }
    if (mnemonic == "ret") {
      RegIdx rn = kRegLr;
      if (!line.at_end()) rn = line.reg();
      append(ins::ret(rn), line);
      return;
    }
    if (mnemonic == "svc" || mnemonic == "brk") {
      int64_t imm = line.immediate();
      if (imm < 0 || imm > 0xFFFF) line.fail("immediate out of range");
      append(mnemonic == "svc" ? ins::svc(static_cast<uint16_t>(imm))
                               : ins::brk(static_cast<uint16_t>(imm)),
             line);
      return;
    }
    line.fail("unknown mnemonic '" + mnemonic + "'");
  }

  // Branch targets must name an in-function block or a function; BrTable
  // targets must be in-function blocks.
  void resolve() const {
    for (const Function& f : program_.functions) {
      std::set<std::string_view> labels;
      for (const Block& b : f.blocks) labels.insert(b.label);
      for (const Block& b : f.blocks) {
        for (const Instr& i : b.instrs) {
          switch (i.op) {
            case Op::B:
            case Op::BCond:
            case Op::Adr:
              if (!labels.contains(i.label) &&
                  !program_.find_function(i.label))
                throw ParseError(0, 0, f.name + ": unresolved target '" +
                                           i.label + "'");
              break;
            case Op::Bl:
              if (!program_.find_function(i.label))
                throw ParseError(0, 0, f.name + ": call to unknown function '" +
                                           i.label + "'");
              break;
            case Op::BrTable:
              for (const std::string& t : i.targets)
                if (!labels.contains(t))
                  throw ParseError(0, 0, f.name +
                                             ": br target set entry '" + t +
                                             "' is not a block in this function");
              break;
            default:
              break;
          }
        }
      }
    }
  }

  std::string_view text_;
  Program program_;
  bool in_function_ = false;
  bool block_open_ = false;
  bool after_terminator_ = false;
};

}  // namespace

Program parse_program(std::string_view text, std::string source_name) {
  return Parser(text, std::move(source_name)).run();
}

Program load_program(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ToolError("cannot open program file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_program(ss.str(), path);
}

}  // namespace cfprot
