#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "cfprot/asm_text.hpp"
#include "cfprot/audit.hpp"
#include "cfprot/errors.hpp"
#include "cfprot/machine.hpp"
#include "cfprot/policy.hpp"
#include "cfprot/rewriter.hpp"
#include "cfprot/scanner.hpp"
#include "cfprot/verifier.hpp"

namespace {

std::vector<uint8_t> read_binary(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw cfprot::ToolError("cannot open file: " + path);
  return std::vector<uint8_t>(std::istreambuf_iterator<char>(in),
                              std::istreambuf_iterator<char>());
}

void write_text(const std::string& path, const std::string& text) {
  if (path == "-") {
    std::cout << text;
    return;
  }
  std::ofstream out(path);
  if (!out) throw cfprot::ToolError("cannot write file: " + path);
  out << text;
}

int do_scan(const std::string& file, size_t page_size,
            const std::string& allowlist_path) {
  cfprot::Allowlist allow = allowlist_path.empty()
                                ? cfprot::Allowlist::el0_default()
                                : cfprot::Allowlist::load_file(allowlist_path);
  std::vector<uint8_t> bytes = read_binary(file);
  if (bytes.empty()) {
    std::cout << "0 pages, all allowed\n";
    return 0;
  }
  std::vector<std::vector<uint8_t>> pages;
  for (size_t off = 0; off < bytes.size(); off += page_size) {
    size_t len = std::min(page_size, bytes.size() - off);
    pages.emplace_back(bytes.begin() + off, bytes.begin() + off + len);
  }
  std::vector<cfprot::ScanVerdict> verdicts =
      cfprot::scan_task(pages, allow);
  bool all_ok = true;
  for (size_t p = 0; p < verdicts.size(); ++p) {
    if (verdicts[p].allowed) {
      std::cout << "page " << p << ": allowed\n";
      continue;
    }
    all_ok = false;
    std::cout << "page " << p << ": DENIED";
    for (const auto& v : verdicts[p].violations)
      std::cout << " [offset " << v.offset << ": " << v.instr.to_string()
                << "]";
    std::cout << "\n";
  }
  return all_ok ? 0 : 1;
}

int do_rewrite(const std::string& in, const std::string& out,
               const cfprot::RewriteOptions& opts) {
  cfprot::Program p = cfprot::load_program(in);
  cfprot::Program rewritten = cfprot::rewrite(p, opts);
  write_text(out, cfprot::print_program(rewritten));
  return 0;
}

int do_verify(const std::string& in, const std::string& policy_name) {
  cfprot::VerifyPolicy policy = policy_name == "ss-only"
                                    ? cfprot::VerifyPolicy::ss_only()
                                    : cfprot::VerifyPolicy::full();
  cfprot::Program p = cfprot::load_program(in);
  std::vector<cfprot::Violation> violations = cfprot::verify(p, policy);
  for (const cfprot::Violation& v : violations)
    std::cout << v.to_string() << "\n";
  return violations.empty() ? 0 : 1;
}

int do_sim(const std::string& program_path, const std::string& layout_path,
           const std::string& attack_path, const std::string& trace_path,
           const std::string& entry, uint64_t fuel, bool allow_unverified) {
  cfprot::Program p = cfprot::load_program(program_path);
  cfprot::MemoryLayout layout = cfprot::MemoryLayout::load_file(layout_path);

  auto dump_trace = [&](const std::vector<cfprot::TraceEvent>& trace) {
    if (trace_path.empty()) return;
    std::ostringstream os;
    for (const cfprot::TraceEvent& e : trace) os << e.to_string() << "\n";
    write_text(trace_path, os.str());
  };

  if (!attack_path.empty()) {
    cfprot::AttackScript script = cfprot::AttackScript::load_file(attack_path);
    cfprot::Outcome outcome =
        cfprot::run_attack(p, layout, script, entry, fuel);
    dump_trace(outcome.trace);
    std::cout << outcome.to_string() << "\n";
    return outcome.result == cfprot::OutcomeKind::Neutralized ? 0 : 1;
  }

  cfprot::RunResult res =
      cfprot::run_program(p, layout, entry, fuel, allow_unverified);
  dump_trace(res.trace);
  switch (res.status) {
    case cfprot::RunStatus::Exited:
      std::cout << "exited code=" << res.exit_code << "\n";
      return 0;
    case cfprot::RunStatus::Faulted:
      std::cout << "faulted: "
                << (res.fault ? res.fault->to_string() : "undefined")
                << " pc=0x" << std::hex << res.fault_pc << std::dec << "\n";
      return 1;
    case cfprot::RunStatus::Trapped:
      std::cout << "trapped #" << res.trap_imm << "\n";
      return 1;
    case cfprot::RunStatus::FuelExhausted:
      std::cout << "fuel exhausted\n";
      return 1;
    default:
      std::cout << "running\n";
      return 1;
  }
}

int do_perms_audit(const std::string& layout_path,
                   const std::string& mode_name) {
  cfprot::MemoryLayout layout = cfprot::MemoryLayout::load_file(layout_path);
  cfprot::IsolationMode mode = cfprot::IsolationMode::Hpds;
  if (!mode_name.empty())
    mode = mode_name == "e0pd" ? cfprot::IsolationMode::E0pd
                               : cfprot::IsolationMode::Hpds;
  else if (layout.mode)
    mode = *layout.mode;
  cfprot::AuditReport report = cfprot::audit_isolation(layout, mode);
  std::cout << report.to_text();
  if (report.clean()) {
    std::cout << "isolation holds\n";
    return 0;
  }
  std::cout << report.violations().size() << " violation(s)\n";
  return 1;
}

int do_perms_layout(const std::string& out, const std::string& mode_name) {
  cfprot::IsolationMode mode = mode_name == "e0pd"
                                   ? cfprot::IsolationMode::E0pd
                                   : cfprot::IsolationMode::Hpds;
  cfprot::MemoryLayout layout =
      cfprot::combined_layout(cfprot::LayoutParams{}, mode);
  write_text(out, layout.to_text());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"AArch64 control-flow protection toolkit: privileged "
               "instruction scanning, shadow stack / CFI instrumentation, "
               "static verification, permission-model auditing, simulation"};
  app.set_version_flag("--version", "cfprot 0.1.0");
  app.require_subcommand(1);

  // scan
  std::string scan_file, scan_allowlist;
  size_t scan_page_size = 4096;
  CLI::App* scan = app.add_subcommand("scan", "scan raw code bytes for "
                                              "forbidden privileged "
                                              "instructions");
  scan->add_option("file", scan_file, "raw code bytes")->required();
  scan->add_option("--page-size", scan_page_size, "bytes per page");
  scan->add_option("--allowlist", scan_allowlist, "operand allowlist file");

  // rewrite
  std::string rw_in, rw_out = "-";
  bool no_cfi = false, no_ss = false, no_mask = false;
  std::string rw_trap = cfprot::kDefaultTrapSymbol;
  CLI::App* rewrite = app.add_subcommand(
      "rewrite", "apply shadow stack, CFI and bit-masking transformations");
  rewrite->add_option("input", rw_in, "assembly file")->required();
  rewrite->add_option("-o,--output", rw_out, "output file (- for stdout)");
  rewrite->add_flag("--no-cfi", no_cfi, "skip forward-edge CFI");
  rewrite->add_flag("--no-ss", no_ss, "skip shadow stack");
  rewrite->add_flag("--no-mask", no_mask, "skip bit-masking");
  rewrite->add_option("--trap", rw_trap, "CFI failure sink symbol");

  // verify
  std::string vf_in, vf_policy = "full";
  CLI::App* verify = app.add_subcommand("verify",
                                        "statically check compliance");
  verify->add_option("input", vf_in, "assembly file")->required();
  verify->add_option("--policy", vf_policy, "full | ss-only")
      ->check(CLI::IsMember({"full", "ss-only"}));

  // sim
  std::string sim_prog, sim_layout, sim_attack, sim_trace, sim_entry = "main";
  uint64_t sim_fuel = 1000000;
  bool sim_unverified = false;
  CLI::App* sim = app.add_subcommand("sim", "run a program on the machine "
                                            "model");
  sim->add_option("program", sim_prog, "assembly file")->required();
  sim->add_option("--layout", sim_layout, "memory layout file")->required();
  sim->add_option("--attack", sim_attack, "attack script");
  sim->add_option("--trace", sim_trace, "write the event trace here");
  sim->add_option("--entry", sim_entry, "entry function");
  sim->add_option("--fuel", sim_fuel, "max steps");
  sim->add_flag("--allow-unverified", sim_unverified,
                "run even if verification fails");

  // perms
  CLI::App* perms = app.add_subcommand("perms", "permission model tools");
  perms->require_subcommand(1);
  std::string audit_layout, audit_mode;
  CLI::App* audit = perms->add_subcommand("audit",
                                          "isolation audit of a layout");
  audit->add_option("layout", audit_layout, "layout file")->required();
  audit->add_option("--mode", audit_mode, "hpds | e0pd")
      ->check(CLI::IsMember({"hpds", "e0pd"}));
  std::string mklayout_out = "-", mklayout_mode = "hpds";
  CLI::App* mklayout =
      perms->add_subcommand("layout", "emit the default combined layout");
  mklayout->add_option("-o,--output", mklayout_out, "output file");
  mklayout->add_option("--mode", mklayout_mode, "hpds | e0pd")
      ->check(CLI::IsMember({"hpds", "e0pd"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (scan->parsed()) return do_scan(scan_file, scan_page_size, scan_allowlist);
    if (rewrite->parsed()) {
      cfprot::RewriteOptions opts;
      opts.enable_cfi = !no_cfi;
      opts.enable_ss = !no_ss;
      opts.enable_mask = !no_mask;
      opts.trap_symbol = rw_trap;
      return do_rewrite(rw_in, rw_out, opts);
    }
    if (verify->parsed()) return do_verify(vf_in, vf_policy);
    if (sim->parsed())
      return do_sim(sim_prog, sim_layout, sim_attack, sim_trace, sim_entry,
                    sim_fuel, sim_unverified);
    if (audit->parsed()) return do_perms_audit(audit_layout, audit_mode);
    if (mklayout->parsed()) return do_perms_layout(mklayout_out, mklayout_mode);
  } catch (const cfprot::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const cfprot::ToolError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 2;
}
