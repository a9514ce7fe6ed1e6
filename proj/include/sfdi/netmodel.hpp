#pragma once

// Immutable per-unit network model parsed from MATPOWER-format case files.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace sfdi {

class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& msg, int line)
      : std::runtime_error("parse error at line " + std::to_string(line) + ": " + msg),
        line_(line) {}
  int line() const { return line_; }

 private:
  int line_;
};

class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class BusKind { slack, pv, pq };

struct Bus {
  int id = 0;
  BusKind kind = BusKind::pq;
  double p_demand = 0.0;   // p.u.
  double q_demand = 0.0;   // p.u.
  double g_shunt = 0.0;    // p.u.
  double b_shunt = 0.0;    // p.u.
  double v_min = 0.94;     // p.u.
  double v_max = 1.06;     // p.u.
  double base_kv = 0.0;
  double v_init = 1.0;     // stored operating point, used as solver guess
  double theta_init = 0.0; // rad
};

struct Branch {
  int from_bus = 0;
  int to_bus = 0;
  double r = 0.0;          // p.u.
  double x = 0.0;          // p.u.
  double b_charging = 0.0; // total line charging, p.u.
  double tap = 1.0;        // off-nominal turns ratio
  double shift = 0.0;      // rad
  bool status = true;

  double g_series() const { return r / (r * r + x * x); }
  double b_series() const { return -x / (r * r + x * x); }
};

struct Generator {
  int bus = 0;
  double p_gen = 0.0;      // p.u.
  double q_gen = 0.0;      // p.u.
  double q_min = 0.0;      // p.u.
  double q_max = 0.0;      // p.u.
  double v_setpoint = 1.0; // p.u.
  bool status = true;
};

// One endpoint of a branch as seen from a bus.
struct BranchEnd {
  std::size_t branch = 0;
  bool at_from = true;
};

class Network {
 public:
  Network(double base_mva, std::vector<Bus> buses, std::vector<Branch> branches,
          std::vector<Generator> generators)
      : base_mva_(base_mva),
        buses_(std::move(buses)),
        branches_(std::move(branches)),
        generators_(std::move(generators)) {
    validate_and_index();
  }

  double base_mva() const { return base_mva_; }
  const std::vector<Bus>& buses() const { return buses_; }
  const std::vector<Branch>& branches() const { return branches_; }
  const std::vector<Generator>& generators() const { return generators_; }

  std::size_t bus_count() const { return buses_.size(); }

  std::size_t bus_index(int id) const {
    auto it = index_of_.find(id);
    if (it == index_of_.end())
      throw ValidationError("unknown bus id " + std::to_string(id));
    return it->second;
  }
  bool has_bus(int id) const { return index_of_.count(id) != 0; }
  const Bus& bus(int id) const { return buses_[bus_index(id)]; }

  std::size_t slack_index() const { return slack_index_; }

  // In-service branch ends incident to the bus at `index`.
  const std::vector<BranchEnd>& incident(std::size_t index) const { return incident_[index]; }

  // Aggregate in-service generation at the bus at `index`, p.u.
  double p_gen_at(std::size_t index) const { return p_gen_[index]; }
  double q_gen_at(std::size_t index) const { return q_gen_[index]; }
  bool has_generator(std::size_t index) const { return has_gen_[index]; }

  // Regulated magnitude for PV/slack buses: setpoint of the first in-service
  // generator, else the stored bus voltage.
  double v_setpoint_at(std::size_t index) const { return v_setpoint_[index]; }

 private:
  void validate_and_index() {
    if (buses_.empty()) throw ValidationError("network has no buses");
    int slack_count = 0;
    for (std::size_t i = 0; i < buses_.size(); ++i) {
      const Bus& b = buses_[i];
      if (!(b.v_min > 0.0) || b.v_min > b.v_max)
        throw ValidationError("bus " + std::to_string(b.id) + ": invalid voltage bounds");
      if (!index_of_.emplace(b.id, i).second)
        throw ValidationError("duplicate bus id " + std::to_string(b.id));
      if (b.kind == BusKind::slack) {
        slack_count++;
        slack_index_ = i;
      }
    }
    if (slack_count != 1)
      throw ValidationError("expected exactly one slack bus, found " +
                            std::to_string(slack_count));

    incident_.resize(buses_.size());
    for (std::size_t k = 0; k < branches_.size(); ++k) {
      const Branch& br = branches_[k];
      if (br.from_bus == br.to_bus)
        throw ValidationError("branch " + std::to_string(k) + " is a self-loop at bus " +
                              std::to_string(br.from_bus));
      if (br.r * br.r + br.x * br.x <= 0.0)
        throw ValidationError("branch " + std::to_string(br.from_bus) + "-" +
                              std::to_string(br.to_bus) + " has zero series impedance");
      auto fit = index_of_.find(br.from_bus);
      auto tit = index_of_.find(br.to_bus);
      if (fit == index_of_.end() || tit == index_of_.end())
        throw ValidationError("branch " + std::to_string(br.from_bus) + "-" +
                              std::to_string(br.to_bus) + " references a missing bus");
      if (br.status) {
        incident_[fit->second].push_back({k, true});
        incident_[tit->second].push_back({k, false});
      }
    }

    p_gen_.assign(buses_.size(), 0.0);
    q_gen_.assign(buses_.size(), 0.0);
    has_gen_.assign(buses_.size(), false);
    v_setpoint_.resize(buses_.size());
    for (std::size_t i = 0; i < buses_.size(); ++i) v_setpoint_[i] = buses_[i].v_init;
    for (const Generator& g : generators_) {
      auto it = index_of_.find(g.bus);
      if (it == index_of_.end())
        throw ValidationError("generator references missing bus " + std::to_string(g.bus));
      if (g.q_min > g.q_max)
        throw ValidationError("generator at bus " + std::to_string(g.bus) +
                              ": q_min > q_max");
      if (!g.status) continue;
      std::size_t i = it->second;
      p_gen_[i] += g.p_gen;
      q_gen_[i] += g.q_gen;
      if (!has_gen_[i]) v_setpoint_[i] = g.v_setpoint;
      has_gen_[i] = true;
    }
  }

  double base_mva_;
  std::vector<Bus> buses_;
  std::vector<Branch> branches_;
  std::vector<Generator> generators_;
  std::unordered_map<int, std::size_t> index_of_;
  std::size_t slack_index_ = 0;
  std::vector<std::vector<BranchEnd>> incident_;
  std::vector<double> p_gen_, q_gen_;
  std::vector<bool> has_gen_;
  std::vector<double> v_setpoint_;
};

namespace detail {

struct CaseTables {
  double base_mva = 0.0;
  bool have_base = false;
  std::vector<std::vector<double>> bus, gen, branch;
  int bus_line = 0, gen_line = 0, branch_line = 0;
};

inline std::string strip_comment(const std::string& line) {
  auto pos = line.find('%');
  return pos == std::string::npos ? line : line.substr(0, pos);
}

inline bool parse_number(std::string_view tok, double& out) {
  try {
    std::size_t used = 0;
    out = std::stod(std::string(tok), &used);
    return used == tok.size();
  } catch (...) {
    return false;
  }
}

// Splits a matrix body into rows. Rows are ';'-terminated; tokens are
// whitespace- or comma-separated.
inline void parse_matrix_rows(const std::string& body, int first_line,
                              std::vector<std::vector<double>>& rows) {
  std::vector<double> current;
  std::string tok;
  int line = first_line;
  auto flush_tok = [&] {
    if (tok.empty()) return;
    double v;
    if (!parse_number(tok, v)) throw ParseError("bad numeric token '" + tok + "'", line);
    current.push_back(v);
    tok.clear();
  };
  for (char c : body) {
    if (c == '\n') {
      flush_tok();
      line++;
    } else if (c == ';') {
      flush_tok();
      if (!current.empty()) rows.push_back(std::move(current));
      current.clear();
    } else if (std::isspace(static_cast<unsigned char>(c)) || c == ',') {
      flush_tok();
    } else {
      tok += c;
    }
  }
  flush_tok();
  if (!current.empty()) rows.push_back(std::move(current));
}

inline CaseTables scan_case_text(const std::string& text) {
  CaseTables t;
  std::istringstream in(text);
  std::string raw;
  int line_no = 0;
  std::string pending; // logical line after continuation folding
  int pending_line = 0;

  auto handle_logical = [&](const std::string& logical, int at_line) {
    auto eq = logical.find('=');
    if (eq == std::string::npos) return;
    std::string lhs = logical.substr(0, eq);
    lhs.erase(std::remove_if(lhs.begin(), lhs.end(),
                             [](unsigned char c) { return std::isspace(c); }),
              lhs.end());
    std::string rhs = logical.substr(eq + 1);
    if (lhs == "mpc.baseMVA") {
      auto semi = rhs.find(';');
      if (semi != std::string::npos) rhs = rhs.substr(0, semi);
      rhs.erase(std::remove_if(rhs.begin(), rhs.end(),
                               [](unsigned char c) { return std::isspace(c); }),
                rhs.end());
      if (!parse_number(rhs, t.base_mva) || t.base_mva <= 0.0)
        throw ParseError("invalid baseMVA value '" + rhs + "'", at_line);
      t.have_base = true;
      return;
    }
    bool is_bus = lhs == "mpc.bus";
    bool is_gen = lhs == "mpc.gen";
    bool is_branch = lhs == "mpc.branch";
    if (!is_bus && !is_gen && !is_branch) return; // gencost and friends: ignored
    auto open = rhs.find('[');
    auto close = rhs.rfind(']');
    if (open == std::string::npos || close == std::string::npos || close < open)
      throw ParseError("matrix assignment without matching [ ]", at_line);
    std::string body = rhs.substr(open + 1, close - open - 1);
    std::vector<std::vector<double>>& dst = is_bus ? t.bus : is_gen ? t.gen : t.branch;
    if (!dst.empty()) throw ParseError("duplicate matrix " + lhs, at_line);
    parse_matrix_rows(body, at_line, dst);
    (is_bus ? t.bus_line : is_gen ? t.gen_line : t.branch_line) = at_line;
  };

  bool in_matrix = false;
  while (std::getline(in, raw)) {
    line_no++;
    std::string s = strip_comment(raw);
    // MATLAB continuation: fold "..." onto the next line
    auto dots = s.find("...");
    if (dots != std::string::npos) s = s.substr(0, dots);
    if (pending.empty()) pending_line = line_no;
    pending += s;
    pending += '\n';
    if (dots != std::string::npos) continue;

    if (!in_matrix && pending.find('[') != std::string::npos &&
        pending.find(']') == std::string::npos) {
      in_matrix = true;
      continue;
    }
    if (in_matrix) {
      if (pending.find(']') == std::string::npos) continue;
      in_matrix = false;
    }
    // statement complete when it carries no unterminated assignment
    handle_logical(pending, pending_line);
    pending.clear();
  }
  if (in_matrix) throw ParseError("unterminated matrix (missing ])", pending_line);
  if (!t.have_base) throw ParseError("mpc.baseMVA not found", line_no);
  if (t.bus.empty()) throw ParseError("mpc.bus not found or empty", line_no);
  if (t.gen.empty()) throw ParseError("mpc.gen not found or empty", line_no);
  if (t.branch.empty()) throw ParseError("mpc.branch not found or empty", line_no);
  return t;
}

constexpr double deg2rad(double d) { return d * std::numbers::pi / 180.0; }
constexpr double rad2deg(double r) { return r * 180.0 / std::numbers::pi; }

}  // namespace detail

// Parses MATPOWER case text (including PGLib variants) into a Network.
// Demands, shunts and generator outputs are converted to per-unit on
// baseMVA; out-of-service branches and generators are dropped; a PV bus
// left without an in-service generator is demoted to PQ.
inline Network parse_case(const std::string& text) {
  detail::CaseTables t = detail::scan_case_text(text);

  std::set<int> online_gen_buses;
  std::vector<Generator> gens;
  for (std::size_t i = 0; i < t.gen.size(); ++i) {
    const auto& row = t.gen[i];
    if (row.size() < 10)
      throw ParseError("gen row " + std::to_string(i + 1) + " has " +
                           std::to_string(row.size()) + " columns, expected >= 10",
                       t.gen_line);
    Generator g;
    g.bus = static_cast<int>(row[0]);
    g.p_gen = row[1] / t.base_mva;
    g.q_gen = row[2] / t.base_mva;
    g.q_max = row[3] / t.base_mva;
    g.q_min = row[4] / t.base_mva;
    g.v_setpoint = row[5];
    g.status = row[7] > 0.0;
    if (!g.status) continue;
    online_gen_buses.insert(g.bus);
    gens.push_back(g);
  }

  std::vector<Bus> buses;
  for (std::size_t i = 0; i < t.bus.size(); ++i) {
    const auto& row = t.bus[i];
    if (row.size() < 13)
      throw ParseError("bus row " + std::to_string(i + 1) + " has " +
                           std::to_string(row.size()) + " columns, expected >= 13",
                       t.bus_line);
    Bus b;
    b.id = static_cast<int>(row[0]);
    int type = static_cast<int>(row[1]);
    switch (type) {
      case 3: b.kind = BusKind::slack; break;
      case 2: b.kind = BusKind::pv; break;
      case 1: b.kind = BusKind::pq; break;
      default:
        throw ParseError("bus " + std::to_string(b.id) + ": unsupported type " +
                             std::to_string(type),
                         t.bus_line);
    }
    if (b.kind == BusKind::pv && !online_gen_buses.count(b.id)) b.kind = BusKind::pq;
    b.p_demand = row[2] / t.base_mva;
    b.q_demand = row[3] / t.base_mva;
    b.g_shunt = row[4] / t.base_mva;
    b.b_shunt = row[5] / t.base_mva;
    b.v_init = row[7];
    b.theta_init = detail::deg2rad(row[8]);
    b.base_kv = row[9];
    b.v_max = row[11];
    b.v_min = row[12];
    buses.push_back(b);
  }

  std::vector<Branch> branches;
  for (std::size_t i = 0; i < t.branch.size(); ++i) {
    const auto& row = t.branch[i];
    if (row.size() < 11)
      throw ParseError("branch row " + std::to_string(i + 1) + " has " +
                           std::to_string(row.size()) + " columns, expected >= 11",
                       t.branch_line);
    Branch br;
    br.from_bus = static_cast<int>(row[0]);
    br.to_bus = static_cast<int>(row[1]);
    br.r = row[2];
    br.x = row[3];
    br.b_charging = row[4];
    br.tap = row[8] == 0.0 ? 1.0 : row[8];
    br.shift = detail::deg2rad(row[9]);
    br.status = row[10] > 0.0;
    if (!br.status) continue;
    branches.push_back(br);
  }

  try {
    return Network(t.base_mva, std::move(buses), std::move(branches), std::move(gens));
  } catch (const ValidationError& e) {
    throw ParseError(e.what(), 0);
  }
}

// Writes a Network back to MATPOWER case format with full precision.
// parse_case(serialize_case(net)) reproduces net field-for-field.
inline std::string serialize_case(const Network& net, const std::string& name = "case") {
  std::ostringstream out;
  out.precision(17);
  out << "function mpc = " << name << "\n";
  out << "mpc.version = '2';\n";
  out << "mpc.baseMVA = " << net.base_mva() << ";\n\n";
  const double base = net.base_mva();

  out << "%% bus data\n";
  out << "mpc.bus = [\n";
  for (const Bus& b : net.buses()) {
    int type = b.kind == BusKind::slack ? 3 : b.kind == BusKind::pv ? 2 : 1;
    out << '\t' << b.id << '\t' << type << '\t' << b.p_demand * base << '\t'
        << b.q_demand * base << '\t' << b.g_shunt * base << '\t' << b.b_shunt * base
        << "\t1\t" << b.v_init << '\t' << detail::rad2deg(b.theta_init) << '\t' << b.base_kv
        << "\t1\t" << b.v_max << '\t' << b.v_min << ";\n";
  }
  out << "];\n\n";

  out << "%% generator data\n";
  out << "mpc.gen = [\n";
  for (const Generator& g : net.generators()) {
    out << '\t' << g.bus << '\t' << g.p_gen * base << '\t' << g.q_gen * base << '\t'
        << g.q_max * base << '\t' << g.q_min * base << '\t' << g.v_setpoint << '\t' << base
        << '\t' << (g.status ? 1 : 0) << "\t0\t0;\n";
  }
  out << "];\n\n";

  out << "%% branch data\n";
  out << "mpc.branch = [\n";
  for (const Branch& br : net.branches()) {
    out << '\t' << br.from_bus << '\t' << br.to_bus << '\t' << br.r << '\t' << br.x << '\t'
        << br.b_charging << "\t0\t0\t0\t" << (br.tap == 1.0 ? 0.0 : br.tap) << '\t'
        << detail::rad2deg(br.shift) << '\t' << (br.status ? 1 : 0) << "\t-360\t360;\n";
  }
  out << "];\n";
  return out.str();
}

// Buses with no in-service generator and zero demand, minus `exclude`.
inline std::set<int> zero_injection_buses(const Network& net,
                                          const std::set<int>& exclude = {}) {
  std::set<int> result;
  for (std::size_t i = 0; i < net.bus_count(); ++i) {
    const Bus& b = net.buses()[i];
    if (net.has_generator(i)) continue;
    if (b.p_demand != 0.0 || b.q_demand != 0.0) continue;
    if (exclude.count(b.id)) continue;
    result.insert(b.id);
  }
  return result;
}

}  // namespace sfdi
