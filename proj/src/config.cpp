#include "stegsense/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <iterator>
#include <set>
#include <sstream>

#include "stegsense/errors.hpp"

namespace stegsense {

namespace {

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string_view> split_list(std::string_view s) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto comma = s.find(',', start);
    out.push_back(trim(s.substr(start, comma - start)));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

[[noreturn]] void bad_value(std::string_view key, std::string_view value, const char* expected) {
  throw ConfigError(std::string(key) + ": '" + std::string(value) + "' is not " + expected);
}

double parse_double(std::string_view key, std::string_view v) {
  double out = 0.0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size() || v.empty()) bad_value(key, v, "a number");
  return out;
}

std::uint64_t parse_uint(std::string_view key, std::string_view v) {
  std::uint64_t out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size() || v.empty()) bad_value(key, v, "a non-negative integer");
  return out;
}

bool parse_bool(std::string_view key, std::string_view v) {
  if (v == "1" || v == "true") return true;
  if (v == "0" || v == "false") return false;
  bad_value(key, v, "a boolean (0/1/true/false)");
}

template <typename T, typename F>
std::array<T, kNumBlocks> parse_blocks(std::string_view key, std::string_view v, F one) {
  const auto items = split_list(v);
  if (items.size() != kNumBlocks) {
    throw ConfigError(std::string(key) + ": expected " + std::to_string(kNumBlocks) +
                      " comma-separated values, got " + std::to_string(items.size()));
  }
  std::array<T, kNumBlocks> out{};
  for (std::size_t i = 0; i < kNumBlocks; ++i) out[i] = one(items[i]);
  return out;
}

template <typename T, typename F>
std::string join_blocks(const std::array<T, kNumBlocks>& a, F one) {
  std::string out;
  for (std::size_t i = 0; i < kNumBlocks; ++i) out += (i ? "," : "") + one(a[i]);
  return out;
}

struct Entry {
  std::string key;
  std::function<void(RunConfig&, std::string_view)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <typename M>
Entry number_entry(std::string key, M member) {
  return {key,
          [key, member](RunConfig& c, std::string_view v) { member(c) = parse_double(key, v); },
          [member](const RunConfig& c) { return format_double(member(const_cast<RunConfig&>(c))); }};
}

template <typename M>
Entry uint_entry(std::string key, M member) {
  return {key,
          [key, member](RunConfig& c, std::string_view v) {
            member(c) = static_cast<std::remove_reference_t<decltype(member(c))>>(parse_uint(key, v));
          },
          [member](const RunConfig& c) { return std::to_string(member(const_cast<RunConfig&>(c))); }};
}

template <typename M>
Entry string_entry(std::string key, M member) {
  return {key, [member](RunConfig& c, std::string_view v) { member(c) = std::string(v); },
          [member](const RunConfig& c) { return member(const_cast<RunConfig&>(c)); }};
}

template <typename M>
Entry bool_entry(std::string key, M member) {
  return {key, [key, member](RunConfig& c, std::string_view v) { member(c) = parse_bool(key, v); },
          [member](const RunConfig& c) { return std::string(member(const_cast<RunConfig&>(c)) ? "1" : "0"); }};
}

const std::vector<Entry>& entries() {
  static const std::vector<Entry> table = [] {
    std::vector<Entry> t;
    t.push_back({"net.block_channels",
                 [](RunConfig& c, std::string_view v) {
                   c.net.block_channels = parse_blocks<std::size_t>(
                       "net.block_channels", v, [](std::string_view s) {
                         return static_cast<std::size_t>(parse_uint("net.block_channels", s));
                       });
                 },
                 [](const RunConfig& c) {
                   return join_blocks(c.net.block_channels, [](std::size_t n) { return std::to_string(n); });
                 }});
    t.push_back(uint_entry("net.kernel_size", [](RunConfig& c) -> std::size_t& { return c.net.kernel_size; }));
    t.push_back({"net.pool_schedule",
                 [](RunConfig& c, std::string_view v) {
                   c.net.pool_schedule = parse_blocks<BlockPool>("net.pool_schedule", v, [](std::string_view s) {
                     if (s == "none") return BlockPool::kNone;
                     if (s == "avg") return BlockPool::kAvgStride2;
                     bad_value("net.pool_schedule", s, "none or avg");
                   });
                 },
                 [](const RunConfig& c) {
                   return join_blocks(c.net.pool_schedule, [](BlockPool p) { return std::string(block_pool_name(p)); });
                 }});
    t.push_back({"net.activation_schedule",
                 [](RunConfig& c, std::string_view v) {
                   c.net.activation_schedule =
                       parse_blocks<BlockActivation>("net.activation_schedule", v, [](std::string_view s) {
                         if (s == "apam") return BlockActivation::kApam;
                         if (s == "relu") return BlockActivation::kRelu;
                         bad_value("net.activation_schedule", s, "apam or relu");
                       });
                 },
                 [](const RunConfig& c) {
                   return join_blocks(c.net.activation_schedule,
                                      [](BlockActivation a) { return std::string(block_activation_name(a)); });
                 }});
    t.push_back(number_entry("net.tlu_T", [](RunConfig& c) -> double& { return c.net.tlu_T; }));
    t.push_back(bool_entry("net.batch_norm", [](RunConfig& c) -> bool& { return c.net.use_batch_norm; }));
    t.push_back(number_entry("net.bn_momentum", [](RunConfig& c) -> double& { return c.net.bn_momentum; }));
    t.push_back(number_entry("net.bn_eps", [](RunConfig& c) -> double& { return c.net.bn_eps; }));
    t.push_back({"net.constraint",
                 [](RunConfig& c, std::string_view v) { c.net.constraint = parse_constraint_mode(v); },
                 [](const RunConfig& c) { return std::string(constraint_mode_name(c.net.constraint)); }});

    t.push_back(number_entry("loss.margin", [](RunConfig& c) -> double& { return c.loss.margin; }));
    t.push_back(number_entry("loss.lambda", [](RunConfig& c) -> double& { return c.loss.lambda; }));

    t.push_back(number_entry("optim.rho", [](RunConfig& c) -> double& { return c.optim.rho; }));
    t.push_back(number_entry("optim.eps", [](RunConfig& c) -> double& { return c.optim.eps; }));
    t.push_back(number_entry("optim.weight_decay", [](RunConfig& c) -> double& { return c.optim.weight_decay; }));
    t.push_back(number_entry("optim.lr_scale", [](RunConfig& c) -> double& { return c.optim.lr_scale; }));
    t.push_back(uint_entry("optim.step_epochs", [](RunConfig& c) -> std::size_t& { return c.optim.step_epochs; }));
    t.push_back(number_entry("optim.step_factor", [](RunConfig& c) -> double& { return c.optim.step_factor; }));
    t.push_back(uint_entry("optim.epochs", [](RunConfig& c) -> std::size_t& { return c.optim.epochs; }));
    t.push_back(uint_entry("optim.pairs_per_batch", [](RunConfig& c) -> std::size_t& { return c.optim.pairs_per_batch; }));
    t.push_back(uint_entry("optim.patience", [](RunConfig& c) -> std::size_t& { return c.optim.patience; }));
    t.push_back(number_entry("optim.plateau_tolerance", [](RunConfig& c) -> double& { return c.optim.plateau_tolerance; }));

    t.push_back(string_entry("data.cover_dir", [](RunConfig& c) -> std::string& { return c.data.cover_dir; }));
    t.push_back(string_entry("data.stego_dir", [](RunConfig& c) -> std::string& { return c.data.stego_dir; }));
    t.push_back(string_entry("data.manifest", [](RunConfig& c) -> std::string& { return c.data.manifest; }));
    t.push_back(number_entry("data.payload", [](RunConfig& c) -> double& { return c.data.payload; }));
    t.push_back({"data.ratios",
                 [](RunConfig& c, std::string_view v) {
                   const auto items = split_list(v);
                   if (items.size() != 3) throw ConfigError("data.ratios: expected train,val,test");
                   c.data.ratios = {parse_double("data.ratios", items[0]), parse_double("data.ratios", items[1]),
                                    parse_double("data.ratios", items[2])};
                 },
                 [](const RunConfig& c) {
                   return format_double(c.data.ratios.train) + "," + format_double(c.data.ratios.val) + "," +
                          format_double(c.data.ratios.test);
                 }});
    t.push_back(uint_entry("data.seed", [](RunConfig& c) -> std::uint64_t& { return c.data.seed; }));

    t.push_back(uint_entry("run.seed", [](RunConfig& c) -> std::uint64_t& { return c.optim.seed; }));
    t.push_back(string_entry("run.out_dir", [](RunConfig& c) -> std::string& { return c.out_dir; }));
    t.push_back(bool_entry("run.deterministic", [](RunConfig& c) -> bool& { return c.deterministic; }));
    t.push_back(string_entry("run.init_checkpoint", [](RunConfig& c) -> std::string& { return c.init_checkpoint; }));
    return t;
  }();
  return table;
}

}  // namespace

std::string format_double(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys = [] {
    std::vector<std::string> k;
    for (const auto& e : entries()) k.push_back(e.key);
    return k;
  }();
  return keys;
}

void set_config_value(RunConfig& cfg, std::string_view key, std::string_view value) {
  for (const auto& e : entries()) {
    if (e.key == key) {
      e.set(cfg, value);
      return;
    }
  }
  throw ConfigError("unknown config key '" + std::string(key) + "'");
}

void validate(const RunConfig& cfg) {
  cfg.net.validate();
  cfg.optim.validate();
  if (!(cfg.loss.margin > 0.0)) throw ConfigError("loss.margin must be positive");
  if (!(cfg.loss.lambda >= 0.0)) throw ConfigError("loss.lambda must be non-negative");
  if (!(cfg.data.payload > 0.0 && cfg.data.payload <= 1.0)) throw ConfigError("data.payload must be in (0,1]");
}

RunConfig parse_config(std::string_view text, const std::string& source) {
  RunConfig cfg;
  std::set<std::string, std::less<>> seen;
  std::size_t lineno = 0;
  std::size_t start = 0;
  while (start <= text.size()) {
    const auto nl = text.find('\n', start);
    const std::string_view raw = text.substr(start, nl == std::string_view::npos ? std::string_view::npos : nl - start);
    start = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
    ++lineno;
    const std::string_view line = trim(raw);
    if (line.empty() || line.front() == '#') continue;
    const auto eq = line.find('=');
    const std::string where = source + ":" + std::to_string(lineno) + ": ";
    if (eq == std::string_view::npos) throw ConfigError(where + "expected key=value");
    const std::string_view key = trim(line.substr(0, eq));
    const std::string_view value = trim(line.substr(eq + 1));
    if (!seen.insert(std::string(key)).second) throw ConfigError(where + "duplicate key '" + std::string(key) + "'");
    try {
      set_config_value(cfg, key, value);
    } catch (const ConfigError& e) {
      throw ConfigError(where + e.what());
    }
  }
  try {
    validate(cfg);
  } catch (const ConfigError& e) {
    throw ConfigError(source + ": " + e.what());
  }
  return cfg;
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config '" + path + "'");
  const std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_config(text, path);
}

std::string echo_config(const RunConfig& cfg) {
  std::string out;
  for (const auto& e : entries()) out += e.key + "=" + e.get(cfg) + "\n";
  return out;
}

std::string network_echo_of(std::string_view full_echo) {
  std::string out;
  std::istringstream in{std::string(full_echo)};
  std::string line;
  while (std::getline(in, line)) {
    if (line.rfind("net.", 0) == 0) out += line + "\n";
  }
  return out;
}

std::string network_echo(const RunConfig& cfg) { return network_echo_of(echo_config(cfg)); }

}  // namespace stegsense
