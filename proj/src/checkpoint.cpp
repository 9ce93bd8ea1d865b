#include "stegsense/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>

#include "stegsense/errors.hpp"

namespace stegsense {

namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

constexpr char kMagic[8] = {'S', 'T', 'E', 'G', 'S', 'N', 'S', 'E'};

class Writer {
 public:
  template <typename T>
  void pod(T v) {
    out_.append(reinterpret_cast<const char*>(&v), sizeof v);
  }
  void text(const std::string& s) {
    pod<std::uint64_t>(s.size());
    out_ += s;
  }
  void tensor(const std::string& name, const Shape& shape, std::span<const double> data) {
    pod<std::uint32_t>(static_cast<std::uint32_t>(name.size()));
    out_ += name;
    pod<std::uint8_t>(0);
    pod<std::uint32_t>(static_cast<std::uint32_t>(shape.size()));
    for (std::size_t d : shape) pod<std::uint64_t>(d);
    out_.append(reinterpret_cast<const char*>(data.data()), data.size() * sizeof(double));
    ++records_;
  }
  void tensor(const std::string& name, const Tensor& t) { tensor(name, t.shape(), t.data()); }
  void vec(const std::string& name, const std::vector<double>& v) { tensor(name, {v.size()}, v); }
  void scalar(const std::string& name, double v) { tensor(name, {1}, std::span<const double>(&v, 1)); }
  void text_record(const std::string& name, const std::string& s) {
    pod<std::uint32_t>(static_cast<std::uint32_t>(name.size()));
    out_ += name;
    pod<std::uint8_t>(1);
    text(s);
    ++records_;
  }
  std::string& bytes() { return out_; }
  std::uint32_t records() const { return records_; }

 private:
  std::string out_;
  std::uint32_t records_ = 0;
};

class Reader {
 public:
  Reader(std::string_view b, const std::string& src) : b_(b), src_(src) {}
  [[noreturn]] void fail(const std::string& what) const {
    throw DataError(src_ + ": corrupt checkpoint (" + what + ") at byte offset " + std::to_string(pos_));
  }
  void need(std::size_t n) const {
    if (b_.size() - pos_ < n) fail("truncated");
  }
  template <typename T>
  T pod() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, b_.data() + pos_, sizeof v);
    pos_ += sizeof v;
    return v;
  }
  std::string raw(std::size_t n) {
    need(n);
    std::string s(b_.substr(pos_, n));
    pos_ += n;
    return s;
  }
  std::string text() { return raw(pod<std::uint64_t>()); }
  bool done() const { return pos_ == b_.size(); }

 private:
  std::string_view b_;
  const std::string& src_;
  std::size_t pos_ = 0;
};

struct Record {
  Shape shape;
  std::vector<double> values;
  std::string text;
  bool is_text = false;
};

void write_model(Writer& w, const std::string& prefix, const ModelState& m) {
  for (const auto& p : m.parameters()) w.tensor(prefix + p.name, p.tensor);
  for (const auto& b : m.buffers()) w.tensor(prefix + b.name, b.tensor);
  w.scalar(prefix + "bank.degenerate_resets", static_cast<double>(m.bank.degenerate_resets));
}

const Record& take(const std::map<std::string, Record>& recs, const std::string& name, const std::string& src) {
  const auto it = recs.find(name);
  if (it == recs.end()) throw DataError(src + ": checkpoint lacks record '" + name + "'");
  return it->second;
}

void fill(Tensor& t, const Record& r, const std::string& name, const std::string& src) {
  if (r.is_text || r.shape != t.shape()) {
    throw DataError(src + ": record '" + name + "' has shape " + shape_str(r.shape) + ", model expects " +
                    shape_str(t.shape()));
  }
  std::copy(r.values.begin(), r.values.end(), t.mutable_data().begin());
}

double scalar_of(const std::map<std::string, Record>& recs, const std::string& name, const std::string& src) {
  const Record& r = take(recs, name, src);
  if (r.is_text || r.values.size() != 1) throw DataError(src + ": record '" + name + "' is not a scalar");
  return r.values[0];
}

ModelState read_model(const std::map<std::string, Record>& recs, const std::string& prefix, const NetworkConfig& cfg,
                      const std::string& src) {
  ModelState m = init_model(cfg, 0);
  for (auto& p : m.parameters()) {
    Tensor t = p.tensor;
    fill(t, take(recs, prefix + p.name, src), prefix + p.name, src);
  }
  for (auto& b : m.buffers()) {
    Tensor t = b.tensor;
    fill(t, take(recs, prefix + b.name, src), prefix + b.name, src);
  }
  m.bank.degenerate_resets = static_cast<std::size_t>(scalar_of(recs, prefix + "bank.degenerate_resets", src));
  return m;
}

std::string join_lines(const std::vector<std::string>& rows) {
  std::string out;
  for (const auto& r : rows) out += r + "\n";
  return out;
}

std::vector<std::string> split_lines(const std::string& s) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start < s.size()) {
    const auto nl = s.find('\n', start);
    out.push_back(s.substr(start, nl - start));
    start = nl + 1;
  }
  return out;
}

}  // namespace

std::string encode_checkpoint(const std::string& config_echo, const ModelState& model, const TrainState* state) {
  Writer body;
  write_model(body, "model.", model);
  if (state) {
    const TrainState& s = *state;
    body.scalar("state.epoch", static_cast<double>(s.epoch));
    body.scalar("state.lr_scale", s.lr_scale);
    body.scalar("state.steps", static_cast<double>(s.steps));
    body.scalar("state.projections", static_cast<double>(s.projections));
    body.scalar("state.proj_resets", static_cast<double>(s.proj_resets));
    body.scalar("state.best_val_acc", s.best_val_acc);
    body.scalar("state.best_epoch", static_cast<double>(s.best_epoch));
    body.vec("state.train_acc_history", s.train_acc_history);
    body.text_record("state.metrics", join_lines(s.metrics_rows));
    for (std::size_t i = 0; i < s.names.size(); ++i) {
      body.vec("opt." + s.names[i] + ".eg", s.eg[i]);
      body.vec("opt." + s.names[i] + ".edx", s.edx[i]);
    }
    if (s.best) write_model(body, "best.", *s.best);
  }
  Writer head;
  head.bytes().append(kMagic, sizeof kMagic);
  head.pod<std::uint32_t>(kCheckpointVersion);
  head.text(config_echo);
  head.pod<std::uint32_t>(body.records());
  return head.bytes() + body.bytes();
}

Checkpoint decode_checkpoint(std::string_view bytes, const std::string& source) {
  Reader r(bytes, source);
  if (r.raw(sizeof kMagic) != std::string(kMagic, sizeof kMagic)) r.fail("bad magic");
  const auto version = r.pod<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw ConfigError(source + ": checkpoint version " + std::to_string(version) + ", this build reads " +
                      std::to_string(kCheckpointVersion));
  }
  Checkpoint ck;
  ck.config_echo = r.text();
  ck.config = parse_config(ck.config_echo, source + " (embedded config)");

  std::map<std::string, Record> recs;
  std::vector<std::string> order;
  const auto count = r.pod<std::uint32_t>();
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::string name = r.raw(r.pod<std::uint32_t>());
    Record rec;
    const auto kind = r.pod<std::uint8_t>();
    if (kind == 0) {
      const auto ndim = r.pod<std::uint32_t>();
      if (ndim > 8) r.fail("implausible rank");
      for (std::uint32_t d = 0; d < ndim; ++d) rec.shape.push_back(r.pod<std::uint64_t>());
      const std::size_t n = shape_numel(rec.shape);
      if (n > bytes.size() / sizeof(double)) r.fail("implausible size");
      const std::string raw = r.raw(n * sizeof(double));
      rec.values.resize(n);
      std::memcpy(rec.values.data(), raw.data(), raw.size());
    } else if (kind == 1) {
      rec.is_text = true;
      rec.text = r.text();
    } else {
      r.fail("unknown record kind");
    }
    if (!recs.emplace(name, std::move(rec)).second) r.fail("duplicate record '" + name + "'");
    order.push_back(name);
  }
  if (!r.done()) r.fail("trailing bytes");

  ck.model = read_model(recs, "model.", ck.config.net, source);
  if (recs.count("state.epoch")) {
    TrainState s = TrainState::fresh(ck.model, ck.config.optim);
    s.epoch = static_cast<std::size_t>(scalar_of(recs, "state.epoch", source));
    s.lr_scale = scalar_of(recs, "state.lr_scale", source);
    s.steps = static_cast<std::uint64_t>(scalar_of(recs, "state.steps", source));
    s.projections = static_cast<std::uint64_t>(scalar_of(recs, "state.projections", source));
    s.proj_resets = static_cast<std::uint64_t>(scalar_of(recs, "state.proj_resets", source));
    s.best_val_acc = scalar_of(recs, "state.best_val_acc", source);
    s.best_epoch = static_cast<std::size_t>(scalar_of(recs, "state.best_epoch", source));
    s.train_acc_history = take(recs, "state.train_acc_history", source).values;
    s.metrics_rows = split_lines(take(recs, "state.metrics", source).text);
    for (std::size_t i = 0; i < s.names.size(); ++i) {
      for (auto [suffix, slot] : {std::pair{".eg", &s.eg[i]}, std::pair{".edx", &s.edx[i]}}) {
        const std::string name = "opt." + s.names[i] + suffix;
        const Record& rec = take(recs, name, source);
        if (rec.values.size() != slot->size()) throw DataError(source + ": record '" + name + "' has the wrong size");
        *slot = rec.values;
      }
    }
    if (recs.count("best.fc.bias")) s.best = read_model(recs, "best.", ck.config.net, source);
    ck.state = std::move(s);
  }
  return ck;
}

void save_checkpoint(const std::string& path, const std::string& config_echo, const ModelState& model,
                     const TrainState* state) {
  const std::string bytes = encode_checkpoint(config_echo, model, state);
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw DataError("cannot open '" + tmp + "' for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw DataError("write to '" + tmp + "' failed");
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) throw DataError("cannot move '" + tmp + "' to '" + path + "'");
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint '" + path + "'");
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes, path);
}

void require_compatible(const Checkpoint& ckpt, const RunConfig& cfg) {
  const std::string stored = network_echo_of(ckpt.config_echo);
  const std::string wanted = network_echo(cfg);
  if (stored != wanted) {
    throw ConfigError("checkpoint network does not match the config.\n--- checkpoint ---\n" + stored +
                      "--- config ---\n" + wanted);
  }
}

}  // namespace stegsense
