#include "pacdiff/data_io.hpp"

#include <bit>
#include <charconv>
#include <fstream>
#include <iomanip>
#include <istream>
#include <sstream>

namespace pacdiff {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split(std::string_view line, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(sep, start);
    out.push_back(trim(line.substr(start, pos == std::string_view::npos ? pos : pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

bool parse_number(const std::string& s, double& out) {
  if (s.empty()) return false;
  const char* b = s.data();
  const char* e = s.data() + s.size();
  if (*b == '+') ++b;
  auto res = std::from_chars(b, e, out);
  return res.ec == std::errc() && res.ptr == e;
}

// ---- binary helpers -------------------------------------------------------

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(char((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(char((v >> (8 * i)) & 0xff));
}

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  std::uint64_t uint(int width) {
    need(std::size_t(width));
    std::uint64_t v = 0;
    for (int i = 0; i < width; ++i)
      v |= std::uint64_t(std::uint8_t(bytes_[pos_ + i])) << (8 * i);
    pos_ += std::size_t(width);
    return v;
  }
  std::string_view take(std::uint64_t n) {
    need(n);
    auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == bytes_.size(); }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  void need(std::uint64_t n) const {
    if (n > bytes_.size() - pos_) throw IntegrityError("checkpoint truncated or section length corrupted");
  }
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

constexpr std::string_view kMagic{"PACDIFF\x01", 8};

std::string tensor_payload(const Tensor& t) {
  std::string out;
  put_u64(out, std::uint64_t(t.rows()));
  put_u64(out, std::uint64_t(t.cols()));
  for (Eigen::Index r = 0; r < t.rows(); ++r)
    for (Eigen::Index c = 0; c < t.cols(); ++c) put_u64(out, std::bit_cast<std::uint64_t>(t(r, c)));
  return out;
}

Tensor parse_tensor(std::string_view payload, const std::string& name) {
  Reader r(payload);
  const auto rows = r.uint(8);
  const auto cols = r.uint(8);
  if (rows > (1u << 28) || cols > (1u << 28) || r.remaining() != rows * cols * 8)
    throw IntegrityError("tensor section '" + name + "' has inconsistent size");
  Tensor t(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  for (Eigen::Index i = 0; i < t.rows(); ++i)
    for (Eigen::Index j = 0; j < t.cols(); ++j) t(i, j) = std::bit_cast<double>(r.uint(8));
  return t;
}

using Meta = std::map<std::string, std::string, std::less<>>;

std::string meta_payload(const Meta& meta) {
  std::string out;
  for (const auto& [k, v] : meta) out += k + "=" + v + "\n";
  return out;
}

Meta parse_meta(std::string_view payload) {
  Meta meta;
  std::istringstream in{std::string(payload)};
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw IntegrityError("malformed checkpoint metadata line");
    meta[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return meta;
}

const std::string& meta_get(const Meta& m, std::string_view key) {
  auto it = m.find(key);
  if (it == m.end()) throw IntegrityError("checkpoint metadata lacks '" + std::string(key) + "'");
  return it->second;
}

double meta_double(const Meta& m, std::string_view key) {
  double v = 0.0;
  if (!parse_number(meta_get(m, key), v))
    throw IntegrityError("checkpoint metadata '" + std::string(key) + "' is not a number");
  return v;
}

std::int64_t meta_int(const Meta& m, std::string_view key) {
  const std::string& s = meta_get(m, key);
  std::int64_t v = 0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size())
    throw IntegrityError("checkpoint metadata '" + std::string(key) + "' is not an integer");
  return v;
}

std::uint64_t meta_u64(const Meta& m, std::string_view key) {
  const std::string& s = meta_get(m, key);
  std::uint64_t v = 0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size())
    throw IntegrityError("checkpoint metadata '" + std::string(key) + "' is not an integer");
  return v;
}

std::string join_ints(const std::vector<int>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
  return out;
}

std::vector<int> split_ints(const std::string& s) {
  std::vector<int> out;
  if (s.empty()) return out;
  for (const std::string& part : split(s, ',')) {
    int v = 0;
    auto res = std::from_chars(part.data(), part.data() + part.size(), v);
    if (res.ec != std::errc()) throw IntegrityError("malformed integer list in checkpoint");
    out.push_back(v);
  }
  return out;
}

}  // namespace

std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

// ---------------------------------------------------------------------------

double benchmark_normalize(double y, double y_min, double y_max) {
  if (!(y_max > y_min)) throw DomainError("benchmark_normalize needs y_max > y_min");
  return (y - y_min) / (y_max - y_min);
}

OfflineDataset make_dataset(Tensor x_raw, Vector y_raw, const NormalizationOptions& options) {
  if (x_raw.rows() < 1) throw ContractError("dataset needs at least one row");
  if (y_raw.size() != x_raw.rows()) throw ShapeError("dataset: designs and objectives differ in length");
  if (!(options.feature_margin >= 0.0)) throw DomainError("feature margin must be >= 0");
  OfflineDataset d;
  d.meta.feature_margin = options.feature_margin;
  const Eigen::Index dim = x_raw.cols();
  d.meta.x_lo.resize(dim);
  d.meta.x_hi.resize(dim);
  for (Eigen::Index c = 0; c < dim; ++c) {
    const double lo = x_raw.col(c).minCoeff();
    const double hi = x_raw.col(c).maxCoeff();
    const double pad = options.feature_margin * (hi - lo);
    d.meta.x_lo(c) = lo - pad;
    d.meta.x_hi(c) = hi + pad;
    if (hi == lo) d.warnings.push_back("feature x" + std::to_string(c + 1) + " is constant; normalized to 0");
  }
  d.meta.y_min = y_raw.minCoeff();
  d.meta.y_max = y_raw.maxCoeff();
  if (d.meta.y_max == d.meta.y_min)
    d.warnings.push_back("objective values are all equal; normalized to 0");
  d.x_norm = normalize_features(d.meta, x_raw);
  d.y_train = normalize_objective(d.meta, y_raw);
  d.x_raw = std::move(x_raw);
  d.y_raw = std::move(y_raw);
  return d;
}

Tensor normalize_features(const NormalizationMeta& meta, const Tensor& raw) {
  if (raw.cols() != meta.dim()) throw ContractError("feature count differs from normalization metadata");
  Tensor out(raw.rows(), raw.cols());
  for (Eigen::Index c = 0; c < raw.cols(); ++c) {
    const double span = meta.x_hi(c) - meta.x_lo(c);
    if (span == 0.0) {
      out.col(c).setZero();
    } else {
      out.col(c) = (2.0 * (raw.col(c).array() - meta.x_lo(c)) / span - 1.0).matrix();
    }
  }
  return out;
}

Tensor denormalize_features(const NormalizationMeta& meta, const Tensor& normalized) {
  if (normalized.cols() != meta.dim())
    throw ContractError("design dimension " + std::to_string(normalized.cols()) +
                        " differs from normalization metadata (" + std::to_string(meta.dim()) + ")");
  Tensor out(normalized.rows(), normalized.cols());
  for (Eigen::Index c = 0; c < normalized.cols(); ++c) {
    const double span = meta.x_hi(c) - meta.x_lo(c);
    out.col(c) = (meta.x_lo(c) + (normalized.col(c).array() + 1.0) * 0.5 * span).matrix();
  }
  return out;
}

Vector normalize_objective(const NormalizationMeta& meta, const Vector& y_raw) {
  if (meta.y_max == meta.y_min) return Vector::Zero(y_raw.size());
  return ((y_raw.array() - meta.y_min) / (meta.y_max - meta.y_min)).matrix();
}

CsvTable parse_csv(std::istream& in, const std::string& source) {
  CsvTable table;
  std::string line;
  int line_no = 0;
  std::vector<std::vector<double>> rows;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string t = trim(line);
    if (t.empty()) continue;
    if (t[0] == '#') {
      table.comments.push_back(t);
      continue;
    }
    auto cells = split(t, ',');
    if (table.header.empty()) {
      double probe = 0.0;
      if (parse_number(cells[0], probe))
        throw ParseError(source + ":" + std::to_string(line_no) + ": missing header row");
      table.header = std::move(cells);
      continue;
    }
    if (cells.size() != table.header.size())
      throw ParseError(source + ":" + std::to_string(line_no) + ": expected " +
                       std::to_string(table.header.size()) + " cells, found " +
                       std::to_string(cells.size()));
    std::vector<double> row(cells.size());
    for (std::size_t c = 0; c < cells.size(); ++c) {
      if (!parse_number(cells[c], row[c]))
        throw ParseError(source + ":" + std::to_string(line_no) + ": non-numeric cell '" +
                         cells[c] + "'");
    }
    rows.push_back(std::move(row));
  }
  if (table.header.empty()) throw ParseError(source + ": missing header row");
  table.rows.resize(Eigen::Index(rows.size()), Eigen::Index(table.header.size()));
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (std::size_t c = 0; c < rows[r].size(); ++c) table.rows(Eigen::Index(r), Eigen::Index(c)) = rows[r][c];
  return table;
}

CsvTable read_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  return parse_csv(in, path.string());
}

OfflineDataset parse_dataset(std::istream& in, const NormalizationOptions& options,
                             const std::string& source) {
  CsvTable t = parse_csv(in, source);
  const std::size_t d = t.header.size() - 1;
  bool ok = t.header.size() >= 2 && t.header.back() == "y";
  for (std::size_t c = 0; ok && c < d; ++c) ok = t.header[c] == "x" + std::to_string(c + 1);
  if (!ok) throw ParseError(source + ":1: header must be x1,...,xd,y");
  if (t.rows.rows() < 1) throw ParseError(source + ": no data rows");
  Tensor x = t.rows.leftCols(Eigen::Index(d));
  Vector y = t.rows.col(Eigen::Index(d));
  return make_dataset(std::move(x), std::move(y), options);
}

OfflineDataset load_dataset(const std::filesystem::path& path, const NormalizationOptions& options) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open dataset '" + path.string() + "'");
  return parse_dataset(in, options, path.string());
}

std::string dataset_csv(const Tensor& x, const Vector& y) {
  std::string out;
  for (Eigen::Index c = 0; c < x.cols(); ++c) out += "x" + std::to_string(c + 1) + ",";
  out += "y\n";
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    for (Eigen::Index c = 0; c < x.cols(); ++c) out += format_double(x(r, c)) + ",";
    out += format_double(y(r)) + "\n";
  }
  return out;
}

void write_text(const std::filesystem::path& path, std::string_view text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out.write(text.data(), std::streamsize(text.size()));
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

std::string read_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// ---------------------------------------------------------------------------

std::uint64_t fnv1a(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : bytes) {
    h ^= std::uint8_t(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

Checkpoint make_checkpoint(const TrainState& state, const NormalizationMeta& normalization) {
  Checkpoint c;
  c.schedule = state.config.schedule;
  c.weights = state.config.weights;
  c.phi = ParamStore(state.phi.values());
  c.theta = state.theta;
  c.theta.params = ParamStore(state.theta.params.values());
  c.hyper = state.config.hyper;
  c.normalization = normalization;
  c.seed = state.config.hyper.seed;
  return c;
}

std::string serialize_checkpoint(const Checkpoint& ck) {
  Meta m;
  const auto& sa = ck.theta.arch;
  const auto& h = ck.hyper;
  m["schedule.beta_min"] = format_double(ck.schedule.beta_min);
  m["schedule.beta_max"] = format_double(ck.schedule.beta_max);
  m["schedule.t_min"] = format_double(ck.schedule.t_min);
  m["score.dim"] = std::to_string(sa.dim);
  m["score.hidden"] = std::to_string(sa.hidden);
  m["score.blocks"] = std::to_string(sa.blocks);
  m["score.embed_dim"] = std::to_string(sa.embed_dim);
  m["score.norm"] = sa.norm == NormKind::Batch ? "batch" : "layer";
  m["score.scale_by_sigma"] = sa.scale_by_sigma ? "1" : "0";
  m["score.norm_eps"] = format_double(sa.norm_eps);
  m["score.momentum"] = format_double(sa.momentum);
  m["weight.kind"] = ck.weights.is_trainable() ? "trainable" : "exponential";
  m["weight.hidden"] = join_ints(ck.weights.arch.hidden);
  m["weight.psi"] = format_double(ck.weights.psi);
  m["hyper.alpha"] = format_double(h.alpha);
  m["hyper.lambda"] = format_double(h.lambda);
  m["hyper.eta1"] = format_double(h.eta1);
  m["hyper.eta2"] = format_double(h.eta2);
  m["hyper.K"] = std::to_string(h.K);
  m["hyper.init_weight_steps"] = std::to_string(h.init_weight_steps);
  m["hyper.init_weight_lr"] = format_double(h.init_weight_lr);
  m["hyper.init_score_epochs"] = std::to_string(h.init_score_epochs);
  m["hyper.score_lr_start"] = format_double(h.score_lr_start);
  m["hyper.score_lr_end"] = format_double(h.score_lr_end);
  m["hyper.batch_size"] = std::to_string(h.batch_size);
  m["hyper.alternate_theta_steps"] = std::to_string(h.alternate_theta_steps);
  m["hyper.n_time_samples"] = std::to_string(h.dsm.n_time_samples);
  m["hyper.clip_norm"] = h.clip_norm ? format_double(*h.clip_norm) : "none";
  m["hyper.seed"] = std::to_string(h.seed);
  m["norm.y_min"] = format_double(ck.normalization.y_min);
  m["norm.y_max"] = format_double(ck.normalization.y_max);
  m["norm.feature_margin"] = format_double(ck.normalization.feature_margin);
  m["lineage.seed"] = std::to_string(ck.seed);
  m["lineage.phi_seed"] = std::to_string(derive_seed(ck.seed, 1));
  m["lineage.theta_seed"] = std::to_string(derive_seed(ck.seed, 2));
  m["lineage.train_stream_seed"] = std::to_string(derive_seed(ck.seed, 3));

  std::vector<std::pair<std::string, std::string>> sections;
  sections.emplace_back("meta", meta_payload(m));
  sections.emplace_back("norm:x_lo", tensor_payload(ck.normalization.x_lo));
  sections.emplace_back("norm:x_hi", tensor_payload(ck.normalization.x_hi));
  for (const auto& [name, t] : ck.phi.values()) sections.emplace_back("param:" + name, tensor_payload(t));
  for (const auto& [name, t] : ck.theta.params.values())
    sections.emplace_back("param:" + name, tensor_payload(t));
  for (const auto& [name, t] : ck.theta.running) sections.emplace_back("running:" + name, tensor_payload(t));

  std::string out(kMagic);
  put_u32(out, ck.version);
  put_u32(out, std::uint32_t(sections.size()));
  for (const auto& [name, payload] : sections) {
    put_u32(out, std::uint32_t(name.size()));
    out += name;
    put_u64(out, payload.size());
    out += payload;
  }
  put_u64(out, fnv1a(out));
  return out;
}

Checkpoint deserialize_checkpoint(std::string_view bytes) {
  if (bytes.size() < kMagic.size() + 4 || bytes.substr(0, kMagic.size()) != kMagic)
    throw IntegrityError("not a checkpoint file (bad magic)");
  Reader head(bytes.substr(kMagic.size()));
  const auto version = std::uint32_t(head.uint(4));
  if (version != kCheckpointVersion)
    throw VersionError("checkpoint format version " + std::to_string(version) +
                       " is incompatible with supported version " +
                       std::to_string(kCheckpointVersion));
  if (bytes.size() < kMagic.size() + 16) throw IntegrityError("checkpoint truncated");
  const std::string_view body = bytes.substr(0, bytes.size() - 8);
  Reader tail(bytes.substr(bytes.size() - 8));
  if (tail.uint(8) != fnv1a(body)) throw IntegrityError("checkpoint checksum mismatch (truncated or corrupted)");

  Reader r(body.substr(kMagic.size() + 4));
  const auto count = r.uint(4);
  Meta meta;
  bool have_meta = false;
  TensorMap params, running, norm;
  for (std::uint64_t s = 0; s < count; ++s) {
    const auto name_len = r.uint(4);
    const std::string name(r.take(name_len));
    const auto payload_len = r.uint(8);
    const std::string_view payload = r.take(payload_len);
    if (name == "meta") {
      meta = parse_meta(payload);
      have_meta = true;
    } else if (name.rfind("param:", 0) == 0) {
      params.emplace(name.substr(6), parse_tensor(payload, name));
    } else if (name.rfind("running:", 0) == 0) {
      running.emplace(name.substr(8), parse_tensor(payload, name));
    } else if (name.rfind("norm:", 0) == 0) {
      norm.emplace(name.substr(5), parse_tensor(payload, name));
    } else {
      throw IntegrityError("unknown checkpoint section '" + name + "'");
    }
  }
  if (!r.done()) throw IntegrityError("trailing bytes after checkpoint sections");
  if (!have_meta) throw IntegrityError("checkpoint has no metadata section");

  Checkpoint ck;
  ck.version = version;
  ck.schedule = {meta_double(meta, "schedule.beta_min"), meta_double(meta, "schedule.beta_max"),
                 meta_double(meta, "schedule.t_min")};
  ScoreNetArch sa;
  sa.dim = int(meta_int(meta, "score.dim"));
  sa.hidden = int(meta_int(meta, "score.hidden"));
  sa.blocks = int(meta_int(meta, "score.blocks"));
  sa.embed_dim = int(meta_int(meta, "score.embed_dim"));
  sa.norm = meta_get(meta, "score.norm") == "batch" ? NormKind::Batch : NormKind::Layer;
  sa.scale_by_sigma = meta_get(meta, "score.scale_by_sigma") == "1";
  sa.norm_eps = meta_double(meta, "score.norm_eps");
  sa.momentum = meta_double(meta, "score.momentum");

  if (meta_get(meta, "weight.kind") == "trainable") {
    ck.weights = WeightModel::trainable({split_ints(meta_get(meta, "weight.hidden"))});
  } else {
    ck.weights = WeightModel::exponential(meta_double(meta, "weight.psi"));
    ck.weights.arch.hidden = split_ints(meta_get(meta, "weight.hidden"));
  }

  Hyperparams& h = ck.hyper;
  h.alpha = meta_double(meta, "hyper.alpha");
  h.lambda = meta_double(meta, "hyper.lambda");
  h.eta1 = meta_double(meta, "hyper.eta1");
  h.eta2 = meta_double(meta, "hyper.eta2");
  h.K = int(meta_int(meta, "hyper.K"));
  h.init_weight_steps = int(meta_int(meta, "hyper.init_weight_steps"));
  h.init_weight_lr = meta_double(meta, "hyper.init_weight_lr");
  h.init_score_epochs = int(meta_int(meta, "hyper.init_score_epochs"));
  h.score_lr_start = meta_double(meta, "hyper.score_lr_start");
  h.score_lr_end = meta_double(meta, "hyper.score_lr_end");
  h.batch_size = int(meta_int(meta, "hyper.batch_size"));
  h.alternate_theta_steps = int(meta_int(meta, "hyper.alternate_theta_steps"));
  h.dsm.n_time_samples = int(meta_int(meta, "hyper.n_time_samples"));
  if (meta_get(meta, "hyper.clip_norm") != "none") h.clip_norm = meta_double(meta, "hyper.clip_norm");
  h.seed = meta_u64(meta, "hyper.seed");

  ck.normalization.y_min = meta_double(meta, "norm.y_min");
  ck.normalization.y_max = meta_double(meta, "norm.y_max");
  ck.normalization.feature_margin = meta_double(meta, "norm.feature_margin");
  if (!norm.count("x_lo") || !norm.count("x_hi")) throw IntegrityError("checkpoint lacks normalization box");
  ck.normalization.x_lo = norm.at("x_lo").col(0);
  ck.normalization.x_hi = norm.at("x_hi").col(0);
  ck.seed = meta_u64(meta, "lineage.seed");

  ck.theta.arch = sa;
  ck.theta.schedule = ck.schedule;
  ck.theta.running = std::move(running);
  for (auto& [name, t] : params) {
    if (name.rfind(kWeightPrefix, 0) == 0) {
      ck.phi.add(name, std::move(t));
    } else if (name.rfind(kScorePrefix, 0) == 0) {
      ck.theta.params.add(name, std::move(t));
    } else {
      throw IntegrityError("parameter '" + name + "' has no known owner");
    }
  }
  return ck;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  write_text(path, serialize_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return deserialize_checkpoint(read_bytes(path));
}

std::string checkpoint_id(const Checkpoint& ckpt) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << fnv1a(serialize_checkpoint(ckpt));
  return os.str();
}

// ---------------------------------------------------------------------------

std::string samples_csv(const SampleBatch& batch, const NormalizationMeta& meta) {
  const Tensor raw = denormalize_features(meta, batch.designs);
  std::string out = "# checkpoint=" + batch.checkpoint_id + " T=" + std::to_string(batch.steps) +
                    " seed=" + std::to_string(batch.seed) + " N=" + std::to_string(raw.rows()) + "\n";
  for (Eigen::Index c = 0; c < raw.cols(); ++c) out += (c ? ",x" : "x") + std::to_string(c + 1);
  out += "\n";
  for (Eigen::Index r = 0; r < raw.rows(); ++r) {
    for (Eigen::Index c = 0; c < raw.cols(); ++c) out += (c ? "," : "") + format_double(raw(r, c));
    out += "\n";
  }
  return out;
}

void export_samples(const SampleBatch& batch, const NormalizationMeta& meta,
                    const std::filesystem::path& path) {
  write_text(path, samples_csv(batch, meta));
}

}  // namespace pacdiff
