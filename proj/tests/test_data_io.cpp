#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "pacdiff/data_io.hpp"
#include "pacdiff/toybench.hpp"

using namespace pacdiff;
namespace fs = std::filesystem;

namespace {

OfflineDataset parse(const std::string& text, NormalizationOptions o = {}) {
  std::istringstream in(text);
  return parse_dataset(in, o, "mem.csv");
}

std::string parse_error(const std::string& text) {
  try {
    parse(text);
  } catch (const ParseError& e) {
    return e.what();
  }
  return "";
}

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "pacdiff_test_data_io";
  fs::create_directories(dir);
  return dir / name;
}

// A small trained state whose checkpoint exercises every section kind.
const TrainState& trained() {
  static const TrainState s = [] {
    TrainConfig c;
    c.hyper.seed = 31;
    c.hyper.init_weight_steps = 5;
    c.hyper.init_score_epochs = 2;
    c.hyper.K = 1;
    c.hyper.batch_size = 32;
    c.score_arch.hidden = 16;
    c.score_arch.blocks = 2;
    c.score_arch.embed_dim = 8;
    c.weights = WeightModel::trainable({{8, 8, 8}});
    const OfflineDataset d = sample_pdata(ToySpec{}, 60, 2);
    return train(c, d.x_norm, d.y_train);
  }();
  return s;
}

NormalizationMeta toy_meta() { return sample_pdata(ToySpec{}, 60, 2).meta; }

void put_u32(std::string& bytes, std::size_t at, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) bytes[at + i] = char((v >> (8 * i)) & 0xff);
}

void reseal(std::string& bytes) {
  const std::string_view body(bytes.data(), bytes.size() - 8);
  const std::uint64_t h = fnv1a(body);
  for (int i = 0; i < 8; ++i) bytes[bytes.size() - 8 + i] = char((h >> (8 * i)) & 0xff);
}

}  // namespace

TEST_CASE("dataset parsing and normalization") {
  SUBCASE("objective min-max endpoints") {
    const OfflineDataset d = parse("x1,y\n1,0\n2,10\n");
    CHECK(d.y_train(0) == 0.0);
    CHECK(d.y_train(1) == 1.0);
    CHECK(d.meta.y_min == 0.0);
    CHECK(d.meta.y_max == 10.0);
    CHECK(d.warnings.empty());
  }
  SUBCASE("single row degenerates to zero with a warning") {
    const OfflineDataset d = parse("x1,x2,y\n0.5,1.5,3\n");
    CHECK(d.y_train(0) == 0.0);
    CHECK(d.x_norm.cwiseAbs().maxCoeff() == 0.0);
    CHECK_FALSE(d.warnings.empty());
  }
  SUBCASE("symmetric feature maps its midpoint to zero") {
    NormalizationOptions o;
    o.feature_margin = 0.0;
    const OfflineDataset d = parse("x1,y\n-4,1\n0,2\n4,3\n", o);
    CHECK(d.x_norm(0, 0) == -1.0);
    CHECK(d.x_norm(1, 0) == 0.0);
    CHECK(d.x_norm(2, 0) == 1.0);
  }
  SUBCASE("default margin shrinks the data box") {
    const OfflineDataset d = parse("x1,y\n-4,1\n4,3\n");
    CHECK(d.x_norm(1, 0) == doctest::Approx(1.0 / 1.1));
    CHECK(d.meta.x_hi(0) == doctest::Approx(4.4));
  }
  SUBCASE("constant feature") {
    const OfflineDataset d = parse("x1,x2,y\n1,7,0\n2,7,1\n");
    CHECK(d.x_norm.col(1).cwiseAbs().maxCoeff() == 0.0);
    REQUIRE(d.warnings.size() == 1);
    CHECK(d.warnings[0].find("x2") != std::string::npos);
  }
  SUBCASE("comments and blank lines are skipped") {
    const OfflineDataset d = parse("# made by hand\nx1,y\n\n1, 2\n # note\n3,4\n");
    CHECK(d.size() == 2);
    CHECK(d.x_raw(1, 0) == 3.0);
  }
}

TEST_CASE("parse errors carry line numbers") {
  CHECK(parse_error("1,2\n3,4\n").find("mem.csv:1:") != std::string::npos);
  CHECK(parse_error("1,2\n3,4\n").find("header") != std::string::npos);
  CHECK(parse_error("x1,y\n1,2\n3\n").find("mem.csv:3:") != std::string::npos);
  CHECK(parse_error("x1,y\n1,2\n\n3,abc\n").find("mem.csv:4:") != std::string::npos);
  CHECK(parse_error("x1,y\n1,2\n\n3,abc\n").find("abc") != std::string::npos);
  CHECK(parse_error("a,b\n1,2\n").find("x1") != std::string::npos);
  CHECK_FALSE(parse_error("x1,y\n").empty());
}

TEST_CASE("normalize and de-normalize are inverse maps") {
  Rng rng(4);
  const Tensor raw = (standard_normal(200, 5, rng).array() * 30.0 + 7.0).matrix();
  const OfflineDataset d = make_dataset(raw, standard_normal(200, 1, rng));
  CHECK((denormalize_features(d.meta, d.x_norm) - raw).cwiseAbs().maxCoeff() < 1e-9);
  const Tensor z = standard_normal(50, 5, rng);
  CHECK((normalize_features(d.meta, denormalize_features(d.meta, z)) - z).cwiseAbs().maxCoeff() < 1e-9);
  CHECK_THROWS_AS(denormalize_features(d.meta, Tensor::Zero(3, 4)), ContractError);
}

TEST_CASE("benchmark normalization") {
  struct Row {
    double best, lo, hi, expected;
  };
  const Row rows[] = {{74.0, 0.0, 185.0, 0.4},       {0.439, 0.0, 1.0, 0.439},
                      {165.326, -386.9, 590.2, 0.565}, {3.525, 1.283, 4.123, 0.789},
                      {7.123, 0.0, 12.0, 0.594},      {0.900, 0.155, 1.692, 0.485}};
  for (const Row& r : rows) {
    const double v = benchmark_normalize(r.best, r.lo, r.hi);
    CAPTURE(r.best);
    CHECK(std::round(v * 1000.0) / 1000.0 == doctest::Approx(r.expected).epsilon(1e-12));
  }
  CHECK(benchmark_normalize(-386.9, -386.9, 590.2) == 0.0);
  CHECK_THROWS_AS(benchmark_normalize(1.0, 2.0, 2.0), DomainError);
  CHECK_THROWS_AS(benchmark_normalize(1.0, 3.0, 2.0), DomainError);
}

TEST_CASE("checkpoint round trip") {
  const Checkpoint ckpt = make_checkpoint(trained(), toy_meta());
  const std::string bytes = serialize_checkpoint(ckpt);

  SUBCASE("parameters are bitwise equal after reload") {
    const Checkpoint back = deserialize_checkpoint(bytes);
    CHECK(back.phi == ckpt.phi);
    CHECK(back.theta.params == ckpt.theta.params);
    CHECK(back.theta.running == ckpt.theta.running);
    CHECK(back.normalization == ckpt.normalization);
    CHECK(back.weights.describe() == ckpt.weights.describe());
    CHECK(back.hyper.alpha == ckpt.hyper.alpha);
    CHECK(back.hyper.K == ckpt.hyper.K);
    CHECK(back.seed == 31);
    CHECK(serialize_checkpoint(back) == bytes);
  }
  SUBCASE("two saves are byte-identical") {
    const fs::path a = scratch("a.bin"), b = scratch("b.bin");
    save_checkpoint(ckpt, a);
    save_checkpoint(load_checkpoint(a), b);
    CHECK(read_bytes(a) == read_bytes(b));
    CHECK(checkpoint_id(ckpt) == checkpoint_id(load_checkpoint(b)));
    CHECK(checkpoint_id(ckpt).size() == 16);
  }
  SUBCASE("sampler output survives the round trip") {
    SamplerOptions o;
    o.n = 32;
    o.steps = 60;
    o.seed = 3;
    const fs::path p = scratch("s.bin");
    save_checkpoint(ckpt, p);
    const Checkpoint back = load_checkpoint(p);
    const Tensor before = sample(ckpt.theta, o).designs;
    const Tensor after = sample(back.theta, o).designs;
    REQUIRE(before.size() == after.size());
    CHECK(std::memcmp(before.data(), after.data(), sizeof(double) * std::size_t(before.size())) == 0);
  }
  SUBCASE("predefined weights round trip") {
    TrainState s = trained();
    s.config.weights = WeightModel::exponential(5.0);
    s.phi = ParamStore();
    const Checkpoint back = deserialize_checkpoint(serialize_checkpoint(make_checkpoint(s, toy_meta())));
    CHECK(back.weights.describe() == "exponential(ψ=5.0)");
    CHECK(back.phi.size() == 0);
  }
}

TEST_CASE("checkpoint integrity errors") {
  const std::string bytes = serialize_checkpoint(make_checkpoint(trained(), toy_meta()));

  SUBCASE("bad magic") {
    std::string b = bytes;
    b[0] = 'X';
    CHECK_THROWS_AS(deserialize_checkpoint(b), IntegrityError);
  }
  SUBCASE("version mismatch") {
    std::string b = bytes;
    put_u32(b, 8, kCheckpointVersion + 1);
    CHECK_THROWS_AS(deserialize_checkpoint(b), VersionError);
  }
  SUBCASE("truncation") {
    for (std::size_t keep : {std::size_t(4), std::size_t(20), bytes.size() / 2, bytes.size() - 1})
      CHECK_THROWS_AS(deserialize_checkpoint(std::string_view(bytes).substr(0, keep)), IntegrityError);
  }
  SUBCASE("corrupted section length") {
    // First section header sits after magic, version and count.
    const std::size_t name_len_at = 16;
    std::uint32_t name_len = 0;
    for (int i = 0; i < 4; ++i) name_len |= std::uint32_t(std::uint8_t(bytes[name_len_at + i])) << (8 * i);
    const std::size_t payload_len_at = name_len_at + 4 + name_len;
    std::string b = bytes;
    b[payload_len_at + 3] = char(0x7f);
    CHECK_THROWS_AS(deserialize_checkpoint(b), IntegrityError);
    // Even with a valid checksum the bounds check catches it.
    reseal(b);
    CHECK_THROWS_AS(deserialize_checkpoint(b), IntegrityError);
  }
  SUBCASE("flipped payload byte") {
    std::string b = bytes;
    b[b.size() / 2] ^= 0x01;
    CHECK_THROWS_AS(deserialize_checkpoint(b), IntegrityError);
  }
  SUBCASE("unreadable path") {
    CHECK_THROWS_AS(load_checkpoint(scratch("missing_dir") / "nope.bin"), IoError);
  }
}

TEST_CASE("sample export") {
  const NormalizationMeta meta = toy_meta();
  SUBCASE("zeros map to feature midpoints") {
    SampleBatch b;
    b.designs = Tensor::Zero(4, 2);
    b.checkpoint_id = "0123456789abcdef";
    b.steps = 10;
    b.seed = 1;
    const std::string csv = samples_csv(b, meta);
    CHECK(csv.rfind("# checkpoint=0123456789abcdef T=10 seed=1 N=4\nx1,x2\n", 0) == 0);
    std::istringstream in(csv);
    const CsvTable t = parse_csv(in);
    for (Eigen::Index c = 0; c < 2; ++c)
      CHECK(t.rows(0, c) == doctest::Approx(0.5 * (meta.x_lo(c) + meta.x_hi(c))).epsilon(1e-12));
  }
  SUBCASE("export then reload") {
    Rng rng(6);
    SampleBatch b;
    b.designs = standard_normal(128, 2, rng);
    const fs::path p = scratch("samples.csv");
    export_samples(b, meta, p);
    const CsvTable t = read_csv(p);
    CHECK(t.rows.rows() == 128);
    CHECK(t.header == std::vector<std::string>{"x1", "x2"});
    CHECK((normalize_features(meta, t.rows) - b.designs).cwiseAbs().maxCoeff() < 1e-9);
  }
  SUBCASE("dimension mismatch") {
    SampleBatch b;
    b.designs = Tensor::Zero(2, 3);
    CHECK_THROWS_AS(samples_csv(b, meta), ContractError);
  }
  SUBCASE("unwritable path") {
    SampleBatch b;
    b.designs = Tensor::Zero(1, 2);
    CHECK_THROWS_AS(export_samples(b, meta, scratch("missing_dir") / "x" / "s.csv"), IoError);
  }
}

TEST_CASE("dataset csv round trip") {
  const OfflineDataset d = sample_pdata(ToySpec{}, 25, 4);
  const fs::path p = scratch("toy.csv");
  write_text(p, dataset_csv(d.x_raw, d.y_raw));
  const OfflineDataset back = load_dataset(p);
  CHECK(back.x_raw == d.x_raw);
  CHECK(back.y_raw == d.y_raw);
  CHECK(back.meta == d.meta);
  CHECK_THROWS_AS(load_dataset(scratch("missing_dir") / "none.csv"), IoError);
}
