#include "pacdiff/cli.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "pacdiff/data_io.hpp"
#include "pacdiff/objective.hpp"
#include "pacdiff/sampler.hpp"
#include "pacdiff/toybench.hpp"
#include "pacdiff/training.hpp"

namespace pacdiff::cli {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

struct GenerateToyOptions {
  std::string out_dir = ".";
  int m = 300;
  std::uint64_t seed = 0;
};

struct TrainOptions {
  std::string dataset;
  std::string out_dir = ".";
  Hyperparams hyper;
  std::optional<double> predefined_weight;
  std::vector<int> weight_hidden{64, 64, 64};
  int score_hidden = 256;
  int score_blocks = 5;
  int embed_dim = 32;
  std::string norm = "batch";
  bool no_sigma_scale = false;
  double feature_margin = 0.05;
  bool dump_weight_grid = false;
  int bound_mc = 10000;
};

struct SampleOptions {
  std::string checkpoint;
  std::string out = "samples.csv";
  int n = 128;
  int steps = 1000;
  std::uint64_t seed = 0;
  std::optional<double> clamp;
};

struct EvaluateOptions {
  std::vector<std::string> samples;
  std::string mode = "toy-oracle";
  std::optional<double> y_min;
  std::optional<double> y_max;
  std::string out = "report.csv";
};

template <typename T>
ordered_json opt_json(const std::optional<T>& v) {
  return v ? ordered_json(*v) : ordered_json(nullptr);
}

ordered_json to_json(const GenerateToyOptions& o) {
  return {{"command", "generate-toy"}, {"out-dir", o.out_dir}, {"m", o.m}, {"seed", o.seed}};
}

ordered_json to_json(const TrainOptions& o) {
  const Hyperparams& h = o.hyper;
  return {{"command", "train"},
          {"dataset", o.dataset},
          {"out-dir", o.out_dir},
          {"alpha", h.alpha},
          {"lambda", h.lambda},
          {"eta1", h.eta1},
          {"eta2", h.eta2},
          {"rounds", h.K},
          {"init-weight-steps", h.init_weight_steps},
          {"init-weight-lr", h.init_weight_lr},
          {"init-score-epochs", h.init_score_epochs},
          {"score-lr-start", h.score_lr_start},
          {"score-lr-end", h.score_lr_end},
          {"batch-size", h.batch_size},
          {"alternate-theta-steps", h.alternate_theta_steps},
          {"dsm-time-samples", h.dsm.n_time_samples},
          {"clip-norm", opt_json(h.clip_norm)},
          {"seed", h.seed},
          {"predefined-weight", opt_json(o.predefined_weight)},
          {"weight-hidden", o.weight_hidden},
          {"score-hidden", o.score_hidden},
          {"score-blocks", o.score_blocks},
          {"embed-dim", o.embed_dim},
          {"norm", o.norm},
          {"no-sigma-scale", o.no_sigma_scale},
          {"feature-margin", o.feature_margin},
          {"dump-weight-grid", o.dump_weight_grid},
          {"bound-mc", o.bound_mc}};
}

ordered_json to_json(const SampleOptions& o) {
  return {{"command", "sample"}, {"checkpoint", o.checkpoint}, {"out", o.out},
          {"n", o.n},            {"steps", o.steps},           {"seed", o.seed},
          {"clamp", opt_json(o.clamp)}};
}

ordered_json to_json(const EvaluateOptions& o) {
  return {{"command", "evaluate"}, {"samples", o.samples}, {"mode", o.mode},
          {"y-min", opt_json(o.y_min)}, {"y-max", opt_json(o.y_max)}, {"out", o.out}};
}

void ensure_dir(const fs::path& dir) {
  if (dir.empty()) return;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir))
    throw IoError("cannot create output directory '" + dir.string() + "'");
}

fs::path parent_dir(const std::string& file) {
  fs::path p = fs::path(file).parent_path();
  return p.empty() ? fs::path(".") : p;
}

void echo_config(const fs::path& dir, const ordered_json& config) {
  write_text(dir / "config.json", config.dump(2) + "\n");
}

// Expands `--config file.json` into explicit flags appended after the user's
// own arguments; flags given on the command line win.
std::vector<std::string> expand_config(const std::vector<std::string>& args) {
  std::vector<std::string> out;
  std::optional<std::string> config_path;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config") {
      if (i + 1 >= args.size()) throw CLI::ArgumentMismatch("--config needs a file path");
      config_path = args[++i];
    } else if (args[i].rfind("--config=", 0) == 0) {
      config_path = args[i].substr(9);
    } else {
      out.push_back(args[i]);
    }
  }
  if (!config_path) return out;

  std::ifstream in(*config_path);
  if (!in) throw IoError("cannot open config '" + *config_path + "'");
  ordered_json cfg;
  try {
    cfg = ordered_json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("config '" + *config_path + "': " + e.what());
  }
  if (!cfg.is_object()) throw ParseError("config '" + *config_path + "' is not a JSON object");

  auto given = [&](const std::string& flag) {
    for (const auto& a : out)
      if (a == flag || a.rfind(flag + "=", 0) == 0) return true;
    return false;
  };
  auto scalar = [](const ordered_json& v) {
    return v.is_string() ? v.get<std::string>() : v.dump();
  };

  if (cfg.contains("command")) {
    const std::string cmd = cfg["command"].get<std::string>();
    if (out.empty() || out.front().rfind("-", 0) == 0) {
      out.insert(out.begin(), cmd);
    } else if (out.front() != cmd) {
      throw ParseError("config is for '" + cmd + "', not '" + out.front() + "'");
    }
  }
  for (const auto& [key, value] : cfg.items()) {
    if (key == "command") continue;
    const std::string flag = "--" + key;
    if (given(flag) || value.is_null()) continue;
    if (value.is_boolean()) {
      if (value.get<bool>()) out.push_back(flag);
    } else if (value.is_array()) {
      for (const auto& v : value) {
        out.push_back(flag);
        out.push_back(scalar(v));
      }
    } else {
      out.push_back(flag);
      out.push_back(scalar(value));
    }
  }
  return out;
}

void add_generate_toy(CLI::App& app, GenerateToyOptions& o) {
  app.add_option("--out-dir", o.out_dir, "Directory for toy_train.csv and toy_grid.csv")
      ->capture_default_str();
  app.add_option("--m", o.m, "Number of training samples")->capture_default_str()
      ->check(CLI::PositiveNumber);
  app.add_option("--seed", o.seed, "Random seed")->capture_default_str();
}

void add_train(CLI::App& app, TrainOptions& o) {
  Hyperparams& h = o.hyper;
  app.add_option("--dataset", o.dataset, "Dataset CSV with header x1,...,xd,y")->required();
  app.add_option("--out-dir", o.out_dir, "Output directory")->capture_default_str();
  app.add_option("--alpha", h.alpha, "Weight-variance penalty")->capture_default_str();
  app.add_option("--lambda", h.lambda, "Score-matching penalty")->capture_default_str();
  app.add_option("--eta1", h.eta1, "Weight learning rate in the alternating phase")
      ->capture_default_str();
  app.add_option("--eta2", h.eta2, "Score learning rate in the alternating phase")
      ->capture_default_str();
  app.add_option("--rounds", h.K, "Alternating rounds")->capture_default_str();
  app.add_option("--init-weight-steps", h.init_weight_steps, "Full-batch weight initialization steps")
      ->capture_default_str();
  app.add_option("--init-weight-lr", h.init_weight_lr, "Weight initialization learning rate")
      ->capture_default_str();
  app.add_option("--init-score-epochs", h.init_score_epochs, "Score initialization epochs")
      ->capture_default_str();
  app.add_option("--score-lr-start", h.score_lr_start, "Initial score learning rate")
      ->capture_default_str();
  app.add_option("--score-lr-end", h.score_lr_end, "Final score learning rate (linear decay)")
      ->capture_default_str();
  app.add_option("--batch-size", h.batch_size, "Score mini-batch size")->capture_default_str();
  app.add_option("--alternate-theta-steps", h.alternate_theta_steps,
                 "Score steps per round (0 = one epoch)")
      ->capture_default_str();
  app.add_option("--dsm-time-samples", h.dsm.n_time_samples, "Diffusion times per example")
      ->capture_default_str();
  app.add_option("--clip-norm", h.clip_norm, "Global gradient-norm clip (off by default)");
  app.add_option("--seed", h.seed, "Random seed")->capture_default_str();
  app.add_option("--predefined-weight", o.predefined_weight,
                 "Use the fixed weight exp(psi*y) instead of learning one");
  app.add_option("--weight-hidden", o.weight_hidden, "Weight network hidden widths")
      ->capture_default_str();
  app.add_option("--score-hidden", o.score_hidden, "Score network width")->capture_default_str();
  app.add_option("--score-blocks", o.score_blocks, "Score network blocks")->capture_default_str();
  app.add_option("--embed-dim", o.embed_dim, "Time embedding width")->capture_default_str();
  app.add_option("--norm", o.norm, "Score network normalization")
      ->check(CLI::IsMember({"batch", "layer"}))
      ->capture_default_str();
  app.add_flag("--no-sigma-scale", o.no_sigma_scale, "Do not divide the score output by sigma(t)");
  app.add_option("--feature-margin", o.feature_margin, "Feature box margin before mapping to [-1,1]")
      ->capture_default_str();
  app.add_flag("--dump-weight-grid", o.dump_weight_grid,
               "Write weight_grid.csv with the weight on 101 points of [0,1]");
  app.add_option("--bound-mc", o.bound_mc, "Draws for the bound report's DSM estimate")
      ->capture_default_str();
}

void add_sample(CLI::App& app, SampleOptions& o) {
  app.add_option("--checkpoint", o.checkpoint, "Checkpoint file")->required();
  app.add_option("--out", o.out, "Samples CSV")->capture_default_str();
  app.add_option("--n", o.n, "Number of designs")->capture_default_str();
  app.add_option("--steps", o.steps, "Sampler steps T")->capture_default_str();
  app.add_option("--seed", o.seed, "Random seed")->capture_default_str();
  app.add_option("--clamp", o.clamp, "Diagnostic clamp of intermediate states to [-c, c]");
}

void add_evaluate(CLI::App& app, EvaluateOptions& o) {
  app.add_option("--samples", o.samples, "Sample CSV files")->required();
  app.add_option("--mode", o.mode, "toy-oracle or normalized-scores")->capture_default_str();
  app.add_option("--y-min", o.y_min, "Objective minimum (normalized-scores)");
  app.add_option("--y-max", o.y_max, "Objective maximum (normalized-scores)");
  app.add_option("--out", o.out, "Report CSV")->capture_default_str();
}

// ---------------------------------------------------------------------------

int cmd_generate_toy(const GenerateToyOptions& o, std::ostream& out) {
  const ToySpec spec;
  const fs::path dir(o.out_dir);
  ensure_dir(dir);
  const OfflineDataset d = sample_pdata(spec, o.m, o.seed);
  write_text(dir / "toy_train.csv", dataset_csv(d.x_raw, d.y_raw));

  const Tensor grid = toy_grid(spec);
  std::string g = "x1,x2,f\n";
  for (Eigen::Index r = 0; r < grid.rows(); ++r)
    g += format_double(grid(r, 0)) + "," + format_double(grid(r, 1)) + "," +
         format_double(grid(r, 2)) + "\n";
  write_text(dir / "toy_grid.csv", g);
  echo_config(dir, to_json(o));
  out << "wrote " << (dir / "toy_train.csv").string() << " (" << o.m << " rows) and "
      << (dir / "toy_grid.csv").string() << "\n";
  return kOk;
}

int cmd_train(const TrainOptions& o, std::ostream& out, std::ostream& err) {
  TrainConfig config;
  config.hyper = o.hyper;
  config.hyper.validate();
  if (o.predefined_weight) {
    if (!std::isfinite(*o.predefined_weight)) throw DomainError("predefined weight must be finite");
    config.weights = WeightModel::exponential(*o.predefined_weight);
  } else {
    config.weights = WeightModel::trainable({o.weight_hidden});
  }
  for (int w : o.weight_hidden)
    if (w < 1) throw DomainError("weight network widths must be >= 1");
  if (o.score_hidden < 1 || o.score_blocks < 1 || o.embed_dim < 2)
    throw DomainError("score network needs width >= 1, blocks >= 1 and embed dim >= 2");
  if (o.bound_mc < 1) throw DomainError("bound-mc must be >= 1");
  config.score_arch.hidden = o.score_hidden;
  config.score_arch.blocks = o.score_blocks;
  config.score_arch.embed_dim = o.embed_dim;
  config.score_arch.norm = o.norm == "layer" ? NormKind::Layer : NormKind::Batch;
  config.score_arch.scale_by_sigma = !o.no_sigma_scale;

  const fs::path dir(o.out_dir);
  const OfflineDataset data = load_dataset(o.dataset, {o.feature_margin});
  for (const auto& w : data.warnings) err << "warning: " << w << "\n";
  ensure_dir(dir);
  echo_config(dir, to_json(o));

  out << "training on " << data.size() << " designs of dimension " << data.dim() << ", weight "
      << config.weights.describe() << "\n";
  const TrainState state = train(config, data.x_norm, data.y_train);

  const Checkpoint ckpt = make_checkpoint(state, data.meta);
  save_checkpoint(ckpt, dir / "checkpoint.bin");
  write_text(dir / "loss_history.csv", history_csv(state.history));

  Rng rng(derive_seed(config.hyper.seed, 4));
  const BoundReport report =
      bound_report(config.weights, state.phi, state.theta, data.x_norm, data.y_train,
                   config.hyper.alpha, config.hyper.lambda, o.bound_mc, rng);
  write_text(dir / "bound_report.txt", report.to_key_value());
  write_text(dir / "bound_report.csv", report.to_csv());

  if (o.dump_weight_grid) {
    Vector grid = Vector::LinSpaced(101, 0.0, 1.0);
    const Vector w = config.weights.eval(state.phi, grid);
    const double z = config.weights.eval(state.phi, data.y_train).mean();
    std::string csv = "y,w,w_normalized\n";
    for (Eigen::Index i = 0; i < grid.size(); ++i)
      csv += format_double(grid(i)) + "," + format_double(w(i)) + "," + format_double(w(i) / z) + "\n";
    write_text(dir / "weight_grid.csv", csv);
  }
  out << "checkpoint " << checkpoint_id(ckpt) << " J=" << format_double(report.total)
      << " (" << state.history.size() << " history rows)\n";
  return kOk;
}

int cmd_sample(const SampleOptions& o, std::ostream& out) {
  const Checkpoint ckpt = load_checkpoint(o.checkpoint);
  SamplerOptions so;
  so.n = o.n;
  so.steps = o.steps;
  so.seed = o.seed;
  so.clamp = o.clamp;
  SampleBatch batch = sample(ckpt.theta, so);
  batch.checkpoint_id = checkpoint_id(ckpt);
  const fs::path dir = parent_dir(o.out);
  ensure_dir(dir);
  export_samples(batch, ckpt.normalization, o.out);
  echo_config(dir, to_json(o));
  out << "wrote " << o.n << " designs to " << o.out << "\n";
  return kOk;
}

Eigen::Index column_index(const CsvTable& t, const std::string& name) {
  for (std::size_t i = 0; i < t.header.size(); ++i)
    if (t.header[i] == name) return Eigen::Index(i);
  return -1;
}

int cmd_evaluate(const EvaluateOptions& o, std::ostream& out) {
  std::string csv;
  if (o.mode == "toy-oracle") {
    const ToySpec spec;
    csv = "source,n,p50,p80,p100\n";
    for (const auto& path : o.samples) {
      const CsvTable t = read_csv(path);
      Eigen::Index c1 = column_index(t, "x1"), c2 = column_index(t, "x2");
      if (c1 < 0 || c2 < 0) {
        if (t.header.size() != 2) throw ContractError(path + ": toy designs need columns x1,x2");
        c1 = 0;
        c2 = 1;
      }
      if (t.rows.rows() == 0) throw ContractError(path + ": no designs");
      Tensor x(t.rows.rows(), 2);
      x.col(0) = t.rows.col(c1);
      x.col(1) = t.rows.col(c2);
      const PercentileReport r = percentile_report(spec, x);
      csv += path + "," + std::to_string(x.rows()) + "," + format_double(r.p50) + "," +
             format_double(r.p80) + "," + format_double(r.p100) + "\n";
    }
  } else if (o.mode == "normalized-scores") {
    if (!o.y_min || !o.y_max) throw UsageError("normalized-scores needs --y-min and --y-max");
    std::vector<double> p100;
    for (const auto& path : o.samples) {
      const CsvTable t = read_csv(path);
      Eigen::Index c = column_index(t, "y");
      if (c < 0) {
        if (t.header.size() != 1) throw ContractError(path + ": scores need a y column");
        c = 0;
      }
      if (t.rows.rows() == 0) throw ContractError(path + ": no scores");
      Vector s(t.rows.rows());
      for (Eigen::Index i = 0; i < s.size(); ++i)
        s(i) = benchmark_normalize(t.rows(i, c), *o.y_min, *o.y_max);
      p100.push_back(percentile(s, 100.0));
      out << path << " p100=" << format_double(p100.back()) << "\n";
    }
    const auto n = double(p100.size());
    double mean = 0.0;
    for (double v : p100) mean += v / n;
    double var = 0.0;
    for (double v : p100) var += (v - mean) * (v - mean);
    const double sd = p100.size() > 1 ? std::sqrt(var / (n - 1.0)) : 0.0;
    csv = "n_files,p100_mean,p100_std\n" + std::to_string(p100.size()) + "," +
          format_double(mean) + "," + format_double(sd) + "\n";
  } else {
    throw UsageError("unknown evaluation mode '" + o.mode + "'");
  }
  const fs::path dir = parent_dir(o.out);
  ensure_dir(dir);
  write_text(o.out, csv);
  echo_config(dir, to_json(o));
  out << csv;
  return kOk;
}

}  // namespace

int run(const std::vector<std::string>& raw_args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Offline optimization with weighted diffusion models"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for all commands");
  app.footer("Every command also accepts --config <config.json> to reload an echoed configuration.");

  GenerateToyOptions gen;
  TrainOptions tr;
  SampleOptions sa;
  EvaluateOptions ev;
  CLI::App* c_gen = app.add_subcommand("generate-toy", "Write the synthetic dataset and objective grid");
  CLI::App* c_train = app.add_subcommand("train", "Train weight and score networks");
  CLI::App* c_sample = app.add_subcommand("sample", "Draw designs from a checkpoint");
  CLI::App* c_eval = app.add_subcommand("evaluate", "Percentile report of sample files");
  add_generate_toy(*c_gen, gen);
  add_train(*c_train, tr);
  add_sample(*c_sample, sa);
  add_evaluate(*c_eval, ev);

  try {
    std::vector<std::string> args = expand_config(raw_args);
    std::reverse(args.begin(), args.end());
    app.parse(args);
  } catch (const CLI::ParseError& e) {
    // --help and friends are reported as successful "errors".
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kInvalid;
  } catch (const IoError& e) {
    err << "error: " << e.what() << "\n";
    return kIoFailure;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return kInvalid;
  }

  try {
    if (c_gen->parsed()) return cmd_generate_toy(gen, out);
    if (c_train->parsed()) return cmd_train(tr, out, err);
    if (c_sample->parsed()) return cmd_sample(sa, out);
    if (c_eval->parsed()) return cmd_evaluate(ev, out);
  } catch (const TrainingAbort& e) {
    err << "error: training aborted in stage " << e.stage() << ": " << e.what() << "\n";
    return kInvalid;
  } catch (const IoError& e) {
    err << "error: " << e.what() << "\n";
    return kIoFailure;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return kInvalid;
  }
  return kInvalid;
}

int run(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run(args, std::cout, std::cerr);
}

}  // namespace pacdiff::cli
