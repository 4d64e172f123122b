#pragma once

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "posterpp/attnmap.hpp"
#include "posterpp/checkpoint.hpp"
#include "posterpp/complexity.hpp"
#include "posterpp/config.hpp"
#include "posterpp/data.hpp"
#include "posterpp/gradcheck_suite.hpp"
#include "posterpp/image_io.hpp"
#include "posterpp/train.hpp"

namespace posterpp::cli {

enum ExitCode : int { kOk = 0, kFailure = 1, kConfig = 2, kMissingFile = 3, kNumeric = 4 };

enum class LogLevel { quiet, info, debug };

inline LogLevel log_level_from_env() {
  const char* v = std::getenv("POSTERPP_LOG");
  if (!v || std::string(v) == "info") return LogLevel::info;
  if (std::string(v) == "quiet") return LogLevel::quiet;
  if (std::string(v) == "debug") return LogLevel::debug;
  throw ConfigError("POSTERPP_LOG must be quiet, info or debug");
}

struct Io {
  std::ostream& out;
  std::ostream& err;
  LogLevel level = LogLevel::info;

  void info(const std::string& m) const {
    if (level != LogLevel::quiet) err << "[info] " << m << '\n';
  }
  void debug(const std::string& m) const {
    if (level == LogLevel::debug) err << "[debug] " << m << '\n';
  }
};

/// Command-line overrides applied on top of the config file.
struct Overrides {
  std::string config;
  std::optional<std::string> checkpoint, out, image, kernel, scope;
  std::optional<std::uint64_t> seed;
};

inline RunConfig resolve_config(const Overrides& o) {
  RunConfig c = o.config.empty() ? RunConfig{} : load_run_config(o.config);
  if (o.checkpoint) c.paths.checkpoint = *o.checkpoint;
  if (o.out) c.paths.out_dir = *o.out;
  if (o.image) c.attnmap.image = *o.image;
  if (o.kernel) c.bench.kernel = *o.kernel;
  if (o.scope) c.gradcheck.scope = *o.scope;
  if (o.seed) c.train.seed = *o.seed;
  c.validate();
  return c;
}

inline Json to_json(const EvalReport& r) {
  Json per_class = Json::array();
  for (std::size_t c = 0; c < r.class_names.size(); ++c) {
    per_class.push_back({{"class", r.class_names[c]}, {"accuracy", r.per_class_acc[c]}});
  }
  Json j;
  j["per_class_acc"] = per_class;
  j["mean_acc"] = r.mean_acc;
  j["overall_acc"] = r.overall_acc;
  j["loss"] = r.loss;
  j["total"] = r.total;
  j["confusion"] = r.confusion;
  return j;
}

inline Json to_json(const CostReport& r, const std::vector<CensusEntry>& census) {
  Json entries = Json::array();
  for (const auto& e : r.entries) {
    entries.push_back({{"module", e.module},
                       {"params", e.params},
                       {"macs", e.macs},
                       {"flops", 2 * e.macs},
                       {"frozen", e.frozen}});
  }
  std::uint64_t census_total = 0;
  for (const auto& c : census) census_total += c.total();
  Json j;
  j["entries"] = entries;
  j["total_params"] = r.total_params();
  j["total_macs"] = r.total_macs();
  j["total_flops"] = r.total_flops();
  j["census_params"] = census_total;
  j["census_matches"] = census_total == r.total_params();
  return j;
}

namespace detail {

inline void ensure_parent(const std::string& file) {
  const auto parent = std::filesystem::path(file).parent_path();
  if (!parent.empty()) std::filesystem::create_directories(parent);
}

inline std::string out_path(const RunConfig& c, const std::string& name) {
  std::filesystem::create_directories(c.paths.out_dir);
  return (std::filesystem::path(c.paths.out_dir) / name).string();
}

inline void write_text(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write '" + path + "'");
  f << text;
}

struct Split {
  Dataset train, val;
};

inline Split synthetic_split(const RunConfig& c) {
  const Dataset all =
      synth_dataset_total(c.train.data_seed, c.train.samples, c.model.num_classes, c.model.input_height);
  auto [tr, va] = split_dataset(all, c.train.val_fraction, c.train.data_seed);
  return {std::move(tr), std::move(va)};
}

}  // namespace detail

inline int cmd_config_dump(const RunConfig& c, const Io& io) {
  io.out << dump_config(c);
  return kOk;
}

inline int cmd_build(const RunConfig& c, const Io& io) {
  Model model = Model::build(c.model, c.train.seed);
  detail::ensure_parent(c.paths.checkpoint);
  save_checkpoint(model, c.paths.checkpoint);
  Json j;
  j["checkpoint"] = c.paths.checkpoint;
  j["params"] = model.params().total();
  j["trainable"] = model.params().count(true);
  j["config_digest"] = config_digest(c.model);
  io.out << j.dump(2) << '\n';
  return kOk;
}

inline int cmd_train(const RunConfig& c, const Io& io) {
  const auto data = detail::synthetic_split(c);
  io.info("training on " + std::to_string(data.train.size()) + " samples, validating on " +
          std::to_string(data.val.size()));
  Model model = Model::build(c.model, c.train.seed);
  std::ofstream csv(detail::out_path(c, "epochs.csv"), std::ios::binary);
  if (!csv) throw IoError("cannot write epoch log in '" + c.paths.out_dir + "'");
  const auto result = train(model, data.train, data.val, c.train, &csv, [&](const EpochLog& e) {
    io.debug(csv_row(e));
  });
  detail::ensure_parent(c.paths.checkpoint);
  save_checkpoint(model, c.paths.checkpoint);
  const EvalReport report = evaluate(model, data.val.empty() ? data.train : data.val);
  detail::write_text(detail::out_path(c, "train_report.json"), to_json(report).dump(2) + "\n");
  const EpochLog& last = result.epochs.back();
  io.info("stopped after " + std::to_string(result.epochs.size()) + " epochs (" + result.stop_reason + ")");
  std::ostringstream s;
  s << "epochs " << result.epochs.size() << " train_acc " << std::fixed << std::setprecision(2) << last.train_acc
    << " val_acc " << last.val_acc << '\n';
  io.out << s.str();
  return kOk;
}

inline int cmd_eval(const RunConfig& c, const Io& io) {
  const Model model = load_checkpoint(c.paths.checkpoint, c.model);
  const auto data = detail::synthetic_split(c);
  const EvalReport report = evaluate(model, data.val.empty() ? data.train : data.val);
  const std::string text = to_json(report).dump(2) + "\n";
  detail::write_text(detail::out_path(c, "eval_report.json"), text);
  io.out << text;
  return kOk;
}

inline int cmd_count(const RunConfig& c, const Io& io) {
  const Model model = Model::build(c.model, c.train.seed);
  const std::string text = to_json(model_cost(c.model), count_units(model.params())).dump(2) + "\n";
  detail::write_text(detail::out_path(c, "cost_report.json"), text);
  io.out << text;
  return kOk;
}

inline int cmd_bench(const RunConfig& c, const Io& io) {
  std::vector<Kernel> kernels;
  if (c.bench.kernel != "w_mcsa") kernels.push_back(Kernel::mcsa);
  if (c.bench.kernel != "mcsa") kernels.push_back(Kernel::w_mcsa);
  for (Kernel k : kernels) {
    const auto r = bench_scaling(k, c.bench.sizes, c.bench.reps, c.bench.dim, c.bench.heads, c.bench.window_tokens,
                                 c.train.seed);
    std::ostringstream csv;
    csv << "n,median_ns,reps\n";
    for (const auto& p : r.points) csv << p.n << ',' << static_cast<std::uint64_t>(p.median_ns) << ',' << p.reps << '\n';
    detail::write_text(detail::out_path(c, std::string("bench_") + to_string(k) + ".csv"), csv.str());
    io.out << to_string(k) << " slope " << std::fixed << std::setprecision(3) << r.slope << '\n';
  }
  return kOk;
}

inline int cmd_gradcheck(const RunConfig& c, const Io& io) {
  std::size_t failed = 0, run = 0;
  io.out << std::left << std::setw(22) << "case" << std::setw(8) << "scope" << std::setw(14) << "max_rel_err"
         << std::setw(9) << "checked" << "status\n";
  for (const auto& gc : gradcheck::cases()) {
    if (c.gradcheck.scope != "all" && gc.scope != c.gradcheck.scope) continue;
    const GradCheckResult r = gc.run(c.gradcheck.h);
    const bool ok = r.max_rel_err <= c.gradcheck.tolerance;
    failed += !ok;
    ++run;
    std::ostringstream err;
    err << std::scientific << std::setprecision(3) << r.max_rel_err;
    io.out << std::left << std::setw(22) << gc.name << std::setw(8) << gc.scope << std::setw(14) << err.str()
           << std::setw(9) << r.checked << (ok ? "PASS" : "FAIL") << '\n';
  }
  if (failed) {
    io.err << "ERROR " << kFailure << ": " << failed << " of " << run << " gradient checks above tolerance\n";
    return kFailure;
  }
  return kOk;
}

inline int cmd_attnmap(const RunConfig& c, const Io& io) {
  const Model model = std::filesystem::exists(c.paths.checkpoint) ? load_checkpoint(c.paths.checkpoint, c.model)
                                                                  : Model::build(c.model, c.train.seed);
  Tensor input;
  if (!c.attnmap.image.empty()) {
    input = to_model_input(image_to_tensor(read_pnm(c.attnmap.image)));
  } else {
    Rng rng(c.train.data_seed);
    input = render_face(expression_style(c.attnmap.label), c.model.input_height, rng);
  }
  if (input.dim(1) != c.model.input_height || input.dim(2) != c.model.input_width) {
    throw ShapeError("attnmap image is " + std::to_string(input.dim(2)) + "x" + std::to_string(input.dim(1)) +
                     ", model expects " + std::to_string(c.model.input_width) + "x" +
                     std::to_string(c.model.input_height));
  }
  for (const ScaleMap& m : attention_maps(model, input)) {
    const Image8 img{m.width, m.height, 1, to_gray8(m.mass)};
    const std::string path = detail::out_path(c, "attn_scale" + std::to_string(m.scale) + ".pgm");
    write_pnm(path, img);
    io.out << path << ' ' << m.width << 'x' << m.height << ' ' << m.kernel << '\n';
  }
  return kOk;
}

inline int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e) || dynamic_cast<const ShapeError*>(&e) ||
      dynamic_cast<const LayoutError*>(&e)) {
    return kConfig;
  }
  if (dynamic_cast<const IoError*>(&e)) return kMissingFile;
  if (dynamic_cast<const NumericError*>(&e)) return kNumeric;
  return kFailure;
}

/// Parses argv, runs one subcommand and returns the process exit code.
/// Failures are reported on `err` as a single `ERROR <code>: <message>` line.
inline int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"posterpp: landmark-guided window cross-attention toolkit"};
  app.require_subcommand(1);
  Overrides o;
  app.add_option("--config", o.config, "JSON run config (defaults apply when omitted)");
  app.add_option("--checkpoint", o.checkpoint, "checkpoint file");
  app.add_option("--out", o.out, "output directory");
  app.add_option("--seed", o.seed, "training / initialisation seed");
  app.add_option("--image", o.image, "PGM/PPM input for attnmap");
  app.add_option("--kernel", o.kernel, "bench kernel: mcsa, w_mcsa or both");
  app.add_option("--scope", o.scope, "gradcheck scope: ops, blocks, model or all");
  app.fallthrough();

  auto* config = app.add_subcommand("config", "config utilities");
  config->require_subcommand(1);
  auto* dump = config->add_subcommand("dump", "print the resolved config in canonical form");
  auto* build = app.add_subcommand("build", "initialise a model and write its checkpoint");
  auto* train_cmd = app.add_subcommand("train", "train on the synthetic expression set");
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on the validation split");
  auto* count = app.add_subcommand("count", "parameter and MAC/FLOP report");
  auto* bench = app.add_subcommand("bench", "attention kernel scaling benchmark");
  auto* grad = app.add_subcommand("gradcheck", "finite-difference gradient checks");
  auto* attn = app.add_subcommand("attnmap", "export fusion attention maps as PGM");
  for (auto* s : {config, dump, build, train_cmd, eval, count, bench, grad, attn}) s->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "ERROR " << kConfig << ": " << e.what() << '\n';
    return kConfig;
  }

  try {
    const Io io{out, err, log_level_from_env()};
    const RunConfig c = resolve_config(o);
    io.debug("config digest " + std::to_string(config_digest(c.model)));
    if (dump->parsed()) return cmd_config_dump(c, io);
    if (build->parsed()) return cmd_build(c, io);
    if (train_cmd->parsed()) return cmd_train(c, io);
    if (eval->parsed()) return cmd_eval(c, io);
    if (count->parsed()) return cmd_count(c, io);
    if (bench->parsed()) return cmd_bench(c, io);
    if (grad->parsed()) return cmd_gradcheck(c, io);
    if (attn->parsed()) return cmd_attnmap(c, io);
    return kFailure;
  } catch (const std::exception& e) {
    const int code = exit_code_for(e);
    err << "ERROR " << code << ": " << e.what() << '\n';
    return code;
  }
}

}  // namespace posterpp::cli
