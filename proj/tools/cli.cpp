#include "cli.hpp"

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "mmkd/checkpoint.hpp"
#include "mmkd/data.hpp"
#include "mmkd/latency.hpp"
#include "mmkd/metrics.hpp"
#include "mmkd/run_config.hpp"
#include "mmkd/train.hpp"

namespace mmkd::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

int exit_code_for(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Config:
    case ErrorKind::Parameter:
    case ErrorKind::Usage:
    case ErrorKind::Alignment: return kConfig;
    case ErrorKind::Data:
    case ErrorKind::Shape:
    case ErrorKind::Truncated: return kData;
    case ErrorKind::Io: return kIo;
    case ErrorKind::Format: return kFormat;
    case ErrorKind::Manifest: return kManifest;
    case ErrorKind::Dimension:
    case ErrorKind::Numeric: return kInternal;
  }
  return kInternal;
}

std::string read_text(const fs::path& p) {
  std::ifstream f(p);
  if (!f) throw Error(ErrorKind::Io, "cannot open " + p.string());
  std::ostringstream os;
  os << f.rdbuf();
  return os.str();
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream f(p, std::ios::trunc);
  if (!f) throw Error(ErrorKind::Io, "cannot open " + p.string() + " for writing");
  f << text;
  if (!f) throw Error(ErrorKind::Io, "short write to " + p.string());
}

/// --seed wins, then an explicit seed in the config document, then the
/// environment, then zero.
std::uint64_t resolve_seed(std::optional<std::uint64_t> flag, std::optional<std::uint64_t> from_config) {
  if (flag) return *flag;
  if (from_config) return *from_config;
  if (const char* env = std::getenv("MODAL_DISTILL_SEED"); env && *env) {
    try {
      std::size_t used = 0;
      const auto v = std::stoull(env, &used);
      if (used == std::string(env).size()) return v;
    } catch (const std::exception&) {
    }
    throw Error(ErrorKind::Config, std::string("MODAL_DISTILL_SEED is not an unsigned integer: '") + env + "'");
  }
  return 0;
}

json metrics_json(const Metrics& m) {
  json conf = json::array();
  for (const auto& row : m.confusion) conf.push_back(row);
  return {{"n", m.total},         {"accuracy", m.accuracy}, {"f1", m.f1_weighted},
          {"f1_macro", m.f1_macro}, {"loss", m.loss},        {"confusion", conf}};
}

json latency_json(const LatencyStats& s) {
  return {{"median_ms", s.median_ms}, {"q1_ms", s.q1_ms}, {"q3_ms", s.q3_ms}, {"iqr_ms", s.iqr_ms()},
          {"repeats", s.samples_ms.size()}};
}

json breakdown_json(const ParamBreakdown& b) {
  return {{"front_ends", b.front_ends},
          {"cross_stacks", b.cross_stacks},
          {"fusion_stacks", b.fusion_stacks},
          {"head", b.head},
          {"total", b.total()}};
}

// ---------------------------------------------------------------------------

struct GenDataArgs {
  std::string spec, out;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> n;
};

int cmd_gen_data(const GenDataArgs& a) {
  SyntheticSpec spec;
  std::optional<std::uint64_t> spec_seed;
  if (!a.spec.empty()) {
    const std::string text = read_text(a.spec);
    spec = synthetic_spec_from_json(text);
    const json j = json::parse(text);
    if (j.contains("seed")) spec_seed = spec.seed;
  }
  spec.seed = resolve_seed(a.seed, spec_seed);
  if (a.n) spec.n = *a.n;
  spec.validate();
  const MultimodalDataset ds = generate_synthetic(spec);
  save_dataset(ds, a.out);
  std::cout << json{{"out", a.out}, {"n", ds.size()}, {"seed", spec.seed}}.dump() << "\n";
  return kOk;
}

struct TrainArgs {
  std::string config, out, data, teacher;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> epochs;
};

int cmd_train(const TrainArgs& a) {
  const std::string text = read_text(a.config);
  RunConfig cfg = run_config_from_json(text, false);
  std::optional<std::uint64_t> config_seed;
  if (json::parse(text).contains("seed")) config_seed = cfg.seed;
  cfg.seed = resolve_seed(a.seed, config_seed);
  if (!a.data.empty()) cfg.data = a.data;
  if (!a.teacher.empty()) cfg.teacher = a.teacher;
  if (a.epochs) cfg.train.epochs = *a.epochs;
  cfg.finalize();
  if (cfg.data.empty()) throw Error(ErrorKind::Config, "no dataset given (config 'data' or --data)");

  const MultimodalDataset ds = load_dataset(cfg.data);
  cfg.network = with_dataset_shapes(cfg.network, ds.meta);
  cfg.validate();
  const DatasetSplit parts = split(ds, cfg.split, cfg.split_seed);

  Network net = build_network(cfg);
  std::optional<Network> teacher;
  if (cfg.method != KdMethod::None) {
    teacher = load_checkpoint(*cfg.teacher);
    const TeacherBranch want = teacher_for_config(cfg.config);
    if (teacher->role() != Role::Teacher || teacher->branch() != want) {
      throw Error(ErrorKind::Config, "config " + std::to_string(cfg.config) + " distills from teacher/" +
                                         branch_name(want) + ", checkpoint holds " + teacher->label());
    }
  }

  const TrainResult result = train(net, parts.train, parts.val, cfg.train, teacher ? &*teacher : nullptr);
  const Metrics test = evaluate(net, parts.test);

  fs::create_directories(a.out);
  save_checkpoint(net, fs::path(a.out) / "model.ckpt", cfg.seed, run_config_to_json(cfg));
  write_text(fs::path(a.out) / "history.jsonl", result.history.to_jsonl());
  write_text(fs::path(a.out) / "run.json", run_config_to_json(cfg) + "\n");
  const json summary{{"run", cfg.label()},
                     {"seed", cfg.seed},
                     {"best_epoch", result.history.best_epoch},
                     {"best_val_loss", result.history.best_val_loss},
                     {"test", metrics_json(test)}};
  write_text(fs::path(a.out) / "metrics.json", summary.dump(2) + "\n");
  std::cout << summary.dump() << "\n";
  return kOk;
}

struct EvalArgs {
  std::string ckpt, data, part = "all";
};

MultimodalDataset select_part(const MultimodalDataset& ds, const CheckpointInfo& info, const std::string& part) {
  if (part == "all") return ds;
  const RunConfig run = run_config_from_json(info.run);
  const DatasetSplit parts = split(ds, run.split, run.split_seed);
  if (part == "train") return parts.train;
  if (part == "val") return parts.val;
  if (part == "test") return parts.test;
  throw Error(ErrorKind::Config, "unknown split '" + part + "' (all, train, val, test)");
}

int cmd_eval(const EvalArgs& a) {
  CheckpointInfo info;
  const Network net = load_checkpoint(a.ckpt, {}, &info);
  const MultimodalDataset ds = select_part(load_dataset(a.data), info, a.part);
  json out = metrics_json(evaluate(net, ds));
  out["network"] = net.label();
  out["split"] = a.part;
  std::cout << out.dump() << "\n";
  return kOk;
}

struct DumpArgs {
  std::string ckpt, data, out;
  std::size_t sample = 0;
};

int cmd_dump_attn(const DumpArgs& a) {
  const Network net = load_checkpoint(a.ckpt);
  const MultimodalDataset ds = load_dataset(a.data);
  if (a.sample >= ds.size()) {
    throw Error(ErrorKind::Data, "sample " + std::to_string(a.sample) + " out of range for N=" + std::to_string(ds.size()));
  }
  ForwardTrace fw;
  {
    NoGradGuard no_grad;
    fw = network_forward(net, make_batch(ds, {a.sample}).inputs);
  }
  json stacks = json::array();
  for (const auto& id : net.stack_ids()) {
    const AttentionTrace& tr = fw.trace(id);
    const auto [rows, cols] = net.map_shape(id);
    json layers = json::array();
    for (const Tensor& map : tr.maps) {
      json m = json::array();
      for (std::size_t r = 0; r < rows; ++r) {
        const auto row = map.data().subspan(r * cols, cols);
        m.push_back(std::vector<double>(row.begin(), row.end()));
      }
      layers.push_back(std::move(m));
    }
    stacks.push_back({{"id", id.str()}, {"rows", rows}, {"cols", cols}, {"layers", std::move(layers)}});
  }
  const json doc{{"network", net.label()}, {"sample", a.sample}, {"transformers", std::move(stacks)}};
  if (a.out.empty() || a.out == "-") {
    std::cout << doc.dump() << "\n";
  } else {
    write_text(a.out, doc.dump() + "\n");
  }
  return kOk;
}

struct ParamsArgs {
  std::string config, preset = "desk";
};

int cmd_params(const ParamsArgs& a) {
  RunConfig cfg;
  if (!a.config.empty()) {
    cfg = run_config_from_json(read_text(a.config));
  } else {
    cfg.network = network_preset(a.preset);
    cfg.preset = a.preset;
    cfg.finalize();
  }
  const Network net = build_network(cfg);
  const Network complete = build_teacher(TeacherBranch::Complete, cfg.network, 0);

  const Network paper_student = build_student(5, NetworkConfig::paper(), 0);
  const Network paper_teacher = build_teacher(TeacherBranch::Complete, NetworkConfig::paper(), 0);
  const double paper_ratio =
      static_cast<double>(paper_teacher.param_count()) / static_cast<double>(paper_student.param_count());

  const json out{
      {"network", net.label()},
      {"preset", cfg.preset},
      {"stacks", net.stack_count()},
      {"params", breakdown_json(net.param_breakdown())},
      {"complete_teacher_total", complete.param_count()},
      {"teacher_to_network_ratio",
       static_cast<double>(complete.param_count()) / static_cast<double>(net.param_count())},
      {"paper_preset",
       {{"student_config5_total", paper_student.param_count()},
        {"complete_teacher_total", paper_teacher.param_count()},
        {"teacher_to_student_ratio", paper_ratio},
        {"reference_ratio", 1.802 / 0.675}}}};
  std::cout << out.dump(2) << "\n";
  return kOk;
}

struct BenchArgs {
  std::string ckpt, data, baseline;
  std::size_t repeats = kMinBenchRepeats;
  std::size_t warmup = 3;
  std::size_t batch = 64;
};

int cmd_bench(const BenchArgs& a) {
  if (a.repeats < kMinBenchRepeats) {
    throw Error(ErrorKind::Parameter, "--repeats must be at least " + std::to_string(kMinBenchRepeats));
  }
  const Network net = load_checkpoint(a.ckpt);
  const MultimodalDataset ds = load_dataset(a.data);
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < std::min(a.batch, ds.size()); ++i) idx.push_back(i);
  const Batch batch = make_batch(ds, idx).inputs;

  json out{{"network", net.label()}, {"batch", idx.size()}, {"threads", 1}};
  if (a.baseline.empty()) {
    out["latency"] = latency_json(measure_forward_latency(net, batch, a.repeats, a.warmup));
  } else {
    const Network base = load_checkpoint(a.baseline);
    const PairedLatency p = measure_paired_latency(net, base, batch, a.repeats, a.warmup);
    out["latency"] = latency_json(p.first);
    out["baseline"] = {{"network", base.label()}, {"latency", latency_json(p.second)}};
    out["ratio"] = p.ratio();
    out["reduction_percent"] = (1.0 - p.ratio()) * 100.0;
  }
  std::cout << out.dump() << "\n";
  return kOk;
}

}  // namespace

int run(const std::vector<std::string>& args) {
  CLI::App app{"Multimodal-to-unimodal distillation toolkit"};
  app.require_subcommand(1);

  GenDataArgs gen;
  auto* g = app.add_subcommand("gen-data", "Generate a synthetic dataset directory");
  g->add_option("--spec", gen.spec, "Synthetic spec (JSON); defaults apply when omitted");
  g->add_option("--out", gen.out, "Output directory")->required();
  g->add_option("--seed", gen.seed, "Generator seed");
  g->add_option("--n", gen.n, "Number of samples");

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "Train a teacher or student from a run config");
  t->add_option("--config", tr.config, "Run config (JSON)")->required();
  t->add_option("--out", tr.out, "Output directory")->required();
  t->add_option("--teacher", tr.teacher, "Teacher checkpoint for distillation");
  t->add_option("--data", tr.data, "Dataset directory (overrides the config)");
  t->add_option("--seed", tr.seed, "Run seed");
  t->add_option("--epochs", tr.epochs, "Epoch count (overrides the config)");

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "Evaluate a checkpoint");
  e->add_option("--ckpt", ev.ckpt, "Checkpoint")->required();
  e->add_option("--data", ev.data, "Dataset directory")->required();
  e->add_option("--split", ev.part, "all, train, val or test");

  DumpArgs du;
  auto* d = app.add_subcommand("dump-attn", "Write head-averaged attention maps for one sample");
  d->add_option("--ckpt", du.ckpt, "Checkpoint")->required();
  d->add_option("--data", du.data, "Dataset directory")->required();
  d->add_option("--sample", du.sample, "Sample index");
  d->add_option("--out", du.out, "Output file ('-' for stdout)");

  ParamsArgs pa;
  auto* p = app.add_subcommand("params", "Count parameters per component");
  p->add_option("--config", pa.config, "Run config (JSON)");
  p->add_option("--preset", pa.preset, "Network preset when no config is given");

  BenchArgs be;
  auto* b = app.add_subcommand("bench", "Median forward latency on one worker");
  b->add_option("--ckpt", be.ckpt, "Checkpoint")->required();
  b->add_option("--data", be.data, "Dataset directory")->required();
  b->add_option("--repeats", be.repeats, "Timed repeats (>= 10)");
  b->add_option("--warmup", be.warmup, "Untimed warm-up passes");
  b->add_option("--batch", be.batch, "Batch size");
  b->add_option("--baseline", be.baseline, "Second checkpoint timed in interleaved pairs");

  std::vector<const char*> argv;
  for (const auto& s : args) argv.push_back(s.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? kOk : kConfig;
  }

  try {
    if (*g) return cmd_gen_data(gen);
    if (*t) return cmd_train(tr);
    if (*e) return cmd_eval(ev);
    if (*d) return cmd_dump_attn(du);
    if (*p) return cmd_params(pa);
    if (*b) return cmd_bench(be);
  } catch (const Error& err) {
    std::cerr << err.what() << "\n";
    return exit_code_for(err.kind());
  } catch (const fs::filesystem_error& err) {
    std::cerr << "io error: " << err.what() << "\n";
    return kIo;
  } catch (const std::exception& err) {
    std::cerr << "internal error: " << err.what() << "\n";
    return kInternal;
  }
  return kInternal;
}

}  // namespace mmkd::cli
