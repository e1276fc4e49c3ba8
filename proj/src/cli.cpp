// Copyright 2026 The PETRA Runtime Authors.
// SPDX-License-Identifier: Apache-2.0

#include "petra/cli.hpp"

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "petra/cost_model.hpp"
#include "petra/errors.hpp"
#include "petra/optim.hpp"
#include "petra/verify.hpp"

namespace petra::cli {

using nlohmann::json;

namespace {

bool one_of(const std::string& v, std::initializer_list<const char*> options) {
  for (const char* o : options) {
    if (v == o) return true;
  }
  return false;
}

void require(bool ok, const std::string& message) {
  if (!ok) throw ConfigError(message);
}

json to_json_value(const RunConfig& c) {
  return {{"model", c.model},
          {"stages", c.stages},
          {"width", c.width},
          {"downsample_stage", c.downsample_stage},
          {"dataset", c.dataset},
          {"data_dir", c.data_dir},
          {"train_size", c.train_size},
          {"test_size", c.test_size},
          {"classes", c.classes},
          {"image_size", c.image_size},
          {"engine", c.engine},
          {"epochs", c.epochs},
          {"batch", c.batch},
          {"k", c.k},
          {"seed", c.seed},
          {"dtype", c.dtype},
          {"optimizer", c.optimizer},
          {"lr", c.lr},
          {"warmup_epochs", c.warmup_epochs},
          {"momentum", c.momentum},
          {"weight_decay", c.weight_decay},
          {"augment", c.augment},
          {"queue_capacity", c.queue_capacity},
          {"eval_batch", c.eval_batch},
          {"events", c.events},
          {"output", c.output}};
}

RunConfig from_json_value(const json& j) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  RunConfig c;
  const json known = to_json_value(c);
  for (const auto& [key, value] : j.items()) {
    if (!known.contains(key)) throw ConfigError("unknown config key '" + key + "'");
  }
  auto get = [&](const char* key, auto& field) {
    if (!j.contains(key)) return;
    try {
      j.at(key).get_to(field);
    } catch (const json::exception&) {
      throw ConfigError(std::string("config key '") + key + "' has the wrong type");
    }
  };
  get("model", c.model);
  get("stages", c.stages);
  get("width", c.width);
  get("downsample_stage", c.downsample_stage);
  get("dataset", c.dataset);
  get("data_dir", c.data_dir);
  get("train_size", c.train_size);
  get("test_size", c.test_size);
  get("classes", c.classes);
  get("image_size", c.image_size);
  get("engine", c.engine);
  get("epochs", c.epochs);
  get("batch", c.batch);
  get("k", c.k);
  get("seed", c.seed);
  get("dtype", c.dtype);
  get("optimizer", c.optimizer);
  get("lr", c.lr);
  get("warmup_epochs", c.warmup_epochs);
  get("momentum", c.momentum);
  get("weight_decay", c.weight_decay);
  get("augment", c.augment);
  get("queue_capacity", c.queue_capacity);
  get("eval_batch", c.eval_batch);
  get("events", c.events);
  get("output", c.output);
  return c;
}

std::string read_file(const std::filesystem::path& p) {
  std::ifstream is(p, std::ios::binary);
  if (!is) throw IoError("cannot read " + p.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& p, const std::string& text) {
  std::ofstream os(p, std::ios::binary);
  if (!os) throw IoError("cannot write " + p.string());
  os << text;
  if (!os) throw IoError("failed writing " + p.string());
}

bool augment_on(const RunConfig& c) { return c.augment == "on" || (c.augment == "auto" && c.dataset == "cifar10"); }

std::int64_t input_size(const RunConfig& c) { return c.dataset == "cifar10" ? 32 : c.image_size; }
std::int64_t class_count(const RunConfig& c) { return c.dataset == "cifar10" ? 10 : c.classes; }

}  // namespace

// ---------------------------------------------------------------------------

void validate(const RunConfig& c) {
  require(one_of(c.model, {"small", "revnet18", "revnet34", "revnet50", "resnet18", "resnet34", "resnet50"}),
          "model must be small, revnet18/34/50 or resnet18/34/50 (got '" + c.model + "')");
  require(one_of(c.dataset, {"synthetic", "cifar10"}), "dataset must be synthetic or cifar10 (got '" + c.dataset + "')");
  require(one_of(c.engine, {"lockstep", "rounds", "threads", "reference-backprop"}),
          "engine must be lockstep, rounds, threads or reference-backprop (got '" + c.engine + "')");
  require(one_of(c.dtype, {"f32", "f64"}), "dtype must be f32 or f64 (got '" + c.dtype + "')");
  require(one_of(c.optimizer, {"desk", "cifar10", "imagenet"}),
          "optimizer must be desk, cifar10 or imagenet (got '" + c.optimizer + "')");
  require(one_of(c.augment, {"auto", "on", "off"}), "augment must be auto, on or off (got '" + c.augment + "')");
  require(c.k == 1 || c.k == 2 || c.k == 4 || c.k == 8 || c.k == 16 || c.k == 32,
          "k must be one of 1, 2, 4, 8, 16, 32 (got " + std::to_string(c.k) + ")");
  require(c.epochs >= 1, "epochs must be >= 1");
  require(c.batch >= 1, "batch must be >= 1");
  require(c.train_size >= 0 && c.test_size >= 0, "train_size and test_size must be >= 0");
  require(c.lr >= 0 && std::isfinite(c.lr), "lr must be finite and >= 0");
  require(c.warmup_epochs >= 0, "warmup_epochs must be >= 0");
  require(c.momentum >= 0 && c.momentum < 1, "momentum must lie in [0, 1)");
  require(c.queue_capacity >= 1, "queue_capacity must be >= 1");
  require(c.eval_batch >= 1, "eval_batch must be >= 1");
  require(!c.output.empty(), "output must not be empty");
  if (c.model == "small") {
    require(c.stages >= 2, "stages must be >= 2");
    require(c.width >= 2 && c.width % 2 == 0, "width must be even and >= 2");
    require(c.downsample_stage == 0 || (c.downsample_stage > 1 && c.downsample_stage < c.stages),
            "downsample_stage must be 0 or lie strictly between head and tail");
  }
  if (c.dataset == "synthetic") {
    require(c.classes >= 2, "classes must be >= 2");
    require(c.image_size >= 4, "image_size must be >= 4");
    require(c.model == "small" || c.image_size == 32, "named models take 32x32 inputs; set image_size to 32");
    require(c.classes == 10 || c.model == "small", "named models have 10 classes");
  }
}

std::string to_json(const RunConfig& config) { return to_json_value(config).dump(2); }

RunConfig config_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  return from_json_value(j);
}

double base_lr(const RunConfig& c) { return c.lr > 0 ? c.lr : optim::scaled_base_lr(c.k, c.batch); }

DType dtype_of(const RunConfig& c) { return c.dtype == "f64" ? DType::kF64 : DType::kF32; }

rev::Network build_model(const RunConfig& c) {
  if (c.model == "small") {
    rev::SmallOptions o;
    o.spatial = input_size(c);
    o.classes = class_count(c);
    o.downsample_stage = c.downsample_stage;
    return rev::build_small(c.stages, c.width, c.seed, dtype_of(c), o);
  }
  return rev::build_network(c.model, "cifar10", c.seed, dtype_of(c));
}

std::pair<data::Dataset, data::Dataset> load_data(const RunConfig& c) {
  data::Dataset train, test;
  if (c.dataset == "cifar10") {
    std::string dir = c.data_dir;
    if (dir.empty()) {
      const char* env = std::getenv("PETRA_DATA_DIR");
      if (env == nullptr || *env == '\0') {
        throw IoError("no CIFAR-10 location: set data_dir (--data-dir) or PETRA_DATA_DIR");
      }
      dir = env;
    }
    std::tie(train, test) = data::load_cifar10(dir);
    if (c.train_size > 0) train = data::head(train, c.train_size);
    if (c.test_size > 0) test = data::head(test, c.test_size);
  } else {
    Rng rng = Rng(c.seed).fork(0xda7a);
    std::tie(train, test) = data::synth_split(c.classes, c.train_size > 0 ? c.train_size : 2000,
                                              c.test_size > 0 ? c.test_size : 500,
                                              {3, c.image_size, c.image_size}, rng);
  }
  if (train.size() < c.batch) {
    throw ConfigError("training set has " + std::to_string(train.size()) + " samples, fewer than one batch of " +
                      std::to_string(c.batch));
  }
  const auto norm = data::channel_norm(train);
  return {data::normalized(train, norm), data::normalized(test, norm)};
}

TrainOutcome train(const RunConfig& c, std::ostream& log) {
  validate(c);
  auto [train_set, test_set] = load_data(c);
  data::AugmentConfig aug = augment_on(c) ? data::AugmentConfig::cifar() : data::AugmentConfig{};
  data::BatchIterator it(train_set, c.batch, aug, c.seed + 1, true, true, dtype_of(c));

  TrainOutcome out;
  out.base_lr = base_lr(c);
  out.network = build_model(c);

  const auto recipe = optim::preset(c.optimizer, out.base_lr, it.batches_per_epoch(), c.epochs);
  runtime::TrainConfig tc;
  tc.accumulation = c.k;
  tc.sgd = {c.momentum, c.weight_decay >= 0 ? c.weight_decay : recipe.weight_decay, true};
  tc.schedule = recipe.schedule;
  tc.schedule.warmup_epochs = c.warmup_epochs;
  tc.queue_capacity = static_cast<std::size_t>(c.queue_capacity);
  tc.log_events = c.events;

  const bool reference = c.engine == "reference-backprop";
  std::unique_ptr<runtime::Pipeline> pipe;
  std::unique_ptr<runtime::ReferenceTrainer> ref;
  if (reference) {
    ref = std::make_unique<runtime::ReferenceTrainer>(out.network, tc);
  } else {
    pipe = std::make_unique<runtime::Pipeline>(out.network, tc);
  }

  std::int64_t updates = 0;
  for (int e = 0; e < c.epochs; ++e) {
    const auto t0 = std::chrono::steady_clock::now();
    runtime::TrainLog tl;
    if (reference) {
      tl.engine = c.engine;
      for (std::int64_t i = 0; i < it.batches_per_epoch(); ++i) {
        auto b = it.batch(e, i);
        const auto r = ref->step({b.images, b.labels, e});
        tl.losses.push_back(r.loss);
        tl.loss_sum += r.loss;
        tl.correct += r.correct;
        tl.samples += r.samples;
        ++tl.micro_batches;
      }
      updates = ref->updates();
    } else {
      tl = pipe->run(runtime::engine_from_string(c.engine), runtime::epoch_source(it, e, 1));
      if (!tl.stages.empty()) updates += tl.stages.front().updates;
    }
    const double loss = tl.mean_loss();
    if (!std::isfinite(loss)) throw DivergenceError("training loss is not finite in epoch " + std::to_string(e + 1));

    const auto ev = runtime::evaluate(out.network, test_set, c.eval_batch, dtype_of(c));
    EpochMetrics m;
    m.epoch = e + 1;
    m.train_loss = loss;
    m.train_accuracy = tl.accuracy();
    m.test_loss = ev.loss;
    m.test_accuracy = ev.accuracy;
    m.lr = optim::lr_at(tc.schedule, (e + 1) * it.batches_per_epoch());
    m.updates = updates;
    m.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    out.epochs.push_back(m);

    log << "epoch " << m.epoch << '/' << c.epochs << std::fixed << std::setprecision(4) << "  train loss "
        << m.train_loss << " acc " << m.train_accuracy << "  test loss " << m.test_loss << " acc " << m.test_accuracy
        << "  lr " << m.lr << std::setprecision(1) << "  (" << m.seconds << " s)" << std::defaultfloat << '\n';
    log.flush();
    out.last_log = std::move(tl);
  }
  return out;
}

TrainOutcome train_and_save(const RunConfig& c, std::ostream& log) {
  validate(c);
  const std::filesystem::path dir = c.output;
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create output directory " + dir.string() + ": " + ec.message());
  write_file(dir / "config.json", to_json(c) + "\n");

  TrainOutcome out = train(c, log);

  std::ostringstream csv;
  csv << "epoch,train_loss,train_accuracy,test_loss,test_accuracy,lr,updates,seconds\n" << std::setprecision(17);
  for (const auto& m : out.epochs) {
    csv << m.epoch << ',' << m.train_loss << ',' << m.train_accuracy << ',' << m.test_loss << ',' << m.test_accuracy
        << ',' << m.lr << ',' << m.updates << ',' << m.seconds << '\n';
  }
  write_file(dir / "metrics.csv", csv.str());

  json epochs = json::array();
  for (const auto& m : out.epochs) {
    epochs.push_back({{"epoch", m.epoch},
                      {"train_loss", m.train_loss},
                      {"train_accuracy", m.train_accuracy},
                      {"test_loss", m.test_loss},
                      {"test_accuracy", m.test_accuracy},
                      {"lr", m.lr},
                      {"updates", m.updates}});
  }
  json summary = {{"config", to_json_value(c)},
                  {"base_lr", out.base_lr},
                  {"parameters", out.network.parameter_count()},
                  {"final_test_accuracy", out.epochs.back().test_accuracy},
                  {"final_train_loss", out.epochs.back().train_loss},
                  {"epochs", epochs},
                  {"last_epoch", json::parse(runtime::summary_json(out.last_log))}};
  write_file(dir / "summary.json", summary.dump(2) + "\n");
  rev::save_checkpoint(dir / "checkpoint.bin", out.network);
  if (c.events) runtime::write_events_csv(out.last_log, dir / "events.csv");
  log << "wrote " << (dir / "metrics.csv").string() << ", summary.json, checkpoint.bin, config.json\n";
  return out;
}

// ---------------------------------------------------------------------------

namespace {

// Binds a flag to a temporary and, when the flag is given, writes it into
// the config document under `key`.
class Overrides {
 public:
  template <typename T>
  void add(CLI::App& app, const std::string& flag, const std::string& key, const std::string& help) {
    auto value = std::make_shared<T>();
    CLI::Option* opt = app.add_option(flag, *value, help);
    apply_.push_back([opt, value, key](json& doc) {
      if (opt->count() > 0) doc[key] = *value;
    });
  }
  void add_flag(CLI::App& app, const std::string& flag, const std::string& key, const std::string& help) {
    auto value = std::make_shared<bool>(false);
    CLI::Option* opt = app.add_flag(flag, *value, help);
    apply_.push_back([opt, value, key](json& doc) {
      if (opt->count() > 0) doc[key] = *value;
    });
  }
  void apply(json& doc) const {
    for (const auto& f : apply_) f(doc);
  }

 private:
  std::vector<std::function<void(json&)>> apply_;
};

void add_run_options(CLI::App& app, Overrides& ov, std::string& config_path) {
  app.add_option("--config", config_path, "JSON run config; flags override its keys");
  ov.add<std::string>(app, "--model", "model", "small | revnet18/34/50 | resnet18/34/50");
  ov.add<int>(app, "--stages", "stages", "pipeline stages of the small model");
  ov.add<int>(app, "--width", "width", "channel width of the small model");
  ov.add<int>(app, "--downsample-stage", "downsample_stage", "stage replaced by a downsampling block (small)");
  ov.add<std::string>(app, "--dataset", "dataset", "synthetic | cifar10");
  ov.add<std::string>(app, "--data-dir", "data_dir", "CIFAR-10 root (falls back to PETRA_DATA_DIR)");
  ov.add<std::int64_t>(app, "--train-size", "train_size", "training samples (0 = default)");
  ov.add<std::int64_t>(app, "--test-size", "test_size", "test samples (0 = default)");
  ov.add<int>(app, "--classes", "classes", "synthetic classes");
  ov.add<int>(app, "--image-size", "image_size", "synthetic image side");
  ov.add<std::string>(app, "--engine", "engine", "lockstep | rounds | threads | reference-backprop");
  ov.add<int>(app, "--epochs", "epochs", "training epochs");
  ov.add<int>(app, "--batch", "batch", "micro-batch size");
  ov.add<int>(app, "--k", "k", "accumulation steps (1, 2, 4, 8, 16, 32)");
  ov.add<std::uint64_t>(app, "--seed", "seed", "seed for weights, data and shuffling");
  ov.add<std::string>(app, "--dtype", "dtype", "f32 | f64");
  ov.add<std::string>(app, "--optimizer", "optimizer", "schedule preset: desk | cifar10 | imagenet");
  ov.add<double>(app, "--lr", "lr", "base learning rate (0 = 0.1 * batch * k / 256)");
  ov.add<double>(app, "--warmup-epochs", "warmup_epochs", "linear warm-up length");
  ov.add<double>(app, "--momentum", "momentum", "Nesterov momentum");
  ov.add<double>(app, "--weight-decay", "weight_decay", "weight decay (negative = preset)");
  ov.add<std::string>(app, "--augment", "augment", "auto | on | off");
  ov.add<int>(app, "--queue-capacity", "queue_capacity", "threads engine queue bound");
  ov.add<int>(app, "--eval-batch", "eval_batch", "evaluation batch size");
  ov.add_flag(app, "--events", "events", "also write events.csv for the last epoch");
  ov.add<std::string>(app, "--output,-o", "output", "output directory");
}

RunConfig merged_config(const std::string& config_path, const Overrides& ov) {
  json doc = to_json_value(RunConfig{});
  if (!config_path.empty()) {
    const json file = json::parse(read_file(config_path), nullptr, false);
    if (file.is_discarded()) throw ConfigError(config_path + " is not valid JSON");
    from_json_value(file);  // rejects unknown keys and bad types
    doc.update(file);
  }
  ov.apply(doc);
  RunConfig c = from_json_value(doc);
  validate(c);
  return c;
}

std::string memory_csv(std::span<const cost::MemoryReport> reports) {
  std::ostringstream os;
  os << "input_buffer,param_buffer,model_bytes,input_buffer_bytes,param_buffer_bytes,total_bytes,saving_percent\n";
  for (const auto& r : reports) {
    os << r.config.use_input_buffer << ',' << r.config.use_param_buffer << ',' << r.model_bytes << ','
       << r.input_buffer_bytes << ',' << r.param_buffer_bytes << ',' << r.total_bytes << ',' << std::setprecision(17)
       << r.savings_percent << '\n';
  }
  return os.str();
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Decoupled pipeline training for reversible networks"};
  app.require_subcommand(1);
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);

  std::string train_config;
  Overrides train_ov;
  CLI::App* train_cmd = app.add_subcommand("train", "train a model and write metrics, summary and checkpoint");
  add_run_options(*train_cmd, train_ov, train_config);

  std::string eval_run, eval_config, eval_checkpoint;
  Overrides eval_ov;
  CLI::App* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on the test split");
  eval_cmd->add_option("--run", eval_run, "run directory holding config.json and checkpoint.bin");
  eval_cmd->add_option("--checkpoint", eval_checkpoint, "checkpoint path (overrides --run)");
  add_run_options(*eval_cmd, eval_ov, eval_config);

  int J = 10, j = 1, k = 1, bytes = 4;
  std::int64_t batch = 64;
  std::string method, csv_path, memory_csv_path, mem_model = "revnet50", mem_dataset = "imagenet";
  bool no_memory = false;
  CLI::App* cost_cmd = app.add_subcommand("cost", "cost comparison of training methods and buffer memory");
  cost_cmd->add_option("--J", J, "number of stages");
  cost_cmd->add_option("--j", j, "stage index for per-stage columns");
  cost_cmd->add_option("--k", k, "accumulation steps");
  cost_cmd->add_option("--method", method, "show one method only");
  cost_cmd->add_option("--csv", csv_path, "write the method table as CSV");
  cost_cmd->add_option("--memory-csv", memory_csv_path, "write the memory report as CSV");
  cost_cmd->add_option("--model", mem_model, "network for the memory report");
  cost_cmd->add_option("--dataset", mem_dataset, "cifar10 | imagenet layout for the memory report");
  cost_cmd->add_option("--batch", batch, "batch size for the memory report");
  cost_cmd->add_option("--bytes", bytes, "bytes per scalar");
  cost_cmd->add_flag("--no-memory", no_memory, "skip the memory report");

  std::string suite;
  verify::Options vo;
  CLI::App* verify_cmd = app.add_subcommand("verify", "run a self-check suite");
  verify_cmd->add_option("suite", suite, "grad | reversibility | staleness | oracle | all")->required();
  verify_cmd->add_option("--J", vo.stages, "stages for the staleness suite");
  verify_cmd->add_option("--micro-batches", vo.micro_batches, "micro-batches for the staleness suite");
  verify_cmd->add_option("--seed", vo.seed, "seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    std::ostringstream o, er;
    const int code = app.exit(e, o, er);
    out << o.str();
    err << er.str();
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (*train_cmd) {
      train_and_save(merged_config(train_config, train_ov), out);
      return kExitOk;
    }
    if (*eval_cmd) {
      std::string cfg_path = eval_config;
      if (cfg_path.empty() && !eval_run.empty()) cfg_path = (std::filesystem::path(eval_run) / "config.json").string();
      RunConfig c = merged_config(cfg_path, eval_ov);
      std::filesystem::path ckpt = eval_checkpoint;
      if (ckpt.empty()) {
        if (eval_run.empty()) throw ConfigError("eval needs --run or --checkpoint");
        ckpt = std::filesystem::path(eval_run) / "checkpoint.bin";
      }
      auto net = build_model(c);
      rev::load_checkpoint(ckpt, net);
      auto [train_set, test_set] = load_data(c);
      const auto r = runtime::evaluate(net, test_set, c.eval_batch, dtype_of(c));
      out << "test loss " << std::setprecision(6) << r.loss << "  accuracy " << r.accuracy << "  samples " << r.samples
          << '\n';
      return kExitOk;
    }
    if (*cost_cmd) {
      require(J >= 2, "cost needs J >= 2");
      std::string table = cost::table1_text(J, j, k);
      if (!method.empty()) {
        const std::string name = cost::to_string(cost::method_from_string(method));
        std::istringstream lines(table);
        std::ostringstream kept;
        std::string line;
        for (int n = 0; std::getline(lines, line); ++n) {
          if (n < 2 || line.rfind(name + " ", 0) == 0) kept << line << '\n';
        }
        table = kept.str();
      }
      out << table << "\nsimulated mean time per batch (" << 20 * J << " micro-batches):";
      for (cost::Method m : cost::all_methods()) {
        out << ' ' << cost::to_string(m) << '=' << cost::simulate_latency(m, J, 20 * J);
      }
      out << "\nbackprop / petra mean-time ratio: "
          << cost::table1_row(cost::Method::kBackprop, J, j, k).mean_time /
                 cost::table1_row(cost::Method::kPetra, J, j, k).mean_time
          << '\n';
      if (!csv_path.empty()) write_file(csv_path, cost::table1_csv(J, j, k));
      if (!no_memory) {
        const auto plan = rev::build_plan(mem_model, mem_dataset);
        std::vector<cost::MemoryReport> reports;
        for (auto [in, pr] : {std::pair{true, true}, {false, true}, {true, false}, {false, false}}) {
          reports.push_back(cost::memory_report(plan, {in, pr, static_cast<std::size_t>(bytes), k}, batch));
        }
        out << "\nbuffer memory, " << mem_model << " (" << mem_dataset << "), batch " << batch << ", J = "
            << plan.size() << ":\n"
            << cost::memory_text(reports);
        if (!memory_csv_path.empty()) write_file(memory_csv_path, memory_csv(reports));
      }
      return kExitOk;
    }
    if (*verify_cmd) {
      std::vector<std::string> names = suite == "all" ? verify::suites() : std::vector<std::string>{suite};
      bool ok = true;
      for (const auto& name : names) {
        const auto r = verify::run(name, vo);
        out << r.text();
        ok = ok && r.passed();
      }
      return ok ? kExitOk : kExitVerify;
    }
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const IoError& e) {
    err << "io error: " << e.what() << '\n';
    return kExitIo;
  } catch (const DivergenceError& e) {
    err << "diverged: " << e.what() << '\n';
    return kExitDivergence;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitInternal;
  }
  return kExitInternal;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  std::vector<const char*> argv{"petra"};
  for (const auto& a : args) argv.push_back(a.c_str());
  return run(static_cast<int>(argv.size()), argv.data(), out, err);
}

}  // namespace petra::cli
