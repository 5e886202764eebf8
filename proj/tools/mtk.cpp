// mtk: command-line driver for the multi-task-key pipeline.
//
//   mtk gen-data --out data/            synthetic train/test sets plus a default key set
//   mtk stats --data data/train.mtkd    correlation scan
//   mtk decouple --data ... --out ...   relabel correlated class pairs
//   mtk build --data ... --keys ...     keyed training set (D0, D1, ...)
//   mtk train --keyed ... --out ...     MTK training
//   mtk train-baseline --data ...       plain multi-task training
//   mtk eval --checkpoint ...           protection and gap reports
//   mtk sweep --checkpoint ...          partial-key cosine/accuracy curves
//   mtk serve --checkpoint ...          line-JSON inference server
//
// Each run writes <out>/<subcommand>.manifest.json.

#include <signal.h>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "mtk/authz.hpp"
#include "mtk/checkpoint.hpp"
#include "mtk/dataset.hpp"
#include "mtk/decouple.hpp"
#include "mtk/eval.hpp"
#include "mtk/mtk_build.hpp"
#include "mtk/synth.hpp"
#include "mtk/trainer.hpp"
#include "mtk/trigger.hpp"

#ifndef MTK_GIT_DESCRIBE
#define MTK_GIT_DESCRIBE "unknown"
#endif

namespace fs = std::filesystem;
using nlohmann::json;
using namespace mtk;

namespace {

// Defaults for every section of the pipeline config; a --config file overrides
// any subset of keys.
json default_config() {
  return {
      {"seed", 7},
      {"data",
       {{"n", 15000},
        {"train_fraction", 0.8},
        {"classes", {4, 2, 5}},
        {"secured", {0, 2}},
        {"image", {32, 32, 3}},
        {"noise", 0.05},
        {"band_noise", json::array()},
        {"correlations", json::array()}}},
      {"keys", {{"side", 5}}},
      {"decouple", {{"tau", 0.15}}},
      {"train", to_json(TrainConfig{})},
      {"model", nullptr},
      {"sweep", {{"pixels", {1, 3, 5, 7, 9, 13, 17, 21, 25}}, {"magnitude", {0.05, 0.1, 0.2, 0.3, 0.5, 0.7, 1.0}}}},
  };
}

std::string read_text(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw Error("cannot open " + p.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

json read_json(const fs::path& p) {
  json j = json::parse(read_text(p), nullptr, false);
  if (j.is_discarded()) throw InvalidInput(p.string() + " is not valid JSON");
  return j;
}

void write_text(const fs::path& p, const std::string& s) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary);
  if (!out) throw Error("cannot write " + p.string());
  out << s;
}

void need_file(const fs::path& p, const char* what) {
  if (!fs::exists(p)) throw Error(std::string(what) + " not found: " + p.string());
}

std::string file_hash(const fs::path& p) {
  const fs::path target = fs::is_directory(p) ? p / "manifest.json" : p;
  auto bytes = detail::read_file(target);
  std::uint64_t h = 14695981039346656037ull;
  for (char c : bytes) {
    h ^= static_cast<unsigned char>(c);
    h *= 1099511628211ull;
  }
  char hex[17];
  std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(h));
  return hex;
}

struct Run {
  std::string name;
  json config = default_config();
  std::string config_path;
  std::optional<std::uint64_t> seed_override;
  std::string out = ".";
  json inputs = json::object();
  json outputs = json::array();
  std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();

  void load() {
    if (!config_path.empty()) {
      need_file(config_path, "config");
      config.merge_patch(read_json(config_path));
    }
    if (seed_override) config["seed"] = *seed_override;
  }

  std::uint64_t seed() const { return config.at("seed").get<std::uint64_t>(); }

  fs::path input(const std::string& role, const std::string& path, const char* what) {
    need_file(path, what);
    inputs[role] = {{"path", path}, {"fnv1a", file_hash(path)}};
    return path;
  }

  fs::path output(const std::string& file) {
    fs::create_directories(out);
    outputs.push_back(file);
    return fs::path(out) / file;
  }

  void finish(json extra = json::object()) {
    json m = {{"subcommand", name},
              {"git_describe", MTK_GIT_DESCRIBE},
              {"seed", seed()},
              {"config", config},
              {"inputs", inputs},
              {"outputs", outputs},
              {"threads", threads_from_env()},
              {"duration_seconds",
               std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count()}};
    for (auto& [k, v] : extra.items()) m[k] = v;
    fs::create_directories(out);
    write_text(fs::path(out) / (name + ".manifest.json"), m.dump(2) + "\n");
  }
};

std::vector<TaskSpec> tasks_from_config(const json& data) {
  auto classes = data.at("classes").get<std::vector<std::size_t>>();
  std::vector<bool> secured(classes.size(), false);
  for (std::size_t t : data.at("secured").get<std::vector<std::size_t>>()) {
    require(t < classes.size(), "secured task " + std::to_string(t) + " does not exist");
    secured[t] = true;
  }
  return make_tasks(classes, secured);
}

ImageShape image_from_config(const json& data) {
  auto d = data.at("image").get<std::vector<std::size_t>>();
  require(d.size() == 3, "image must be [H, W, C]");
  return {d[0], d[1], d[2]};
}

ModelSpec model_for(const Run& run, const MultiTaskDataset& ds) {
  if (run.config.contains("model") && !run.config["model"].is_null()) return model_spec_from_json(run.config["model"]);
  std::vector<std::size_t> heads;
  for (const auto& t : ds.tasks()) heads.push_back(t.classes);
  return default_model_spec(ds.shape(), heads);
}

TrainConfig train_config(const Run& run) {
  auto cfg = train_config_from_json(run.config.at("train"));
  cfg.seed = run.seed();
  cfg.threads = threads_from_env();
  return cfg;
}

std::vector<TriggerKey> load_keys(const fs::path& p, ImageShape image) { return key_set_from_json(read_json(p), image); }

std::string json_line(const json& j) { return j.dump() + "\n"; }

// ---- subcommands ----------------------------------------------------------------

void gen_data(Run& run, std::optional<std::size_t> n_override) {
  const json& d = run.config.at("data");
  auto tasks = tasks_from_config(d);
  RenderSpec render;
  render.shape = image_from_config(d);
  render.noise_sigma = d.at("noise").get<double>();
  render.band_noise = d.at("band_noise").get<std::vector<double>>();
  json joint_cfg = {{"classes", d.at("classes")}, {"correlations", d.at("correlations")}};
  if (d.contains("marginals")) joint_cfg["marginals"] = d.at("marginals");
  auto joint = joint_from_json(joint_cfg);
  const std::size_t n = n_override.value_or(d.at("n").get<std::size_t>());
  auto all = generate_synthetic(joint, render, tasks, n, run.seed());
  auto [train, test] = split(all, d.at("train_fraction").get<double>(), run.seed());
  save(train, run.output("train.mtkd"));
  save(test, run.output("test.mtkd"));
  auto keys = default_key_set(tasks, render.shape, run.config.at("keys").at("side").get<std::size_t>());
  write_text(run.output("keys.json"), json_line(to_json(keys)));
  run.finish({{"samples", {{"train", train.size()}, {"test", test.size()}}}});
}

void stats(Run& run, const std::string& data) {
  auto ds = load(run.input("data", data, "dataset"));
  DecoupleConfig cfg{run.config.at("decouple").at("tau").get<double>()};
  auto found = scan(ds, cfg);
  json above = json::array(), actions = json::array();
  for (const auto& e : found.above_tau) above.push_back(to_json(e));
  for (const auto& a : found.actions) {
    json j = to_json(a.entry);
    j["gamma"] = a.gamma;
    j["beta"] = a.beta;
    j["n_cond"] = a.n_cond;
    j["n_joint"] = a.n_joint;
    actions.push_back(std::move(j));
  }
  json marginals = json::array();
  for (std::size_t t = 0; t < ds.task_count(); ++t) {
    std::vector<double> m;
    for (std::size_t c = 0; c < ds.tasks()[t].classes; ++c) m.push_back(empirical_marginal(ds, t, c));
    marginals.push_back(m);
  }
  json out = {{"tau", cfg.tau},       {"cap", DecoupleConfig::cap}, {"samples", ds.size()},
              {"marginals", marginals}, {"correlations", above},     {"actions", actions}};
  write_text(run.output("stats.json"), json_line(out));
  std::cout << above.size() << " correlation(s) above tau, " << actions.size() << " action(s)\n";
  run.finish();
}

void decouple_cmd(Run& run, const std::string& data) {
  auto ds = load(run.input("data", data, "dataset"));
  DecoupleConfig cfg{run.config.at("decouple").at("tau").get<double>()};
  auto [out, report] = decouple(ds, cfg, run.seed());
  save(out, run.output("decoupled.mtkd"));
  write_text(run.output("decouple.json"), json_line(to_json(report)));
  for (const auto& a : report.actions)
    for (const auto& w : a.warnings) std::cerr << "warning: " << w << "\n";
  run.finish({{"actions", report.actions.size()}});
}

void build_cmd(Run& run, const std::string& data, const std::string& keys_path) {
  auto ds = load(run.input("data", data, "dataset"));
  auto keys = load_keys(run.input("keys", keys_path, "key set"), ds.shape());
  auto set = build_all(ds, keys, run.seed());
  save_keyed(set, run.output("keyed"));
  run.finish({{"total", set.total_size()}});
}

json history_summary(const TrainHistory& h) {
  double seconds = 0.0;
  for (double s : h.seconds) seconds += s;
  return {{"epochs", h.loss.size()}, {"epoch_seconds", h.seconds}, {"train_seconds", seconds}};
}

void train_cmd(Run& run, const std::string& keyed_dir) {
  need_file(keyed_dir, "keyed training set");
  auto set = load_keyed(run.input("keyed", keyed_dir, "keyed training set"));
  auto spec = model_for(run, set.parts.front());
  auto result = train(spec, set, train_config(run));
  save_checkpoint({spec, result.params}, run.output("model.mtkw"));
  write_text(run.output("history.csv"), history_csv(result.history));
  run.finish(history_summary(result.history));
}

void train_baseline_cmd(Run& run, const std::string& data) {
  auto ds = load(run.input("data", data, "dataset"));
  auto spec = model_for(run, ds);
  auto result = train_baseline(spec, ds, train_config(run));
  save_checkpoint({spec, result.params}, run.output("baseline.mtkw"));
  write_text(run.output("baseline_history.csv"), history_csv(result.history));
  run.finish(history_summary(result.history));
}

std::vector<Model> load_models(Run& run, const std::vector<std::string>& paths, const std::string& role) {
  std::vector<Model> models;
  for (std::size_t i = 0; i < paths.size(); ++i)
    models.push_back(load_checkpoint(run.input(role + std::to_string(i), paths[i], "checkpoint")));
  return models;
}

std::array<std::size_t, 4> parse_pair(const std::string& s) {
  std::array<std::size_t, 4> v{};
  char sep[3];
  if (std::sscanf(s.c_str(), "%zu%c%zu%c%zu%c%zu", &v[0], &sep[0], &v[1], &sep[1], &v[2], &sep[2], &v[3]) != 7)
    throw InvalidInput("--gap expects j,k,i,c; got '" + s + "'");
  return v;
}

void eval_cmd(Run& run, const std::vector<std::string>& paths, const std::vector<std::string>& baselines,
              const std::string& data, const std::string& train_data, const std::string& keys_path,
              const std::vector<std::string>& gaps) {
  std::vector<std::string> checkpoints = paths;
  if (checkpoints.empty()) checkpoints.push_back((fs::path(run.out) / "model.mtkw").string());
  for (const auto& c : checkpoints) need_file(c, "checkpoint");
  auto models = load_models(run, checkpoints, "checkpoint");
  auto test = load(run.input("data", data, "dataset"));
  auto keys = load_keys(run.input("keys", keys_path, "key set"), test.shape());
  validate_key_set(keys, test.tasks());
  for (const auto& m : models)
    require(m.spec.input == test.shape() && m.spec.heads.size() == test.task_count(),
            "checkpoint does not match the evaluation dataset");

  auto report = protection_report(models, test, keys);
  std::string csv = std::string(kReportCsvHeader) + protection_csv(report);
  json out = {{"protection", to_json(report)}};

  if (!baselines.empty()) {
    auto base = load_models(run, baselines, "baseline");
    auto base_report = protection_report(base, test, {});
    std::ostringstream rows;
    for (std::size_t t = 0; t < test.task_count(); ++t)
      detail::csv_row(rows, "baseline", "none", t, base_report.rows[0].accuracy[t], base_report.rows[0].halfwidth[t]);
    csv += rows.str();
    out["baseline"] = to_json(base_report);
  }
  write_text(run.output("protection.csv"), csv);

  if (!train_data.empty()) {
    auto train = load(run.input("train", train_data, "training dataset"));
    std::vector<std::array<std::size_t, 4>> pairs;
    for (const auto& g : gaps) pairs.push_back(parse_pair(g));
    if (pairs.empty()) {
      DecoupleConfig cfg{run.config.at("decouple").at("tau").get<double>()};
      for (const auto& e : scan(train, cfg).actions)
        pairs.push_back({e.entry.source_task, e.entry.source_class, e.entry.target_task, e.entry.target_class});
    }
    std::vector<GapRow> rows;
    for (const auto& [j, k, i, c] : pairs) {
      GapRow mean{j, k, i, c, 0.0, 0.0, 0.0};
      for (const auto& m : models) {
        Evaluator net(m.spec, m.params);
        auto r = gap_row(net, train, test, j, k, i, c, keys);
        mean.label_gap = r.label_gap;
        mean.train += r.train / static_cast<double>(models.size());
        mean.test += r.test / static_cast<double>(models.size());
      }
      rows.push_back(mean);
    }
    write_text(run.output("gap.csv"), std::string(kReportCsvHeader) + gap_csv(rows));
    out["gap"] = to_json(rows);
  }
  write_text(run.output("eval.json"), json_line(out));
  std::cout << csv;
  run.finish();
}

void sweep_cmd(Run& run, const std::string& checkpoint, const std::string& data, const std::string& keys_path,
               const std::string& key_id) {
  need_file(checkpoint, "checkpoint");
  auto model = load_checkpoint(run.input("checkpoint", checkpoint, "checkpoint"));
  auto test = load(run.input("data", data, "dataset"));
  auto keys = load_keys(run.input("keys", keys_path, "key set"), test.shape());
  require(!keys.empty(), "key set is empty");
  const TriggerKey* key = &keys.front();
  if (!key_id.empty()) {
    key = nullptr;
    for (const auto& k : keys)
      if (k.id == key_id) key = &k;
    require(key != nullptr, "no key with id '" + key_id + "'");
  }
  Evaluator net(model.spec, model.params);
  const auto& cfg = run.config.at("sweep");
  std::vector<double> pixels;
  for (double v : cfg.at("pixels").get<std::vector<double>>())
    if (v <= static_cast<double>(key->pixel_count())) pixels.push_back(v);
  if (pixels.empty() || pixels.back() != static_cast<double>(key->pixel_count()))
    pixels.push_back(static_cast<double>(key->pixel_count()));
  auto by_pixels = similarity_accuracy_sweep(net, test, *key, SweepKind::pixel_count, pixels);
  auto by_magnitude =
      similarity_accuracy_sweep(net, test, *key, SweepKind::magnitude, cfg.at("magnitude").get<std::vector<double>>());
  write_text(run.output("sweep.csv"), std::string(kReportCsvHeader) + sweep_csv(by_pixels) + sweep_csv(by_magnitude));
  auto rho = [](const SimilarityCurve& c) {
    std::vector<double> cs, acc;
    for (const auto& p : c.points) {
      cs.push_back(p.cosine_full);
      acc.push_back(p.accuracy);
    }
    return spearman(cs, acc);
  };
  json out = {{"pixels", to_json(by_pixels)},
              {"magnitude", to_json(by_magnitude)},
              {"spearman", {{"pixels", rho(by_pixels)}, {"magnitude", rho(by_magnitude)}}}};
  write_text(run.output("sweep.json"), json_line(out));
  std::printf("spearman pixels %.4f magnitude %.4f\n", rho(by_pixels), rho(by_magnitude));
  run.finish();
}

void serve_cmd(Run& run, const std::string& checkpoint, const std::string& data, const std::string& keys_path,
               const std::string& grants_path, const std::string& host, std::uint16_t port, bool upload) {
  need_file(checkpoint, "checkpoint");
  auto model = load_checkpoint(run.input("checkpoint", checkpoint, "checkpoint"));
  auto ds = load(run.input("data", data, "dataset"));
  auto keys = load_keys(run.input("keys", keys_path, "key set"), ds.shape());
  auto grants = grants_from_json(read_json(run.input("grants", grants_path, "grants file")));
  InferenceService service(model, std::move(ds), std::move(grants), std::move(keys), upload);

  sigset_t set;
  sigemptyset(&set);
  sigaddset(&set, SIGINT);
  sigaddset(&set, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &set, nullptr);
  TcpServer server(service, host, port);
  server.start();
  std::cout << "listening on " << host << ":" << server.port() << std::endl;
  int sig = 0;
  sigwait(&set, &sig);
  server.stop();
  run.finish({{"port", server.port()}});
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-task trigger-key training, evaluation and serving"};
  app.require_subcommand(1);
  Run run;

  auto common = [&run](CLI::App* sub) {
    sub->add_option("--config", run.config_path, "pipeline config JSON");
    sub->add_option("--seed", run.seed_override, "seed override");
    sub->add_option("--out", run.out, "output directory")->capture_default_str();
  };

  std::optional<std::size_t> n_override;
  std::string data, train_data, keys, keyed, grants, checkpoint, key_id, host = "127.0.0.1";
  std::vector<std::string> checkpoints, baselines, gaps;
  std::uint16_t port = 0;
  bool upload = false;

  auto* gen = app.add_subcommand("gen-data", "generate synthetic train/test sets and a default key set");
  common(gen);
  gen->add_option("--n", n_override, "total samples before the split");

  auto* st = app.add_subcommand("stats", "scan pairwise label correlations");
  common(st);
  st->add_option("--data", data, "dataset")->required();

  auto* dec = app.add_subcommand("decouple", "relabel correlated class pairs");
  common(dec);
  dec->add_option("--data", data, "dataset")->required();

  auto* bld = app.add_subcommand("build", "build the keyed training set");
  common(bld);
  bld->add_option("--data", data, "training dataset")->required();
  bld->add_option("--keys", keys, "key set JSON")->required();

  auto* tr = app.add_subcommand("train", "train on a keyed training set");
  common(tr);
  tr->add_option("--keyed", keyed, "keyed training set directory")->required();

  auto* trb = app.add_subcommand("train-baseline", "train without keys");
  common(trb);
  trb->add_option("--data", data, "training dataset")->required();

  auto* ev = app.add_subcommand("eval", "protection and prediction-gap reports");
  common(ev);
  ev->add_option("--checkpoint", checkpoints, "MTK checkpoint, repeat for trials (default: <out>/model.mtkw)");
  ev->add_option("--baseline", baselines, "baseline checkpoint (repeat for trials)");
  ev->add_option("--data", data, "test dataset")->required();
  ev->add_option("--train", train_data, "training dataset for the gap report");
  ev->add_option("--keys", keys, "key set JSON")->required();
  ev->add_option("--gap", gaps, "class pair j,k,i,c (default: pairs above tau in --train)");

  auto* sw = app.add_subcommand("sweep", "partial-key cosine and accuracy sweeps");
  common(sw);
  sw->add_option("--checkpoint", checkpoint, "checkpoint")->required();
  sw->add_option("--data", data, "test dataset")->required();
  sw->add_option("--keys", keys, "key set JSON")->required();
  sw->add_option("--key", key_id, "key id (default: first key)");

  auto* sv = app.add_subcommand("serve", "serve authorization-gated predictions over TCP");
  common(sv);
  sv->add_option("--checkpoint", checkpoint, "checkpoint")->required();
  sv->add_option("--data", data, "dataset the server holds")->required();
  sv->add_option("--keys", keys, "key set JSON")->required();
  sv->add_option("--grants", grants, "grants JSON")->required();
  sv->add_option("--host", host)->capture_default_str();
  sv->add_option("--port", port, "0 picks a free port")->capture_default_str();
  sv->add_flag("--allow-upload", upload, "accept raw samples in requests");

  CLI11_PARSE(app, argc, argv);
  auto* sub = app.get_subcommands().front();
  run.name = sub->get_name();
  try {
    run.load();
    if (sub == gen) gen_data(run, n_override);
    else if (sub == st) stats(run, data);
    else if (sub == dec) decouple_cmd(run, data);
    else if (sub == bld) build_cmd(run, data, keys);
    else if (sub == tr) train_cmd(run, keyed);
    else if (sub == trb) train_baseline_cmd(run, data);
    else if (sub == ev) eval_cmd(run, checkpoints, baselines, data, train_data, keys, gaps);
    else if (sub == sw) sweep_cmd(run, checkpoint, data, keys, key_id);
    else if (sub == sv) serve_cmd(run, checkpoint, data, keys, grants, host, port, upload);
  } catch (const std::exception& e) {
    std::cerr << "mtk " << run.name << ": error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
