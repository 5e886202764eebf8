// Desk-scale acceptance run. Prints one PASS/FAIL line per criterion, then a
// summary; exits non-zero when any criterion fails.
//
// MTK_ACCEPT_SEEDS overrides the trial count (default 5) for quick local runs.

#include <algorithm>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <future>
#include <random>
#include <string>
#include <vector>

#include "fd_check.hpp"
#include "mtk/authz.hpp"
#include "mtk/decouple.hpp"
#include "mtk/eval.hpp"
#include "mtk/mtk_build.hpp"
#include "mtk/synth.hpp"
#include "mtk/trainer.hpp"

using namespace mtk;

namespace {

const std::vector<std::size_t> kClasses = {4, 2, 5};
const std::vector<bool> kSecured = {true, false, true};
constexpr std::size_t kSamples = 15000;  // 12000 train / 3000 test
constexpr double kTrainFraction = 0.8;

// planted-correlation run
constexpr double kPlantProbability = 0.6;
constexpr double kPlantBandNoise = 1.2;
constexpr std::uint64_t kPlantDataSeed = 11;

struct Verdict {
  int id;
  bool pass;
  std::string name;
  std::string detail;
};

std::vector<Verdict> verdicts;

void report(int id, bool pass, const std::string& name, const std::string& detail) {
  verdicts.push_back({id, pass, name, detail});
  std::printf("criterion %2d %s  %s: %s\n", id, pass ? "PASS" : "FAIL", name.c_str(), detail.c_str());
  std::fflush(stdout);
}

std::string fmt(const char* f, ...) {
  char buf[1024];
  va_list ap;
  va_start(ap, f);
  std::vsnprintf(buf, sizeof buf, f, ap);
  va_end(ap);
  return buf;
}

std::vector<TaskSpec> tasks() { return make_tasks(kClasses, kSecured); }

struct DeskRun {
  MultiTaskDataset train, test;
  std::vector<TriggerKey> keys;
  ModelSpec spec;
  Model mtk, baseline;
  TrainHistory mtk_history, baseline_history;
};

DeskRun desk_run(std::uint64_t seed) {
  RenderSpec render;
  auto all = generate_synthetic(JointLabelModel::uniform(kClasses), render, tasks(), kSamples, seed);
  auto [train_set, test_set] = split(all, kTrainFraction, seed);
  auto keys = default_key_set(tasks(), render.shape);
  auto spec = default_model_spec(render.shape, kClasses);
  TrainConfig cfg;
  cfg.seed = seed;
  auto m = train(spec, build_all(train_set, keys, seed), cfg);
  auto b = train_baseline(spec, train_set, cfg);
  return {train_set, test_set, keys, spec, {spec, m.params}, {spec, b.params}, m.history, b.history};
}

double mean(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

std::string join(const std::vector<double>& v) {
  std::string s;
  for (double x : v) s += (s.empty() ? "" : " ") + fmt("%.4f", x);
  return s;
}

const std::vector<double> kPixelSquare = {1, 3, 5, 7, 9, 13, 17, 21, 25};
const std::vector<double> kPixelCross = {1, 2, 3, 4, 5, 6, 7, 8, 9};
const std::vector<double> kMagnitudes = {0.05, 0.1, 0.2, 0.3, 0.5, 0.7, 1.0};

// Every report CSV a pipeline run emits, concatenated.
std::string report_csvs(const DeskRun& r) {
  std::vector<Model> models = {r.mtk};
  std::string out = history_csv(r.mtk_history) + history_csv(r.baseline_history);
  out += kReportCsvHeader + protection_csv(protection_report(models, r.test, r.keys));
  Evaluator net(r.spec, r.mtk.params);
  out += kReportCsvHeader;
  for (const auto& key : r.keys) {
    out += sweep_csv(similarity_accuracy_sweep(net, r.test, key, SweepKind::pixel_count,
                                               key.pixel_count() == 25 ? kPixelSquare : kPixelCross));
    out += sweep_csv(similarity_accuracy_sweep(net, r.test, key, SweepKind::magnitude, kMagnitudes));
  }
  return out;
}

// ---- criteria 1-4, 6, 11, 12 on desk runs ------------------------------------------

void desk_criteria(std::size_t trials) {
  std::vector<DeskRun> runs;
  for (std::size_t s = 1; s <= trials; ++s) {
    runs.push_back(desk_run(s));
    std::printf("  desk run seed %zu trained\n", s);
    std::fflush(stdout);
  }

  // [seed] accuracies
  std::vector<double> plain0, plain2, keyed0, keyed2, base0, base2, base1, cross0, cross2;
  std::vector<std::vector<double>> unprot(4);  // none, key0, key2, sequential
  for (const auto& r : runs) {
    Evaluator net(r.spec, r.mtk.params);
    Evaluator bnet(r.spec, r.baseline.params);
    const auto& k0 = r.keys[0];
    const auto& k2 = r.keys[1];
    plain0.push_back(task_accuracy(net, r.test, 0));
    plain2.push_back(task_accuracy(net, r.test, 2));
    keyed0.push_back(task_accuracy(net, r.test, 0, &k0));
    keyed2.push_back(task_accuracy(net, r.test, 2, &k2));
    cross2.push_back(task_accuracy(net, r.test, 2, &k0));
    cross0.push_back(task_accuracy(net, r.test, 0, &k2));
    base0.push_back(task_accuracy(bnet, r.test, 0));
    base1.push_back(task_accuracy(bnet, r.test, 1));
    base2.push_back(task_accuracy(bnet, r.test, 2));
    unprot[0].push_back(task_accuracy(net, r.test, 1));
    unprot[1].push_back(task_accuracy(net, r.test, 1, &k0));
    unprot[2].push_back(task_accuracy(net, r.test, 1, &k2));
    // sequential grant: the unprotected task is read from plain x
    unprot[3].push_back(unprot[0].back());
  }

  {
    const double d0 = std::abs(mean(plain0) - 0.25), d2 = std::abs(mean(plain2) - 0.2);
    report(1, d0 <= 0.08 && d2 <= 0.08, "protection",
           fmt("no-key task0 mean %.4f (|d|=%.4f) [%s], task2 mean %.4f (|d|=%.4f) [%s], bound 0.08", mean(plain0), d0,
               join(plain0).c_str(), mean(plain2), d2, join(plain2).c_str()));
  }
  {
    const double d0 = mean(base0) - mean(keyed0), d2 = mean(base2) - mean(keyed2);
    report(2, std::abs(d0) <= 0.05 && std::abs(d2) <= 0.05, "revelation",
           fmt("task0 keyed %.4f vs baseline %.4f, task2 keyed %.4f vs baseline %.4f, bound 0.05", mean(keyed0),
               mean(base0), mean(keyed2), mean(base2)));
  }
  {
    const double d2 = std::abs(mean(cross2) - 0.2), d0 = std::abs(mean(cross0) - 0.25);
    report(3, d0 <= 0.08 && d2 <= 0.08, "cross-key isolation",
           fmt("key0 on task2 %.4f (|d|=%.4f) [%s], key2 on task0 %.4f (|d|=%.4f) [%s], bound 0.08", mean(cross2), d2,
               join(cross2).c_str(), mean(cross0), d0, join(cross0).c_str()));
  }
  {
    const char* names[] = {"none", "key0", "key2", "sequential"};
    double worst = 0.0;
    std::string detail = fmt("baseline %.4f;", mean(base1));
    for (std::size_t c = 0; c < 4; ++c) {
      worst = std::max(worst, std::abs(mean(unprot[c]) - mean(base1)));
      detail += fmt(" %s %.4f", names[c], mean(unprot[c]));
    }
    report(4, worst <= 0.03, "unprotected stability", detail + fmt("; worst |d| %.4f, bound 0.03", worst));
  }

  // criterion 6 on the first run
  {
    const auto& r = runs.front();
    Evaluator net(r.spec, r.mtk.params);
    bool pass = true;
    std::string detail;
    for (const auto& key : r.keys) {
      const auto& pixels = key.pixel_count() == 25 ? kPixelSquare : kPixelCross;
      for (auto [kind, settings] : {std::pair{SweepKind::pixel_count, pixels}, std::pair{SweepKind::magnitude, kMagnitudes}}) {
        auto curve = similarity_accuracy_sweep(net, r.test, key, kind, settings);
        std::vector<double> cos, acc;
        for (const auto& p : curve.points) {
          cos.push_back(p.cosine_full);
          acc.push_back(p.accuracy);
        }
        const double rho = spearman(cos, acc);
        const bool endpoint = curve.points.back().cosine_full == 1.0;
        pass = pass && rho >= 0.8 && endpoint && settings.size() >= 6;
        detail += fmt("%s%s/%s rho %.3f over %zu points, endpoint cosine %s", detail.empty() ? "" : "; ", key.id.c_str(),
                      kind == SweepKind::magnitude ? "magnitude" : "pixels", rho, settings.size(),
                      endpoint ? "1.0" : fmt("%.17g", curve.points.back().cosine_full).c_str());
      }
    }
    report(6, pass, "similarity vs accuracy", detail);
  }

  // criterion 11 on the first run
  {
    const auto& r = runs.front();
    GrantsTable grants;
    grants.users["nobody"] = {};
    grants.users["full"] = {0, 2};
    grants.users["task0"] = {0};
    InferenceService svc(r.mtk, r.test, grants, r.keys);
    Evaluator net(r.spec, r.mtk.params);
    std::mt19937_64 rng(99);
    std::size_t zero_ok = 0, match = 0;
    for (int q = 0; q < 100; ++q) {
      const std::size_t idx = std::uniform_int_distribution<std::size_t>(0, r.test.size() - 1)(rng);
      auto none = svc.infer_sample("nobody", idx);
      zero_ok += !none.tasks[0].revealed && none.tasks[1].revealed && !none.tasks[2].revealed;
      const std::string user = q % 2 ? "full" : "task0";
      auto got = svc.infer_sample(user, idx);
      const auto x = r.test.image(idx);
      bool same = got.tasks[0].prediction == predict_under(net, x, 0, &r.keys[0]) &&
                  got.tasks[1].prediction == predict_under(net, x, 1, nullptr) &&
                  got.tasks[2].prediction == predict_under(net, x, 2, user == "full" ? &r.keys[1] : nullptr);
      match += same && got.tasks[0].revealed && got.tasks[2].revealed == (user == "full");
    }
    TcpServer server(svc, "127.0.0.1", 0);
    server.start();
    const std::string line = R"({"user":"full","sample_index":17})";
    std::vector<std::future<std::string>> futures;
    for (int c = 0; c < 100; ++c)
      futures.push_back(std::async(std::launch::async,
                                   [&] { return request_lines("127.0.0.1", server.port(), {line}).at(0); }));
    std::size_t identical = 0;
    std::string first;
    for (auto& f : futures) {
      auto s = f.get();
      if (first.empty()) first = s;
      identical += s == first;
    }
    server.stop();
    const bool pass = zero_ok == 100 && match == 100 && identical == 100 && first == svc.handle(line);
    report(11, pass, "service conformance",
           fmt("zero-authority %zu/100, eval-path match %zu/100, concurrent identical %zu/100", zero_ok, match,
               identical));
  }

  // criterion 12: rerun the first pipeline from scratch
  {
    const std::string a = report_csvs(runs.front());
    const std::string b = report_csvs(desk_run(1));
    auto joint = JointLabelModel::uniform(kClasses);
    joint.plant(0, 3, 2, 0, 0.9);
    RenderSpec render;
    render.shape = {8, 8, 3};
    auto ds = generate_synthetic(joint, render, tasks(), 2000, 3);
    const bool dec_same = to_json(decouple(ds, {}, 4).second).dump() == to_json(decouple(ds, {}, 4).second).dump();
    report(12, a == b && dec_same, "determinism",
           fmt("report CSVs %s (%zu bytes), decoupling report %s", a == b ? "byte-identical" : "DIFFER", a.size(),
               dec_same ? "identical" : "DIFFERS"));
  }
}

// ---- criterion 5 ---------------------------------------------------------------------

void decoupling_criterion(std::size_t trials) {
  RenderSpec render;
  render.band_noise = {render.noise_sigma, render.noise_sigma, kPlantBandNoise};
  auto joint = JointLabelModel::uniform(kClasses);
  joint.plant(0, 3, 2, 0, kPlantProbability);
  auto all = generate_synthetic(joint, render, tasks(), kSamples, kPlantDataSeed);
  auto [train_set, test_set] = split(all, kTrainFraction, kPlantDataSeed);
  const double alpha = compute_alpha(train_set, 2, 0, 0, 3);
  auto [decoupled, rep] = decouple(train_set, {}, kPlantDataSeed);
  bool targeted = false;
  for (const auto& a : rep.actions)
    targeted = targeted || (a.entry.source_task == 0 && a.entry.source_class == 3 && a.entry.target_task == 2 &&
                            a.entry.target_class == 0);
  auto keys = default_key_set(tasks(), render.shape);
  auto spec = default_model_spec(render.shape, kClasses);
  std::size_t ok = 0;
  std::string detail = fmt("alpha-tau %.4f, %zu action(s);", alpha - 0.15, rep.actions.size());
  for (std::size_t s = 1; s <= trials; ++s) {
    TrainConfig cfg;
    cfg.seed = s;
    double gap[2], acc0[2], acc2[2];
    bool defined = true;
    for (int d = 0; d < 2; ++d) {
      auto m = train(spec, build_all(d ? decoupled : train_set, keys, s), cfg);
      Evaluator net(spec, m.params);
      try {
        gap[d] = prediction_gap(net, test_set, 0, 3, 2, 0, keys);
      } catch (const UndefinedConditional&) {
        defined = false;
        gap[d] = NAN;
      }
      acc0[d] = task_accuracy(net, test_set, 0, &keys[0]);
      acc2[d] = task_accuracy(net, test_set, 2, &keys[1]);
    }
    const bool pass = defined && gap[1] < gap[0] && acc0[0] - acc0[1] <= 0.03 && acc2[0] - acc2[1] <= 0.03;
    ok += pass;
    detail += fmt(" [seed %zu gap %.4f->%.4f acc0 %.4f->%.4f acc2 %.4f->%.4f %s]", s, gap[0], gap[1], acc0[0], acc0[1],
                  acc2[0], acc2[1], pass ? "ok" : "miss");
    std::printf("  decoupling trial %zu done\n", s);
    std::fflush(stdout);
  }
  const std::size_t need = trials == 5 ? 4 : (4 * trials + 4) / 5;
  report(5, alpha - 0.15 >= 0.03 && targeted && ok >= need, "decoupling efficacy",
         fmt("%zu/%zu trials ok (need %zu); ", ok, trials, need) + detail);
}

// ---- criteria 7-10 ------------------------------------------------------------------

void arithmetic_criterion() {
  std::mt19937_64 rng(2024);
  double worst = 0.0;
  for (int t = 0; t < 1000; ++t) {
    const std::size_t n_cond = std::uniform_int_distribution<std::size_t>(1, 100000)(rng);
    const std::size_t n_joint = std::uniform_int_distribution<std::size_t>(1, n_cond)(rng);
    double gamma = std::uniform_real_distribution<double>(0.0, 0.1)(rng);
    if (gamma == 0.0) gamma = 0.1;
    const double beta = compute_beta(n_cond, n_joint, gamma);
    const double lhs = double(n_joint) / (double(n_cond) * (1.0 - beta)) - double(n_joint) / double(n_cond);
    worst = std::max(worst, std::abs(lhs - gamma));
  }
  const double b = compute_beta(100, 60, 0.04);
  report(7, worst <= 1e-12 && b == 0.0625, "decoupling arithmetic",
         fmt("worst identity deviation %.3g over 1000 triples; beta(100,60,0.04) = %.17g", worst, b));
}

void stamping_criterion() {
  const ImageShape shape{32, 32, 3};
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  auto image = [&] {
    std::vector<float> x(shape.size());
    for (float& v : x) v = u(rng);
    return x;
  };
  auto same = [](const std::vector<float>& a, const std::vector<float>& b) {
    return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(float)) == 0;
  };
  bool zero = true, full = true, idem = true, commute = true, counts = true;
  const std::vector<std::uint8_t> no_mask(shape.pixels(), 0);
  const std::vector<float> red = {1, 0, 0};
  auto fullkey = make_custom("f", 0, std::vector<std::uint8_t>(shape.pixels(), 1), {0.25f, 0.5f, 1.0f}, shape);
  auto sq = make_square("a", 0, {27, 27}, 5, {1, 0, 0}, shape);
  auto cr = make_cross("b", 2, {5, 27}, 5, {0, 1, 0}, shape);
  for (int t = 0; t < 20; ++t) {
    auto x = image();
    auto y = x;
    stamp_mask(y, no_mask, red, shape);
    zero = zero && same(x, y);
    auto f = apply_key(x, fullkey);
    for (std::size_t i = 0; i < f.size(); ++i) full = full && f[i] == fullkey.color[i % 3];
    for (const auto& k : {sq, cr}) {
      auto once = apply_key(x, k);
      idem = idem && same(apply_key(once, k), once);
    }
    commute = commute && same(apply_key(apply_key(x, sq), cr), apply_key(apply_key(x, cr), sq));
  }
  for (std::size_t s : {1, 3, 5, 7, 9, 11}) {
    counts = counts && make_square("s", 0, {2, 2}, s, red, shape).pixel_count() == s * s;
    counts = counts && make_cross("c", 0, {15, 15}, s, red, shape).pixel_count() == 2 * s - 1;
  }
  report(8, zero && full && idem && commute && counts, "key stamping",
         fmt("zero-mask %s, full-mask %s, idempotent %s, disjoint commute %s, pixel counts %s", zero ? "ok" : "BAD",
             full ? "ok" : "BAD", idem ? "ok" : "BAD", commute ? "ok" : "BAD", counts ? "ok" : "BAD"));
}

void gradient_criterion() {
  auto r = test::finite_difference_check(20);
  report(9, r.specs == 20 && r.worst <= 1e-4 && r.checked > 10 * r.skipped, "gradient correctness",
         fmt("worst relative error %.3g over %zu entries in %zu specs (%zu skipped at kinks)", r.worst, r.checked,
             r.specs, r.skipped));
}

bool build_laws(const std::vector<std::size_t>& classes, const std::vector<bool>& secured, std::size_t& total) {
  const ImageShape shape{32, 32, 3};
  std::mt19937_64 rng(50);
  std::vector<float> px(50 * shape.size());
  for (float& v : px) v = std::uniform_real_distribution<float>(0.0f, 1.0f)(rng);
  std::vector<std::uint16_t> labels;
  for (std::size_t s = 0; s < 50; ++s)
    for (std::size_t k : classes) labels.push_back(static_cast<std::uint16_t>(rng() % k));
  MultiTaskDataset ds(make_tasks(classes, secured), shape, px, labels);
  auto keys = default_key_set(ds.tasks(), shape);
  auto set = build_all(ds, keys, 8);
  total = set.total_size();
  bool ok = set.parts.size() == keys.size() + 1 && total == (keys.size() + 1) * ds.size();
  const auto& d0 = set.parts[0];
  for (std::size_t s = 0; s < 50; ++s)
    for (std::size_t t = 0; t < classes.size(); ++t) {
      ok = ok && d0.ground_truth(s, t) == ds.label(s, t) && d0.label(s, t) < classes[t];
      if (!secured[t]) ok = ok && d0.label(s, t) == ds.label(s, t);
    }
  ok = ok && d0.pixel_data() == ds.pixel_data();
  for (std::size_t p = 1; p < set.parts.size(); ++p) {
    const auto& key = set.keys[p - 1];
    const auto& dj = set.parts[p];
    for (std::size_t s = 0; s < 50; ++s) {
      auto want = apply_key(ds.image(s), key);
      ok = ok && std::equal(want.begin(), want.end(), dj.image(s).begin());
      for (std::size_t t = 0; t < classes.size(); ++t)
        ok = ok && dj.label(s, t) == (t == key.task ? ds.label(s, t) : d0.label(s, t));
    }
  }
  return ok;
}

void build_criterion() {
  std::size_t t1 = 0, t2 = 0, t3 = 0;
  const bool a = build_laws({4, 2}, {true, false}, t1);
  const bool b = build_laws(kClasses, kSecured, t2);
  const bool c = build_laws({4, 2, 5, 3}, {true, false, true, true}, t3);
  report(10, a && b && c && t1 == 100 && t2 == 150 && t3 == 200, "build laws",
         fmt("N1=1: %zu samples %s; N1=2: %zu %s; N1=3: %zu %s (n=50)", t1, a ? "ok" : "BAD", t2, b ? "ok" : "BAD", t3,
             c ? "ok" : "BAD"));
}

}  // namespace

int main() {
  std::size_t trials = 5;
  if (const char* v = std::getenv("MTK_ACCEPT_SEEDS")) trials = std::max(1L, std::strtol(v, nullptr, 10));
  std::setvbuf(stdout, nullptr, _IOLBF, 0);
  try {
    arithmetic_criterion();
    stamping_criterion();
    gradient_criterion();
    build_criterion();
    desk_criteria(trials);
    decoupling_criterion(trials);
  } catch (const std::exception& e) {
    std::printf("acceptance aborted: %s\n", e.what());
    return 2;
  }
  std::sort(verdicts.begin(), verdicts.end(), [](const Verdict& a, const Verdict& b) { return a.id < b.id; });
  std::size_t passed = 0;
  std::printf("\nsummary (%zu trials)\n", trials);
  for (const auto& v : verdicts) {
    passed += v.pass;
    std::printf("criterion %2d %s  %s\n", v.id, v.pass ? "PASS" : "FAIL", v.name.c_str());
  }
  std::printf("%zu/%zu criteria passed\n", passed, verdicts.size());
  return passed == verdicts.size() ? 0 : 1;
}
