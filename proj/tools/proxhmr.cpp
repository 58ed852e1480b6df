// proxhmr: benchmark runner, single-scenario inspector and oracle checks.

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include "proxhmr/bench.hpp"
#include "proxhmr/template_io.hpp"
#include "proxhmr/validation.hpp"

namespace fs = std::filesystem;
using namespace proxhmr;

namespace {

constexpr int kExitCheckFailed = 1;
constexpr int kExitBadInput = 2;

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out = "out";
  int threads = 1;
  std::string chain;
  std::string body;
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("-c,--config", c.config, "JSON config file (defaults are used for missing keys)")->check(CLI::ExistingFile);
  app->add_option("-s,--seed", c.seed, "override the config seed");
  app->add_option("-o,--out", c.out, "output directory")->capture_default_str();
  app->add_option("-j,--threads", c.threads, "worker threads")->check(CLI::PositiveNumber)->capture_default_str();
  app->add_option("--chain", c.chain, "kinematic chain JSON (default: built-in touch chain)")->check(CLI::ExistingFile);
  app->add_option("--template", c.body, "body template JSON (default: built-in template)")->check(CLI::ExistingFile);
}

BenchConfig resolve_config(const Common& c) {
  BenchConfig cfg = c.config.empty() ? BenchConfig{} : load_bench_config(c.config);
  if (c.seed) cfg.seed = *c.seed;
  cfg.threads = c.threads;
  cfg.validate();
  return cfg;
}

BodyModel resolve_model(const Common& c) {
  return BodyModel(c.body.empty() ? make_default_template() : load_template(c.body));
}

KinematicChain resolve_chain(const Common& c) { return c.chain.empty() ? default_touch_chain() : load_chain(c.chain); }

void write_file(const fs::path& p, const std::string& text) {
  fs::create_directories(p.parent_path());
  std::ofstream f(p, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + p.string());
  f << text;
}

int run_bench(const Common& common, int scenarios) {
  BenchConfig cfg = resolve_config(common);
  if (scenarios >= 0) cfg.scenarios = scenarios;
  const BodyModel model = resolve_model(common);
  const KinematicChain chain = resolve_chain(common);
  const auto t0 = std::chrono::steady_clock::now();
  const auto rep = run_ablation(model, chain, cfg);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  const fs::path out(common.out);
  write_file(out / "report.json", report_json(rep));
  write_file(out / "table.csv", report_csv(rep));
  write_file(out / "timing.json", timing_json(rep));

  std::printf("%-6s", "n");
  for (const auto& m : ablation_methods()) std::printf("%14s", m.label().c_str());
  std::printf("    (mean MPJPE / PA-MPJPE, mm)\n");
  for (const int n : cfg.n_values) {
    std::printf("%-6d", n);
    for (const auto& c : rep.cells) {
      if (c.n == n) std::printf("%8.1f/%5.1f", c.mpjpe_mm, c.pa_mpjpe_mm);
    }
    std::printf("\n");
  }
  std::printf("%d scenarios, %d failed, %.1f s; wrote %s\n", cfg.scenarios, rep.failures, secs, out.string().c_str());
  for (const auto& s : rep.scenarios) {
    if (!s.error.empty()) std::fprintf(stderr, "scenario %d failed: %s\n", s.index, s.error.c_str());
  }
  for (const auto& v : rep.invariant_violations) std::fprintf(stderr, "invariant violated: %s\n", v.c_str());
  return rep.invariant_violations.empty() ? 0 : kExitCheckFailed;
}

int run_one_scenario(const Common& common, int index, bool record_fusion, bool dump_visibility) {
  BenchConfig cfg = resolve_config(common);
  cfg.loop.fusion.record_trace = record_fusion;
  cfg.loop.threads = cfg.threads;
  const BodyModel model = resolve_model(common);
  const KinematicChain chain = resolve_chain(common);
  const auto sc = make_scenario(model, cfg, index);
  std::vector<LoopResult> traces;
  const auto res = run_scenario(model, chain, cfg, index, &traces);
  if (!res.error.empty()) {
    std::fprintf(stderr, "scenario %d failed: %s\n", index, res.error.c_str());
    return kExitCheckFailed;
  }
  const fs::path out = fs::path(common.out) / ("scenario_" + std::to_string(index));

  nlohmann::json summary = {{"format", "proxhmr-scenario"},
                            {"version", 1},
                            {"index", index},
                            {"seed", res.seed},
                            {"family", res.family},
                            {"camera_index", res.camera_index},
                            {"blind", res.blind},
                            {"start_camera", camera_to_json(sc.scene.start_camera)},
                            {"config", bench_config_to_json(cfg)}};
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : res.rows) {
    rows.push_back({{"method", r.method}, {"n", r.n}, {"measured", r.measured}, {"mpjpe_mm", r.mpjpe_mm},
                    {"pa_mpjpe_mm", r.pa_mpjpe_mm}});
  }
  summary["rows"] = rows;
  write_file(out / "summary.json", summary.dump(2) + "\n");

  const auto stage = camera_stage(model, sc.scene, cfg.loop);
  write_file(out / "belief_start.json", belief_to_json(stage.initial).dump() + "\n");
  write_file(out / "belief_camera.json", belief_to_json(stage.belief).dump() + "\n");
  for (std::size_t m = 0; m < traces.size(); ++m) {
    std::string label = ablation_methods()[m].label();
    std::replace(label.begin(), label.end(), '+', '_');
    write_file(out / ("trace_" + label + ".json"), plan_trace_to_json(traces[m]).dump(2) + "\n");
    write_file(out / ("belief_" + label + ".json"), belief_to_json(traces[m].belief).dump() + "\n");
  }
  if (dump_visibility) {
    const Eigen::Matrix3Xd gt = world_mesh(model.skin_mesh(sc.scene.pose, sc.scene.shape), sc.scene.global);
    write_file(out / "visibility_start.json",
               visibility_to_json(zbuffer_visibility(gt, model.faces(), sc.scene.start_camera)).dump() + "\n");
    write_file(out / "visibility_chosen.json",
               visibility_to_json(zbuffer_visibility(gt, model.faces(), stage.choice.camera)).dump() + "\n");
  }

  std::printf("scenario %d (%s), camera %d%s\n", index, res.family.c_str(), res.camera_index,
              res.blind ? " (blind)" : "");
  for (const auto& r : res.rows) {
    std::printf("  %-6s n=%-3d measured=%-3d MPJPE %7.1f mm  PA-MPJPE %6.1f mm\n", r.method.c_str(), r.n, r.measured,
                r.mpjpe_mm, r.pa_mpjpe_mm);
  }
  std::printf("wrote %s\n", out.string().c_str());
  return 0;
}

int run_validate(const Common& common, bool quick) {
  BenchConfig cfg = resolve_config(common);
  const BodyModel model = resolve_model(common);
  const KinematicChain chain = resolve_chain(common);
  const int scale = quick ? 10 : 1;
  std::vector<CheckResult> results;
  auto run = [&](auto&& fn) {
    const auto t0 = std::chrono::steady_clock::now();
    results.push_back(fn());
    const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const auto& r = results.back();
    std::printf("%s %s: %s (%.1f s)\n", r.passed ? "PASS" : "FAIL", r.name.c_str(), r.detail.c_str(), s);
    std::fflush(stdout);
  };
  run([&] { return check_fusion_efficacy(model, cfg, 200 / scale); });
  run([&] { return check_loss_gradient(model, cfg.seed, 100 / scale); });
  run([&] { return check_visibility_oracle(model, cfg.seed, 100 / scale, cfg.threads); });
  run([&] { return check_metric_identities(cfg.seed, 100 / scale); });
  run([&] { return check_uncertainty_semantics(model, 20); });
  run([&] { return check_viewpoint_selection(model, cfg.seed, 50 / scale, cfg.threads); });
  run([&] { return check_target_selection(model, chain, cfg.seed, 50 / scale, cfg.threads); });
  run([&] { return check_touch_noise(cfg.seed, 10000); });

  nlohmann::json j = nlohmann::json::array();
  for (const auto& r : results) j.push_back({{"check", r.name}, {"passed", r.passed}, {"detail", r.detail}});
  write_file(fs::path(common.out) / "validate.json", j.dump(2) + "\n");
  const bool ok = std::all_of(results.begin(), results.end(), [](const CheckResult& r) { return r.passed; });
  return ok ? 0 : kExitCheckFailed;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Active multi-sensor human mesh refinement: benchmark and diagnostics"};
  app.require_subcommand(1);

  Common bench_opts, scenario_opts, validate_opts;
  int scenarios = -1;
  auto* bench = app.add_subcommand("bench", "run the ablation benchmark and write report.json, table.csv, timing.json");
  add_common(bench, bench_opts);
  bench->add_option("--scenarios", scenarios, "override the scenario count");

  int index = 0;
  bool fusion_trace = false, visibility = false;
  auto* scenario = app.add_subcommand("scenario", "run one benchmark scenario and dump traces and beliefs");
  add_common(scenario, scenario_opts);
  scenario->add_option("-i,--index", index, "scenario index")->check(CLI::NonNegativeNumber)->capture_default_str();
  scenario->add_flag("--fusion-trace", fusion_trace, "record the optimizer loss per iteration and sample");
  scenario->add_flag("--visibility", visibility, "dump ground-truth visibility masks for the start and chosen cameras");

  bool quick = false;
  auto* validate = app.add_subcommand("validate", "cross-check the library against reference computations");
  add_common(validate, validate_opts);
  validate->add_flag("--quick", quick, "run a tenth of the instances");

  CLI11_PARSE(app, argc, argv);
  try {
    if (*bench) return run_bench(bench_opts, scenarios);
    if (*scenario) return run_one_scenario(scenario_opts, index, fusion_trace, visibility);
    if (*validate) return run_validate(validate_opts, quick);
  } catch (const FormatError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitBadInput;
  } catch (const InvalidInput& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitBadInput;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitCheckFailed;
  }
  return 0;
}
