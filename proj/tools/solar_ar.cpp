// solar_ar command line: headless replay, websocket serving, a tick
// benchmark and a marker image generator.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <csignal>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "solar_ar/image_io.hpp"
#include "solar_ar/marker_base.hpp"
#include "solar_ar/server.hpp"
#include "solar_ar/session.hpp"

namespace fs = std::filesystem;
using namespace solar_ar;

namespace {

std::atomic<bool> g_interrupted{false};

struct RunOptions {
  std::string config;
  std::string mode;
  std::string script;
  std::string out;
  std::optional<int> frames;
  std::string serve;
  bool fixed_clock = false;
  std::optional<double> time_scale;
};

SessionConfig load_config(const RunOptions& o) {
  const fs::path path = o.config;
  Json j = load_json_file(path);
  if (!o.mode.empty()) j["mode"] = o.mode;
  if (!o.script.empty()) j["script"] = fs::absolute(o.script).string();
  if (!o.out.empty()) j["out_dir"] = fs::absolute(o.out).string();
  if (o.frames) j["frames"] = *o.frames;
  if (!o.serve.empty()) j["serve"] = o.serve;
  if (o.fixed_clock) j["fixed_clock"] = true;
  if (o.time_scale) j["time_scale"] = *o.time_scale;
  return session_config_from_json(j, path.parent_path());
}

void write_text(const fs::path& path, const std::string& text) {
  write_file(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

int serve(const SessionConfig& cfg) {
  Session session(cfg);
  WireServer server(session, parse_endpoint(*cfg.serve));
  server.start();
  std::cout << "listening on ws://" << parse_endpoint(*cfg.serve).host << ":" << server.port() << std::endl;
  std::signal(SIGINT, [](int) { g_interrupted = true; });
  std::signal(SIGTERM, [](int) { g_interrupted = true; });

  if (cfg.out_dir) fs::create_directories(*cfg.out_dir);
  Json ticks = Json::array();
  const auto start = std::chrono::steady_clock::now();
  std::size_t next = 0;
  for (std::uint64_t seq = 0; !g_interrupted && (!cfg.frames || seq < static_cast<std::uint64_t>(*cfg.frames));
       ++seq) {
    const auto due = start + std::chrono::duration_cast<std::chrono::steady_clock::duration>(
                                 std::chrono::duration<double>(tick_time(seq, cfg.fps)));
    std::this_thread::sleep_until(due);
    const double t = cfg.fixed_clock
                         ? tick_time(seq, cfg.fps)
                         : std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    while (next < cfg.script.size() && script_tick(cfg.script[next].t_ms, cfg.fps) <= seq) {
      session.enqueue_touch(cfg.script[next++].event);
    }
    const TickResult r = server.tick(t);
    if (cfg.out_dir) {
      char name[32];
      std::snprintf(name, sizeof(name), "frame_%05llu.ppm", static_cast<unsigned long long>(seq));
      write_file(*cfg.out_dir / name, encode_ppm(r.frame));
      ticks.push_back(trace_entry(r));
    }
  }
  server.stop();
  if (cfg.out_dir) write_text(*cfg.out_dir / "trace.json", make_trace(cfg, ticks).dump(2) + "\n");
  return 0;
}

int bench(const SessionConfig& cfg, int frames, bool png) {
  Session session(cfg);
  std::vector<double> ms;
  for (int i = 0; i < frames; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    const TickResult r = session.tick(tick_time(static_cast<std::uint64_t>(i), cfg.fps));
    const auto bytes = png ? encode_png(r.frame) : encode_ppm(r.frame);
    const auto t1 = std::chrono::steady_clock::now();
    if (bytes.empty()) return 1;
    ms.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
  }
  std::sort(ms.begin(), ms.end());
  auto pct = [&](double p) { return ms[std::min(ms.size() - 1, static_cast<std::size_t>(p * (ms.size() - 1) + 0.5))]; };
  std::cout << Json{{"frames", frames},
                    {"width", cfg.intrinsics.width},
                    {"height", cfg.intrinsics.height},
                    {"encoding", png ? "png" : "ppm"},
                    {"p50_ms", pct(0.50)},
                    {"p95_ms", pct(0.95)},
                    {"max_ms", ms.back()}}
                   .dump()
            << std::endl;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Marker-anchored solar system AR session"};
  app.require_subcommand(1);

  RunOptions run_opts;
  auto* run = app.add_subcommand("run", "Replay headless or serve a live session");
  run->add_option("--config", run_opts.config, "Session config (JSON)")->required()->check(CLI::ExistingFile);
  run->add_option("--mode", run_opts.mode, "Start mode")->check(CLI::IsMember({"marker", "anchor"}));
  run->add_option("--script", run_opts.script, "Gesture script (JSON)")->check(CLI::ExistingFile);
  run->add_option("--out", run_opts.out, "Output directory for frames and trace.json");
  run->add_option("--frames", run_opts.frames, "Number of ticks")->check(CLI::NonNegativeNumber);
  run->add_option("--serve", run_opts.serve, "Websocket listen address host:port");
  run->add_flag("--fixed-clock", run_opts.fixed_clock, "Tick timestamps are seq/fps");
  run->add_option("--time-scale", run_opts.time_scale, "Simulation seconds per real second")
      ->check(CLI::NonNegativeNumber);

  RunOptions bench_opts;
  int bench_frames = 200;
  bool bench_png = true;
  auto* bench_cmd = app.add_subcommand("bench", "Tick timing: capture through encode");
  bench_cmd->add_option("--config", bench_opts.config, "Session config (JSON)")->required()->check(CLI::ExistingFile);
  bench_cmd->add_option("--mode", bench_opts.mode, "Mode")->check(CLI::IsMember({"marker", "anchor"}));
  bench_cmd->add_option("--frames", bench_frames, "Ticks to time")->check(CLI::PositiveNumber);
  bench_cmd->add_flag("!--ppm", bench_png, "Encode PPM instead of PNG");

  std::string marker_file, marker_out;
  int marker_id = -1, marker_side = 240;
  auto* render = app.add_subcommand("render-marker", "Write a printable marker image");
  render->add_option("--base", marker_file, "Marker base (JSON)")->required()->check(CLI::ExistingFile);
  render->add_option("--id", marker_id, "Marker id")->required();
  render->add_option("--side", marker_side, "Side in pixels (>= 48, multiple of 6)");
  render->add_option("--out", marker_out, "Output .png or .ppm/.pgm")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) {
      const SessionConfig cfg = load_config(run_opts);
      if (cfg.serve) return serve(cfg);
      return run_headless(cfg);
    }
    if (*bench_cmd) {
      bench_opts.frames = std::nullopt;
      return bench(load_config(bench_opts), bench_frames, bench_png);
    }
    if (*render) {
      const MarkerBase base = load_marker_base(marker_file);
      const MarkerSpec* spec = base.find(marker_id);
      if (!spec) throw Error(ErrorCode::kUnknownName, "no marker " + std::to_string(marker_id) + " in " + marker_file);
      const Frame img = render_marker(*spec, marker_side);
      const bool png = fs::path(marker_out).extension() == ".png";
      write_file(marker_out, png ? encode_png(img) : encode_ppm(img));
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
