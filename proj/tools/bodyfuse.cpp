// Operator entry point: simulate, calibrate, run, replay and eval.

#include <CLI11.hpp>
#include <json.hpp>

#include <atomic>
#include <chrono>
#include <csignal>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <memory>
#include <sstream>
#include <thread>

#include "bodyfuse/calibration.hpp"
#include "bodyfuse/config.hpp"
#include "bodyfuse/error.hpp"
#include "bodyfuse/evaluation.hpp"
#include "bodyfuse/gateway.hpp"
#include "bodyfuse/pipeline.hpp"
#include "bodyfuse/records.hpp"
#include "bodyfuse/session_calibration.hpp"
#include "bodyfuse/simsensor.hpp"
#include "bodyfuse/streams.hpp"
#include "bodyfuse/stub_recognizer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace bodyfuse;

namespace {

std::atomic<bool> g_interrupted{false};

void on_signal(int) { g_interrupted = true; }

std::string mm(double metres) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(2) << metres * 1000.0 << " mm";
  return s.str();
}

std::string deg(double degrees) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(3) << degrees << " deg";
  return s.str();
}

/// Writes to `path`, or stdout for "-".
void write_text(const std::string& path, const std::string& text) {
  if (path == "-") {
    std::cout << text;
    return;
  }
  std::ofstream out(path);
  if (!out || !(out << text)) throw Error(ErrorCode::IoError, "cannot write " + path);
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

json counters_json(const PipelineCounters& c) {
  return {{"ticks", c.ticks},
          {"events", c.events},
          {"crops_sent", c.crops_sent},
          {"crops_suppressed", c.crops_suppressed},
          {"results_joined", c.results_joined},
          {"results_late", c.results_late},
          {"recognition_timeouts", c.recognition_timeouts},
          {"recognition_errors", c.recognition_errors},
          {"identity_rebinds", c.identity_rebinds},
          {"identity_conflicts", c.identity_conflicts},
          {"late_frames", c.late_frames},
          {"unknown_sensor_frames", c.unknown_sensor_frames},
          {"max_latency_us", c.max_latency_us}};
}

// --- shared options -------------------------------------------------------------------------

/// Flags that override the config file. Empty strings mean "not given".
struct Overrides {
  std::string config;
  std::string scene;
  std::string calibration;
  std::string store;
  std::string script;
  std::string recognizer;
  std::string gateway;
  std::string output;
  std::optional<std::uint64_t> seed;
  std::optional<double> speed;

  void add_to(CLI::App& cmd, bool sources) {
    cmd.add_option("-c,--config", config, "YAML run configuration")->check(CLI::ExistingFile);
    cmd.add_option("--scene", scene, "scene file (default: the session's scene)");
    cmd.add_option("--calibration", calibration, "calibration file");
    if (sources) {
      cmd.add_option("--store", store, "session directory to replay");
      cmd.add_option("--script", script, "scenario script to simulate live");
      cmd.add_option("--seed", seed, "override the script seed");
      cmd.add_option("--speed", speed, "pacing: 0 = as fast as possible, 1 = real time");
      cmd.add_option("--gateway", gateway, "websocket endpoint for the UI, host:port");
    }
    cmd.add_option("--recognizer", recognizer, "none, inprocess or tcp://host:port");
    cmd.add_option("-o,--output", output, "events file, - for stdout");
  }

  Config resolve(bool need_source) const {
    Config c;
    if (!config.empty()) c = load_config(config, false);
    if (!scene.empty()) c.scene = scene;
    if (!calibration.empty()) c.calibration = calibration;
    if (!store.empty()) {
      c.store = store;
      c.script.reset();
    }
    if (!script.empty()) {
      c.script = script;
      if (store.empty()) c.store.reset();
    }
    if (!recognizer.empty()) {
      const int timeout = c.recognizer.timeout_ms;
      c.recognizer = parse_recognizer(recognizer);
      c.recognizer.timeout_ms = timeout;
    }
    if (!gateway.empty()) c.gateway = gateway;
    if (!output.empty()) c.output = output;
    if (seed) c.seed = seed;
    if (speed) c.speed = *speed;
    if (need_source) c.validate();
    return c;
  }
};

std::unique_ptr<Recognizer> make_recognizer(const RecognizerConfig& r) {
  switch (r.kind) {
    case RecognizerConfig::Kind::None:
      return nullptr;
    case RecognizerConfig::Kind::InProcess:
      return std::make_unique<InProcessRecognizer>(stub::handle);
    case RecognizerConfig::Kind::Socket:
      return std::make_unique<SocketRecognizer>(transport::Endpoint::parse(r.endpoint),
                                                std::chrono::milliseconds(r.timeout_ms));
  }
  return nullptr;
}

CalibrationSet require_calibration(const Config& c) {
  if (!c.calibration) throw Error(ErrorCode::InvalidArgument, "a calibration file is required (--calibration)");
  return load_calibration(*c.calibration);
}

SessionMeta store_meta(const SessionReader& reader) {
  const auto meta = reader.read(kMetaStream);
  if (meta.empty()) throw Error(ErrorCode::CorruptRecord, "session has an empty meta stream");
  return records::decode_meta(meta.front().payload);
}

sim::ScenarioScript script_for(const Config& c, const fs::path& path) {
  sim::ScenarioScript s = sim::load_script(path);
  if (c.seed) s.seed = *c.seed;
  if (c.period_us) s.period_us = *c.period_us;
  return s;
}

// --- simulate -------------------------------------------------------------------------------

struct SimulateArgs {
  std::string script;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<double> duration;
  std::string truth_calibration;
};

int cmd_simulate(const SimulateArgs& a) {
  sim::ScenarioScript s = sim::load_script(a.script);
  if (a.seed) s.seed = *a.seed;
  if (a.duration) s.duration_s = *a.duration;
  s.validate();
  sim::simulate_to_store(s, a.out);
  const SessionReader reader(a.out);
  std::size_t records = 0;
  for (const std::string& stream : reader.streams()) records += reader.read(stream).size();
  std::cout << "simulated " << s.name << ": " << s.duration_s << " s, " << s.sensors.size() << " sensors, "
            << s.persons.size() << " persons, " << records << " records -> " << a.out << "\n";
  if (!a.truth_calibration.empty()) {
    CalibrationSet truth = eval::truth_calibration(eval::load_truth(reader));
    truth.created_at = utc_timestamp_now();
    save_calibration(truth, a.truth_calibration);
    std::cout << "scripted calibration -> " << a.truth_calibration << "\n";
  }
  return 0;
}

// --- calibrate ------------------------------------------------------------------------------

struct CalibrateArgs {
  std::string store;
  std::string scene;
  std::string config;
  std::string initial;
  std::vector<double> main_pose;
  std::string out;
  std::string json_path;
  bool no_pairwise_icp = false;
};

int cmd_calibrate(const CalibrateArgs& a) {
  SessionCalibrationParams params;
  params.refine_pairwise = !a.no_pairwise_icp;
  if (!a.config.empty()) {
    const Config c = load_config(a.config, false);
    params.scene_icp = c.icp;
    params.person.max_gap_us = c.pipeline.max_gap_us;
  }

  std::optional<RigidTransform> init;
  if (!a.initial.empty()) init = load_calibration(a.initial).world_from_main;
  if (!a.main_pose.empty()) {
    const auto& p = a.main_pose;
    init = RigidTransform{Quaternion{p[3], p[4], p[5], p[6]}.normalized(), Vec3{p[0], p[1], p[2]}};
  }
  std::optional<SceneModel> scene;
  if (!a.scene.empty()) scene = load_scene(a.scene);

  const SessionReader reader(a.store);
  const std::vector<Envelope> envelopes = reader.read_all();
  SessionCalibrationReport rep;
  const CalibrationSet calib = calibrate_session(envelopes, init, params, &rep, scene ? &*scene : nullptr);
  save_calibration(calib, a.out);

  std::optional<eval::SessionTruth> truth;
  if (reader.has_stream(kTruthPosesStream)) truth = eval::load_truth(reader);
  const std::optional<CalibrationSet> true_calib =
      truth ? std::optional<CalibrationSet>(eval::truth_calibration(*truth)) : std::nullopt;

  std::ostringstream text;
  json record = {{"store", a.store}, {"output", a.out}, {"main_sensor", rep.main_sensor}};
  text << "calibration of " << a.store << " (main sensor " << rep.main_sensor << ")\n";
  json pairs = json::array();
  for (const PairReport& p : rep.pairs) {
    json j = {{"sensor", p.sensor},       {"reference", p.reference},     {"frames", {p.frames_a, p.frames_b}},
              {"cloud_pairs", p.cloud_pairs}, {"icp_accepted", p.icp_accepted},
              {"person_reference", gateway::pose_json(p.person_reference)},
              {"transform", gateway::pose_json(p.a_from_b)}};
    text << "  " << p.sensor << " -> " << p.reference << ": person reference over " << p.frames_a << "/"
         << p.frames_b << " frames";
    if (p.icp) {
      j["icp"] = {{"iterations", p.icp->iterations},
                  {"converged", p.icp->converged},
                  {"inlier_fraction", p.icp->inlier_fraction},
                  {"trace", p.icp->rmse_trace}};
      text << "; cloud icp over " << p.cloud_pairs << " pairs, " << p.icp->iterations << " iterations, "
           << (p.icp->converged ? "converged" : "not converged") << ", inliers " << std::setprecision(3)
           << p.icp->inlier_fraction * 100.0 << "%, " << (p.icp_accepted ? "accepted" : "rejected");
    } else {
      text << "; no cloud refinement";
    }
    text << "\n";
    if (true_calib && true_calib->main_from_sensor.count(p.sensor) && p.reference == rep.main_sensor) {
      const RigidTransform t = true_calib->main_from_sensor.at(p.sensor);
      const TransformError coarse = transform_error(p.person_reference, t);
      const TransformError fine = transform_error(p.a_from_b, t);
      j["truth_error"] = {{"person_reference", {{"translation_m", coarse.translation_m}, {"rotation_deg", coarse.rotation_deg}}},
                          {"final", {{"translation_m", fine.translation_m}, {"rotation_deg", fine.rotation_deg}}}};
      text << "    error vs scripted pose: person reference " << mm(coarse.translation_m) << " / "
           << deg(coarse.rotation_deg) << ", final " << mm(fine.translation_m) << " / " << deg(fine.rotation_deg)
           << "\n";
    }
    pairs.push_back(j);
  }
  record["pairs"] = pairs;
  if (rep.scene_icp) {
    text << "  scene: " << rep.main_sensor << " residual " << mm(rep.scene_before->rmse) << " -> "
         << mm(calib.residuals.count(rep.main_sensor) ? calib.residuals.at(rep.main_sensor) : rep.scene_icp->rmse)
         << " (icp " << rep.scene_icp->iterations << " iterations, "
         << (rep.scene_icp->converged ? "converged" : "not converged") << ")\n";
    record["scene"] = {{"residual_before", rep.scene_before->rmse},
                       {"iterations", rep.scene_icp->iterations},
                       {"converged", rep.scene_icp->converged},
                       {"trace", rep.scene_icp->rmse_trace}};
  } else {
    std::cerr << "bodyfuse: note: no initial main pose (--initial or --main-pose); the main sensor is placed at the "
                 "identity and the scene is not refined\n";
  }
  json residuals = json::object();
  for (const auto& [id, r] : rep.residuals) {
    if (!std::isfinite(r.rmse)) continue;
    residuals[id] = {{"rmse", r.rmse}, {"samples", r.sample_count}};
    text << "  residual " << id << ": " << mm(r.rmse) << " over " << r.sample_count << " samples\n";
  }
  record["residuals"] = residuals;
  if (true_calib && rep.scene_icp) {
    const TransformError e = transform_error(calib.world_from_main, true_calib->world_from_main);
    record["world_error"] = {{"translation_m", e.translation_m}, {"rotation_deg", e.rotation_deg}};
    text << "  main sensor vs scripted world pose: " << mm(e.translation_m) << " / " << deg(e.rotation_deg) << "\n";
  }
  text << "wrote " << a.out << "\n";

  if (a.json_path == "-") {
    std::cout << record.dump() << "\n";
  } else {
    std::cout << text.str();
    if (!a.json_path.empty()) write_text(a.json_path, record.dump(2) + "\n");
  }
  return 0;
}

// --- run --------------------------------------------------------------------------------------

struct RunArgs {
  Overrides o;
  std::string record;
  bool loop = false;
};

class LiveRun {
 public:
  LiveRun(Config config, CalibrationSet calib, std::ostream& out) : cfg_(std::move(config)), calib_(std::move(calib)), out_(out) {
    recognizer_ = make_recognizer(cfg_.recognizer);
  }

  void start_gateway(const SceneModel& scene) {
    const fs::path save = cfg_.calibration ? *cfg_.calibration : fs::path("calibration.yaml");
    controller_ = std::make_unique<gateway::Controller>(calib_, scene, cfg_.icp, save);
    controller_->on_select_scenario = [this](const std::string& name) {
      std::lock_guard lock(mu_);
      requested_ = name;
    };
    server_ = std::make_unique<gateway::Server>(transport::Endpoint::parse(*cfg_.gateway), *controller_);
    std::cerr << "bodyfuse: gateway listening on port " << server_->port() << "\n";
  }

  void record_to(const fs::path& dir) { writer_ = std::make_unique<SessionWriter>(dir); }
  SessionWriter* writer() { return writer_.get(); }

  std::optional<std::string> take_requested() {
    std::lock_guard lock(mu_);
    auto r = std::move(requested_);
    requested_.reset();
    return r;
  }
  bool switch_requested() {
    std::lock_guard lock(mu_);
    return requested_.has_value();
  }

  /// One pass over a source. `source` calls the feed function per envelope and stops when it
  /// returns false.
  void pass(const std::optional<SceneModel>& scene, const std::function<void(const std::function<bool(const Envelope&)>&)>& source) {
    Pipeline pipe(cfg_.pipeline, controller_ ? controller_->calibration() : calib_, recognizer_.get(), scene);
    std::uint64_t version = controller_ ? controller_->version() : 0;
    if (server_) {
      pipe.on_cloud = [&](const std::string& sensor, std::int64_t t, const PointCloud& cloud) {
        controller_->update_cloud(sensor, cloud);
        const CalibrationSet& c = pipe.calibration();
        if (sensor != c.main_sensor_id && !c.main_from_sensor.count(sensor)) return;
        const RigidTransform T = c.world_from_sensor(sensor);
        PointCloud world = gateway::downsample(cloud, 20'000);
        for (Vec3& p : world.points) p = transform_point(T, p);
        server_->publish_cloud(sensor, t, world);
        try {
          const json r = controller_->residual_frame(sensor);
          if (r["rmse"].is_number()) server_->publish(r);
        } catch (const Error&) {
        }
      };
    }
    const auto wall0 = std::chrono::steady_clock::now();
    std::optional<std::int64_t> t0;
    std::chrono::steady_clock::duration paused{0};
    source([&](const Envelope& e) {
      if (g_interrupted || switch_requested()) return false;
      while (controller_ && !controller_->running() && !g_interrupted) {
        const auto p0 = std::chrono::steady_clock::now();
        std::this_thread::sleep_for(std::chrono::milliseconds(20));
        paused += std::chrono::steady_clock::now() - p0;
      }
      if (cfg_.speed > 0.0) {
        if (!t0) t0 = e.originating_time_us;
        const auto due = wall0 + paused +
                         std::chrono::microseconds(static_cast<std::int64_t>((e.originating_time_us - *t0) / cfg_.speed));
        std::this_thread::sleep_until(due);
      }
      if (controller_ && controller_->version() != version) {
        version = controller_->version();
        pipe.set_calibration(controller_->calibration());
      }
      if (writer_) writer_->append(e.stream, e.originating_time_us, e.payload);
      emit(pipe.push(e));
      return true;
    });
    emit(pipe.finish());
    add(pipe.counters());
  }

  const EventHash& hash() const { return hash_; }
  const PipelineCounters& totals() const { return totals_; }
  bool gateway_on() const { return server_ != nullptr; }

 private:
  void emit(const std::vector<TickOutput>& ticks) {
    for (const TickOutput& t : ticks) {
      if (server_) server_->publish(gateway::skeletons_frame(t));
      for (const BehaviourEvent& ev : t.events) {
        const std::string line = to_json_line(ev);
        out_ << line << '\n';
        hash_.add(line);
        if (server_) server_->publish(gateway::event_frame(ev));
      }
    }
    out_.flush();
  }

  void add(const PipelineCounters& c) {
    totals_.ticks += c.ticks;
    totals_.events += c.events;
    totals_.crops_sent += c.crops_sent;
    totals_.crops_suppressed += c.crops_suppressed;
    totals_.results_joined += c.results_joined;
    totals_.results_late += c.results_late;
    totals_.recognition_timeouts += c.recognition_timeouts;
    totals_.recognition_errors += c.recognition_errors;
    totals_.identity_rebinds += c.identity_rebinds;
    totals_.identity_conflicts += c.identity_conflicts;
    totals_.late_frames += c.late_frames;
    totals_.unknown_sensor_frames += c.unknown_sensor_frames;
    totals_.max_latency_us = std::max(totals_.max_latency_us, c.max_latency_us);
  }

  Config cfg_;
  CalibrationSet calib_;
  std::ostream& out_;
  std::unique_ptr<Recognizer> recognizer_;
  std::unique_ptr<gateway::Controller> controller_;
  std::unique_ptr<gateway::Server> server_;
  std::unique_ptr<SessionWriter> writer_;
  std::mutex mu_;
  std::optional<std::string> requested_;
  EventHash hash_;
  PipelineCounters totals_;
};

int cmd_run(const RunArgs& a) {
  const Config cfg = a.o.resolve(true);
  const CalibrationSet calib = require_calibration(cfg);
  std::optional<SceneModel> scene_override;
  if (cfg.scene) scene_override = load_scene(*cfg.scene);

  std::ofstream file;
  if (cfg.output != "-") {
    file.open(cfg.output);
    if (!file) throw Error(ErrorCode::IoError, "cannot write " + cfg.output);
  }
  LiveRun run(cfg, calib, cfg.output == "-" ? std::cout : file);

  if (cfg.script) {
    fs::path script_path = *cfg.script;
    sim::ScenarioScript script = script_for(cfg, script_path);
    if (cfg.gateway) run.start_gateway(scene_override.value_or(script.scene));
    if (!a.record.empty()) {
      run.record_to(a.record);
      SessionWriter* w = run.writer();
      w->declare(kMetaStream);
      w->declare(kTruthPosesStream);
      for (const auto& s : script.sensors) {
        w->declare(skeleton_stream(s.id));
        w->declare(colour_stream(s.id));
        w->declare(depth_stream(s.id));
      }
      w->declare(kTruthFramesStream);
    }
    for (;;) {
      run.pass(scene_override, [&](const auto& feed) { sim::run_scenario(script, feed); });
      if (g_interrupted) break;
      if (auto next = run.take_requested()) {
        const fs::path candidate = script_path.parent_path() / (*next + ".yaml");
        if (!fs::exists(candidate)) {
          std::cerr << "bodyfuse: note: no scenario script " << candidate << ", keeping " << script.name << "\n";
        } else if (run.writer()) {
          std::cerr << "bodyfuse: note: scenario switching is disabled while recording\n";
        } else {
          script_path = candidate;
          script = script_for(cfg, script_path);
          std::cerr << "bodyfuse: switched to scenario " << script.name << "\n";
          continue;
        }
      }
      if (!a.loop) break;
    }
  } else {
    const SessionReader reader(*cfg.store);
    const SessionMeta meta = store_meta(reader);
    if (cfg.gateway) run.start_gateway(scene_override.value_or(meta.scene));
    if (!a.record.empty()) {
      run.record_to(a.record);
      for (const std::string& s : reader.streams()) run.writer()->declare(s);
    }
    const std::vector<Envelope> envelopes = reader.read_all();
    do {
      run.pass(scene_override, [&](const auto& feed) {
        for (const Envelope& e : envelopes)
          if (!feed(e)) break;
      });
      if (run.take_requested()) std::cerr << "bodyfuse: note: scenario switching needs a script source\n";
    } while (a.loop && !g_interrupted && !run.writer());
  }
  if (run.writer()) run.writer()->close();
  std::cerr << "bodyfuse: " << run.totals().events << " events over " << run.totals().ticks << " ticks, hash "
            << run.hash().hex() << "\n";
  std::cerr << "bodyfuse: counters " << counters_json(run.totals()).dump() << "\n";
  return 0;
}

// --- replay -----------------------------------------------------------------------------------

struct ReplayArgs {
  Overrides o;
  std::string check;
  std::string write_baseline;
  int repeat = 1;
};

int cmd_replay(ReplayArgs a) {
  if (a.o.store.empty()) throw Error(ErrorCode::InvalidArgument, "--store is required");
  const Config cfg = a.o.resolve(true);
  const CalibrationSet calib = require_calibration(cfg);
  const SessionReader reader(*cfg.store);
  const std::vector<Envelope> envelopes = reader.read_all();

  std::optional<std::string> first;
  std::vector<std::string> lines;
  for (int i = 0; i < a.repeat; ++i) {
    auto recognizer = make_recognizer(cfg.recognizer);
    PipelineCounters counters;
    lines = run_log(envelopes, cfg.pipeline, calib, recognizer.get(), &counters);
    EventHash h;
    for (const std::string& l : lines) h.add(l);
    std::cerr << "bodyfuse: replay " << (i + 1) << ": " << lines.size() << " events, hash " << h.hex() << "\n";
    if (!first) {
      first = h.hex();
    } else if (*first != h.hex()) {
      std::cerr << "bodyfuse: error: replay " << (i + 1) << " hash " << h.hex() << " differs from the first run "
                << *first << "\n";
      return 3;
    }
  }
  if (cfg.output != "-" || a.o.output == "-") {
    std::string text;
    for (const std::string& l : lines) text += l + "\n";
    write_text(cfg.output, text);
  }
  std::cout << *first << "\n";
  if (!a.write_baseline.empty()) write_text(a.write_baseline, *first + "\n");
  if (!a.check.empty()) {
    std::string baseline = read_text(a.check);
    while (!baseline.empty() && std::isspace(static_cast<unsigned char>(baseline.back()))) baseline.pop_back();
    if (baseline != *first) {
      std::cerr << "bodyfuse: error: event hash mismatch: baseline " << baseline << ", replay " << *first << "\n";
      return 2;
    }
    std::cerr << "bodyfuse: event hash matches " << a.check << "\n";
  }
  return 0;
}

// --- eval -------------------------------------------------------------------------------------

struct EvalArgs {
  Overrides o;
  std::string events;
  std::string json_path;
};

int cmd_eval(EvalArgs a) {
  if (a.o.store.empty()) throw Error(ErrorCode::InvalidArgument, "--store is required");
  const Config cfg = a.o.resolve(true);
  const SessionReader reader(*cfg.store);
  const eval::SessionTruth truth = eval::load_truth(reader);
  std::optional<CalibrationSet> calib;
  if (cfg.calibration) calib = load_calibration(*cfg.calibration);

  std::vector<BehaviourEvent> events;
  if (!a.events.empty()) {
    std::istringstream in(read_text(a.events));
    std::string line;
    while (std::getline(in, line))
      if (!line.empty()) events.push_back(parse_event(line));
  } else {
    // No events given: run the pipeline here, with the stub unless configured otherwise.
    RecognizerConfig rc = cfg.recognizer;
    if (a.o.recognizer.empty() && rc.kind == RecognizerConfig::Kind::None) rc.kind = RecognizerConfig::Kind::InProcess;
    auto recognizer = make_recognizer(rc);
    const std::vector<Envelope> envelopes = reader.read_all();
    for (const std::string& l :
         run_log(envelopes, cfg.pipeline, calib.value_or(eval::truth_calibration(truth)), recognizer.get()))
      events.push_back(parse_event(l));
  }
  const eval::EvalReport report = eval::evaluate(truth, events, calib ? &*calib : nullptr);
  if (a.json_path == "-") {
    std::cout << report.to_json() << "\n";
  } else {
    std::cout << report.to_text();
    if (!a.json_path.empty()) write_text(a.json_path, report.to_json() + "\n");
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-sensor body tracking: simulate, calibrate, run, replay and evaluate sessions."};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "help for every command");

  SimulateArgs sim_args;
  auto* simulate = app.add_subcommand("simulate", "run a scenario script and write a session store");
  simulate->add_option("script", sim_args.script, "scenario script (YAML)")->required()->check(CLI::ExistingFile);
  simulate->add_option("-o,--out", sim_args.out, "session directory to create")->required();
  simulate->add_option("--seed", sim_args.seed, "override the script seed");
  simulate->add_option("--duration", sim_args.duration, "override the duration in seconds");
  simulate->add_option("--truth-calibration", sim_args.truth_calibration,
                       "also write the scripted sensor poses as a calibration file");

  CalibrateArgs cal_args;
  auto* calibrate = app.add_subcommand("calibrate", "person-reference and ICP calibration of a session store");
  calibrate->add_option("--store", cal_args.store, "session directory")->required();
  calibrate->add_option("--scene", cal_args.scene, "scene file (default: the session's scene)");
  calibrate->add_option("-c,--config", cal_args.config, "run configuration for ICP parameters")->check(CLI::ExistingFile);
  auto* initial = calibrate->add_option("--initial", cal_args.initial, "calibration file holding the initial main sensor pose")
                      ->check(CLI::ExistingFile);
  calibrate->add_option("--main-pose", cal_args.main_pose, "initial world_from_main: tx,ty,tz,qw,qx,qy,qz")
      ->expected(7)
      ->delimiter(',')
      ->excludes(initial);
  calibrate->add_option("-o,--out", cal_args.out, "calibration file to write")->required();
  calibrate->add_option("--json", cal_args.json_path, "structured report path, - for stdout instead of text");
  calibrate->add_flag("--no-pairwise-icp", cal_args.no_pairwise_icp, "keep the person-reference transforms");

  RunArgs run_args;
  auto* run = app.add_subcommand("run", "run the pipeline live from a script or from a store");
  run_args.o.add_to(*run, true);
  run->add_option("--record", run_args.record, "also record the input into this session directory");
  run->add_flag("--loop", run_args.loop, "restart the source when it ends (for the UI)");

  ReplayArgs replay_args;
  auto* replay = app.add_subcommand("replay", "deterministic re-run of a store with an event hash");
  replay_args.o.add_to(*replay, false);
  replay->add_option("--store", replay_args.o.store, "session directory")->required();
  replay->add_option("--check", replay_args.check, "baseline hash file; exit 2 on mismatch");
  replay->add_option("--write-baseline", replay_args.write_baseline, "write the event hash to this file");
  replay->add_option("--repeat", replay_args.repeat, "run this many times; exit 3 if hashes differ")
      ->check(CLI::PositiveNumber);

  EvalArgs eval_args;
  auto* evaluate = app.add_subcommand("eval", "accuracy report of events against the session's ground truth");
  eval_args.o.add_to(*evaluate, false);
  evaluate->add_option("--store", eval_args.o.store, "session directory")->required();
  evaluate->add_option("--events", eval_args.events, "events file (default: run the pipeline here)");
  evaluate->add_option("--json", eval_args.json_path, "structured report path, - for stdout instead of text");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  try {
    if (*simulate) return cmd_simulate(sim_args);
    if (*calibrate) return cmd_calibrate(cal_args);
    if (*run) return cmd_run(run_args);
    if (*replay) return cmd_replay(replay_args);
    if (*evaluate) return cmd_eval(eval_args);
  } catch (const std::exception& e) {
    std::cerr << "bodyfuse: error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
