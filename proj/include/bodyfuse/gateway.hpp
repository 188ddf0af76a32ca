#pragma once

// Websocket gateway for the calibration and monitoring UI. All frames are JSON text except
// point clouds, whose JSON header is followed by one binary frame holding serialize_cloud
// bytes (world frame).
//
// Server to client:
//   {"type": "skeletons", "tick_us": T, "bodies": [{"person_id", "contributors", "identity",
//                                                   "joints": [[x, y, z, confidence], ...]}]}
//   {"type": "event", "event": {...}}                      one per BehaviourEvent
//   {"type": "residual", "sensor", "rmse", "samples", "pose"}
//   {"type": "pointcloud", "sensor", "time_us", "count"}   then the binary frame
//   {"type": "ack", "id", "command", ...}                  reply to a command
//   {"type": "error", "id", "code", "message"}             reply to a bad command
//
// Client to server (`id` is optional and echoed back):
//   {"command": "set_camera_pose", "sensor", "pose": {"translation": [..], "rotation": {w, x, y, z}}}
//   {"command": "run_refine", "sensor"}            ack carries "trace" (ICP objective per iteration)
//   {"command": "query_residual", "sensor"}
//   {"command": "save_calibration", "path"?}
//   {"command": "select_scenario", "name"} / {"command": "start"} / {"command": "stop"}
//
// Poses are world_from_sensor. Errors leave every piece of state unchanged.

#include <json.hpp>

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "bodyfuse/calibration.hpp"
#include "bodyfuse/pipeline.hpp"
#include "bodyfuse/pointcloud.hpp"
#include "bodyfuse/transport.hpp"

namespace bodyfuse::gateway {

using nlohmann::json;

json pose_json(const RigidTransform& t);
/// Throws SchemaViolation.
RigidTransform pose_from_json(const json& j);

json skeletons_frame(const TickOutput& tick);
json event_frame(const BehaviourEvent& event);

/// Server-side calibration state shared by the UI commands and the pipeline.
class Controller {
 public:
  Controller(CalibrationSet calibration, SceneModel scene, IcpParams icp = {},
             std::filesystem::path save_path = "calibration.yaml");

  /// Latest depth cloud of a sensor, in its own frame.
  void update_cloud(const std::string& sensor_id, const PointCloud& cloud);

  /// One command in, one ack or error frame out.
  json handle(const std::string& command_text);

  /// Residual frame for a sensor's latest cloud at the current pose. Throws UnknownStream
  /// when no cloud has arrived yet, DisconnectedSensor for an uncalibrated sensor.
  json residual_frame(const std::string& sensor_id) const;

  CalibrationSet calibration() const;
  /// Bumped on every calibration change.
  std::uint64_t version() const { return version_.load(); }
  std::optional<std::string> scenario() const;
  bool running() const { return running_.load(); }

  std::function<void(const std::string&)> on_select_scenario;
  std::function<void()> on_start;
  std::function<void()> on_stop;

 private:
  json dispatch(const json& cmd);
  void set_pose_locked(const std::string& sensor_id, const RigidTransform& world_from_sensor);
  json residual_locked(const std::string& sensor_id) const;

  mutable std::mutex mu_;
  CalibrationSet calibration_;
  SceneModel scene_;
  IcpParams icp_;
  std::filesystem::path save_path_;
  std::map<std::string, PointCloud> clouds_;
  std::optional<std::string> scenario_;
  std::atomic<std::uint64_t> version_{0};
  std::atomic<bool> running_{true};
};

/// Websocket server. Commands are handled by the controller on the I/O thread; published
/// frames fan out to every client through a per-connection write queue.
class Server {
 public:
  /// Binds and starts serving; port 0 picks a free port. Throws BindFailure.
  Server(const transport::Endpoint& endpoint, Controller& controller);
  ~Server();
  Server(const Server&) = delete;
  Server& operator=(const Server&) = delete;

  std::uint16_t port() const { return port_; }
  std::size_t clients() const;

  void publish(const json& frame);
  void publish_cloud(const std::string& sensor_id, std::int64_t time_us, const PointCloud& world_cloud);
  void stop();

  struct Impl;

 private:
  std::unique_ptr<Impl> impl_;
  std::uint16_t port_ = 0;
};

/// Keeps at most `max_points` by taking every k-th point.
PointCloud downsample(const PointCloud& cloud, std::size_t max_points);

}  // namespace bodyfuse::gateway
