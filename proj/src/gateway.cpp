#include "bodyfuse/gateway.hpp"

#include <boost/asio.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/websocket.hpp>

#include <cmath>
#include <deque>
#include <set>

#include "bodyfuse/error.hpp"

namespace bodyfuse::gateway {

namespace net = boost::asio;
namespace beast = boost::beast;
namespace websocket = beast::websocket;
using tcp = net::ip::tcp;

json pose_json(const RigidTransform& t) {
  return {{"translation", {t.translation.x, t.translation.y, t.translation.z}},
          {"rotation", {{"w", t.rotation.w}, {"x", t.rotation.x}, {"y", t.rotation.y}, {"z", t.rotation.z}}}};
}

RigidTransform pose_from_json(const json& j) {
  try {
    const json& tr = j.at("translation");
    const json& rot = j.at("rotation");
    if (!tr.is_array() || tr.size() != 3) throw Error(ErrorCode::SchemaViolation, "translation must be [x, y, z]");
    RigidTransform t;
    t.translation = {tr[0].get<double>(), tr[1].get<double>(), tr[2].get<double>()};
    const Quaternion q{rot.at("w").get<double>(), rot.at("x").get<double>(), rot.at("y").get<double>(),
                       rot.at("z").get<double>()};
    const double n = q.norm();
    if (!std::isfinite(n) || n < 1e-9 || !is_finite(t.translation))
      throw Error(ErrorCode::SchemaViolation, "pose must be finite with a non-zero quaternion");
    t.rotation = q.normalized();
    return t;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::SchemaViolation, std::string("pose: ") + e.what());
  }
}

json skeletons_frame(const TickOutput& tick) {
  json bodies = json::array();
  for (const MergedBody& b : tick.bodies) {
    json joints = json::array();
    for (const Joint& j : b.joints)
      joints.push_back({j.position.x, j.position.y, j.position.z, static_cast<int>(j.confidence)});
    json contributors = json::array();
    for (const BodyRef& r : b.contributors) contributors.push_back(r.sensor_id + ":" + std::to_string(r.body_id));
    json body = {{"person_id", b.person_id}, {"contributors", contributors}, {"joints", joints}};
    body["identity"] = b.identity_label ? json(*b.identity_label) : json(nullptr);
    bodies.push_back(std::move(body));
  }
  return {{"type", "skeletons"}, {"tick_us", tick.tick_us}, {"bodies", bodies}};
}

json event_frame(const BehaviourEvent& event) {
  return {{"type", "event"}, {"event", json::parse(to_json_line(event))}};
}

PointCloud downsample(const PointCloud& cloud, std::size_t max_points) {
  if (max_points == 0 || cloud.points.size() <= max_points) return cloud;
  const std::size_t step = (cloud.points.size() + max_points - 1) / max_points;
  PointCloud out;
  for (std::size_t i = 0; i < cloud.points.size(); i += step) out.points.push_back(cloud.points[i]);
  return out;
}

// --- controller -----------------------------------------------------------------------------

Controller::Controller(CalibrationSet calibration, SceneModel scene, IcpParams icp, std::filesystem::path save_path)
    : calibration_(std::move(calibration)), scene_(std::move(scene)), icp_(icp), save_path_(std::move(save_path)) {
  calibration_.validate();
}

void Controller::update_cloud(const std::string& sensor_id, const PointCloud& cloud) {
  std::lock_guard lock(mu_);
  clouds_[sensor_id] = cloud;
}

CalibrationSet Controller::calibration() const {
  std::lock_guard lock(mu_);
  return calibration_;
}

std::optional<std::string> Controller::scenario() const {
  std::lock_guard lock(mu_);
  return scenario_;
}

json Controller::residual_frame(const std::string& sensor_id) const {
  std::lock_guard lock(mu_);
  return residual_locked(sensor_id);
}

json Controller::residual_locked(const std::string& sensor_id) const {
  const RigidTransform pose = calibration_.world_from_sensor(sensor_id);
  const auto it = clouds_.find(sensor_id);
  if (it == clouds_.end()) throw Error(ErrorCode::UnknownStream, "no depth cloud from " + sensor_id + " yet");
  const AlignmentResidual r = alignment_residual(it->second, pose, scene_);
  json frame = {{"type", "residual"}, {"sensor", sensor_id}, {"samples", r.sample_count}, {"pose", pose_json(pose)}};
  frame["rmse"] = std::isfinite(r.rmse) ? json(r.rmse) : json(nullptr);
  return frame;
}

void Controller::set_pose_locked(const std::string& sensor_id, const RigidTransform& world_from_sensor) {
  if (!calibration_.main_from_sensor.count(sensor_id))
    throw Error(ErrorCode::DisconnectedSensor, "sensor '" + sensor_id + "' not calibrated");
  if (sensor_id == calibration_.main_sensor_id)
    calibration_.world_from_main = world_from_sensor;
  else
    calibration_.main_from_sensor[sensor_id] = compose(calibration_.world_from_main.inverse(), world_from_sensor);
  ++version_;
}

json Controller::handle(const std::string& command_text) {
  json id = nullptr;
  try {
    const json cmd = json::parse(command_text);
    if (!cmd.is_object()) throw Error(ErrorCode::SchemaViolation, "command must be a JSON object");
    if (cmd.contains("id")) id = cmd["id"];
    json ack = dispatch(cmd);
    ack["type"] = "ack";
    ack["id"] = id;
    ack["command"] = cmd.at("command");
    return ack;
  } catch (const Error& e) {
    return {{"type", "error"}, {"id", id}, {"code", to_string(e.code())}, {"message", e.what()}};
  } catch (const json::parse_error& e) {
    return {{"type", "error"}, {"id", id}, {"code", "ParseError"}, {"message", e.what()}};
  } catch (const json::exception& e) {
    return {{"type", "error"}, {"id", id}, {"code", to_string(ErrorCode::SchemaViolation)}, {"message", e.what()}};
  }
}

json Controller::dispatch(const json& cmd) {
  if (!cmd.contains("command") || !cmd["command"].is_string())
    throw Error(ErrorCode::SchemaViolation, "missing string field 'command'");
  const std::string name = cmd["command"].get<std::string>();
  const auto sensor = [&]() -> std::string {
    if (!cmd.contains("sensor") || !cmd["sensor"].is_string())
      throw Error(ErrorCode::SchemaViolation, name + " needs a string 'sensor'");
    return cmd["sensor"].get<std::string>();
  };

  if (name == "set_camera_pose") {
    const std::string id = sensor();
    if (!cmd.contains("pose")) throw Error(ErrorCode::SchemaViolation, "set_camera_pose needs 'pose'");
    const RigidTransform pose = pose_from_json(cmd["pose"]);
    std::lock_guard lock(mu_);
    set_pose_locked(id, pose);
    json ack = {{"sensor", id}, {"pose", pose_json(calibration_.world_from_sensor(id))}};
    if (clouds_.count(id)) ack["residual"] = residual_locked(id);
    return ack;
  }
  if (name == "run_refine") {
    const std::string id = sensor();
    std::lock_guard lock(mu_);
    const RigidTransform init = calibration_.world_from_sensor(id);
    const auto cloud = clouds_.find(id);
    if (cloud == clouds_.end()) throw Error(ErrorCode::UnknownStream, "no depth cloud from " + id + " yet");
    const IcpResult r = refine_scene_pose(cloud->second, init, scene_, icp_);
    set_pose_locked(id, r.transform);
    json residual = residual_locked(id);
    if (residual["rmse"].is_number()) calibration_.residuals[id] = residual["rmse"].get<double>();
    return {{"sensor", id},
            {"trace", r.rmse_trace},
            {"iterations", r.iterations},
            {"converged", r.converged},
            {"inlier_fraction", r.inlier_fraction},
            {"residual", residual}};
  }
  if (name == "query_residual") {
    const std::string id = sensor();
    std::lock_guard lock(mu_);
    return {{"sensor", id}, {"residual", residual_locked(id)}};
  }
  if (name == "save_calibration") {
    std::filesystem::path path = save_path_;
    if (cmd.contains("path")) {
      if (!cmd["path"].is_string()) throw Error(ErrorCode::SchemaViolation, "'path' must be a string");
      path = cmd["path"].get<std::string>();
    }
    std::lock_guard lock(mu_);
    calibration_.created_at = utc_timestamp_now();
    save_calibration(calibration_, path);
    return {{"path", path.string()}};
  }
  if (name == "select_scenario") {
    if (!cmd.contains("name") || !cmd["name"].is_string())
      throw Error(ErrorCode::SchemaViolation, "select_scenario needs a string 'name'");
    const std::string scenario = cmd["name"].get<std::string>();
    if (on_select_scenario) on_select_scenario(scenario);
    std::lock_guard lock(mu_);
    scenario_ = scenario;
    return {{"name", scenario}};
  }
  if (name == "start" || name == "stop") {
    const bool run = name == "start";
    if (run && on_start) on_start();
    if (!run && on_stop) on_stop();
    running_ = run;
    return {{"running", run}};
  }
  throw Error(ErrorCode::SchemaViolation, "unknown command '" + name + "'");
}

// --- websocket server -----------------------------------------------------------------------

namespace {

constexpr std::size_t kMaxQueuedFrames = 512;

struct Outgoing {
  std::shared_ptr<const std::string> data;
  bool binary = false;
  bool droppable = true;
};

}  // namespace

struct Server::Impl {
  struct Session : std::enable_shared_from_this<Session> {
    Session(tcp::socket socket, Impl& owner) : ws(std::move(socket)), impl(owner) {}

    void start() {
      ws.set_option(websocket::stream_base::timeout::suggested(beast::role_type::server));
      ws.async_accept([self = shared_from_this()](beast::error_code ec) {
        if (ec) return;
        self->impl.sessions.insert(self);
        ++self->impl.count;
        self->read();
      });
    }

    void read() {
      ws.async_read(buffer, [self = shared_from_this()](beast::error_code ec, std::size_t) {
        if (ec) return self->close();
        const std::string text = beast::buffers_to_string(self->buffer.data());
        self->buffer.consume(self->buffer.size());
        json reply = self->ws.got_text()
                         ? self->impl.controller.handle(text)
                         : json{{"type", "error"}, {"id", nullptr}, {"code", "SchemaViolation"},
                                {"message", "commands must be text frames"}};
        self->send({std::make_shared<const std::string>(reply.dump()), false, false});
        self->read();
      });
    }

    void send(Outgoing frame) {
      if (closed) return;
      if (frame.droppable && queue.size() >= kMaxQueuedFrames) return;
      queue.push_back(std::move(frame));
      if (queue.size() == 1) write_next();
    }

    void write_next() {
      ws.binary(queue.front().binary);
      ws.async_write(net::buffer(*queue.front().data), [self = shared_from_this()](beast::error_code ec, std::size_t) {
        if (ec) return self->close();
        self->queue.pop_front();
        if (!self->queue.empty()) self->write_next();
      });
    }

    void close() {
      if (closed) return;
      closed = true;
      if (impl.sessions.erase(shared_from_this())) --impl.count;
      beast::error_code ignored;
      beast::get_lowest_layer(ws).socket().close(ignored);
    }

    websocket::stream<beast::tcp_stream> ws;
    beast::flat_buffer buffer;
    std::deque<Outgoing> queue;
    Impl& impl;
    bool closed = false;
  };

  Impl(Controller& c) : controller(c), acceptor(ioc) {}

  void accept() {
    acceptor.async_accept([this](beast::error_code ec, tcp::socket socket) {
      if (ec) return;
      std::make_shared<Session>(std::move(socket), *this)->start();
      accept();
    });
  }

  void broadcast(std::vector<Outgoing> frames) {
    net::post(ioc, [this, frames = std::move(frames)] {
      for (const auto& s : std::vector<std::shared_ptr<Session>>(sessions.begin(), sessions.end())) {
        // A header and its binary body are queued together or not at all.
        if (frames.size() > 1 && s->queue.size() + frames.size() > kMaxQueuedFrames) continue;
        for (const Outgoing& f : frames) s->send(f);
      }
    });
  }

  net::io_context ioc;
  Controller& controller;
  tcp::acceptor acceptor;
  std::set<std::shared_ptr<Session>> sessions;  // I/O thread only
  std::atomic<std::size_t> count{0};
  std::thread thread;
  std::atomic<bool> stopped{false};
};

Server::Server(const transport::Endpoint& endpoint, Controller& controller) : impl_(std::make_unique<Impl>(controller)) {
  try {
    const tcp::endpoint ep(net::ip::make_address(endpoint.host), endpoint.port);
    impl_->acceptor.open(ep.protocol());
    impl_->acceptor.set_option(net::socket_base::reuse_address(true));
    impl_->acceptor.bind(ep);
    impl_->acceptor.listen();
    port_ = impl_->acceptor.local_endpoint().port();
  } catch (const boost::system::system_error& e) {
    throw Error(ErrorCode::BindFailure, "gateway " + endpoint.uri() + ": " + e.what());
  }
  impl_->accept();
  impl_->thread = std::thread([this] { impl_->ioc.run(); });
}

Server::~Server() { stop(); }

void Server::stop() {
  if (impl_->stopped.exchange(true)) return;
  net::post(impl_->ioc, [impl = impl_.get()] {
    beast::error_code ignored;
    impl->acceptor.close(ignored);
    for (const auto& s : std::vector<std::shared_ptr<Impl::Session>>(impl->sessions.begin(), impl->sessions.end()))
      s->close();
    impl->ioc.stop();
  });
  if (impl_->thread.joinable()) impl_->thread.join();
}

std::size_t Server::clients() const { return impl_->count.load(); }

void Server::publish(const json& frame) {
  impl_->broadcast({{std::make_shared<const std::string>(frame.dump()), false, true}});
}

void Server::publish_cloud(const std::string& sensor_id, std::int64_t time_us, const PointCloud& world_cloud) {
  const json header = {
      {"type", "pointcloud"}, {"sensor", sensor_id}, {"time_us", time_us}, {"count", world_cloud.points.size()}};
  const auto blob = serialize_cloud(world_cloud);
  impl_->broadcast({{std::make_shared<const std::string>(header.dump()), false, true},
                    {std::make_shared<const std::string>(blob.begin(), blob.end()), true, true}});
}

}  // namespace bodyfuse::gateway
