#include "ucd/ingestion.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>
#include <unordered_map>

#include <nlohmann/json.hpp>

#include "ucd/error.hpp"

namespace ucd {

// ---------------------------------------------------------------------------
// Trajectory

std::optional<std::size_t> Trajectory::index_at(double t) const {
  if (states.empty()) return std::nullopt;
  const double tol = 0.25 / frame_rate;
  auto it = std::lower_bound(states.begin(), states.end(), t - tol,
                             [](const VehicleState& s, double v) { return s.time < v; });
  if (it == states.end() || std::abs(it->time - t) > tol) return std::nullopt;
  return static_cast<std::size_t>(it - states.begin());
}

bool Trajectory::covers(double t0, double t1) const {
  if (states.empty()) return false;
  const double tol = 0.25 / frame_rate;
  return t_begin() <= t0 + tol && t_end() >= t1 - tol;
}

Trajectory Trajectory::slice(double t0, double t1) const {
  Trajectory out;
  out.vehicle_id = vehicle_id;
  out.frame_rate = frame_rate;
  const double tol = 0.25 / frame_rate;
  for (std::size_t i = 0; i < states.size(); ++i) {
    if (states[i].time >= t0 - tol && states[i].time <= t1 + tol) {
      out.states.push_back(states[i]);
      if (!lanes.empty()) out.lanes.push_back(lanes[i]);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Profiles

SchemaProfile highd_like_profile() {
  SchemaProfile p;
  p.name = "highd_like";
  p.id = "id";
  p.frame = "frame";
  p.frame_rate = 25.0;
  p.x = "x";
  p.y = "y";
  p.vx = "xVelocity";
  p.vy = "yVelocity";
  p.ax = "xAcceleration";
  p.ay = "yAcceleration";
  p.length = "width";   // highD "width" is the box extent along x
  p.width = "height";
  p.lane = "laneId";
  p.position_is_corner = true;
  return p;
}

SchemaProfile event_like_profile() {
  SchemaProfile p;
  p.name = "event_like";
  p.id = "id";
  p.time = "time";
  p.frame_rate = 0.0;
  p.x = "x";
  p.y = "y";
  p.vx = "vx";
  p.vy = "vy";
  p.a_long = "a_long";
  p.length = "length";
  p.width = "width";
  p.heading_x = "heading_x";
  p.heading_y = "heading_y";
  p.lane = "lane_id";
  return p;
}

SchemaProfile profile_by_name(const std::string& name) {
  if (name == "highd_like") return highd_like_profile();
  if (name == "event_like") return event_like_profile();
  throw ParseError("unknown schema profile '" + name + "' (expected highd_like or event_like)");
}

SchemaProfile profile_from_json(const nlohmann::json& j) {
  SchemaProfile p = j.contains("base") ? profile_by_name(j.at("base").get<std::string>()) : SchemaProfile{};
  auto str = [&j](const char* key, std::string& field) {
    if (j.contains(key)) field = j.at(key).get<std::string>();
  };
  str("name", p.name);
  str("id", p.id);
  str("time", p.time);
  str("frame", p.frame);
  str("x", p.x);
  str("y", p.y);
  str("vx", p.vx);
  str("vy", p.vy);
  str("length", p.length);
  str("width", p.width);
  str("a_long", p.a_long);
  str("ax", p.ax);
  str("ay", p.ay);
  str("heading_x", p.heading_x);
  str("heading_y", p.heading_y);
  str("lane", p.lane);
  if (j.contains("frame_rate")) p.frame_rate = j.at("frame_rate").get<double>();
  if (j.contains("position_is_corner")) p.position_is_corner = j.at("position_is_corner").get<bool>();
  if (j.contains("distance_scale")) p.distance_scale = j.at("distance_scale").get<double>();
  return p;
}

// ---------------------------------------------------------------------------
// CSV parsing

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(std::move(cur));
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  out.push_back(std::move(cur));
  return out;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t");
  return s.substr(b, e - b + 1);
}

std::optional<double> parse_number(const std::string& raw) {
  const std::string s = trim(raw);
  if (s.empty()) return std::nullopt;
  double v = 0.0;
  const auto* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, v);
  if (ec != std::errc() || ptr != end) {
    // from_chars rejects "nan"/"inf" spellings on some inputs; fall back.
    char* stop = nullptr;
    v = std::strtod(s.c_str(), &stop);
    if (stop != s.c_str() + s.size()) return std::nullopt;
  }
  return v;
}

struct Row {
  std::size_t line;
  double time;
  VehicleState state;
  std::optional<Vec2> heading;
  std::optional<double> a_long;
  std::optional<Vec2> accel;
  int lane = 0;
  bool has_lane = false;
};

struct ColumnIndex {
  int id = -1, time = -1, frame = -1, x = -1, y = -1, vx = -1, vy = -1, length = -1, width = -1;
  int a_long = -1, ax = -1, ay = -1, hx = -1, hy = -1, lane = -1;
};

void derive_kinematics(Trajectory& traj, std::vector<Row>& rows) {
  const std::size_t n = rows.size();
  // Headings: explicit, else velocity with forward fallback, then backfill
  // from the first moving state.
  std::optional<Vec2> last;
  std::vector<bool> known(n, false);
  for (std::size_t i = 0; i < n; ++i) {
    auto& r = rows[i];
    if (r.heading && r.heading->norm() > 1e-12) {
      r.state.heading = *r.heading * (1.0 / r.heading->norm());
      known[i] = true;
    } else if (r.state.speed() >= kMinHeadingSpeed) {
      r.state.heading = heading_from_velocity(r.state.velocity);
      known[i] = true;
    } else if (last) {
      r.state.heading = *last;
      known[i] = true;
    }
    if (known[i]) last = r.state.heading;
  }
  const auto first_known = std::find(known.begin(), known.end(), true);
  if (first_known == known.end())
    throw DataError("undefined heading: vehicle " + std::to_string(traj.vehicle_id) + " never moves");
  const Vec2 backfill = rows[static_cast<std::size_t>(first_known - known.begin())].state.heading;
  for (std::size_t i = 0; i < n && !known[i]; ++i) rows[i].state.heading = backfill;

  for (std::size_t i = 0; i < n; ++i) {
    auto& r = rows[i];
    if (r.a_long) {
      r.state.acceleration_long = *r.a_long;
    } else if (r.accel) {
      r.state.acceleration_long = dot(*r.accel, r.state.heading);
    } else if (n >= 2) {
      const std::size_t lo = i == 0 ? 0 : i - 1;
      const std::size_t hi = i + 1 < n ? i + 1 : n - 1;
      const double dt = rows[hi].time - rows[lo].time;
      r.state.acceleration_long =
          dot(rows[hi].state.velocity - rows[lo].state.velocity, r.state.heading) / dt;
    }
    traj.states.push_back(r.state);
  }
  if (std::any_of(rows.begin(), rows.end(), [](const Row& r) { return r.has_lane; })) {
    for (const auto& r : rows) traj.lanes.push_back(r.has_lane ? r.lane : -1);
  }
}

}  // namespace

ParseResult parse_trajectory_stream(std::istream& in, const SchemaProfile& profile,
                                    const std::string& source) {
  std::string header_line;
  if (!std::getline(in, header_line)) throw ParseError(source + ": empty file, header row required");
  if (header_line.size() >= 3 && header_line.compare(0, 3, "\xEF\xBB\xBF") == 0) header_line.erase(0, 3);
  const auto header = split_csv_line(header_line);
  std::unordered_map<std::string, int> pos;
  for (std::size_t i = 0; i < header.size(); ++i) pos[trim(header[i])] = static_cast<int>(i);
  auto find = [&pos](const std::string& name) {
    if (name.empty()) return -1;
    auto it = pos.find(name);
    return it == pos.end() ? -1 : it->second;
  };

  ColumnIndex c;
  std::vector<std::string> missing;
  auto require = [&](const std::string& name, int& slot) {
    slot = find(name);
    if (slot < 0) missing.push_back(name.empty() ? "<unset>" : name);
  };
  require(profile.id, c.id);
  if (!profile.time.empty() && find(profile.time) >= 0) {
    c.time = find(profile.time);
  } else if (!profile.frame.empty()) {
    require(profile.frame, c.frame);
    if (!(profile.frame_rate > 0.0))
      throw ParseError(source + ": profile " + profile.name + " uses frame indices but has no frame rate");
  } else {
    require(profile.time, c.time);
  }
  require(profile.x, c.x);
  require(profile.y, c.y);
  require(profile.vx, c.vx);
  require(profile.vy, c.vy);
  require(profile.length, c.length);
  require(profile.width, c.width);
  if (!missing.empty()) {
    std::string list;
    for (const auto& m : missing) list += (list.empty() ? "" : ", ") + m;
    throw ParseError(source + ": header is missing required columns: " + list);
  }
  c.a_long = find(profile.a_long);
  c.ax = find(profile.ax);
  c.ay = find(profile.ay);
  c.hx = find(profile.heading_x);
  c.hy = find(profile.heading_y);
  c.lane = find(profile.lane);

  ParseResult result;
  std::map<std::int64_t, std::vector<Row>> by_id;
  std::string line;
  std::size_t line_no = 1;
  const double k = profile.distance_scale;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto f = split_csv_line(line);
    auto num = [&f](int col) -> std::optional<double> {
      if (col < 0 || static_cast<std::size_t>(col) >= f.size()) return std::nullopt;
      return parse_number(f[static_cast<std::size_t>(col)]);
    };
    auto reject = [&](const std::string& why) { result.diagnostics.push_back({line_no, why}); };
    if (f.size() < header.size()) {
      reject("expected " + std::to_string(header.size()) + " fields, found " + std::to_string(f.size()));
      continue;
    }
    const auto id = num(c.id);
    const auto t = c.time >= 0 ? num(c.time) : num(c.frame);
    const auto x = num(c.x), y = num(c.y), vx = num(c.vx), vy = num(c.vy);
    const auto len = num(c.length), wid = num(c.width);
    std::string bad;
    auto check = [&bad](const std::optional<double>& v, const std::string& name) {
      if (!v || !std::isfinite(*v)) bad += (bad.empty() ? "" : ", ") + name;
    };
    check(id, profile.id);
    check(t, c.time >= 0 ? profile.time : profile.frame);
    check(x, profile.x);
    check(y, profile.y);
    check(vx, profile.vx);
    check(vy, profile.vy);
    check(len, profile.length);
    check(wid, profile.width);
    if (!bad.empty()) {
      reject("missing or non-finite required fields: " + bad);
      continue;
    }
    if (!(*len > 0.0) || !(*wid > 0.0)) {
      reject("vehicle length and width must be positive");
      continue;
    }
    Row r;
    r.line = line_no;
    r.time = c.time >= 0 ? *t : *t / profile.frame_rate;
    r.state.time = r.time;
    r.state.length = *len * k;
    r.state.width = *wid * k;
    r.state.position = {*x * k, *y * k};
    if (profile.position_is_corner)
      r.state.position += Vec2{0.5 * r.state.length, 0.5 * r.state.width};
    r.state.velocity = {*vx * k, *vy * k};
    if (auto a = num(c.a_long); a && std::isfinite(*a)) r.a_long = *a * k;
    if (auto ax = num(c.ax), ay = num(c.ay); ax && ay && std::isfinite(*ax) && std::isfinite(*ay))
      r.accel = Vec2{*ax * k, *ay * k};
    if (auto hx = num(c.hx), hy = num(c.hy); hx && hy && std::isfinite(*hx) && std::isfinite(*hy))
      r.heading = Vec2{*hx, *hy};
    if (auto lane = num(c.lane); lane && std::isfinite(*lane)) {
      r.lane = static_cast<int>(std::lround(*lane));
      r.has_lane = true;
    }
    by_id[static_cast<std::int64_t>(std::llround(*id))].push_back(std::move(r));
  }

  double rate = profile.frame_rate;
  if (!(rate > 0.0)) {
    double step = std::numeric_limits<double>::infinity();
    for (const auto& [vid, rows] : by_id)
      for (std::size_t i = 1; i < rows.size(); ++i)
        if (rows[i].time > rows[i - 1].time) step = std::min(step, rows[i].time - rows[i - 1].time);
    // Rates are quantised to 1/1000 Hz so that float noise in timestamps does not leak in.
    rate = std::isfinite(step) ? std::round(1000.0 / step) / 1000.0 : 10.0;
  }
  const double period = 1.0 / rate;
  for (auto& [vid, rows] : by_id) {
    for (std::size_t i = 1; i < rows.size(); ++i) {
      const double dt = rows[i].time - rows[i - 1].time;
      if (!(dt > 0.0)) {
        std::ostringstream msg;
        msg << source << ": non-monotone timestamps for vehicle " << vid << " at line " << rows[i].line;
        throw DataError(msg.str());
      }
      const double frames = dt / period;
      if (std::abs(frames - std::round(frames)) * period > 1e-6) {
        std::ostringstream msg;
        msg << source << ": vehicle " << vid << " spacing " << dt << " s at line " << rows[i].line
            << " is not a multiple of 1/" << rate << " s";
        throw DataError(msg.str());
      }
    }
    Trajectory traj;
    traj.vehicle_id = vid;
    traj.frame_rate = rate;
    derive_kinematics(traj, rows);
    result.trajectories.push_back(std::move(traj));
  }
  return result;
}

ParseResult parse_trajectory_csv(const std::string& path, const SchemaProfile& profile) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open trajectory file " + path, path);
  return parse_trajectory_stream(in, profile, path);
}

namespace {

std::ofstream open_for_write(const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path, path);
  out.precision(17);
  return out;
}

}  // namespace

void write_trajectory_csv(const std::string& path, const std::vector<Trajectory>& trajectories) {
  auto out = open_for_write(path);
  const bool lanes = std::any_of(trajectories.begin(), trajectories.end(),
                                 [](const Trajectory& t) { return !t.lanes.empty(); });
  out << "id,time,x,y,vx,vy,a_long,length,width,heading_x,heading_y" << (lanes ? ",lane_id" : "") << '\n';
  for (const auto& t : trajectories) {
    for (std::size_t i = 0; i < t.states.size(); ++i) {
      const auto& s = t.states[i];
      out << t.vehicle_id << ',' << s.time << ',' << s.position.x << ',' << s.position.y << ','
          << s.velocity.x << ',' << s.velocity.y << ',' << s.acceleration_long << ',' << s.length
          << ',' << s.width << ',' << s.heading.x << ',' << s.heading.y;
      if (lanes) out << ',' << (t.lanes.empty() ? -1 : t.lanes[i]);
      out << '\n';
    }
  }
}

void write_highd_csv(const std::string& path, const std::vector<Trajectory>& trajectories) {
  auto out = open_for_write(path);
  out << "frame,id,x,y,width,height,xVelocity,yVelocity,xAcceleration,yAcceleration,laneId\n";
  for (const auto& t : trajectories) {
    for (std::size_t i = 0; i < t.states.size(); ++i) {
      const auto& s = t.states[i];
      const Vec2 acc = s.heading * s.acceleration_long;
      out << std::llround(s.time * t.frame_rate) << ',' << t.vehicle_id << ','
          << s.position.x - 0.5 * s.length << ',' << s.position.y - 0.5 * s.width << ',' << s.length
          << ',' << s.width << ',' << s.velocity.x << ',' << s.velocity.y << ',' << acc.x << ','
          << acc.y << ',' << (t.lanes.empty() ? -1 : t.lanes[i]) << '\n';
    }
  }
}

// ---------------------------------------------------------------------------
// Lanes

const Lane* LaneLayout::find(int id) const {
  for (const auto& l : lanes)
    if (l.id == id) return &l;
  return nullptr;
}

LaneLayout layout_from_markings(const std::vector<double>& upper, const std::vector<double>& lower) {
  LaneLayout layout;
  double width_sum = 0.0;
  int count = 0;
  int marking_id = 0;
  auto add = [&](const std::vector<double>& marks) {
    for (std::size_t i = 0; i < marks.size(); ++i) {
      ++marking_id;
      if (i == 0) continue;
      layout.lanes.push_back({marking_id, 0.5 * (marks[i - 1] + marks[i])});
      width_sum += std::abs(marks[i] - marks[i - 1]);
      ++count;
    }
  };
  add(upper);
  add(lower);
  if (count > 0) layout.lane_width = width_sum / count;
  return layout;
}

LaneLayout layout_from_json(const nlohmann::json& j) {
  try {
    if (j.contains("upper_markings") || j.contains("lower_markings")) {
      return layout_from_markings(j.value("upper_markings", std::vector<double>{}),
                                  j.value("lower_markings", std::vector<double>{}));
    }
    LaneLayout layout;
    layout.lane_width = j.value("lane_width", 3.75);
    for (const auto& l : j.at("lanes")) layout.lanes.push_back({l.at("id").get<int>(), l.at("centre").get<double>()});
    return layout;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("malformed lane layout: ") + e.what());
  }
}

nlohmann::json layout_to_json(const LaneLayout& layout) {
  nlohmann::json lanes = nlohmann::json::array();
  for (const auto& l : layout.lanes) lanes.push_back({{"id", l.id}, {"centre", l.centre}});
  return {{"lane_width", layout.lane_width}, {"lanes", lanes}};
}

std::vector<int> assign_lanes(const Trajectory& traj, const LaneLayout& layout) {
  std::vector<int> out(traj.states.size(), -1);
  for (std::size_t i = 0; i < traj.states.size(); ++i) {
    if (!traj.lanes.empty()) {
      for (std::size_t k = 0; k < layout.lanes.size(); ++k)
        if (layout.lanes[k].id == traj.lanes[i]) out[i] = static_cast<int>(k);
      if (out[i] >= 0) continue;
    }
    const double lat = traj.states[i].position.y;
    double best = layout.lane_width;
    for (std::size_t k = 0; k < layout.lanes.size(); ++k) {
      const double d = std::abs(lat - layout.lanes[k].centre);
      if (d <= best) {
        best = d;
        out[i] = static_cast<int>(k);
      }
    }
  }
  return out;
}

std::vector<LaneChangeAnnotation> extract_lane_changes(const Trajectory& traj, const LaneLayout& layout) {
  std::vector<LaneChangeAnnotation> out;
  const auto lanes = assign_lanes(traj, layout);
  const std::size_t n = lanes.size();

  struct Switch {
    std::size_t frame;
    int from, to;
  };
  std::vector<Switch> switches;
  int current = -1;
  for (std::size_t i = 0; i < n; ++i) {
    if (lanes[i] < 0) continue;
    if (current >= 0 && lanes[i] != current) switches.push_back({i, current, lanes[i]});
    current = lanes[i];
  }

  std::size_t floor_index = 0;  // no annotation may start before the previous end
  for (std::size_t s = 0; s < switches.size(); ++s) {
    const auto& sw = switches[s];
    const Lane& from = layout.lanes[static_cast<std::size_t>(sw.from)];
    const Lane& to = layout.lanes[static_cast<std::size_t>(sw.to)];
    const double dir = to.centre > from.centre ? 1.0 : -1.0;
    const double threshold = traj.states[sw.frame].width / 3.0;
    auto toward = [&](std::size_t i) { return (traj.states[i].position.y - from.centre) * dir; };

    std::size_t start = sw.frame;
    while (start > floor_index && toward(start - 1) > threshold) --start;

    const std::size_t limit = s + 1 < switches.size() ? switches[s + 1].frame : n;
    std::size_t end = sw.frame;
    while (end < limit && std::abs(traj.states[end].position.y - to.centre) >= threshold) ++end;
    if (end >= limit) end = limit - 1;
    if (end <= start) {
      if (start + 1 >= n) continue;
      end = start + 1;
    }
    out.push_back({traj.vehicle_id, traj.states[start].time, traj.states[end].time, from.id, to.id});
    floor_index = end;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Events

std::string to_string(EventKind kind) {
  switch (kind) {
    case EventKind::lane_change:
      return "lane_change";
    case EventKind::near_crash:
      return "near_crash";
    case EventKind::generic:
      break;
  }
  return "generic";
}

EventKind event_kind_from_string(const std::string& s) {
  if (s == "lane_change") return EventKind::lane_change;
  if (s == "near_crash") return EventKind::near_crash;
  if (s == "generic") return EventKind::generic;
  throw ParseError("unknown event kind '" + s + "'");
}

std::vector<std::pair<VehicleState, VehicleState>> aligned_states(const InteractionEvent& event) {
  std::vector<std::pair<VehicleState, VehicleState>> out;
  for (const auto& e : event.ego.states) {
    if (e.time < event.t_start - 1e-9 || e.time > event.t_end + 1e-9) continue;
    if (auto j = event.target.index_at(e.time)) out.emplace_back(e, event.target.states[*j]);
  }
  return out;
}

InteractionEvent make_event(std::string id, const Trajectory& ego, const Trajectory& target,
                            double t_start, double t_end, EventKind kind) {
  InteractionEvent ev;
  ev.id = std::move(id);
  ev.ego = ego.slice(t_start, t_end);
  ev.target = target.slice(t_start, t_end);
  if (ev.ego.empty() || ev.target.empty())
    throw DataError("event " + ev.id + " window has no states for both vehicles");
  ev.t_start = std::max(ev.ego.t_begin(), ev.target.t_begin());
  ev.t_end = std::min(ev.ego.t_end(), ev.target.t_end());
  if (ev.t_end < ev.t_start) throw DataError("event " + ev.id + " trajectories do not overlap");
  ev.ego = ev.ego.slice(ev.t_start, ev.t_end);
  ev.target = ev.target.slice(ev.t_start, ev.t_end);
  ev.kind = kind;
  return ev;
}

std::vector<InteractionEvent> pair_interactions(const std::vector<Trajectory>& trajectories,
                                                const LaneLayout& layout,
                                                const PairingOptions& options) {
  std::vector<InteractionEvent> events;
  std::vector<std::vector<int>> lanes;
  lanes.reserve(trajectories.size());
  for (const auto& t : trajectories) lanes.push_back(assign_lanes(t, layout));

  for (std::size_t e = 0; e < trajectories.size(); ++e) {
    const auto& ego = trajectories[e];
    if (ego.empty()) continue;
    const auto changes = extract_lane_changes(ego, layout);
    for (std::size_t c = 0; c < changes.size(); ++c) {
      const auto& lc = changes[c];
      const Lane* origin = layout.find(lc.origin_lane);
      const Lane* target_lane = layout.find(lc.target_lane);
      const double w0 = std::max(ego.t_begin(), lc.t_start - options.margin);
      const double w1 = std::min(ego.t_end(), lc.t_end + options.margin);
      for (std::size_t o = 0; o < trajectories.size(); ++o) {
        if (o == e || trajectories[o].empty()) continue;
        const auto& other = trajectories[o];
        const double t0 = std::max(w0, other.t_begin());
        const double t1 = std::min(w1, other.t_end());
        if (t1 < t0) continue;
        bool near = false;
        for (std::size_t i = 0; i < other.states.size() && !near; ++i) {
          const auto& st = other.states[i];
          if (st.time < t0 - 1e-9 || st.time > t1 + 1e-9) continue;
          const int li = lanes[o][i];
          if (li < 0) continue;
          const int lane_id = layout.lanes[static_cast<std::size_t>(li)].id;
          if (!((origin && lane_id == origin->id) || (target_lane && lane_id == target_lane->id))) continue;
          const auto j = ego.index_at(st.time);
          if (j && centre_distance(ego.states[*j], st) < options.max_gap) near = true;
        }
        if (!near) continue;
        std::string id = std::to_string(ego.vehicle_id) + "-" + std::to_string(other.vehicle_id) + "-" +
                         std::to_string(c);
        InteractionEvent ev = make_event(std::move(id), ego, other, t0, t1, EventKind::lane_change);
        ev.lane_change = lc;
        events.push_back(std::move(ev));
      }
    }
  }
  return events;
}

bool passes_warning_filter(const InteractionEvent& event, const WarningFilter& rules) {
  if (event.duration() < rules.min_duration - 1e-9) return false;
  const auto frames = aligned_states(event);
  if (frames.empty()) return false;
  if (!(frames.front().first.speed() > rules.min_initial_speed)) return false;
  if (!(frames.front().second.speed() > rules.min_initial_speed)) return false;
  for (const auto& [ego, target] : frames) {
    if (ego.time >= event.t_start + rules.braking_window - 1e-9) break;
    if (!(ego.acceleration_long > rules.hard_braking)) return false;
  }
  return true;
}

std::vector<InteractionEvent> filter_warning_events(const std::vector<InteractionEvent>& events,
                                                    const WarningFilter& rules) {
  std::vector<InteractionEvent> out;
  for (const auto& e : events)
    if (passes_warning_filter(e, rules)) out.push_back(e);
  return out;
}

// ---------------------------------------------------------------------------
// Manifest

nlohmann::json event_record_json(const EventRecord& r) {
  nlohmann::json j = {{"event_id", r.id},       {"kind", to_string(r.kind)},
                      {"ego_id", r.ego_id},     {"target_id", r.target_id},
                      {"t_start", r.t_start},   {"t_end", r.t_end},
                      {"source", r.source},     {"profile", r.profile}};
  if (r.critical_time) j["critical_time"] = *r.critical_time;
  return j;
}

EventRecord event_record_from_json(const nlohmann::json& j) {
  try {
    EventRecord r;
    r.id = j.at("event_id").get<std::string>();
    r.kind = event_kind_from_string(j.value("kind", std::string("generic")));
    r.ego_id = j.at("ego_id").get<std::int64_t>();
    r.target_id = j.at("target_id").get<std::int64_t>();
    r.t_start = j.at("t_start").get<double>();
    r.t_end = j.at("t_end").get<double>();
    r.source = j.at("source").get<std::string>();
    r.profile = j.value("profile", std::string("event_like"));
    if (j.contains("critical_time")) r.critical_time = j.at("critical_time").get<double>();
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("malformed event record: ") + e.what());
  }
}

EventRecord summarize_event(const InteractionEvent& event, const std::string& source,
                            const std::string& profile) {
  EventRecord r;
  r.id = event.id;
  r.kind = event.kind;
  r.ego_id = event.ego.vehicle_id;
  r.target_id = event.target.vehicle_id;
  r.t_start = event.t_start;
  r.t_end = event.t_end;
  r.source = source;
  r.profile = profile;
  return r;
}

void write_event_manifest(const std::string& path, const std::vector<EventRecord>& records) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write event manifest " + path, path);
  for (const auto& r : records) out << event_record_json(r).dump() << '\n';
}

std::vector<EventRecord> read_event_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open event manifest " + path, path);
  std::vector<EventRecord> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (trim(line).empty()) continue;
    try {
      out.push_back(event_record_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(path + ":" + std::to_string(n) + ": " + e.what());
    } catch (const ParseError& e) {
      throw ParseError(path + ":" + std::to_string(n) + ": " + e.what());
    }
  }
  return out;
}

std::vector<InteractionEvent> load_events(const std::string& manifest_path) {
  const auto records = read_event_manifest(manifest_path);
  const std::filesystem::path base = std::filesystem::path(manifest_path).parent_path();
  std::map<std::string, std::map<std::int64_t, Trajectory>> cache;
  std::vector<InteractionEvent> events;
  for (const auto& r : records) {
    const std::string key = r.source + "|" + r.profile;
    auto it = cache.find(key);
    if (it == cache.end()) {
      const std::filesystem::path src = std::filesystem::path(r.source).is_absolute()
                                            ? std::filesystem::path(r.source)
                                            : base / r.source;
      auto parsed = parse_trajectory_csv(src.string(), profile_by_name(r.profile));
      std::map<std::int64_t, Trajectory> by_id;
      for (auto& t : parsed.trajectories) by_id.emplace(t.vehicle_id, std::move(t));
      it = cache.emplace(key, std::move(by_id)).first;
    }
    const auto ego = it->second.find(r.ego_id);
    const auto target = it->second.find(r.target_id);
    if (ego == it->second.end() || target == it->second.end())
      throw DataError("event " + r.id + " references vehicles missing from " + r.source);
    events.push_back(make_event(r.id, ego->second, target->second, r.t_start, r.t_end, r.kind));
  }
  return events;
}

}  // namespace ucd
