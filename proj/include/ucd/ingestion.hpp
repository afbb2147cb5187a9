#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "ucd/geometry.hpp"

namespace ucd {

// Time-ordered states of one road user. `lanes` is empty or holds the
// dataset's lane id per state.
struct Trajectory {
  std::int64_t vehicle_id = 0;
  std::vector<VehicleState> states;
  std::vector<int> lanes;
  double frame_rate = 25.0;  // Hz

  bool empty() const { return states.empty(); }
  double t_begin() const { return states.front().time; }
  double t_end() const { return states.back().time; }
  // Index of the state at time t (within a quarter frame), if any.
  std::optional<std::size_t> index_at(double t) const;
  bool covers(double t0, double t1) const;
  // States with t0 <= time <= t1 (quarter-frame tolerance).
  Trajectory slice(double t0, double t1) const;
};

// Dataset-specific column names and conventions. Optional columns may be
// empty or absent from the header.
struct SchemaProfile {
  std::string name;
  std::string id;
  std::string time;   // seconds; empty when time derives from `frame`
  std::string frame;  // frame index, time = frame / frame_rate
  // Hz. With a time column, 0 infers the rate from the smallest time step in
  // the file.
  double frame_rate = 25.0;
  std::string x, y, vx, vy;
  std::string length, width;
  std::string a_long;      // optional, longitudinal acceleration
  std::string ax, ay;      // optional, global acceleration components
  std::string heading_x, heading_y;  // optional
  std::string lane;        // optional
  // Position columns give the top-left corner of an axis-aligned box whose
  // x-extent is `length` and y-extent is `width` (highD convention).
  bool position_is_corner = false;
  double distance_scale = 1.0;  // source length unit to metres
};

SchemaProfile highd_like_profile();
SchemaProfile event_like_profile();
// "highd_like" or "event_like". Throws ParseError otherwise.
SchemaProfile profile_by_name(const std::string& name);
SchemaProfile profile_from_json(const nlohmann::json& j);

struct RowDiagnostic {
  std::size_t line = 0;  // 1-based, header is line 1
  std::string message;
};

struct ParseResult {
  std::vector<Trajectory> trajectories;  // ascending vehicle id
  std::vector<RowDiagnostic> diagnostics;
};

// Rows with missing or non-finite required fields are rejected and reported;
// the rest is parsed. Throws ParseError for a header lacking required columns
// and DataError for non-increasing timestamps within a vehicle.
ParseResult parse_trajectory_csv(const std::string& path, const SchemaProfile& profile);
ParseResult parse_trajectory_stream(std::istream& in, const SchemaProfile& profile,
                                    const std::string& source = "<stream>");

// Writes the event_like schema (id,time,x,y,vx,vy,a_long,length,width,
// heading_x,heading_y[,lane_id]).
void write_trajectory_csv(const std::string& path, const std::vector<Trajectory>& trajectories);

// highd_like schema with corner positions, frame indices and lane ids.
void write_highd_csv(const std::string& path, const std::vector<Trajectory>& trajectories);

// ---------------------------------------------------------------------------
// Lanes and lane changes

struct Lane {
  int id = 0;
  double centre = 0.0;  // lateral coordinate of the centreline
};

// Straight lanes along the x axis; lateral coordinate is y.
struct LaneLayout {
  std::vector<Lane> lanes;
  double lane_width = 3.75;

  const Lane* find(int id) const;
};

// Layout from highD-style marking positions: lanes lie between consecutive
// markings and are numbered by marking index across both carriageways.
LaneLayout layout_from_markings(const std::vector<double>& upper, const std::vector<double>& lower);
LaneLayout layout_from_json(const nlohmann::json& j);
nlohmann::json layout_to_json(const LaneLayout& layout);

// Per-state index into layout.lanes or -1. Dataset lane ids take precedence;
// otherwise the nearest centreline within one lane width.
std::vector<int> assign_lanes(const Trajectory& traj, const LaneLayout& layout);

struct LaneChangeAnnotation {
  std::int64_t ego_id = 0;
  double t_start = 0.0;
  double t_end = 0.0;
  int origin_lane = 0;
  int target_lane = 0;
};

// A change starts at the first state of the run leading into the lane switch
// whose deviation from the origin centreline toward the new lane exceeds a
// third of the vehicle width, and ends at the first later state within a
// third of the width of the new centreline.
std::vector<LaneChangeAnnotation> extract_lane_changes(const Trajectory& traj, const LaneLayout& layout);

// ---------------------------------------------------------------------------
// Interaction events

enum class EventKind { lane_change, near_crash, generic };

std::string to_string(EventKind kind);
EventKind event_kind_from_string(const std::string& s);

struct InteractionEvent {
  std::string id;
  Trajectory ego;
  Trajectory target;
  double t_start = 0.0;
  double t_end = 0.0;
  EventKind kind = EventKind::generic;
  std::optional<LaneChangeAnnotation> lane_change;

  double duration() const { return t_end - t_start; }
};

// Ego/target state pairs at common timestamps inside the event window.
std::vector<std::pair<VehicleState, VehicleState>> aligned_states(const InteractionEvent& event);

InteractionEvent make_event(std::string id, const Trajectory& ego, const Trajectory& target,
                            double t_start, double t_end, EventKind kind);

struct PairingOptions {
  double max_gap = 100.0;  // m, centre-to-centre
  double margin = 2.0;     // s added before and after each lane change
};

// One event per (lane change, surrounding vehicle in the origin or target lane
// that comes within max_gap during the extended window).
std::vector<InteractionEvent> pair_interactions(const std::vector<Trajectory>& trajectories,
                                                const LaneLayout& layout,
                                                const PairingOptions& options = {});

struct WarningFilter {
  double min_duration = 6.0;     // s
  double braking_window = 3.0;   // s from the event start
  double hard_braking = -1.5;    // m/s^2; ego acceleration must stay above
  double min_initial_speed = 3.0;  // m/s, both vehicles at the first frame
};

bool passes_warning_filter(const InteractionEvent& event, const WarningFilter& rules = {});
std::vector<InteractionEvent> filter_warning_events(const std::vector<InteractionEvent>& events,
                                                    const WarningFilter& rules = {});

// ---------------------------------------------------------------------------
// Event manifest (JSON lines)

struct EventRecord {
  std::string id;
  EventKind kind = EventKind::generic;
  std::int64_t ego_id = 0;
  std::int64_t target_id = 0;
  double t_start = 0.0;
  double t_end = 0.0;
  std::string source;   // trajectory CSV, relative to the manifest directory
  std::string profile = "event_like";
  std::optional<double> critical_time;
};

nlohmann::json event_record_json(const EventRecord& record);
EventRecord event_record_from_json(const nlohmann::json& j);
EventRecord summarize_event(const InteractionEvent& event, const std::string& source,
                            const std::string& profile = "event_like");

void write_event_manifest(const std::string& path, const std::vector<EventRecord>& records);
std::vector<EventRecord> read_event_manifest(const std::string& path);

// Loads each record's source file (once per file) and cuts out the event.
std::vector<InteractionEvent> load_events(const std::string& manifest_path);

}  // namespace ucd
