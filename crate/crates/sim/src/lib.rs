//! Deterministic multi-agent driving simulation: kinematics, road layouts,
//! vectorized observations and social-value-weighted rewards.

pub mod error;
pub mod geometry;
pub mod observation;
pub mod reward;
pub mod road;
pub mod scenario;
pub mod vehicle;
pub mod world;

pub use error::{Result, SimError};
pub use geometry::{normalize_angle, OrientedRect, Polygon, Polyline, Pose, Projection, Vec2};
pub use observation::{
    nearest_neighbors, observe, vectorize_static, vectorize_vehicles, ElementKind, Observation, ObservationConfig,
    PointFeature, PolylineElement, StaticMap, VehicleTrack,
};
pub use reward::{
    individual_reward, mix_reward, neighborhood, step_rewards, svo_reward, RewardBreakdown, RewardConfig,
};
pub use road::{
    check_failures, detect_collisions, ConflictZone, FailureCause, GlobalPath, LaneLine, RoadNetwork, Route,
    ScenarioKind,
};
pub use scenario::{
    build_bottleneck, build_merge, build_straight, spawn_agents, AgentRange, BottleneckGeometry, Geometry,
    MergeGeometry, ScenarioSpec, SpawnParams, SpawnedAgent, StraightGeometry, SvoDistribution,
};
pub use vehicle::{
    bicycle_step, map_action, pid_step, unmap_action, AgentId, ControlSetpoint, PidGains, PidState, VehicleState,
    MAX_SPEED, MAX_STEER,
};
pub use world::{AgentStatus, SimConfig, StepEvents, TrackPoint, World};
