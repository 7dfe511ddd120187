//! Deterministic kinematic stand-in for the guide robot.
//!
//! Navigation follows a rotate-then-translate unicycle policy: the robot turns
//! toward the goal bearing, drives straight, then turns to the goal heading.
//! Every rate is clamped per tick, so one call to [`tick`] never moves the
//! robot further than `v_max * tick` or turns it more than
//! `omega_max * tick`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{normalize_angle, Pose2D, RobotMode, RobotStatus, Timestamp};

/// Slack applied to arrival comparisons so accumulated rounding in the pose
/// does not cost an extra tick.
const ARRIVAL_SLACK: f64 = 1e-9;
/// Heading error under which the robot is considered aligned with the goal
/// bearing and may translate.
const ALIGNED: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    /// m/s
    pub v_max: f64,
    /// rad/s
    pub omega_max: f64,
    /// seconds per simulation step
    pub tick: f64,
    /// meters
    pub arrive_dist: f64,
    /// radians
    pub arrive_angle: f64,
    /// words per second
    pub speech_rate: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            v_max: 0.5,
            omega_max: 1.0,
            tick: 0.1,
            arrive_dist: 0.05,
            arrive_angle: 0.1,
            speech_rate: 2.5,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("v_max", self.v_max),
            ("omega_max", self.omega_max),
            ("tick", self.tick),
            ("arrive_dist", self.arrive_dist),
            ("arrive_angle", self.arrive_angle),
            ("speech_rate", self.speech_rate),
        ];
        for (name, value) in fields {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::validation(format!(
                    "sim.{name} must be strictly positive, got {value}"
                )));
            }
        }
        if self.tick > 1.0 {
            return Err(Error::validation(format!(
                "sim.tick must be at most 1 second, got {}",
                self.tick
            )));
        }
        Ok(())
    }

    /// Number of whole ticks needed to cover `seconds`.
    pub fn ticks_for(&self, seconds: f64) -> u64 {
        (seconds / self.tick - 1e-9).ceil().max(0.0) as u64
    }
}

fn wrap(angle: f64) -> f64 {
    normalize_angle(angle).expect("finite angle")
}

/// Signed smallest rotation taking heading `from` onto heading `to`.
fn heading_error(to: f64, from: f64) -> f64 {
    wrap(to - from)
}

/// Advances a robot status by one tick. Idle and speaking robots are
/// returned unchanged.
pub fn tick(status: &RobotStatus, cfg: &SimConfig) -> RobotStatus {
    let goal = match (status.mode, status.goal) {
        (RobotMode::Navigating, Some(goal)) => goal,
        _ => return status.clone(),
    };
    let pose = status.pose;
    let dist = pose.distance_to(&goal);
    let at_position = dist <= cfg.arrive_dist + ARRIVAL_SLACK;

    if at_position
        && heading_error(goal.theta, pose.theta).abs() <= cfg.arrive_angle + ARRIVAL_SLACK
    {
        return RobotStatus {
            mode: RobotMode::Idle,
            goal: None,
            ..status.clone()
        };
    }

    let max_turn = cfg.omega_max * cfg.tick;
    let next = if at_position {
        let err = heading_error(goal.theta, pose.theta);
        Pose2D {
            theta: wrap(pose.theta + err.clamp(-max_turn, max_turn)),
            ..pose
        }
    } else {
        let bearing = (goal.y - pose.y).atan2(goal.x - pose.x);
        let err = heading_error(bearing, pose.theta);
        let turn = err.clamp(-max_turn, max_turn);
        let theta = wrap(pose.theta + turn);
        if (err - turn).abs() <= ALIGNED {
            let step = dist.min(cfg.v_max * cfg.tick);
            Pose2D {
                x: pose.x + step * theta.cos(),
                y: pose.y + step * theta.sin(),
                theta,
            }
        } else {
            Pose2D { theta, ..pose }
        }
    };

    RobotStatus {
        pose: next,
        ..status.clone()
    }
}

/// Closed-form travel time for the rotate-then-translate policy, ignoring
/// tick quantization and arrival tolerances.
pub fn estimate_travel_time(from: &Pose2D, to: &Pose2D, cfg: &SimConfig) -> f64 {
    let dist = from.distance_to(to);
    let (turn, final_turn) = if dist > 0.0 {
        let bearing = (to.y - from.y).atan2(to.x - from.x);
        (
            heading_error(bearing, from.theta).abs(),
            heading_error(to.theta, bearing).abs(),
        )
    } else {
        (0.0, heading_error(to.theta, from.theta).abs())
    };
    turn / cfg.omega_max + dist / cfg.v_max + final_turn / cfg.omega_max
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TeleopDirection {
    Forward,
    Back,
    RotateLeft,
    RotateRight,
}

/// Pose after one manual drive step.
pub fn teleop_pose(pose: &Pose2D, direction: TeleopDirection, cfg: &SimConfig) -> Pose2D {
    let step = cfg.v_max * cfg.tick;
    let turn = cfg.omega_max * cfg.tick;
    match direction {
        TeleopDirection::Forward => Pose2D {
            x: pose.x + step * pose.theta.cos(),
            y: pose.y + step * pose.theta.sin(),
            theta: pose.theta,
        },
        TeleopDirection::Back => Pose2D {
            x: pose.x - step * pose.theta.cos(),
            y: pose.y - step * pose.theta.sin(),
            theta: pose.theta,
        },
        TeleopDirection::RotateLeft => Pose2D {
            theta: wrap(pose.theta + turn),
            ..*pose
        },
        TeleopDirection::RotateRight => Pose2D {
            theta: wrap(pose.theta - turn),
            ..*pose
        },
    }
}

/// Text-to-speech backend. The simulator only needs to know how long an
/// utterance lasts; a hardware engine would also play audio.
pub trait SpeechEngine: Send {
    fn duration_secs(&self, text: &str) -> f64;
}

/// Timing model: `max(1, ceil(words / rate))` seconds, zero for empty text.
#[derive(Debug, Clone, Copy)]
pub struct WordRateSpeech {
    pub words_per_second: f64,
}

impl SpeechEngine for WordRateSpeech {
    fn duration_secs(&self, text: &str) -> f64 {
        let words = text.split_whitespace().count();
        if words == 0 {
            return 0.0;
        }
        (words as f64 / self.words_per_second).ceil().max(1.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeechEvent {
    pub text: String,
    pub started_at: Timestamp,
    /// seconds
    pub duration: f64,
}

#[derive(Debug)]
struct ActiveSpeech {
    ticks_left: u64,
}

/// Owns the simulated robot state and applies commands between ticks.
pub struct SimRobot {
    cfg: SimConfig,
    status: RobotStatus,
    speech: Option<ActiveSpeech>,
    speech_engine: Box<dyn SpeechEngine>,
    stalled: bool,
}

impl std::fmt::Debug for SimRobot {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SimRobot")
            .field("cfg", &self.cfg)
            .field("status", &self.status)
            .field("speech", &self.speech)
            .field("stalled", &self.stalled)
            .finish()
    }
}

impl SimRobot {
    pub fn new(cfg: SimConfig, pose: Pose2D) -> Self {
        let speech_engine = Box::new(WordRateSpeech {
            words_per_second: cfg.speech_rate,
        });
        SimRobot {
            cfg,
            status: RobotStatus::idle_at(pose),
            speech: None,
            speech_engine,
            stalled: false,
        }
    }

    pub fn with_speech_engine(mut self, engine: Box<dyn SpeechEngine>) -> Self {
        self.speech_engine = engine;
        self
    }

    pub fn config(&self) -> &SimConfig {
        &self.cfg
    }

    pub fn status(&self) -> &RobotStatus {
        &self.status
    }

    pub fn pose(&self) -> Pose2D {
        self.status.pose
    }

    pub fn mode(&self) -> RobotMode {
        self.status.mode
    }

    /// Fault injection: a stalled robot accepts goals but does not move.
    pub fn set_stalled(&mut self, stalled: bool) {
        self.stalled = stalled;
    }

    pub fn set_goal(&mut self, goal: Pose2D) -> Result<()> {
        if self.status.mode == RobotMode::Speaking {
            return Err(Error::busy("busy speaking"));
        }
        self.status.mode = RobotMode::Navigating;
        self.status.goal = Some(goal);
        Ok(())
    }

    pub fn speak(&mut self, text: &str, now: Timestamp) -> Result<SpeechEvent> {
        match self.status.mode {
            RobotMode::Navigating => return Err(Error::busy("busy navigating")),
            RobotMode::Speaking => return Err(Error::busy("busy speaking")),
            RobotMode::Idle => {}
        }
        let duration = self.speech_engine.duration_secs(text);
        let ticks = self.cfg.ticks_for(duration);
        if ticks > 0 {
            self.status.mode = RobotMode::Speaking;
            self.speech = Some(ActiveSpeech { ticks_left: ticks });
        }
        Ok(SpeechEvent {
            text: text.to_string(),
            started_at: now,
            duration,
        })
    }

    pub fn teleop(&mut self, direction: TeleopDirection) -> Result<RobotStatus> {
        if self.status.mode != RobotMode::Idle {
            return Err(Error::busy("busy"));
        }
        self.status.pose = teleop_pose(&self.status.pose, direction, &self.cfg);
        Ok(self.status.clone())
    }

    /// Drops any goal or utterance and returns to idle in place.
    pub fn cancel(&mut self) {
        self.status.mode = RobotMode::Idle;
        self.status.goal = None;
        self.speech = None;
    }

    /// One simulation step.
    pub fn step(&mut self) {
        match self.status.mode {
            RobotMode::Speaking => {
                if let Some(speech) = self.speech.as_mut() {
                    speech.ticks_left = speech.ticks_left.saturating_sub(1);
                    if speech.ticks_left == 0 {
                        self.speech = None;
                        self.status.mode = RobotMode::Idle;
                    }
                } else {
                    self.status.mode = RobotMode::Idle;
                }
            }
            RobotMode::Navigating if !self.stalled => {
                self.status = tick(&self.status, &self.cfg);
            }
            _ => {}
        }
    }
}
