//! Domain types shared by every subsystem: poses, identifiers, timestamps,
//! locations, tours, tour runs and the robot status snapshot.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, SecondsFormat, TimeZone, Utc};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

const TWO_PI: f64 = 2.0 * PI;

/// Maximum length, in characters, of a location's speech description.
pub const MAX_DESCRIPTION_CHARS: usize = 10_000;

/// Reduces an angle to the half-open interval `(-pi, pi]`.
///
/// Angles already inside the interval are returned unchanged, which makes the
/// reduction exactly idempotent.
pub fn normalize_angle(theta: f64) -> Result<f64> {
    if !theta.is_finite() {
        return Err(Error::validation(format!(
            "angle must be finite, got {theta}"
        )));
    }
    if theta > -PI && theta <= PI {
        return Ok(theta);
    }
    let mut r = theta.rem_euclid(TWO_PI);
    if r > PI {
        r -= TWO_PI;
    }
    // rem_euclid may round up to exactly 2*pi for tiny negative inputs
    if r <= -PI {
        r += TWO_PI;
    }
    Ok(r)
}

/// Planar robot pose. `theta` is always normalized to `(-pi, pi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Pose2D {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl Pose2D {
    pub const ORIGIN: Pose2D = Pose2D {
        x: 0.0,
        y: 0.0,
        theta: 0.0,
    };

    pub fn new(x: f64, y: f64, theta: f64) -> Result<Self> {
        if !x.is_finite() || !y.is_finite() {
            return Err(Error::validation(format!(
                "pose position must be finite, got ({x}, {y})"
            )));
        }
        Ok(Pose2D {
            x,
            y,
            theta: normalize_angle(theta)?,
        })
    }

    pub fn distance_to(&self, other: &Pose2D) -> f64 {
        (other.x - self.x).hypot(other.y - self.y)
    }
}

#[derive(Deserialize)]
struct RawPose {
    x: f64,
    y: f64,
    theta: f64,
}

impl<'de> Deserialize<'de> for Pose2D {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let raw = RawPose::deserialize(deserializer)?;
        Pose2D::new(raw.x, raw.y, raw.theta).map_err(serde::de::Error::custom)
    }
}

/// Opaque 128-bit identifier, rendered as 32 lowercase hex digits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Id(u128);

impl Id {
    pub fn from_u128(raw: u128) -> Self {
        Id(raw)
    }

    pub fn as_u128(self) -> u128 {
        self.0
    }
}

/// Generates a fresh random identifier.
pub fn new_id() -> Id {
    Id(rand::random())
}

impl fmt::Display for Id {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:032x}", self.0)
    }
}

impl FromStr for Id {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let ok = s.len() == 32 && s.bytes().all(|b| matches!(b, b'0'..=b'9' | b'a'..=b'f'));
        if !ok {
            return Err(Error::validation(format!("malformed identifier {s:?}")));
        }
        u128::from_str_radix(s, 16)
            .map(Id)
            .map_err(|e| Error::validation(format!("malformed identifier {s:?}: {e}")))
    }
}

impl Serialize for Id {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Id {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// UTC instant with whole-second precision.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Timestamp(DateTime<Utc>);

impl Timestamp {
    pub fn now() -> Self {
        Timestamp::from_datetime(Utc::now())
    }

    /// Truncates any sub-second part.
    pub fn from_datetime(dt: DateTime<Utc>) -> Self {
        Timestamp::from_unix(dt.timestamp())
    }

    pub fn from_unix(secs: i64) -> Self {
        let dt = Utc
            .timestamp_opt(secs, 0)
            .single()
            .expect("unix seconds within chrono range");
        Timestamp(dt)
    }

    pub fn unix(self) -> i64 {
        self.0.timestamp()
    }

    pub fn as_datetime(self) -> DateTime<Utc> {
        self.0
    }

    /// Whole seconds elapsed from `earlier` to `self`.
    pub fn seconds_since(self, earlier: Timestamp) -> i64 {
        self.unix() - earlier.unix()
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0.to_rfc3339_opts(SecondsFormat::Secs, true))
    }
}

impl Serialize for Timestamp {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Timestamp {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        let dt = DateTime::parse_from_rfc3339(&s).map_err(serde::de::Error::custom)?;
        if dt.timestamp_subsec_nanos() != 0 {
            return Err(serde::de::Error::custom(format!(
                "timestamp {s:?} has sub-second precision"
            )));
        }
        Ok(Timestamp::from_datetime(dt.with_timezone(&Utc)))
    }
}

/// Case-insensitive key used for name uniqueness and matching.
pub(crate) fn name_key(name: &str) -> String {
    name.to_lowercase()
}

/// Ordering used wherever names are listed: case-insensitive first, then
/// byte order so the result is total.
pub fn cmp_names(a: &str, b: &str) -> std::cmp::Ordering {
    name_key(a).cmp(&name_key(b)).then_with(|| a.cmp(b))
}

/// Trims and checks a user supplied name.
pub(crate) fn validate_name(kind: &str, name: &str) -> Result<String> {
    let trimmed = name.trim();
    if trimmed.is_empty() {
        return Err(Error::validation(format!("{kind} name must not be empty")));
    }
    Ok(trimmed.to_string())
}

pub(crate) fn validate_description(text: &str) -> Result<()> {
    let n = text.chars().count();
    if n > MAX_DESCRIPTION_CHARS {
        return Err(Error::validation(format!(
            "description is {n} characters, limit is {MAX_DESCRIPTION_CHARS}"
        )));
    }
    Ok(())
}

/// A named, saved robot pose with the text spoken on arrival.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Location {
    pub id: Id,
    pub name: String,
    pub pose: Pose2D,
    pub description: String,
    pub created_at: Timestamp,
}

/// One entry of a tour's itinerary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stop {
    pub location_id: Id,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub speech_override: Option<String>,
}

impl Stop {
    pub fn at(location_id: Id) -> Self {
        Stop {
            location_id,
            speech_override: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tour {
    pub id: Id,
    pub name: String,
    pub tour_type: String,
    pub stops: Vec<Stop>,
    /// Operator-entered duration in minutes.
    pub expected_duration: u32,
    pub created_at: Timestamp,
    pub updated_at: Timestamp,
}

impl Tour {
    pub fn references(&self, location: Id) -> bool {
        self.stops.iter().any(|s| s.location_id == location)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunOutcome {
    Completed,
    Aborted,
    Failed,
}

impl RunOutcome {
    pub fn as_str(self) -> &'static str {
        match self {
            RunOutcome::Completed => "completed",
            RunOutcome::Aborted => "aborted",
            RunOutcome::Failed => "failed",
        }
    }
}

impl fmt::Display for RunOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Record of one tour execution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TourRun {
    pub run_id: Id,
    pub tour_id: Id,
    pub started_at: Timestamp,
    pub ended_at: Timestamp,
    pub outcome: RunOutcome,
    pub stops_visited: u32,
}

impl TourRun {
    pub fn duration_secs(&self) -> i64 {
        self.ended_at.seconds_since(self.started_at)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RobotMode {
    Idle,
    Navigating,
    Speaking,
}

/// Snapshot of the robot. `goal` is present exactly when navigating.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobotStatus {
    pub pose: Pose2D,
    pub mode: RobotMode,
    pub goal: Option<Pose2D>,
    pub active_tour: Option<Id>,
}

impl RobotStatus {
    pub fn idle_at(pose: Pose2D) -> Self {
        RobotStatus {
            pose,
            mode: RobotMode::Idle,
            goal: None,
            active_tour: None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::HashSet;

    #[test]
    fn normalize_examples() {
        assert_eq!(normalize_angle(0.0).unwrap(), 0.0);
        assert!((normalize_angle(3.0 * PI).unwrap() - PI).abs() < 1e-12);
        assert_eq!(normalize_angle(-PI).unwrap(), PI);
        assert_eq!(normalize_angle(PI).unwrap(), PI);
        assert!(normalize_angle(f64::NAN).is_err());
        assert!(normalize_angle(f64::INFINITY).is_err());
        assert_eq!(normalize_angle(-1e-300).unwrap(), -1e-300);
    }

    #[test]
    fn pose_rejects_non_finite() {
        assert!(Pose2D::new(f64::NAN, 0.0, 0.0).is_err());
        assert!(Pose2D::new(0.0, f64::NEG_INFINITY, 0.0).is_err());
        let p = Pose2D::new(1.0, 2.0, 3.0 * PI).unwrap();
        assert!(p.theta <= PI && p.theta > -PI);
    }

    #[test]
    fn pose_deserialize_normalizes() {
        let p: Pose2D =
            serde_json::from_str(r#"{"x":1,"y":2,"theta":-3.141592653589793}"#).unwrap();
        assert_eq!(p.theta, PI);
        assert!(serde_json::from_str::<Pose2D>(r#"{"x":1,"y":2}"#).is_err());
    }

    #[test]
    fn ids_are_distinct_and_round_trip() {
        let a = new_id();
        let b = new_id();
        assert_ne!(a, b);
        let text = a.to_string();
        assert_eq!(text.len(), 32);
        assert_eq!(text.parse::<Id>().unwrap(), a);
        let json = serde_json::to_string(&a).unwrap();
        assert_eq!(serde_json::from_str::<Id>(&json).unwrap(), a);
    }

    #[test]
    fn ten_thousand_ids_are_unique() {
        let ids: HashSet<Id> = (0..10_000).map(|_| new_id()).collect();
        assert_eq!(ids.len(), 10_000);
    }

    #[test]
    fn id_parse_rejects_uppercase_and_wrong_length() {
        assert!("ABCDEF00000000000000000000000000".parse::<Id>().is_err());
        assert!("abc".parse::<Id>().is_err());
        assert!("0000000000000000000000000000000g".parse::<Id>().is_err());
    }

    #[test]
    fn timestamp_truncates_and_round_trips() {
        let dt = Utc.timestamp_opt(1_700_000_000, 999_000_000).unwrap();
        let ts = Timestamp::from_datetime(dt);
        assert_eq!(ts.unix(), 1_700_000_000);
        let json = serde_json::to_string(&ts).unwrap();
        assert_eq!(json, "\"2023-11-14T22:13:20Z\"");
        assert_eq!(serde_json::from_str::<Timestamp>(&json).unwrap(), ts);
        assert!(serde_json::from_str::<Timestamp>("\"2023-11-14T22:13:20.5Z\"").is_err());
    }

    #[test]
    fn names() {
        assert!(validate_name("tour", "  ").is_err());
        assert_eq!(validate_name("tour", " Zoo ").unwrap(), "Zoo");
        assert_eq!(cmp_names("apple", "Zoo"), std::cmp::Ordering::Less);
        assert!(validate_description(&"a".repeat(MAX_DESCRIPTION_CHARS)).is_ok());
        assert!(validate_description(&"a".repeat(MAX_DESCRIPTION_CHARS + 1)).is_err());
    }

    proptest! {
        #[test]
        fn normalize_is_idempotent(theta in -1.0e4f64..1.0e4) {
            let once = normalize_angle(theta).unwrap();
            prop_assert_eq!(normalize_angle(once).unwrap(), once);
            prop_assert!(once > -PI && once <= PI);
        }

        #[test]
        fn normalize_differs_by_whole_turns(theta in -1.0e4f64..1.0e4) {
            let diff = normalize_angle(theta).unwrap() - theta;
            let turns = diff / TWO_PI;
            prop_assert!((turns - turns.round()).abs() * TWO_PI < 1e-9);
        }
    }
}
