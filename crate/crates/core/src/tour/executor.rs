//! Stop-by-stop tour execution.
//!
//! The executor is polled once per simulator tick. For each stop it sends
//! the robot to the stop's pose, speaks the stop's text when the robot
//! arrives, then moves on. Phases only move along
//! `navigating -> speaking -> advancing -> navigating ... -> done`; abort is
//! allowed from any live phase and failure only while navigating.

use std::fmt;

use serde::{Deserialize, Serialize};

use super::store::TourStore;
use crate::error::{Error, Result};
use crate::model::{Id, Pose2D, RobotMode, RunOutcome, Timestamp, Tour, TourRun};
use crate::sim::{estimate_travel_time, SimRobot};

/// Navigation may take this many times the kinematic estimate before the
/// run is marked failed.
pub const NAV_TIMEOUT_FACTOR: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Navigating,
    Speaking,
    Advancing,
    Done,
    Aborted,
    Failed,
}

impl Phase {
    pub fn is_terminal(self) -> bool {
        matches!(self, Phase::Done | Phase::Aborted | Phase::Failed)
    }

    pub fn can_transition_to(self, next: Phase) -> bool {
        use Phase::*;
        match (self, next) {
            (Navigating, Speaking) | (Speaking, Advancing) => true,
            (Advancing, Navigating) | (Advancing, Done) => true,
            (Navigating, Failed) => true,
            (from, Aborted) => !from.is_terminal(),
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionState {
    pub tour_id: Id,
    pub run_id: Id,
    pub stop_index: usize,
    pub phase: Phase,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Navigating,
    Arrived,
    Speaking,
    Advancing,
    Done,
    Aborted,
    Failed,
}

impl EventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::Navigating => "navigating",
            EventKind::Arrived => "arrived",
            EventKind::Speaking => "speaking",
            EventKind::Advancing => "advancing",
            EventKind::Done => "done",
            EventKind::Aborted => "aborted",
            EventKind::Failed => "failed",
        }
    }
}

/// Progress notification, published on `/tour/progress`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TourEvent {
    pub run_id: Id,
    pub tour_id: Id,
    pub stop_index: usize,
    pub phase: EventKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub location: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    pub at: Timestamp,
}

impl fmt::Display for TourEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} stop={} phase={}",
            self.at,
            self.stop_index,
            self.phase.as_str()
        )?;
        if let Some(location) = &self.location {
            write!(f, " location={location:?}")?;
        }
        if let Some(text) = &self.text {
            write!(f, " text={text:?}")?;
        }
        Ok(())
    }
}

/// A stop resolved against the store when the run starts.
#[derive(Debug, Clone, PartialEq)]
pub struct PlannedStop {
    pub location_id: Id,
    pub name: String,
    pub pose: Pose2D,
    /// Override text if the tour sets one, otherwise the location's
    /// description. May be empty.
    pub speech: String,
}

/// Resolves every stop of `tour`, failing on the first location that no
/// longer exists.
pub fn plan_stops(tour: &Tour, store: &TourStore) -> Result<Vec<PlannedStop>> {
    if tour.stops.is_empty() {
        return Err(Error::validation(format!(
            "tour {:?} has no stops",
            tour.name
        )));
    }
    tour.stops
        .iter()
        .map(|stop| {
            let location = store.location(stop.location_id).ok_or_else(|| {
                Error::validation(format!(
                    "tour {:?} references missing location {}",
                    tour.name, stop.location_id
                ))
            })?;
            Ok(PlannedStop {
                location_id: location.id,
                name: location.name.clone(),
                pose: location.pose,
                speech: stop
                    .speech_override
                    .clone()
                    .unwrap_or_else(|| location.description.clone()),
            })
        })
        .collect()
}

#[derive(Debug)]
pub struct Execution {
    state: ExecutionState,
    stops: Vec<PlannedStop>,
    started_at: Timestamp,
    completed: u32,
    nav_ticks: u64,
    nav_budget: f64,
}

impl Execution {
    /// Starts a run by sending the robot to the first stop.
    pub fn start(
        tour_id: Id,
        run_id: Id,
        stops: Vec<PlannedStop>,
        robot: &mut SimRobot,
        now: Timestamp,
    ) -> Result<(Execution, Vec<TourEvent>)> {
        if stops.is_empty() {
            return Err(Error::validation("cannot execute a tour without stops"));
        }
        if robot.mode() != RobotMode::Idle {
            return Err(Error::busy("robot is not idle"));
        }
        let mut exec = Execution {
            state: ExecutionState {
                tour_id,
                run_id,
                stop_index: 0,
                phase: Phase::Navigating,
            },
            stops,
            started_at: now,
            completed: 0,
            nav_ticks: 0,
            nav_budget: 0.0,
        };
        let mut events = Vec::new();
        exec.begin_navigation(robot, now, &mut events)?;
        Ok((exec, events))
    }

    pub fn state(&self) -> &ExecutionState {
        &self.state
    }

    pub fn stops(&self) -> &[PlannedStop] {
        &self.stops
    }

    pub fn is_finished(&self) -> bool {
        self.state.phase.is_terminal()
    }

    pub fn stops_completed(&self) -> u32 {
        self.completed
    }

    fn event(&self, phase: EventKind, now: Timestamp) -> TourEvent {
        TourEvent {
            run_id: self.state.run_id,
            tour_id: self.state.tour_id,
            stop_index: self.state.stop_index,
            phase,
            location: None,
            text: None,
            at: now,
        }
    }

    fn transition(&mut self, next: Phase) {
        debug_assert!(
            self.state.phase.can_transition_to(next),
            "illegal transition {:?} -> {:?}",
            self.state.phase,
            next
        );
        self.state.phase = next;
    }

    fn begin_navigation(
        &mut self,
        robot: &mut SimRobot,
        now: Timestamp,
        events: &mut Vec<TourEvent>,
    ) -> Result<()> {
        let stop = &self.stops[self.state.stop_index];
        self.nav_budget =
            NAV_TIMEOUT_FACTOR * estimate_travel_time(&robot.pose(), &stop.pose, robot.config());
        self.nav_ticks = 0;
        robot.set_goal(stop.pose)?;
        let mut ev = self.event(EventKind::Navigating, now);
        ev.location = Some(stop.name.clone());
        events.push(ev);
        Ok(())
    }

    fn finish_stop(&mut self, robot: &mut SimRobot, now: Timestamp, events: &mut Vec<TourEvent>) {
        self.transition(Phase::Advancing);
        self.completed += 1;
        events.push(self.event(EventKind::Advancing, now));
        if self.state.stop_index + 1 < self.stops.len() {
            self.transition(Phase::Navigating);
            self.state.stop_index += 1;
            if let Err(e) = self.begin_navigation(robot, now, events) {
                // the robot is idle between stops, so this is unreachable in practice
                tracing::error!(error = %e, "could not send robot to next stop");
                self.state.phase = Phase::Navigating;
                self.fail(robot, now, events);
            }
        } else {
            self.transition(Phase::Done);
            events.push(self.event(EventKind::Done, now));
        }
    }

    fn fail(&mut self, robot: &mut SimRobot, now: Timestamp, events: &mut Vec<TourEvent>) {
        robot.cancel();
        self.transition(Phase::Failed);
        events.push(self.event(EventKind::Failed, now));
    }

    /// Observes the robot after a simulator tick and advances the run.
    pub fn on_tick(&mut self, robot: &mut SimRobot, now: Timestamp) -> Vec<TourEvent> {
        let mut events = Vec::new();
        match self.state.phase {
            Phase::Navigating => {
                self.nav_ticks += 1;
                if robot.mode() == RobotMode::Idle {
                    let stop = self.stops[self.state.stop_index].clone();
                    let mut arrived = self.event(EventKind::Arrived, now);
                    arrived.location = Some(stop.name.clone());
                    events.push(arrived);

                    self.transition(Phase::Speaking);
                    let mut speaking = self.event(EventKind::Speaking, now);
                    speaking.text = Some(stop.speech.clone());
                    events.push(speaking);
                    if let Err(e) = robot.speak(&stop.speech, now) {
                        tracing::error!(error = %e, "robot refused speech on arrival");
                    }
                    if robot.mode() == RobotMode::Idle {
                        self.finish_stop(robot, now, &mut events);
                    }
                } else {
                    let tick = robot.config().tick;
                    // one extra tick covers the tick in which arrival is detected
                    if self.nav_ticks as f64 * tick > self.nav_budget + tick + 1e-9 {
                        self.fail(robot, now, &mut events);
                    }
                }
            }
            Phase::Speaking => {
                if robot.mode() == RobotMode::Idle {
                    self.finish_stop(robot, now, &mut events);
                }
            }
            Phase::Advancing | Phase::Done | Phase::Aborted | Phase::Failed => {}
        }
        events
    }

    /// Stops the run where it is and idles the robot.
    pub fn abort(&mut self, robot: &mut SimRobot, now: Timestamp) -> Result<TourEvent> {
        if self.is_finished() {
            return Err(Error::not_found("no tour is running"));
        }
        robot.cancel();
        self.transition(Phase::Aborted);
        Ok(self.event(EventKind::Aborted, now))
    }

    /// The run record, once the execution has reached a terminal phase.
    pub fn run_record(&self, ended_at: Timestamp) -> Option<TourRun> {
        let outcome = match self.state.phase {
            Phase::Done => RunOutcome::Completed,
            Phase::Aborted => RunOutcome::Aborted,
            Phase::Failed => RunOutcome::Failed,
            _ => return None,
        };
        Some(TourRun {
            run_id: self.state.run_id,
            tour_id: self.state.tour_id,
            started_at: self.started_at,
            ended_at: ended_at.max(self.started_at),
            outcome,
            stops_visited: self.completed,
        })
    }
}
