//! Single owner of all mutable state: the simulated robot, the tour library
//! and the active execution.
//!
//! Everything here is synchronous. The server wraps a [`Runtime`] in a mutex
//! and ticks it on a timer, so commands issued through services land between
//! ticks; headless tools and tests call [`Runtime::step`] directly on an
//! accelerated clock.

use std::path::{Path, PathBuf};

use tracing::warn;

use crate::analytics::{
    self, MonthlyStats, Recommendation, RecommendationParams, TourDetail, TypeDistribution,
};
use crate::clock::Clock;
use crate::error::{Error, Result};
use crate::model::{new_id, Id, Location, Pose2D, RobotStatus, Timestamp, Tour, TourRun};
use crate::sim::{SimConfig, SimRobot, SpeechEvent, TeleopDirection};
use crate::tour::{
    plan_stops, Execution, ExecutionState, LocationPatch, NewTour, SearchResults, TourEvent,
    TourPatch, TourStore,
};

pub struct Runtime {
    clock: Box<dyn Clock>,
    robot: SimRobot,
    store: TourStore,
    store_path: Option<PathBuf>,
    execution: Option<Execution>,
    events: Vec<TourEvent>,
    ticks: u64,
}

impl Runtime {
    /// In-memory runtime; nothing is written to disk.
    pub fn new(store: TourStore, sim: SimConfig, clock: Box<dyn Clock>) -> Self {
        Runtime {
            clock,
            robot: SimRobot::new(sim, Pose2D::ORIGIN),
            store,
            store_path: None,
            execution: None,
            events: Vec::new(),
            ticks: 0,
        }
    }

    /// Persists the store to `path` after every mutation.
    pub fn with_store_path(mut self, path: impl Into<PathBuf>) -> Self {
        self.store_path = Some(path.into());
        self
    }

    pub fn store_path(&self) -> Option<&Path> {
        self.store_path.as_deref()
    }

    pub fn store(&self) -> &TourStore {
        &self.store
    }

    pub fn robot(&self) -> &SimRobot {
        &self.robot
    }

    pub fn robot_mut(&mut self) -> &mut SimRobot {
        &mut self.robot
    }

    pub fn now(&self) -> Timestamp {
        self.clock.now()
    }

    pub fn ticks(&self) -> u64 {
        self.ticks
    }

    pub fn sim_config(&self) -> &SimConfig {
        self.robot.config()
    }

    /// Applies `f` to a copy of the store and commits it only if the copy
    /// could be persisted.
    fn mutate<T>(&mut self, f: impl FnOnce(&mut TourStore, Timestamp) -> Result<T>) -> Result<T> {
        let now = self.clock.now();
        let mut next = self.store.clone();
        let out = f(&mut next, now)?;
        if let Some(path) = &self.store_path {
            next.save(path)?;
        }
        self.store = next;
        Ok(out)
    }

    fn persist(&self) {
        if let Some(path) = &self.store_path {
            if let Err(e) = self.store.save(path) {
                warn!(error = %e, "could not persist tour store");
            }
        }
    }

    /// One simulator tick: moves the robot, advances the active tour and the
    /// clock. Returns the pose to publish for this tick.
    pub fn step(&mut self) -> Pose2D {
        self.robot.step();
        self.clock.advance(self.robot.config().tick);
        self.ticks += 1;
        let now = self.clock.now();
        if let Some(exec) = self.execution.as_mut() {
            let events = exec.on_tick(&mut self.robot, now);
            self.events.extend(events);
        }
        self.reap_execution();
        self.robot.pose()
    }

    fn reap_execution(&mut self) {
        let finished = self.execution.as_ref().is_some_and(Execution::is_finished);
        if !finished {
            return;
        }
        let exec = self.execution.take().expect("checked above");
        if let Some(run) = exec.run_record(self.clock.now()) {
            self.store.record_run(run);
            self.persist();
        }
    }

    /// Progress events emitted since the last call, in order.
    pub fn drain_events(&mut self) -> Vec<TourEvent> {
        std::mem::take(&mut self.events)
    }

    pub fn status(&self) -> RobotStatus {
        RobotStatus {
            active_tour: self.execution.as_ref().map(|e| e.state().tour_id),
            ..self.robot.status().clone()
        }
    }

    pub fn execution(&self) -> Option<&ExecutionState> {
        self.execution.as_ref().map(Execution::state)
    }

    fn ensure_no_tour(&self) -> Result<()> {
        if self.execution.is_some() {
            return Err(Error::busy("a tour is running"));
        }
        Ok(())
    }

    pub fn goto(&mut self, goal: Pose2D) -> Result<()> {
        self.ensure_no_tour()?;
        self.robot.set_goal(goal)
    }

    pub fn teleop(&mut self, direction: TeleopDirection) -> Result<RobotStatus> {
        self.ensure_no_tour()?;
        self.robot.teleop(direction)?;
        Ok(self.status())
    }

    pub fn say(&mut self, text: &str) -> Result<SpeechEvent> {
        self.ensure_no_tour()?;
        let now = self.clock.now();
        self.robot.speak(text, now)
    }

    /// Stores the robot's current pose under `name`.
    pub fn save_location(&mut self, name: &str, description: &str) -> Result<Location> {
        let pose = self.robot.pose();
        self.mutate(|s, now| s.save_location(name, description, pose, now))
    }

    pub fn edit_location(&mut self, id: Id, patch: LocationPatch) -> Result<Location> {
        self.mutate(|s, _| s.edit_location(id, patch))
    }

    pub fn delete_location(&mut self, id: Id) -> Result<Location> {
        self.mutate(|s, _| s.delete_location(id))
    }

    pub fn create_tour(&mut self, new: NewTour) -> Result<Tour> {
        self.mutate(|s, now| s.create_tour(new, now))
    }

    pub fn edit_tour(&mut self, id: Id, patch: TourPatch) -> Result<Tour> {
        self.mutate(|s, now| s.edit_tour(id, patch, now))
    }

    pub fn copy_tour(&mut self, id: Id, new_name: Option<&str>) -> Result<Tour> {
        self.mutate(|s, now| s.copy_tour(id, new_name, now))
    }

    pub fn delete_tour(&mut self, id: Id) -> Result<Tour> {
        if self
            .execution
            .as_ref()
            .is_some_and(|e| e.state().tour_id == id)
        {
            return Err(Error::conflict("cannot delete a tour while it is running"));
        }
        self.mutate(|s, _| s.delete_tour(id))
    }

    pub fn search(&self, query: &str) -> SearchResults {
        self.store.search(query)
    }

    /// Starts executing a tour and returns the new run id. Completion is
    /// observed through [`Runtime::step`].
    pub fn execute_tour(&mut self, id: Id) -> Result<Id> {
        if self.execution.is_some() {
            return Err(Error::conflict("tour already running"));
        }
        let tour = self
            .store
            .tour(id)
            .ok_or_else(|| Error::not_found(format!("no tour with id {id}")))?;
        let stops = plan_stops(tour, &self.store)?;
        let run_id = new_id();
        let now = self.clock.now();
        let (exec, events) = Execution::start(id, run_id, stops, &mut self.robot, now)?;
        self.events.extend(events);
        self.execution = Some(exec);
        Ok(run_id)
    }

    pub fn abort_tour(&mut self) -> Result<TourRun> {
        let now = self.clock.now();
        let exec = self
            .execution
            .as_mut()
            .ok_or_else(|| Error::not_found("no tour is running"))?;
        let event = exec.abort(&mut self.robot, now)?;
        self.events.push(event);
        let exec = self.execution.take().expect("checked above");
        let run = exec.run_record(now).expect("aborted execution is terminal");
        self.store.record_run(run.clone());
        self.persist();
        Ok(run)
    }

    /// Ticks until the active tour finishes or `max_ticks` elapse and
    /// returns the recorded run, if one finished.
    pub fn run_until_idle(&mut self, max_ticks: u64) -> Option<TourRun> {
        let run_id = self.execution.as_ref()?.state().run_id;
        for _ in 0..max_ticks {
            self.step();
            if self.execution.is_none() {
                return self
                    .store
                    .runs
                    .iter()
                    .rev()
                    .find(|r| r.run_id == run_id)
                    .cloned();
            }
        }
        None
    }

    pub fn monthly_stats(&self, months: u32) -> Result<MonthlyStats> {
        analytics::monthly_counts(&self.store.runs, self.now(), months)
    }

    pub fn type_distribution(&self, months: u32) -> Result<TypeDistribution> {
        analytics::type_distribution(&self.store.runs, &self.store.tours, self.now(), months)
    }

    pub fn tour_detail(&self, id: Id) -> Result<TourDetail> {
        analytics::tour_detail(id, self.store.tour(id), &self.store.runs)
    }

    pub fn recommend(&self, params: &RecommendationParams) -> Result<Vec<Recommendation>> {
        analytics::recommend(&self.store.tours, &self.store.runs, self.now(), params)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::SimClock;
    use crate::error::ErrorCode;
    use crate::model::{RobotMode, RunOutcome};
    use crate::tour::EventKind;

    fn runtime() -> Runtime {
        Runtime::new(
            TourStore::default(),
            SimConfig::default(),
            Box::new(SimClock::starting_at(Timestamp::from_unix(1_700_000_000))),
        )
    }

    fn place(rt: &mut Runtime, name: &str, x: f64, y: f64, text: &str) -> Location {
        rt.robot_mut()
            .set_goal(Pose2D::new(x, y, 0.0).unwrap())
            .unwrap();
        while rt.robot().mode() != RobotMode::Idle {
            rt.step();
        }
        rt.save_location(name, text).unwrap()
    }

    fn two_stop_tour(rt: &mut Runtime) -> Tour {
        let a = place(rt, "occulus", 1.0, 2.0, "Welcome to the VR lab.");
        let b = place(rt, "Robot pen", 3.0, 0.0, "");
        rt.create_tour(NewTour {
            name: "Zoo".into(),
            tour_type: "lab".into(),
            stops: vec![a.id, b.id],
            expected_duration: 15,
        })
        .unwrap()
    }

    #[test]
    fn save_location_uses_robot_pose() {
        let mut rt = runtime();
        let loc = place(&mut rt, "occulus", 1.0, 2.0, "");
        assert!(loc.pose.distance_to(&Pose2D::new(1.0, 2.0, 0.0).unwrap()) <= 0.05 + 1e-9);
        assert_eq!(loc.pose, rt.robot().pose());
    }

    #[test]
    fn completed_run_is_recorded() {
        let mut rt = runtime();
        let zoo = two_stop_tour(&mut rt);
        rt.drain_events();
        let run_id = rt.execute_tour(zoo.id).unwrap();
        assert_eq!(rt.status().active_tour, Some(zoo.id));
        let run = rt.run_until_idle(100_000).unwrap();
        assert_eq!(run.run_id, run_id);
        assert_eq!(run.outcome, RunOutcome::Completed);
        assert_eq!(run.stops_visited, 2);
        assert!(run.ended_at > run.started_at);
        assert_eq!(rt.store().runs.len(), 1);
        assert_eq!(rt.status().active_tour, None);

        let filtered: Vec<(usize, EventKind)> = rt
            .drain_events()
            .into_iter()
            .filter(|e| matches!(e.phase, EventKind::Arrived | EventKind::Speaking))
            .map(|e| (e.stop_index, e.phase))
            .collect();
        assert_eq!(
            filtered,
            [
                (0, EventKind::Arrived),
                (0, EventKind::Speaking),
                (1, EventKind::Arrived),
                (1, EventKind::Speaking)
            ]
        );
    }

    #[test]
    fn speech_override_wins() {
        let mut rt = runtime();
        let zoo = two_stop_tour(&mut rt);
        let mut stops = zoo.stops.clone();
        stops[0].speech_override = Some("Custom greeting".into());
        rt.edit_tour(
            zoo.id,
            TourPatch {
                stops: Some(stops),
                ..TourPatch::default()
            },
        )
        .unwrap();
        rt.drain_events();
        rt.execute_tour(zoo.id).unwrap();
        rt.run_until_idle(100_000).unwrap();
        let spoken: Vec<String> = rt
            .drain_events()
            .into_iter()
            .filter(|e| e.phase == EventKind::Speaking)
            .map(|e| e.text.unwrap())
            .collect();
        assert_eq!(spoken, ["Custom greeting", ""]);
    }

    #[test]
    fn execution_guards() {
        let mut rt = runtime();
        let zoo = two_stop_tour(&mut rt);
        rt.execute_tour(zoo.id).unwrap();
        let err = rt.execute_tour(zoo.id).unwrap_err();
        assert_eq!(err.code(), ErrorCode::Conflict);
        assert_eq!(err.to_string(), "tour already running");
        assert_eq!(rt.goto(Pose2D::ORIGIN).unwrap_err().code(), ErrorCode::Busy);
        assert_eq!(
            rt.delete_tour(zoo.id).unwrap_err().code(),
            ErrorCode::Conflict
        );

        let aborted = rt.abort_tour().unwrap();
        assert_eq!(aborted.outcome, RunOutcome::Aborted);
        assert_eq!(rt.abort_tour().unwrap_err().code(), ErrorCode::NotFound);
        rt.execute_tour(zoo.id).unwrap();
        assert_eq!(
            rt.run_until_idle(100_000).unwrap().outcome,
            RunOutcome::Completed
        );
        assert_eq!(rt.store().runs.len(), 2);
    }

    #[test]
    fn deleted_location_blocks_execution() {
        let mut rt = runtime();
        let lone = place(&mut rt, "Lobby", 1.0, 0.0, "");
        let tour = rt
            .create_tour(NewTour {
                name: "Short".into(),
                tour_type: "lab".into(),
                stops: vec![lone.id],
                expected_duration: 1,
            })
            .unwrap();
        // simulate an imported store where the location vanished
        rt.store.locations.clear();
        let err = rt.execute_tour(tour.id).unwrap_err();
        assert_eq!(err.code(), ErrorCode::Validation);
        assert!(rt.store().runs.is_empty());
    }

    #[test]
    fn failed_navigation_is_recorded() {
        let mut rt = runtime();
        let zoo = two_stop_tour(&mut rt);
        rt.robot_mut().set_stalled(true);
        rt.execute_tour(zoo.id).unwrap();
        let run = rt.run_until_idle(100_000).unwrap();
        assert_eq!(run.outcome, RunOutcome::Failed);
        assert_eq!(run.stops_visited, 0);
    }

    #[test]
    fn persistence_follows_mutations() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("store.json");
        let mut rt = runtime().with_store_path(&path);
        let zoo = two_stop_tour(&mut rt);
        assert_eq!(TourStore::load(&path).unwrap(), *rt.store());
        rt.execute_tour(zoo.id).unwrap();
        rt.run_until_idle(100_000).unwrap();
        assert_eq!(TourStore::load(&path).unwrap().runs.len(), 1);
    }

    #[test]
    fn failed_persist_leaves_store_unchanged() {
        let dir = tempfile::tempdir().unwrap();
        let blocker = dir.path().join("file");
        std::fs::write(&blocker, "x").unwrap();
        let mut rt = runtime().with_store_path(blocker.join("store.json"));
        assert!(rt.save_location("occulus", "").is_err());
        assert!(rt.store().locations.is_empty());
    }
}
