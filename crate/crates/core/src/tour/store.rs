//! The tour library: saved locations, tours and the run history, plus its
//! versioned JSON file format.

use std::fs::{self, File};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::model::{
    cmp_names, name_key, new_id, validate_description, validate_name, Id, Location, Pose2D, Stop,
    Timestamp, Tour, TourRun,
};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TourStore {
    pub schema_version: u32,
    pub locations: Vec<Location>,
    pub tours: Vec<Tour>,
    pub runs: Vec<TourRun>,
}

impl Default for TourStore {
    fn default() -> Self {
        TourStore {
            schema_version: SCHEMA_VERSION,
            locations: Vec::new(),
            tours: Vec::new(),
            runs: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NewTour {
    pub name: String,
    pub tour_type: String,
    pub stops: Vec<Id>,
    pub expected_duration: u32,
}

/// Partial update of a tour; absent fields are left untouched.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TourPatch {
    #[serde(default)]
    pub name: Option<String>,
    #[serde(default)]
    pub tour_type: Option<String>,
    #[serde(default)]
    pub stops: Option<Vec<Stop>>,
    #[serde(default)]
    pub expected_duration: Option<u32>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LocationPatch {
    #[serde(default)]
    pub name: Option<String>,
    #[serde(default)]
    pub pose: Option<Pose2D>,
    #[serde(default)]
    pub description: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResults {
    pub tours: Vec<Tour>,
    pub locations: Vec<Location>,
}

fn validate_tour_type(tour_type: &str) -> Result<String> {
    let t = tour_type.trim();
    if t.is_empty() {
        return Err(Error::validation("tour_type must not be empty"));
    }
    Ok(t.to_string())
}

fn validate_duration(minutes: u32) -> Result<u32> {
    if minutes == 0 {
        return Err(Error::validation(
            "expected_duration must be a positive number of minutes",
        ));
    }
    Ok(minutes)
}

impl TourStore {
    pub fn location(&self, id: Id) -> Option<&Location> {
        self.locations.iter().find(|l| l.id == id)
    }

    pub fn tour(&self, id: Id) -> Option<&Tour> {
        self.tours.iter().find(|t| t.id == id)
    }

    pub fn tour_by_name(&self, name: &str) -> Option<&Tour> {
        let key = name_key(name.trim());
        self.tours.iter().find(|t| name_key(&t.name) == key)
    }

    pub fn location_by_name(&self, name: &str) -> Option<&Location> {
        let key = name_key(name.trim());
        self.locations.iter().find(|l| name_key(&l.name) == key)
    }

    pub fn runs_of(&self, tour: Id) -> impl Iterator<Item = &TourRun> {
        self.runs.iter().filter(move |r| r.tour_id == tour)
    }

    fn location_name_taken(&self, name: &str, except: Option<Id>) -> bool {
        let key = name_key(name);
        self.locations
            .iter()
            .any(|l| Some(l.id) != except && name_key(&l.name) == key)
    }

    fn tour_name_taken(&self, name: &str, except: Option<Id>) -> bool {
        let key = name_key(name);
        self.tours
            .iter()
            .any(|t| Some(t.id) != except && name_key(&t.name) == key)
    }

    fn check_stops_resolve<'a>(&self, ids: impl IntoIterator<Item = &'a Id>) -> Result<()> {
        for id in ids {
            if self.location(*id).is_none() {
                return Err(Error::validation(format!("unknown location id {id}")));
            }
        }
        Ok(())
    }

    /// Saves a new location at `pose`.
    pub fn save_location(
        &mut self,
        name: &str,
        description: &str,
        pose: Pose2D,
        now: Timestamp,
    ) -> Result<Location> {
        let name = validate_name("location", name)?;
        validate_description(description)?;
        if self.location_name_taken(&name, None) {
            return Err(Error::conflict(format!(
                "a location named {name:?} already exists"
            )));
        }
        let location = Location {
            id: new_id(),
            name,
            pose,
            description: description.to_string(),
            created_at: now,
        };
        self.locations.push(location.clone());
        Ok(location)
    }

    pub fn edit_location(&mut self, id: Id, patch: LocationPatch) -> Result<Location> {
        let name = patch
            .name
            .as_deref()
            .map(|n| validate_name("location", n))
            .transpose()?;
        if let Some(d) = &patch.description {
            validate_description(d)?;
        }
        if self.location(id).is_none() {
            return Err(Error::not_found(format!("no location with id {id}")));
        }
        if let Some(name) = &name {
            if self.location_name_taken(name, Some(id)) {
                return Err(Error::conflict(format!(
                    "a location named {name:?} already exists"
                )));
            }
        }
        let location = self
            .locations
            .iter_mut()
            .find(|l| l.id == id)
            .expect("checked above");
        if let Some(name) = name {
            location.name = name;
        }
        if let Some(pose) = patch.pose {
            location.pose = pose;
        }
        if let Some(description) = patch.description {
            location.description = description;
        }
        Ok(location.clone())
    }

    /// Removes a location unless a tour still visits it. The rejection's
    /// detail lists the referencing tours by name.
    pub fn delete_location(&mut self, id: Id) -> Result<Location> {
        let Some(index) = self.locations.iter().position(|l| l.id == id) else {
            return Err(Error::not_found(format!("no location with id {id}")));
        };
        let mut users: Vec<&str> = self
            .tours
            .iter()
            .filter(|t| t.references(id))
            .map(|t| t.name.as_str())
            .collect();
        if !users.is_empty() {
            users.sort_by(|a, b| cmp_names(a, b));
            return Err(Error::Conflict {
                message: format!(
                    "location {:?} is used by tours: {}",
                    self.locations[index].name,
                    users.join(", ")
                ),
                detail: Some(json!({ "tours": users })),
            });
        }
        Ok(self.locations.remove(index))
    }

    pub fn create_tour(&mut self, new: NewTour, now: Timestamp) -> Result<Tour> {
        let name = validate_name("tour", &new.name)?;
        let tour_type = validate_tour_type(&new.tour_type)?;
        let expected_duration = validate_duration(new.expected_duration)?;
        if new.stops.is_empty() {
            return Err(Error::validation("a tour needs at least one stop"));
        }
        self.check_stops_resolve(&new.stops)?;
        if self.tour_name_taken(&name, None) {
            return Err(Error::conflict(format!(
                "a tour named {name:?} already exists"
            )));
        }
        let tour = Tour {
            id: new_id(),
            name,
            tour_type,
            stops: new.stops.into_iter().map(Stop::at).collect(),
            expected_duration,
            created_at: now,
            updated_at: now,
        };
        self.tours.push(tour.clone());
        Ok(tour)
    }

    pub fn edit_tour(&mut self, id: Id, patch: TourPatch, now: Timestamp) -> Result<Tour> {
        if self.tour(id).is_none() {
            return Err(Error::not_found(format!("no tour with id {id}")));
        }
        let name = patch
            .name
            .as_deref()
            .map(|n| validate_name("tour", n))
            .transpose()?;
        let tour_type = patch
            .tour_type
            .as_deref()
            .map(validate_tour_type)
            .transpose()?;
        let duration = patch.expected_duration.map(validate_duration).transpose()?;
        if let Some(stops) = &patch.stops {
            if stops.is_empty() {
                return Err(Error::validation("a tour needs at least one stop"));
            }
            self.check_stops_resolve(stops.iter().map(|s| &s.location_id))?;
            for s in stops {
                if let Some(text) = &s.speech_override {
                    validate_description(text)?;
                }
            }
        }
        if let Some(name) = &name {
            if self.tour_name_taken(name, Some(id)) {
                return Err(Error::conflict(format!(
                    "a tour named {name:?} already exists"
                )));
            }
        }

        let tour = self
            .tours
            .iter_mut()
            .find(|t| t.id == id)
            .expect("checked above");
        if let Some(name) = name {
            tour.name = name;
        }
        if let Some(tour_type) = tour_type {
            tour.tour_type = tour_type;
        }
        if let Some(stops) = patch.stops {
            tour.stops = stops;
        }
        if let Some(duration) = duration {
            tour.expected_duration = duration;
        }
        tour.updated_at = tour.updated_at.max(now);
        Ok(tour.clone())
    }

    /// Deep-copies a tour under a new name. Without a name the copy is called
    /// "<original> (copy)".
    pub fn copy_tour(&mut self, id: Id, new_name: Option<&str>, now: Timestamp) -> Result<Tour> {
        let source = self
            .tour(id)
            .ok_or_else(|| Error::not_found(format!("no tour with id {id}")))?;
        let name = match new_name {
            Some(n) => validate_name("tour", n)?,
            None => format!("{} (copy)", source.name),
        };
        if self.tour_name_taken(&name, None) {
            return Err(Error::conflict(format!(
                "a tour named {name:?} already exists"
            )));
        }
        let copy = Tour {
            id: new_id(),
            name,
            created_at: now,
            updated_at: now,
            ..source.clone()
        };
        self.tours.push(copy.clone());
        Ok(copy)
    }

    /// Removes a tour. Its runs stay in the history.
    pub fn delete_tour(&mut self, id: Id) -> Result<Tour> {
        let index = self
            .tours
            .iter()
            .position(|t| t.id == id)
            .ok_or_else(|| Error::not_found(format!("no tour with id {id}")))?;
        Ok(self.tours.remove(index))
    }

    /// Case-insensitive substring search over tour and location names.
    pub fn search(&self, query: &str) -> SearchResults {
        let needle = name_key(query.trim());
        let mut tours: Vec<Tour> = self
            .tours
            .iter()
            .filter(|t| name_key(&t.name).contains(&needle))
            .cloned()
            .collect();
        let mut locations: Vec<Location> = self
            .locations
            .iter()
            .filter(|l| name_key(&l.name).contains(&needle))
            .cloned()
            .collect();
        tours.sort_by(|a, b| cmp_names(&a.name, &b.name));
        locations.sort_by(|a, b| cmp_names(&a.name, &b.name));
        SearchResults { tours, locations }
    }

    pub fn record_run(&mut self, run: TourRun) {
        self.runs.push(run);
    }

    /// Checks every stored invariant that does not depend on execution time.
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::UnsupportedVersion {
                found: self.schema_version.into(),
                supported: SCHEMA_VERSION,
            });
        }
        check_unique(
            "location",
            self.locations.iter().map(|l| (l.id, l.name.as_str())),
        )?;
        check_unique("tour", self.tours.iter().map(|t| (t.id, t.name.as_str())))?;
        for l in &self.locations {
            validate_description(&l.description)?;
        }
        for t in &self.tours {
            validate_tour_type(&t.tour_type)?;
            validate_duration(t.expected_duration)?;
            if t.stops.is_empty() {
                return Err(Error::validation(format!("tour {:?} has no stops", t.name)));
            }
            if let Some(stop) = t
                .stops
                .iter()
                .find(|s| self.location(s.location_id).is_none())
            {
                return Err(Error::validation(format!(
                    "tour {:?} stops at unknown location {}",
                    t.name, stop.location_id
                )));
            }
            if t.updated_at < t.created_at {
                return Err(Error::validation(format!(
                    "tour {:?} was updated before it was created",
                    t.name
                )));
            }
        }
        let mut run_ids = std::collections::HashSet::new();
        for r in &self.runs {
            if !run_ids.insert(r.run_id) {
                return Err(Error::validation(format!("duplicate run id {}", r.run_id)));
            }
            if r.ended_at < r.started_at {
                return Err(Error::validation(format!(
                    "run {} ends before it starts",
                    r.run_id
                )));
            }
        }
        Ok(())
    }

    /// Canonical file representation: pretty JSON with a trailing newline.
    /// The same store always yields the same bytes.
    pub fn to_json(&self) -> String {
        let mut text = serde_json::to_string_pretty(self).expect("store serializes");
        text.push('\n');
        text
    }

    /// Parses and validates a store document. `source` names the input in
    /// error messages.
    pub fn from_json(text: &str, source: &str) -> Result<TourStore> {
        let parse_err = |e: serde_json::Error| Error::Parse {
            path: source.to_string(),
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        };
        let doc: Value = serde_json::from_str(text).map_err(parse_err)?;
        match doc.get("schema_version").map(Value::as_u64) {
            Some(Some(v)) if v == u64::from(SCHEMA_VERSION) => {}
            Some(Some(v)) => {
                return Err(Error::UnsupportedVersion {
                    found: v,
                    supported: SCHEMA_VERSION,
                })
            }
            Some(None) => {
                return Err(Error::validation(format!(
                    "{source}: schema_version must be a non-negative integer"
                )))
            }
            None => {
                return Err(Error::validation(format!(
                    "{source}: missing schema_version"
                )))
            }
        }
        let store: TourStore = serde_json::from_str(text).map_err(parse_err)?;
        store.validate()?;
        Ok(store)
    }

    pub fn load(path: &Path) -> Result<TourStore> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        TourStore::from_json(&text, &path.display().to_string())
    }

    /// Writes the store atomically: a sibling temporary file is written,
    /// synced and renamed over `path`.
    pub fn save(&self, path: &Path) -> Result<()> {
        atomic_write(path, self.to_json().as_bytes())
    }
}

fn check_unique<'a>(kind: &str, items: impl Iterator<Item = (Id, &'a str)>) -> Result<()> {
    let mut ids = std::collections::HashSet::new();
    let mut names = std::collections::HashSet::new();
    for (id, name) in items {
        if name.trim().is_empty() {
            return Err(Error::validation(format!("{kind} {id} has an empty name")));
        }
        if !ids.insert(id) {
            return Err(Error::validation(format!("duplicate {kind} id {id}")));
        }
        if !names.insert(name_key(name)) {
            return Err(Error::validation(format!("duplicate {kind} name {name:?}")));
        }
    }
    Ok(())
}

fn temp_sibling(path: &Path) -> PathBuf {
    let mut name = path
        .file_name()
        .map(|n| n.to_os_string())
        .unwrap_or_else(|| "store".into());
    name.push(".tmp");
    path.with_file_name(name)
}

pub fn atomic_write(path: &Path, data: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)
            .map_err(|e| Error::io(format!("creating {}", parent.display()), e))?;
    }
    let tmp = temp_sibling(path);
    let write = || -> std::io::Result<()> {
        let mut file = File::create(&tmp)?;
        file.write_all(data)?;
        file.sync_all()?;
        fs::rename(&tmp, path)
    };
    write().map_err(|e| {
        let _ = fs::remove_file(&tmp);
        Error::io(format!("writing {}", path.display()), e)
    })
}
