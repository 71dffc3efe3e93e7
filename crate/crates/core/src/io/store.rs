//! The on-disk project: versioned JSON stores, a checksummed manifest, an
//! advisory lock and the reproduce log.

use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::io::ErrorKind;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::difftest::{DiffMethod, DiffTestRecord};
use crate::error::{Error, Result};
use crate::fit::EstimateTable;
use crate::model::{AlleleCounts, BadValue};
use crate::scoring::{RawScore, ScoreRecord};

use super::ingest::{Dataset, IngestStats, Sample, SampleRecord, Snv};
use super::workflow::Command;

pub const STORE_VERSION: u32 = 1;
pub const PROJECT_EXT: &str = "mixproj";
pub const MANIFEST: &str = "manifest.json";
pub const LOG_FILE: &str = "reproduce.json";
const LOCK_FILE: &str = ".lock";

/// `<parent>/<name>.mixproj`.
pub fn project_dir(parent: &Path, name: &str) -> PathBuf {
    parent.join(format!("{name}.{PROJECT_EXT}"))
}

/// Accepts either the project directory or its name without the extension.
pub fn resolve_project(arg: &Path) -> PathBuf {
    if arg.extension().is_some_and(|e| e == PROJECT_EXT) {
        arg.to_path_buf()
    } else {
        let name = arg.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        project_dir(arg.parent().unwrap_or(Path::new("")), &name)
    }
}

pub fn sha256_bytes(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    Ok(sha256_bytes(&fs::read(path)?))
}

/// Raw per-sample scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreStore {
    pub raw: Vec<RawScore>,
    /// Observations that could not be scored (below threshold or no window).
    pub excluded: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupSpec {
    pub name: String,
    pub samples: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CombinedStore {
    pub groups: Vec<GroupSpec>,
    pub records: Vec<ScoreRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffTestStore {
    pub method: DiffMethod,
    pub control: GroupSpec,
    pub test: GroupSpec,
    pub records: Vec<DiffTestRecord>,
    /// SNVs missing from a group or failing in both orientations.
    pub skipped: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputHash {
    pub path: PathBuf,
    pub sha256: String,
}

/// One logged command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommandDescriptor {
    pub command: Command,
    pub timestamp: String,
    pub inputs: Vec<InputHash>,
}

/// Append-only list of the commands that built a project.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReproduceLog {
    pub version: u32,
    pub commands: Vec<CommandDescriptor>,
}

impl Default for ReproduceLog {
    fn default() -> Self {
        ReproduceLog { version: STORE_VERSION, commands: Vec::new() }
    }
}

impl ReproduceLog {
    pub fn load(path: &Path) -> Result<Self> {
        let log: ReproduceLog = serde_json::from_slice(&fs::read(path)?)
            .map_err(|e| Error::CorruptStore(format!("{}: {e}", path.display())))?;
        if log.version != STORE_VERSION {
            return Err(Error::VersionMismatch { found: log.version, expected: STORE_VERSION });
        }
        Ok(log)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Project {
    pub name: String,
    pub counts: Dataset,
    pub estimates: Option<EstimateTable>,
    pub scores: Option<ScoreStore>,
    pub combined: Option<CombinedStore>,
    pub difftest: Option<DiffTestStore>,
    pub log: ReproduceLog,
}

impl Project {
    pub fn new(name: impl Into<String>, counts: Dataset) -> Self {
        Project {
            name: name.into(),
            counts,
            estimates: None,
            scores: None,
            combined: None,
            difftest: None,
            log: ReproduceLog::default(),
        }
    }

    /// Drops every store derived from the estimates.
    pub fn clear_downstream(&mut self) {
        self.scores = None;
        self.combined = None;
        self.difftest = None;
    }
}

#[derive(Serialize, Deserialize)]
struct Envelope<T> {
    version: u32,
    data: T,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    version: u32,
    name: String,
    files: BTreeMap<String, String>,
}

/// Columnar layout of the counts store.
#[derive(Serialize, Deserialize)]
struct CountsColumns {
    l: u64,
    stats: IngestStats,
    snv_chrom: Vec<String>,
    snv_pos: Vec<u64>,
    snv_ref: String,
    snv_alt: String,
    snv_id: Vec<String>,
    samples: Vec<SampleColumns>,
}

#[derive(Serialize, Deserialize)]
struct SampleColumns {
    name: String,
    sources: Vec<String>,
    snv: Vec<u32>,
    ref_count: Vec<u64>,
    alt_count: Vec<u64>,
    bad: Vec<f64>,
}

impl From<&Dataset> for CountsColumns {
    fn from(d: &Dataset) -> Self {
        CountsColumns {
            l: d.l,
            stats: d.stats,
            snv_chrom: d.snvs.iter().map(|s| s.chrom.clone()).collect(),
            snv_pos: d.snvs.iter().map(|s| s.pos).collect(),
            snv_ref: d.snvs.iter().map(|s| s.ref_base).collect(),
            snv_alt: d.snvs.iter().map(|s| s.alt_base).collect(),
            snv_id: d.snvs.iter().map(|s| s.id.clone()).collect(),
            samples: d
                .samples
                .iter()
                .map(|s| SampleColumns {
                    name: s.name.clone(),
                    sources: s.sources.clone(),
                    snv: s.records.iter().map(|r| r.snv).collect(),
                    ref_count: s.records.iter().map(|r| r.counts.ref_count).collect(),
                    alt_count: s.records.iter().map(|r| r.counts.alt_count).collect(),
                    bad: s.records.iter().map(|r| r.counts.bad.value()).collect(),
                })
                .collect(),
        }
    }
}

impl TryFrom<CountsColumns> for Dataset {
    type Error = Error;
    fn try_from(c: CountsColumns) -> Result<Self> {
        let n = c.snv_chrom.len();
        let refs: Vec<char> = c.snv_ref.chars().collect();
        let alts: Vec<char> = c.snv_alt.chars().collect();
        if c.snv_pos.len() != n || refs.len() != n || alts.len() != n || c.snv_id.len() != n {
            return Err(Error::CorruptStore("SNV columns differ in length".into()));
        }
        let snvs = (0..n)
            .map(|i| Snv {
                chrom: c.snv_chrom[i].clone(),
                pos: c.snv_pos[i],
                ref_base: refs[i],
                alt_base: alts[i],
                id: c.snv_id[i].clone(),
            })
            .collect();
        let samples = c
            .samples
            .into_iter()
            .map(|s| {
                let m = s.snv.len();
                if s.ref_count.len() != m || s.alt_count.len() != m || s.bad.len() != m {
                    return Err(Error::CorruptStore(format!("columns of sample {} differ in length", s.name)));
                }
                let records = (0..m)
                    .map(|i| {
                        if s.snv[i] as usize >= n {
                            return Err(Error::CorruptStore(format!("SNV index {} out of range", s.snv[i])));
                        }
                        let bad = BadValue::new(s.bad[i]).map_err(|e| Error::CorruptStore(e.to_string()))?;
                        Ok(SampleRecord { snv: s.snv[i], counts: AlleleCounts::new(s.ref_count[i], s.alt_count[i], bad) })
                    })
                    .collect::<Result<_>>()?;
                Ok(Sample { name: s.name, sources: s.sources, records })
            })
            .collect::<Result<_>>()?;
        Ok(Dataset { l: c.l, snvs, samples, stats: c.stats })
    }
}

fn encode<T: Serialize>(data: &T) -> Result<Vec<u8>> {
    let mut v = serde_json::to_vec(&Envelope { version: STORE_VERSION, data })?;
    v.push(b'\n');
    Ok(v)
}

fn decode<T: DeserializeOwned>(file: &str, bytes: &[u8]) -> Result<T> {
    #[derive(Deserialize)]
    struct Version {
        version: u32,
    }
    let v: Version = serde_json::from_slice(bytes).map_err(|e| Error::CorruptStore(format!("{file}: {e}")))?;
    if v.version != STORE_VERSION {
        return Err(Error::VersionMismatch { found: v.version, expected: STORE_VERSION });
    }
    let env: Envelope<T> = serde_json::from_slice(bytes).map_err(|e| Error::CorruptStore(format!("{file}: {e}")))?;
    Ok(env.data)
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

const STORE_FILES: [&str; 5] = ["counts.json", "estimates.json", "scores.json", "combined.json", "difftest.json"];

/// Writes every store, the log and finally the manifest.
pub fn save_project(project: &Project, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut files: BTreeMap<String, Vec<u8>> = BTreeMap::new();
    files.insert("counts.json".into(), encode(&CountsColumns::from(&project.counts))?);
    if let Some(e) = &project.estimates {
        files.insert("estimates.json".into(), encode(e)?);
    }
    if let Some(s) = &project.scores {
        files.insert("scores.json".into(), encode(s)?);
    }
    if let Some(c) = &project.combined {
        files.insert("combined.json".into(), encode(c)?);
    }
    if let Some(d) = &project.difftest {
        files.insert("difftest.json".into(), encode(d)?);
    }
    let mut log = serde_json::to_vec_pretty(&project.log)?;
    log.push(b'\n');
    files.insert(LOG_FILE.into(), log);
    for stale in STORE_FILES.iter().filter(|f| !files.contains_key(**f)) {
        match fs::remove_file(dir.join(stale)) {
            Err(e) if e.kind() != ErrorKind::NotFound => return Err(e.into()),
            _ => {}
        }
    }
    let mut manifest = Manifest { version: STORE_VERSION, name: project.name.clone(), files: BTreeMap::new() };
    for (name, bytes) in &files {
        write_atomic(&dir.join(name), bytes)?;
        manifest.files.insert(name.clone(), sha256_bytes(bytes));
    }
    let mut m = serde_json::to_vec_pretty(&manifest)?;
    m.push(b'\n');
    write_atomic(&dir.join(MANIFEST), &m)
}

/// Reads and verifies a project directory.
pub fn load_project(dir: &Path) -> Result<Project> {
    let mpath = dir.join(MANIFEST);
    let bytes = match fs::read(&mpath) {
        Ok(b) => b,
        Err(e) if e.kind() == ErrorKind::NotFound => {
            return Err(Error::CorruptStore(format!("{} has no manifest", dir.display())));
        }
        Err(e) => return Err(e.into()),
    };
    let manifest: Manifest =
        serde_json::from_slice(&bytes).map_err(|e| Error::CorruptStore(format!("{}: {e}", mpath.display())))?;
    if manifest.version != STORE_VERSION {
        return Err(Error::VersionMismatch { found: manifest.version, expected: STORE_VERSION });
    }
    let read = |name: &str| -> Result<Option<Vec<u8>>> {
        let Some(sum) = manifest.files.get(name) else { return Ok(None) };
        let bytes = fs::read(dir.join(name)).map_err(|e| match e.kind() {
            ErrorKind::NotFound => Error::CorruptStore(format!("{name} is listed in the manifest but missing")),
            _ => e.into(),
        })?;
        if &sha256_bytes(&bytes) != sum {
            return Err(Error::CorruptStore(format!("{name} does not match its checksum")));
        }
        Ok(Some(bytes))
    };
    let counts: CountsColumns = match read("counts.json")? {
        Some(b) => decode("counts.json", &b)?,
        None => return Err(Error::CorruptStore("manifest lists no counts store".into())),
    };
    let log = match read(LOG_FILE)? {
        Some(b) => {
            let log: ReproduceLog =
                serde_json::from_slice(&b).map_err(|e| Error::CorruptStore(format!("{LOG_FILE}: {e}")))?;
            if log.version != STORE_VERSION {
                return Err(Error::VersionMismatch { found: log.version, expected: STORE_VERSION });
            }
            log
        }
        None => ReproduceLog::default(),
    };
    Ok(Project {
        name: manifest.name.clone(),
        counts: Dataset::try_from(counts)?,
        estimates: read("estimates.json")?.map(|b| decode("estimates.json", &b)).transpose()?,
        scores: read("scores.json")?.map(|b| decode("scores.json", &b)).transpose()?,
        combined: read("combined.json")?.map(|b| decode("combined.json", &b)).transpose()?,
        difftest: read("difftest.json")?.map(|b| decode("difftest.json", &b)).transpose()?,
        log,
    })
}

/// Advisory lock held for the duration of one command.
#[derive(Debug)]
pub struct ProjectLock {
    path: PathBuf,
}

impl ProjectLock {
    pub fn acquire(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)?;
        let path = dir.join(LOCK_FILE);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(ProjectLock { path }),
            Err(e) if e.kind() == ErrorKind::AlreadyExists => Err(Error::Locked(path)),
            Err(e) => Err(e.into()),
        }
    }
}

impl Drop for ProjectLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fit::{EstimateKey, FitSettings, ParameterVector, WindowEstimate};
    use crate::io::ingest::ReadCountRecord;
    use crate::model::Orientation;

    fn fixture() -> Project {
        let rec = |sample: &str, pos, x, y| ReadCountRecord {
            chrom: "chr1".into(),
            pos,
            id: ".".into(),
            ref_base: 'A',
            alt_base: 'G',
            ref_count: x,
            alt_count: y,
            bad: 1.0,
            sample: sample.into(),
        };
        let ds = Dataset::from_records(vec![rec("a", 10, 12, 9), rec("b", 10, 30, 7), rec("a", 20, 6, 6)], 5, None).unwrap();
        let mut p = Project::new("demo", ds);
        let mut t = EstimateTable::new(FitSettings::default());
        let theta = ParameterVector { b: 1.0 / 3.0, a: 0.1, mu_or_p: 0.5, kappa: None, w: 1.0 };
        t.insert(
            EstimateKey { orientation: Orientation::RefGivenAlt, bad: BadValue::ONE, fixed_value: 7 },
            WindowEstimate::given(7, theta),
        );
        t.insert(
            EstimateKey { orientation: Orientation::AltGivenRef, bad: BadValue::ONE, fixed_value: 8 },
            WindowEstimate::failed(8, theta, &Error::EmptyWindow { fixed_value: 8 }),
        );
        p.estimates = Some(t);
        p
    }

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = fixture();
        let path = project_dir(dir.path(), "demo");
        save_project(&p, &path).unwrap();
        let q = load_project(&path).unwrap();
        assert_eq!(q.counts, p.counts);
        assert_eq!(q.name, "demo");
        // NaN log-likelihoods do not compare equal, so compare the encoding
        assert_eq!(serde_json::to_string(&q.estimates).unwrap(), serde_json::to_string(&p.estimates).unwrap());
        let theta = q.estimates.as_ref().unwrap().iter().next().unwrap().1.theta;
        assert_eq!(theta.b.to_bits(), (1.0f64 / 3.0).to_bits());
    }

    #[test]
    fn truncated_store_is_corrupt() {
        let dir = tempfile::tempdir().unwrap();
        let path = project_dir(dir.path(), "demo");
        save_project(&fixture(), &path).unwrap();
        let f = path.join("estimates.json");
        let b = fs::read(&f).unwrap();
        fs::write(&f, &b[..b.len() / 2]).unwrap();
        assert!(matches!(load_project(&path), Err(Error::CorruptStore(_))));
    }

    #[test]
    fn version_is_checked() {
        let dir = tempfile::tempdir().unwrap();
        let path = project_dir(dir.path(), "demo");
        save_project(&fixture(), &path).unwrap();
        let m = fs::read_to_string(path.join(MANIFEST)).unwrap().replace("\"version\": 1", "\"version\": 99");
        fs::write(path.join(MANIFEST), m).unwrap();
        assert!(matches!(load_project(&path), Err(Error::VersionMismatch { found: 99, .. })));
    }

    #[test]
    fn relocated_project_loads_identically() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let src = project_dir(a.path(), "demo");
        save_project(&fixture(), &src).unwrap();
        let dst = project_dir(b.path(), "demo");
        fs::create_dir_all(&dst).unwrap();
        for e in fs::read_dir(&src).unwrap() {
            let e = e.unwrap();
            fs::copy(e.path(), dst.join(e.file_name())).unwrap();
        }
        let (x, y) = (load_project(&src).unwrap(), load_project(&dst).unwrap());
        assert_eq!(x.counts, y.counts);
        assert_eq!(serde_json::to_string(&x.estimates).unwrap(), serde_json::to_string(&y.estimates).unwrap());
    }

    #[test]
    fn lock_is_exclusive() {
        let dir = tempfile::tempdir().unwrap();
        let l = ProjectLock::acquire(dir.path()).unwrap();
        assert!(matches!(ProjectLock::acquire(dir.path()), Err(Error::Locked(_))));
        drop(l);
        ProjectLock::acquire(dir.path()).unwrap();
    }

    #[test]
    fn project_paths() {
        assert_eq!(resolve_project(Path::new("out/P")), PathBuf::from("out/P.mixproj"));
        assert_eq!(resolve_project(Path::new("out/P.mixproj")), PathBuf::from("out/P.mixproj"));
    }
}
