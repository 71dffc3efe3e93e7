//! The command set shared by the command line and `reproduce`.
//!
//! Every command is a typed value. Paths inside a logged command are stored
//! relative to the directory that holds the project, so a project and its
//! inputs can be moved together.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::io::ErrorKind;
use std::path::{Component, Path, PathBuf};

use chrono::{SecondsFormat, Utc};
use log::{debug, info};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::difftest::{difftest_snv, DiffMethod, DiffTestRegistry};
use crate::dist::{ModelKind, DEFAULT_TRUNCATION};
use crate::error::{Error, Result};
use crate::fit::{fit_global, FitSettings};
use crate::model::AlleleCounts;
use crate::scoring::{score_group, score_unique, RawScore, ScoreCache, ScoreKey};

use super::export::{export, ExportTable};
use super::ingest::{expand_inputs, ingest, Dataset, InputFormat};
use super::store::{
    load_project, save_project, sha256_file, CombinedStore, CommandDescriptor, DiffTestStore, GroupSpec, InputHash,
    Project, ProjectLock, ReproduceLog, ScoreStore, MANIFEST, PROJECT_EXT,
};
use super::visualize::visualize;

/// Name of the implicit group holding every sample.
pub const ALL_GROUP: &str = "all";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "verb", rename_all = "lowercase")]
pub enum Command {
    Create {
        name: String,
        inputs: Vec<PathBuf>,
        format: InputFormat,
        bad: Option<PathBuf>,
        truncation: u64,
    },
    Fit {
        model: ModelKind,
        alpha: f64,
        window_size: u64,
        truncation: u64,
        std_errors: bool,
    },
    Test,
    Combine {
        groups: Vec<PathBuf>,
    },
    Difftest {
        control: PathBuf,
        test: PathBuf,
        method: DiffMethod,
    },
    Export {
        table: ExportTable,
        dir: PathBuf,
    },
    Visualize {
        dir: PathBuf,
    },
}

impl Command {
    pub fn verb(&self) -> &'static str {
        match self {
            Command::Create { .. } => "create",
            Command::Fit { .. } => "fit",
            Command::Test => "test",
            Command::Combine { .. } => "combine",
            Command::Difftest { .. } => "difftest",
            Command::Export { .. } => "export",
            Command::Visualize { .. } => "visualize",
        }
    }

    /// `create` with the default format and threshold.
    pub fn create(name: &str, inputs: Vec<PathBuf>) -> Self {
        Command::Create { name: name.into(), inputs, format: InputFormat::Tsv, bad: None, truncation: DEFAULT_TRUNCATION }
    }

    /// `fit` with the default window size, no prior and no standard errors.
    pub fn fit(model: ModelKind) -> Self {
        let d = FitSettings::new(model);
        Command::Fit { model, alpha: d.alpha, window_size: d.m, truncation: d.l, std_errors: false }
    }

    fn map_paths(&self, mut f: impl FnMut(&Path) -> PathBuf) -> Self {
        let mut c = self.clone();
        match &mut c {
            Command::Create { inputs, bad, .. } => {
                for p in inputs.iter_mut() {
                    *p = f(p);
                }
                if let Some(b) = bad {
                    *b = f(b);
                }
            }
            Command::Combine { groups } => {
                for p in groups.iter_mut() {
                    *p = f(p);
                }
            }
            Command::Difftest { control, test, .. } => {
                *control = f(control);
                *test = f(test);
            }
            Command::Export { dir, .. } | Command::Visualize { dir } => *dir = f(dir),
            Command::Fit { .. } | Command::Test => {}
        }
        c
    }
}

fn normalize(p: &Path) -> PathBuf {
    let mut out = PathBuf::new();
    for c in p.components() {
        match c {
            Component::CurDir => {}
            Component::ParentDir => {
                if !out.pop() {
                    out.push("..");
                }
            }
            other => out.push(other),
        }
    }
    out
}

fn absolute(p: &Path) -> Result<PathBuf> {
    Ok(normalize(&std::path::absolute(p)?))
}

/// `p` relative to `base` when it lies below it, otherwise absolute.
pub fn portable_path(p: &Path, base: &Path) -> Result<PathBuf> {
    let abs = absolute(p)?;
    Ok(abs.strip_prefix(base).map(Path::to_path_buf).unwrap_or(abs))
}

pub fn resolve_path(p: &Path, base: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

/// The directory holding the project directory; logged paths are relative to it.
pub fn project_base(project_dir: &Path) -> Result<PathBuf> {
    let abs = absolute(project_dir)?;
    Ok(abs.parent().map(Path::to_path_buf).unwrap_or(abs))
}

fn input_files(cmd: &Command, base: &Path) -> Result<Vec<PathBuf>> {
    Ok(match cmd {
        Command::Create { inputs, format, bad, .. } => {
            let resolved: Vec<PathBuf> = inputs.iter().map(|p| resolve_path(p, base)).collect();
            let mut files = expand_inputs(&resolved, *format)?;
            files.extend(bad.iter().map(|b| resolve_path(b, base)));
            files
        }
        Command::Combine { groups } => groups.iter().map(|p| resolve_path(p, base)).collect(),
        Command::Difftest { control, test, .. } => vec![resolve_path(control, base), resolve_path(test, base)],
        _ => Vec::new(),
    })
}

fn input_hashes(cmd: &Command, base: &Path) -> Result<Vec<InputHash>> {
    input_files(cmd, base)?
        .into_iter()
        .map(|f| Ok(InputHash { sha256: sha256_file(&f)?, path: portable_path(&f, base)? }))
        .collect()
}

fn missing(verb: &str) -> Error {
    Error::InvalidArgument(format!("run `{verb}` first"))
}

/// Reads a group file: one sample name, file name or glob pattern per line.
pub fn read_group(path: &Path, data: &Dataset) -> Result<GroupSpec> {
    let text = fs::read_to_string(path)?;
    let mut patterns = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        let p = glob::Pattern::new(t).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: format!("bad pattern '{t}': {e}"),
        })?;
        patterns.push(p);
    }
    let samples: Vec<String> = data
        .samples
        .iter()
        .filter(|s| patterns.iter().any(|p| p.matches(&s.name) || s.sources.iter().any(|f| p.matches(f))))
        .map(|s| s.name.clone())
        .collect();
    let name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    if samples.is_empty() {
        return Err(Error::InvalidArgument(format!("group {name} matches no samples")));
    }
    Ok(GroupSpec { name, samples })
}

fn run_test(project: &mut Project) -> Result<()> {
    let est = project.estimates.as_ref().ok_or_else(|| missing("fit"))?;
    let l = est.settings.l;
    let keys: BTreeSet<ScoreKey> = project
        .counts
        .samples
        .iter()
        .flat_map(|s| &s.records)
        .filter(|r| r.counts.ref_count >= l && r.counts.alt_count >= l)
        .map(|r| (r.counts.ref_count, r.counts.alt_count, r.counts.bad))
        .collect();
    let keys: Vec<ScoreKey> = keys.into_iter().collect();
    let cache = ScoreCache::new();
    let mut scored = HashMap::new();
    for (k, res) in keys.iter().zip(score_unique(&keys, est, &cache)) {
        match res {
            Ok(v) => {
                scored.insert(*k, v);
            }
            Err(e) => debug!("({}, {}, BAD {}) not scored: {e}", k.0, k.1, k.2),
        }
    }
    let mut rows: Vec<(u32, RawScore)> = Vec::new();
    let mut excluded = 0;
    for s in &project.counts.samples {
        for r in &s.records {
            let c = r.counts;
            match scored.get(&(c.ref_count, c.alt_count, c.bad)) {
                Some(v) => rows.push((
                    r.snv,
                    RawScore {
                        snv: project.counts.snvs[r.snv as usize].id.clone(),
                        sample: s.name.clone(),
                        ref_count: c.ref_count,
                        alt_count: c.alt_count,
                        bad: c.bad,
                        scores: *v,
                    },
                )),
                None => excluded += 1,
            }
        }
    }
    if excluded > 0 {
        info!("{excluded} observations were not scored (below the threshold or without a fitted window)");
    }
    rows.sort_by(|a, b| a.0.cmp(&b.0).then_with(|| a.1.sample.cmp(&b.1.sample)));
    project.scores = Some(ScoreStore { raw: rows.into_iter().map(|(_, r)| r).collect(), excluded });
    project.combined = None;
    Ok(())
}

fn run_combine(project: &mut Project, groups: &[PathBuf], base: &Path) -> Result<()> {
    let scores = project.scores.as_ref().ok_or_else(|| missing("test"))?;
    let specs: Vec<GroupSpec> = if groups.is_empty() {
        vec![GroupSpec { name: ALL_GROUP.into(), samples: project.counts.samples.iter().map(|s| s.name.clone()).collect() }]
    } else {
        groups.iter().map(|g| read_group(&resolve_path(g, base), &project.counts)).collect::<Result<_>>()?
    };
    let mut records = Vec::new();
    for g in &specs {
        let members: BTreeSet<&str> = g.samples.iter().map(String::as_str).collect();
        // raw scores are sorted by SNV, so each SNV is one contiguous run
        let mut runs: Vec<Vec<&RawScore>> = Vec::new();
        for r in scores.raw.iter().filter(|r| members.contains(r.sample.as_str())) {
            match runs.last_mut() {
                Some(run) if run[0].snv == r.snv => run.push(r),
                _ => runs.push(vec![r]),
            }
        }
        let out: Vec<_> = runs.par_iter().map(|run| score_group(&run[0].snv, &g.name, run)).collect::<Result<_>>()?;
        records.extend(out);
    }
    project.combined = Some(CombinedStore { groups: specs, records });
    Ok(())
}

fn run_difftest(project: &mut Project, control: &Path, test: &Path, method: DiffMethod, base: &Path) -> Result<()> {
    let est = project.estimates.as_ref().ok_or_else(|| missing("fit"))?;
    let registry = DiffTestRegistry::standard();
    let m = registry.get(method.name())?;
    let data = &project.counts;
    let c = read_group(&resolve_path(control, base), data)?;
    let t = read_group(&resolve_path(test, base), data)?;
    let collect = |g: &GroupSpec| -> BTreeMap<u32, Vec<AlleleCounts>> {
        let samples: Vec<_> = g.samples.iter().filter_map(|n| data.sample(n)).collect();
        data.by_snv(&samples).into_iter().map(|(k, v)| (k, v.into_iter().map(|(_, c)| c).collect())).collect()
    };
    let (cobs, tobs) = (collect(&c), collect(&t));
    let both: Vec<u32> = cobs.keys().filter(|k| tobs.contains_key(k)).copied().collect();
    let one_sided = cobs.len() + tobs.len() - 2 * both.len();
    if one_sided > 0 {
        info!("{one_sided} SNVs are present in only one group and were skipped");
    }
    let results: Vec<_> = both
        .par_iter()
        .map(|k| {
            let id = &data.snvs[*k as usize].id;
            (id, difftest_snv(id, &cobs[k], &tobs[k], est, m))
        })
        .collect();
    let mut records = Vec::new();
    let mut failed = 0;
    for (id, r) in results {
        match r {
            Ok(rec) => records.push(rec),
            Err(e) => {
                debug!("SNV {id} not tested: {e}");
                failed += 1;
            }
        }
    }
    project.difftest = Some(DiffTestStore { method, control: c, test: t, records, skipped: (one_sided + failed) as u64 });
    Ok(())
}

/// Applies one command to an in-memory project. `base` resolves relative paths.
pub fn apply(project: &mut Project, cmd: &Command, base: &Path) -> Result<()> {
    match cmd {
        Command::Create { name, inputs, format, bad, truncation } => {
            let inputs: Vec<PathBuf> = inputs.iter().map(|p| resolve_path(p, base)).collect();
            let bad = bad.as_ref().map(|b| resolve_path(b, base));
            let counts = ingest(&inputs, *format, bad.as_deref(), *truncation)?;
            let log = std::mem::take(&mut project.log);
            *project = Project::new(name.clone(), counts);
            project.log = log;
        }
        Command::Fit { model, alpha, window_size, truncation, std_errors } => {
            let settings = FitSettings {
                m: *window_size,
                alpha: *alpha,
                l: *truncation,
                estimate_se: *std_errors,
                ..FitSettings::new(*model)
            };
            let est = fit_global(&project.counts.partitions(), &settings)?;
            project.estimates = Some(est);
            project.clear_downstream();
        }
        Command::Test => run_test(project)?,
        Command::Combine { groups } => run_combine(project, groups, base)?,
        Command::Difftest { control, test, method } => run_difftest(project, control, test, *method, base)?,
        Command::Export { table, dir } => {
            export(project, *table, &resolve_path(dir, base))?;
        }
        Command::Visualize { dir } => {
            visualize(project, &resolve_path(dir, base))?;
        }
    }
    Ok(())
}

fn project_name(project_dir: &Path) -> String {
    let name = project_dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    name.strip_suffix(&format!(".{PROJECT_EXT}")).unwrap_or(&name).to_string()
}

/// Runs one command against the project at `project_dir` under its lock and
/// appends it to the reproduce log.
pub fn execute(project_dir: &Path, cmd: &Command) -> Result<Project> {
    let base = project_base(project_dir)?;
    let cmd = {
        let mut err = None;
        let c = cmd.map_paths(|p| portable_path(p, &base).unwrap_or_else(|e| {
            err = Some(e);
            p.to_path_buf()
        }));
        if let Some(e) = err {
            return Err(e);
        }
        c
    };
    let exists = project_dir.join(MANIFEST).exists();
    let _lock;
    let mut project = if let Command::Create { name, .. } = &cmd {
        if exists {
            return Err(Error::InvalidArgument(format!("project {} already exists", project_dir.display())));
        }
        _lock = ProjectLock::acquire(project_dir)?;
        Project::new(name.clone(), Dataset::default())
    } else {
        if !project_dir.is_dir() {
            return Err(Error::Io(std::io::Error::new(
                ErrorKind::NotFound,
                format!("no project at {}", project_dir.display()),
            )));
        }
        _lock = ProjectLock::acquire(project_dir)?;
        load_project(project_dir)?
    };
    let inputs = input_hashes(&cmd, &base)?;
    let created = matches!(cmd, Command::Create { .. });
    let result = apply(&mut project, &cmd, &base);
    if let Err(e) = result {
        if created {
            drop(_lock);
            let _ = fs::remove_dir_all(project_dir);
        }
        return Err(e);
    }
    project.log.commands.push(CommandDescriptor {
        command: cmd,
        timestamp: Utc::now().to_rfc3339_opts(SecondsFormat::Secs, true),
        inputs,
    });
    save_project(&project, project_dir)?;
    Ok(project)
}

/// Checks every logged input against its recorded hash.
pub fn verify_inputs(log: &ReproduceLog, base: &Path) -> Result<()> {
    for d in &log.commands {
        let logged: BTreeMap<&Path, &str> = d.inputs.iter().map(|h| (h.path.as_path(), h.sha256.as_str())).collect();
        let current = input_files(&d.command, base).unwrap_or_default();
        for f in &current {
            let rel = portable_path(f, base)?;
            if !logged.contains_key(rel.as_path()) {
                return Err(Error::HashMismatch { path: f.clone() });
            }
        }
        for h in &d.inputs {
            let path = resolve_path(&h.path, base);
            match sha256_file(&path) {
                Ok(sum) if sum == h.sha256 => {}
                _ => return Err(Error::HashMismatch { path }),
            }
        }
    }
    Ok(())
}

/// Replays a project's log from scratch and rewrites its stores.
pub fn reproduce(log_path: &Path) -> Result<Project> {
    let log = ReproduceLog::load(log_path)?;
    let project_dir = match log_path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    let project_dir = absolute(&project_dir)?;
    let base = project_base(&project_dir)?;
    verify_inputs(&log, &base)?;
    let _lock = ProjectLock::acquire(&project_dir)?;
    let mut project = Project::new(project_name(&project_dir), Dataset::default());
    for d in &log.commands {
        apply(&mut project, &d.command, &base)?;
    }
    project.log = log;
    save_project(&project, &project_dir)?;
    Ok(project)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::ModelKind;

    fn write_sample(dir: &Path, name: &str, shift: u64) -> PathBuf {
        let mut s = String::from("chr\tpos\tid\tref\talt\tref_count\talt_count\n");
        for i in 0..300u64 {
            let (x, y) = (5 + (i * 13 + shift) % 45, 5 + (i * 7) % 40);
            s.push_str(&format!("chr1\t{}\trs{i}\tA\tG\t{x}\t{y}\n", 1000 + i));
        }
        let p = dir.join(format!("{name}.tsv"));
        fs::write(&p, s).unwrap();
        p
    }

    fn setup() -> (tempfile::TempDir, PathBuf) {
        let t = tempfile::tempdir().unwrap();
        fs::create_dir(t.path().join("data")).unwrap();
        write_sample(&t.path().join("data"), "s1", 0);
        write_sample(&t.path().join("data"), "s2", 3);
        let dir = t.path().join("P.mixproj");
        (t, dir)
    }

    #[test]
    fn empty_log_replays_to_empty_project() {
        let t = tempfile::tempdir().unwrap();
        let dir = t.path().join("E.mixproj");
        fs::create_dir(&dir).unwrap();
        let log = dir.join(super::super::store::LOG_FILE);
        fs::write(&log, serde_json::to_string(&ReproduceLog::default()).unwrap()).unwrap();
        let p = reproduce(&log).unwrap();
        assert_eq!(p.name, "E");
        assert!(p.counts.is_empty() && p.estimates.is_none() && p.log.commands.is_empty());
    }

    #[test]
    fn replay_gives_identical_scores() {
        let (t, dir) = setup();
        execute(&dir, &Command::create("P", vec![t.path().join("data")])).unwrap();
        execute(&dir, &Command::fit(ModelKind::Nb)).unwrap();
        let original = execute(&dir, &Command::Test).unwrap();
        assert_eq!(original.log.commands.len(), 3);
        assert_eq!(original.log.commands[0].inputs.len(), 2);
        assert_eq!(original.log.commands[0].inputs[0].path, Path::new("data/s1.tsv"));
        let replayed = reproduce(&dir.join(super::super::store::LOG_FILE)).unwrap();
        assert_eq!(replayed.scores, original.scores);
        assert_eq!(replayed.log, original.log);
        assert_eq!(load_project(&dir).unwrap(), original);
    }

    #[test]
    fn edited_input_fails_verification() {
        let (t, dir) = setup();
        execute(&dir, &Command::create("P", vec![t.path().join("data")])).unwrap();
        let log = dir.join(super::super::store::LOG_FILE);
        // rewriting identical bytes keeps the hash
        let f = t.path().join("data/s2.tsv");
        let bytes = fs::read(&f).unwrap();
        fs::write(&f, &bytes).unwrap();
        reproduce(&log).unwrap();
        let mut edited = bytes.clone();
        edited.push(b'\n');
        fs::write(&f, edited).unwrap();
        match reproduce(&log) {
            Err(Error::HashMismatch { path }) => assert!(path.ends_with("data/s2.tsv")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn failed_create_leaves_nothing_behind() {
        let t = tempfile::tempdir().unwrap();
        fs::create_dir(t.path().join("empty")).unwrap();
        let dir = t.path().join("X.mixproj");
        assert!(matches!(execute(&dir, &Command::create("X", vec![t.path().join("empty")])), Err(Error::EmptyDataset)));
        assert!(!dir.exists());
    }

    #[test]
    fn group_patterns() {
        let (t, dir) = setup();
        let p = execute(&dir, &Command::create("P", vec![t.path().join("data")])).unwrap();
        let g = t.path().join("grp.txt");
        fs::write(&g, "# by pattern\ns*\n").unwrap();
        assert_eq!(read_group(&g, &p.counts).unwrap().samples, vec!["s1", "s2"]);
        fs::write(&g, "s2.tsv\n").unwrap();
        let spec = read_group(&g, &p.counts).unwrap();
        assert_eq!((spec.name.as_str(), spec.samples), ("grp", vec!["s2".to_string()]));
        fs::write(&g, "nobody\n").unwrap();
        assert!(matches!(read_group(&g, &p.counts), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn portable_paths() {
        let base = Path::new("/work/projects");
        assert_eq!(portable_path(Path::new("/work/projects/data/a.tsv"), base).unwrap(), Path::new("data/a.tsv"));
        assert_eq!(portable_path(Path::new("/work/projects/x/../data/./a.tsv"), base).unwrap(), Path::new("data/a.tsv"));
        assert_eq!(portable_path(Path::new("/elsewhere/a.tsv"), base).unwrap(), Path::new("/elsewhere/a.tsv"));
        assert_eq!(resolve_path(Path::new("data/a.tsv"), base), Path::new("/work/projects/data/a.tsv"));
        assert_eq!(resolve_path(Path::new("/elsewhere/a.tsv"), base), Path::new("/elsewhere/a.tsv"));
    }

    #[test]
    fn command_log_format() {
        let c = Command::Difftest { control: "g/c.txt".into(), test: "g/t.txt".into(), method: DiffMethod::Lrt };
        let v = serde_json::to_value(&c).unwrap();
        assert_eq!(v["verb"], "difftest");
        assert_eq!(v["method"], "lrt");
        let back: Command = serde_json::from_value(v).unwrap();
        assert_eq!(back, c);
        assert_eq!(serde_json::to_value(Command::Test).unwrap(), serde_json::json!({"verb": "test"}));
    }
}
