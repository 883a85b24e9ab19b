//! Run orchestration: import, the deliver / examine / update stages and the
//! persistent, resumable run directory they operate on.
//!
//! Layout of a run directory:
//!
//! ```text
//! config.json  manifest.json  import_report.json  summary.json
//! gateway.jsonl  lock  prompts/<family>.txt
//! iter_<i>/questions.jsonl  solutions.jsonl  deliver_failures.jsonl  split.json
//! iter_<i>/train/{csl_train,fcl_train}.jsonl  train_manifest.json
//! iter_<i>/student_solutions.jsonl  feedback.jsonl  scorer_outputs.jsonl  examine_excluded.jsonl
//! iter_<i>/new_questions.jsonl  curriculum_report.json
//! ```

mod config;
mod demo;
mod state;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

pub use config::{BackendSpec, ConfigError, DecodingConfig, MockBackendConfig, Persona, RunConfig};
pub use demo::persona_backend;
pub use state::{
    hash_files, now_rfc3339, IntegrityError, IterationState, LockError, Manifest, RunLock, Stage, StageRecord,
    LOCK_FILE, MANIFEST_FILE,
};

use crate::corpus::store::{self, StoreError};
use crate::corpus::{
    dedup_against, split_corpus, Corpus, Origin, Question, Role, SolutionRecord, SplitItem, QUESTIONS_FILE,
    SOLUTIONS_FILE, SPLIT_FILE,
};
use crate::curriculum::{self, allocate, BucketedParents, CurriculumReport, GenerationContext, GenerationError};
use crate::feedback::{
    self, bucket_histogram, build_annotations, examine, parse_score, Bucket, ExamineContext, Excluded, FeedbackRecord,
    ScorerOutput, ScoringAnnotation,
};
use crate::gateway::{Backend, DecodingMode, Gateway, HttpBackend, Journal, JOURNAL_FILE};
use crate::lang::Language;
use crate::objectives::{self, export_training_sets};
use crate::prompts::{FaultKind, PromptSet, TemplateError};
use crate::rng;
use crate::sandbox::{Sandbox, SandboxConfig, SandboxError};

pub const CONFIG_FILE: &str = "config.json";
pub const PROMPTS_DIR: &str = "prompts";
pub const IMPORT_REPORT_FILE: &str = "import_report.json";
pub const SUMMARY_FILE: &str = "summary.json";
pub const DELIVER_FAILURES_FILE: &str = "deliver_failures.jsonl";
pub const TRAIN_DIR: &str = "train";

/// Set by the CLI's signal handler; checked between work chunks.
pub static INTERRUPTED: AtomicBool = AtomicBool::new(false);

pub fn iter_dir_name(iteration: u32) -> String {
    format!("iter_{iteration}")
}

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("import {path}:{line}: {message}")]
    Import { path: PathBuf, line: usize, message: String },
    #[error("{0} is already initialised")]
    AlreadyInitialised(PathBuf),
    #[error("{0} is not a run directory (no manifest.json)")]
    NotARun(PathBuf),
    #[error("prompt templates: {0}")]
    Prompts(#[from] TemplateError),
    #[error("backend `{name}`: {message}")]
    Backend { name: String, message: String },
    #[error(transparent)]
    Lock(#[from] LockError),
    #[error("run directory was modified: {0}")]
    Integrity(#[from] IntegrityError),
    #[error("{stage} cannot run now: the run is at iteration {iteration}, stage {current}")]
    OutOfOrder { stage: Stage, iteration: u32, current: Stage },
    #[error("{stage} stage of iteration {iteration} failed: {message}")]
    Stage { stage: Stage, iteration: u32, message: String },
    #[error("interrupted during {stage} of iteration {iteration}; run the command again to resume")]
    Interrupted { stage: Stage, iteration: u32 },
    #[error(transparent)]
    Sandbox(#[from] SandboxError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

impl PipelineError {
    /// 2 for configuration and import problems, 4 for lock contention and 3
    /// for everything that a later invocation can resume from.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_)
            | PipelineError::Import { .. }
            | PipelineError::AlreadyInitialised(_)
            | PipelineError::NotARun(_)
            | PipelineError::Prompts(_)
            | PipelineError::Backend { .. }
            | PipelineError::Sandbox(SandboxError::BadRule { .. } | SandboxError::BadParallelism) => 2,
            PipelineError::Lock(LockError::Held { .. }) => 4,
            _ => 3,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageReport {
    pub iteration: u32,
    pub stage: Stage,
    pub already_complete: bool,
    pub message: String,
}

impl std::fmt::Display for StageReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.already_complete {
            write!(f, "{}: already complete", self.stage)
        } else {
            write!(f, "iteration {} {}: {}", self.iteration, self.stage, self.message)
        }
    }
}

/// One question that could not be given a teacher solution.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeliverFailure {
    pub question_id: String,
    pub role: Role,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportReport {
    pub records: usize,
    pub kept: usize,
    /// Ids of near-duplicates dropped on import.
    pub rejected: Vec<String>,
    pub threshold: f64,
    pub ngram: usize,
}

#[derive(Deserialize)]
struct ImportRecord {
    #[serde(default)]
    id: Option<String>,
    #[serde(alias = "question", alias = "instruction")]
    text: String,
}

/// Reads seed questions: one JSON object per line with `text` (or `question`
/// / `instruction`) and an optional `id`; missing ids become `seed-<line>`.
pub fn read_import(path: &Path) -> Result<Vec<Question>, PipelineError> {
    let file = std::fs::File::open(path).map_err(|e| PipelineError::Import {
        path: path.to_path_buf(),
        line: 0,
        message: e.to_string(),
    })?;
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let n = idx + 1;
        let bad = |message: String| PipelineError::Import {
            path: path.to_path_buf(),
            line: n,
            message,
        };
        let line = line.map_err(|e| bad(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: ImportRecord = serde_json::from_str(&line).map_err(|e| bad(e.to_string()))?;
        let q = Question::seed(rec.id.unwrap_or_else(|| format!("seed-{n:05}")), rec.text);
        q.validate().map_err(|e| bad(e.to_string()))?;
        if !seen.insert(q.id.clone()) {
            return Err(bad(format!("duplicate id `{}`", q.id)));
        }
        out.push(q);
    }
    if out.is_empty() {
        return Err(PipelineError::Import {
            path: path.to_path_buf(),
            line: 0,
            message: "no questions".into(),
        });
    }
    Ok(out)
}

/// Gateway with every configured backend; `overrides` replace configured
/// backends of the same name.
pub fn build_gateway(
    config: &RunConfig,
    overrides: &[(String, Arc<dyn Backend>)],
    journal: Option<Journal>,
) -> Result<Gateway, PipelineError> {
    let mut gw = Gateway::new(config.retry.clone());
    if let Some(j) = journal {
        gw = gw.with_journal(j);
    }
    for spec in &config.backends {
        let name = spec.name().to_string();
        let backend: Arc<dyn Backend> = match overrides.iter().find(|(n, _)| *n == name) {
            Some((_, b)) => b.clone(),
            None => match spec {
                BackendSpec::Http(c) => Arc::new(HttpBackend::new(c.clone()).map_err(|e| PipelineError::Backend {
                    name: name.clone(),
                    message: e.to_string(),
                })?),
                BackendSpec::Mock(m) => Arc::new(
                    persona_backend(&m.name, m.persona).with_latency(std::time::Duration::from_millis(m.latency_ms)),
                ),
            },
        };
        gw.register(name, backend, spec.max_concurrency());
    }
    Ok(gw)
}

/// Sandbox from the config block; with `only`, every other language is
/// disabled so its toolchain is not probed.
pub fn build_sandbox(config: &SandboxConfig, only: Option<Language>) -> Result<Sandbox, SandboxError> {
    let mut c = config.clone();
    if let Some(lang) = only {
        c.disabled.extend(Language::ALL.into_iter().filter(|l| *l != lang));
        c.disabled.sort();
        c.disabled.dedup();
    }
    Sandbox::new(c)
}

/// Applies `f` to every item on up to `threads` threads; output keeps input order.
fn par_map<T: Sync, R: Send>(items: &[T], threads: usize, f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    let slots: Vec<Mutex<Option<R>>> = items.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    std::thread::scope(|s| {
        for _ in 0..threads.max(1).min(items.len()) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(item) = items.get(i) else { break };
                let r = f(item);
                *slots[i].lock().expect("slot") = Some(r);
            });
        }
    });
    slots
        .into_iter()
        .map(|m| m.into_inner().expect("slot").expect("every item mapped"))
        .collect()
}

/// Rewrites a JSONL file sorted by question order, keeping the last record
/// per key. Makes files appended chunk by chunk independent of where a run
/// was interrupted.
fn canonicalize<T: Serialize + DeserializeOwned>(
    path: &Path,
    order: &HashMap<&str, usize>,
    key: impl Fn(&T) -> (&str, u8),
) -> Result<usize, StoreError> {
    if !path.exists() {
        return Ok(0);
    }
    let records: Vec<T> = store::load_jsonl(path)?.records;
    let mut keyed: BTreeMap<(usize, String, u8), T> = BTreeMap::new();
    for r in records {
        let (qid, sub) = key(&r);
        let k = (order.get(qid).copied().unwrap_or(usize::MAX), qid.to_string(), sub);
        keyed.insert(k, r);
    }
    let out: Vec<T> = keyed.into_values().collect();
    store::write_jsonl(path, &out)?;
    Ok(out.len())
}

fn role_rank(r: Role) -> u8 {
    match r {
        Role::TeacherCorrect => 0,
        Role::TeacherFaulty => 1,
        Role::Student => 2,
    }
}

fn origin_name(o: Origin) -> &'static str {
    match o {
        Origin::SeedImport => "seed-import",
        Origin::GeneratedEasy => "generated-easy",
        Origin::GeneratedMedium => "generated-medium",
        Origin::GeneratedHard => "generated-hard",
    }
}

#[derive(Default)]
pub struct OpenOptions {
    /// Backends that replace configured ones of the same name.
    pub backends: Vec<(String, Arc<dyn Backend>)>,
    /// Checked between work chunks in addition to [`INTERRUPTED`].
    pub cancel: Option<Arc<AtomicBool>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationSummary {
    pub iteration: u32,
    pub questions: usize,
    pub correct_solutions: usize,
    pub faulty_solutions: usize,
    pub deliver_failures: usize,
    pub csl: usize,
    pub fcl: usize,
    pub feedback: usize,
    pub examine_excluded: usize,
    pub buckets: BTreeMap<String, usize>,
    pub execution_pass_rate: Option<f64>,
    pub mean_score: Option<f64>,
    pub new_questions: usize,
    pub dedup_rejected: usize,
    pub shortfall: usize,
}

/// Final report; holds no timestamps so identical runs produce identical files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub run_name: String,
    pub seed: u64,
    pub iterations: u32,
    pub state: IterationState,
    pub per_iteration: Vec<IterationSummary>,
    pub corpus_size: usize,
    pub corpus_by_origin: BTreeMap<String, usize>,
}

pub struct Pipeline {
    dir: PathBuf,
    config: RunConfig,
    manifest: Manifest,
    prompts: PromptSet,
    gateway: Gateway,
    cancel: Option<Arc<AtomicBool>>,
    _lock: RunLock,
}

impl Pipeline {
    /// Creates a run directory from `config`: imports and deduplicates the
    /// seed questions and writes the config, prompt templates and manifest.
    pub fn init(config: &RunConfig, dir: &Path) -> Result<Self, PipelineError> {
        Self::init_with(config, dir, OpenOptions::default())
    }

    pub fn init_with(config: &RunConfig, dir: &Path, opts: OpenOptions) -> Result<Self, PipelineError> {
        config.validate()?;
        if dir.join(MANIFEST_FILE).exists() {
            return Err(PipelineError::AlreadyInitialised(dir.to_path_buf()));
        }
        let imported = read_import(&config.corpus_import)?;
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
        let lock = RunLock::acquire(dir)?;

        let records = imported.len();
        let outcome = dedup_against(imported, std::iter::empty(), config.dedup_threshold, config.ngram);
        let report = ImportReport {
            records,
            kept: outcome.kept.len(),
            rejected: outcome.rejected.iter().map(|q| q.id.clone()).collect(),
            threshold: config.dedup_threshold,
            ngram: config.ngram,
        };
        if !report.rejected.is_empty() {
            log::info!("import: dropped {} near-duplicate questions", report.rejected.len());
        }

        let mut config = config.clone();
        if let Ok(abs) = std::fs::canonicalize(&config.corpus_import) {
            config.corpus_import = abs;
        }
        store::write_json(&dir.join(CONFIG_FILE), &config)?;
        let prompts_dir = dir.join(PROMPTS_DIR);
        if !prompts_dir.exists() {
            PromptSet::write_defaults(&prompts_dir).map_err(io_err(&prompts_dir))?;
        }
        let q0 = format!("{}/{QUESTIONS_FILE}", iter_dir_name(0));
        store::write_jsonl(&dir.join(&q0), &outcome.kept)?;
        store::write_json(&dir.join(IMPORT_REPORT_FILE), &report)?;

        let now = now_rfc3339();
        let mut manifest = Manifest {
            run_name: config.run_name.clone(),
            seed: config.seed,
            iterations: config.iterations,
            created_at: now.clone(),
            updated_at: now,
            state: IterationState {
                iteration: 0,
                stage: Stage::Deliver,
            },
            training_init_from: config.training.init_from.clone(),
            init_files: hash_files(dir, &[q0, IMPORT_REPORT_FILE.to_string()])?,
            stages: Vec::new(),
        };
        manifest.save(dir)?;
        Self::assemble(dir, config, manifest, opts, lock)
    }

    /// Opens an initialised run directory, taking its lock and verifying
    /// every recorded file hash.
    pub fn open(dir: &Path, opts: OpenOptions) -> Result<Self, PipelineError> {
        if !dir.join(MANIFEST_FILE).exists() {
            return Err(PipelineError::NotARun(dir.to_path_buf()));
        }
        let lock = RunLock::acquire(dir)?;
        let manifest = Manifest::load(dir)?;
        manifest.verify(dir)?;
        let config = RunConfig::load(&dir.join(CONFIG_FILE))?;
        Self::assemble(dir, config, manifest, opts, lock)
    }

    fn assemble(
        dir: &Path,
        config: RunConfig,
        manifest: Manifest,
        opts: OpenOptions,
        lock: RunLock,
    ) -> Result<Self, PipelineError> {
        let prompts = PromptSet::load_dir(&dir.join(PROMPTS_DIR))?;
        let journal_path = dir.join(JOURNAL_FILE);
        let journal = Journal::open(&journal_path).map_err(io_err(&journal_path))?;
        let gateway = build_gateway(&config, &opts.backends, Some(journal))?;
        Ok(Pipeline {
            dir: dir.to_path_buf(),
            config,
            manifest,
            prompts,
            gateway,
            cancel: opts.cancel,
            _lock: lock,
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    pub fn gateway(&self) -> &Gateway {
        &self.gateway
    }

    pub fn iter_dir(&self, iteration: u32) -> PathBuf {
        self.dir.join(iter_dir_name(iteration))
    }

    fn rel(&self, path: &Path) -> String {
        path.strip_prefix(&self.dir)
            .unwrap_or(path)
            .components()
            .map(|c| c.as_os_str().to_string_lossy())
            .collect::<Vec<_>>()
            .join("/")
    }

    fn cancelled(&self) -> bool {
        INTERRUPTED.load(Ordering::SeqCst) || self.cancel.as_ref().is_some_and(|c| c.load(Ordering::SeqCst))
    }

    fn check_cancel(&self, stage: Stage, iteration: u32) -> Result<(), PipelineError> {
        if self.cancelled() {
            return Err(PipelineError::Interrupted { stage, iteration });
        }
        Ok(())
    }

    /// The iteration to run `stage` for, or `None` when it is already done.
    fn begin(&self, stage: Stage) -> Result<Option<u32>, PipelineError> {
        let st = self.manifest.state;
        if st.stage == Stage::Done || st.stage > stage {
            return Ok(None);
        }
        if st.stage < stage {
            return Err(PipelineError::OutOfOrder {
                stage,
                iteration: st.iteration,
                current: st.stage,
            });
        }
        Ok(Some(st.iteration))
    }

    fn already(&self, stage: Stage) -> StageReport {
        StageReport {
            iteration: self.manifest.state.iteration,
            stage,
            already_complete: true,
            message: String::new(),
        }
    }

    fn stage_err(stage: Stage, iteration: u32, message: impl Into<String>) -> PipelineError {
        PipelineError::Stage {
            stage,
            iteration,
            message: message.into(),
        }
    }

    fn complete(
        &mut self,
        iteration: u32,
        stage: Stage,
        files: &[PathBuf],
        next: IterationState,
    ) -> Result<(), PipelineError> {
        let rels: Vec<String> = files.iter().map(|p| self.rel(p)).collect();
        let files = hash_files(&self.dir, &rels)?;
        self.manifest.stages.push(StageRecord {
            iteration,
            stage,
            completed_at: now_rfc3339(),
            files,
        });
        self.manifest.state = next;
        self.manifest.save(&self.dir)?;
        Ok(())
    }

    fn load_questions(&self, iteration: u32) -> Result<Vec<Question>, PipelineError> {
        Ok(store::load_jsonl(&self.iter_dir(iteration).join(QUESTIONS_FILE))?.records)
    }

    fn teacher_solution(&self, q: &Question, role: Role) -> Result<SolutionRecord, String> {
        let lang = self.config.language;
        let (prompt, fault) = match role {
            Role::TeacherFaulty => {
                let kind = FaultKind::sample(&mut rng::substream(self.config.seed, rng::FAULT_CHOICE, &[&q.id]));
                (self.prompts.render_faulty(q, kind, lang), Some(kind))
            }
            _ => (self.prompts.render_correct(q, lang), None),
        };
        let prompt = prompt.map_err(|e| e.to_string())?;
        let params = self
            .config
            .decoding
            .params(self.config.decoding.teacher)
            .with_seed(rng::subseed(self.config.seed, rng::NUCLEUS, &["deliver", role.as_str(), &q.id]));
        let reply = self
            .gateway
            .complete(&self.config.teacher, &prompt, &params)
            .map_err(|e| e.to_string())?;
        let text = reply.into_iter().next().map(|c| c.text).unwrap_or_default();
        let rec = SolutionRecord::from_output(q.id.clone(), role, text, lang, fault);
        if rec.code.trim().is_empty() {
            return Err("reply contains no code".into());
        }
        Ok(rec)
    }

    /// Generates `role` solutions chunk by chunk, appending each chunk's
    /// results so an interrupted stage resumes where it stopped.
    fn generate_solutions(
        &self,
        todo: &[&Question],
        role: Role,
        iteration: u32,
        sol_path: &Path,
        fail_path: &Path,
    ) -> Result<(), PipelineError> {
        for chunk in todo.chunks(self.config.parallelism) {
            self.check_cancel(Stage::Deliver, iteration)?;
            let results = par_map(chunk, self.config.parallelism, |q| self.teacher_solution(q, role));
            let mut ok = Vec::new();
            let mut failed = Vec::new();
            for (q, r) in chunk.iter().zip(results) {
                match r {
                    Ok(s) => ok.push(s),
                    Err(reason) => {
                        log::warn!("deliver: {} solution for {} failed: {reason}", role, q.id);
                        failed.push(DeliverFailure {
                            question_id: q.id.clone(),
                            role,
                            reason,
                        })
                    }
                }
            }
            if !ok.is_empty() {
                store::append_jsonl(sol_path, &ok)?;
            }
            if !failed.is_empty() {
                store::append_jsonl(fail_path, &failed)?;
            }
        }
        Ok(())
    }

    /// Teacher solutions for every current question, the CSL/FCL split and
    /// the training export.
    pub fn deliver(&mut self) -> Result<StageReport, PipelineError> {
        let Some(i) = self.begin(Stage::Deliver)? else {
            return Ok(self.already(Stage::Deliver));
        };
        let stage = Stage::Deliver;
        let dir = self.iter_dir(i);
        let questions = self.load_questions(i)?;
        let order: HashMap<&str, usize> = questions.iter().enumerate().map(|(k, q)| (q.id.as_str(), k)).collect();
        let sol_path = dir.join(SOLUTIONS_FILE);
        let fail_path = dir.join(DELIVER_FAILURES_FILE);

        if !sol_path.exists() {
            // solutions of questions carried over from the previous iteration are reused
            let carried: Vec<SolutionRecord> = if i > 0 {
                store::load_jsonl_or_empty::<SolutionRecord>(&self.iter_dir(i - 1).join(SOLUTIONS_FILE))?
                    .into_iter()
                    .filter(|s| order.contains_key(s.question_id.as_str()))
                    .collect()
            } else {
                Vec::new()
            };
            store::write_jsonl(&sol_path, &carried)?;
        }

        let state = |role: Role| -> Result<(HashSet<String>, HashSet<String>), PipelineError> {
            let sols: Vec<SolutionRecord> = store::load_jsonl_or_empty(&sol_path)?;
            let fails: Vec<DeliverFailure> = store::load_jsonl_or_empty(&fail_path)?;
            Ok((
                sols.into_iter().filter(|s| s.role == role).map(|s| s.question_id).collect(),
                fails.into_iter().filter(|f| f.role == role).map(|f| f.question_id).collect(),
            ))
        };

        let (have, failed) = state(Role::TeacherCorrect)?;
        let todo: Vec<&Question> = questions
            .iter()
            .filter(|q| !have.contains(&q.id) && !failed.contains(&q.id))
            .collect();
        self.generate_solutions(&todo, Role::TeacherCorrect, i, &sol_path, &fail_path)?;

        let (correct, _) = state(Role::TeacherCorrect)?;
        let n = questions.len();
        let needed = (self.config.stage_success_threshold * n as f64 - 1e-9).ceil() as usize;
        if correct.len() < needed {
            // forget the failures so a rerun tries those questions again
            let fails: Vec<DeliverFailure> = store::load_jsonl_or_empty(&fail_path)?;
            let keep: Vec<DeliverFailure> = fails.into_iter().filter(|f| f.role != Role::TeacherCorrect).collect();
            store::write_jsonl(&fail_path, &keep)?;
            return Err(Self::stage_err(
                stage,
                i,
                format!("only {} of {n} questions got a correct solution (need {needed})", correct.len()),
            ));
        }

        let split_seed = rng::subseed(self.config.seed, rng::SPLIT, &[&i.to_string()]);
        let outcome = loop {
            let (faulty, faulty_failed) = state(Role::TeacherFaulty)?;
            let items: Vec<SplitItem> = questions
                .iter()
                .map(|q| SplitItem::new(q.id.clone(), correct.contains(&q.id), !faulty_failed.contains(&q.id)))
                .collect();
            let outcome = split_corpus(&items, self.config.split(), split_seed)
                .map_err(|e| Self::stage_err(stage, i, e.to_string()))?;
            let todo: Vec<&Question> = questions
                .iter()
                .filter(|q| outcome.split.fcl.contains(&q.id) && !faulty.contains(&q.id))
                .collect();
            if todo.is_empty() {
                break outcome;
            }
            self.generate_solutions(&todo, Role::TeacherFaulty, i, &sol_path, &fail_path)?;
        };

        canonicalize::<SolutionRecord>(&sol_path, &order, |s| (s.question_id.as_str(), role_rank(s.role)))?;
        let failures = canonicalize::<DeliverFailure>(&fail_path, &order, |f| (f.question_id.as_str(), role_rank(f.role)))?;
        let split_path = dir.join(SPLIT_FILE);
        store::write_json(&split_path, &outcome.split)?;
        if outcome.fcl_shortfall > 0 {
            log::warn!("deliver: {} FCL slots left unfilled", outcome.fcl_shortfall);
        }

        let corpus = Corpus {
            questions: questions.clone(),
            solutions: store::load_jsonl(&sol_path)?.records,
        };
        let train = dir.join(TRAIN_DIR);
        let export = export_training_sets(&outcome.split, &corpus, &self.config.training, &train)
            .map_err(|e| Self::stage_err(stage, i, e.to_string()))?;

        let mut files = vec![sol_path, split_path, export.csl_path, export.fcl_path, export.manifest_path];
        if fail_path.exists() {
            files.push(fail_path);
        }
        self.complete(
            i,
            stage,
            &files,
            IterationState {
                iteration: i,
                stage: Stage::Feedback,
            },
        )?;
        Ok(StageReport {
            iteration: i,
            stage,
            already_complete: false,
            message: format!(
                "{} correct, {} faulty solutions; {} failures; exported {} CSL / {} FCL records",
                correct.len(),
                corpus.solutions.iter().filter(|s| s.role == Role::TeacherFaulty).count(),
                failures,
                export.csl_records,
                export.fcl_records
            ),
        })
    }

    /// Student solutions for every current question, executed and scored.
    pub fn examine(&mut self) -> Result<StageReport, PipelineError> {
        let Some(i) = self.begin(Stage::Feedback)? else {
            return Ok(self.already(Stage::Feedback));
        };
        let stage = Stage::Feedback;
        let dir = self.iter_dir(i);
        let questions = self.load_questions(i)?;
        let order: HashMap<&str, usize> = questions.iter().enumerate().map(|(k, q)| (q.id.as_str(), k)).collect();
        let sandbox = build_sandbox(&self.config.sandbox, Some(self.config.language))?;
        sandbox
            .require(self.config.language)
            .map_err(|e| Self::stage_err(stage, i, e.to_string()))?;

        let fb_path = dir.join(feedback::FEEDBACK_FILE);
        let stu_path = dir.join(feedback::STUDENT_SOLUTIONS_FILE);
        let sc_path = dir.join(feedback::SCORER_OUTPUTS_FILE);
        let ex_path = dir.join(feedback::EXCLUDED_FILE);

        let mut done: HashSet<String> = store::load_jsonl_or_empty::<FeedbackRecord>(&fb_path)?
            .into_iter()
            .map(|f| f.question_id)
            .collect();
        done.extend(
            store::load_jsonl_or_empty::<Excluded>(&ex_path)?
                .into_iter()
                .map(|e| e.question_id),
        );
        let todo: Vec<Question> = questions.iter().filter(|q| !done.contains(&q.id)).cloned().collect();

        let greedy = self.config.decoding.params(DecodingMode::Greedy);
        let ctx = ExamineContext {
            gateway: &self.gateway,
            sandbox: &sandbox,
            prompts: &self.prompts,
            student: &self.config.student,
            scorer: &self.config.scorer,
            language: self.config.language,
            student_params: greedy.clone(),
            scorer_params: greedy,
            parallelism: self.config.parallelism,
        };
        for chunk in todo.chunks(self.config.parallelism) {
            self.check_cancel(stage, i)?;
            let mut sols = Vec::new();
            let mut scorer_out = Vec::new();
            let mut excluded = Vec::new();
            let mut records = Vec::new();
            for r in examine(&ctx, chunk) {
                match r {
                    Ok(e) => {
                        records.push(e.feedback.record());
                        sols.push(e.solution);
                        scorer_out.push(e.scorer);
                    }
                    Err(x) => {
                        log::warn!("examine: {} excluded at {}: {}", x.question_id, x.step, x.reason);
                        excluded.push(x);
                    }
                }
            }
            // feedback goes last: it marks questions as done
            store::append_jsonl(&stu_path, &sols)?;
            store::append_jsonl(&sc_path, &scorer_out)?;
            store::append_jsonl(&ex_path, &excluded)?;
            store::append_jsonl(&fb_path, &records)?;
        }

        let n_fb = canonicalize::<FeedbackRecord>(&fb_path, &order, |f| (f.question_id.as_str(), 0))?;
        canonicalize::<SolutionRecord>(&stu_path, &order, |s| (s.question_id.as_str(), 0))?;
        canonicalize::<ScorerOutput>(&sc_path, &order, |s| (s.question_id.as_str(), 0))?;
        let n_ex = canonicalize::<Excluded>(&ex_path, &order, |e| (e.question_id.as_str(), 0))?;
        if n_fb == 0 {
            // let a rerun try every question again
            store::write_jsonl::<Excluded>(&ex_path, &[])?;
            return Err(Self::stage_err(
                stage,
                i,
                format!("no feedback record could be produced ({n_ex} questions excluded)"),
            ));
        }
        let records: Vec<FeedbackRecord> = store::load_jsonl(&fb_path)?.records;
        let h = bucket_histogram(&records);
        self.complete(
            i,
            stage,
            &[fb_path, stu_path, sc_path, ex_path],
            IterationState {
                iteration: i,
                stage: Stage::Update,
            },
        )?;
        Ok(StageReport {
            iteration: i,
            stage,
            already_complete: false,
            message: format!(
                "{n_fb} feedback records ({} easy, {} medium, {} hard); {n_ex} excluded",
                h[0], h[1], h[2]
            ),
        })
    }

    /// New questions from the bucketed feedback, merged into the next
    /// iteration's corpus.
    pub fn update(&mut self) -> Result<StageReport, PipelineError> {
        let Some(i) = self.begin(Stage::Update)? else {
            return Ok(self.already(Stage::Update));
        };
        let stage = Stage::Update;
        self.check_cancel(stage, i)?;
        let dir = self.iter_dir(i);
        let questions = self.load_questions(i)?;
        let records: Vec<FeedbackRecord> = store::load_jsonl(&dir.join(feedback::FEEDBACK_FILE))?.records;
        let by_id: HashMap<&str, &Question> = questions.iter().map(|q| (q.id.as_str(), q)).collect();
        let parents = BucketedParents::new(
            records
                .iter()
                .filter_map(|r| by_id.get(r.question_id.as_str()).map(|q| (*q, r.bucket))),
        );
        let allocation =
            allocate(&self.config.ratio, parents.counts()).map_err(|e| Self::stage_err(stage, i, e.to_string()))?;
        let ctx = GenerationContext {
            gateway: &self.gateway,
            prompts: &self.prompts,
            teacher: &self.config.teacher,
            params: self.config.decoding.params(self.config.decoding.generation),
            seed: self.config.seed,
            iteration: i,
            dedup_threshold: self.config.dedup_threshold,
            ngram: self.config.ngram,
            parallelism: self.config.parallelism,
        };
        let existing: Vec<&str> = questions.iter().map(|q| q.text.as_str()).collect();
        let report_path = dir.join(curriculum::REPORT_FILE);
        let outcome = match ctx.generate(&allocation, &parents, &existing) {
            Ok(o) => o,
            Err(GenerationError::NothingGenerated { report }) => {
                store::write_json(&report_path, &report)?;
                return Err(Self::stage_err(stage, i, "no new question could be generated"));
            }
        };
        let new_path = dir.join(curriculum::NEW_QUESTIONS_FILE);
        store::write_jsonl(&new_path, &outcome.questions)?;
        store::write_json(&report_path, &outcome.report)?;
        let next_q = self.iter_dir(i + 1).join(QUESTIONS_FILE);
        let mut merged = questions;
        merged.extend(outcome.questions.iter().cloned());
        store::write_jsonl(&next_q, &merged)?;

        let next = if i + 1 >= self.config.iterations {
            IterationState {
                iteration: i + 1,
                stage: Stage::Done,
            }
        } else {
            IterationState {
                iteration: i + 1,
                stage: Stage::Deliver,
            }
        };
        self.complete(i, stage, &[new_path, report_path, next_q], next)?;
        if next.stage == Stage::Done {
            self.write_summary()?;
        }
        let r = &outcome.report;
        Ok(StageReport {
            iteration: i,
            stage,
            already_complete: false,
            message: format!(
                "{} new questions (allocated {}/{}/{}; {} near-duplicates rejected, shortfall {}); corpus now {}",
                r.generated,
                r.allocated.easy,
                r.allocated.medium,
                r.allocated.hard,
                r.dedup_rejected,
                r.shortfall,
                merged.len()
            ),
        })
    }

    /// Runs the remaining stages of every remaining iteration.
    pub fn run(&mut self) -> Result<Vec<StageReport>, PipelineError> {
        let mut reports = Vec::new();
        loop {
            let r = match self.manifest.state.stage {
                Stage::Deliver => self.deliver()?,
                Stage::Feedback => self.examine()?,
                Stage::Update => self.update()?,
                Stage::Done => break,
            };
            log::info!("{r}");
            reports.push(r);
        }
        self.write_summary()?;
        Ok(reports)
    }

    pub fn summary(&self) -> Result<RunSummary, PipelineError> {
        let mut per_iteration = Vec::new();
        let last = self.manifest.state.iteration.min(self.config.iterations.saturating_sub(1));
        for i in 0..=last {
            let dir = self.iter_dir(i);
            if !dir.join(QUESTIONS_FILE).exists() {
                break;
            }
            let questions = self.load_questions(i)?.len();
            let sols: Vec<SolutionRecord> = store::load_jsonl_or_empty(&dir.join(SOLUTIONS_FILE))?;
            let fails: Vec<DeliverFailure> = store::load_jsonl_or_empty(&dir.join(DELIVER_FAILURES_FILE))?;
            let split: Option<crate::corpus::DatasetSplit> = dir
                .join(SPLIT_FILE)
                .exists()
                .then(|| store::read_json(&dir.join(SPLIT_FILE)))
                .transpose()?;
            let fb: Vec<FeedbackRecord> = store::load_jsonl_or_empty(&dir.join(feedback::FEEDBACK_FILE))?;
            let ex: Vec<Excluded> = store::load_jsonl_or_empty(&dir.join(feedback::EXCLUDED_FILE))?;
            let report: Option<CurriculumReport> = dir
                .join(curriculum::REPORT_FILE)
                .exists()
                .then(|| store::read_json(&dir.join(curriculum::REPORT_FILE)))
                .transpose()?;
            let h = bucket_histogram(&fb);
            let (pass_rate, mean_score) = if fb.is_empty() {
                (None, None)
            } else {
                let n = fb.len() as f64;
                (
                    Some(fb.iter().filter(|f| f.exec_status.is_pass()).count() as f64 / n),
                    Some(fb.iter().map(|f| f.score as f64).sum::<f64>() / n),
                )
            };
            per_iteration.push(IterationSummary {
                iteration: i,
                questions,
                correct_solutions: sols.iter().filter(|s| s.role == Role::TeacherCorrect).count(),
                faulty_solutions: sols.iter().filter(|s| s.role == Role::TeacherFaulty).count(),
                deliver_failures: fails.len(),
                csl: split.as_ref().map_or(0, |s| s.csl.len()),
                fcl: split.as_ref().map_or(0, |s| s.fcl.len()),
                feedback: fb.len(),
                examine_excluded: ex.len(),
                buckets: Bucket::ALL.iter().map(|b| (b.to_string(), h[b.index()])).collect(),
                execution_pass_rate: pass_rate,
                mean_score,
                new_questions: report.as_ref().map_or(0, |r| r.generated),
                dedup_rejected: report.as_ref().map_or(0, |r| r.dedup_rejected),
                shortfall: report.as_ref().map_or(0, |r| r.shortfall),
            });
        }
        let corpus = self.load_questions(self.manifest.state.iteration)?;
        let mut by_origin = BTreeMap::new();
        for q in &corpus {
            *by_origin.entry(origin_name(q.origin).to_string()).or_insert(0) += 1;
        }
        Ok(RunSummary {
            run_name: self.config.run_name.clone(),
            seed: self.config.seed,
            iterations: self.config.iterations,
            state: self.manifest.state,
            per_iteration,
            corpus_size: corpus.len(),
            corpus_by_origin: by_origin,
        })
    }

    pub fn write_summary(&self) -> Result<PathBuf, PipelineError> {
        let path = self.dir.join(SUMMARY_FILE);
        store::write_json(&path, &self.summary()?)?;
        Ok(path)
    }

    /// Samples up to `annotation_size` (question, solution, score, analysis)
    /// records from every examined iteration.
    pub fn export_annotations(&self, out: &Path) -> Result<usize, PipelineError> {
        let mut items = Vec::new();
        for i in 0..=self.manifest.state.iteration {
            if !self.manifest.is_complete(i, Stage::Feedback) {
                continue;
            }
            let dir = self.iter_dir(i);
            let questions: HashMap<String, Question> =
                self.load_questions(i)?.into_iter().map(|q| (q.id.clone(), q)).collect();
            let sols: HashMap<String, SolutionRecord> =
                store::load_jsonl_or_empty::<SolutionRecord>(&dir.join(feedback::STUDENT_SOLUTIONS_FILE))?
                    .into_iter()
                    .map(|s| (s.question_id.clone(), s))
                    .collect();
            let scored: HashMap<String, ScorerOutput> =
                store::load_jsonl_or_empty::<ScorerOutput>(&dir.join(feedback::SCORER_OUTPUTS_FILE))?
                    .into_iter()
                    .map(|s| (s.question_id.clone(), s))
                    .collect();
            for f in store::load_jsonl_or_empty::<FeedbackRecord>(&dir.join(feedback::FEEDBACK_FILE))? {
                let (Some(q), Some(s), Some(o)) =
                    (questions.get(&f.question_id), sols.get(&f.question_id), scored.get(&f.question_id))
                else {
                    continue;
                };
                let analysis = parse_score(&o.raw_output).map(|r| r.analysis_text).unwrap_or_default();
                items.push(ScoringAnnotation {
                    question: q.text.clone(),
                    solution: s.raw_text.clone(),
                    score: f.score,
                    analysis,
                });
            }
        }
        let picked = build_annotations(items, self.config.annotation_size, self.config.seed);
        store::write_jsonl(out, &picked)?;
        Ok(picked.len())
    }
}

/// Stage actions that `run` would take next, without touching the directory.
pub fn plan(dir: &Path) -> Result<Vec<String>, PipelineError> {
    if !dir.join(MANIFEST_FILE).exists() {
        return Err(PipelineError::NotARun(dir.to_path_buf()));
    }
    let manifest = Manifest::load(dir)?;
    let config = RunConfig::load(&dir.join(CONFIG_FILE))?;
    let mut lines = Vec::new();
    let st = manifest.state;
    if st.stage == Stage::Done {
        lines.push("run is complete; nothing to do".to_string());
        return Ok(lines);
    }
    let current = store::load_jsonl::<Question>(&dir.join(iter_dir_name(st.iteration)).join(QUESTIONS_FILE))
        .map(|l| l.records.len())
        .ok();
    let (fcl_den, csl_den) = (config.split_ratio[1], config.split_ratio[0]);
    for i in st.iteration..config.iterations {
        let count = if i == st.iteration {
            current.map_or("the".to_string(), |n| n.to_string())
        } else {
            "the".to_string()
        };
        for stage in [Stage::Deliver, Stage::Feedback, Stage::Update] {
            if i == st.iteration && stage < st.stage {
                continue;
            }
            let what = match stage {
                Stage::Deliver => format!(
                    "teacher `{}` writes correct solutions for {count} questions, faulty ones for the FCL share ({csl_den}:{fcl_den} split); export training sets",
                    config.teacher
                ),
                Stage::Feedback => format!(
                    "student `{}` answers {count} questions; sandbox runs {}; scorer `{}` rates each",
                    config.student, config.language, config.scorer
                ),
                _ => format!(
                    "teacher `{}` generates up to {} new questions at {}:{}:{} (easy:medium:hard)",
                    config.teacher, config.ratio.total_new, config.ratio.easy, config.ratio.medium, config.ratio.hard
                ),
            };
            lines.push(format!("iteration {i} {stage}: {what}"));
        }
    }
    lines.push(format!("write {SUMMARY_FILE}"));
    Ok(lines)
}

/// Content hashes of every run artifact except the manifest, the request
/// journal and the lock, whose contents carry timestamps or process ids.
pub fn artifact_hashes(dir: &Path) -> Result<BTreeMap<String, String>, PipelineError> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<String, String>) -> Result<(), PipelineError> {
        let mut entries: Vec<_> = std::fs::read_dir(dir)
            .map_err(io_err(dir))?
            .collect::<Result<_, _>>()
            .map_err(io_err(dir))?;
        entries.sort_by_key(|e| e.file_name());
        for e in entries {
            let path = e.path();
            if path.is_dir() {
                walk(root, &path, out)?;
                continue;
            }
            let rel = path
                .strip_prefix(root)
                .unwrap_or(&path)
                .components()
                .map(|c| c.as_os_str().to_string_lossy())
                .collect::<Vec<_>>()
                .join("/");
            if [MANIFEST_FILE, JOURNAL_FILE, LOCK_FILE].contains(&rel.as_str()) {
                continue;
            }
            out.insert(rel, store::sha256_file(&path)?);
        }
        Ok(())
    }
    let mut out = BTreeMap::new();
    walk(dir, dir, &mut out)?;
    Ok(out)
}

/// Records per CSL/FCL training file of an iteration, for reporting.
pub fn export_counts(iter_dir: &Path) -> Result<(usize, usize), PipelineError> {
    let train = iter_dir.join(TRAIN_DIR);
    let csl: Vec<objectives::CslRecord> = store::load_jsonl_or_empty(&train.join(objectives::CSL_FILE))?;
    let fcl: Vec<objectives::FclRecord> = store::load_jsonl_or_empty(&train.join(objectives::FCL_FILE))?;
    Ok((csl.len(), fcl.len()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seeds(dir: &Path, n: usize) -> PathBuf {
        let topics = [
            "reverse a linked list in place",
            "count vowels in a sentence",
            "merge two sorted arrays",
            "check whether a number is prime",
            "compute the nth fibonacci number",
            "find the longest common prefix of strings",
            "rotate a matrix by ninety degrees",
            "validate balanced parentheses",
            "convert roman numerals to integers",
            "group anagrams together",
            "compute the median of two arrays",
            "flatten a nested list",
        ];
        let path = dir.join("seeds.jsonl");
        let lines: Vec<String> = (0..n)
            .map(|k| {
                serde_json::json!({
                    "id": format!("q{k:02}"),
                    "text": format!("Write a function to {} (variant {k}, input size {}).", topics[k % topics.len()], k * 7 + 3)
                })
                .to_string()
            })
            .collect();
        std::fs::write(&path, lines.join("\n") + "\n").unwrap();
        path
    }

    fn config(import: PathBuf, iterations: u32) -> RunConfig {
        let mut c = RunConfig::demo("t", import);
        c.iterations = iterations;
        c.ratio.total_new = 6;
        c.parallelism = 4;
        c
    }

    #[test]
    fn import_defaults_ids_and_rejects_duplicate_ids() {
        let d = tempfile::tempdir().unwrap();
        let p = d.path().join("in.jsonl");
        std::fs::write(&p, "{\"question\": \"add two numbers together\"}\n\n{\"id\": \"b\", \"instruction\": \"sort a list\"}\n").unwrap();
        let qs = read_import(&p).unwrap();
        assert_eq!(qs[0].id, "seed-00001");
        assert_eq!(qs[1].id, "b");
        std::fs::write(&p, "{\"id\": \"a\", \"text\": \"x\"}\n{\"id\": \"a\", \"text\": \"y\"}\n").unwrap();
        assert!(matches!(read_import(&p), Err(PipelineError::Import { line: 2, .. })));
    }

    #[test]
    fn init_dedups_and_refuses_reinit() {
        let d = tempfile::tempdir().unwrap();
        let import = seeds(d.path(), 10);
        let mut text = std::fs::read_to_string(&import).unwrap();
        text.push_str("{\"id\": \"dup\", \"text\": \"Write a function to reverse a linked list in place (variant 0, input size 3).\"}\n");
        std::fs::write(&import, text).unwrap();
        let run = d.path().join("run");
        let p = Pipeline::init(&config(import.clone(), 1), &run).unwrap();
        let report: ImportReport = store::read_json(&run.join(IMPORT_REPORT_FILE)).unwrap();
        assert_eq!((report.records, report.kept, report.rejected.clone()), (11, 10, vec!["dup".to_string()]));
        drop(p);
        assert!(matches!(
            Pipeline::init(&config(import, 1), &run),
            Err(PipelineError::AlreadyInitialised(_))
        ));
    }

    #[test]
    fn lock_contention_maps_to_exit_4() {
        let d = tempfile::tempdir().unwrap();
        let run = d.path().join("run");
        let _p = Pipeline::init(&config(seeds(d.path(), 4), 1), &run).unwrap();
        let e = Pipeline::open(&run, OpenOptions::default()).err().unwrap();
        assert_eq!(e.exit_code(), 4);
    }

    #[test]
    fn deliver_splits_and_exports() {
        let d = tempfile::tempdir().unwrap();
        let run = d.path().join("run");
        let mut p = Pipeline::init(&config(seeds(d.path(), 10), 1), &run).unwrap();
        assert!(matches!(p.examine(), Err(PipelineError::OutOfOrder { .. })));
        let r = p.deliver().unwrap();
        assert!(!r.already_complete);
        let sols: Vec<SolutionRecord> = store::load_jsonl(&run.join("iter_0/solutions.jsonl")).unwrap().records;
        assert_eq!(sols.iter().filter(|s| s.role == Role::TeacherCorrect).count(), 10);
        assert_eq!(sols.iter().filter(|s| s.role == Role::TeacherFaulty).count(), 2);
        assert_eq!(export_counts(&run.join("iter_0")).unwrap(), (8, 2));
        assert!(p.deliver().unwrap().already_complete);
        assert_eq!(p.manifest().state.stage, Stage::Feedback);
    }

    #[test]
    fn tampering_is_detected_on_open() {
        let d = tempfile::tempdir().unwrap();
        let run = d.path().join("run");
        let mut p = Pipeline::init(&config(seeds(d.path(), 6), 1), &run).unwrap();
        p.deliver().unwrap();
        drop(p);
        let f = run.join("iter_0/split.json");
        let mut s = std::fs::read_to_string(&f).unwrap();
        s.push(' ');
        std::fs::write(&f, s).unwrap();
        let e = Pipeline::open(&run, OpenOptions::default()).err().unwrap();
        assert!(matches!(e, PipelineError::Integrity(_)));
        assert_eq!(e.exit_code(), 3);
    }

    #[test]
    fn teacher_failure_below_threshold_is_resumable() {
        let d = tempfile::tempdir().unwrap();
        let run = d.path().join("run");
        let cfg = config(seeds(d.path(), 10), 1);
        let broken: Arc<dyn Backend> = Arc::new(crate::gateway::MockBackend::new("teacher", |call| {
            if call.prompt.user.contains("variant 1,") || call.prompt.user.contains("variant 2,") {
                Err(crate::gateway::BackendError::Fatal("refused".into()))
            } else {
                Ok("```python\nprint(1)\n```".into())
            }
        }));
        let mut p = Pipeline::init_with(
            &cfg,
            &run,
            OpenOptions {
                backends: vec![("teacher".into(), broken)],
                cancel: None,
            },
        )
        .unwrap();
        let e = p.deliver().unwrap_err();
        assert_eq!(e.exit_code(), 3);
        assert_eq!(p.manifest().state.stage, Stage::Deliver);
        drop(p);
        // a working teacher completes the stage, reusing the eight solutions
        let mut p = Pipeline::open(&run, OpenOptions::default()).unwrap();
        p.deliver().unwrap();
        let fails: Vec<DeliverFailure> = store::load_jsonl_or_empty(&run.join("iter_0").join(DELIVER_FAILURES_FILE)).unwrap();
        assert!(fails.iter().all(|f| f.role != Role::TeacherCorrect));
    }

    #[test]
    fn plan_writes_nothing() {
        let d = tempfile::tempdir().unwrap();
        let run = d.path().join("run");
        drop(Pipeline::init(&config(seeds(d.path(), 4), 2), &run).unwrap());
        let before = artifact_hashes(&run).unwrap();
        let lines = plan(&run).unwrap();
        assert_eq!(lines.len(), 7);
        assert_eq!(artifact_hashes(&run).unwrap(), before);
    }

    #[test]
    fn cancellation_then_resume_matches_uninterrupted() {
        let d = tempfile::tempdir().unwrap();
        let import = seeds(d.path(), 12);
        let cfg = config(import, 2);

        let a = d.path().join("a");
        Pipeline::init(&cfg, &a).unwrap().run().unwrap();

        let b = d.path().join("b");
        let cancel = Arc::new(AtomicBool::new(false));
        let flag = cancel.clone();
        let student: Arc<dyn Backend> = Arc::new(persona_backend("student", Persona::Student).on_call(move |n| {
            if n == 5 {
                flag.store(true, Ordering::SeqCst);
            }
        }));
        let mut p = Pipeline::init_with(
            &cfg,
            &b,
            OpenOptions {
                backends: vec![("student".into(), student)],
                cancel: Some(cancel),
            },
        )
        .unwrap();
        let e = p.run().unwrap_err();
        assert!(matches!(e, PipelineError::Interrupted { stage: Stage::Feedback, iteration: 0 }));
        drop(p);
        let fb: Vec<FeedbackRecord> = store::load_jsonl(&b.join("iter_0/feedback.jsonl")).unwrap().records;
        assert_eq!(fb.len(), 8);
        Pipeline::open(&b, OpenOptions::default()).unwrap().run().unwrap();
        assert_eq!(artifact_hashes(&a).unwrap(), artifact_hashes(&b).unwrap());
        let m = Manifest::load(&b).unwrap();
        assert_eq!(m.stages.len(), 6);
        assert_eq!(m.state.stage, Stage::Done);
    }
}
