//! Line-oriented `key = value` configuration. Flags override file values,
//! which override defaults; a resolved config serializes back to a manifest
//! that reproduces the run on its own.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use unfold_core::cascade::PoolingMode;
use unfold_core::grid::{AssignMode, Rect};
use unfold_core::prompting::client::DEFAULT_CREDENTIAL_ENV;
use unfold_core::sampler::{DEFAULT_CASCADE_LEVELS, DEFAULT_GUIDANCE, DEFAULT_STEPS};
use unfold_core::synth::dataset::{EVAL_SUBJECTS, TRAIN_SUBJECTS};
use unfold_core::synth::BackgroundClass;

use crate::error::CliError;

pub type ConfigMap = BTreeMap<String, String>;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    Generate,
    Edit,
    Train,
    Ablate,
    VizAttn,
}

impl Command {
    pub const ALL: [Command; 5] = [
        Command::Generate,
        Command::Edit,
        Command::Train,
        Command::Ablate,
        Command::VizAttn,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Command::Generate => "generate",
            Command::Edit => "edit",
            Command::Train => "train",
            Command::Ablate => "ablate",
            Command::VizAttn => "viz-attn",
        }
    }

    /// Keys that can be given as flags for this command.
    pub fn keys(self) -> Vec<&'static KeyInfo> {
        KEYS.iter()
            .filter(|k| match k.group {
                Group::Common => true,
                Group::Sampling => matches!(self, Command::Generate | Command::Edit | Command::VizAttn),
                Group::Edit => self == Command::Edit,
                Group::Train => self == Command::Train,
                Group::Eval => self == Command::Ablate,
                Group::EvalSampling => matches!(
                    self,
                    Command::Generate | Command::Edit | Command::VizAttn | Command::Ablate
                ),
                Group::Viz => self == Command::VizAttn,
            })
            .collect()
    }
}

impl FromStr for Command {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, CliError> {
        Command::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| CliError::Usage(format!("unknown command `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Group {
    Common,
    Sampling,
    EvalSampling,
    Edit,
    Train,
    Eval,
    Viz,
}

pub struct KeyInfo {
    pub key: &'static str,
    pub group: Group,
    pub help: &'static str,
}

const fn key(key: &'static str, group: Group, help: &'static str) -> KeyInfo {
    KeyInfo { key, group, help }
}

pub const KEYS: &[KeyInfo] = &[
    key("output", Group::Common, "output directory [out]"),
    key("checkpoint", Group::Common, "toy denoiser checkpoint"),
    key(
        "model_seed",
        Group::Common,
        "initialization seed when no checkpoint is given [0]",
    ),
    key("threads", Group::Common, "worker threads, 0 = all cores [0]"),
    key("grid", Group::Sampling, "mosaic grid RxC [3x3]"),
    key("target", Group::Sampling, "target panel row,col [0,0]"),
    key("references", Group::Sampling, "comma-separated reference PNG paths"),
    key(
        "subject_seed",
        Group::Sampling,
        "render references of this procedural subject [0]",
    ),
    key(
        "views",
        Group::Sampling,
        "reference views rendered for subject_seed [1]",
    ),
    key(
        "assign",
        Group::Sampling,
        "reference assignment: cycle | random [cycle]",
    ),
    key("assign_seed", Group::Sampling, "seed for random assignment [0]"),
    key("seed", Group::Sampling, "sampler noise seed, or auto [0]"),
    key(
        "pooling",
        Group::Sampling,
        "cascade pooling: from-fine | recursive [from-fine]",
    ),
    key(
        "prompt",
        Group::Sampling,
        "prompt mode: template | endpoint | structured [template]",
    ),
    key(
        "background",
        Group::Sampling,
        "edit background: plain | gradient | noise | checker [plain]",
    ),
    key("pose", Group::Sampling, "ask for a new pose [false]"),
    key(
        "subject_text",
        Group::Sampling,
        "subject description for template prompts",
    ),
    key("edit_text", Group::Sampling, "edit description for the target panel"),
    key(
        "endpoint_url",
        Group::Sampling,
        "multimodal model endpoint for endpoint prompts",
    ),
    key(
        "credential_env",
        Group::Sampling,
        "environment variable holding the endpoint credential",
    ),
    key("steps", Group::EvalSampling, "sampling steps T [28]"),
    key("guidance", Group::EvalSampling, "guidance scale g [7]"),
    key("cascade", Group::EvalSampling, "cascade levels, 1 = off [3]"),
    key(
        "segment",
        Group::Sampling,
        "white-fill reference backgrounds from alpha [true]",
    ),
    key("scene", Group::Edit, "scene panel PNG to edit"),
    key(
        "rect",
        Group::Edit,
        "edit rectangle top,left,height,width within the panel",
    ),
    key("profile", Group::Train, "training profile: standard | smoke [standard]"),
    key("train_steps", Group::Train, "total optimizer steps [2000, smoke 500]"),
    key("batch_size", Group::Train, "mosaics per step [8]"),
    key("learning_rate", Group::Train, "peak learning rate [0.001]"),
    key("warmup_steps", Group::Train, "linear warmup steps [100]"),
    key("train_seed", Group::Train, "batch sampling seed [0]"),
    key("log_every", Group::Train, "loss log interval [10]"),
    key("checkpoint_every", Group::Train, "checkpoint interval [250]"),
    key("resume", Group::Train, "continue from this checkpoint"),
    key(
        "corpus",
        Group::Train,
        "training corpus directory; generated from seeds if absent",
    ),
    key("train_subjects", Group::Train, "procedural training subjects [512]"),
    key("grids", Group::Eval, "grids to sweep [1x2,2x2,3x3]"),
    key("cascade_axis", Group::Eval, "cascade settings to sweep [off,on]"),
    key("segment_axis", Group::Eval, "segment settings to sweep [off,on]"),
    key(
        "prompt_axis",
        Group::Eval,
        "prompt settings to sweep [plain,structured]",
    ),
    key("eval_subjects", Group::Eval, "held-out subjects [64]"),
    key("eval_seeds", Group::Eval, "sampler seeds per subject [0,1,2,3]"),
    key(
        "eval_corpus",
        Group::Eval,
        "evaluation corpus directory; generated from seeds if absent",
    ),
    key("layer", Group::Viz, "transformer layer to capture [last]"),
    key("viz_step", Group::Viz, "sampling step to capture [steps/2]"),
];

pub fn is_known_key(k: &str) -> bool {
    k == "command" || KEYS.iter().any(|i| i.key == k)
}

/// Parses `key = value` lines; `#` starts a comment line.
pub fn parse_config_text(text: &str) -> Result<ConfigMap, CliError> {
    let mut map = ConfigMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("config line {}: expected key = value", i + 1)))?;
        let k = k.trim();
        if !is_known_key(k) {
            return Err(CliError::Usage(format!("config line {}: unknown key `{k}`", i + 1)));
        }
        map.insert(k.to_owned(), v.trim().to_owned());
    }
    Ok(map)
}

pub fn read_config_file(path: &Path) -> Result<ConfigMap, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
    parse_config_text(&text)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PromptMode {
    Template,
    Endpoint,
    Structured,
}

impl PromptMode {
    pub fn name(self) -> &'static str {
        match self {
            PromptMode::Template => "template",
            PromptMode::Endpoint => "endpoint",
            PromptMode::Structured => "structured",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ReferenceSource {
    Paths(Vec<PathBuf>),
    SubjectSeed(u64),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TrainProfile {
    Standard,
    Smoke,
}

impl TrainProfile {
    pub fn name(self) -> &'static str {
        match self {
            TrainProfile::Standard => "standard",
            TrainProfile::Smoke => "smoke",
        }
    }

    pub fn default_steps(self) -> u64 {
        match self {
            TrainProfile::Standard => 2000,
            TrainProfile::Smoke => 500,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainSettings {
    pub profile: TrainProfile,
    pub steps: u64,
    pub batch_size: usize,
    pub learning_rate: f32,
    pub warmup_steps: u64,
    pub seed: u64,
    pub log_every: u64,
    pub checkpoint_every: u64,
    pub resume: Option<PathBuf>,
    pub corpus: Option<PathBuf>,
    pub subjects: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblateSettings {
    pub grids: Vec<(usize, usize)>,
    pub cascade: Vec<bool>,
    pub segment: Vec<bool>,
    pub structured: Vec<bool>,
    pub subjects: usize,
    pub seeds: Vec<u64>,
    pub corpus: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub command: Command,
    pub output: PathBuf,
    pub checkpoint: Option<PathBuf>,
    pub model_seed: u64,
    pub threads: usize,
    pub grid: (usize, usize),
    pub target: (usize, usize),
    pub references: ReferenceSource,
    pub views: usize,
    pub assign: AssignMode,
    pub assign_seed: u64,
    pub steps: usize,
    pub guidance: f32,
    pub seed: u64,
    pub cascade: usize,
    pub pooling: PoolingMode,
    pub segment: bool,
    pub prompt: PromptMode,
    pub background: BackgroundClass,
    pub pose: bool,
    pub subject_text: Option<String>,
    pub edit_text: Option<String>,
    pub endpoint_url: Option<String>,
    pub credential_env: String,
    pub scene: Option<PathBuf>,
    pub rect: Option<Rect>,
    pub train: TrainSettings,
    pub ablate: AblateSettings,
    pub layer: Option<usize>,
    pub viz_step: usize,
}

fn usage(key: &str, value: &str, what: &str) -> CliError {
    CliError::Usage(format!("{key} = `{value}`: expected {what}"))
}

fn num<T: FromStr>(key: &str, v: &str) -> Result<T, CliError> {
    v.trim().parse().map_err(|_| usage(key, v, "a number"))
}

pub fn parse_bool(key: &str, v: &str) -> Result<bool, CliError> {
    match v.trim().to_ascii_lowercase().as_str() {
        "true" | "on" | "yes" | "1" => Ok(true),
        "false" | "off" | "no" | "0" => Ok(false),
        _ => Err(usage(key, v, "true/false or on/off")),
    }
}

pub fn parse_grid(key: &str, v: &str) -> Result<(usize, usize), CliError> {
    let (r, c) = v.trim().split_once(['x', 'X']).ok_or_else(|| usage(key, v, "RxC"))?;
    let g = (num::<usize>(key, r)?, num::<usize>(key, c)?);
    if g.0 == 0 || g.1 == 0 || g.0 * g.1 < 2 {
        return Err(usage(key, v, "a grid with at least two panels"));
    }
    Ok(g)
}

fn parse_list<T>(key: &str, v: &str, item: impl Fn(&str, &str) -> Result<T, CliError>) -> Result<Vec<T>, CliError> {
    let items: Vec<T> = v
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| item(key, s))
        .collect::<Result<_, _>>()?;
    if items.is_empty() {
        return Err(usage(key, v, "a non-empty list"));
    }
    Ok(items)
}

fn parse_pair(key: &str, v: &str) -> Result<(usize, usize), CliError> {
    let parts = parse_list(key, v, num::<usize>)?;
    match parts[..] {
        [a, b] => Ok((a, b)),
        _ => Err(usage(key, v, "row,col")),
    }
}

fn parse_rect(key: &str, v: &str) -> Result<Rect, CliError> {
    let parts = parse_list(key, v, num::<usize>)?;
    match parts[..] {
        [t, l, h, w] => Ok(Rect::new(t, l, h, w)),
        _ => Err(usage(key, v, "top,left,height,width")),
    }
}

fn parse_background(key: &str, v: &str) -> Result<BackgroundClass, CliError> {
    v.trim()
        .parse()
        .map_err(|_| usage(key, v, "plain, gradient, noise or checker"))
}

fn parse_prompt(key: &str, v: &str) -> Result<PromptMode, CliError> {
    match v.trim() {
        "template" => Ok(PromptMode::Template),
        "endpoint" => Ok(PromptMode::Endpoint),
        "structured" => Ok(PromptMode::Structured),
        _ => Err(usage(key, v, "template, endpoint or structured")),
    }
}

fn parse_prompt_axis(key: &str, v: &str) -> Result<bool, CliError> {
    match v.trim() {
        "structured" => Ok(true),
        "plain" => Ok(false),
        _ => Err(usage(key, v, "plain or structured")),
    }
}

fn parse_assign(key: &str, v: &str) -> Result<AssignMode, CliError> {
    match v.trim() {
        "cycle" => Ok(AssignMode::Cycle),
        "random" => Ok(AssignMode::Random),
        _ => Err(usage(key, v, "cycle or random")),
    }
}

fn parse_pooling(key: &str, v: &str) -> Result<PoolingMode, CliError> {
    match v.trim() {
        "from-fine" => Ok(PoolingMode::FromFine),
        "recursive" => Ok(PoolingMode::Recursive),
        _ => Err(usage(key, v, "from-fine or recursive")),
    }
}

fn resolve_seed(key: &str, v: &str) -> Result<u64, CliError> {
    if v.trim() == "auto" {
        let nanos = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_nanos() as u64)
            .unwrap_or(0);
        return Ok(nanos ^ (std::process::id() as u64) << 32);
    }
    num(key, v)
}

fn opt_text(v: Option<&String>) -> Option<String> {
    v.map(|s| s.trim().to_owned()).filter(|s| !s.is_empty())
}

impl RunConfig {
    /// Merges `file` under `flags` and fills defaults.
    pub fn resolve(command: Command, file: &ConfigMap, flags: &ConfigMap) -> Result<Self, CliError> {
        let mut m = file.clone();
        for (k, v) in flags {
            if !is_known_key(k) {
                return Err(CliError::Usage(format!("unknown option `{k}`")));
            }
            m.insert(k.clone(), v.clone());
        }
        if let Some(c) = m.get("command") {
            let c: Command = c.parse()?;
            if c != command {
                return Err(CliError::Usage(format!(
                    "config is for `{}`, not `{}`",
                    c.name(),
                    command.name()
                )));
            }
        }
        let get = |k: &str| m.get(k).map(String::as_str);
        fn or<T>(
            m: &ConfigMap,
            k: &str,
            default: T,
            parse: impl Fn(&str, &str) -> Result<T, CliError>,
        ) -> Result<T, CliError> {
            m.get(k).map_or(Ok(default), |v| parse(k, v))
        }
        let path = |k: &str| opt_text(m.get(k)).map(PathBuf::from);

        let references = match (opt_text(m.get("references")), get("subject_seed")) {
            (Some(_), Some(_)) => {
                return Err(CliError::Usage(
                    "references and subject_seed are mutually exclusive".into(),
                ))
            }
            (Some(list), None) => ReferenceSource::Paths(parse_list("references", &list, |_, s| Ok(PathBuf::from(s)))?),
            (None, Some(s)) => ReferenceSource::SubjectSeed(num("subject_seed", s)?),
            (None, None) => ReferenceSource::SubjectSeed(0),
        };
        let steps = or(&m, "steps", DEFAULT_STEPS, num)?;
        let profile = or(&m, "profile", TrainProfile::Standard, |k, v| match v.trim() {
            "standard" => Ok(TrainProfile::Standard),
            "smoke" => Ok(TrainProfile::Smoke),
            _ => Err(usage(k, v, "standard or smoke")),
        })?;

        let cfg = RunConfig {
            command,
            output: path("output").unwrap_or_else(|| PathBuf::from("out")),
            checkpoint: path("checkpoint"),
            model_seed: or(&m, "model_seed", 0, num)?,
            threads: or(&m, "threads", 0, num)?,
            grid: or(&m, "grid", (3, 3), parse_grid)?,
            target: or(&m, "target", (0, 0), parse_pair)?,
            references,
            views: or(&m, "views", 1, num)?,
            assign: or(&m, "assign", AssignMode::Cycle, parse_assign)?,
            assign_seed: or(&m, "assign_seed", 0, num)?,
            steps,
            guidance: or(&m, "guidance", DEFAULT_GUIDANCE, num)?,
            seed: or(&m, "seed", 0, resolve_seed)?,
            cascade: or(&m, "cascade", DEFAULT_CASCADE_LEVELS, num)?,
            pooling: or(&m, "pooling", PoolingMode::FromFine, parse_pooling)?,
            segment: or(&m, "segment", true, parse_bool)?,
            prompt: or(&m, "prompt", PromptMode::Template, parse_prompt)?,
            background: or(&m, "background", BackgroundClass::Plain, parse_background)?,
            pose: or(&m, "pose", false, parse_bool)?,
            subject_text: opt_text(m.get("subject_text")),
            edit_text: opt_text(m.get("edit_text")),
            endpoint_url: opt_text(m.get("endpoint_url")),
            credential_env: opt_text(m.get("credential_env")).unwrap_or_else(|| DEFAULT_CREDENTIAL_ENV.to_owned()),
            scene: path("scene"),
            rect: m.get("rect").map(|v| parse_rect("rect", v)).transpose()?,
            train: TrainSettings {
                profile,
                steps: or(&m, "train_steps", profile.default_steps(), num)?,
                batch_size: or(&m, "batch_size", 8, num)?,
                learning_rate: or(&m, "learning_rate", 1e-3, num)?,
                warmup_steps: or(&m, "warmup_steps", 100, num)?,
                seed: or(&m, "train_seed", 0, num)?,
                log_every: or(&m, "log_every", 10, num)?,
                checkpoint_every: or(&m, "checkpoint_every", 250, num)?,
                resume: path("resume"),
                corpus: path("corpus"),
                subjects: or(&m, "train_subjects", TRAIN_SUBJECTS, num)?,
            },
            ablate: AblateSettings {
                grids: or(&m, "grids", vec![(1, 2), (2, 2), (3, 3)], |k, v| {
                    parse_list(k, v, parse_grid)
                })?,
                cascade: or(&m, "cascade_axis", vec![false, true], |k, v| {
                    parse_list(k, v, parse_bool)
                })?,
                segment: or(&m, "segment_axis", vec![false, true], |k, v| {
                    parse_list(k, v, parse_bool)
                })?,
                structured: or(&m, "prompt_axis", vec![false, true], |k, v| {
                    parse_list(k, v, parse_prompt_axis)
                })?,
                subjects: or(&m, "eval_subjects", EVAL_SUBJECTS, num)?,
                seeds: or(&m, "eval_seeds", vec![0, 1, 2, 3], |k, v| parse_list(k, v, num::<u64>))?,
                corpus: path("eval_corpus"),
            },
            layer: m.get("layer").map(|v| num("layer", v)).transpose()?,
            viz_step: or(&m, "viz_step", steps / 2, num)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |msg: String| Err(CliError::Usage(msg));
        if self.target.0 >= self.grid.0 || self.target.1 >= self.grid.1 {
            return bad(format!(
                "target {},{} outside {}x{} grid",
                self.target.0, self.target.1, self.grid.0, self.grid.1
            ));
        }
        if self.steps < 2 {
            return bad(format!("steps must be >= 2, got {}", self.steps));
        }
        if !(self.guidance >= 0.0 && self.guidance.is_finite()) {
            return bad(format!("guidance must be >= 0, got {}", self.guidance));
        }
        if self.cascade == 0 {
            return bad("cascade must be >= 1".into());
        }
        if self.views == 0 {
            return bad("views must be >= 1".into());
        }
        if self.viz_step >= self.steps {
            return bad(format!("viz_step {} must be below steps {}", self.viz_step, self.steps));
        }
        let t = &self.train;
        if t.batch_size == 0 || t.log_every == 0 || t.checkpoint_every == 0 || t.subjects == 0 {
            return bad("batch_size, log_every, checkpoint_every and train_subjects must be positive".into());
        }
        if !(t.learning_rate > 0.0 && t.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be positive, got {}", t.learning_rate));
        }
        if self.ablate.subjects == 0 {
            return bad("eval_subjects must be positive".into());
        }
        if let Some(r) = self.rect {
            if r.area() == 0 {
                return bad("rect has zero area".into());
            }
        }
        Ok(())
    }

    /// Every setting as `key = value` lines, sufficient to repeat the run.
    pub fn to_manifest(&self) -> String {
        let mut out = String::new();
        let mut put = |k: &str, v: &dyn fmt::Display| out.push_str(&format!("{k} = {v}\n"));
        let b = |v: bool| if v { "true" } else { "false" };
        let grid = |g: (usize, usize)| format!("{}x{}", g.0, g.1);
        let join = |items: Vec<String>| items.join(",");
        let p = |p: &Path| p.display().to_string();

        put("command", &self.command.name());
        put("output", &p(&self.output));
        if let Some(c) = &self.checkpoint {
            put("checkpoint", &p(c));
        }
        put("model_seed", &self.model_seed);
        put("threads", &self.threads);
        put("grid", &grid(self.grid));
        put("target", &format!("{},{}", self.target.0, self.target.1));
        match &self.references {
            ReferenceSource::Paths(ps) => put("references", &join(ps.iter().map(|x| p(x)).collect())),
            ReferenceSource::SubjectSeed(s) => put("subject_seed", s),
        }
        put("views", &self.views);
        put("assign", &self.assign);
        put("assign_seed", &self.assign_seed);
        put("steps", &self.steps);
        put("guidance", &self.guidance);
        put("seed", &self.seed);
        put("cascade", &self.cascade);
        put(
            "pooling",
            &match self.pooling {
                PoolingMode::FromFine => "from-fine",
                PoolingMode::Recursive => "recursive",
            },
        );
        put("segment", &b(self.segment));
        put("prompt", &self.prompt.name());
        put("background", &self.background);
        put("pose", &b(self.pose));
        if let Some(t) = &self.subject_text {
            put("subject_text", t);
        }
        if let Some(t) = &self.edit_text {
            put("edit_text", t);
        }
        if let Some(u) = &self.endpoint_url {
            put("endpoint_url", u);
        }
        put("credential_env", &self.credential_env);
        if let Some(s) = &self.scene {
            put("scene", &p(s));
        }
        if let Some(r) = self.rect {
            put("rect", &format!("{},{},{},{}", r.top, r.left, r.height, r.width));
        }
        let t = &self.train;
        put("profile", &t.profile.name());
        put("train_steps", &t.steps);
        put("batch_size", &t.batch_size);
        put("learning_rate", &t.learning_rate);
        put("warmup_steps", &t.warmup_steps);
        put("train_seed", &t.seed);
        put("log_every", &t.log_every);
        put("checkpoint_every", &t.checkpoint_every);
        if let Some(r) = &t.resume {
            put("resume", &p(r));
        }
        if let Some(c) = &t.corpus {
            put("corpus", &p(c));
        }
        put("train_subjects", &t.subjects);
        let a = &self.ablate;
        let onoff = |v: &[bool]| join(v.iter().map(|&x| (if x { "on" } else { "off" }).to_owned()).collect());
        put("grids", &join(a.grids.iter().map(|&g| grid(g)).collect()));
        put("cascade_axis", &onoff(&a.cascade));
        put("segment_axis", &onoff(&a.segment));
        put(
            "prompt_axis",
            &join(
                a.structured
                    .iter()
                    .map(|&x| (if x { "structured" } else { "plain" }).to_owned())
                    .collect(),
            ),
        );
        put("eval_subjects", &a.subjects);
        put("eval_seeds", &join(a.seeds.iter().map(u64::to_string).collect()));
        if let Some(c) = &a.corpus {
            put("eval_corpus", &p(c));
        }
        if let Some(l) = self.layer {
            put("layer", &l);
        }
        put("viz_step", &self.viz_step);
        out
    }
}
