//! End-to-end experiments: datasets, traces, training, evaluation and
//! reports, staged on disk so an interrupted run resumes where it stopped.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde_json::{json, Value};

use crate::config::{config_hash, FlatConfig};
use crate::error::{Error, Result};
use crate::executor::{init_params, load_checkpoint, save_checkpoint, Arch, Checkpoint, ExecutorParams, ModelConfig, NaExample};
use crate::graphgen::{generate_dataset, stream_seed, DatasetSpec, Family, WeightedGraph, DEFAULT_BA_ATTACHMENT};
use crate::io::{load_graphs, load_traces, read_jsonl, save_graphs, save_traces, write_jsonl, Header};
use crate::metrics::{aggregate, evaluate, EvalBudget, MetricsReport, Scored};
use crate::regimes::{apply_transfer, train_multitask, train_na, train_tf, Regime, RegimeConfig, TrainReport};
use crate::trace::{run, Algorithm, Trace};

/// Everything that determines an experiment's artifacts.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub output: PathBuf,
    pub seed: u64,
    pub arch: Arch,
    /// Hidden width; `None` picks the architecture default.
    pub hidden: Option<usize>,
    pub families: Vec<Family>,
    pub train_n: usize,
    /// Training graphs per family.
    pub train_count: usize,
    pub eval_sizes: Vec<usize>,
    /// Evaluation graphs per family and size.
    pub eval_count: usize,
    pub ba_attachment: usize,
    pub regime: RegimeConfig,
    /// Base-task checkpoint for transfer regimes; trained on the spot when absent.
    pub pretrained: Option<PathBuf>,
}

const KEYS: &[&str] = &[
    "output",
    "seed",
    "arch",
    "hidden",
    "families",
    "train_n",
    "train_count",
    "eval_sizes",
    "eval_count",
    "ba_attachment",
    "regime",
    "target",
    "base",
    "lr",
    "batch",
    "patience",
    "max_epochs",
    "trajectories",
    "aggregate",
    "temperature",
    "selection_bce",
    "base_loss",
    "val_fraction",
    "pretrained",
];

impl Default for ExperimentConfig {
    /// Desk scale: 3 x 1000 graphs of 12 nodes, evaluated at 12, 24 and 48 nodes.
    fn default() -> Self {
        ExperimentConfig {
            output: PathBuf::from("workbench-out"),
            seed: 0,
            arch: Arch::Ne,
            hidden: None,
            families: Family::ALL.to_vec(),
            train_n: 12,
            train_count: 1000,
            eval_sizes: vec![12, 24, 48],
            eval_count: 100,
            ba_attachment: DEFAULT_BA_ATTACHMENT,
            regime: RegimeConfig::new(Regime::Tf, Algorithm::Dijkstra),
            pretrained: None,
        }
    }
}

impl ExperimentConfig {
    /// Defaults overridden by the keys present in `flat`.
    pub fn from_flat(flat: &FlatConfig) -> Result<Self> {
        flat.reject_unknown(KEYS)?;
        let mut c = ExperimentConfig::default();
        if let Some(v) = flat.raw("output") {
            c.output = PathBuf::from(v);
        }
        if let Some(v) = flat.raw("pretrained") {
            c.pretrained = Some(PathBuf::from(v));
        }
        macro_rules! set {
            ($field:expr, $key:literal) => {
                if let Some(v) = flat.get($key)? {
                    $field = v;
                }
            };
        }
        set!(c.seed, "seed");
        set!(c.arch, "arch");
        set!(c.train_n, "train_n");
        set!(c.train_count, "train_count");
        set!(c.eval_count, "eval_count");
        set!(c.ba_attachment, "ba_attachment");
        set!(c.regime.regime, "regime");
        set!(c.regime.target, "target");
        set!(c.regime.lr, "lr");
        set!(c.regime.batch, "batch");
        set!(c.regime.patience, "patience");
        set!(c.regime.max_epochs, "max_epochs");
        set!(c.regime.trajectories, "trajectories");
        set!(c.regime.aggregate, "aggregate");
        set!(c.regime.temperature, "temperature");
        set!(c.regime.selection_bce, "selection_bce");
        set!(c.regime.base_loss, "base_loss");
        set!(c.regime.val_fraction, "val_fraction");
        if let Some(h) = flat.get("hidden")? {
            c.hidden = Some(h);
        }
        if let Some(b) = flat.get("base")? {
            c.regime.base = Some(b);
        }
        if let Some(f) = flat.get_list("families")? {
            c.families = f;
        }
        if let Some(s) = flat.get_list("eval_sizes")? {
            c.eval_sizes = s;
        }
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_flat(&FlatConfig::load(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.regime.validate()?;
        if self.eval_sizes.is_empty() || self.families.is_empty() {
            return Err(Error::arg("eval_sizes and families must be nonempty"));
        }
        if self.hidden == Some(0) {
            return Err(Error::arg("hidden width must be positive"));
        }
        let mut fams = self.families.clone();
        fams.sort();
        fams.dedup();
        if fams.len() != self.families.len() {
            return Err(Error::arg("families repeat"));
        }
        for &n in self.eval_sizes.iter().chain([&self.train_n]) {
            let mut spec = DatasetSpec::new(Family::Er, n, self.train_count.max(1), 0);
            spec.ba_attachment = self.ba_attachment;
            spec.validate()?;
        }
        if self.train_count == 0 || self.eval_count == 0 {
            return Err(Error::arg("train_count and eval_count must be positive"));
        }
        if let Some(p) = &self.pretrained {
            if !self.regime.regime.needs_base() || self.regime.regime == Regime::Multitask {
                return Err(Error::arg("pretrained only applies to transfer regimes"));
            }
            if !p.is_file() {
                return Err(Error::arg(format!("pretrained checkpoint {} does not exist", p.display())));
            }
        }
        Ok(())
    }

    /// Every setting except the output directory, one `key = value` per line.
    /// The text parses back into the same configuration.
    pub fn canonical(&self) -> String {
        let r = &self.regime;
        let list = |v: Vec<String>| v.join(",");
        let mut out = String::new();
        let mut put = |k: &str, v: String| writeln!(out, "{k} = {v}").expect("writing to a String");
        put("seed", self.seed.to_string());
        put("arch", self.arch.to_string());
        if let Some(h) = self.hidden {
            put("hidden", h.to_string());
        }
        put("families", list(self.families.iter().map(|f| f.to_string()).collect()));
        put("train_n", self.train_n.to_string());
        put("train_count", self.train_count.to_string());
        put("eval_sizes", list(self.eval_sizes.iter().map(|n| n.to_string()).collect()));
        put("eval_count", self.eval_count.to_string());
        put("ba_attachment", self.ba_attachment.to_string());
        put("regime", r.regime.to_string());
        put("target", r.target.to_string());
        if let Some(b) = r.base {
            put("base", b.to_string());
        }
        put("lr", r.lr.to_string());
        put("batch", r.batch.to_string());
        put("patience", r.patience.to_string());
        put("max_epochs", r.max_epochs.to_string());
        put("trajectories", r.trajectories.to_string());
        put("aggregate", r.aggregate.to_string());
        put("temperature", r.temperature.to_string());
        put("selection_bce", r.selection_bce.to_string());
        put("base_loss", r.base_loss.to_string());
        put("val_fraction", r.val_fraction.to_string());
        if let Some(p) = &self.pretrained {
            put("pretrained", p.display().to_string());
        }
        out
    }

    pub fn hash(&self) -> String {
        config_hash(&self.canonical())
    }

    fn model_config(&self, tasks: Vec<Algorithm>) -> ModelConfig {
        let mut m = ModelConfig::new(self.arch, tasks);
        if let Some(h) = self.hidden {
            m.hidden = h;
        }
        m
    }

    /// Algorithms whose training traces the regime needs.
    pub fn trained_algorithms(&self) -> Vec<Algorithm> {
        let r = &self.regime;
        match r.base {
            Some(b) if r.regime.needs_base() && self.pretrained.is_none() && b != r.target => vec![b, r.target],
            _ => vec![r.target],
        }
    }

    fn eval_budget(&self) -> EvalBudget {
        if self.regime.regime == Regime::Tf {
            EvalBudget::Learned
        } else {
            EvalBudget::Given
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    Data,
    Traces,
    Train,
    Eval,
}

impl Stage {
    const ALL: [Stage; 4] = [Stage::Data, Stage::Traces, Stage::Train, Stage::Eval];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Data => "data",
            Stage::Traces => "traces",
            Stage::Train => "train",
            Stage::Eval => "eval",
        }
    }
}

/// Result of an experiment run.
#[derive(Clone, Debug, PartialEq)]
pub struct Outcome {
    pub config_hash: String,
    pub report: MetricsReport,
    /// Present when training ran in this invocation.
    pub train: Option<TrainReport>,
    pub base_train: Option<TrainReport>,
}

/// One experiment bound to its output directory.
pub struct Experiment {
    pub config: ExperimentConfig,
    hash: String,
}

fn family_index(f: Family) -> u64 {
    Family::ALL.iter().position(|&g| g == f).expect("family listed") as u64
}

impl Experiment {
    /// Validates `config` and claims its output directory. A directory
    /// holding a different experiment is refused.
    pub fn open(config: ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let hash = config.hash();
        let e = Experiment { config, hash };
        fs::create_dir_all(&e.config.output)?;
        match e.read_status()? {
            Some(s) if s["config_hash"] != json!(e.hash) => {
                return Err(Error::arg(format!("{} holds a different experiment", e.config.output.display())))
            }
            Some(_) => {}
            None => {
                fs::write(e.path("config.txt"), e.config.canonical())?;
                e.write_status(&[], None)?;
            }
        }
        Ok(e)
    }

    pub fn config_hash(&self) -> &str {
        &self.hash
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.config.output.join(name)
    }

    fn header(&self, kind: &str) -> Header {
        Header::new(kind, &self.hash, self.config.seed)
    }

    fn read_status(&self) -> Result<Option<Value>> {
        let p = self.path("status.json");
        if !p.exists() {
            return Ok(None);
        }
        let text = fs::read_to_string(&p)?;
        serde_json::from_str(&text).map(Some).map_err(|e| Error::Parse { line: e.line(), msg: format!("status.json: {e}") })
    }

    fn write_status(&self, completed: &[Stage], failed: Option<(Stage, &Error)>) -> Result<()> {
        let status = json!({
            "config_hash": self.hash,
            "completed": completed.iter().map(|s| s.name()).collect::<Vec<_>>(),
            "failed": failed.map(|(s, e)| json!({ "stage": s.name(), "error": e.to_string() })),
        });
        fs::write(self.path("status.json"), serde_json::to_string_pretty(&status).expect("status serialises") + "\n")?;
        Ok(())
    }

    /// Stages already finished in the output directory.
    pub fn completed(&self) -> Result<Vec<Stage>> {
        let status = self.read_status()?.unwrap_or(Value::Null);
        let names: Vec<&str> = status["completed"].as_array().map(|a| a.iter().filter_map(Value::as_str).collect()).unwrap_or_default();
        Ok(Stage::ALL.into_iter().filter(|s| names.contains(&s.name())).collect())
    }

    fn mark(&self, stage: Stage, result: &Result<()>) -> Result<()> {
        let mut done = self.completed()?;
        done.retain(|&s| s != stage);
        match result {
            Ok(()) => {
                done.push(stage);
                done.sort();
                self.write_status(&done, None)
            }
            Err(e) => self.write_status(&done, Some((stage, e))),
        }
    }

    fn stage(&self, stage: Stage, body: impl FnOnce() -> Result<()>) -> Result<()> {
        if self.completed()?.contains(&stage) {
            return Ok(());
        }
        let result = body();
        self.mark(stage, &result)?;
        result
    }

    fn train_graph_path(&self, f: Family) -> PathBuf {
        self.path(&format!("data/train_{f}.jsonl"))
    }

    fn eval_graph_path(&self, f: Family, n: usize) -> PathBuf {
        self.path(&format!("data/eval_{f}_{n}.jsonl"))
    }

    fn trace_path(&self, algo: Algorithm) -> PathBuf {
        self.path(&format!("traces/train_{algo}.jsonl"))
    }

    fn dataset_spec(&self, f: Family, n: usize, count: usize, seed: u64) -> DatasetSpec {
        let mut spec = DatasetSpec::new(f, n, count, seed);
        spec.ba_attachment = self.config.ba_attachment;
        spec
    }

    fn save_dataset(&self, path: &Path, spec: &DatasetSpec) -> Result<()> {
        let mut h = self.header("graphs");
        h.family = Some(spec.family);
        h.n = Some(spec.n);
        save_graphs(path, &h, &generate_dataset(spec)?)
    }

    /// Generates training and evaluation graphs.
    pub fn generate(&self) -> Result<()> {
        self.stage(Stage::Data, || {
            let c = &self.config;
            for &f in &c.families {
                let fi = family_index(f);
                let train = self.dataset_spec(f, c.train_n, c.train_count, stream_seed(c.seed, 100 + fi));
                self.save_dataset(&self.train_graph_path(f), &train)?;
                for &n in &c.eval_sizes {
                    let spec = self.dataset_spec(f, n, c.eval_count, stream_seed(stream_seed(c.seed, 200 + fi), n as u64));
                    self.save_dataset(&self.eval_graph_path(f, n), &spec)?;
                }
            }
            Ok(())
        })
    }

    fn load_checked_graphs(&self, path: &Path) -> Result<Vec<WeightedGraph>> {
        let (h, graphs) = load_graphs(path)?;
        if h.config_hash != self.hash {
            return Err(Error::state(format!("{} belongs to another experiment", path.display())));
        }
        Ok(graphs)
    }

    /// Training graphs with families interleaved (item i comes from family i mod F).
    pub fn training_graphs(&self) -> Result<Vec<WeightedGraph>> {
        let per_family = self
            .config
            .families
            .iter()
            .map(|&f| self.load_checked_graphs(&self.train_graph_path(f)))
            .collect::<Result<Vec<_>>>()?;
        let count = self.config.train_count;
        Ok((0..count).flat_map(|i| per_family.iter().map(move |g| g[i].clone())).collect())
    }

    /// Runs the classical algorithms on the training graphs.
    pub fn build_traces(&self) -> Result<()> {
        self.generate()?;
        self.stage(Stage::Traces, || {
            let graphs = self.training_graphs()?;
            for algo in self.config.trained_algorithms() {
                let traces = traces_of(algo, &graphs)?;
                let mut h = self.header("traces");
                h.algo = Some(algo.to_string());
                h.n = Some(self.config.train_n);
                save_traces(&self.trace_path(algo), &h, &traces)?;
            }
            Ok(())
        })
    }

    fn load_training_traces(&self, algo: Algorithm) -> Result<Vec<Trace<f64>>> {
        let path = self.trace_path(algo);
        let (h, traces) = load_traces(&path)?;
        if h.config_hash != self.hash {
            return Err(Error::state(format!("{} belongs to another experiment", path.display())));
        }
        Ok(traces)
    }

    fn save_train_log(&self, name: &str, algo: Algorithm, r: &TrainReport) -> Result<()> {
        let mut h = self.header("train_log");
        h.algo = Some(algo.to_string());
        let records: Vec<Value> = r
            .train_loss
            .iter()
            .zip(&r.val_loss)
            .enumerate()
            .map(|(e, (t, v))| json!({ "epoch": e, "train_loss": t, "val_loss": v, "best": e == r.best_epoch }))
            .collect();
        write_jsonl(&self.path(name), &h, &records)
    }

    /// Trains the model of the configured regime and writes `model.ckpt.json`.
    pub fn train(&self) -> Result<(Option<TrainReport>, Option<TrainReport>)> {
        self.build_traces()?;
        let mut reports = (None, None);
        self.stage(Stage::Train, || {
            reports = self.train_now()?;
            Ok(())
        })?;
        Ok(reports)
    }

    fn train_now(&self) -> Result<(Option<TrainReport>, Option<TrainReport>)> {
        let c = &self.config;
        let mut rc = c.regime.clone();
        rc.seed = stream_seed(c.seed, 400);
        let target = rc.target;
        let target_traces = self.load_training_traces(target)?;
        let examples = || target_traces.iter().map(NaExample::from_trace).collect::<Vec<_>>();
        let init = |tasks| init_params::<f64>(&c.model_config(tasks), stream_seed(c.seed, 300));
        let mut base_report = None;
        let (params, report) = match rc.regime {
            Regime::Tf => {
                let mut p = init(vec![target])?;
                let r = train_tf(&mut p, target, &target_traces, &rc)?;
                (p, r)
            }
            Regime::Na => {
                let mut p = init(vec![target])?;
                let r = train_na(&mut p, target, &examples(), &rc)?;
                (p, r)
            }
            Regime::Multitask => {
                let base = rc.base.expect("validated");
                let mut p = init(vec![base, target])?;
                let base_traces = self.load_training_traces(base)?;
                let r = train_multitask(&mut p, base, &base_traces, target, &examples(), &rc)?;
                (p, r)
            }
            Regime::TransferFreeze | Regime::TransferFinetune | Regime::Transfer2Proc => {
                let base = rc.base.expect("validated");
                let pretrained = match &c.pretrained {
                    Some(path) => load_checkpoint::<f64>(path)?.params,
                    None => {
                        let mut bp = init_params::<f64>(&c.model_config(vec![base]), stream_seed(c.seed, 301))?;
                        let mut bc = rc.clone();
                        bc.regime = Regime::Tf;
                        bc.target = base;
                        bc.seed = stream_seed(c.seed, 401);
                        let r = train_tf(&mut bp, base, &self.load_training_traces(base)?, &bc)?;
                        self.save_train_log("base_train_log.jsonl", base, &r)?;
                        self.save_params("base.ckpt.json", &bp)?;
                        base_report = Some(r);
                        bp
                    }
                };
                let mode = rc.regime.transfer_mode().expect("transfer regime");
                let mut p = apply_transfer(&pretrained, mode, target, c.arch, stream_seed(c.seed, 302))?;
                let r = train_na(&mut p, target, &examples(), &rc)?;
                (p, r)
            }
        };
        self.save_train_log("train_log.jsonl", target, &report)?;
        self.save_params("model.ckpt.json", &params)?;
        Ok((Some(report), base_report))
    }

    fn save_params(&self, name: &str, params: &ExecutorParams<f64>) -> Result<()> {
        let ckpt = Checkpoint { config_hash: self.hash.clone(), seed: self.config.seed, params: params.clone() };
        save_checkpoint(&self.path(name), &ckpt)
    }

    /// The trained model of this experiment.
    pub fn model(&self) -> Result<ExecutorParams<f64>> {
        let path = self.path("model.ckpt.json");
        if !path.is_file() {
            return Err(Error::arg(format!("no checkpoint at {}; train first", path.display())));
        }
        Ok(load_checkpoint(&path)?.params)
    }

    /// Scores `params` on every evaluation set and writes the reports.
    pub fn evaluate_with(&self, params: &ExecutorParams<f64>) -> Result<MetricsReport> {
        self.generate()?;
        let c = &self.config;
        let algo = c.regime.target;
        let mut scored = Vec::new();
        for &n in &c.eval_sizes {
            for &f in &c.families {
                let graphs = self.load_checked_graphs(&self.eval_graph_path(f, n))?;
                let traces = traces_of(algo, &graphs)?;
                for metrics in evaluate(params, &traces, c.eval_budget())? {
                    scored.push(Scored { family: f, n, metrics });
                }
            }
        }
        let report = aggregate(algo, &scored)?;
        let stamp = format!("config_hash={} seed={}", self.hash, c.seed);
        fs::write(self.path("report.csv"), format!("# {stamp}\n{}", report.to_csv()))?;
        fs::write(self.path("report.md"), format!("<!-- {stamp} -->\n{}", report.to_markdown()))?;
        Ok(report)
    }

    /// Evaluates the stored checkpoint, whether or not this ran before.
    pub fn evaluate(&self) -> Result<MetricsReport> {
        let params = self.model()?;
        let result = self.evaluate_with(&params);
        self.mark(Stage::Eval, &result.as_ref().map(|_| ()).map_err(|e| Error::state(e.to_string())))?;
        result
    }

    /// Runs every remaining stage.
    pub fn run(&self) -> Result<Outcome> {
        let (train, base_train) = self.train()?;
        let report = self.evaluate()?;
        Ok(Outcome { config_hash: self.hash.clone(), report, train, base_train })
    }

    /// Stored training log as (train_loss, val_loss) per epoch.
    pub fn train_log(&self) -> Result<Vec<(f64, f64)>> {
        let (_, records) = read_jsonl(&self.path("train_log.jsonl"))?;
        Ok(records
            .iter()
            .map(|r| (r["train_loss"].as_f64().unwrap_or(f64::NAN), r["val_loss"].as_f64().unwrap_or(f64::NAN)))
            .collect())
    }
}

fn traces_of(algo: Algorithm, graphs: &[WeightedGraph]) -> Result<Vec<Trace<f64>>> {
    use rayon::prelude::*;
    graphs.par_iter().map(|g| run(algo, g)).collect()
}

/// Opens and runs the experiment described by `config`.
pub fn run_experiment(config: ExperimentConfig) -> Result<Outcome> {
    Experiment::open(config)?.run()
}
