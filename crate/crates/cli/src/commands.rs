//! One function per subcommand. Each reads its inputs, runs a pipeline
//! stage, writes its artifacts into an output directory, and records a
//! manifest there.

use std::path::{Path, PathBuf};

use cre_core::attribution::{compare_roles, infer_roles, RoleTable};
use cre_core::landscape::{offline_subset, partition, DatasetManifest, LabeledDataset, Landscape, LandscapeSpec};
use cre_core::metrics::{round_metrics, Scored};
use cre_core::motifs::{parse_jaspar, read_fasta, synthetic_vocabulary, to_jaspar, write_fasta, Scanner, Sequence};
use cre_core::optimizer::{
    greedy_baseline, read_run_log, run_optimization, write_proposals_csv, write_run_log, FitnessGuide, Mode,
    OracleGuide, RoundLog, RunResult, SurrogateGuide,
};
use cre_core::policy::{pretrain, write_curve_csv, PolicyParams};
use cre_core::surrogate::{evaluate as evaluate_fit, fit, GbdtModel};

use crate::config::Config;
use crate::error::{CliError, CliResult};
use crate::manifest::{read_text, Recorder, RunManifest};
use crate::report::{aggregate, line_chart, SummaryRow, METRICS};

pub const DATASET_CSV: &str = "dataset.csv";
pub const DATASET_MANIFEST: &str = "dataset.manifest.json";

fn csv_bytes(f: impl FnOnce(&mut Vec<u8>) -> cre_core::Result<()>) -> CliResult<Vec<u8>> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    Ok(buf)
}

fn fasta_bytes(seqs: &[Sequence]) -> Vec<u8> {
    let mut buf = Vec::new();
    write_fasta(&mut buf, seqs).expect("writing to memory");
    buf
}

fn json_pretty<T: serde::Serialize>(value: &T) -> CliResult<Vec<u8>> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Runtime(e.to_string()))?;
    text.push('\n');
    Ok(text.into_bytes())
}

fn partition_name(config: &Config) -> String {
    serde_json::to_value(config.partition.kind)
        .ok()
        .and_then(|v| v.as_str().map(str::to_string))
        .unwrap_or_else(|| "custom".into())
}

/// A generated dataset read back from its directory.
pub struct DataDir {
    pub dataset: LabeledDataset,
    pub manifest: DatasetManifest,
}

impl DataDir {
    pub fn load(dir: &Path, rec: &mut Recorder) -> CliResult<Self> {
        let csv_path = dir.join(DATASET_CSV);
        let bytes = rec.input("dataset", &csv_path)?;
        let dataset = LabeledDataset::read_csv(&bytes[..]).map_err(|e| CliError::context(&csv_path, e))?;
        let man_path = dir.join(DATASET_MANIFEST);
        let manifest: DatasetManifest = serde_json::from_str(&rec.input_text("dataset_manifest", &man_path)?)
            .map_err(|e| CliError::context(&man_path, e))?;
        if dataset.is_empty() {
            return Err(CliError::Runtime(format!("{} is empty", csv_path.display())));
        }
        Ok(DataDir { dataset, manifest })
    }

    pub fn landscape(&self) -> CliResult<Landscape> {
        Ok(Landscape::new(
            self.manifest.landscape.clone(),
            self.manifest.vocabulary.clone(),
            self.manifest.threshold_fraction,
        )?)
    }

    pub fn scanner(&self) -> CliResult<Scanner> {
        Ok(Scanner::new(&self.manifest.vocabulary, self.manifest.threshold_fraction)?)
    }

    pub fn motif_ids(&self) -> Vec<String> {
        self.manifest.vocabulary.iter().map(|p| p.motif_id.clone()).collect()
    }

    /// Full dataset, or the offline training subset.
    pub fn training_set(&self, offline: bool, seed: u64) -> CliResult<LabeledDataset> {
        if offline {
            Ok(offline_subset(&self.dataset, seed)?)
        } else {
            Ok(self.dataset.clone())
        }
    }
}

fn features(scanner: &Scanner, ds: &LabeledDataset) -> Vec<Vec<f64>> {
    ds.records
        .iter()
        .map(|r| scanner.extract_features(&r.sequence).as_f64())
        .collect()
}

/// Synthetic landscape, labelled dataset, and the configured partition.
pub fn gen_data(config: &Config, out: &Path) -> CliResult<RunManifest> {
    let mut rec = Recorder::new("gen-data", out)?;
    let d = &config.data;
    let vocab = match &d.motif_file {
        Some(path) => {
            let text = rec.input_text("motifs", path)?;
            parse_jaspar(&text).map_err(|e| CliError::context(path, e))?
        }
        None => synthetic_vocabulary(d.motifs, d.seed),
    };
    let ids: Vec<String> = vocab.iter().map(|p| p.motif_id.clone()).collect();
    let spec = LandscapeSpec::planted_with(ids, d.activators, d.repressors, d.synergy, d.label_noise_sd, d.seed)
        .map_err(|e| CliError::Usage(e.to_string()))?;
    let landscape = Landscape::new(spec.clone(), vocab.clone(), d.threshold_fraction)
        .map_err(|e| CliError::Usage(e.to_string()))?;
    let ds = landscape.generate_dataset(d.size, d.length, d.embed_rate, d.seed)?;
    let normalization = cre_core::landscape::Normalization::from_values(ds.fitness())?;
    let manifest = DatasetManifest {
        landscape: spec,
        vocabulary: vocab.clone(),
        threshold_fraction: d.threshold_fraction,
        n: d.size,
        length: d.length,
        embed_rate: d.embed_rate,
        seed: d.seed,
        normalization,
    };
    rec.output("dataset", DATASET_CSV, &csv_bytes(|b| ds.write_csv(b))?)?;
    rec.output("dataset_fasta", "dataset.fasta", &fasta_bytes(&ds.sequences()))?;
    rec.output("dataset_manifest", DATASET_MANIFEST, &json_pretty(&manifest)?)?;
    rec.output("motifs", "motifs.jaspar", to_jaspar(&vocab).as_bytes())?;

    let name = partition_name(config);
    let part = partition(&ds, &config.partition.spec()?)?;
    rec.argument("partition", &name);
    rec.output("partition", &format!("partition_{name}.csv"), &csv_bytes(|b| part.write_csv(b))?)?;
    rec.output("partition_fasta", &format!("partition_{name}.fasta"), &fasta_bytes(&part.sequences()))?;
    rec.finish(config)
}

/// Maximum-likelihood pretraining on the configured partition.
pub fn cmd_pretrain(config: &Config, data: &Path, out: &Path) -> CliResult<RunManifest> {
    let mut rec = Recorder::new("pretrain", out)?;
    let dir = DataDir::load(data, &mut rec)?;
    let part = partition(&dir.dataset, &config.partition.spec()?)?;
    rec.argument("partition", partition_name(config));
    rec.argument("records", part.len());
    let init = PolicyParams::init(config.policy.shape(), config.policy.init_seed)?;
    let (params, curve) = pretrain(&init, &part.sequences(), &config.policy.pretrain)?;
    rec.output("checkpoint", "policy.json", params.to_json()?.as_bytes())?;
    rec.output("curve", "pretrain_curve.csv", &csv_bytes(|b| write_curve_csv(b, &curve))?)?;
    rec.finish(config)
}

/// Fit the boosted-tree surrogate on motif counts.
pub fn cmd_fit_surrogate(config: &Config, data: &Path, out: &Path, offline: bool) -> CliResult<RunManifest> {
    let mut rec = Recorder::new("fit-surrogate", out)?;
    let dir = DataDir::load(data, &mut rec)?;
    rec.argument("offline", offline);
    let train = dir.training_set(offline, config.data.seed)?;
    let scanner = dir.scanner()?;
    let x = features(&scanner, &train);
    let y = train.fitness();
    let model = fit(&x, &y, &config.surrogate)?;
    let q = evaluate_fit(&model, &x, &y)?;
    let median = {
        let mut v = y.clone();
        v.sort_by(f64::total_cmp);
        cre_core::landscape::percentile(&v, 50.0)
    };
    let baseline_mae = y.iter().map(|t| (t - median).abs()).sum::<f64>() / y.len() as f64;
    let mut eval = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| CliError::Runtime(e.to_string());
    eval.write_record(["split", "n", "pearson", "mae", "rmse", "baseline_mae"]).map_err(io)?;
    eval.write_record([
        "train".to_string(),
        y.len().to_string(),
        q.pearson.to_string(),
        q.mae.to_string(),
        q.rmse.to_string(),
        baseline_mae.to_string(),
    ])
    .map_err(io)?;
    let eval = eval.into_inner().map_err(|e| CliError::Runtime(e.to_string()))?;
    rec.output("model", "model.json", model.to_json()?.as_bytes())?;
    rec.output("eval", "surrogate_eval.csv", &eval)?;
    rec.finish(config)
}

/// Shapley role table from a fitted surrogate.
pub fn cmd_infer_roles(config: &Config, model: &Path, data: &Path, out: &Path, offline: bool) -> CliResult<RunManifest> {
    let mut rec = Recorder::new("infer-roles", out)?;
    let dir = DataDir::load(data, &mut rec)?;
    let text = rec.input_text("model", model)?;
    let model = GbdtModel::from_json(&text).map_err(|e| CliError::context(model, e))?;
    rec.argument("offline", offline);
    let train = dir.training_set(offline, config.data.seed)?;
    let x = features(&dir.scanner()?, &train);
    let table = infer_roles(&model, &dir.motif_ids(), &x, &config.roles)?;
    rec.output("roles", "role_table.csv", &csv_bytes(|b| table.write_csv(b))?)?;
    rec.finish(config)
}

pub struct OptimizeInputs<'a> {
    pub checkpoint: Option<&'a Path>,
    pub roles: Option<&'a Path>,
    pub data: &'a Path,
    pub model: Option<&'a Path>,
    pub greedy: bool,
}

/// Policy-gradient optimization, or the greedy baseline.
pub fn cmd_optimize(config: &Config, inputs: &OptimizeInputs, out: &Path) -> CliResult<RunManifest> {
    let mut rec = Recorder::new("optimize", out)?;
    let dir = DataDir::load(inputs.data, &mut rec)?;
    let landscape = dir.landscape()?;
    let oracle = OracleGuide(&landscape);
    let norm = dir.manifest.normalization;
    rec.argument("greedy", inputs.greedy);

    let surrogate = match inputs.model {
        Some(path) => {
            let text = rec.input_text("model", path)?;
            Some(GbdtModel::from_json(&text).map_err(|e| CliError::context(path, e))?)
        }
        None => None,
    };
    let mode = config.optimize.mode;
    let surrogate_guide = surrogate.as_ref().map(|model| SurrogateGuide {
        model,
        scanner: landscape.scanner(),
    });
    let (guide, evaluator): (&dyn FitnessGuide, Option<&dyn FitnessGuide>) = match (mode, &surrogate_guide) {
        (Mode::OracleGuided, _) => (&oracle, None),
        (Mode::OfflineMbo, Some(g)) => (g, Some(&oracle)),
        (Mode::OfflineMbo, None) => {
            return Err(CliError::Usage("offline_mbo mode needs --model".into()));
        }
    };

    let result: RunResult = if inputs.greedy {
        let seeds = partition(&dir.dataset, &config.partition.spec()?)?.sequences();
        rec.argument("partition", partition_name(config));
        greedy_baseline(&config.greedy, guide, evaluator, &norm, &seeds)?
    } else {
        let (Some(ckpt), Some(roles_path)) = (inputs.checkpoint, inputs.roles) else {
            return Err(CliError::Usage("optimize needs --checkpoint and --roles".into()));
        };
        let text = rec.input_text("checkpoint", ckpt)?;
        let params = PolicyParams::from_json(&text).map_err(|e| CliError::context(ckpt, e))?;
        let roles_bytes = rec.input("roles", roles_path)?;
        let roles = RoleTable::read_csv(&roles_bytes[..]).map_err(|e| CliError::context(roles_path, e))?;
        let scanner = landscape.scanner();
        let run = run_optimization(&config.optimize, guide, evaluator, scanner, &roles, &norm, params)?;
        rec.output("final_checkpoint", "policy_final.json", run.state.params.to_json()?.as_bytes())?;
        run
    };
    let seqs: Vec<Sequence> = result.proposals.iter().map(|p| p.sequence.clone()).collect();
    rec.output("run_log", "run_log.csv", &csv_bytes(|b| write_run_log(b, &result.log))?)?;
    rec.output("proposals", "proposals.csv", &csv_bytes(|b| write_proposals_csv(b, &result.proposals))?)?;
    rec.output("proposals_fasta", "proposals.fasta", &fasta_bytes(&seqs))?;
    rec.finish(config)
}

/// Metrics of a scored proposal set: FASTA plus a CSV with a score column,
/// matched by row order.
pub fn cmd_evaluate(config: &Config, fasta: &Path, scores: &Path, column: &str, out: &Path) -> CliResult<RunManifest> {
    let mut rec = Recorder::new("evaluate", out)?;
    rec.argument("column", column);
    let text = rec.input("fasta", fasta)?;
    let seqs = read_fasta(&text[..]).map_err(|e| CliError::context(fasta, e))?;
    let bytes = rec.input("scores", scores)?;
    let mut rdr = csv::Reader::from_reader(&bytes[..]);
    let header = rdr.headers().map_err(|e| CliError::context(scores, e))?.clone();
    let col = header
        .iter()
        .position(|h| h == column)
        .ok_or_else(|| CliError::Usage(format!("{} has no column {column:?}", scores.display())))?;
    let seq_col = header.iter().position(|h| h == "sequence");
    let mut proposals = Vec::with_capacity(seqs.len());
    for (i, row) in rdr.records().enumerate() {
        let row = row.map_err(|e| CliError::context(scores, e))?;
        let (_, seq) = seqs
            .get(i)
            .ok_or_else(|| CliError::Runtime(format!("{} has more rows than the FASTA has records", scores.display())))?;
        if let Some(c) = seq_col {
            if row.get(c) != Some(seq.to_string().as_str()) {
                return Err(CliError::Runtime(format!("row {i} of {} does not match the FASTA", scores.display())));
            }
        }
        let v: f64 = row
            .get(col)
            .unwrap_or("")
            .parse()
            .map_err(|e| CliError::context(scores, format!("row {i}: {e}")))?;
        proposals.push(Scored::new(seq.clone(), v));
    }
    if proposals.len() != seqs.len() {
        return Err(CliError::Runtime(format!(
            "{} scores for {} sequences",
            proposals.len(),
            seqs.len()
        )));
    }
    let m = round_metrics(&proposals)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.serialize(m).map_err(|e| CliError::Runtime(e.to_string()))?;
    let bytes = w.into_inner().map_err(|e| CliError::Runtime(e.to_string()))?;
    rec.output("metrics", "metrics.csv", &bytes)?;
    rec.finish(config)
}

/// A labelled set of run logs (one per seed).
#[derive(Debug, Clone)]
pub struct LogGroup {
    pub label: String,
    pub paths: Vec<PathBuf>,
}

/// Parse `label=path[,path...]`, or a bare path labelled by its parent
/// directory name.
pub fn parse_group(arg: &str) -> LogGroup {
    match arg.split_once('=') {
        Some((label, paths)) => LogGroup {
            label: label.to_string(),
            paths: paths.split(',').map(PathBuf::from).collect(),
        },
        None => {
            let path = PathBuf::from(arg);
            let label = path
                .parent()
                .and_then(|p| p.file_name())
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_else(|| "run".into());
            LogGroup {
                label,
                paths: vec![path],
            }
        }
    }
}

/// Merge groups with the same label, keeping first-seen order.
pub fn merge_groups(groups: Vec<LogGroup>) -> Vec<LogGroup> {
    let mut out: Vec<LogGroup> = Vec::new();
    for g in groups {
        match out.iter_mut().find(|o| o.label == g.label) {
            Some(o) => o.paths.extend(g.paths),
            None => out.push(g),
        }
    }
    out
}

/// Summary CSV and one SVG per metric; an extra surrogate-vs-oracle chart
/// when logs carry oracle scores; Venn counts when role tables are given.
pub fn cmd_report(config: &Config, groups: &[LogGroup], roles: &[(String, PathBuf)], out: &Path) -> CliResult<RunManifest> {
    if groups.is_empty() && roles.is_empty() {
        return Err(CliError::Usage("report needs at least one run log or role table".into()));
    }
    let mut rec = Recorder::new("report", out)?;
    let mut loaded: Vec<(String, Vec<Vec<RoundLog>>)> = Vec::new();
    for g in groups {
        if g.paths.is_empty() {
            return Err(CliError::Usage(format!("group {:?} has no logs", g.label)));
        }
        let mut logs = Vec::new();
        for (i, p) in g.paths.iter().enumerate() {
            let bytes = rec.input(&format!("{}[{i}]", g.label), p)?;
            logs.push(read_run_log(&bytes[..]).map_err(|e| CliError::context(p, e))?);
        }
        loaded.push((g.label.clone(), logs));
    }

    let mut summary: Vec<SummaryRow> = Vec::new();
    for (name, metric) in METRICS {
        let mut series = Vec::new();
        for (label, logs) in &loaded {
            if let Some(s) = aggregate(label, logs, *metric)? {
                for i in 0..s.rounds.len() {
                    summary.push(SummaryRow {
                        group: label.clone(),
                        metric: name.to_string(),
                        round: s.rounds[i],
                        mean: s.mean[i],
                        sd: s.sd[i],
                        n: s.n,
                    });
                }
                series.push(s);
            }
        }
        if !series.is_empty() && *name != "oracle_top" {
            rec.output(name, &format!("{name}.svg"), line_chart(name, name, &series).as_bytes())?;
        }
    }
    let mut gap = Vec::new();
    for (label, logs) in &loaded {
        if let Some(o) = aggregate(label, logs, |r| r.oracle_top)? {
            let mut s = aggregate(label, logs, |r| Some(r.top))?.expect("top is always present");
            s.label = format!("{label} guide top");
            gap.push(s);
            gap.push(crate::report::Series {
                label: format!("{label} oracle top"),
                ..o
            });
        }
    }
    if !gap.is_empty() {
        rec.output(
            "offline_gap",
            "offline_gap.svg",
            line_chart("Top: surrogate-guided vs oracle", "top", &gap).as_bytes(),
        )?;
    }
    if !loaded.is_empty() {
        let mut w = csv::Writer::from_writer(Vec::new());
        for row in &summary {
            w.serialize(row).map_err(|e| CliError::Runtime(e.to_string()))?;
        }
        let bytes = w.into_inner().map_err(|e| CliError::Runtime(e.to_string()))?;
        rec.output("summary", "report.csv", &bytes)?;
    }

    if !roles.is_empty() {
        if roles.len() < 2 {
            return Err(CliError::Usage("role comparison needs at least two tables".into()));
        }
        let mut tables = Vec::new();
        for (label, path) in roles {
            let bytes = rec.input(&format!("roles:{label}"), path)?;
            tables.push(RoleTable::read_csv(&bytes[..]).map_err(|e| CliError::context(path, e))?);
        }
        let labels: Vec<String> = roles.iter().map(|(l, _)| l.clone()).collect();
        let cmp = compare_roles(&labels, &tables)?;
        rec.output("venn", "role_venn.csv", &csv_bytes(|b| cmp.write_venn_csv(b))?)?;
        rec.output("membership", "role_membership.csv", &csv_bytes(|b| cmp.write_membership_csv(b))?)?;
    }
    rec.finish(config)
}

/// Read a run log written by `optimize`.
pub fn load_run_log(path: &Path) -> CliResult<Vec<RoundLog>> {
    read_run_log(read_text(path)?.as_bytes()).map_err(|e| CliError::context(path, e))
}

