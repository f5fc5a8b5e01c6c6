use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use log::{info, warn};
use protoclust::capture::{attach_labels, load_pcap, stratified_sample, write_labels, write_pcap, Dataset, OsiLayer};
use protoclust::hybrid::{run_benchmark, run_pipeline, sweep_header, sweep_topics, RunConfig, Strategy};
use protoclust::metrics::{voting_accuracy, SATISFACTORY_ARI};
use protoclust::optimize::sub_seed;
use protoclust::Stage;
use protoclust::synth::{presets, SyntheticSpec};
use serde::{Deserialize, Serialize};

use crate::args::{AnalyzeArgs, BenchmarkArgs, GenerateArgs, InputArgs, SweepArgs, SweepKind};
use crate::CliError;

type Result<T> = std::result::Result<T, CliError>;

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::Io(format!("cannot create {}", path.display()), e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| CliError::Io(format!("cannot write {}", path.display()), e))
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| CliError::Io(format!("cannot read {}", path.display()), e))
}

/// `x.pcap` + `.report.json` → `x.report.json`.
fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().unwrap_or_default().to_string_lossy();
    path.with_file_name(format!("{stem}{suffix}"))
}

fn stem(path: &Path) -> String {
    path.file_stem().unwrap_or_default().to_string_lossy().into_owned()
}

/// Loads a capture, attaches labels and applies the packet cap.
fn load_dataset(
    pcap: &Path,
    labels: Option<&Path>,
    layer: OsiLayer,
    cap: usize,
    name: String,
    seed: u64,
) -> Result<Dataset> {
    let capture = |e: protoclust::Error, path: &Path| CliError::Input {
        path: path.to_path_buf(),
        source: e.at(Stage::Capture, Vec::new()),
    };
    let mut packets = load_pcap(pcap).map_err(|e| capture(e, pcap))?;
    if let Some(l) = labels {
        attach_labels(&mut packets, l).map_err(|e| capture(e, l))?;
        let missing = packets.iter().filter(|p| p.truth_label.is_none()).count();
        if missing > 0 {
            return Err(CliError::Usage(format!(
                "{} leaves {missing} of {} packets unlabeled",
                l.display(),
                packets.len()
            )));
        }
    }
    let n = packets.len();
    if cap == 0 || n <= cap {
        return Ok(Dataset::new(name, layer, packets));
    }
    if labels.is_some() {
        info!("sampling {cap} of {n} packets per class");
        Ok(stratified_sample(&packets, cap, sub_seed(seed, "sample"), &name, layer)?)
    } else {
        warn!("keeping the first {cap} of {n} packets");
        packets.truncate(cap);
        Ok(Dataset::new(name, layer, packets))
    }
}

fn load_input(input: &InputArgs, seed: u64) -> Result<Dataset> {
    load_dataset(
        &input.pcap,
        input.labels.as_deref(),
        input.layer,
        input.cap,
        input.name.clone().unwrap_or_else(|| stem(&input.pcap)),
        seed,
    )
}

pub fn analyze(a: &AnalyzeArgs) -> Result<()> {
    if a.require_eval && a.input.labels.is_none() {
        return Err(CliError::Usage("--require-eval needs --labels".into()));
    }
    let cfg = a.config.resolve();
    let d = load_input(&a.input, cfg.seed)?;
    let report = run_pipeline(&d, a.strategy, &cfg)?;

    let out = a.out.clone().unwrap_or_else(|| sibling(&a.input.pcap, ".report.json"));
    write_text(&out, &report.to_json()?)?;

    if let Some(path) = &a.dendrogram_csv {
        match &report.dendrogram {
            Some(dg) => dg.write_csv(create(path)?)?,
            None => warn!("{} clusters with k-means; no dendrogram written", report.strategy),
        }
    }
    if let Some(path) = &a.confusion_csv {
        let Some((truth, names)) = d.truth() else {
            return Err(CliError::Usage("--confusion-csv needs --labels".into()));
        };
        let truth: Vec<usize> = report.packet_indices.iter().map(|&i| truth[i]).collect();
        voting_accuracy(&report.assignment.labels, &truth)?.write_confusion_csv(create(path)?, Some(&names))?;
    }

    println!(
        "{}: {} packets -> {} clusters with {} (L = {})",
        report.dataset,
        report.stats.packets_clustered,
        report.assignment.k,
        report.strategy.name,
        report.header_len.value
    );
    if let Some(s) = &report.scores {
        println!(
            "ARI {:.4}  FMS {:.4}  AMI {:.4}  accuracy {:.4}  {}",
            s.ari,
            s.fms,
            s.ami,
            s.voting_accuracy,
            if s.satisfactory {
                format!("satisfactory (ARI >= {SATISFACTORY_ARI})")
            } else {
                format!("not satisfactory (ARI < {SATISFACTORY_ARI})")
            }
        );
    }
    println!("report: {}", out.display());
    Ok(())
}

#[derive(Serialize)]
struct SweepMeta<'a> {
    dataset: &'a str,
    osi_target: OsiLayer,
    sweep: &'static str,
    chosen: usize,
    chosen_k: usize,
    header_len: usize,
    config: &'a RunConfig,
}

pub fn sweep(a: &SweepArgs) -> Result<()> {
    let cfg = a.config.resolve();
    let d = load_input(&a.input, cfg.seed)?;
    let meta = match a.kind {
        SweepKind::Topics => {
            let t = sweep_topics(&d, &cfg)?;
            t.write_csv(create(&a.out)?)?;
            println!("chosen K = {}", t.best_k);
            SweepMeta {
                dataset: &d.name,
                osi_target: d.osi_target,
                sweep: "topics",
                chosen: t.best_k,
                chosen_k: t.best_k,
                header_len: t.header_len.value,
                config: &cfg,
            }
        }
        SweepKind::Header => {
            if d.osi_target == OsiLayer::Application {
                return Err(CliError::Usage(
                    "application-layer messages are analyzed whole; there is no header length to sweep".into(),
                ));
            }
            let h = sweep_header(&d, &cfg)?;
            h.write_csv(create(&a.out)?)?;
            println!("chosen L = {} (K = {})", h.best_len, h.best_k);
            SweepMeta {
                dataset: &d.name,
                osi_target: d.osi_target,
                sweep: "header",
                chosen: h.best_len,
                chosen_k: h.best_k,
                header_len: h.best_len,
                config: &cfg,
            }
        }
    };
    let meta_path = sibling(&a.out, ".meta.json");
    write_text(&meta_path, &serde_json::to_string_pretty(&meta).map_err(protoclust::Error::from)?)?;
    println!("csv: {}", a.out.display());
    Ok(())
}

fn resolve_spec(a: &GenerateArgs) -> Result<SyntheticSpec> {
    let spec = match (&a.spec, &a.preset) {
        (Some(p), _) => serde_json::from_str::<SyntheticSpec>(&read_text(p)?)
            .map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?,
        (None, Some(name)) => presets::by_name(name)?,
        (None, None) => unreachable!("clap requires a source"),
    };
    let spec = match a.total {
        Some(t) => spec.scaled(t)?,
        None => spec,
    };
    spec.validate()?;
    Ok(spec)
}

fn write_dataset(spec: &SyntheticSpec, seed: u64, pcap: &Path, labels: &Path) -> Result<Vec<(String, usize)>> {
    let packets = spec.generate(seed)?;
    write_pcap(pcap, &packets)?;
    write_labels(labels, &packets)?;
    Ok(spec.classes.iter().map(|c| (c.label.clone(), c.support)).collect())
}

pub fn generate(a: &GenerateArgs) -> Result<()> {
    if let Some(dir) = &a.suite {
        return generate_suite(dir, a);
    }
    let spec = resolve_spec(a)?;
    if a.print_spec {
        println!("{}", serde_json::to_string_pretty(&spec).map_err(protoclust::Error::from)?);
        return Ok(());
    }
    let out = a.out.as_ref().expect("clap requires --out");
    let labels = a.labels.clone().unwrap_or_else(|| sibling(out, ".labels.csv"));
    let counts = write_dataset(&spec, a.seed, out, &labels)?;
    let summary: Vec<String> = counts.iter().map(|(l, n)| format!("{l}={n}")).collect();
    println!(
        "{}: {} packets ({}) layer {}",
        out.display(),
        spec.total(),
        summary.join(", "),
        spec.layer()
    );
    println!("labels: {}", labels.display());
    Ok(())
}

fn generate_suite(dir: &Path, a: &GenerateArgs) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("cannot create {}", dir.display()), e))?;
    let mut entries = Vec::new();
    for name in presets::NAMES {
        let spec = presets::by_name(name)?;
        let spec = match a.total {
            Some(t) => spec.scaled(t)?,
            None => spec,
        };
        let pcap = dir.join(format!("{name}.pcap"));
        let labels = dir.join(format!("{name}.labels.csv"));
        write_dataset(&spec, a.seed, &pcap, &labels)?;
        println!("{}: {} packets", pcap.display(), spec.total());
        entries.push(ManifestEntry {
            name: name.to_string(),
            pcap: PathBuf::from(format!("{name}.pcap")),
            labels: PathBuf::from(format!("{name}.labels.csv")),
            layer: spec.layer(),
        });
    }
    let manifest = Manifest {
        datasets: entries,
        strategies: Vec::new(),
    };
    let path = dir.join("manifest.json");
    write_text(&path, &serde_json::to_string_pretty(&manifest).map_err(protoclust::Error::from)?)?;
    println!("manifest: {}", path.display());
    Ok(())
}

/// Benchmark input. Paths are relative to the manifest's directory.
#[derive(Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub datasets: Vec<ManifestEntry>,
    /// Empty means all five strategies.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub strategies: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub pcap: PathBuf,
    pub labels: PathBuf,
    pub layer: OsiLayer,
}

pub fn benchmark(a: &BenchmarkArgs) -> Result<()> {
    let manifest: Manifest = serde_json::from_str(&read_text(&a.manifest)?)
        .map_err(|e| CliError::Usage(format!("{}: {e}", a.manifest.display())))?;
    if manifest.datasets.is_empty() {
        return Err(CliError::Usage(format!("{} lists no datasets", a.manifest.display())));
    }
    let base = a.manifest.parent().unwrap_or(Path::new("."));
    let strategies: Vec<Strategy> = if !a.strategies.is_empty() {
        a.strategies.clone()
    } else if !manifest.strategies.is_empty() {
        manifest
            .strategies
            .iter()
            .map(|s| s.parse())
            .collect::<protoclust::Result<_>>()?
    } else {
        Strategy::ALL.to_vec()
    };

    let cfg = a.config.resolve();
    let datasets = manifest
        .datasets
        .iter()
        .map(|e| load_dataset(&base.join(&e.pcap), Some(&base.join(&e.labels)), e.layer, a.cap, e.name.clone(), cfg.seed))
        .collect::<Result<Vec<_>>>()?;

    let grid = run_benchmark(&datasets, &strategies, &cfg)?;
    grid.write_csv(create(&a.out)?)?;
    for c in grid.cells.iter().filter(|c| c.error.is_some()) {
        warn!("{} / {}: {}", c.dataset, c.strategy, c.error.as_deref().unwrap_or_default());
    }
    for w in grid.winners() {
        match (w.strategy, w.ari) {
            (Some(s), Some(ari)) => println!("{}: {s} (ARI {ari:.4})", w.dataset),
            _ => println!("{}: no strategy succeeded", w.dataset),
        }
    }
    println!("HYBRID wins {} of {} datasets", grid.hybrid_wins(), datasets.len());
    println!("grid: {}", a.out.display());
    Ok(())
}
