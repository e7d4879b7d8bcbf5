//! Batch front end for the toolkit. Enumeration and verification are
//! separate subcommands on purpose: a facet set is a reusable artifact,
//! independent of the property being checked.
//!
//! Exit codes are the script contract: 0 = success / property holds,
//! 1 = property violated, 2 = any error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::{json, Value};

use disco::affine::interval_bounds;
use disco::analysis::{naive_bound, report, sample_histogram, ReportMeta};
use disco::export::{to_milp_lp, to_smtlib};
use disco::facet::{count_facets, enumerate_facets, EnumConfig, FacetSet};
use disco::lp::ConstraintSystem;
use disco::network::{make_architecture, Network};
use disco::property::{
    multiplication_property, perception_properties, BoundSide, VerificationTask,
};
use disco::rat::{self, Rat};
use disco::train::{
    accuracy, gen_multiplication, gen_perception, metrics_to_csv, train, Dataset, DatasetKind,
    MmrConfig, PNorm, TrainConfig, DEFAULT_ACCURACY_TOL,
};
use disco::verify::{verify, VerdictStatus, VerifyConfig};
use disco::{Error, Result};

#[derive(Parser)]
#[command(
    name = "disco",
    about = "Facet enumeration, verification, and solver export for small ReLU networks"
)]
struct Cli {
    /// JSON config file mirroring the long flag names; explicit flags win.
    /// `./disco.json` is picked up automatically when present.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Machine-readable JSON on stdout instead of human text
    #[arg(long, global = true)]
    json: bool,
    /// Machine-readable JSON errors on stderr
    #[arg(long, global = true)]
    json_errors: bool,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train a benchmark MLP and write it as disco-net-v1 JSON
    Train {
        /// Architecture name: simple | big | super | perception
        #[arg(long)]
        arch: Option<String>,
        /// Input dimension N (pixel count for perception)
        #[arg(long)]
        n: Option<usize>,
        /// Dataset kind: multiplication | perception
        #[arg(long)]
        kind: Option<String>,
        #[arg(long)]
        count: Option<usize>,
        /// Dataset seed (training uses --seed)
        #[arg(long)]
        data_seed: Option<u64>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        batch: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Enable the margin regularizer with this γ_rb
        #[arg(long)]
        mmr_gamma: Option<f64>,
        /// Margin norm: 1 | 2 | inf
        #[arg(long)]
        mmr_p: Option<String>,
        /// Weight λ of the margin penalty
        #[arg(long)]
        mmr_weight: Option<f64>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Enumerate the facets of a network over a box domain
    Enumerate {
        #[arg(long)]
        net: Option<PathBuf>,
        /// Box as `lo,hi`, applied to every input coordinate
        #[arg(long, allow_hyphen_values = true)]
        domain: Option<String>,
        #[arg(long)]
        workers: Option<usize>,
        /// Only print the count; skip writing facets.json
        #[arg(long)]
        count_only: bool,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Check a property facet by facet; exit 0 holds, 1 violated
    Verify {
        #[arg(long)]
        net: Option<PathBuf>,
        #[arg(long)]
        facets: Option<PathBuf>,
        /// Property file, or a builtin: mul-lower:N, mul-upper:N,
        /// perception-obstacle:SIDE,HI,LO, perception-clear:SIDE,HI,LO
        #[arg(long)]
        property: Option<String>,
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long)]
        fail_fast: bool,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Write SMT-LIB 2 and/or big-M LP encodings of a property
    Export {
        #[arg(long)]
        net: Option<PathBuf>,
        #[arg(long)]
        property: Option<String>,
        /// smt2 | lp | both
        #[arg(long)]
        format: Option<String>,
        /// Optional box `lo,hi` for interval bounds (required for lp)
        #[arg(long, allow_hyphen_values = true)]
        domain: Option<String>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Sample the domain and write the facet hit histogram
    Sample {
        #[arg(long)]
        net: Option<PathBuf>,
        #[arg(long, allow_hyphen_values = true)]
        domain: Option<String>,
        #[arg(long)]
        samples: Option<u64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Print the naive 2^m pattern bound
    Bounds {
        #[arg(long)]
        net: Option<PathBuf>,
    },
    /// Bundle facet/histogram/training CSVs for plotting
    Report {
        #[arg(long)]
        net: Option<PathBuf>,
        #[arg(long)]
        facets: Option<PathBuf>,
        #[arg(long, allow_hyphen_values = true)]
        domain: Option<String>,
        #[arg(long)]
        samples: Option<u64>,
        #[arg(long)]
        seed: Option<u64>,
        /// Architecture label for facets.csv
        #[arg(long)]
        arch: Option<String>,
        /// Mark the network as MMR-trained in facets.csv
        #[arg(long)]
        mmr: bool,
        /// Recompute accuracy against this dataset kind (needs --count,
        /// --data-seed)
        #[arg(long)]
        kind: Option<String>,
        #[arg(long)]
        count: Option<usize>,
        #[arg(long)]
        data_seed: Option<u64>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
}

/// Flat key/value fallback for flags, loaded from the JSON config file.
struct Conf(Value);

impl Conf {
    fn load(explicit: Option<&Path>) -> Result<Conf> {
        let path = match explicit {
            Some(p) => p.to_path_buf(),
            None => {
                let p = PathBuf::from("disco.json");
                if !p.exists() {
                    return Ok(Conf(json!({})));
                }
                p
            }
        };
        let text = std::fs::read_to_string(&path)?;
        let v: Value = serde_json::from_str(&text)?;
        if !v.is_object() {
            return Err(Error::Schema("config file must be a JSON object".into()));
        }
        Ok(Conf(v))
    }

    fn str(&self, key: &str) -> Option<String> {
        self.0.get(key).and_then(|v| v.as_str()).map(String::from)
    }

    fn u64(&self, key: &str) -> Option<u64> {
        self.0.get(key).and_then(|v| v.as_u64())
    }

    fn f64(&self, key: &str) -> Option<f64> {
        self.0.get(key).and_then(|v| v.as_f64())
    }

    fn flag(&self, key: &str) -> bool {
        self.0.get(key).and_then(|v| v.as_bool()).unwrap_or(false)
    }
}

fn need<T>(v: Option<T>, flag: &str) -> Result<T> {
    v.ok_or_else(|| Error::Schema(format!("missing required option --{flag}")))
}

fn parse_rat(s: &str) -> Result<Rat> {
    if let Some((n, d)) = s.split_once('/') {
        let n: i64 = n
            .trim()
            .parse()
            .map_err(|_| Error::Rational(s.to_string()))?;
        let d: i64 = d
            .trim()
            .parse()
            .map_err(|_| Error::Rational(s.to_string()))?;
        if d == 0 {
            return Err(Error::Rational(s.to_string()));
        }
        Ok(rat::frac(n, d))
    } else {
        rat::parse_decimal(s.trim())
    }
}

/// `lo,hi` expanded to a box over all `dim` coordinates.
fn parse_domain(s: &str, dim: usize) -> Result<Vec<(Rat, Rat)>> {
    let (lo, hi) = s
        .split_once(',')
        .ok_or_else(|| Error::BadBox(format!("expected lo,hi, got {s}")))?;
    let lo = parse_rat(lo)?;
    let hi = parse_rat(hi)?;
    if lo >= hi {
        return Err(Error::BadBox(format!("empty interval {s}")));
    }
    Ok(vec![(lo, hi); dim])
}

/// A property is either a JSON file path or a builtin generator spec.
fn load_property(spec: &str) -> Result<VerificationTask> {
    if spec.ends_with(".json") || Path::new(spec).exists() {
        return VerificationTask::load(Path::new(spec));
    }
    let (head, args) = spec
        .split_once(':')
        .ok_or_else(|| Error::Schema(format!("unknown property spec {spec}")))?;
    match head {
        "mul-lower" | "mul-upper" => {
            let n: usize = args
                .parse()
                .map_err(|_| Error::Schema(format!("bad N in {spec}")))?;
            let side = if head == "mul-lower" {
                BoundSide::Lower
            } else {
                BoundSide::Upper
            };
            Ok(multiplication_property(n, side))
        }
        "perception-obstacle" | "perception-clear" => {
            let parts: Vec<&str> = args.split(',').collect();
            if parts.len() != 3 {
                return Err(Error::Schema(format!(
                    "expected {head}:SIDE,HI,LO, got {spec}"
                )));
            }
            let side: usize = parts[0]
                .parse()
                .map_err(|_| Error::Schema(format!("bad side in {spec}")))?;
            let hi = parse_rat(parts[1])?;
            let lo = parse_rat(parts[2])?;
            let mut tasks = perception_properties(side, hi, lo).into_iter();
            let obstacle = tasks.next().unwrap();
            let clear = tasks.next().unwrap();
            Ok(if head == "perception-obstacle" {
                obstacle
            } else {
                clear
            })
        }
        _ => Err(Error::Schema(format!("unknown property spec {spec}"))),
    }
}

fn parse_kind(s: &str) -> Result<DatasetKind> {
    match s {
        "multiplication" => Ok(DatasetKind::Multiplication),
        "perception" => Ok(DatasetKind::Perception),
        other => Err(Error::Schema(format!("unknown dataset kind {other}"))),
    }
}

fn make_dataset(kind: DatasetKind, n: usize, count: usize, seed: u64) -> Result<Dataset> {
    match kind {
        DatasetKind::Multiplication => Ok(gen_multiplication(n, count, seed)),
        DatasetKind::Perception => {
            let side = (n as f64).sqrt().round() as usize;
            if side * side != n {
                return Err(Error::Schema(format!(
                    "perception input dimension {n} is not a square"
                )));
            }
            Ok(gen_perception(side, count, seed))
        }
    }
}

fn out_dir(dir: Option<PathBuf>, conf: &Conf) -> Result<PathBuf> {
    let dir = dir
        .or_else(|| conf.str("out-dir").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn run(cli: Cli) -> Result<u8> {
    let conf = Conf::load(cli.config.as_deref())?;
    let json_out = cli.json || conf.flag("json");
    match cli.cmd {
        Cmd::Train {
            arch,
            n,
            kind,
            count,
            data_seed,
            lr,
            epochs,
            batch,
            seed,
            mmr_gamma,
            mmr_p,
            mmr_weight,
            out_dir: dir,
        } => {
            let arch_name = need(arch.or_else(|| conf.str("arch")), "arch")?;
            let n = need(n.or_else(|| conf.u64("n").map(|v| v as usize)), "n")?;
            let kind = parse_kind(&need(kind.or_else(|| conf.str("kind")), "kind")?)?;
            let count = count
                .or_else(|| conf.u64("count").map(|v| v as usize))
                .unwrap_or(256);
            let data_seed = data_seed.or_else(|| conf.u64("data-seed")).unwrap_or(0);
            let mmr = match mmr_gamma.or_else(|| conf.f64("mmr-gamma")) {
                None => None,
                Some(gamma_rb) => {
                    let p = match mmr_p
                        .or_else(|| conf.str("mmr-p"))
                        .unwrap_or_else(|| "2".into())
                        .as_str()
                    {
                        "1" => PNorm::One,
                        "2" => PNorm::Two,
                        "inf" => PNorm::Inf,
                        other => {
                            return Err(Error::Schema(format!("unknown norm {other}")))
                        }
                    };
                    Some(MmrConfig {
                        gamma_rb,
                        p,
                        weight: mmr_weight.or_else(|| conf.f64("mmr-weight")).unwrap_or(1.0),
                    })
                }
            };
            let cfg = TrainConfig {
                lr: lr.or_else(|| conf.f64("lr")).unwrap_or(0.1),
                epochs: epochs
                    .or_else(|| conf.u64("epochs").map(|v| v as usize))
                    .unwrap_or(2000),
                batch: batch
                    .or_else(|| conf.u64("batch").map(|v| v as usize))
                    .unwrap_or(32),
                seed: seed.or_else(|| conf.u64("seed")).unwrap_or(0),
                mmr,
            };
            let arch = make_architecture(&arch_name, n)?;
            let dataset = make_dataset(kind, n, count, data_seed)?;
            let (net, _, metrics) = train(&arch, &dataset, &cfg)?;
            let dir = out_dir(dir, &conf)?;
            net.save(&dir.join("net.json"))?;
            std::fs::write(dir.join("training.csv"), metrics_to_csv(&metrics))?;
            let last = metrics.last().unwrap();
            if json_out {
                println!(
                    "{}",
                    json!({
                        "net": dir.join("net.json"),
                        "digest": net.digest(),
                        "final_loss": last.loss,
                        "accuracy": last.accuracy,
                    })
                );
            } else {
                println!(
                    "trained {} (digest {}): loss {:.6}, accuracy {:.3}",
                    dir.join("net.json").display(),
                    net.digest(),
                    last.loss,
                    last.accuracy
                );
            }
            Ok(0)
        }
        Cmd::Enumerate {
            net,
            domain,
            workers,
            count_only,
            out_dir: dir,
        } => {
            let net = Network::load(&need(
                net.or_else(|| conf.str("net").map(PathBuf::from)),
                "net",
            )?)?;
            let bx = parse_domain(
                &need(domain.or_else(|| conf.str("domain")), "domain")?,
                net.input_dim(),
            )?;
            let system = ConstraintSystem::from_box(&bx)?;
            let workers = workers
                .or_else(|| conf.u64("workers").map(|v| v as usize))
                .unwrap_or(1);
            let ecfg = EnumConfig {
                parallel: workers > 1,
                workers,
                count_only: false,
            };
            let count = if count_only || conf.flag("count-only") {
                count_facets(&net, &system, &ecfg)?
            } else {
                let facets = enumerate_facets(&net, &system, &ecfg)?;
                let dir = out_dir(dir, &conf)?;
                facets.save(&dir.join("facets.json"))?;
                facets.facets.len() as u64
            };
            if json_out {
                println!("{}", json!({ "facets": count }));
            } else {
                println!("{count}");
            }
            Ok(0)
        }
        Cmd::Verify {
            net,
            facets,
            property,
            workers,
            fail_fast,
            out_dir: dir,
        } => {
            let net = Network::load(&need(
                net.or_else(|| conf.str("net").map(PathBuf::from)),
                "net",
            )?)?;
            let facets = FacetSet::load(&need(
                facets.or_else(|| conf.str("facets").map(PathBuf::from)),
                "facets",
            )?)?;
            let task = load_property(&need(
                property.or_else(|| conf.str("property")),
                "property",
            )?)?;
            let workers = workers
                .or_else(|| conf.u64("workers").map(|v| v as usize))
                .unwrap_or(1);
            let vcfg = VerifyConfig {
                fail_fast: fail_fast || conf.flag("fail-fast"),
                parallel: workers > 1,
                workers,
            };
            let verdict = verify(&net, &task, &facets, &vcfg)?;
            let report = match &verdict.status {
                VerdictStatus::Holds => json!({
                    "task": task.name,
                    "status": "holds",
                    "facets_checked": verdict.stats.facets_checked,
                    "lp_calls": verdict.stats.lp_calls,
                }),
                VerdictStatus::Violated {
                    input,
                    output,
                    pattern,
                } => json!({
                    "task": task.name,
                    "status": "violated",
                    "counterexample": {
                        "input": input.iter().map(rat::to_json).collect::<Vec<_>>(),
                        "output": output.iter().map(rat::to_json).collect::<Vec<_>>(),
                        "pattern": pattern.to_bit_string(),
                    },
                    "facets_checked": verdict.stats.facets_checked,
                    "lp_calls": verdict.stats.lp_calls,
                }),
            };
            let dir = out_dir(dir, &conf)?;
            std::fs::write(
                dir.join("verdict.json"),
                serde_json::to_string_pretty(&report)?,
            )?;
            if json_out {
                println!("{report}");
            } else {
                match &verdict.status {
                    VerdictStatus::Holds => println!(
                        "holds ({} facets, {} LP calls)",
                        verdict.stats.facets_checked, verdict.stats.lp_calls
                    ),
                    VerdictStatus::Violated { input, output, .. } => {
                        let fmt = |v: &[Rat]| {
                            v.iter()
                                .map(|r| r.to_string())
                                .collect::<Vec<_>>()
                                .join(", ")
                        };
                        println!(
                            "violated at x = ({}), f(x) = ({})",
                            fmt(input),
                            fmt(output)
                        );
                    }
                }
            }
            Ok(if verdict.holds() { 0 } else { 1 })
        }
        Cmd::Export {
            net,
            property,
            format,
            domain,
            out_dir: dir,
        } => {
            let net = Network::load(&need(
                net.or_else(|| conf.str("net").map(PathBuf::from)),
                "net",
            )?)?;
            let task = load_property(&need(
                property.or_else(|| conf.str("property")),
                "property",
            )?)?;
            let format = format
                .or_else(|| conf.str("format"))
                .unwrap_or_else(|| "both".into());
            let bounds = match domain.or_else(|| conf.str("domain")) {
                Some(d) => Some(interval_bounds(
                    &net,
                    &parse_domain(&d, net.input_dim())?,
                )?),
                None => None,
            };
            let dir = out_dir(dir, &conf)?;
            let mut written = Vec::new();
            for (i, pre) in task.preconditions.iter().enumerate() {
                if format == "smt2" || format == "both" {
                    let sub = VerificationTask {
                        name: task.name.clone(),
                        preconditions: vec![pre.clone()],
                        postconditions: task.postconditions.clone(),
                    };
                    let path = dir.join(format!("{}_p{i}.smt2", task.name));
                    std::fs::write(&path, to_smtlib(&net, &sub, bounds.as_ref())?)?;
                    written.push(path);
                }
                if format == "lp" || format == "both" {
                    let bounds = bounds.as_ref().ok_or_else(|| {
                        Error::Schema("LP export needs --domain for interval bounds".into())
                    })?;
                    for (j, row) in task.postconditions.iter().enumerate() {
                        let sub = VerificationTask {
                            name: task.name.clone(),
                            preconditions: vec![pre.clone()],
                            postconditions: vec![row.clone()],
                        };
                        let path = dir.join(format!("{}_p{i}_r{j}.lp", task.name));
                        std::fs::write(&path, to_milp_lp(&net, &sub, bounds)?)?;
                        written.push(path);
                    }
                }
            }
            if written.is_empty() {
                return Err(Error::Schema(format!("unknown export format {format}")));
            }
            if json_out {
                println!("{}", json!({ "written": written }));
            } else {
                for p in &written {
                    println!("{}", p.display());
                }
            }
            Ok(0)
        }
        Cmd::Sample {
            net,
            domain,
            samples,
            seed,
            out_dir: dir,
        } => {
            let net = Network::load(&need(
                net.or_else(|| conf.str("net").map(PathBuf::from)),
                "net",
            )?)?;
            let bx = parse_domain(
                &need(domain.or_else(|| conf.str("domain")), "domain")?,
                net.input_dim(),
            )?;
            let samples = samples.or_else(|| conf.u64("samples")).unwrap_or(10_000);
            let seed = seed.or_else(|| conf.u64("seed")).unwrap_or(0);
            let hist = sample_histogram(&net, &bx, samples, seed)?;
            let dir = out_dir(dir, &conf)?;
            let mut csv = String::from("rank,pattern,count\n");
            for (rank, (p, c)) in hist.rows.iter().enumerate() {
                csv.push_str(&format!("{},{},{}\n", rank + 1, p.to_bit_string(), c));
            }
            std::fs::write(dir.join("histogram.csv"), csv)?;
            if json_out {
                println!(
                    "{}",
                    json!({ "patterns": hist.rows.len(), "samples": hist.total })
                );
            } else {
                println!(
                    "{} patterns over {} samples -> {}",
                    hist.rows.len(),
                    hist.total,
                    dir.join("histogram.csv").display()
                );
            }
            Ok(0)
        }
        Cmd::Bounds { net } => {
            let net = Network::load(&need(
                net.or_else(|| conf.str("net").map(PathBuf::from)),
                "net",
            )?)?;
            let bound = naive_bound(&net);
            if json_out {
                println!(
                    "{}",
                    json!({ "relus": net.relu_count(), "naive_bound": bound.to_string() })
                );
            } else {
                println!("{bound}");
            }
            Ok(0)
        }
        Cmd::Report {
            net,
            facets,
            domain,
            samples,
            seed,
            arch,
            mmr,
            kind,
            count,
            data_seed,
            out_dir: dir,
        } => {
            let net = Network::load(&need(
                net.or_else(|| conf.str("net").map(PathBuf::from)),
                "net",
            )?)?;
            let facets = FacetSet::load(&need(
                facets.or_else(|| conf.str("facets").map(PathBuf::from)),
                "facets",
            )?)?;
            let bx = parse_domain(
                &need(domain.or_else(|| conf.str("domain")), "domain")?,
                net.input_dim(),
            )?;
            let samples = samples.or_else(|| conf.u64("samples")).unwrap_or(10_000);
            let seed = seed.or_else(|| conf.u64("seed")).unwrap_or(0);
            let hist = sample_histogram(&net, &bx, samples, seed)?;
            let acc = match kind.or_else(|| conf.str("kind")) {
                Some(k) => {
                    let kind = parse_kind(&k)?;
                    let count = count
                        .or_else(|| conf.u64("count").map(|v| v as usize))
                        .unwrap_or(256);
                    let data_seed = data_seed.or_else(|| conf.u64("data-seed")).unwrap_or(0);
                    let dataset = make_dataset(kind, net.input_dim(), count, data_seed)?;
                    accuracy(&net, &dataset, DEFAULT_ACCURACY_TOL)?
                }
                None => f64::NAN,
            };
            let meta = ReportMeta {
                architecture: arch
                    .or_else(|| conf.str("arch"))
                    .unwrap_or_else(|| "unknown".into()),
                mmr: mmr || conf.flag("mmr"),
                accuracy: acc,
            };
            let dir = out_dir(dir, &conf)?;
            report(&net, &facets, &hist, &[], &meta, &dir)?;
            if json_out {
                println!("{}", json!({ "out_dir": dir, "facets": facets.facets.len() }));
            } else {
                println!("report written to {}", dir.display());
            }
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let json_errors = cli.json_errors;
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            if json_errors {
                eprintln!("{}", json!({ "error": e.to_string() }));
            } else {
                eprintln!("error: {e}");
            }
            ExitCode::from(2)
        }
    }
}
