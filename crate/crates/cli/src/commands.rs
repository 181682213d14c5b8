//! Implementations of the run / sweep / verify / gen subcommands.

use std::fs;
use std::io::Write as _;
use std::process::ExitCode;

use rayon::prelude::*;
use serde::Serialize;

use radio_mis::engine::{run_protocol, ChannelModel, EngineOptions};
use radio_mis::mis_cd::{CdConfig, CdProtocol};
use radio_mis::mis_nocd::{NaiveBaselineProtocol, NoCdConfig, NoCdProtocol};
use radio_mis::stats::binomial_std_error;
use radio_mis::topology::{load_edge_list, save_edge_list, Graph};
use radio_mis::trace::Trace;
use radio_mis::verify::audit::audit_trace;
use radio_mis::verify::{check_mis, scaling_fit, MisReport, ScalingFit, ScalingModel};

use crate::spec::{
    instantiate_template, load_file_spec, merge_protocol, CapSpec, EffectiveProtocol, GeneratorSpec,
};
use crate::{out_dir, GenArgs, Mode, Model, RunArgs, SweepArgs, VerifyArgs, EXIT_INVALID};

/// Execute one seeded run of `model` on `g` under the merged knobs.
pub fn execute(
    model: Model,
    g: &Graph,
    eff: &EffectiveProtocol,
    seed: u64,
    cap_override: Option<CapSpec>,
    graph_spec: Option<String>,
) -> Result<Trace, String> {
    let n = eff.n.unwrap_or(g.node_count());
    let delta = eff.delta.unwrap_or_else(|| g.max_degree().max(1));
    let cap = cap_override.unwrap_or(eff.cap).resolve(n, eff.cap_coeff);
    let opts = EngineOptions {
        cap,
        stop_on_global_decision: eff.mode == Mode::Experiment,
    };
    let mut trace = match model {
        Model::Cd | Model::Beep => {
            let channel = if model == Model::Beep {
                ChannelModel::Beep
            } else {
                ChannelModel::Cd
            };
            let cfg = CdConfig {
                n,
                c: eff.c.unwrap_or(radio_mis::mis_cd::DEFAULT_C),
                beta: eff.beta.unwrap_or(radio_mis::mis_cd::DEFAULT_BETA),
                channel,
            };
            let protocol = CdProtocol::new(cfg).map_err(|e| e.to_string())?;
            run_protocol(g, &protocol, seed, &opts).map_err(|e| e.to_string())?
        }
        Model::NoCd => {
            let cfg = nocd_config(n, delta, eff);
            let protocol = NoCdProtocol::new(cfg).map_err(|e| e.to_string())?;
            run_protocol(g, &protocol, seed, &opts).map_err(|e| e.to_string())?
        }
        Model::NocdNaive => {
            let cfg = nocd_config(n, delta, eff);
            let protocol = NaiveBaselineProtocol::new(cfg).map_err(|e| e.to_string())?;
            run_protocol(g, &protocol, seed, &opts).map_err(|e| e.to_string())?
        }
    };
    trace.config.mode = Some(
        match eff.mode {
            Mode::Experiment => "experiment",
            Mode::Strict => "strict",
        }
        .into(),
    );
    trace.config.graph_spec = graph_spec;
    Ok(trace)
}

fn nocd_config(n: u32, delta: u32, eff: &EffectiveProtocol) -> NoCdConfig {
    use radio_mis::mis_nocd::{DEFAULT_C_PRIME, STRICT_C_PRIME};
    NoCdConfig {
        n,
        delta,
        beta: eff.beta.unwrap_or(radio_mis::mis_nocd::DEFAULT_BETA),
        kappa: eff.kappa.unwrap_or(radio_mis::mis_nocd::DEFAULT_KAPPA),
        c: eff.c.unwrap_or(radio_mis::mis_nocd::DEFAULT_C),
        c_prime: eff.c_prime.unwrap_or(match eff.mode {
            Mode::Strict => STRICT_C_PRIME,
            Mode::Experiment => DEFAULT_C_PRIME,
        }),
        low_degree: eff.low_degree,
    }
}

fn sanitize_tag(s: &str) -> String {
    s.chars()
        .map(|c| {
            if c.is_alphanumeric() || c == '.' || c == '-' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

pub fn run(args: RunArgs) -> Result<ExitCode, String> {
    let file = load_file_spec(args.config.as_ref())?;
    let eff = merge_protocol(args.model, &args.protocol, &file)?;
    let gen_spec = args.gen_spec.or(file.gen_spec.clone());
    let graph_path = args.graph.or(file.graph.clone());
    let (g, tag, spec_str) = match (&gen_spec, &graph_path) {
        (Some(spec), None) => {
            let parsed = GeneratorSpec::parse(spec)?;
            let seed = args.seed.or(file.seed).unwrap_or(0);
            let g = parsed.generate(seed).map_err(|e| e.to_string())?;
            (g, sanitize_tag(spec), Some(spec.clone()))
        }
        (None, Some(path)) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| format!("cannot read graph {}: {e}", path.display()))?;
            let g = load_edge_list(&text).map_err(|e| e.to_string())?;
            let stem = path
                .file_stem()
                .map_or("graph".into(), |s| s.to_string_lossy().to_string());
            (g, sanitize_tag(&stem), Some(path.display().to_string()))
        }
        (Some(_), Some(_)) => return Err("--gen and --graph are mutually exclusive".into()),
        (None, None) => return Err("one of --gen or --graph is required".into()),
    };
    let seed = args.seed.or(file.seed).unwrap_or(0);
    let trace = execute(eff.model, &g, &eff, seed, None, spec_str)?;
    let report = check_mis(&g, &trace.final_statuses).map_err(|e| e.to_string())?;

    let out_path = args.out.or(file.out).unwrap_or_else(|| {
        out_dir().join(format!(
            "trace-{}-{}-{}.json",
            eff.model.as_str(),
            tag,
            seed
        ))
    });
    if let Some(parent) = out_path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)
                .map_err(|e| format!("cannot create {}: {e}", parent.display()))?;
        }
    }
    fs::write(&out_path, trace.to_json())
        .map_err(|e| format!("cannot write {}: {e}", out_path.display()))?;

    println!(
        "run model={} graph={} n={} seed={} rounds={} phases={} max_energy={} capped={} valid={} trace={}",
        eff.model.as_str(),
        tag,
        trace.config.n,
        seed,
        trace.rounds_executed,
        trace.phases_used(),
        trace.max_energy(),
        trace.capped.len(),
        report.valid,
        out_path.display(),
    );
    println!("{}", serde_json::to_string(&report).unwrap());
    Ok(if report.valid {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(EXIT_INVALID)
    })
}

#[derive(Serialize)]
struct RowOut {
    n: u32,
    model: String,
    seed: u64,
    cap: Option<u64>,
    valid: bool,
    max_energy: u64,
    rounds: u64,
    phases_used: u32,
}

#[derive(Serialize)]
struct PerN {
    n: u32,
    trials: u32,
    failures: u32,
    mean_max_energy: f64,
    mean_rounds: f64,
}

#[derive(Serialize)]
struct CapRow {
    n: u32,
    cap: u64,
    trials: u32,
    failures: u32,
    failure_rate: f64,
    std_error: f64,
}

#[derive(Serialize)]
struct SweepSummary {
    schema_version: u32,
    model: String,
    gen: String,
    mode: String,
    n_list: Vec<u32>,
    trials: u32,
    rows: usize,
    failures_total: u32,
    per_n: Vec<PerN>,
    #[serde(skip_serializing_if = "Option::is_none")]
    fit: Option<ScalingFit>,
    #[serde(skip_serializing_if = "Option::is_none")]
    cap_table: Option<Vec<CapRow>>,
}

pub fn sweep(args: SweepArgs) -> Result<ExitCode, String> {
    let file = load_file_spec(args.config.as_ref())?;
    let eff = merge_protocol(args.model, &args.protocol, &file)?;
    let template = args
        .gen_spec
        .or(file.gen_spec.clone())
        .ok_or("missing --gen (generator template, e.g. gnp:{n}:0.1)")?;
    let n_list: Vec<u32> = if args.n_list.is_empty() {
        file.n_list.clone().unwrap_or_default()
    } else {
        args.n_list.clone()
    };
    let cap_list: Vec<u64> = if args.cap_list.is_empty() {
        file.cap_list.clone().unwrap_or_default()
    } else {
        args.cap_list.clone()
    };
    if n_list.is_empty() || (cap_list.is_empty() && n_list.len() < 2) {
        return Err("sweeps need at least 2 n values (or a --cap-list)".into());
    }
    let trials = args.trials.or(file.trials).unwrap_or(10).max(1);
    let base_seed = args.seed.or(file.seed).unwrap_or(0);
    let model = eff.model;

    if let Some(jobs) = args.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| format!("cannot size the thread pool: {e}"))?;
    }

    let csv_path = args
        .out_csv
        .unwrap_or_else(|| out_dir().join(format!("sweep-{}.csv", model.as_str())));
    let json_path = args
        .out_json
        .unwrap_or_else(|| out_dir().join(format!("sweep-{}.json", model.as_str())));
    for p in [&csv_path, &json_path] {
        if let Some(parent) = p.parent() {
            if !parent.as_os_str().is_empty() {
                fs::create_dir_all(parent)
                    .map_err(|e| format!("cannot create {}: {e}", parent.display()))?;
            }
        }
    }
    let mut csv = fs::File::create(&csv_path)
        .map_err(|e| format!("cannot write {}: {e}", csv_path.display()))?;
    writeln!(csv, "n,model,seed,cap,valid,max_energy,rounds,phases_used")
        .map_err(|e| e.to_string())?;

    // One batch per (n, cap) pair; rows inside a batch run in parallel and
    // the CSV is flushed after every batch so partial results survive.
    let caps: Vec<Option<u64>> = if cap_list.is_empty() {
        vec![None]
    } else {
        cap_list.iter().map(|&b| Some(b)).collect()
    };
    let mut all_rows: Vec<RowOut> = Vec::new();
    let mut row_base = 0u64;
    for &n in &n_list {
        let spec = GeneratorSpec::parse(&instantiate_template(&template, n))?;
        for &cap in &caps {
            let cap_spec = cap.map(CapSpec::Fixed);
            let batch: Vec<Result<RowOut, String>> = (0..trials)
                .into_par_iter()
                .map(|t| {
                    let seed = base_seed.wrapping_add(row_base).wrapping_add(u64::from(t));
                    let g = spec.generate(seed).map_err(|e| e.to_string())?;
                    let trace = execute(model, &g, &eff, seed, cap_spec, None)?;
                    let report = check_mis(&g, &trace.final_statuses).map_err(|e| e.to_string())?;
                    Ok(RowOut {
                        n,
                        model: model.as_str().into(),
                        seed,
                        cap,
                        valid: report.valid,
                        max_energy: trace.max_energy(),
                        rounds: trace.rounds_executed,
                        phases_used: trace.phases_used(),
                    })
                })
                .collect();
            for row in batch {
                let row = row?;
                writeln!(
                    csv,
                    "{},{},{},{},{},{},{},{}",
                    row.n,
                    row.model,
                    row.seed,
                    row.cap.map_or(String::new(), |b| b.to_string()),
                    row.valid,
                    row.max_energy,
                    row.rounds,
                    row.phases_used
                )
                .map_err(|e| e.to_string())?;
                all_rows.push(row);
            }
            csv.flush().map_err(|e| e.to_string())?;
            row_base = row_base.wrapping_add(u64::from(trials));
        }
    }

    let per_n: Vec<PerN> = n_list
        .iter()
        .map(|&n| {
            let rows: Vec<&RowOut> = all_rows.iter().filter(|r| r.n == n).collect();
            let trials = rows.len() as u32;
            let failures = rows.iter().filter(|r| !r.valid).count() as u32;
            let mean = |f: &dyn Fn(&RowOut) -> f64| {
                if rows.is_empty() {
                    0.0
                } else {
                    rows.iter().map(|r| f(r)).sum::<f64>() / rows.len() as f64
                }
            };
            PerN {
                n,
                trials,
                failures,
                mean_max_energy: mean(&|r: &RowOut| r.max_energy as f64),
                mean_rounds: mean(&|r: &RowOut| r.rounds as f64),
            }
        })
        .collect();

    let fit = if caps == [None] {
        let points: Vec<(u32, f64)> = per_n.iter().map(|p| (p.n, p.mean_max_energy)).collect();
        let model_shape = match model {
            Model::Cd | Model::Beep => ScalingModel::LogN,
            Model::NoCd => ScalingModel::LogSquaredLogLog,
            Model::NocdNaive => ScalingModel::LogSquared,
        };
        scaling_fit(&points, model_shape).ok()
    } else {
        None
    };

    let cap_table = if caps == [None] {
        None
    } else {
        Some(
            n_list
                .iter()
                .flat_map(|&n| {
                    caps.iter()
                        .filter_map(move |&cap| cap.map(|b| (n, b)))
                        .collect::<Vec<_>>()
                })
                .map(|(n, b)| {
                    let rows: Vec<&RowOut> = all_rows
                        .iter()
                        .filter(|r| r.n == n && r.cap == Some(b))
                        .collect();
                    let trials = rows.len() as u32;
                    let failures = rows.iter().filter(|r| !r.valid).count() as u32;
                    CapRow {
                        n,
                        cap: b,
                        trials,
                        failures,
                        failure_rate: if trials == 0 {
                            0.0
                        } else {
                            f64::from(failures) / f64::from(trials)
                        },
                        std_error: binomial_std_error(u64::from(failures), u64::from(trials)),
                    }
                })
                .collect(),
        )
    };

    let summary = SweepSummary {
        schema_version: 1,
        model: model.as_str().into(),
        gen: template,
        mode: match eff.mode {
            Mode::Experiment => "experiment".into(),
            Mode::Strict => "strict".into(),
        },
        n_list: n_list.clone(),
        trials,
        rows: all_rows.len(),
        failures_total: all_rows.iter().filter(|r| !r.valid).count() as u32,
        per_n,
        fit,
        cap_table,
    };
    fs::write(&json_path, serde_json::to_string_pretty(&summary).unwrap())
        .map_err(|e| format!("cannot write {}: {e}", json_path.display()))?;
    println!(
        "sweep model={} rows={} failures={} csv={} json={}",
        model.as_str(),
        summary.rows,
        summary.failures_total,
        csv_path.display(),
        json_path.display()
    );
    Ok(ExitCode::SUCCESS)
}

#[derive(Serialize)]
struct VerifyOut {
    audit_passed: bool,
    audit_failures: Vec<String>,
    local_max_misses: u32,
    estimate_violations: u32,
    mis: MisReport,
}

pub fn verify(args: VerifyArgs) -> Result<ExitCode, String> {
    let text = fs::read_to_string(&args.trace)
        .map_err(|e| format!("cannot read {}: {e}", args.trace.display()))?;
    let trace = Trace::from_json(&text).map_err(|e| e.to_string())?;
    let g = trace.graph().map_err(|e| e.to_string())?;
    let report = audit_trace(&trace);
    let mis = check_mis(&g, &trace.final_statuses).map_err(|e| e.to_string())?;
    let out = VerifyOut {
        audit_passed: report.passed(),
        audit_failures: report.failures.clone(),
        local_max_misses: report.local_max_misses,
        estimate_violations: report.estimate_violations,
        mis,
    };
    println!("{}", serde_json::to_string_pretty(&out).unwrap());
    Ok(if report.passed() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(EXIT_INVALID)
    })
}

pub fn gen(args: GenArgs) -> Result<ExitCode, String> {
    let spec = GeneratorSpec::parse(&args.spec)?;
    let g = spec.generate(args.seed).map_err(|e| e.to_string())?;
    let text = save_edge_list(&g);
    match &args.out {
        Some(path) => {
            fs::write(path, text).map_err(|e| format!("cannot write {}: {e}", path.display()))?;
            println!(
                "gen spec={} seed={} nodes={} edges={} out={}",
                args.spec,
                args.seed,
                g.node_count(),
                g.edge_count(),
                path.display()
            );
        }
        None => print!("{text}"),
    }
    Ok(ExitCode::SUCCESS)
}
