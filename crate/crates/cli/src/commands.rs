use std::path::Path;
use std::sync::Arc;

use csa_core::demo_synth::{generate, load_synth_spec};
use csa_core::executor::{replay, run_headless, ExecutionLog};
use csa_core::formats::{load_bundle, load_demo_set, save_bundle, save_demo_set, DemoSet};
use csa_core::pipeline::learn;
use csa_core::policy::policy_by_name;
use csa_core::sim_env::load_scenario;
use csa_core::surface::{load_surface, save_surface};
use serde::Serialize;
use serde_json::{json, Value};

use crate::args::{
    Cli, Command, IngestArgs, InspectArgs, LearnArgs, ReplayArgs, ServeArgs, SimulateArgs, SynthArgs,
};
use crate::config;
use crate::error::{CliError, Result};
use crate::inspect;

/// What a command prints: a JSON document and its text rendering.
struct Output {
    json: Value,
    text: String,
}

impl Output {
    fn new(body: impl Serialize, text: String) -> Self {
        Output {
            json: serde_json::to_value(body).expect("output serializes"),
            text,
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let cfg = match &cli.config {
        Some(p) => Some((config::load(p)?, p.clone())),
        None => None,
    };
    let name = cli.command.name();
    // flags first, then the config table on top
    macro_rules! resolve {
        ($a:expr) => {
            match &cfg {
                Some((table, path)) => config::apply($a, table, name, path)?,
                None => $a,
            }
        };
    }
    let (out, check_failed) = match cli.command {
        Command::Synth(a) => (synth(resolve!(a))?, None),
        Command::Ingest(a) => (ingest(resolve!(a))?, None),
        Command::Learn(a) => (learn_cmd(resolve!(a))?, None),
        Command::InspectPcs(a) => inspect_pcs(resolve!(a))?,
        Command::Simulate(a) => (simulate(resolve!(a))?, None),
        Command::Replay(a) => (replay_cmd(resolve!(a))?, None),
        Command::Serve(a) => return serve(resolve!(a), cli.json),
    };
    if cli.json {
        let mut doc = json!({ "ok": check_failed.is_none(), "command": name });
        if let Some(msg) = &check_failed {
            doc["error"] = json!(msg);
            doc["exit_code"] = json!(5);
        }
        if let (Value::Object(d), Value::Object(body)) = (&mut doc, out.json) {
            d.extend(body);
        }
        println!("{doc}");
    } else {
        print!("{}", out.text);
    }
    match check_failed {
        Some(msg) => Err(CliError::Check(msg)),
        None => Ok(()),
    }
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn lengths(set: &DemoSet) -> (usize, usize) {
    let lens = set.demos.iter().map(|d| d.len());
    (lens.clone().min().unwrap_or(0), lens.max().unwrap_or(0))
}

fn synth(a: SynthArgs) -> Result<Output> {
    let mut spec = load_synth_spec(&a.spec)?;
    if let Some(seed) = a.seed {
        spec.seed = seed;
    }
    if let Some(n) = a.num_demos {
        spec.num_demos = n;
    }
    spec.validate()?;
    let (set, truth) = generate(&spec)?;
    std::fs::create_dir_all(&a.out).map_err(|e| CliError::io(&a.out, e))?;
    let demos = a.out.join("demos.log");
    let surface = a.out.join("surface.json");
    let truth_path = a.out.join("truth.json");
    save_demo_set(&set, &demos)?;
    save_surface(&truth.surface, &surface)?;
    write_file(&truth_path, &serde_json::to_string_pretty(&truth).expect("truth serializes"))?;
    let (lo, hi) = lengths(&set);
    let text = format!(
        "{} demonstrations of `{}` (seed {}), {lo}..{hi} samples\nplanted explained fractions {:?}\nwrote {}, {}, {}\n",
        set.demos.len(),
        set.task,
        spec.seed,
        truth.expected_fractions,
        demos.display(),
        surface.display(),
        truth_path.display()
    );
    Ok(Output::new(
        json!({
            "task": set.task,
            "seed": spec.seed,
            "demos": set.demos.len(),
            "min_length": lo,
            "max_length": hi,
            "expected_fractions": truth.expected_fractions,
            "contact": truth.contact,
            "files": { "demos": demos, "surface": surface, "truth": truth_path },
        }),
        text,
    ))
}

fn ingest(a: IngestArgs) -> Result<Output> {
    let set = load_demo_set(&a.input)?;
    if let Some(out) = &a.out {
        save_demo_set(&set, out)?;
    }
    let (lo, hi) = lengths(&set);
    let channels: Vec<Value> = set
        .schema
        .channels
        .iter()
        .map(|c| json!({ "name": c.name, "unit": c.unit, "kind": c.kind, "normalization_range": c.normalization_range }))
        .collect();
    let text = format!(
        "`{}`: {} demonstrations at {} Hz, {lo}..{hi} samples, {} channels ({})\ndigest {}\n",
        set.task,
        set.demos.len(),
        set.capture_rate_hz,
        set.schema.len(),
        set.schema.names().join(", "),
        set.digest()
    );
    Ok(Output::new(
        json!({
            "task": set.task,
            "capture_rate_hz": set.capture_rate_hz,
            "demos": set.demos.len(),
            "min_length": lo,
            "max_length": hi,
            "channels": channels,
            "digest": set.digest(),
        }),
        text,
    ))
}

fn learn_cmd(a: LearnArgs) -> Result<Output> {
    let set = load_demo_set(&a.demos)?;
    let surface = a.surface.as_deref().map(load_surface).transpose()?;
    let mut cfg = a.pipeline.clone().unwrap_or_default();
    if let Some(t) = a.force_threshold {
        cfg.segmentation.threshold = t;
    }
    if let Some(k) = a.k_threshold {
        cfg.k_threshold = k;
    }
    let bundle = learn(&set, surface.as_ref(), &cfg)?;
    save_bundle(&bundle, &a.out)?;
    let segments: Vec<Value> = bundle
        .segments
        .iter()
        .map(|s| {
            json!({
                "kind": s.kind,
                "start": s.start,
                "end": s.end,
                "recommended_k": s.k_report.recommended,
                "mean_explained": s.k_report.mean_explained,
                "warnings": s.k_report.warnings,
            })
        })
        .collect();
    let mut text = format!(
        "learned {} segments from {} demonstrations, recommended input axes {}\n",
        bundle.segments.len(),
        set.demos.len(),
        bundle.recommended_k
    );
    for s in &bundle.segments {
        text += &format!("  {:?} [{}, {})\n", s.kind, s.start, s.end);
        for w in &s.k_report.warnings {
            text += &format!("    warning: {w}\n");
        }
    }
    text += &format!("wrote {} (digest {})\n", a.out.display(), bundle.digest());
    Ok(Output::new(
        json!({
            "digest": bundle.digest(),
            "recommended_k": bundle.recommended_k,
            "segments": segments,
            "out": a.out,
        }),
        text,
    ))
}

fn inspect_pcs(a: InspectArgs) -> Result<(Output, Option<String>)> {
    let bundle = load_bundle(&a.bundle)?;
    if let Some(s) = a.segment {
        if s >= bundle.segments.len() {
            return Err(CliError::Usage(format!(
                "bundle has {} segments, no segment {s}",
                bundle.segments.len()
            )));
        }
    }
    let truth = match &a.truth {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| CliError::io(p, e))?;
            Some(serde_json::from_str(&text).map_err(csa_core::Error::from)?)
        }
        None => None,
    };
    let r = inspect::report(&bundle, a.segment, truth.as_ref(), a.angle_tolerance, a.fraction_tolerance);
    let failed = r
        .check
        .as_ref()
        .filter(|c| !c.pass)
        .map(|_| "learned components do not match the planted structure".to_string());
    let text = inspect::render(&r);
    Ok((Output::new(r, text), failed))
}

fn simulate(a: SimulateArgs) -> Result<Output> {
    let bundle = Arc::new(load_bundle(&a.bundle)?);
    let scenario = a.scenario.as_deref().map(load_scenario).transpose()?;
    let mut cfg = a.executor.clone().unwrap_or_default();
    cfg.input_mode = a.mode;
    let mut policy = policy_by_name(&a.policy, cfg.override_law.d_wall)?;
    let run = run_headless(bundle, scenario.as_ref(), policy.as_mut(), &cfg, a.max_duration)?;
    if let Some(p) = &a.log {
        write_file(p, &run.log.to_jsonl())?;
    }
    let removal = run
        .removal_fraction
        .map_or_else(|| "n/a".to_string(), |r| format!("{r:.4}"));
    let text = format!(
        "policy {} ({}): {} ticks, {:.2} s, {}, removal fraction {removal}\n",
        a.policy,
        a.mode.as_str(),
        run.ticks,
        run.ticks as f64 * cfg.dt,
        run.status.as_str()
    );
    Ok(Output::new(
        json!({
            "policy": a.policy,
            "mode": a.mode,
            "ticks": run.ticks,
            "duration": run.ticks as f64 * cfg.dt,
            "status": run.status,
            "removal_fraction": run.removal_fraction,
            "log": a.log,
        }),
        text,
    ))
}

fn replay_cmd(a: ReplayArgs) -> Result<Output> {
    let bundle = Arc::new(load_bundle(&a.bundle)?);
    let log = ExecutionLog::load(&a.log)?;
    let r = replay(bundle, &log)?;
    let text = format!(
        "replayed {} ticks, identical to the log (final status {})\n",
        r.ticks,
        r.final_status.as_str()
    );
    Ok(Output::new(json!({ "ticks": r.ticks, "final_status": r.final_status }), text))
}

fn serve(a: ServeArgs, json_out: bool) -> Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    let registry = Arc::new(csa_service::Registry::default());
    let mut bundles = Vec::new();
    for p in &a.bundle {
        bundles.push(registry.add_bundle(load_bundle(p)?).map_err(|e| CliError::Serve(e.to_string()))?.id.clone());
    }
    let mut scenarios = Vec::new();
    for p in &a.scenario {
        let entry = registry.add_scenario(load_scenario(p)?).map_err(|e| CliError::Serve(e.to_string()))?;
        scenarios.push(entry.id.clone());
    }
    let rt = tokio::runtime::Runtime::new().map_err(|e| CliError::Serve(e.to_string()))?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(a.addr)
            .await
            .map_err(|e| CliError::Serve(format!("bind {}: {e}", a.addr)))?;
        let addr = listener.local_addr().map_err(|e| CliError::Serve(e.to_string()))?;
        if json_out {
            println!("{}", json!({ "ok": true, "command": "serve", "addr": addr, "bundles": bundles, "scenarios": scenarios }));
        } else {
            println!("serving on http://{addr}/api/v1");
            bundles.iter().for_each(|b| println!("  bundle {b}"));
            scenarios.iter().for_each(|s| println!("  scenario {s}"));
        }
        tokio::select! {
            r = csa_service::serve(listener, registry) => r.map_err(|e| CliError::Serve(e.to_string())),
            _ = tokio::signal::ctrl_c() => Ok(()),
        }
    })
}
