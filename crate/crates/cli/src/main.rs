mod args;

use std::fs;
use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{Context, Result};
use clap::Parser;
use serde_json::json;

use args::{CaseArgs, Cli, Command, CompareArgs, ConvertArgs, EstimateArgs, GenerateArgs, ScenarioArgs, SweepArgs};
use drbse::admm::trace_csv;
use drbse::case::{load_case_json, parse_matpower_case};
use drbse::measurement::{BadDataSpec, MeasurementKind, MeasurementPlan, MeasurementSet, NoiseSpec};
use drbse::runtime::{compare_methods, generate_measurements, run_drbse, sweep_bad_data, Method, SweepSpec};
use drbse::{AreaPartition, EstimationReport, NetworkCase, ScenarioSpec};

const REPORT_FILE: &str = "report.json";
const TRACE_FILES: [&str; 2] = ["stage1_trace.csv", "stage2_trace.csv"];

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) if err.use_stderr() && std::env::args().any(|a| a == "--error-json") => {
            let message = err.render().to_string();
            println!("{}", json!({ "error": { "kind": "usage", "message": message.trim_end() } }));
            return ExitCode::from(2);
        }
        Err(err) => err.exit(),
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            if cli.error_json {
                let kind = err.downcast_ref::<drbse::Error>().map_or("io", |e| e.kind());
                println!("{}", json!({ "error": { "kind": kind, "message": format!("{err:#}") } }));
            } else {
                eprintln!("error: {err:#}");
            }
            ExitCode::FAILURE
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Estimate(a) => estimate(a),
        Command::Generate(a) => generate(a),
        Command::Sweep(a) => sweep(a),
        Command::Compare(a) => compare(a),
        Command::ConvertCase(a) => convert(a),
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

/// Writes `text` with a trailing newline to `path`, or to stdout.
fn write_or_print(path: Option<&Path>, text: &str) -> Result<()> {
    let text = if text.ends_with('\n') { text.to_string() } else { format!("{text}\n") };
    match path {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn load_case(path: &Path) -> Result<NetworkCase> {
    Ok(load_case_json(&read(path)?)?)
}

fn load_network(args: &CaseArgs) -> Result<(NetworkCase, AreaPartition)> {
    let case = load_case(&args.case)?;
    let partition = match (&args.areas, &case.areas) {
        (Some(p), _) => AreaPartition::from_json(&read(p)?)?,
        (None, Some(areas)) => AreaPartition::new(areas.clone()),
        (None, None) => AreaPartition::single(&case),
    };
    Ok((case, partition))
}

/// Measurement set for one run plus the echo of how it was obtained.
fn scenario(case: &NetworkCase, args: &ScenarioArgs) -> Result<(MeasurementSet, serde_json::Value)> {
    if let Some(path) = &args.measurements {
        let ms = MeasurementSet::from_json(&read(path)?)?;
        return Ok((ms, json!({ "measurements": path })));
    }
    let noise = if args.noiseless { NoiseSpec::noiseless() } else { NoiseSpec::default().with_seed(args.seed) };
    let bad_data = if !args.bad_targets.is_empty() {
        let kinds = args
            .bad_targets
            .iter()
            .map(|l| MeasurementKind::from_label(case, l))
            .collect::<drbse::Result<Vec<_>>>()?;
        Some(BadDataSpec::targets(kinds, args.seed))
    } else {
        args.bad_fraction.map(|f| BadDataSpec::fraction(f, args.seed))
    };
    let spec = ScenarioSpec { plan: MeasurementPlan::Full { pmu_buses: args.pmu.clone() }, noise, bad_data };
    let ms = generate_measurements(case, &spec)?;
    Ok((ms, serde_json::to_value(&spec)?))
}

fn estimate(a: EstimateArgs) -> Result<()> {
    let (case, partition) = load_network(&a.case)?;
    let (ms, scenario_echo) = scenario(&case, &a.scenario)?;
    let settings = a.estimator.settings();
    // The schedule only changes execution order, never results, so it stays
    // out of the echo and reports compare equal across schedules.
    let mut settings_echo = serde_json::to_value(settings)?;
    if let Some(obj) = settings_echo.as_object_mut() {
        obj.remove("schedule");
    }
    let config = json!({
        "case": a.case.case,
        "areas": a.case.areas,
        "scenario": scenario_echo,
        "settings": settings_echo,
    });

    let start = Instant::now();
    let run = run_drbse(&case, &partition, &ms, &settings)?;
    let elapsed = start.elapsed();

    fs::create_dir_all(&a.out_dir).with_context(|| format!("creating {}", a.out_dir.display()))?;
    let mut paths = [None, None];
    let stages = [Some(&run.stage1), run.stage2.as_ref()];
    for (i, stage) in stages.into_iter().enumerate() {
        if let Some(outcome) = stage {
            let tag = format!("{}", i + 1);
            fs::write(a.out_dir.join(TRACE_FILES[i]), trace_csv(&tag, &outcome.trace))?;
            paths[i] = Some(TRACE_FILES[i].to_string());
        }
    }
    let mut report = EstimationReport::from_run(&case, &run, config, paths)?;
    if a.timing {
        report.wall_time_ms = Some(elapsed.as_secs_f64() * 1e3);
    }
    fs::write(a.out_dir.join(REPORT_FILE), report.to_json())?;

    match &report.metrics {
        Some(m) => println!(
            "converged={} iterations={:?} S_V={:.3e} S_theta={:.3e}",
            report.converged,
            report.stages.iter().map(|s| s.iterations).collect::<Vec<_>>(),
            m.s_v,
            m.s_theta
        ),
        None => println!("converged=false; second stage skipped (use --force to run it anyway)"),
    }
    Ok(())
}

fn generate(a: GenerateArgs) -> Result<()> {
    let case = load_case(&a.case)?;
    let (ms, _) = scenario(&case, &a.scenario)?;
    write_or_print(a.out.as_deref(), &ms.to_json())
}

fn sweep(a: SweepArgs) -> Result<()> {
    let (case, partition) = load_network(&a.case)?;
    let spec = SweepSpec {
        fractions: a.fractions,
        trials: a.trials,
        seed: a.seed,
        methods: a.methods.iter().map(|&m| m.into()).collect(),
        pmu_buses: a.pmu,
    };
    let rows = sweep_bad_data(&case, &partition, &a.estimator.settings(), &spec)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in &rows {
        w.serialize(row)?;
    }
    write_or_print(a.out.as_deref(), &String::from_utf8(w.into_inner()?)?)
}

fn compare(a: CompareArgs) -> Result<()> {
    let (case, partition) = load_network(&a.case)?;
    let (ms, _) = scenario(&case, &a.scenario)?;
    let methods: Vec<Method> = a.methods.iter().map(|&m| m.into()).collect();
    let rows = compare_methods(&case, &partition, &ms, &a.estimator.settings(), &methods)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["id".to_string(), "v_true".into(), "theta_true".into()];
    for m in &methods {
        header.push(format!("v_{}", m.name()));
        header.push(format!("theta_{}", m.name()));
    }
    w.write_record(&header)?;
    for row in rows {
        let mut record = vec![row.id.to_string(), row.v_true.to_string(), row.theta_true.to_string()];
        for (_, v, t) in row.estimates {
            record.push(v.to_string());
            record.push(t.to_string());
        }
        w.write_record(&record)?;
    }
    write_or_print(a.out.as_deref(), &String::from_utf8(w.into_inner()?)?)
}

fn convert(a: ConvertArgs) -> Result<()> {
    let mut case = parse_matpower_case(&read(&a.input)?)?;
    if let Some(r) = a.reference {
        case = case.with_reference(r)?;
    }
    write_or_print(a.out.as_deref(), &case.to_json())
}
